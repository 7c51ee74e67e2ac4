//! Per-load-balancer routing policies.
//!
//! Every policy receives only its own load balancer's observations: completed
//! request records it routed, its probed RTT view, and placement events for
//! instances within its QoS reach. Nothing in these interfaces can carry
//! another load balancer's state.

mod proxymity;
mod qedgeproxy;
mod sarsa;

use std::collections::BTreeMap;

pub use proxymity::{proxymity_weights, ProxyMity, ProxyMityConfig};
pub use qedgeproxy::{PolicyConfig, QEdgeProxy};
pub use sarsa::{DecSarsa, SarsaConfig, SarsaState};

use crate::error::PolicyError;
use crate::estimator::percentile;
use crate::model::{InstanceId, LbId, NodeId, RequestRecord, WeightVector};
use crate::scalar::Scalar;

/// An instance entered cooldown at one load balancer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cooldown<T> {
    pub lb: LbId,
    pub instance: InstanceId,
    pub from_ms: T,
    pub until_ms: T,
}

/// Pool state right after a decision step, exposed for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolAudit<T> {
    pub exploitation: Vec<InstanceId>,
    pub exploration: Vec<InstanceId>,
    pub weights: WeightVector<T>,
    pub epsilon: T,
}

pub trait RoutingPolicy<T: Scalar>: Send {
    fn lb(&self) -> LbId;

    /// Picks the instance for a request arriving at `now`.
    fn route(&mut self, now: T) -> Result<InstanceId, PolicyError>;

    /// Feeds back a completed request this load balancer routed.
    fn record_outcome(&mut self, record: &RequestRecord<T>, now: T) -> Option<Cooldown<T>>;

    /// Periodic decision step.
    fn maintenance_step(&mut self, now: T);

    /// Latest probed round-trip times towards known instances.
    fn update_rtt_view(&mut self, view: &BTreeMap<InstanceId, T>);

    fn on_instance_added(&mut self, m: InstanceId, node: NodeId, rtt_ms: T, now: T);

    fn on_instance_removed(&mut self, m: InstanceId);

    /// Routing distribution currently in force, including any fallback.
    fn effective_weights(&self) -> WeightVector<T>;

    /// Exploration budget, for policies that have one.
    fn epsilon(&self) -> Option<T> {
        None
    }

    /// Pool split behind the current weights, for policies that keep one.
    fn pool_audit(&self) -> Option<PoolAudit<T>> {
        None
    }
}

/// Instances a load balancer knows about, with their host and probed RTT.
#[derive(Debug, Clone, Default)]
pub struct InstanceView<T> {
    entries: BTreeMap<InstanceId, (NodeId, T)>,
}

impl<T: Scalar> InstanceView<T> {
    pub fn new<I: IntoIterator<Item = (InstanceId, NodeId, T)>>(it: I) -> Self {
        Self { entries: it.into_iter().map(|(m, n, r)| (m, (n, r))).collect() }
    }

    pub fn rtt(&self, m: InstanceId) -> Option<T> {
        self.entries.get(&m).map(|e| e.1)
    }

    pub fn insert(&mut self, m: InstanceId, node: NodeId, rtt: T) {
        self.entries.insert(m, (node, rtt));
    }

    pub fn remove(&mut self, m: InstanceId) -> bool {
        self.entries.remove(&m).is_some()
    }

    pub fn refresh(&mut self, view: &BTreeMap<InstanceId, T>) {
        for (m, e) in self.entries.iter_mut() {
            if let Some(&r) = view.get(m) {
                e.1 = r;
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.entries.keys().copied()
    }

    pub fn rtts(&self) -> impl Iterator<Item = (InstanceId, T)> + '_ {
        self.entries.iter().map(|(&m, &(_, r))| (m, r))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Lowest-RTT instance among those accepted by `allow` (ties → lowest id).
    pub fn nearest_where(&self, mut allow: impl FnMut(InstanceId) -> bool) -> Option<InstanceId> {
        let mut best: Option<(InstanceId, T)> = None;
        for (m, r) in self.rtts() {
            if !allow(m) {
                continue;
            }
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((m, r));
            }
        }
        best.map(|b| b.0)
    }
}

/// Best expected processing latency: the lowest per-instance `ρ`-percentile
/// of recent processing latencies. An instance without recent samples is
/// expected to run at `idle_ms`, as is an empty instance set.
pub fn best_expected_processing<T, I, J>(per_instance: I, rho: T, idle_ms: T) -> T
where
    T: Scalar,
    I: IntoIterator<Item = J>,
    J: IntoIterator<Item = T>,
{
    per_instance
        .into_iter()
        .map(|samples| percentile(&samples.into_iter().collect::<Vec<T>>(), rho).unwrap_or(idle_ms))
        .fold(None, |best: Option<T>, p| Some(best.map_or(p, |b| b.min(p))))
        .unwrap_or(idle_ms)
}

/// Empty-pool fallback: the nearest non-excluded instance within reach, then
/// the nearest non-excluded one anywhere. `None` when every instance is
/// excluded.
pub(crate) fn fallback_instance<T: Scalar>(
    view: &InstanceView<T>,
    tau_ms: T,
    excluded: impl Fn(InstanceId) -> bool,
) -> Option<InstanceId> {
    view.nearest_where(|m| !excluded(m) && view.rtt(m).is_some_and(|r| r <= tau_ms))
        .or_else(|| view.nearest_where(|m| !excluded(m)))
}
