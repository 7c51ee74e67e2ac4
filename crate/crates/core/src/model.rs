//! Domain types and the elementary latency/reward formulas shared by every
//! other module.
//!
//! All times inside the engine are milliseconds. The QoS evaluation window is
//! configured in seconds and converted once with [`QosRequirements::window_ms`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::scalar::{weight_tolerance, Scalar};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A node of the computing continuum.
    NodeId,
    "n"
);
id_type!(
    /// A deployed service replica (a bandit arm).
    InstanceId,
    "i"
);
id_type!(
    /// A load balancer. There is exactly one per node, so `LbId(k)` runs on `NodeId(k)`.
    LbId,
    "lb"
);
id_type!(ClientId, "c");

impl LbId {
    pub fn node(self) -> NodeId {
        NodeId(self.0)
    }
}

/// Symmetric node-to-node round-trip latency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology<T> {
    n_nodes: usize,
    rtt_ms: Vec<T>,
}

impl<T: Scalar> Topology<T> {
    /// Builds a topology from a row-major `n × n` matrix.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, ModelError> {
        let n = rows.len();
        if n == 0 {
            return Err(ModelError::EmptyTopology);
        }
        let mut rtt_ms = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::RaggedMatrix { row: i, len: row.len(), expected: n });
            }
            rtt_ms.extend_from_slice(row);
        }
        let topo = Self { n_nodes: n, rtt_ms };
        topo.validate()?;
        Ok(topo)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_nodes;
        let tol = T::lit(1e-9);
        for i in 0..n {
            if self.rtt_ms[i * n + i] != T::zero() {
                return Err(ModelError::NonZeroDiagonal { node: i });
            }
            for j in (i + 1)..n {
                let a = self.rtt_ms[i * n + j];
                let b = self.rtt_ms[j * n + i];
                if !(a >= T::zero()) || !a.is_finite() {
                    return Err(ModelError::InvalidRtt { from: i, to: j });
                }
                if (a - b).abs() > tol {
                    return Err(ModelError::Asymmetric { from: i, to: j });
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn rtt(&self, a: NodeId, b: NodeId) -> T {
        self.rtt_ms[a.index() * self.n_nodes + b.index()]
    }

    pub fn row(&self, a: NodeId) -> &[T] {
        let start = a.index() * self.n_nodes;
        &self.rtt_ms[start..start + self.n_nodes]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_nodes as u32).map(NodeId)
    }
}

/// The `(τ, ρ, W)` triple every policy targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosRequirements<T> {
    /// Maximum acceptable end-to-end latency per request.
    pub tau_ms: T,
    /// Required fraction of requests within `tau_ms`.
    pub rho: T,
    /// Evaluation window in seconds.
    pub window_s: T,
}

impl<T: Scalar> QosRequirements<T> {
    pub fn new(tau_ms: T, rho: T, window_s: T) -> Result<Self, ModelError> {
        let q = Self { tau_ms, rho, window_s };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.tau_ms > T::zero()) {
            return Err(ModelError::OutOfRange { field: "tau_ms", value: self.tau_ms.as_f64() });
        }
        if !(self.rho > T::zero() && self.rho <= T::one()) {
            return Err(ModelError::OutOfRange { field: "rho", value: self.rho.as_f64() });
        }
        if !(self.window_s > T::zero()) {
            return Err(ModelError::OutOfRange { field: "window_s", value: self.window_s.as_f64() });
        }
        Ok(())
    }

    #[inline]
    pub fn window_ms(&self) -> T {
        self.window_s * T::lit(1000.0)
    }
}

/// Routing weights of one load balancer over instances.
///
/// Entries are non-negative and sum to one whenever any of them is positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector<T> {
    entries: BTreeMap<InstanceId, T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn uniform<I: IntoIterator<Item = InstanceId>>(ids: I) -> Self {
        let ids: Vec<_> = ids.into_iter().collect();
        if ids.is_empty() {
            return Self::empty();
        }
        let w = T::one() / T::from_usize(ids.len()).unwrap();
        Self { entries: ids.into_iter().map(|m| (m, w)).collect() }
    }

    /// Builds a vector from raw entries without normalizing.
    pub fn from_raw<I: IntoIterator<Item = (InstanceId, T)>>(entries: I) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    /// Normalizes non-negative scores to a probability vector. All-zero
    /// scores yield the uniform vector over the same keys.
    pub fn normalized<I: IntoIterator<Item = (InstanceId, T)>>(scores: I) -> Self {
        let mut v = Self::from_raw(scores);
        v.renormalize();
        v
    }

    pub fn get(&self, m: InstanceId) -> T {
        self.entries.get(&m).copied().unwrap_or_else(T::zero)
    }

    pub fn contains(&self, m: InstanceId) -> bool {
        self.entries.contains_key(&m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, T)> + '_ {
        self.entries.iter().map(|(&m, &w)| (m, w))
    }

    pub fn ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> T {
        self.entries.values().copied().sum()
    }

    /// `true` if empty, or entries are non-negative and sum to one.
    pub fn is_normalized(&self) -> bool {
        self.is_empty()
            || (self.entries.values().all(|&w| w >= T::zero()) && (self.sum() - T::one()).abs() <= weight_tolerance())
    }

    /// Removes `m` and rescales the survivors proportionally. Returns whether
    /// `m` was present.
    pub fn remove_and_renormalize(&mut self, m: InstanceId) -> bool {
        let present = self.entries.remove(&m).is_some();
        if present {
            self.renormalize();
        }
        present
    }

    pub fn insert(&mut self, m: InstanceId, w: T) {
        self.entries.insert(m, w);
    }

    fn renormalize(&mut self) {
        if self.entries.is_empty() {
            return;
        }
        let total = self.sum();
        if total > T::zero() {
            for w in self.entries.values_mut() {
                *w = *w / total;
            }
        } else {
            let u = T::one() / T::from_usize(self.entries.len()).unwrap();
            for w in self.entries.values_mut() {
                *w = u;
            }
        }
    }
}

/// Trace of one routed request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord<T> {
    pub id: u64,
    pub client: ClientId,
    pub lb: LbId,
    /// `None` when no instance existed to route to.
    pub instance: Option<InstanceId>,
    pub send_time_ms: T,
    pub net_ms: T,
    pub proc_ms: T,
    pub total_ms: T,
    pub success: bool,
}

impl<T: Scalar> RequestRecord<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        client: ClientId,
        lb: LbId,
        instance: Option<InstanceId>,
        send_time_ms: T,
        net_ms: T,
        proc_ms: T,
        tau_ms: T,
    ) -> Self {
        let total_ms = end_to_end_latency(net_ms, proc_ms);
        Self { id, client, lb, instance, send_time_ms, net_ms, proc_ms, total_ms, success: reward(total_ms, tau_ms) }
    }

    /// Completion time as seen by the load balancer.
    pub fn completion_ms(&self) -> T {
        self.send_time_ms + self.total_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    Added,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlacementEvent<T> {
    pub kind: PlacementKind,
    pub instance: InstanceId,
    pub node: NodeId,
    pub time_ms: T,
}

/// End-to-end latency of a request: network round trip plus processing.
#[inline]
pub fn end_to_end_latency<T: Scalar>(net_ms: T, proc_ms: T) -> T {
    net_ms + proc_ms
}

/// Binary QoS reward; a latency exactly at the threshold counts as success.
#[inline]
pub fn reward<T: Scalar>(total_ms: T, tau_ms: T) -> bool {
    total_ms <= tau_ms
}

/// Aggregate request rate arriving at `instance`: `Σ_k w_{k,m} · λ_k`.
pub fn aggregate_instance_rate<T: Scalar>(
    weights_per_lb: &BTreeMap<LbId, WeightVector<T>>,
    rates_per_lb: &BTreeMap<LbId, T>,
    instance: InstanceId,
) -> T {
    weights_per_lb.iter().map(|(lb, w)| w.get(instance) * rates_per_lb.get(lb).copied().unwrap_or_else(T::zero)).sum()
}

/// Fraction of successful completed requests sent in `[now − W, now)`.
///
/// Returns `None` when the window holds no record.
pub fn windowed_success_ratio<T: Scalar>(records: &[RequestRecord<T>], now_ms: T, window_s: T) -> Option<T> {
    success_ratio_in(records.iter().map(|r| (r.send_time_ms, r.success)), now_ms - window_s * T::lit(1000.0), now_ms)
}

/// Success fraction over `(time, success)` pairs with time in `[from, to)`.
pub fn success_ratio_in<T: Scalar, I: IntoIterator<Item = (T, bool)>>(outcomes: I, from_ms: T, to_ms: T) -> Option<T> {
    let (mut n, mut ok) = (0usize, 0usize);
    for (t, success) in outcomes {
        if t >= from_ms && t < to_ms {
            n += 1;
            ok += success as usize;
        }
    }
    (n > 0).then(|| T::from_usize(ok).unwrap() / T::from_usize(n).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, success: bool) -> RequestRecord<f64> {
        let total = if success { 10.0 } else { 100.0 };
        RequestRecord::new(0, ClientId(0), LbId(0), Some(InstanceId(0)), t, total, 0.0, 80.0)
    }

    #[test]
    fn latency_sum() {
        assert_eq!(end_to_end_latency(20.0, 15.0), 35.0);
        assert_eq!(end_to_end_latency(0.0, 0.0), 0.0);
        assert_eq!(end_to_end_latency(79.5, 0.5), 80.0);
    }

    #[test]
    fn reward_boundary_is_inclusive() {
        assert!(reward(80.0, 80.0));
        assert!(!reward(80.1, 80.0));
        assert!(reward(0.0, 80.0));
    }

    #[test]
    fn aggregate_rate_examples() {
        let w = |x: f64| WeightVector::from_raw([(InstanceId(0), x), (InstanceId(1), 1.0 - x)]);
        let weights = BTreeMap::from([(LbId(0), w(0.5)), (LbId(1), w(0.5))]);
        let rates = BTreeMap::from([(LbId(0), 40.0), (LbId(1), 40.0)]);
        assert_eq!(aggregate_instance_rate(&weights, &rates, InstanceId(0)), 40.0);

        let weights = BTreeMap::from([(LbId(0), w(1.0))]);
        let rates = BTreeMap::from([(LbId(0), 10.0)]);
        assert_eq!(aggregate_instance_rate(&weights, &rates, InstanceId(0)), 10.0);

        // 10·0 + 20·0.5 + 30·1 = 40
        let weights = BTreeMap::from([(LbId(0), w(0.0)), (LbId(1), w(0.5)), (LbId(2), w(1.0))]);
        let rates = BTreeMap::from([(LbId(0), 10.0), (LbId(1), 20.0), (LbId(2), 30.0)]);
        assert!((aggregate_instance_rate(&weights, &rates, InstanceId(0)) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn windowed_ratio_examples() {
        let recs: Vec<_> = (0..10).map(|i| rec(i as f64 * 100.0, i != 3)).collect();
        assert_eq!(windowed_success_ratio(&recs, 1000.0, 10.0), Some(0.9));
        assert_eq!(windowed_success_ratio::<f64>(&[], 1000.0, 10.0), None);

        // four stale records before the window, six in-window with four successes
        let mut recs: Vec<_> = (0..4).map(|i| rec(i as f64, false)).collect();
        recs.extend((0..6).map(|i| rec(20_000.0 + i as f64, i < 4)));
        let r = windowed_success_ratio(&recs, 25_000.0, 10.0).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn topology_rejects_asymmetry() {
        let err = Topology::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap_err();
        assert!(matches!(err, ModelError::Asymmetric { .. }));
        assert!(Topology::from_rows(vec![vec![1.0]]).is_err());
        assert!(Topology::from_rows(vec![vec![0.0, 3.0], vec![3.0, 0.0]]).is_ok());
    }

    #[test]
    fn qos_range_checks_name_field() {
        let err = QosRequirements::new(80.0, 1.5, 10.0).unwrap_err();
        assert!(err.to_string().contains("rho"));
        assert!(QosRequirements::new(80.0, 1.0, 10.0).is_ok());
    }

    #[test]
    fn renormalize_survivor() {
        let mut w = WeightVector::from_raw([(InstanceId(0), 0.6), (InstanceId(1), 0.4)]);
        assert!(w.remove_and_renormalize(InstanceId(0)));
        assert_eq!(w.get(InstanceId(1)), 1.0);
        assert!(!w.remove_and_renormalize(InstanceId(7)));
    }

    proptest! {
        #[test]
        fn reward_complements_strict_excess(l in 0.0f64..200.0, tau in 1.0f64..150.0) {
            prop_assert_eq!(reward(l, tau), !(l > tau));
            prop_assert_eq!(reward(tau, tau), true);
        }

        #[test]
        fn stored_success_bit_matches_recomputed(net in 0.0f64..150.0, p in 0.0f64..100.0) {
            let r = RequestRecord::new(1, ClientId(0), LbId(0), None, 0.0, net, p, 80.0);
            prop_assert_eq!(r.total_ms, net + p);
            prop_assert_eq!(r.success, reward(r.total_ms, 80.0));
        }

        #[test]
        fn ratio_invariant_under_tie_permutation(
            bits in proptest::collection::vec(any::<bool>(), 1..40),
            seed in any::<u64>(),
        ) {
            let mut recs: Vec<_> = bits.iter().map(|&b| rec(5_000.0, b)).collect();
            let before = windowed_success_ratio(&recs, 6_000.0, 10.0);
            let n = recs.len();
            recs.rotate_left((seed as usize) % n);
            recs.reverse();
            prop_assert_eq!(before, windowed_success_ratio(&recs, 6_000.0, 10.0));
        }

        #[test]
        fn normalized_weights_sum_to_one(scores in proptest::collection::vec(0.0f64..5.0, 1..12)) {
            let w = WeightVector::normalized(
                scores.iter().enumerate().map(|(i, &s)| (InstanceId(i as u32), s)),
            );
            prop_assert!(w.is_normalized());
        }
    }
}
