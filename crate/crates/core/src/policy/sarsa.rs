//! Decentralized differential SARSA baseline. Each load balancer is an
//! independent average-reward agent choosing an instance per request.
//!
//! State is the load balancer's recent success ratio bucketed into `B`
//! buckets, bucket 0 reserved for "no completions in the window". Network
//! proximity enters through the same feasibility filter QEdgeProxy uses.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{best_expected_processing, fallback_instance, Cooldown, InstanceView, RoutingPolicy};
use crate::error::PolicyError;
use crate::estimator::ObservationWindow;
use crate::model::{InstanceId, LbId, NodeId, QosRequirements, RequestRecord, WeightVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarsaConfig<T> {
    pub learning_rate: T,
    /// Step size of the average-reward estimate.
    pub avg_step: T,
    pub explore_rate: T,
    /// Per-request multiplicative decay of `explore_rate`.
    pub explore_decay: T,
    pub explore_floor: T,
    pub buckets: usize,
    pub idle_latency_ms: T,
}

impl<T: Scalar> Default for SarsaConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(0.1),
            avg_step: T::lit(0.01),
            explore_rate: T::lit(0.1),
            explore_decay: T::lit(0.999),
            explore_floor: T::lit(0.01),
            buckets: 5,
            idle_latency_ms: T::lit(6.0),
        }
    }
}

impl<T: Scalar> SarsaConfig<T> {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        let bad = |s: &str| Err(PolicyError::InvalidConfig(s.to_string()));
        if !(self.learning_rate > T::zero() && self.learning_rate < T::one()) {
            return bad("learning_rate must lie in (0, 1)");
        }
        if !(self.avg_step > T::zero() && self.avg_step <= T::one()) {
            return bad("avg_step must lie in (0, 1]");
        }
        if !unit(self.explore_rate) || !unit(self.explore_decay) || !unit(self.explore_floor) {
            return bad("explore_rate, explore_decay and explore_floor must lie in [0, 1]");
        }
        if self.buckets < 2 {
            return bad("buckets must be at least 2");
        }
        Ok(())
    }
}

/// Tabular action values plus the differential average-reward estimate.
#[derive(Debug, Clone)]
pub struct SarsaState<T> {
    q: BTreeMap<(usize, InstanceId), T>,
    pub avg_reward: T,
    pub learning_rate: T,
    pub avg_step: T,
    pub explore_rate: T,
    buckets: usize,
}

impl<T: Scalar> SarsaState<T> {
    pub fn new(config: &SarsaConfig<T>) -> Self {
        Self {
            q: BTreeMap::new(),
            avg_reward: T::zero(),
            learning_rate: config.learning_rate,
            avg_step: config.avg_step,
            explore_rate: config.explore_rate,
            buckets: config.buckets,
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// Bucket 0 for an undefined ratio, otherwise `1 + ⌊ratio·(B−1)⌋` capped at `B − 1`.
    pub fn bucket(&self, ratio: Option<T>) -> usize {
        match ratio {
            None => 0,
            Some(r) => {
                let bins = self.buckets - 1;
                let b = (r.max(T::zero()) * T::from_usize(bins).unwrap()).floor().to_usize().unwrap_or(0);
                1 + b.min(bins - 1)
            }
        }
    }

    pub fn q(&self, s: usize, a: InstanceId) -> T {
        self.q.get(&(s, a)).copied().unwrap_or_else(T::zero)
    }

    pub fn set_q(&mut self, s: usize, a: InstanceId, v: T) {
        self.q.insert((s, a), v);
    }

    /// Highest-valued action in `feasible` (ties → lowest id).
    pub fn greedy(&self, s: usize, feasible: &[InstanceId]) -> Option<InstanceId> {
        let mut best: Option<(InstanceId, T)> = None;
        for &a in feasible {
            let v = self.q(s, a);
            if best.is_none_or(|(ba, bv)| v > bv || (v == bv && a < ba)) {
                best = Some((a, v));
            }
        }
        best.map(|b| b.0)
    }

    /// ε-greedy choice over `feasible`; exploration draws uniformly.
    pub fn select<R: Rng>(&self, s: usize, feasible: &[InstanceId], rng: &mut R) -> Option<InstanceId> {
        if feasible.is_empty() {
            return None;
        }
        if self.explore_rate > T::zero() && rng.random::<f64>() < self.explore_rate.as_f64() {
            return Some(feasible[rng.random_range(0..feasible.len())]);
        }
        self.greedy(s, feasible)
    }

    /// `Q(s,a) += α(r − r̄ + Q(s',a') − Q(s,a))`, then `r̄ += β(r − r̄)`.
    pub fn update(&mut self, s: usize, a: InstanceId, r: T, s_next: usize, a_next: InstanceId) {
        let q_sa = self.q(s, a);
        let td = r - self.avg_reward + self.q(s_next, a_next) - q_sa;
        self.set_q(s, a, q_sa + self.learning_rate * td);
        self.avg_reward = self.avg_reward + self.avg_step * (r - self.avg_reward);
    }

    pub fn max_abs_q(&self) -> T {
        self.q.values().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct DecSarsa<T> {
    lb: LbId,
    qos: QosRequirements<T>,
    config: SarsaConfig<T>,
    view: InstanceView<T>,
    state: SarsaState<T>,
    feasible: Vec<InstanceId>,
    proc_windows: BTreeMap<InstanceId, ObservationWindow<T>>,
    /// `(completion time, success)` over the last window.
    recent: VecDeque<(T, bool)>,
    recent_ok: usize,
    /// Buckets at routing time, per instance in send order.
    decisions: BTreeMap<InstanceId, VecDeque<(T, usize)>>,
    pending: Option<(usize, InstanceId, T)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> DecSarsa<T> {
    pub fn new(
        lb: LbId,
        qos: QosRequirements<T>,
        config: SarsaConfig<T>,
        view: InstanceView<T>,
        rng: ChaCha8Rng,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        let feasible = view.rtts().filter(|&(_, r)| r <= qos.tau_ms).map(|(m, _)| m).collect();
        Ok(Self {
            lb,
            qos,
            state: SarsaState::new(&config),
            config,
            view,
            feasible,
            proc_windows: BTreeMap::new(),
            recent: VecDeque::new(),
            recent_ok: 0,
            decisions: BTreeMap::new(),
            pending: None,
            rng,
        })
    }

    pub fn state(&self) -> &SarsaState<T> {
        &self.state
    }

    pub fn feasible(&self) -> &[InstanceId] {
        &self.feasible
    }

    fn current_bucket(&self) -> usize {
        let n = self.recent.len();
        let ratio = (n > 0).then(|| T::from_usize(self.recent_ok).unwrap() / T::from_usize(n).unwrap());
        self.state.bucket(ratio)
    }

    fn expire_recent(&mut self, now: T) {
        let cutoff = now - self.qos.window_ms();
        while let Some(&(t, ok)) = self.recent.front() {
            if t >= cutoff {
                break;
            }
            self.recent.pop_front();
            self.recent_ok -= ok as usize;
        }
    }
}

impl<T: Scalar> RoutingPolicy<T> for DecSarsa<T> {
    fn lb(&self) -> LbId {
        self.lb
    }

    fn route(&mut self, now: T) -> Result<InstanceId, PolicyError> {
        self.expire_recent(now);
        let s = self.current_bucket();
        let a = match self.state.select(s, &self.feasible, &mut self.rng) {
            Some(a) => a,
            None => {
                fallback_instance(&self.view, self.qos.tau_ms, |_| false).ok_or(PolicyError::NoInstances(self.lb))?
            }
        };
        self.state.explore_rate = (self.state.explore_rate * self.config.explore_decay).max(self.config.explore_floor);
        self.decisions.entry(a).or_default().push_back((now, s));
        Ok(a)
    }

    fn record_outcome(&mut self, record: &RequestRecord<T>, now: T) -> Option<Cooldown<T>> {
        let a = record.instance?;
        let queue = self.decisions.get_mut(&a)?;
        let pos = queue.iter().position(|&(t, _)| t == record.send_time_ms).unwrap_or(0);
        let (_, s) = queue.remove(pos)?;
        let r = if record.success { T::one() } else { T::zero() };
        if let Some((ps, pa, pr)) = self.pending.take() {
            self.state.update(ps, pa, pr, s, a);
        }
        self.pending = Some((s, a, r));

        self.recent.push_back((now, record.success));
        self.recent_ok += record.success as usize;
        self.expire_recent(now);
        if record.proc_ms.is_finite() {
            let window_ms = self.qos.window_ms();
            let w = self.proc_windows.entry(a).or_insert_with(|| ObservationWindow::new(window_ms));
            let _ = w.push_sample(now, record.total_ms, record.proc_ms, record.success);
        }
        None
    }

    fn maintenance_step(&mut self, now: T) {
        for w in self.proc_windows.values_mut() {
            w.prune(now);
        }
        let lp = best_expected_processing(
            self.view
                .ids()
                .map(|m| self.proc_windows.get(&m).map(|w| w.proc_times().collect::<Vec<_>>()).unwrap_or_default()),
            self.qos.rho,
            self.config.idle_latency_ms,
        );
        self.feasible = self.view.rtts().filter(|&(_, r)| r + lp <= self.qos.tau_ms).map(|(m, _)| m).collect();
    }

    fn update_rtt_view(&mut self, view: &BTreeMap<InstanceId, T>) {
        self.view.refresh(view);
    }

    fn on_instance_added(&mut self, m: InstanceId, node: NodeId, rtt_ms: T, _now: T) {
        self.view.insert(m, node, rtt_ms);
    }

    fn on_instance_removed(&mut self, m: InstanceId) {
        self.view.remove(m);
        self.feasible.retain(|&x| x != m);
        self.decisions.remove(&m);
        self.proc_windows.remove(&m);
        if self.pending.is_some_and(|p| p.1 == m) {
            self.pending = None;
        }
    }

    fn effective_weights(&self) -> WeightVector<T> {
        if self.feasible.is_empty() {
            return match fallback_instance(&self.view, self.qos.tau_ms, |_| false) {
                Some(m) => WeightVector::from_raw([(m, T::one())]),
                None => WeightVector::empty(),
            };
        }
        let s = self.current_bucket();
        let greedy = self.state.greedy(s, &self.feasible).expect("non-empty feasible set");
        let e = self.state.explore_rate;
        let share = e / T::from_usize(self.feasible.len()).unwrap();
        WeightVector::from_raw(
            self.feasible.iter().map(|&m| (m, if m == greedy { T::one() - e + share } else { share })),
        )
    }
}
