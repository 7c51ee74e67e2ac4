//! QoS-pool load balancer: KDE success estimates, exploitation/exploration
//! pools with an ε budget, SWRR routing and error-triggered cooldowns.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{best_expected_processing, fallback_instance, Cooldown, InstanceView, PoolAudit, RoutingPolicy};
use crate::error::PolicyError;
use crate::estimator::{estimate_success_probability, EstimateMethod, ObservationWindow, QosEstimate};
use crate::model::{success_ratio_in, InstanceId, LbId, NodeId, QosRequirements, RequestRecord, WeightVector};
use crate::scalar::Scalar;
use crate::swrr::SwrrState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig<T> {
    /// Multiplicative ε decay applied on every non-degraded decision step.
    pub gamma: T,
    /// Score floor added inside both pools.
    pub eta: T,
    /// Consecutive failures that trigger a cooldown.
    pub error_threshold: u32,
    pub cooldown_s: T,
    pub decision_period_s: T,
    /// Samples required before trusting the KDE estimate.
    pub n_min: usize,
    /// Degradation must exceed this margin to reset ε. Zero is the strict comparison.
    pub epsilon_reset_hysteresis: T,
    pub swrr_resolution: u32,
    /// Processing latency assumed before any has been observed.
    pub idle_latency_ms: T,
}

impl<T: Scalar> Default for PolicyConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(0.01),
            eta: T::lit(0.01),
            error_threshold: 5,
            cooldown_s: T::lit(10.0),
            decision_period_s: T::lit(1.0),
            n_min: crate::estimator::DEFAULT_N_MIN,
            epsilon_reset_hysteresis: T::zero(),
            swrr_resolution: crate::swrr::DEFAULT_RESOLUTION,
            idle_latency_ms: T::lit(6.0),
        }
    }
}

impl<T: Scalar> PolicyConfig<T> {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |what: &str| Err(PolicyError::InvalidConfig(what.to_string()));
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.eta > T::zero()) {
            return bad("eta must be positive");
        }
        if self.error_threshold < 1 {
            return bad("error_threshold must be at least 1");
        }
        if !(self.cooldown_s > T::zero()) {
            return bad("cooldown_s must be positive");
        }
        if !(self.decision_period_s > T::zero()) {
            return bad("decision_period_s must be positive");
        }
        if !(self.epsilon_reset_hysteresis >= T::zero()) {
            return bad("epsilon_reset_hysteresis must be non-negative");
        }
        if self.swrr_resolution == 0 {
            return bad("swrr_resolution must be positive");
        }
        if !(self.idle_latency_ms >= T::zero()) {
            return bad("idle_latency_ms must be non-negative");
        }
        Ok(())
    }
}

/// Splits the unit mass between the two pools: exploitation members share
/// `1 − ε` in proportion to `(μ̂ − ρ) + η`, exploration members share `ε` in
/// proportion to `μ̂ + η`. An empty pool hands its budget to the other.
pub fn pool_weights<T: Scalar>(
    exploitation: &[(InstanceId, T)],
    exploration: &[(InstanceId, T)],
    rho: T,
    eta: T,
    epsilon: T,
) -> WeightVector<T> {
    let (budget_e, budget_x) = match (exploitation.is_empty(), exploration.is_empty()) {
        (true, true) => return WeightVector::empty(),
        (true, false) => (T::zero(), T::one()),
        (false, true) => (T::one(), T::zero()),
        (false, false) => (T::one() - epsilon, epsilon),
    };
    let scores_e: Vec<_> = exploitation.iter().map(|&(m, mu)| (m, (mu - rho) + eta)).collect();
    let scores_x: Vec<_> = exploration.iter().map(|&(m, mu)| (m, mu + eta)).collect();
    let mut out = Vec::with_capacity(scores_e.len() + scores_x.len());
    for (scores, budget) in [(scores_e, budget_e), (scores_x, budget_x)] {
        let total: T = scores.iter().map(|s| s.1).sum();
        out.extend(scores.into_iter().map(|(m, s)| (m, budget * s / total)));
    }
    WeightVector::from_raw(out)
}

/// ε schedule: reset to `1 − ρ` when the current window's success ratio fell
/// below the previous window's by more than `hysteresis`, decay by `gamma`
/// otherwise.
pub fn next_epsilon<T: Scalar>(epsilon: T, q_now: Option<T>, q_prev: Option<T>, rho: T, gamma: T, hysteresis: T) -> T {
    match (q_now, q_prev) {
        (Some(now), Some(prev)) if now < prev - hysteresis => T::one() - rho,
        _ => epsilon * gamma,
    }
}

#[derive(Debug, Clone)]
pub struct QEdgeProxy<T> {
    lb: LbId,
    qos: QosRequirements<T>,
    config: PolicyConfig<T>,
    view: InstanceView<T>,
    feasible: BTreeSet<InstanceId>,
    exploitation: BTreeSet<InstanceId>,
    exploration: BTreeSet<InstanceId>,
    weights: WeightVector<T>,
    epsilon: T,
    /// The ε the current weights were formed with.
    applied_epsilon: T,
    windows: BTreeMap<InstanceId, ObservationWindow<T>>,
    error_counts: BTreeMap<InstanceId, u32>,
    cooldown_until: BTreeMap<InstanceId, T>,
    /// `(send time, success)` of completed requests, for the QoS trend test.
    outcomes: VecDeque<(T, bool)>,
    last_window_qos: Option<T>,
    estimates: BTreeMap<InstanceId, QosEstimate<T>>,
    swrr: SwrrState,
}

impl<T: Scalar> QEdgeProxy<T> {
    /// Initial state: every instance within network reach of `τ` is feasible
    /// and starts in the exploration pool with uniform weight; `ε = 1 − ρ`.
    pub fn new(
        lb: LbId,
        qos: QosRequirements<T>,
        config: PolicyConfig<T>,
        view: InstanceView<T>,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        qos.validate().map_err(|e| PolicyError::InvalidConfig(e.to_string()))?;
        let feasible: BTreeSet<_> = view.rtts().filter(|&(_, r)| r <= qos.tau_ms).map(|(m, _)| m).collect();
        let window_ms = qos.window_ms();
        let mut s = Self {
            lb,
            qos,
            config,
            windows: view.ids().map(|m| (m, ObservationWindow::new(window_ms))).collect(),
            view,
            exploitation: BTreeSet::new(),
            exploration: feasible.clone(),
            weights: WeightVector::uniform(feasible.iter().copied()),
            feasible,
            epsilon: T::one() - qos.rho,
            applied_epsilon: T::one() - qos.rho,
            error_counts: BTreeMap::new(),
            cooldown_until: BTreeMap::new(),
            outcomes: VecDeque::new(),
            last_window_qos: None,
            estimates: BTreeMap::new(),
            swrr: SwrrState::default(),
        };
        s.rebuild_swrr();
        Ok(s)
    }

    pub fn config(&self) -> &PolicyConfig<T> {
        &self.config
    }

    pub fn weights(&self) -> &WeightVector<T> {
        &self.weights
    }

    pub fn feasible(&self) -> &BTreeSet<InstanceId> {
        &self.feasible
    }

    pub fn exploitation_pool(&self) -> &BTreeSet<InstanceId> {
        &self.exploitation
    }

    pub fn exploration_pool(&self) -> &BTreeSet<InstanceId> {
        &self.exploration
    }

    pub fn qos_pool(&self) -> BTreeSet<InstanceId> {
        self.exploitation.union(&self.exploration).copied().collect()
    }

    pub fn error_count(&self, m: InstanceId) -> u32 {
        self.error_counts.get(&m).copied().unwrap_or(0)
    }

    pub fn cooldown_until(&self, m: InstanceId) -> Option<T> {
        self.cooldown_until.get(&m).copied()
    }

    pub fn last_window_qos(&self) -> Option<T> {
        self.last_window_qos
    }

    pub fn estimate(&self, m: InstanceId) -> Option<&QosEstimate<T>> {
        self.estimates.get(&m)
    }

    pub fn set_epsilon(&mut self, epsilon: T) {
        self.epsilon = epsilon.max(T::zero()).min(T::one() - self.qos.rho);
    }

    fn in_cooldown(&self, m: InstanceId, now: T) -> bool {
        self.cooldown_until.get(&m).is_some_and(|&until| now < until)
    }

    /// Best expected processing latency from this LB's own recent samples.
    pub fn best_expected_processing(&self) -> T {
        best_expected_processing(
            self.windows.values().map(|w| w.proc_times()),
            self.qos.rho,
            self.config.idle_latency_ms,
        )
    }

    fn rebuild_swrr(&mut self) {
        self.swrr = if self.weights.sum() > T::zero() {
            SwrrState::rebuild(&self.weights, self.config.swrr_resolution.max(self.weights.len() as u32))
                .unwrap_or_default()
        } else {
            SwrrState::default()
        };
    }

    fn drop_from_pool(&mut self, m: InstanceId) -> bool {
        let was_e = self.exploitation.remove(&m);
        let was_x = self.exploration.remove(&m);
        self.weights.remove_and_renormalize(m);
        was_e || was_x
    }

    /// One decision step: refresh feasibility, re-estimate, re-partition,
    /// re-weight, update ε and rebuild the SWRR schedule.
    pub fn maintenance(&mut self, now: T) {
        for w in self.windows.values_mut() {
            w.prune(now);
        }
        self.cooldown_until.retain(|_, until| now < *until);

        let lp = self.best_expected_processing();
        let tau = self.qos.tau_ms;
        let rho = self.qos.rho;
        self.feasible = self
            .view
            .rtts()
            .filter(|&(m, r)| r + lp <= tau && !self.cooldown_until.contains_key(&m))
            .map(|(m, _)| m)
            .collect();

        self.exploitation.clear();
        self.exploration.clear();
        self.estimates.clear();
        let mut exploit = Vec::new();
        let mut explore = Vec::new();
        for &m in &self.feasible {
            let est = match self.windows.get(&m) {
                Some(w) => estimate_success_probability(w, tau, self.config.n_min, rho),
                None => QosEstimate { mu_hat: rho, n_samples: 0, method: EstimateMethod::Optimistic },
            };
            self.estimates.insert(m, est);
            if est.method != EstimateMethod::Optimistic && est.mu_hat >= rho {
                self.exploitation.insert(m);
                exploit.push((m, est.mu_hat));
            } else {
                self.exploration.insert(m);
                explore.push((m, est.mu_hat));
            }
        }
        self.weights = pool_weights(&exploit, &explore, rho, self.config.eta, self.epsilon);
        self.applied_epsilon = self.epsilon;

        let window = self.qos.window_ms();
        let cutoff = now - window - window;
        while self.outcomes.front().is_some_and(|&(t, _)| t < cutoff) {
            self.outcomes.pop_front();
        }
        let q_now = success_ratio_in(self.outcomes.iter().copied(), now - window, now);
        let q_prev = success_ratio_in(self.outcomes.iter().copied(), cutoff, now - window);
        self.last_window_qos = q_now;
        self.epsilon =
            next_epsilon(self.epsilon, q_now, q_prev, rho, self.config.gamma, self.config.epsilon_reset_hysteresis);

        self.rebuild_swrr();
    }

    pub fn route_request(&mut self, now: T) -> Result<InstanceId, PolicyError> {
        if !self.swrr.is_empty() {
            if let Ok(m) = self.swrr.select() {
                return Ok(m);
            }
        }
        fallback_instance(&self.view, self.qos.tau_ms, |m| self.in_cooldown(m, now))
            .ok_or(PolicyError::NoInstances(self.lb))
    }

    pub fn record(&mut self, record: &RequestRecord<T>, now: T) -> Option<Cooldown<T>> {
        // keep the trend buffer ordered by arrival; completions are near-ordered
        self.outcomes.push_back((record.send_time_ms, record.success));
        let m = record.instance?;
        let window = self.windows.get_mut(&m)?;
        window
            .push_sample(now, record.total_ms, record.proc_ms, record.success)
            .expect("completions are delivered in time order");
        let count = self.error_counts.entry(m).or_insert(0);
        if record.success {
            *count = 0;
            return None;
        }
        *count += 1;
        if *count < self.config.error_threshold {
            return None;
        }
        *count = 0;
        let until = now + self.config.cooldown_s * T::lit(1000.0);
        self.cooldown_until.insert(m, until);
        self.feasible.remove(&m);
        if self.drop_from_pool(m) {
            self.rebuild_swrr();
        }
        Some(Cooldown { lb: self.lb, instance: m, from_ms: now, until_ms: until })
    }

    pub fn instance_added(&mut self, m: InstanceId, node: NodeId, rtt_ms: T, now: T) {
        self.view.insert(m, node, rtt_ms);
        for w in self.windows.values_mut() {
            w.prune(now);
        }
        let lp = self.best_expected_processing();
        self.windows.entry(m).or_insert_with(|| ObservationWindow::new(self.qos.window_ms()));
        if rtt_ms + lp > self.qos.tau_ms {
            return;
        }
        self.feasible.insert(m);
        self.exploration.insert(m);
        if self.weights.sum() > T::zero() {
            self.weights.insert(m, T::zero());
        } else {
            // sole routable member of an otherwise empty pool
            self.weights = WeightVector::uniform(self.qos_pool());
        }
        self.rebuild_swrr();
    }

    pub fn instance_removed(&mut self, m: InstanceId) {
        self.view.remove(m);
        self.windows.remove(&m);
        self.error_counts.remove(&m);
        self.cooldown_until.remove(&m);
        self.estimates.remove(&m);
        self.feasible.remove(&m);
        if self.drop_from_pool(m) {
            self.rebuild_swrr();
        }
    }
}

impl<T: Scalar> RoutingPolicy<T> for QEdgeProxy<T> {
    fn lb(&self) -> LbId {
        self.lb
    }

    fn route(&mut self, now: T) -> Result<InstanceId, PolicyError> {
        self.route_request(now)
    }

    fn record_outcome(&mut self, record: &RequestRecord<T>, now: T) -> Option<Cooldown<T>> {
        self.record(record, now)
    }

    fn maintenance_step(&mut self, now: T) {
        self.maintenance(now)
    }

    fn update_rtt_view(&mut self, view: &BTreeMap<InstanceId, T>) {
        self.view.refresh(view);
    }

    fn on_instance_added(&mut self, m: InstanceId, node: NodeId, rtt_ms: T, now: T) {
        self.instance_added(m, node, rtt_ms, now)
    }

    fn on_instance_removed(&mut self, m: InstanceId) {
        self.instance_removed(m)
    }

    fn effective_weights(&self) -> WeightVector<T> {
        if !self.swrr.is_empty() {
            return self.weights.clone();
        }
        match fallback_instance(&self.view, self.qos.tau_ms, |m| self.cooldown_until.contains_key(&m)) {
            Some(m) => WeightVector::from_raw([(m, T::one())]),
            None => WeightVector::empty(),
        }
    }

    fn epsilon(&self) -> Option<T> {
        Some(self.epsilon)
    }

    fn pool_audit(&self) -> Option<PoolAudit<T>> {
        Some(PoolAudit {
            exploitation: self.exploitation.iter().copied().collect(),
            exploration: self.exploration.iter().copied().collect(),
            weights: self.weights.clone(),
            epsilon: self.applied_epsilon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClientId;
    use proptest::prelude::*;

    fn qos() -> QosRequirements<f64> {
        QosRequirements::new(80.0, 0.9, 10.0).unwrap()
    }

    fn view(rtts: &[f64]) -> InstanceView<f64> {
        InstanceView::new(rtts.iter().enumerate().map(|(i, &r)| (InstanceId(i as u32), NodeId(i as u32), r)))
    }

    fn policy(rtts: &[f64]) -> QEdgeProxy<f64> {
        QEdgeProxy::new(LbId(0), qos(), PolicyConfig::default(), view(rtts)).unwrap()
    }

    fn outcome(m: u32, send: f64, total: f64) -> RequestRecord<f64> {
        RequestRecord::new(0, ClientId(0), LbId(0), Some(InstanceId(m)), send, total - 5.0, 5.0, 80.0)
    }

    #[test]
    fn initial_epsilon_and_uniform_weights() {
        let p = policy(&[10.0, 20.0, 30.0]);
        assert!((p.epsilon - 0.1).abs() < 1e-12);
        for m in 0..3 {
            assert!((p.weights().get(InstanceId(m)) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(p.exploitation_pool().is_empty());
        assert_eq!(p.exploration_pool().len(), 3);
    }

    #[test]
    fn out_of_reach_instance_not_feasible() {
        let p = policy(&[10.0, 90.0]);
        assert!(!p.feasible().contains(&InstanceId(1)));
        assert_eq!(p.weights().get(InstanceId(0)), 1.0);
    }

    #[test]
    fn single_member_pools_absorb_budget() {
        let w = pool_weights::<f64>(&[(InstanceId(1), 0.95)], &[(InstanceId(2), 0.5)], 0.9, 0.01, 0.1);
        assert!((w.get(InstanceId(1)) - 0.9).abs() < 1e-12);
        assert!((w.get(InstanceId(2)) - 0.1).abs() < 1e-12);
        let only_x = pool_weights::<f64>(&[], &[(InstanceId(1), 0.2), (InstanceId(2), 0.6)], 0.9, 0.01, 0.1);
        assert!((only_x.sum() - 1.0).abs() < 1e-12);
        // exploration scores 0.21 and 0.61
        assert!((only_x.get(InstanceId(2)) - 0.61 / 0.82).abs() < 1e-12);
    }

    #[test]
    fn optimistic_newcomer_tops_exploration() {
        // newcomer scores ρ + η = 0.91 against 0.5 + η = 0.51
        let w = pool_weights::<f64>(&[], &[(InstanceId(0), 0.5), (InstanceId(1), 0.9)], 0.9, 0.01, 0.1);
        assert!((w.get(InstanceId(1)) - 0.91 / 1.42).abs() < 1e-12);
        assert!(w.get(InstanceId(1)) > w.get(InstanceId(0)));
    }

    #[test]
    fn epsilon_reset_and_decay() {
        assert!((next_epsilon::<f64>(0.001, Some(0.7), Some(0.95), 0.9, 0.01, 0.0) - 0.1).abs() < 1e-12);
        assert!((next_epsilon::<f64>(0.1, Some(0.95), Some(0.95), 0.9, 0.01, 0.0) - 0.001).abs() < 1e-15);
        assert!((next_epsilon::<f64>(0.1, None, Some(0.95), 0.9, 0.01, 0.0) - 0.001).abs() < 1e-15);
        // small dip absorbed by hysteresis
        assert!((next_epsilon::<f64>(0.1, Some(0.94), Some(0.95), 0.9, 0.01, 0.02) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn singleton_pool_routes_there() {
        let mut p = policy(&[20.0]);
        for _ in 0..5 {
            assert_eq!(p.route_request(0.0).unwrap(), InstanceId(0));
        }
    }

    #[test]
    fn empty_pool_falls_back_to_nearest() {
        let mut p = policy(&[30.0, 10.0]);
        p.instance_removed(InstanceId(0));
        p.instance_removed(InstanceId(1));
        assert!(p.route_request(0.0).is_err());

        let mut p = policy(&[30.0, 10.0]);
        // every known instance out of pool
        p.exploration.clear();
        p.weights = WeightVector::empty();
        p.rebuild_swrr();
        assert_eq!(p.route_request(0.0).unwrap(), InstanceId(1));
    }

    #[test]
    fn swrr_routing_follows_weights() {
        let mut p = policy(&[10.0, 20.0, 30.0]);
        p.weights = WeightVector::from_raw([
            (InstanceId(0), 5.0 / 7.0),
            (InstanceId(1), 1.0 / 7.0),
            (InstanceId(2), 1.0 / 7.0),
        ]);
        p.config.swrr_resolution = 7;
        p.rebuild_swrr();
        let picks: Vec<u32> = (0..7).map(|_| p.route_request(0.0).unwrap().0).collect();
        assert_eq!(picks, vec![0, 0, 1, 0, 2, 0, 0]);
    }

    #[test]
    fn five_failures_trigger_cooldown() {
        let mut p = policy(&[10.0, 20.0]);
        let mut fired = None;
        for i in 0..5 {
            let t = 100.0 + i as f64;
            fired = p.record(&outcome(0, t - 90.0, 90.0), t);
            if i < 4 {
                assert!(fired.is_none());
            }
        }
        let cd = fired.expect("cooldown after E_t failures");
        assert_eq!(cd.until_ms, 104.0 + 10_000.0);
        assert_eq!(p.error_count(InstanceId(0)), 0);
        assert!(!p.qos_pool().contains(&InstanceId(0)));
        assert_eq!(p.weights().get(InstanceId(1)), 1.0);
        for _ in 0..10 {
            assert_eq!(p.route_request(105.0).unwrap(), InstanceId(1));
        }
    }

    #[test]
    fn success_resets_error_count() {
        let mut p = policy(&[10.0]);
        p.record(&outcome(0, 0.0, 90.0), 90.0);
        p.record(&outcome(0, 1.0, 95.0), 96.0);
        assert_eq!(p.error_count(InstanceId(0)), 2);
        p.record(&outcome(0, 2.0, 20.0), 97.0);
        assert_eq!(p.error_count(InstanceId(0)), 0);
    }

    #[test]
    fn cooldown_renormalizes_survivor() {
        let mut p = policy(&[10.0, 20.0]);
        p.weights = WeightVector::from_raw([(InstanceId(0), 0.6), (InstanceId(1), 0.4)]);
        for i in 0..5 {
            p.record(&outcome(0, i as f64, 90.0), 100.0 + i as f64);
        }
        assert_eq!(p.qos_pool(), BTreeSet::from([InstanceId(1)]));
        assert!((p.weights().get(InstanceId(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn added_instance_joins_with_zero_weight() {
        let mut p = policy(&[10.0]);
        p.instance_added(InstanceId(5), NodeId(5), 30.0, 0.0);
        assert!(p.exploration_pool().contains(&InstanceId(5)));
        assert_eq!(p.weights().get(InstanceId(5)), 0.0);
        assert!(p.weights().contains(InstanceId(5)));
        assert!((p.weights().sum() - 1.0).abs() < 1e-12);
        // never picked before the next decision step
        assert!((0..50).all(|_| p.route_request(1.0).unwrap() == InstanceId(0)));
    }

    #[test]
    fn added_instance_beyond_reach_is_ignored() {
        let mut p = policy(&[10.0]);
        // processing samples at 20 ms
        for i in 0..20 {
            p.record(
                &RequestRecord::new(0, ClientId(0), LbId(0), Some(InstanceId(0)), i as f64, 10.0, 20.0, 80.0),
                i as f64 + 30.0,
            );
        }
        assert_eq!(p.best_expected_processing(), 20.0);
        p.instance_added(InstanceId(1), NodeId(1), 70.0, 100.0);
        assert!(!p.qos_pool().contains(&InstanceId(1)));
        p.instance_added(InstanceId(2), NodeId(2), 30.0, 100.0);
        assert!(p.qos_pool().contains(&InstanceId(2)));
    }

    #[test]
    fn newcomer_gets_largest_exploration_share_after_maintenance() {
        let mut p = policy(&[10.0, 20.0]);
        // instance 0 performs well, instance 1 half the time
        for i in 0..40 {
            let t = 1000.0 + i as f64 * 10.0;
            p.record(&outcome(0, t - 20.0, 20.0), t);
            let lat = if i % 2 == 0 { 30.0 } else { 150.0 };
            p.record(&outcome(1, t - lat, lat), t);
        }
        p.instance_added(InstanceId(2), NodeId(2), 15.0, 1500.0);
        p.maintenance(2000.0);
        assert!(p.exploitation_pool().contains(&InstanceId(0)));
        assert!(p.exploration_pool().contains(&InstanceId(1)));
        assert!(p.exploration_pool().contains(&InstanceId(2)));
        assert!(p.weights().get(InstanceId(2)) > p.weights().get(InstanceId(1)));
        let budget_x = p.weights().get(InstanceId(1)) + p.weights().get(InstanceId(2));
        assert!((budget_x - 0.1).abs() < 1e-9);
    }

    #[test]
    fn removal_renormalizes() {
        let mut p = policy(&[10.0, 20.0]);
        p.weights = WeightVector::from_raw([(InstanceId(0), 0.75), (InstanceId(1), 0.25)]);
        p.instance_removed(InstanceId(9));
        assert_eq!(p.weights().get(InstanceId(0)), 0.75);
        p.instance_removed(InstanceId(0));
        assert_eq!(p.qos_pool(), BTreeSet::from([InstanceId(1)]));
        assert_eq!(p.weights().get(InstanceId(1)), 1.0);
        p.instance_removed(InstanceId(1));
        assert!(p.qos_pool().is_empty());
        assert!(p.weights().is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PolicyConfig { gamma: 1.5, ..PolicyConfig::default() };
        assert!(QEdgeProxy::new(LbId(0), qos(), cfg, view(&[1.0])).is_err());
    }

    proptest! {
        #[test]
        fn maintenance_invariants(
            lat in proptest::collection::vec(proptest::collection::vec(5.0f64..160.0, 0..30), 1..6),
            rtts in proptest::collection::vec(0.0f64..100.0, 6),
            eps_pow in 0i32..6,
        ) {
            let mut p = policy(&rtts[..lat.len()]);
            p.set_epsilon(0.1 * 0.01f64.powi(eps_pow));
            let mut t = 0.0;
            for (m, ls) in lat.iter().enumerate() {
                for &l in ls {
                    t += 1.0;
                    p.record(&outcome(m as u32, t - l, l), t);
                }
            }
            let eps_before = p.epsilon;
            p.maintenance(t + 1.0);
            let w = p.weights();
            prop_assert!(w.is_normalized());
            let pool = p.qos_pool();
            prop_assert!(p.exploitation_pool().is_disjoint(p.exploration_pool()));
            prop_assert!(pool.is_subset(p.feasible()));
            for (m, _) in w.iter() {
                prop_assert!(pool.contains(&m));
            }
            if !p.exploitation_pool().is_empty() && !p.exploration_pool().is_empty() {
                let se: f64 = p.exploitation_pool().iter().map(|&m| w.get(m)).sum();
                let sx: f64 = p.exploration_pool().iter().map(|&m| w.get(m)).sum();
                prop_assert!((se - (1.0 - eps_before)).abs() < 1e-9);
                prop_assert!((sx - eps_before).abs() < 1e-9);
            }
            prop_assert!(p.epsilon <= 0.1 + 1e-15);
        }
    }
}
