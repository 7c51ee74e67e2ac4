//! Evaluation metrics over a finished trace.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::MetricsError;
use crate::estimator::percentile;
use crate::model::{ClientId, InstanceId, LbId, NodeId, RequestRecord, WeightVector};
use crate::scalar::Scalar;
use crate::sim::SimulationTrace;

/// Jain's fairness index `(Σx)² / (n·Σx²)`.
pub fn jain_index<T: Scalar>(loads: &[T]) -> Result<T, MetricsError> {
    let sum: T = loads.iter().copied().sum();
    let sq: T = loads.iter().map(|&x| x * x).sum();
    if loads.is_empty() || sq <= T::zero() {
        return Err(MetricsError::ZeroLoads);
    }
    Ok(sum * sum / (T::from_usize(loads.len()).unwrap() * sq))
}

/// `max_m μ_m − Σ_m w_m μ_m`; instances missing from `mu` count as 0.
pub fn step_regret<T: Scalar>(weights: &WeightVector<T>, mu: &BTreeMap<InstanceId, T>) -> T {
    let best = mu.values().copied().fold(T::zero(), T::max);
    let learned: T = weights.iter().map(|(m, w)| w * mu.get(&m).copied().unwrap_or(T::zero())).sum();
    // rounding in Σw can push the difference a hair below zero
    (best - learned).max(T::zero())
}

/// Total drift `Σ_t max_m |μ_m(t+1) − μ_m(t)|` over instances present in
/// both consecutive steps.
pub fn variation_budget<T: Scalar>(series: &[&BTreeMap<InstanceId, T>]) -> T {
    series
        .windows(2)
        .map(|w| w[1].iter().filter_map(|(m, &b)| w[0].get(m).map(|&a| (b - a).abs())).fold(T::zero(), T::max))
        .sum()
}

/// Trailing-window success fraction at `step, 2·step, …, horizon`, by send
/// time in `(t − W, t]`. Windows without requests are omitted.
pub fn rolling_qos<T: Scalar>(records: &[RequestRecord<T>], window_ms: T, step_ms: T, horizon_ms: T) -> Vec<(T, T)> {
    let mut sorted: Vec<(T, bool)> = records.iter().map(|r| (r.send_time_ms, r.success)).collect();
    sorted.sort_by(|a, b| crate::scalar::cmp(&a.0, &b.0));
    // prefix counts of successes
    let mut ok_prefix = Vec::with_capacity(sorted.len() + 1);
    ok_prefix.push(0usize);
    for &(_, s) in &sorted {
        ok_prefix.push(ok_prefix.last().unwrap() + s as usize);
    }
    let upto = |t: T| sorted.partition_point(|&(x, _)| x <= t);
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let t = step_ms * T::from_usize(k).unwrap();
        if t > horizon_ms + step_ms * T::lit(1e-9) {
            break;
        }
        let (lo, hi) = (upto(t - window_ms), upto(t));
        if hi > lo {
            let ok = ok_prefix[hi] - ok_prefix[lo];
            out.push((t, T::from_usize(ok).unwrap() / T::from_usize(hi - lo).unwrap()));
        }
        k += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub times_ms: Vec<f64>,
    /// Per-step regret, indexed `[lb][step]`.
    pub per_lb_step: Vec<Vec<f64>>,
    /// Cumulative regret, indexed `[lb][step]`.
    pub per_lb_cumulative: Vec<Vec<f64>>,
    pub system_step: Vec<f64>,
    pub system_cumulative: Vec<f64>,
}

impl RegretSeries {
    pub fn total(&self) -> f64 {
        self.system_cumulative.last().copied().unwrap_or(0.0)
    }

    /// `R(T)/T` over the first `steps` decision steps.
    pub fn average_over(&self, steps: usize) -> Option<f64> {
        let steps = steps.min(self.system_cumulative.len());
        (steps > 0).then(|| self.system_cumulative[steps - 1] / steps as f64)
    }
}

pub fn regret_series(trace: &SimulationTrace) -> RegretSeries {
    let n = trace.n_lbs();
    let steps = trace.steps();
    let mut per_lb_step = vec![Vec::with_capacity(steps.len()); n];
    let mut times = Vec::with_capacity(steps.len());
    for step in &steps {
        times.push(step[0].time_ms);
        for s in step.iter() {
            per_lb_step[s.lb.index()].push(step_regret(&s.weights, &s.mu));
        }
    }
    let cumulate = |xs: &[f64]| {
        xs.iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect::<Vec<f64>>()
    };
    let system_step: Vec<f64> = (0..times.len()).map(|i| per_lb_step.iter().map(|v| v[i]).sum()).collect();
    RegretSeries {
        times_ms: times,
        per_lb_cumulative: per_lb_step.iter().map(|v| cumulate(v)).collect(),
        system_cumulative: cumulate(&system_step),
        system_step,
        per_lb_step,
    }
}

/// Empirical variation budget of every load balancer.
pub fn variation_budgets(trace: &SimulationTrace) -> Vec<f64> {
    let mut per_lb: Vec<Vec<&BTreeMap<InstanceId, f64>>> = vec![Vec::new(); trace.n_lbs()];
    for s in &trace.snapshots {
        per_lb[s.lb.index()].push(&s.mu);
    }
    per_lb.iter().map(|series| variation_budget(series)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientStat {
    pub client: ClientId,
    pub lb: LbId,
    pub requests: usize,
    pub successes: usize,
    pub success_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceStat {
    pub instance: InstanceId,
    pub node: NodeId,
    pub requests: usize,
    pub rate_per_s: f64,
    /// `None` when the instance served nothing.
    pub p90_proc_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub seed: u64,
    pub duration_s: f64,
    pub tau_ms: f64,
    pub rho: f64,
    pub requests: usize,
    pub successes: usize,
    pub success_ratio: f64,
    /// Clients that sent at least one request.
    pub clients: usize,
    pub satisfied_clients: usize,
    pub satisfied_fraction: f64,
    pub jain_index: f64,
    pub unroutable: usize,
    pub cooldowns: usize,
    pub system_regret: f64,
    pub mean_step_regret: f64,
    pub variation_budget_total: f64,
    pub variation_budget: Vec<f64>,
    /// Load balancers whose nearest instance is farther than `τ − idle service time`.
    pub placement_warnings: Vec<LbId>,
    pub per_client: Vec<ClientStat>,
    pub per_instance: Vec<InstanceStat>,
}

pub fn client_stats<T: Scalar>(records: &[RequestRecord<T>]) -> Vec<ClientStat> {
    let mut acc: BTreeMap<ClientId, (LbId, usize, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.client).or_insert((r.lb, 0, 0));
        e.1 += 1;
        e.2 += r.success as usize;
    }
    acc.into_iter()
        .map(|(client, (lb, n, ok))| ClientStat {
            client,
            lb,
            requests: n,
            successes: ok,
            success_ratio: ok as f64 / n as f64,
        })
        .collect()
}

/// `|{c : ratio_c ≥ ρ}| / #clients`.
pub fn satisfied_fraction(stats: &[ClientStat], rho: f64) -> (usize, f64) {
    let sat = stats.iter().filter(|c| c.success_ratio >= rho).count();
    let frac = if stats.is_empty() { 0.0 } else { sat as f64 / stats.len() as f64 };
    (sat, frac)
}

pub fn placement_warnings(trace: &SimulationTrace) -> Vec<LbId> {
    let sc = &trace.scenario;
    let limit = sc.qos.tau_ms - sc.service.mean_ms;
    (0..trace.n_lbs())
        .map(|k| LbId(k as u32))
        .filter(|lb| {
            let nearest =
                sc.instance_nodes.iter().map(|&n| sc.topology.rtt(lb.node(), n)).fold(f64::INFINITY, f64::min);
            nearest > limit
        })
        .collect()
}

impl MetricsReport {
    pub fn from_trace(trace: &SimulationTrace) -> Self {
        let sc = &trace.scenario;
        let records = &trace.records;
        let per_client = client_stats(records);
        let (satisfied_clients, satisfied_fraction) = satisfied_fraction(&per_client, sc.qos.rho);

        let mut by_instance: BTreeMap<InstanceId, Vec<f64>> =
            trace.instances.iter().map(|i| (i.id, Vec::new())).collect();
        for r in records {
            if let Some(m) = r.instance {
                by_instance.entry(m).or_default().push(r.proc_ms);
            }
        }
        let per_instance: Vec<InstanceStat> = trace
            .instances
            .iter()
            .map(|i| {
                let procs = &by_instance[&i.id];
                let until = i.removed_ms.unwrap_or(sc.duration_ms).min(sc.duration_ms);
                let active_s = ((until - i.added_ms) / 1000.0).max(f64::MIN_POSITIVE);
                InstanceStat {
                    instance: i.id,
                    node: i.node,
                    requests: procs.len(),
                    rate_per_s: procs.len() as f64 / active_s,
                    p90_proc_ms: percentile(procs, 0.9).ok(),
                }
            })
            .collect();
        let loads: Vec<f64> = per_instance.iter().map(|i| i.requests as f64).collect();

        let regret = regret_series(trace);
        let vb = variation_budgets(trace);
        let successes = records.iter().filter(|r| r.success).count();
        Self {
            strategy: sc.strategy.id(),
            seed: sc.seed,
            duration_s: sc.duration_ms / 1000.0,
            tau_ms: sc.qos.tau_ms,
            rho: sc.qos.rho,
            requests: records.len(),
            successes,
            success_ratio: if records.is_empty() { 0.0 } else { successes as f64 / records.len() as f64 },
            clients: per_client.len(),
            satisfied_clients,
            satisfied_fraction,
            jain_index: jain_index(&loads).unwrap_or(0.0),
            unroutable: records.iter().filter(|r| r.instance.is_none()).count(),
            cooldowns: trace.cooldowns.len(),
            system_regret: regret.total(),
            mean_step_regret: regret.average_over(usize::MAX).unwrap_or(0.0),
            variation_budget_total: vb.iter().sum(),
            variation_budget: vb,
            placement_warnings: placement_warnings(trace),
            per_client,
            per_instance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jain_examples() {
        assert!((jain_index::<f64>(&[1.0, 1.0, 1.0, 1.0]).unwrap() - 1.0).abs() < 1e-9);
        assert!((jain_index::<f64>(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 0.25).abs() < 1e-9);
        assert!((jain_index::<f64>(&[2.0, 1.0, 1.0]).unwrap() - 16.0 / 18.0).abs() < 1e-9);
        assert_eq!(jain_index::<f64>(&[0.0, 0.0]), Err(MetricsError::ZeroLoads));
        assert_eq!(jain_index::<f64>(&[]), Err(MetricsError::ZeroLoads));
    }

    fn mu(v: &[f64]) -> BTreeMap<InstanceId, f64> {
        v.iter().enumerate().map(|(i, &x)| (InstanceId(i as u32), x)).collect()
    }

    #[test]
    fn regret_examples() {
        let w = WeightVector::uniform([InstanceId(0), InstanceId(1)]);
        assert!((step_regret(&w, &mu(&[0.9, 0.5])) - 0.2).abs() < 1e-12);
        let w = WeightVector::from_raw([(InstanceId(0), 1.0), (InstanceId(1), 0.0)]);
        assert_eq!(step_regret(&w, &mu(&[0.9, 0.5])), 0.0);
    }

    #[test]
    fn variation_examples() {
        let c = mu(&[0.9, 0.4]);
        assert_eq!(variation_budget(&[&c, &c, &c]), 0.0);
        let (a, b) = (mu(&[0.9]), mu(&[0.7]));
        assert!((variation_budget(&[&a, &b, &a]) - 0.4).abs() < 1e-12);
        let (a2, b2) = (mu(&[0.9, 0.3]), mu(&[0.7, 0.3]));
        assert!((variation_budget(&[&a2, &b2, &a2]) - 0.4).abs() < 1e-12);
    }

    fn rec(t: f64, ok: bool) -> RequestRecord<f64> {
        RequestRecord::new(0, ClientId(0), LbId(0), Some(InstanceId(0)), t, 10.0, if ok { 5.0 } else { 500.0 }, 80.0)
    }

    #[test]
    fn rolling_examples() {
        let all: Vec<_> = (0..100).map(|i| rec(i as f64 * 100.0, true)).collect();
        let s = rolling_qos(&all, 10_000.0, 1000.0, 10_000.0);
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|&(_, q)| q == 1.0));

        let alt: Vec<_> = (0..200).map(|i| rec(i as f64 * 100.0, i % 2 == 0)).collect();
        for (_, q) in rolling_qos(&alt, 10_000.0, 1000.0, 20_000.0) {
            assert!((q - 0.5).abs() <= 0.1 + 1e-12, "{q}");
        }

        let late: Vec<_> = (0..10).map(|i| rec(5000.0 + i as f64 * 100.0, true)).collect();
        let s = rolling_qos(&late, 2000.0, 1000.0, 10_000.0);
        assert_eq!(s.first().unwrap().0, 5000.0);
        assert_eq!(s.last().unwrap().0, 7000.0);
    }

    #[test]
    fn satisfied_fraction_counts_exactly() {
        let mut records = Vec::new();
        for c in 0..4u32 {
            for i in 0..10 {
                let mut r = rec(i as f64, i >= c as i32 * 2);
                r.client = ClientId(c);
                records.push(r);
            }
        }
        let stats = client_stats(&records);
        // ratios 1.0, 0.8, 0.6, 0.4
        assert_eq!(satisfied_fraction(&stats, 0.8), (2, 0.5));
        assert_eq!(satisfied_fraction(&stats, 0.9), (1, 0.25));
    }

    proptest! {
        #[test]
        fn jain_bounds(loads in proptest::collection::vec(0.0f64..100.0, 1..20)) {
            prop_assume!(loads.iter().any(|&x| x > 0.0));
            let j = jain_index(&loads).unwrap();
            prop_assert!(j > 0.0 && j <= 1.0 + 1e-12);
            prop_assert!(j >= 1.0 / loads.len() as f64 - 1e-12);
        }

        #[test]
        fn step_regret_nonnegative(
            raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10),
        ) {
            let w = WeightVector::normalized(raw.iter().enumerate().map(|(i, p)| (InstanceId(i as u32), p.0 + 1e-6)));
            let m = raw.iter().enumerate().map(|(i, p)| (InstanceId(i as u32), p.1)).collect();
            prop_assert!(step_regret(&w, &m) >= 0.0);
        }
    }
}
