//! Single-server FIFO instances and the oracle success probability.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::model::{InstanceId, NodeId};
use crate::scenario::ServiceTimeModel;

/// Sampler for one instance's service durations.
#[derive(Debug, Clone, Copy)]
pub enum ServiceSampler {
    Fixed(f64),
    LogNormal(LogNormal<f64>),
}

impl ServiceSampler {
    /// Lognormal with the given mean and coefficient of variation:
    /// `σ² = ln(1 + cv²)`, `μ = ln(mean) − σ²/2`.
    pub fn new(model: &ServiceTimeModel) -> Self {
        if model.cv == 0.0 {
            return Self::Fixed(model.mean_ms);
        }
        let s2 = (1.0 + model.cv * model.cv).ln();
        let mu = model.mean_ms.ln() - s2 / 2.0;
        Self::LogNormal(LogNormal::new(mu, s2.sqrt()).expect("validated service model"))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Fixed(x) => *x,
            Self::LogNormal(d) => d.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub request: u64,
    pub arrival_ms: f64,
    pub start_ms: f64,
    pub depart_ms: f64,
}

/// A service replica with one server and an unbounded FIFO queue.
#[derive(Debug, Clone)]
pub struct InstanceRuntime {
    pub id: InstanceId,
    pub node: NodeId,
    pub sampler: ServiceSampler,
    pub busy_until: f64,
    /// Jobs not yet departed, in arrival order.
    pub jobs: VecDeque<Job>,
    pub served: u64,
}

impl InstanceRuntime {
    pub fn new(id: InstanceId, node: NodeId, model: &ServiceTimeModel) -> Self {
        Self { id, node, sampler: ServiceSampler::new(model), busy_until: 0.0, jobs: VecDeque::new(), served: 0 }
    }

    /// Forgets jobs that departed at or before `now`.
    pub fn prune(&mut self, now: f64) {
        while self.jobs.front().is_some_and(|j| j.depart_ms <= now) {
            self.jobs.pop_front();
        }
    }

    /// Enqueues a request arriving at `arrival`; returns `(proc_ms, depart)`.
    pub fn sample_processing<R: Rng + ?Sized>(&mut self, request: u64, arrival: f64, rng: &mut R) -> (f64, f64) {
        let service = self.sampler.sample(rng);
        self.admit(request, arrival, service)
    }

    /// Enqueues with a given service duration.
    pub fn admit(&mut self, request: u64, arrival: f64, service: f64) -> (f64, f64) {
        self.prune(arrival);
        let start = self.busy_until.max(arrival);
        let depart = start + service;
        self.busy_until = depart;
        self.jobs.push_back(Job { request, arrival_ms: arrival, start_ms: start, depart_ms: depart });
        self.served += 1;
        (depart - arrival, depart)
    }

    /// `(residual of the job in service, number of jobs waiting)` at `now`.
    pub fn backlog(&self, now: f64) -> (f64, usize) {
        let mut residual = 0.0;
        let mut waiting = 0;
        for j in self.jobs.iter().filter(|j| j.depart_ms > now) {
            if j.start_ms <= now {
                residual = j.depart_ms - now;
            } else {
                waiting += 1;
            }
        }
        (residual, waiting)
    }

    /// Monte-Carlo draws of the processing latency a request arriving now
    /// would see: residual service, fresh draws for every waiting job and its
    /// own service. Sums beyond `cap` stop early and come back as infinity.
    pub fn latency_draws<R: Rng + ?Sized>(&self, now: f64, draws: usize, cap: f64, rng: &mut R) -> Vec<f64> {
        let (residual, waiting) = self.backlog(now);
        (0..draws)
            .map(|_| {
                let mut acc = residual;
                for _ in 0..=waiting {
                    acc += self.sampler.sample(rng);
                    if acc > cap {
                        return f64::INFINITY;
                    }
                }
                acc
            })
            .collect()
    }
}

/// `P(rtt + X ≤ τ)` from sorted latency draws.
pub fn success_fraction(sorted_draws: &[f64], rtt_ms: f64, tau_ms: f64) -> f64 {
    if sorted_draws.is_empty() {
        return 0.0;
    }
    let budget = tau_ms - rtt_ms;
    let ok = sorted_draws.partition_point(|&x| x <= budget);
    ok as f64 / sorted_draws.len() as f64
}

/// Oracle success probability of sending to `instance` over `rtt_ms` now.
pub fn true_mu<R: Rng + ?Sized>(
    instance: &InstanceRuntime,
    rtt_ms: f64,
    tau_ms: f64,
    now: f64,
    draws: usize,
    rng: &mut R,
) -> f64 {
    if rtt_ms > tau_ms {
        return 0.0;
    }
    let mut d = instance.latency_draws(now, draws, tau_ms - rtt_ms, rng);
    d.sort_by(f64::total_cmp);
    success_fraction(&d, rtt_ms, tau_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DET: ServiceTimeModel = ServiceTimeModel { mean_ms: 6.0, cv: 0.0 };

    fn inst(model: &ServiceTimeModel) -> InstanceRuntime {
        InstanceRuntime::new(InstanceId(0), NodeId(0), model)
    }

    #[test]
    fn idle_instance_serves_immediately() {
        let mut i = inst(&DET);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(i.sample_processing(0, 100.0, &mut rng), (6.0, 106.0));
    }

    #[test]
    fn fifo_wait_arithmetic() {
        let mut i = inst(&DET);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(i.sample_processing(0, 0.0, &mut rng).0, 6.0);
        assert_eq!(i.sample_processing(1, 0.0, &mut rng).0, 12.0);
        assert_eq!(i.sample_processing(2, 0.0, &mut rng).0, 18.0);
    }

    #[test]
    fn departures_follow_arrival_order() {
        let model = ServiceTimeModel { mean_ms: 6.0, cv: 1.0 };
        let mut i = inst(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut last = 0.0;
        let mut t = 0.0;
        for r in 0..1000 {
            t += rng.random::<f64>() * 8.0;
            let (_, d) = i.sample_processing(r, t, &mut rng);
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn lognormal_mean_matches() {
        let s = ServiceSampler::new(&ServiceTimeModel { mean_ms: 6.0, cv: 0.1 });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean = (0..100_000).map(|_| s.sample(&mut rng)).sum::<f64>() / 1e5;
        assert!((mean - 6.0).abs() < 0.06, "{mean}");
    }

    #[test]
    fn true_mu_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut i = inst(&DET);
        assert_eq!(true_mu(&i, 10.0, 80.0, 0.0, 1000, &mut rng), 1.0);
        for r in 0..21 {
            i.sample_processing(r, 0.0, &mut rng);
        }
        // one in service with 6 ms left, 20 waiting: 10 + 6 + 20·6 + 6 > 80
        assert_eq!(i.backlog(0.0), (6.0, 20));
        assert_eq!(true_mu(&i, 10.0, 80.0, 0.0, 1000, &mut rng), 0.0);
        assert_eq!(true_mu(&inst(&DET), 90.0, 80.0, 0.0, 1000, &mut rng), 0.0);
    }

    #[test]
    fn true_mu_converges_to_large_oracle() {
        let model = ServiceTimeModel { mean_ms: 6.0, cv: 0.5 };
        let mut i = inst(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for r in 0..8 {
            i.sample_processing(r, 0.0, &mut rng);
        }
        let now = 3.0;
        let tau = 80.0;
        let rtt = 30.0;
        let oracle = true_mu(&i, rtt, tau, now, 1_000_000, &mut ChaCha8Rng::seed_from_u64(100));
        assert!(oracle > 0.05 && oracle < 0.95, "oracle {oracle} should be non-trivial");
        let est = true_mu(&i, rtt, tau, now, 10_000, &mut ChaCha8Rng::seed_from_u64(200));
        assert!((est - oracle).abs() <= 0.02, "{est} vs {oracle}");
    }
}
