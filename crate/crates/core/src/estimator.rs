//! Sliding-window latency store and the KDE-based QoS success estimator.
//!
//! One [`ObservationWindow`] exists per (load balancer, instance) pair and is
//! owned by that load balancer only.

use std::collections::VecDeque;

use crate::error::EstimatorError;
use crate::scalar::{cmp, Scalar};

/// Minimum number of samples before the KDE estimate is trusted.
pub const DEFAULT_N_MIN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub time_ms: T,
    pub total_ms: T,
    pub proc_ms: T,
    pub success: bool,
}

/// Time-ordered samples no older than `now − W`.
#[derive(Debug, Clone)]
pub struct ObservationWindow<T> {
    window_ms: T,
    samples: VecDeque<Sample<T>>,
}

impl<T: Scalar> ObservationWindow<T> {
    pub fn new(window_ms: T) -> Self {
        Self { window_ms, samples: VecDeque::new() }
    }

    pub fn window_ms(&self) -> T {
        self.window_ms
    }

    /// Appends a sample observed at `t` and drops everything older than `t − W`.
    pub fn push_sample(&mut self, t: T, total_ms: T, proc_ms: T, success: bool) -> Result<(), EstimatorError> {
        if let Some(last) = self.samples.back() {
            if t < last.time_ms {
                return Err(EstimatorError::OutOfOrder { last: last.time_ms.as_f64(), got: t.as_f64() });
            }
        }
        self.samples.push_back(Sample { time_ms: t, total_ms, proc_ms, success });
        self.prune(t);
        Ok(())
    }

    /// Drops samples with `time < now − W`.
    pub fn prune(&mut self, now: T) {
        let cutoff = now - self.window_ms;
        while self.samples.front().is_some_and(|s| s.time_ms < cutoff) {
            self.samples.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample<T>> + '_ {
        self.samples.iter()
    }

    pub fn totals(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.total_ms).collect()
    }

    pub fn proc_times(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|s| s.proc_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    Kde,
    Empirical,
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosEstimate<T> {
    pub mu_hat: T,
    pub n_samples: usize,
    pub method: EstimateMethod,
}

/// Estimates `P(latency ≤ τ)` from the window's total latencies.
///
/// With fewer than `n_min` samples the estimate is `optimistic_mu`, the value
/// the caller wants unexplored instances to score with. Degenerate windows
/// (zero spread) fall back to the empirical indicator fraction.
pub fn estimate_success_probability<T: Scalar>(
    window: &ObservationWindow<T>,
    tau_ms: T,
    n_min: usize,
    optimistic_mu: T,
) -> QosEstimate<T> {
    let n = window.len();
    if n < n_min || n == 0 {
        return QosEstimate { mu_hat: optimistic_mu, n_samples: n, method: EstimateMethod::Optimistic };
    }
    let xs = window.totals();
    match silverman_bandwidth(&xs) {
        Some(h) => QosEstimate { mu_hat: kde_cdf(&xs, tau_ms, h), n_samples: n, method: EstimateMethod::Kde },
        None => QosEstimate { mu_hat: empirical_cdf(&xs, tau_ms), n_samples: n, method: EstimateMethod::Empirical },
    }
}

/// Gaussian-kernel CDF estimate at `x`: `mean_i Φ((x − x_i) / h)`.
pub fn kde_cdf<T: Scalar>(samples: &[T], x: T, h: T) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let sum: T = samples.iter().map(|&xi| ((x - xi) / h).std_normal_cdf()).sum();
    (sum / T::from_usize(samples.len()).unwrap()).max(T::zero()).min(T::one())
}

pub fn empirical_cdf<T: Scalar>(samples: &[T], x: T) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let hits = samples.iter().filter(|&&xi| xi <= x).count();
    T::from_usize(hits).unwrap() / T::from_usize(samples.len()).unwrap()
}

/// Silverman's rule `0.9 · min(σ̂, IQR/1.34) · n^(−1/5)`.
///
/// When one of the two spread measures is zero the other is used; `None` if
/// both vanish.
pub fn silverman_bandwidth<T: Scalar>(samples: &[T]) -> Option<T> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let nf = T::from_usize(n).unwrap();
    let mean = samples.iter().copied().sum::<T>() / nf;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (nf - T::one());
    let sigma = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(cmp);
    let iqr = (nearest_rank(&sorted, T::lit(0.75)) - nearest_rank(&sorted, T::lit(0.25))) / T::lit(1.34);
    let spread = match (sigma > T::zero(), iqr > T::zero()) {
        (true, true) => sigma.min(iqr),
        (true, false) => sigma,
        (false, true) => iqr,
        (false, false) => return None,
    };
    let h = T::lit(0.9) * spread * nf.powf(T::lit(-0.2));
    (h > T::epsilon() * mean.abs().max(T::one())).then_some(h)
}

/// Nearest-rank percentile: the element at index `⌈q·n⌉ − 1` of the sorted data.
pub fn percentile<T: Scalar>(samples: &[T], q: T) -> Result<T, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if !(q > T::zero() && q <= T::one()) {
        return Err(EstimatorError::InvalidQuantile(q.as_f64()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(cmp);
    Ok(nearest_rank(&sorted, q))
}

fn nearest_rank<T: Scalar>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    // tolerate representation error in q·n, e.g. 0.7·10 = 7.000000000000001
    let rank = (q.as_f64() * n as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}
