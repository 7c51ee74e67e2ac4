//! Smooth weighted round robin (the NGINX interleaving scheme).

use crate::error::SwrrError;
use crate::model::{InstanceId, WeightVector};
use crate::scalar::Scalar;

pub const DEFAULT_RESOLUTION: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    id: InstanceId,
    effective: i64,
    current: i64,
}

/// Integer weights plus running counters. Entries are kept sorted by id so
/// ties resolve to the lowest id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwrrState {
    entries: Vec<Entry>,
    total: i64,
}

impl SwrrState {
    /// Quantizes real weights to integers out of `resolution`, flooring any
    /// positive weight to at least one, and zeroes the counters.
    pub fn rebuild<T: Scalar>(weights: &WeightVector<T>, resolution: u32) -> Result<Self, SwrrError> {
        if weights.is_empty() {
            return Err(SwrrError::EmptyWeights);
        }
        if (resolution as usize) < weights.len() {
            return Err(SwrrError::ResolutionTooSmall { resolution, instances: weights.len() });
        }
        let res = T::from_u32(resolution).unwrap();
        let entries: Vec<Entry> = weights
            .iter()
            .map(|(id, w)| {
                let mut effective = (w * res).round().to_i64().unwrap_or(0).max(0);
                if w > T::zero() && effective == 0 {
                    effective = 1;
                }
                Entry { id, effective, current: 0 }
            })
            .collect();
        Ok(Self::from_entries(entries))
    }

    /// Builds a state from integer weights directly.
    pub fn from_integer_weights<I: IntoIterator<Item = (InstanceId, u32)>>(weights: I) -> Self {
        let mut entries: Vec<Entry> =
            weights.into_iter().map(|(id, w)| Entry { id, effective: w as i64, current: 0 }).collect();
        entries.sort_by_key(|e| e.id);
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<Entry>) -> Self {
        let total = entries.iter().map(|e| e.effective).sum();
        Self { entries, total }
    }

    pub fn select(&mut self) -> Result<InstanceId, SwrrError> {
        if self.total <= 0 {
            return Err(SwrrError::AllZero);
        }
        let mut best = 0usize;
        for i in 0..self.entries.len() {
            let e = &mut self.entries[i];
            e.current += e.effective;
            if e.current > self.entries[best].current {
                best = i;
            }
        }
        self.entries[best].current -= self.total;
        Ok(self.entries[best].id)
    }

    pub fn effective_weight(&self, id: InstanceId) -> u32 {
        self.entries.iter().find(|e| e.id == id).map_or(0, |e| e.effective as u32)
    }

    /// Length of one full cycle, `Σ effective_weight`.
    pub fn cycle_len(&self) -> u64 {
        self.total.max(0) as u64
    }

    pub fn current_sum(&self) -> i64 {
        self.entries.iter().map(|e| e.current).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total <= 0
    }
}
