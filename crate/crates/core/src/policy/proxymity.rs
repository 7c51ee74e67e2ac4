//! Proximity routing baseline: static blend of uniform and nearest-instance
//! weights, recomputed only on placement changes.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cooldown, InstanceView, RoutingPolicy};
use crate::error::PolicyError;
use crate::model::{InstanceId, LbId, NodeId, RequestRecord, WeightVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyMityConfig<T> {
    /// 0 spreads traffic evenly, 1 sends everything to the closest instance.
    pub alpha: T,
}

impl<T: Scalar> ProxyMityConfig<T> {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.alpha >= T::zero() && self.alpha <= T::one()) {
            return Err(PolicyError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// `w_m = (1 − α)/M + α·[m is nearest]`, nearest ties going to the lowest id.
pub fn proxymity_weights<T: Scalar>(rtts: &BTreeMap<InstanceId, T>, alpha: T) -> Result<WeightVector<T>, PolicyError> {
    let nearest = rtts
        .iter()
        .fold(None, |best: Option<(InstanceId, T)>, (&m, &r)| match best {
            Some((_, br)) if br <= r => best,
            _ => Some((m, r)),
        })
        .ok_or(PolicyError::EmptyInstanceSet)?
        .0;
    let base = (T::one() - alpha) / T::from_usize(rtts.len()).unwrap();
    Ok(WeightVector::from_raw(rtts.keys().map(|&m| (m, if m == nearest { base + alpha } else { base }))))
}

#[derive(Debug, Clone)]
pub struct ProxyMity<T> {
    lb: LbId,
    alpha: T,
    view: InstanceView<T>,
    weights: WeightVector<T>,
    cumulative: Vec<(InstanceId, T)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ProxyMity<T> {
    pub fn new(
        lb: LbId,
        config: ProxyMityConfig<T>,
        view: InstanceView<T>,
        rng: ChaCha8Rng,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut s = Self { lb, alpha: config.alpha, view, weights: WeightVector::empty(), cumulative: Vec::new(), rng };
        s.recompute();
        Ok(s)
    }

    fn recompute(&mut self) {
        let rtts: BTreeMap<_, _> = self.view.rtts().collect();
        self.weights = proxymity_weights(&rtts, self.alpha).unwrap_or_default();
        let mut acc = T::zero();
        self.cumulative = self
            .weights
            .iter()
            .filter(|&(_, w)| w > T::zero())
            .map(|(m, w)| {
                acc = acc + w;
                (m, acc)
            })
            .collect();
    }

    pub fn weights(&self) -> &WeightVector<T> {
        &self.weights
    }
}

impl<T: Scalar> RoutingPolicy<T> for ProxyMity<T> {
    fn lb(&self) -> LbId {
        self.lb
    }

    fn route(&mut self, _now: T) -> Result<InstanceId, PolicyError> {
        let &(last, total) = self.cumulative.last().ok_or(PolicyError::NoInstances(self.lb))?;
        let u = T::lit(self.rng.random::<f64>()) * total;
        Ok(self.cumulative.iter().find(|&&(_, c)| u < c).map_or(last, |e| e.0))
    }

    fn record_outcome(&mut self, _record: &RequestRecord<T>, _now: T) -> Option<Cooldown<T>> {
        None
    }

    fn maintenance_step(&mut self, _now: T) {}

    fn update_rtt_view(&mut self, _view: &BTreeMap<InstanceId, T>) {
        // weights stay fixed between placement changes
    }

    fn on_instance_added(&mut self, m: InstanceId, node: NodeId, rtt_ms: T, _now: T) {
        self.view.insert(m, node, rtt_ms);
        self.recompute();
    }

    fn on_instance_removed(&mut self, m: InstanceId) {
        if self.view.remove(m) {
            self.recompute();
        }
    }

    fn effective_weights(&self) -> WeightVector<T> {
        self.weights.clone()
    }
}
