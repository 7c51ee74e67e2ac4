//! QoS-aware load balancing across a latency-heterogeneous edge/fog
//! continuum, and a discrete-event simulator to evaluate it.
//!
//! The estimator, scheduler and policy modules are generic over the
//! floating point type ([`scalar::Scalar`], `f32` or `f64`). The simulator,
//! scenario and metrics layers work in `f64`; the aliases below name the
//! `f64` instantiations.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod swrr;

pub use error::{EstimatorError, MetricsError, ModelError, PolicyError, ScenarioError, SwrrError};
pub use model::{ClientId, InstanceId, LbId, NodeId};
pub use policy::RoutingPolicy;
pub use scalar::Scalar;
pub use scenario::{Scenario, ScenarioSpec};
pub use sim::{run, SimulationTrace};

pub type Topology = model::Topology<f64>;
pub type QosRequirements = model::QosRequirements<f64>;
pub type WeightVector = model::WeightVector<f64>;
pub type RequestRecord = model::RequestRecord<f64>;
pub type ObservationWindow = estimator::ObservationWindow<f64>;
pub type QEdgeProxy = policy::QEdgeProxy<f64>;
pub type ProxyMity = policy::ProxyMity<f64>;
pub type DecSarsa = policy::DecSarsa<f64>;
pub type PolicyConfig = policy::PolicyConfig<f64>;
