//! Scenario documents (TOML), topology generation/loading and greedy
//! k-center placement.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::model::{InstanceId, LbId, NodeId, QosRequirements, Topology};
use crate::policy::{PolicyConfig, ProxyMityConfig, SarsaConfig};
use crate::scalar::Scalar;
use crate::sim::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub qos: QosRequirements<f64>,
    pub topology: TopologySource,
    pub placement: PlacementSpec,
    pub clients: ClientSpec,
    #[serde(default)]
    pub service: ServiceTimeModel,
    pub strategy: StrategySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    Generated(GeneratorParams),
    /// CSV: header row of node ids, then the symmetric matrix in ms.
    Matrix {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub n_nodes: usize,
    /// Side of the square nodes are scattered in.
    pub box_size: f64,
    pub ms_per_unit: f64,
    pub base_ms: f64,
    /// Defaults to the scenario seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        // off-diagonal RTTs land in roughly [5, 150] ms
        Self { n_nodes: 30, box_size: 1.0, ms_per_unit: 100.0, base_ms: 5.0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementSpec {
    KCenter {
        k: usize,
        #[serde(default)]
        start: u32,
    },
    Explicit {
        nodes: Vec<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub per_lb: u32,
    pub rate_per_s: f64,
}

/// Lognormal service time per request; `cv = 0` is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceTimeModel {
    pub mean_ms: f64,
    pub cv: f64,
}

impl Default for ServiceTimeModel {
    fn default() -> Self {
        Self { mean_ms: 6.0, cv: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Qedgeproxy(#[serde(default)] PolicyConfig<f64>),
    Proxymity(ProxyMityConfig<f64>),
    DecSarsa(#[serde(default)] SarsaConfig<f64>),
}

impl StrategySpec {
    /// Parses `qedgeproxy`, `dec_sarsa` or `proxymity:<alpha>`.
    pub fn parse_id(id: &str) -> Result<Self, ScenarioError> {
        let id = id.trim();
        match id.split_once(':') {
            None if id == "qedgeproxy" => Ok(Self::Qedgeproxy(PolicyConfig::default())),
            None if id == "dec_sarsa" => Ok(Self::DecSarsa(SarsaConfig::default())),
            Some(("proxymity", a)) => {
                let alpha: f64 =
                    a.parse().map_err(|_| ScenarioError::invalid("strategy", format!("bad alpha in `{id}`")))?;
                let cfg = ProxyMityConfig { alpha };
                cfg.validate().map_err(|e| ScenarioError::invalid("strategy.alpha", e.to_string()))?;
                Ok(Self::Proxymity(cfg))
            }
            _ => Err(ScenarioError::invalid("strategy", format!("unknown strategy `{id}`"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Qedgeproxy(_) => "qedgeproxy".into(),
            Self::Proxymity(c) => format!("proxymity:{:.1}", c.alpha),
            Self::DecSarsa(_) => "dec_sarsa".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// Adds `count` clients spread round-robin over `lbs`, or over `n_lbs`
    /// load balancers drawn at random.
    AddClients {
        at_s: f64,
        count: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_lbs: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lbs: Option<Vec<u32>>,
    },
    RemoveInstance {
        at_s: f64,
        instance: u32,
    },
    AddInstance {
        at_s: f64,
        node: u32,
    },
}

impl EventSpec {
    pub fn at_s(&self) -> f64 {
        match *self {
            Self::AddClients { at_s, .. } | Self::RemoveInstance { at_s, .. } | Self::AddInstance { at_s, .. } => at_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalMode {
    /// In-flight requests at a removed instance still complete.
    Drain,
    /// In-flight requests at a removed instance fail.
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub probe_period_s: f64,
    /// Period of maintenance ticks for baselines and of metric snapshots.
    pub decision_period_s: f64,
    /// Monte-Carlo draws per (LB, instance, step) for the true success probability.
    pub mc_draws: usize,
    pub removal_mode: RemovalMode,
    /// Multiplicative network jitter amplitude; 0 keeps RTTs deterministic.
    pub jitter: f64,
    pub rolling_step_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            probe_period_s: 5.0,
            decision_period_s: 1.0,
            mc_draws: 1000,
            removal_mode: RemovalMode::Drain,
            jitter: 0.0,
            rolling_step_s: 1.0,
        }
    }
}

/// A timed scenario event with its random choices resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioEvent {
    AddClients { lbs: Vec<LbId> },
    RemoveInstance { instance: InstanceId },
    AddInstance { node: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub time_ms: f64,
    pub event: ScenarioEvent,
}

/// Validated, fully resolved scenario ready for the engine.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: f64,
    pub qos: QosRequirements<f64>,
    pub topology: Topology<f64>,
    pub instance_nodes: Vec<NodeId>,
    pub clients_per_lb: u32,
    pub client_period_ms: f64,
    pub service: ServiceTimeModel,
    pub strategy: StrategySpec,
    pub events: Vec<TimedEvent>,
    pub engine: EngineConfig,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let spec: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Range and cross-field checks; errors name the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn inv(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
            ScenarioError::invalid(field, reason)
        }
        if !(self.duration_s > 0.0) {
            return Err(inv("duration_s", "must be positive"));
        }
        if !(self.qos.tau_ms > 0.0) {
            return Err(inv("qos.tau_ms", "must be positive"));
        }
        if !(self.qos.rho > 0.0 && self.qos.rho <= 1.0) {
            return Err(inv("qos.rho", format!("{} outside (0, 1]", self.qos.rho)));
        }
        if !(self.qos.window_s > 0.0) {
            return Err(inv("qos.window_s", "must be positive"));
        }
        if let TopologySource::Generated(g) = &self.topology {
            if g.n_nodes < 2 {
                return Err(inv("topology.n_nodes", "need at least 2 nodes"));
            }
            if !(g.box_size > 0.0) || !(g.ms_per_unit >= 0.0) || !(g.base_ms >= 0.0) {
                return Err(inv("topology", "box_size must be positive, scales non-negative"));
            }
        }
        match &self.placement {
            PlacementSpec::KCenter { k, .. } => {
                if *k < 1 {
                    return Err(inv("placement.k", "must be at least 1"));
                }
                if let TopologySource::Generated(g) = &self.topology {
                    if *k > g.n_nodes {
                        return Err(inv("placement.k", format!("{k} exceeds {} nodes", g.n_nodes)));
                    }
                }
            }
            PlacementSpec::Explicit { nodes } if nodes.is_empty() => {
                return Err(inv("placement.nodes", "must not be empty"));
            }
            PlacementSpec::Explicit { .. } => {}
        }
        if !(self.clients.rate_per_s > 0.0) {
            return Err(inv("clients.rate_per_s", "must be positive"));
        }
        if !(self.service.mean_ms > 0.0) {
            return Err(inv("service.mean_ms", "must be positive"));
        }
        if !(self.service.cv >= 0.0) {
            return Err(inv("service.cv", "must be non-negative"));
        }
        match &self.strategy {
            StrategySpec::Qedgeproxy(c) => c.validate(),
            StrategySpec::Proxymity(c) => c.validate(),
            StrategySpec::DecSarsa(c) => c.validate(),
        }
        .map_err(|e| inv("strategy", e.to_string()))?;
        let e = &self.engine;
        if !(e.probe_period_s > 0.0) {
            return Err(inv("engine.probe_period_s", "must be positive"));
        }
        if !(e.decision_period_s > 0.0) {
            return Err(inv("engine.decision_period_s", "must be positive"));
        }
        if !(e.rolling_step_s > 0.0) {
            return Err(inv("engine.rolling_step_s", "must be positive"));
        }
        if !(0.0..1.0).contains(&e.jitter) {
            return Err(inv("engine.jitter", "must lie in [0, 1)"));
        }
        for (i, ev) in self.events.iter().enumerate() {
            let t = ev.at_s();
            if !(0.0..=self.duration_s).contains(&t) {
                return Err(inv(format!("events[{i}].at_s"), format!("{t} outside [0, duration_s]")));
            }
            if let EventSpec::AddClients { n_lbs, lbs, count, .. } = ev {
                if n_lbs.is_some() == lbs.is_some() {
                    return Err(inv(format!("events[{i}]"), "give exactly one of `n_lbs` or `lbs`"));
                }
                if *count == 0 || n_lbs == &Some(0) || lbs.as_ref().is_some_and(|l| l.is_empty()) {
                    return Err(inv(format!("events[{i}]"), "must add at least one client to one LB"));
                }
            }
        }
        Ok(())
    }

    pub fn strategy_id(&self) -> String {
        self.strategy.id()
    }

    /// Resolves files and random choices. Relative matrix paths are taken
    /// from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        self.validate()?;
        let topology = match &self.topology {
            TopologySource::Generated(g) => {
                let mut rng = stream(g.seed.unwrap_or(self.seed), Stream::Topology, 0);
                generate_topology(g, &mut rng)
            }
            TopologySource::Matrix { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| ScenarioError::Matrix(format!("{}: {e}", full.display())))?;
                parse_matrix_csv(&text)?
            }
        };
        let n = topology.n_nodes();
        let instance_nodes = match &self.placement {
            PlacementSpec::KCenter { k, start } => {
                if *k > n || *start as usize >= n {
                    return Err(ScenarioError::invalid("placement", format!("k/start exceed {n} nodes")));
                }
                k_center_placement(&topology, *k, NodeId(*start))
            }
            PlacementSpec::Explicit { nodes } => {
                if let Some(bad) = nodes.iter().find(|&&x| x as usize >= n) {
                    return Err(ScenarioError::invalid("placement.nodes", format!("node {bad} out of range")));
                }
                nodes.iter().map(|&x| NodeId(x)).collect()
            }
        };

        let mut rng = stream(self.seed, Stream::Events, 0);
        let mut n_instances = instance_nodes.len() as u32;
        let mut removed = std::collections::BTreeSet::new();
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by(|&a, &b| self.events[a].at_s().total_cmp(&self.events[b].at_s()));
        let mut events = Vec::with_capacity(self.events.len());
        for i in order {
            let field = format!("events[{i}]");
            let event = match &self.events[i] {
                EventSpec::AddClients { count, n_lbs, lbs, .. } => {
                    let chosen: Vec<LbId> = match (n_lbs, lbs) {
                        (_, Some(l)) => {
                            if let Some(bad) = l.iter().find(|&&x| x as usize >= n) {
                                return Err(ScenarioError::invalid(field, format!("lb {bad} out of range")));
                            }
                            l.iter().map(|&x| LbId(x)).collect()
                        }
                        (Some(k), None) => {
                            if *k > n {
                                return Err(ScenarioError::invalid(field, format!("n_lbs {k} exceeds {n}")));
                            }
                            let mut picked = rand::seq::index::sample(&mut rng, n, *k).into_vec();
                            picked.sort_unstable();
                            picked.into_iter().map(|x| LbId(x as u32)).collect()
                        }
                        (None, None) => unreachable!("validated"),
                    };
                    ScenarioEvent::AddClients { lbs: (0..*count as usize).map(|j| chosen[j % chosen.len()]).collect() }
                }
                EventSpec::RemoveInstance { instance, .. } => {
                    if *instance >= n_instances || !removed.insert(*instance) {
                        return Err(ScenarioError::invalid(
                            field,
                            format!("instance {instance} is not active at that time"),
                        ));
                    }
                    ScenarioEvent::RemoveInstance { instance: InstanceId(*instance) }
                }
                EventSpec::AddInstance { node, .. } => {
                    if *node as usize >= n {
                        return Err(ScenarioError::invalid(field, format!("node {node} out of range")));
                    }
                    n_instances += 1;
                    ScenarioEvent::AddInstance { node: NodeId(*node) }
                }
            };
            events.push(TimedEvent { time_ms: self.events[i].at_s() * 1000.0, event });
        }

        let mut strategy = self.strategy.clone();
        match &mut strategy {
            StrategySpec::Qedgeproxy(c) => c.idle_latency_ms = self.service.mean_ms,
            StrategySpec::DecSarsa(c) => c.idle_latency_ms = self.service.mean_ms,
            StrategySpec::Proxymity(_) => {}
        }

        Ok(Scenario {
            seed: self.seed,
            duration_ms: self.duration_s * 1000.0,
            qos: self.qos,
            topology,
            instance_nodes,
            clients_per_lb: self.clients.per_lb,
            client_period_ms: 1000.0 / self.clients.rate_per_s,
            service: self.service,
            strategy,
            events,
            engine: self.engine,
        })
    }
}

/// Scatters nodes uniformly in a square; `rtt = base + scale · distance` off
/// the diagonal.
pub fn generate_topology<T: Scalar, R: Rng>(params: &GeneratorParams, rng: &mut R) -> Topology<T> {
    let pts: Vec<(f64, f64)> = (0..params.n_nodes)
        .map(|_| (rng.random::<f64>() * params.box_size, rng.random::<f64>() * params.box_size))
        .collect();
    topology_from_points(&pts, params.base_ms, params.ms_per_unit)
}

pub fn topology_from_points<T: Scalar>(pts: &[(f64, f64)], base_ms: f64, ms_per_unit: f64) -> Topology<T> {
    let rows = pts
        .iter()
        .enumerate()
        .map(|(i, a)| {
            pts.iter()
                .enumerate()
                .map(
                    |(j, b)| {
                        if i == j {
                            T::zero()
                        } else {
                            T::lit(base_ms + ms_per_unit * (a.0 - b.0).hypot(a.1 - b.1))
                        }
                    },
                )
                .collect()
        })
        .collect();
    Topology::from_rows(rows).expect("generated matrix is symmetric")
}

/// Parses a latency matrix: header row of node ids, then one row per node.
pub fn parse_matrix_csv(text: &str) -> Result<Topology<f64>, ScenarioError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| ScenarioError::Matrix("empty file".into()))?;
    let n = header.split(',').count();
    let mut rows = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| ScenarioError::Matrix(format!("line {}: {e}", i + 2)))?;
        rows.push(row);
    }
    if rows.len() != n {
        return Err(ScenarioError::Matrix(format!("header names {n} nodes but {} rows follow", rows.len())));
    }
    Ok(Topology::from_rows(rows)?)
}

/// Greedy farthest-point k-center: start from `start`, then repeatedly add
/// the node farthest from the chosen centers (ties → lowest id).
pub fn k_center_placement<T: Scalar>(topology: &Topology<T>, k: usize, start: NodeId) -> Vec<NodeId> {
    let n = topology.n_nodes();
    let k = k.min(n);
    let mut centers = vec![start];
    let mut dist: Vec<T> = topology.row(start).to_vec();
    while centers.len() < k {
        let mut best = 0usize;
        for i in 1..n {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        let c = NodeId(best as u32);
        centers.push(c);
        for (d, &r) in dist.iter_mut().zip(topology.row(c)) {
            *d = d.min(r);
        }
    }
    centers
}

/// Largest distance from any node to its nearest center.
pub fn covering_radius<T: Scalar>(topology: &Topology<T>, centers: &[NodeId]) -> T {
    topology
        .nodes()
        .map(|v| centers.iter().map(|&c| topology.rtt(v, c)).fold(T::infinity(), T::min))
        .fold(T::zero(), T::max)
}
