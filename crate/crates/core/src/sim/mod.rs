//! Deterministic discrete-event simulation of clients, load balancers and
//! single-server instances over an RTT matrix.
//!
//! A request is routed by its client's load balancer at send time, crosses
//! half the round trip to its instance, queues FIFO, and its outcome reaches
//! the load balancer after the other half. Nothing times out; sends stop at
//! `duration` and the queue then drains.

pub mod rng;
pub mod service;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::PolicyError;
use crate::model::{ClientId, InstanceId, LbId, NodeId, PlacementKind, RequestRecord, WeightVector};
use crate::policy::{Cooldown, DecSarsa, InstanceView, PoolAudit, ProxyMity, QEdgeProxy, RoutingPolicy};
use crate::scenario::{RemovalMode, Scenario, ScenarioEvent, StrategySpec};
use rng::{stream, Stream};
use service::{success_fraction, InstanceRuntime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientInfo {
    pub id: ClientId,
    pub lb: LbId,
    pub active_from_ms: f64,
    pub period_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceInfo {
    pub id: InstanceId,
    pub node: NodeId,
    pub added_ms: f64,
    pub removed_ms: Option<f64>,
    pub served: u64,
}

impl InstanceInfo {
    pub fn active_at(&self, t: f64) -> bool {
        self.added_ms <= t && self.removed_ms.is_none_or(|r| t < r)
    }
}

/// One load balancer's state at a metrics tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub time_ms: f64,
    pub lb: LbId,
    pub weights: WeightVector<f64>,
    /// Oracle success probability of every active instance this LB knows.
    pub mu: BTreeMap<InstanceId, f64>,
    pub epsilon: Option<f64>,
}

/// Pool state of one load balancer right after its decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceAudit {
    pub time_ms: f64,
    pub lb: LbId,
    pub pools: PoolAudit<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoggedEvent {
    ClientsAdded {
        clients: Vec<(ClientId, LbId)>,
    },
    InstanceAdded {
        instance: InstanceId,
        node: NodeId,
    },
    InstanceRemoved {
        instance: InstanceId,
        node: NodeId,
    },
    /// A placement change passed on to one load balancer.
    PlacementNotice {
        lb: LbId,
        instance: InstanceId,
        kind: PlacementKind,
    },
    Cooldown(Cooldown<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time_ms: f64,
    pub event: LoggedEvent,
}

/// A completed request handed to a load balancer's policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub time_ms: f64,
    pub lb: LbId,
    pub request: u64,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub scenario: Scenario,
    /// Indexed by request id, in send order.
    pub records: Vec<RequestRecord<f64>>,
    pub clients: Vec<ClientInfo>,
    pub instances: Vec<InstanceInfo>,
    pub snapshots: Vec<StepSnapshot>,
    /// Filled only for policies that expose their pools.
    pub audits: Vec<MaintenanceAudit>,
    pub cooldowns: Vec<Cooldown<f64>>,
    pub log: Vec<LogEntry>,
    pub deliveries: Vec<Delivery>,
    pub probe_times_ms: Vec<f64>,
    pub maintenance_times_ms: Vec<f64>,
}

impl SimulationTrace {
    pub fn n_lbs(&self) -> usize {
        self.scenario.topology.n_nodes()
    }

    /// Snapshots grouped by metrics tick, in time order.
    pub fn steps(&self) -> Vec<&[StepSnapshot]> {
        self.snapshots.chunk_by(|a, b| a.time_ms == b.time_ms).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Completion { req: u64, generation: u32 },
    Arrival { req: u64 },
    Send { client: u32 },
    Probe,
    Maintenance { lb: u32 },
    Placement { idx: usize },
    ClientChange { idx: usize },
    Metrics,
}

impl Ev {
    fn rank(&self) -> u8 {
        match self {
            Ev::Completion { .. } => 0,
            Ev::Arrival { .. } => 1,
            Ev::Send { .. } => 2,
            Ev::Probe => 3,
            Ev::Maintenance { .. } => 4,
            Ev::Placement { .. } => 5,
            Ev::ClientChange { .. } => 6,
            Ev::Metrics => 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    rank: u8,
    entity: u32,
    seq: u64,
    ev: Ev,
}

impl Scheduled {
    fn key_cmp(&self, o: &Self) -> Ordering {
        self.time
            .total_cmp(&o.time)
            .then(self.rank.cmp(&o.rank))
            .then(self.entity.cmp(&o.entity))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        self.key_cmp(o) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, o: &Self) -> Ordering {
        o.key_cmp(self)
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, entity: u32, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled { time, rank: ev.rank(), entity, seq: self.seq, ev });
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop()
    }
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    client: ClientId,
    lb: LbId,
    instance: InstanceId,
    send: f64,
    net: f64,
    proc: f64,
    generation: u32,
}

struct ClientRuntime {
    info: ClientInfo,
    rng: ChaCha8Rng,
}

struct Engine<'a> {
    sc: &'a Scenario,
    queue: EventQueue,
    policies: Vec<Box<dyn RoutingPolicy<f64>>>,
    /// Instances each load balancer has been told about and not told to forget.
    known: Vec<BTreeSet<InstanceId>>,
    instances: Vec<InstanceRuntime>,
    instance_info: Vec<InstanceInfo>,
    instance_rngs: Vec<ChaCha8Rng>,
    clients: Vec<ClientRuntime>,
    in_flight: BTreeMap<u64, InFlight>,
    records: Vec<Option<RequestRecord<f64>>>,
    snapshots: Vec<StepSnapshot>,
    audits: Vec<MaintenanceAudit>,
    cooldowns: Vec<Cooldown<f64>>,
    log: Vec<LogEntry>,
    deliveries: Vec<Delivery>,
    probe_times: Vec<f64>,
    maintenance_times: Vec<f64>,
    mu_rng: ChaCha8Rng,
}

/// Runs a resolved scenario to completion.
pub fn run(sc: &Scenario) -> Result<SimulationTrace, PolicyError> {
    let mut e = Engine::new(sc)?;
    e.schedule_initial();
    while let Some(s) = e.queue.pop() {
        e.dispatch(s);
    }
    Ok(e.finish())
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, PolicyError> {
        let n = sc.topology.n_nodes();
        let tau = sc.qos.tau_ms;
        let instances: Vec<InstanceRuntime> = sc
            .instance_nodes
            .iter()
            .enumerate()
            .map(|(i, &node)| InstanceRuntime::new(InstanceId(i as u32), node, &sc.service))
            .collect();
        let instance_info = instances
            .iter()
            .map(|i| InstanceInfo { id: i.id, node: i.node, added_ms: 0.0, removed_ms: None, served: 0 })
            .collect();
        let instance_rngs = (0..instances.len()).map(|i| stream(sc.seed, Stream::Instance, i as u64)).collect();

        let mut known = Vec::with_capacity(n);
        let mut policies: Vec<Box<dyn RoutingPolicy<f64>>> = Vec::with_capacity(n);
        for k in 0..n {
            let lb = LbId(k as u32);
            let reach: Vec<(InstanceId, NodeId, f64)> = instances
                .iter()
                .map(|i| (i.id, i.node, sc.topology.rtt(lb.node(), i.node)))
                .filter(|&(_, _, r)| r <= tau)
                .collect();
            known.push(reach.iter().map(|e| e.0).collect());
            let view = InstanceView::new(reach);
            let rng = stream(sc.seed, Stream::Policy, k as u64);
            policies.push(match &sc.strategy {
                StrategySpec::Qedgeproxy(c) => Box::new(QEdgeProxy::new(lb, sc.qos, *c, view)?),
                StrategySpec::Proxymity(c) => Box::new(ProxyMity::new(lb, *c, view, rng)?),
                StrategySpec::DecSarsa(c) => Box::new(DecSarsa::new(lb, sc.qos, *c, view, rng)?),
            });
        }

        Ok(Self {
            sc,
            queue: EventQueue::default(),
            policies,
            known,
            instances,
            instance_info,
            instance_rngs,
            clients: Vec::new(),
            in_flight: BTreeMap::new(),
            records: Vec::new(),
            snapshots: Vec::new(),
            audits: Vec::new(),
            cooldowns: Vec::new(),
            log: Vec::new(),
            deliveries: Vec::new(),
            probe_times: Vec::new(),
            maintenance_times: Vec::new(),
            mu_rng: stream(sc.seed, Stream::TrueMu, 0),
        })
    }

    fn maintenance_period_ms(&self) -> f64 {
        match &self.sc.strategy {
            StrategySpec::Qedgeproxy(c) => c.decision_period_s * 1000.0,
            _ => self.sc.engine.decision_period_s * 1000.0,
        }
    }

    fn schedule_initial(&mut self) {
        for k in 0..self.sc.topology.n_nodes() {
            for _ in 0..self.sc.clients_per_lb {
                self.add_client(LbId(k as u32), 0.0);
            }
        }
        self.queue.push(0.0, 0, Ev::Probe);
        // load balancers start their decision loops independently
        let period = self.maintenance_period_ms();
        for k in 0..self.policies.len() {
            let phase = stream(self.sc.seed, Stream::Phase, k as u64).random::<f64>() * period;
            if phase < self.sc.duration_ms {
                self.queue.push(phase, k as u32, Ev::Maintenance { lb: k as u32 });
            }
        }
        self.queue.push(0.0, 0, Ev::Metrics);
        for (idx, te) in self.sc.events.iter().enumerate() {
            let ev = match te.event {
                ScenarioEvent::AddClients { .. } => Ev::ClientChange { idx },
                _ => Ev::Placement { idx },
            };
            self.queue.push(te.time_ms, idx as u32, ev);
        }
    }

    fn add_client(&mut self, lb: LbId, now: f64) -> ClientId {
        let id = ClientId(self.clients.len() as u32);
        let mut rng = stream(self.sc.seed, Stream::Client, id.0 as u64);
        let period = self.sc.client_period_ms;
        let first = now + rng.random::<f64>() * period;
        self.clients.push(ClientRuntime { info: ClientInfo { id, lb, active_from_ms: now, period_ms: period }, rng });
        if first < self.sc.duration_ms {
            self.queue.push(first, id.0, Ev::Send { client: id.0 });
        }
        id
    }

    /// Re-arms a periodic tick while it stays inside `[0, duration)`.
    fn rearm(&mut self, now: f64, period: f64, ev: Ev) {
        let next = now + period;
        if next < self.sc.duration_ms {
            self.queue.push(next, 0, ev);
        }
    }

    fn dispatch(&mut self, s: Scheduled) {
        let now = s.time;
        match s.ev {
            Ev::Send { client } => self.on_send(client, now),
            Ev::Arrival { req } => self.on_arrival(req, now),
            Ev::Completion { req, generation } => self.on_completion(req, generation, now),
            Ev::Probe => {
                self.on_probe(now);
                self.rearm(now, self.sc.engine.probe_period_s * 1000.0, Ev::Probe);
            }
            Ev::Maintenance { lb } => {
                if lb == 0 {
                    self.maintenance_times.push(now);
                }
                self.policies[lb as usize].maintenance_step(now);
                if let Some(pools) = self.policies[lb as usize].pool_audit() {
                    self.audits.push(MaintenanceAudit { time_ms: now, lb: LbId(lb), pools });
                }
                let next = now + self.maintenance_period_ms();
                if next < self.sc.duration_ms {
                    self.queue.push(next, lb, Ev::Maintenance { lb });
                }
            }
            Ev::Metrics => {
                self.on_metrics(now);
                self.rearm(now, self.sc.engine.decision_period_s * 1000.0, Ev::Metrics);
            }
            Ev::Placement { idx } => self.on_placement(idx, now),
            Ev::ClientChange { idx } => {
                if let ScenarioEvent::AddClients { lbs } = &self.sc.events[idx].event {
                    let added = lbs.iter().map(|&lb| (self.add_client(lb, now), lb)).collect();
                    self.log.push(LogEntry { time_ms: now, event: LoggedEvent::ClientsAdded { clients: added } });
                }
            }
        }
    }

    fn on_send(&mut self, client: u32, now: f64) {
        let c = &mut self.clients[client as usize];
        let (lb, period) = (c.info.lb, c.info.period_ms);
        let jitter = self.sc.engine.jitter;
        let factor = if jitter > 0.0 { 1.0 + jitter * (2.0 * c.rng.random::<f64>() - 1.0) } else { 1.0 };
        if now + period < self.sc.duration_ms {
            self.queue.push(now + period, client, Ev::Send { client });
        }

        let id = self.records.len() as u64;
        self.records.push(None);
        let tau = self.sc.qos.tau_ms;
        match self.policies[lb.index()].route(now) {
            Ok(m) => {
                let node = self.instances[m.index()].node;
                let net = self.sc.topology.rtt(lb.node(), node) * factor;
                self.in_flight.insert(
                    id,
                    InFlight { client: ClientId(client), lb, instance: m, send: now, net, proc: 0.0, generation: 0 },
                );
                self.queue.push(now + net / 2.0, m.0, Ev::Arrival { req: id });
            }
            Err(_) => {
                // nothing to route to: an immediate failure
                let rec = RequestRecord::new(id, ClientId(client), lb, None, now, 0.0, f64::INFINITY, tau);
                self.deliver(rec, now);
            }
        }
    }

    fn on_arrival(&mut self, req: u64, now: f64) {
        let f = self.in_flight.get_mut(&req).expect("arrival of a known request");
        let m = f.instance.index();
        let fail = self.instance_info[m].removed_ms.is_some() && self.sc.engine.removal_mode == RemovalMode::Fail;
        let done = if fail {
            f.proc = f64::INFINITY;
            now
        } else {
            let (proc, depart) = self.instances[m].sample_processing(req, now, &mut self.instance_rngs[m]);
            f.proc = proc;
            depart
        };
        self.queue.push(done + f.net / 2.0, f.lb.0, Ev::Completion { req, generation: f.generation });
    }

    fn on_completion(&mut self, req: u64, generation: u32, now: f64) {
        match self.in_flight.get(&req) {
            Some(f) if f.generation == generation => {}
            _ => return,
        }
        let f = self.in_flight.remove(&req).expect("checked above");
        let rec = RequestRecord::new(req, f.client, f.lb, Some(f.instance), f.send, f.net, f.proc, self.sc.qos.tau_ms);
        self.deliver(rec, now);
    }

    fn deliver(&mut self, rec: RequestRecord<f64>, now: f64) {
        let lb = rec.lb;
        self.deliveries.push(Delivery { time_ms: now, lb, request: rec.id });
        if let Some(cd) = self.policies[lb.index()].record_outcome(&rec, now) {
            self.cooldowns.push(cd);
            self.log.push(LogEntry { time_ms: now, event: LoggedEvent::Cooldown(cd) });
        }
        let slot = rec.id as usize;
        self.records[slot] = Some(rec);
    }

    fn on_probe(&mut self, now: f64) {
        self.probe_times.push(now);
        for (k, p) in self.policies.iter_mut().enumerate() {
            let from = LbId(k as u32).node();
            let view: BTreeMap<InstanceId, f64> = self.known[k]
                .iter()
                .map(|&m| (m, self.sc.topology.rtt(from, self.instances[m.index()].node)))
                .collect();
            p.update_rtt_view(&view);
        }
    }

    fn on_placement(&mut self, idx: usize, now: f64) {
        match self.sc.events[idx].event {
            ScenarioEvent::RemoveInstance { instance } => self.remove_instance(instance, now),
            ScenarioEvent::AddInstance { node } => self.add_instance(node, now),
            ScenarioEvent::AddClients { .. } => unreachable!("scheduled as a client change"),
        }
    }

    fn remove_instance(&mut self, m: InstanceId, now: f64) {
        let node = self.instances[m.index()].node;
        self.instance_info[m.index()].removed_ms = Some(now);
        self.log.push(LogEntry { time_ms: now, event: LoggedEvent::InstanceRemoved { instance: m, node } });
        for k in 0..self.policies.len() {
            if self.known[k].remove(&m) {
                self.policies[k].on_instance_removed(m);
                self.log.push(LogEntry {
                    time_ms: now,
                    event: LoggedEvent::PlacementNotice {
                        lb: LbId(k as u32),
                        instance: m,
                        kind: PlacementKind::Removed,
                    },
                });
            }
        }
        if self.sc.engine.removal_mode == RemovalMode::Fail {
            // requests already queued there are cut off now
            let inst = &mut self.instances[m.index()];
            inst.prune(now);
            for job in inst.jobs.drain(..) {
                if let Some(f) = self.in_flight.get_mut(&job.request) {
                    f.proc = f64::INFINITY;
                    f.generation += 1;
                    self.queue.push(
                        now + f.net / 2.0,
                        f.lb.0,
                        Ev::Completion { req: job.request, generation: f.generation },
                    );
                }
            }
            inst.busy_until = now;
        }
    }

    fn add_instance(&mut self, node: NodeId, now: f64) {
        let m = InstanceId(self.instances.len() as u32);
        self.instances.push(InstanceRuntime::new(m, node, &self.sc.service));
        self.instance_info.push(InstanceInfo { id: m, node, added_ms: now, removed_ms: None, served: 0 });
        self.instance_rngs.push(stream(self.sc.seed, Stream::Instance, m.0 as u64));
        self.log.push(LogEntry { time_ms: now, event: LoggedEvent::InstanceAdded { instance: m, node } });
        for k in 0..self.policies.len() {
            let rtt = self.sc.topology.rtt(LbId(k as u32).node(), node);
            if rtt <= self.sc.qos.tau_ms {
                self.known[k].insert(m);
                self.policies[k].on_instance_added(m, node, rtt, now);
                self.log.push(LogEntry {
                    time_ms: now,
                    event: LoggedEvent::PlacementNotice { lb: LbId(k as u32), instance: m, kind: PlacementKind::Added },
                });
            }
        }
    }

    fn on_metrics(&mut self, now: f64) {
        let tau = self.sc.qos.tau_ms;
        let draws = self.sc.engine.mc_draws;
        // one set of draws per instance, shared by every load balancer
        let mut latency: BTreeMap<InstanceId, Vec<f64>> = BTreeMap::new();
        for (inst, info) in self.instances.iter().zip(&self.instance_info) {
            if info.removed_ms.is_some() {
                continue;
            }
            let mut d = inst.latency_draws(now, draws, tau, &mut self.mu_rng);
            d.sort_by(f64::total_cmp);
            latency.insert(inst.id, d);
        }
        for (k, p) in self.policies.iter().enumerate() {
            let from = LbId(k as u32).node();
            let mu = self.known[k]
                .iter()
                .map(|&m| {
                    let rtt = self.sc.topology.rtt(from, self.instances[m.index()].node);
                    (m, success_fraction(&latency[&m], rtt, tau))
                })
                .collect();
            self.snapshots.push(StepSnapshot {
                time_ms: now,
                lb: LbId(k as u32),
                weights: p.effective_weights(),
                mu,
                epsilon: p.epsilon(),
            });
        }
    }

    fn finish(mut self) -> SimulationTrace {
        assert!(self.in_flight.is_empty(), "queue drained with requests in flight");
        for (info, inst) in self.instance_info.iter_mut().zip(&self.instances) {
            info.served = inst.served;
        }
        SimulationTrace {
            scenario: self.sc.clone(),
            records: self.records.into_iter().map(|r| r.expect("every request completes")).collect(),
            clients: self.clients.into_iter().map(|c| c.info).collect(),
            instances: self.instance_info,
            snapshots: self.snapshots,
            audits: self.audits,
            cooldowns: self.cooldowns,
            log: self.log,
            deliveries: self.deliveries,
            probe_times_ms: self.probe_times,
            maintenance_times_ms: self.maintenance_times,
        }
    }
}
