//! Deterministic discrete-event simulation of a full deployment: a single
//! time-ordered queue, propagation-delayed message delivery with hop-limited
//! forwarding, entity ticks, station decisions, and per-flow metrics.
//!
//! Determinism is load-bearing: identical (scenario, seed) pairs produce
//! byte-identical traces. Everything iterates in address or key order, the
//! queue breaks time ties by an enqueue sequence number, and every noise
//! draw comes from a per-entity substream so adding one entity never shifts
//! another's randomness.

pub mod scenario;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, BTreeSet};
use std::net::Ipv6Addr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::graphroute::{self, Ephemeris, HandoverPlan};
use crate::irss::{
    self, triangulate, BearingFix, DecisionConfig, Environment, LocalizationEstimate, NoiseModel,
    Registry, ServiceDecision,
};
use crate::model::{
    fspl_db, link_budget, position_from_cm, position_to_cm, IrsnDescriptor, Obstacle, Position,
    RadioParams, SPEED_OF_LIGHT_M_S,
};
use crate::nodes::{FlowPhase, FlowState, IrsnOutput, IrsnState, ServerState, TxState};
use crate::wire::{
    Command, IrsMessage, IrssAdvertisement, IrssSolicitation, LocalizationQuery,
    LocalizationReport, Measurement, ScheduleEntry, ServiceConfirmation, ServiceRequest,
};

pub use scenario::{load_scenario, ConfigSpec, Entity, EntityKind, Flow, Scenario, SimError};
pub use trace::{Dir, FlowMetrics, Metrics, TraceRecord};

/// One-way flight time plus a fixed processing allowance, in microseconds.
pub fn delivery_delay(from: Position, to: Position, proc_delay_us: f64) -> f64 {
    from.distance(to) / SPEED_OF_LIGHT_M_S * 1e6 + proc_delay_us
}

// ============================================================================
// Events
// ============================================================================

/// A control-plane message in flight. `to` is the next hop, which is the
/// final destination unless the radio range forces relaying.
#[derive(Debug, Clone)]
pub struct Packet {
    pub src: Ipv6Addr,
    pub dst: Ipv6Addr,
    pub traffic_class: u8,
    pub flow_label: u32,
    pub hop_limit: u8,
    pub message: IrsMessage,
}

#[derive(Debug, Clone)]
enum EventKind {
    Deliver { packet: Packet, to: Ipv6Addr },
    Tick { entity: Ipv6Addr },
    MeasureLink { flow_label: u32 },
    EndService { flow_label: u32 },
}

#[derive(Debug)]
struct Event {
    time_us: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time_us == other.time_us && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_us, self.seq).cmp(&(other.time_us, other.seq))
    }
}

// ============================================================================
// Entities
// ============================================================================

#[derive(Debug)]
struct DiscoveryState {
    deadline_us: u64,
    candidates: BTreeMap<Ipv6Addr, Position>,
}

#[derive(Debug)]
struct TxEntity {
    state: TxState,
    discovery: BTreeMap<u32, DiscoveryState>,
}

#[derive(Debug)]
struct PendingRequest {
    tx_addr: Ipv6Addr,
    flow_label: u32,
    traffic_class: u8,
    request: ServiceRequest,
    /// Localization session this request is waiting on, and its result once
    /// the reports are in.
    session: Option<u32>,
    rx_estimate: Option<Position>,
}

#[derive(Debug)]
struct LocSession {
    flow_label: u32,
    error_bound_cm: u16,
    /// Anchor positions as the station believes them, in recruit order.
    anchors: Vec<(Ipv6Addr, Position)>,
    awaiting: BTreeSet<Ipv6Addr>,
    reports: BTreeMap<Ipv6Addr, Measurement>,
    target_true: Position,
    /// Past this, the session resolves with whatever reports arrived, so a
    /// silent anchor cannot stall the decision queue forever.
    deadline_us: u64,
}

#[derive(Debug)]
struct IrssEntity {
    position: Position,
    registry: Registry,
    /// Requests awaiting a decision, highest traffic class first, FIFO
    /// within a class.
    pending: BTreeMap<(Reverse<u8>, u64), PendingRequest>,
    arrivals: u64,
    sessions: BTreeMap<u32, LocSession>,
    next_session: u32,
    server_addr: Option<Ipv6Addr>,
    optimizer_version: u16,
}

#[derive(Debug)]
struct IrsnEntity {
    state: IrsnState,
    orbit: Option<Ephemeris>,
    fail_at_us: Option<u64>,
}

impl IrsnEntity {
    fn alive(&self, now_us: u64) -> bool {
        self.fail_at_us.map_or(true, |f| now_us < f)
    }

    fn true_position(&self, now_us: u64) -> Position {
        match &self.orbit {
            Some(e) => e.position_at(now_us),
            None => self.state.descriptor.position,
        }
    }
}

#[derive(Debug, Default)]
struct FlowRuntime {
    first_request_us: Option<u64>,
    /// Surfaces commanded for the current service, in chain order.
    commanded: Vec<Ipv6Addr>,
    service_end_us: Option<u64>,
    prev_serving: Vec<Ipv6Addr>,
}

// ============================================================================
// World
// ============================================================================

pub struct World {
    now_us: u64,
    until_us: u64,
    seed: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    cfg: ConfigSpec,
    radio: RadioParams,
    obstacles: Vec<Obstacle>,
    txs: BTreeMap<Ipv6Addr, TxEntity>,
    rxs: BTreeMap<Ipv6Addr, Position>,
    irsss: BTreeMap<Ipv6Addr, IrssEntity>,
    irsns: BTreeMap<Ipv6Addr, IrsnEntity>,
    servers: BTreeMap<Ipv6Addr, ServerState>,
    eves: BTreeMap<Ipv6Addr, Position>,
    flow_specs: BTreeMap<u32, Flow>,
    flow_runtime: BTreeMap<u32, FlowRuntime>,
    trace: Vec<TraceRecord>,
    metrics: Metrics,
    rngs: BTreeMap<(Ipv6Addr, u8), ChaCha12Rng>,
}

const RNG_MEASURE: u8 = 0;
const RNG_LOCALIZE: u8 = 1;

/// Executes a validated scenario. `seed` and `until_us` are the final,
/// precedence-resolved values (the CLI layers flag > file > default).
pub fn run(scenario: &Scenario, seed: u64, until_us: u64) -> (Vec<TraceRecord>, Metrics) {
    let mut world = World::new(scenario, seed, until_us);
    world.seed_events();
    while let Some(Reverse(event)) = world.queue.pop() {
        if event.time_us > world.until_us {
            break;
        }
        world.now_us = event.time_us;
        world.dispatch(event.kind);
    }
    (world.trace, world.metrics)
}

impl World {
    fn new(scenario: &Scenario, seed: u64, until_us: u64) -> Self {
        let cfg = scenario.config.clone();
        let radio = RadioParams {
            frequency_hz: cfg.frequency_hz,
            tx_power_dbm: cfg.tx_power_dbm,
            noise_dbm: cfg.noise_dbm,
            interference_dbm: None,
            element_gain_db: cfg.element_gain_db,
        };
        let mut world = World {
            now_us: 0,
            until_us,
            seed,
            seq: 0,
            queue: BinaryHeap::new(),
            cfg,
            radio,
            obstacles: scenario.obstacles.clone(),
            txs: BTreeMap::new(),
            rxs: BTreeMap::new(),
            irsss: BTreeMap::new(),
            irsns: BTreeMap::new(),
            servers: BTreeMap::new(),
            eves: BTreeMap::new(),
            flow_specs: BTreeMap::new(),
            flow_runtime: BTreeMap::new(),
            trace: Vec::new(),
            metrics: Metrics::default(),
            rngs: BTreeMap::new(),
        };
        for e in &scenario.entities {
            match &e.kind {
                EntityKind::Tx { sinr_threshold_db } => {
                    world.txs.insert(
                        e.addr,
                        TxEntity {
                            state: TxState::new(e.addr, e.position, *sinr_threshold_db),
                            discovery: BTreeMap::new(),
                        },
                    );
                }
                EntityKind::Rx => {
                    world.rxs.insert(e.addr, e.position);
                }
                EntityKind::Irss => {
                    world.irsss.insert(
                        e.addr,
                        IrssEntity {
                            position: e.position,
                            registry: Registry::new(),
                            pending: BTreeMap::new(),
                            arrivals: 0,
                            sessions: BTreeMap::new(),
                            next_session: 1,
                            server_addr: None,
                            optimizer_version: 1,
                        },
                    );
                }
                EntityKind::Server => {
                    world.servers.insert(e.addr, ServerState::new(e.addr));
                }
                EntityKind::Irsn {
                    descriptor,
                    fail_at_us,
                    orbit,
                } => {
                    world.irsns.insert(
                        e.addr,
                        IrsnEntity {
                            state: IrsnState::new(
                                descriptor.clone(),
                                world.cfg.heartbeat_period_us,
                            ),
                            orbit: *orbit,
                            fail_at_us: *fail_at_us,
                        },
                    );
                }
                EntityKind::Eavesdropper => {
                    world.eves.insert(e.addr, e.position);
                }
            }
        }
        // Stations learn their server from the topology.
        let server = world.servers.keys().next().copied();
        let irss_addrs: Vec<Ipv6Addr> = world.irsss.keys().copied().collect();
        for irss in world.irsss.values_mut() {
            irss.server_addr = server;
        }
        if let Some(srv) = server {
            world.servers.get_mut(&srv).unwrap().children = irss_addrs;
        }
        for f in &scenario.flows {
            world
                .txs
                .get_mut(&f.tx)
                .expect("validated")
                .state
                .flows
                .insert(f.flow_label, FlowState::new(f.rx));
            world.flow_specs.insert(f.flow_label, f.clone());
            world.flow_runtime.insert(f.flow_label, FlowRuntime::default());
            world.metrics.flows.insert(f.flow_label, FlowMetrics::default());
        }
        world
    }

    fn seed_events(&mut self) {
        let irsn_addrs: Vec<Ipv6Addr> = self.irsns.keys().copied().collect();
        for addr in irsn_addrs {
            self.enqueue(0, EventKind::Tick { entity: addr });
        }
        let starts: Vec<(u64, u32)> = self
            .flow_specs
            .values()
            .map(|f| (f.start_us, f.flow_label))
            .collect();
        for (start, label) in starts {
            self.enqueue(start, EventKind::MeasureLink { flow_label: label });
        }
    }

    fn enqueue(&mut self, time_us: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Event { time_us, seq, kind }));
    }

    fn record(&mut self, actor: Ipv6Addr, dir: Dir, summary: String) {
        self.trace.push(TraceRecord {
            time_us: self.now_us,
            actor: actor.to_string(),
            dir,
            summary,
        });
    }

    fn rng(&mut self, addr: Ipv6Addr, purpose: u8) -> &mut ChaCha12Rng {
        let seed = self.seed;
        self.rngs.entry((addr, purpose)).or_insert_with(|| {
            let mut key = [0u8; 32];
            key[..8].copy_from_slice(&seed.to_le_bytes());
            key[8..24].copy_from_slice(&addr.octets());
            key[24] = purpose;
            ChaCha12Rng::from_seed(key)
        })
    }

    /// True physical position of any entity at `t`.
    fn position_of(&self, addr: Ipv6Addr, t_us: u64) -> Option<Position> {
        if let Some(tx) = self.txs.get(&addr) {
            return Some(tx.state.position);
        }
        if let Some(p) = self.rxs.get(&addr) {
            return Some(*p);
        }
        if let Some(s) = self.irsss.get(&addr) {
            return Some(s.position);
        }
        if let Some(n) = self.irsns.get(&addr) {
            return Some(n.true_position(t_us));
        }
        if let Some(srv) = self.servers.get(&addr) {
            let _ = srv;
            return Some(Position::new(0.0, 0.0, 0.0));
        }
        self.eves.get(&addr).copied()
    }

    fn entity_alive(&self, addr: Ipv6Addr, t_us: u64) -> bool {
        match self.irsns.get(&addr) {
            Some(n) => n.alive(t_us),
            None => true,
        }
    }

    // ========================================================================
    // Send path with hop-limited forwarding
    // ========================================================================

    /// Picks the next hop toward `dst`: the closest-to-destination live
    /// entity within radio range that makes strict progress; ties break to
    /// the smaller address.
    fn next_hop(&self, from: Ipv6Addr, dst: Ipv6Addr) -> Option<Ipv6Addr> {
        let from_pos = self.position_of(from, self.now_us)?;
        let dst_pos = self.position_of(dst, self.now_us)?;
        let range = self.cfg.radio_range_m.unwrap_or(f64::INFINITY);
        if from_pos.distance(dst_pos) <= range {
            return Some(dst);
        }
        let remaining = from_pos.distance(dst_pos);
        let mut candidates: Vec<Ipv6Addr> = Vec::new();
        candidates.extend(self.txs.keys());
        candidates.extend(self.rxs.keys());
        candidates.extend(self.irsss.keys());
        candidates.extend(self.irsns.keys());
        candidates.extend(self.servers.keys());
        candidates
            .into_iter()
            .filter(|&a| a != from && self.entity_alive(a, self.now_us))
            .filter_map(|a| {
                let p = self.position_of(a, self.now_us)?;
                let progress = p.distance(dst_pos);
                (from_pos.distance(p) <= range && progress < remaining - 1e-9)
                    .then_some((a, progress))
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)))
            .map(|(a, _)| a)
    }

    /// Launches a packet from its source: one trace record, then the first
    /// leg goes on the queue.
    fn send(&mut self, src: Ipv6Addr, dst: Ipv6Addr, flow_label: u32, class: u8, message: IrsMessage) {
        let summary = describe(&message, flow_label);
        self.record(src, Dir::Send, summary);
        let packet = Packet {
            src,
            dst,
            traffic_class: class,
            flow_label,
            hop_limit: self.cfg.hop_limit,
            message,
        };
        self.forward_leg(src, packet);
    }

    /// Queues one hop of a packet's journey, or drops it with a trace
    /// record when no hop exists.
    fn forward_leg(&mut self, holder: Ipv6Addr, packet: Packet) {
        let Some(next) = self.next_hop(holder, packet.dst) else {
            let summary = format!(
                "drop {} dst={} no route",
                message_name(&packet.message),
                packet.dst
            );
            self.record(holder, Dir::Internal, summary);
            return;
        };
        let from = self.position_of(holder, self.now_us).unwrap();
        let to = self.position_of(next, self.now_us).unwrap();
        let delay = delivery_delay(from, to, 0.0).ceil() as u64;
        self.enqueue(
            self.now_us + delay,
            EventKind::Deliver { packet, to: next },
        );
    }

    /// A packet arrived at `at`. Either it is home, or it is relayed with
    /// the hop budget decremented, dying at zero.
    fn handle_arrival(&mut self, at: Ipv6Addr, mut packet: Packet) {
        if at == packet.dst {
            let summary = describe(&packet.message, packet.flow_label);
            self.record(at, Dir::Recv, summary);
            self.receive(at, packet);
            return;
        }
        if packet.hop_limit == 0 {
            let summary = format!(
                "drop {} dst={} hop_limit=0",
                message_name(&packet.message),
                packet.dst
            );
            self.record(at, Dir::Internal, summary);
            return;
        }
        packet.hop_limit -= 1;
        let summary = format!(
            "forward {} dst={} hop_limit={}",
            message_name(&packet.message),
            packet.dst,
            packet.hop_limit
        );
        self.record(at, Dir::Internal, summary);
        self.forward_leg(at, packet);
    }

    // ========================================================================
    // Dispatch
    // ========================================================================

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Deliver { packet, to } => self.handle_arrival(to, packet),
            EventKind::Tick { entity } => self.handle_tick(entity),
            EventKind::MeasureLink { flow_label } => self.handle_measure(flow_label),
            EventKind::EndService { flow_label } => self.handle_end_service(flow_label),
        }
    }

    fn receive(&mut self, at: Ipv6Addr, packet: Packet) {
        if self.txs.contains_key(&at) {
            self.tx_receive(at, packet);
        } else if self.irsss.contains_key(&at) {
            self.irss_receive(at, packet);
        } else if self.irsns.contains_key(&at) {
            self.irsn_receive(at, packet);
        }
        // Receivers, servers, and eavesdroppers consume silently.
    }

    // ========================================================================
    // Transmitter
    // ========================================================================

    fn tx_receive(&mut self, at: Ipv6Addr, packet: Packet) {
        match packet.message {
            IrsMessage::IrssAdvertisement(adv) => {
                let pos = position_from_cm(adv.position_cm);
                let tx = self.txs.get_mut(&at).unwrap();
                for d in tx.discovery.values_mut() {
                    d.candidates.insert(packet.src, pos);
                }
            }
            IrsMessage::ServiceConfirmation(conf) => {
                let label = packet.flow_label;
                let end = conf.tx_start_time_us + conf.duration_ms as u64 * 1_000;
                let assigned: Vec<Ipv6Addr> = conf.assignments.iter().map(|a| a.irsn_addr).collect();
                let tx = self.txs.get_mut(&at).unwrap();
                match tx.state.apply_confirmation(label, conf) {
                    Ok(()) => {
                        self.record(
                            at,
                            Dir::Internal,
                            format!("state flow={label} Requested->Confirmed"),
                        );
                        let m = self.metrics.flows.get_mut(&label).unwrap();
                        m.confirmations += 1;
                        let rt = self.flow_runtime.get_mut(&label).unwrap();
                        if m.confirm_latency_us.is_none() {
                            if let Some(t0) = rt.first_request_us {
                                m.confirm_latency_us = Some(self.now_us - t0);
                            }
                        }
                        if rt.commanded.is_empty() {
                            rt.commanded = assigned;
                        }
                        rt.service_end_us = Some(end);
                        self.enqueue(end, EventKind::EndService { flow_label: label });
                    }
                    Err(e) => {
                        self.record(at, Dir::Internal, format!("ignored confirmation: {e}"));
                    }
                }
            }
            IrsMessage::ServiceDenial(denial) => {
                let label = packet.flow_label;
                let tx = self.txs.get_mut(&at).unwrap();
                match tx.state.apply_denial(label, denial.reason) {
                    Ok(()) => {
                        self.record(
                            at,
                            Dir::Internal,
                            format!("state flow={label} Requested->Denied"),
                        );
                        let m = self.metrics.flows.get_mut(&label).unwrap();
                        m.denials += 1;
                        m.last_denial = Some(denial.reason);
                    }
                    Err(e) => {
                        self.record(at, Dir::Internal, format!("ignored denial: {e}"));
                    }
                }
            }
            _ => {}
        }
    }

    /// Closes any discovery windows that have elapsed: pick a station and
    /// fire the service request, or give up.
    fn tx_tick(&mut self, at: Ipv6Addr) {
        let due: Vec<u32> = self.txs[&at]
            .discovery
            .iter()
            .filter(|(_, d)| d.deadline_us <= self.now_us)
            .map(|(label, _)| *label)
            .collect();
        for label in due {
            let tx = self.txs.get_mut(&at).unwrap();
            let d = tx.discovery.remove(&label).unwrap();
            let candidates: Vec<(Ipv6Addr, Position)> =
                d.candidates.iter().map(|(a, p)| (*a, *p)).collect();
            match tx.state.choose_irss(&candidates) {
                Ok(irss) => {
                    tx.state.bind_irss(label, irss).expect("flow was discovering");
                    self.record(
                        at,
                        Dir::Internal,
                        format!("state flow={label} Discovering->Requested irss={irss}"),
                    );
                    let flow = self.flow_specs[&label].clone();
                    let request = self.build_request(&flow);
                    self.metrics.flows.get_mut(&label).unwrap().requests += 1;
                    let rt = self.flow_runtime.get_mut(&label).unwrap();
                    rt.first_request_us.get_or_insert(self.now_us);
                    self.send(
                        at,
                        irss,
                        label,
                        flow.traffic_class,
                        IrsMessage::ServiceRequest(request),
                    );
                }
                Err(_) => {
                    tx.state
                        .set_phase(label, FlowPhase::Idle)
                        .expect("flow was discovering");
                    self.record(
                        at,
                        Dir::Internal,
                        format!("state flow={label} Discovering->Idle no station answered"),
                    );
                }
            }
        }
    }

    fn build_request(&self, flow: &Flow) -> ServiceRequest {
        ServiceRequest {
            service_duration_ms: flow.duration_ms,
            target_rx_addr: flow.rx,
            modulation: 0,
            mimo_rank: 1,
            band: flow.band,
            tx_power_ddbm: (self.cfg.tx_power_dbm * 10.0).round() as i16,
            min_sinr_ddb: (flow.min_sinr_db * 10.0).round() as i16,
            weights: flow.weights,
            wpt: flow.wpt,
            localization: flow.localization,
            error_bound_cm: flow.error_bound_cm,
        }
    }

    // ========================================================================
    // Measurement and flow control
    // ========================================================================

    /// The serving chain a flow's radio sees right now: commanded surfaces
    /// that are alive and actually switched to a pattern, in chain order.
    fn serving_chain(&self, label: u32) -> Vec<Ipv6Addr> {
        let rt = &self.flow_runtime[&label];
        rt.commanded
            .iter()
            .copied()
            .filter(|a| {
                self.irsns
                    .get(a)
                    .map_or(false, |n| n.alive(self.now_us) && n.state.active_pattern(self.now_us) != 0)
            })
            .collect()
    }

    fn measured_sinr(&mut self, label: u32) -> (f64, Vec<Ipv6Addr>) {
        let flow = self.flow_specs[&label].clone();
        let serving = self.serving_chain(label);
        let tx_pos = self.txs[&flow.tx].state.position;
        let rx_pos = self.rxs[&flow.rx];
        let descriptors: Vec<IrsnDescriptor> = serving
            .iter()
            .map(|a| {
                let n = &self.irsns[a];
                let mut d = n.state.descriptor.clone();
                d.position = n.true_position(self.now_us);
                d
            })
            .collect();
        let refs: Vec<&IrsnDescriptor> = descriptors.iter().collect();
        let mut sinr = link_budget(tx_pos, rx_pos, &refs, &self.radio, &self.obstacles)
            .map(|b| b.sinr_db)
            .unwrap_or(f64::NEG_INFINITY);
        if self.cfg.measurement_noise_db > 0.0 {
            let noise_db = self.cfg.measurement_noise_db;
            let rng = self.rng(flow.tx, RNG_MEASURE);
            sinr += noise_db * irss::sample_normal(rng);
        }
        (sinr, serving)
    }

    fn handle_measure(&mut self, label: u32) {
        let flow = self.flow_specs[&label].clone();
        let (sinr, serving) = self.measured_sinr(label);
        self.record(
            flow.tx,
            Dir::Internal,
            format!("measure flow={label} sinr_db={sinr} serving={}", addr_list(&serving)),
        );
        {
            let m = self.metrics.flows.get_mut(&label).unwrap();
            m.sinr_series.push((self.now_us, sinr));
            if sinr < flow.min_sinr_db {
                m.outage_us += self.cfg.measure_period_us;
            }
            let rt = self.flow_runtime.get_mut(&label).unwrap();
            if !rt.prev_serving.is_empty() && !serving.is_empty() && rt.prev_serving != serving {
                m.handovers += 1;
            }
            rt.prev_serving = serving;
        }

        // Walk the flow state machine.
        let phase = self.txs[&flow.tx].state.flow(label).unwrap().phase;
        match phase {
            FlowPhase::Denied => {
                let tx = self.txs.get_mut(&flow.tx).unwrap();
                tx.state.set_phase(label, FlowPhase::Idle).unwrap();
                self.record(
                    flow.tx,
                    Dir::Internal,
                    format!("state flow={label} Denied->Idle"),
                );
            }
            FlowPhase::Confirmed => {
                let tx = self.txs.get_mut(&flow.tx).unwrap();
                if tx.state.begin_transmitting(label, self.now_us).unwrap() {
                    self.record(
                        flow.tx,
                        Dir::Internal,
                        format!("state flow={label} Confirmed->Transmitting"),
                    );
                }
            }
            FlowPhase::Transmitting => {
                if sinr < flow.min_sinr_db {
                    // The link collapsed mid-service; tear down and let the
                    // degradation path request again.
                    let tx = self.txs.get_mut(&flow.tx).unwrap();
                    tx.state.set_phase(label, FlowPhase::Idle).unwrap();
                    self.record(
                        flow.tx,
                        Dir::Internal,
                        format!("state flow={label} Transmitting->Idle service lost"),
                    );
                }
            }
            _ => {}
        }

        let phase = self.txs[&flow.tx].state.flow(label).unwrap().phase;
        if phase == FlowPhase::Idle {
            let armed = self
                .txs
                .get_mut(&flow.tx)
                .unwrap()
                .state
                .on_degradation(label, sinr)
                .unwrap();
            if armed {
                self.record(
                    flow.tx,
                    Dir::Internal,
                    format!("state flow={label} Idle->Discovering"),
                );
                let deadline = self.now_us + self.cfg.discovery_window_us;
                self.txs.get_mut(&flow.tx).unwrap().discovery.insert(
                    label,
                    DiscoveryState {
                        deadline_us: deadline,
                        candidates: BTreeMap::new(),
                    },
                );
                let stations: Vec<Ipv6Addr> = self.irsss.keys().copied().collect();
                let tx_pos = self.txs[&flow.tx].state.position;
                for irss in stations {
                    let msg = IrsMessage::IrssSolicitation(IrssSolicitation {
                        position_cm: position_to_cm(tx_pos).unwrap_or([0, 0, 0]),
                    });
                    self.send(flow.tx, irss, label, flow.traffic_class, msg);
                }
                self.enqueue(deadline, EventKind::Tick { entity: flow.tx });
            }
        }

        self.enqueue(
            self.now_us + self.cfg.measure_period_us,
            EventKind::MeasureLink { flow_label: label },
        );
    }

    fn handle_end_service(&mut self, label: u32) {
        let rt = self.flow_runtime.get_mut(&label).unwrap();
        if rt.service_end_us != Some(self.now_us) {
            return;
        }
        rt.service_end_us = None;
        rt.commanded.clear();
        rt.prev_serving.clear();
        let tx_addr = self.flow_specs[&label].tx;
        let tx = self.txs.get_mut(&tx_addr).unwrap();
        let phase = tx.state.flow(label).unwrap().phase;
        if phase == FlowPhase::Confirmed {
            // The service window elapsed before a measurement began it.
            let _ = tx.state.begin_transmitting(label, self.now_us);
        }
        if matches!(
            tx.state.flow(label).unwrap().phase,
            FlowPhase::Transmitting
        ) {
            tx.state.set_phase(label, FlowPhase::Idle).unwrap();
            self.record(
                tx_addr,
                Dir::Internal,
                format!("state flow={label} Transmitting->Idle service complete"),
            );
        }
    }

    // ========================================================================
    // Station
    // ========================================================================

    fn irss_receive(&mut self, at: Ipv6Addr, packet: Packet) {
        match packet.message {
            IrsMessage::ServiceRequest(request) => {
                let irss = self.irsss.get_mut(&at).unwrap();
                let key = (Reverse(packet.traffic_class), irss.arrivals);
                irss.arrivals += 1;
                irss.pending.insert(
                    key,
                    PendingRequest {
                        tx_addr: packet.src,
                        flow_label: packet.flow_label,
                        traffic_class: packet.traffic_class,
                        request,
                        session: None,
                        rx_estimate: None,
                    },
                );
                self.enqueue(
                    self.now_us + self.cfg.proc_delay_us,
                    EventKind::Tick { entity: at },
                );
            }
            IrsMessage::IrsnAdvertisement(adv) => {
                let irss = self.irsss.get_mut(&at).unwrap();
                irss.registry.register(adv.descriptor, self.now_us);
                self.record(
                    at,
                    Dir::Internal,
                    format!("register node={}", packet.src),
                );
            }
            IrsMessage::IrssSolicitation(_) => {
                let irss = &self.irsss[&at];
                let reply = IrssAdvertisement {
                    server_addr: irss.server_addr.unwrap_or(Ipv6Addr::UNSPECIFIED),
                    proto_versions: [crate::wire::PROTO_VERSION, 0, 0],
                    optimizer_version: irss.optimizer_version,
                    position_cm: position_to_cm(irss.position).unwrap_or([0, 0, 0]),
                    mac: scenario_mac(at),
                };
                self.send(at, packet.src, 0, 0, IrsMessage::IrssAdvertisement(reply));
            }
            IrsMessage::Status(status) => {
                let irss = self.irsss.get_mut(&at).unwrap();
                irss.registry.observe_status(packet.src, &status, self.now_us);
            }
            IrsMessage::LocalizationReport(report) => {
                self.irss_absorb_report(at, packet.src, report);
            }
            _ => {}
        }
    }

    fn irss_absorb_report(&mut self, at: Ipv6Addr, from: Ipv6Addr, report: LocalizationReport) {
        let irss = self.irsss.get_mut(&at).unwrap();
        let Some(session) = irss.sessions.get_mut(&report.session) else {
            return;
        };
        if let Some(m) = report.measurements.first() {
            session.reports.insert(from, *m);
        }
        session.awaiting.remove(&from);
        if session.awaiting.is_empty() {
            self.irss_resolve_session(at, report.session);
        }
    }

    /// Solves a session with the wire-quantized fixes in recruit order, then
    /// releases the waiting request.
    fn irss_resolve_session(&mut self, at: Ipv6Addr, session_id: u32) {
        let irss = self.irsss.get_mut(&at).unwrap();
        let Some(session) = irss.sessions.remove(&session_id) else {
            return;
        };
        let fixes: Vec<BearingFix> = session
            .anchors
            .iter()
            .filter_map(|(a, pos)| {
                session
                    .reports
                    .get(a)
                    .map(|m| BearingFix::from_measurement(*pos, m))
            })
            .collect();
        let solved = recruit_fixes(&fixes, session.error_bound_cm, self.cfg.max_anchors);
        let label = session.flow_label;
        let estimate = match solved {
            Some((est, bound_met)) => {
                self.record(
                    at,
                    Dir::Internal,
                    format!(
                        "localize flow={label} position=[{},{},{}] residual_cm={} anchors={} bound_met={bound_met}",
                        est.position.x, est.position.y, est.position.z,
                        est.residual_cm, est.anchors_used
                    ),
                );
                Some(est.position)
            }
            None => {
                self.record(
                    at,
                    Dir::Internal,
                    format!("localize flow={label} failed, using reported position"),
                );
                Some(session.target_true)
            }
        };
        let irss = self.irsss.get_mut(&at).unwrap();
        for pending in irss.pending.values_mut() {
            if pending.session == Some(session_id) {
                pending.rx_estimate = estimate;
                pending.session = None;
            }
        }
        self.enqueue(
            self.now_us + self.cfg.proc_delay_us,
            EventKind::Tick { entity: at },
        );
    }

    /// The decision pass: expire silent surfaces, then decide pending
    /// requests strictly in priority order, stalling behind any request
    /// still waiting on localization.
    fn irss_tick(&mut self, at: Ipv6Addr) {
        let expired = {
            let irss = self.irsss.get_mut(&at).unwrap();
            irss.registry
                .expire_stale(self.now_us, self.cfg.registry_timeout_us)
        };
        for addr in expired {
            self.record(at, Dir::Internal, format!("expire node={addr}"));
        }

        let overdue: Vec<u32> = self.irsss[&at]
            .sessions
            .iter()
            .filter(|(_, s)| s.deadline_us <= self.now_us)
            .map(|(id, _)| *id)
            .collect();
        for id in overdue {
            self.irss_resolve_session(at, id);
        }

        loop {
            let Some((&key, head)) = self.irsss[&at].pending.iter().next() else {
                break;
            };
            if head.session.is_some() {
                break;
            }
            let needs_localization =
                head.request.localization && head.rx_estimate.is_none();
            let label = head.flow_label;
            if needs_localization {
                if self.irss_start_localization(at, key) {
                    break;
                }
                // Too few anchors: fall through and decide with the
                // receiver's reported position.
                self.record(
                    at,
                    Dir::Internal,
                    format!("localize flow={label} skipped, too few anchors"),
                );
            }
            let pending = self.irsss.get_mut(&at).unwrap().pending.remove(&key).unwrap();
            self.irss_decide(at, pending);
        }
    }

    /// Starts a localization session for the head request. Returns false if
    /// there are not enough anchors to bother.
    fn irss_start_localization(&mut self, at: Ipv6Addr, key: (Reverse<u8>, u64)) -> bool {
        let irss = &self.irsss[&at];
        let station_pos = irss.position;
        // Everything registered is fair game; the station has no oracle for
        // liveness beyond registry freshness, and the session deadline
        // covers anchors that die between heartbeats.
        let mut anchors: Vec<(Ipv6Addr, Position)> = irss
            .registry
            .iter()
            .map(|(a, e)| (*a, e.descriptor.position))
            .collect();
        if anchors.len() < 2 {
            return false;
        }
        anchors.sort_by(|a, b| {
            a.1.distance(station_pos)
                .partial_cmp(&b.1.distance(station_pos))
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        anchors.truncate(self.cfg.max_anchors.max(2));

        let pending = self.irsss.get_mut(&at).unwrap().pending.get_mut(&key).unwrap();
        let label = pending.flow_label;
        let target = pending.request.target_rx_addr;
        let class = pending.traffic_class;
        let error_bound_cm = pending.request.error_bound_cm;
        let session_id = {
            let irss = self.irsss.get_mut(&at).unwrap();
            let id = irss.next_session;
            irss.next_session = irss.next_session.wrapping_add(1).max(1);
            irss.pending.get_mut(&key).unwrap().session = Some(id);
            id
        };
        let target_true = self.rxs.get(&target).copied().unwrap_or(station_pos);
        let deadline_us = self.now_us + self.cfg.discovery_window_us;
        self.irsss.get_mut(&at).unwrap().sessions.insert(
            session_id,
            LocSession {
                flow_label: label,
                error_bound_cm,
                anchors: anchors.clone(),
                awaiting: anchors.iter().map(|(a, _)| *a).collect(),
                reports: BTreeMap::new(),
                target_true,
                deadline_us,
            },
        );
        self.enqueue(deadline_us, EventKind::Tick { entity: at });
        for (anchor, _) in anchors {
            self.send(
                at,
                anchor,
                label,
                class,
                IrsMessage::LocalizationQuery(LocalizationQuery {
                    session: session_id,
                    sweep_count: 1,
                }),
            );
        }
        true
    }

    fn decision_config(&self) -> DecisionConfig {
        DecisionConfig {
            k_max: self.cfg.k_max,
            min_gain_threshold: self.cfg.min_gain_threshold,
            battery_floor_pct: self.cfg.battery_floor_pct,
            battery_capacity_mwh: self.cfg.battery_capacity_mwh,
            relocation_deadline_s: self.cfg.relocation_deadline_s,
            relocation_grid_step_m: self.cfg.relocation_grid_step_m,
            relocation_max_radius_m: self.cfg.relocation_max_radius_m,
            null_depth_db: self.cfg.null_depth_db,
            null_beamwidth_rad: self.cfg.null_beamwidth_rad,
        }
    }

    fn irss_decide(&mut self, at: Ipv6Addr, pending: PendingRequest) {
        let label = pending.flow_label;
        let request = &pending.request;
        let tx_pos = self
            .position_of(pending.tx_addr, self.now_us)
            .unwrap_or(self.irsss[&at].position);
        let rx_pos = pending.rx_estimate.or_else(|| {
            self.position_of(request.target_rx_addr, self.now_us)
        });
        let Some(rx_pos) = rx_pos else {
            // Unknown receiver; nothing sane to optimize against.
            self.deny(at, &pending, crate::wire::DenialReason::NoCandidates, "unknown receiver");
            return;
        };

        let candidates: Vec<IrsnDescriptor> = {
            let irss = &self.irsss[&at];
            irss.registry
                .candidate_set(request.band, self.cfg.battery_floor_pct, self.now_us)
                .into_iter()
                .cloned()
                .collect()
        };
        let cset_names = addr_list(&candidates.iter().map(|d| d.addr).collect::<Vec<_>>());

        // Orbital relays get the precomputed handover plan; everything else
        // goes through the chain optimizer.
        if self.cfg.predictive_handover {
            let orbital: Vec<(Ipv6Addr, Ephemeris)> = candidates
                .iter()
                .filter_map(|d| self.irsns[&d.addr].orbit.map(|e| (d.addr, e)))
                .collect();
            let occluder = self
                .obstacles
                .iter()
                .find(|o| matches!(o, Obstacle::Sphere { .. }))
                .cloned();
            if !orbital.is_empty() {
                if let Some(occluder) = occluder {
                    if self.irss_plan_handover(at, &pending, &orbital, &occluder, &cset_names) {
                        return;
                    }
                }
            }
        }

        let eves: Vec<Position> = self.eves.values().copied().collect();
        let env = Environment {
            tx_position: tx_pos,
            rx_position: rx_pos,
            radio: self.radio,
            obstacles: &self.obstacles,
            eavesdroppers: &eves,
        };
        let cfg = self.decision_config();
        let refs: Vec<&IrsnDescriptor> = candidates.iter().collect();
        match irss::optimize(request, &refs, &env, &cfg) {
            ServiceDecision::Confirmation(plan) => {
                let prep = self.command_prep_us(at, &plan.chain.iter().map(|d| d.addr).collect::<Vec<_>>());
                let sp = irss::build_commands(
                    &plan,
                    request.service_duration_ms,
                    self.now_us,
                    self.cfg.guard_us,
                    prep,
                );
                let chain_names = addr_list(&plan.chain.iter().map(|d| d.addr).collect::<Vec<_>>());
                self.record(
                    at,
                    Dir::Internal,
                    format!(
                        "decide flow={label} class={} cset={cset_names} -> confirm chain={chain_names} sinr_db={}",
                        pending.traffic_class, plan.achieved_sinr_db
                    ),
                );
                {
                    let irss = self.irsss.get_mut(&at).unwrap();
                    for d in &plan.chain {
                        irss.registry.reserve(d.addr, sp.end_time_us);
                    }
                }
                self.flow_runtime.get_mut(&label).unwrap().commanded =
                    plan.chain.iter().map(|d| d.addr).collect();
                for (node, command) in sp.commands {
                    self.send(at, node, label, pending.traffic_class, IrsMessage::Command(command));
                }
                self.send(
                    at,
                    pending.tx_addr,
                    label,
                    pending.traffic_class,
                    IrsMessage::ServiceConfirmation(sp.confirmation),
                );
            }
            ServiceDecision::Denial { reason } => {
                self.record(
                    at,
                    Dir::Internal,
                    format!(
                        "decide flow={label} class={} cset={cset_names} -> deny reason={reason}",
                        pending.traffic_class
                    ),
                );
                self.send(
                    at,
                    pending.tx_addr,
                    label,
                    pending.traffic_class,
                    IrsMessage::ServiceDenial(crate::wire::ServiceDenial { reason }),
                );
            }
        }
    }

    fn deny(
        &mut self,
        at: Ipv6Addr,
        pending: &PendingRequest,
        reason: crate::wire::DenialReason,
        why: &str,
    ) {
        self.record(
            at,
            Dir::Internal,
            format!("decide flow={} -> deny reason={reason} ({why})", pending.flow_label),
        );
        self.send(
            at,
            pending.tx_addr,
            pending.flow_label,
            pending.traffic_class,
            IrsMessage::ServiceDenial(crate::wire::ServiceDenial { reason }),
        );
    }

    /// Command preparation allowance: configured processing time plus the
    /// worst-case flight time to any commanded surface, so no schedule entry
    /// can arrive already in the past.
    fn command_prep_us(&self, at: Ipv6Addr, nodes: &[Ipv6Addr]) -> u64 {
        let from = self.irsss[&at].position;
        let worst_flight = nodes
            .iter()
            .filter_map(|a| self.position_of(*a, self.now_us))
            .map(|p| delivery_delay(from, p, 0.0).ceil() as u64)
            .max()
            .unwrap_or(0);
        self.cfg.command_prep_us + worst_flight
    }

    /// Precomputed relay schedule for orbital candidates. Returns true when
    /// a plan was issued (or coverage failed so badly we fell back).
    fn irss_plan_handover(
        &mut self,
        at: Ipv6Addr,
        pending: &PendingRequest,
        orbital: &[(Ipv6Addr, Ephemeris)],
        occluder: &Obstacle,
        cset_names: &str,
    ) -> bool {
        let label = pending.flow_label;
        let request = &pending.request;
        let tx_pos = match self.position_of(pending.tx_addr, self.now_us) {
            Some(p) => p,
            None => return false,
        };
        let rx_pos = match self.position_of(request.target_rx_addr, self.now_us) {
            Some(p) => p,
            None => return false,
        };
        let prep = self.command_prep_us(at, &orbital.iter().map(|(a, _)| *a).collect::<Vec<_>>());
        let tx_start = self.now_us + prep + self.cfg.guard_us;
        let end = tx_start + request.service_duration_ms as u64 * 1_000;
        let plan = match graphroute::predict_handover(
            &Ephemeris::stationary(tx_pos),
            &Ephemeris::stationary(rx_pos),
            orbital,
            (tx_start, end),
            self.cfg.handover_step_us,
            occluder,
            self.cfg.frequency_hz,
        ) {
            Ok(p) => p,
            Err(e) => {
                self.record(
                    at,
                    Dir::Internal,
                    format!("plan flow={label} failed ({e}), falling back to optimizer"),
                );
                return false;
            }
        };
        self.record(
            at,
            Dir::Internal,
            format!(
                "decide flow={label} class={} cset={cset_names} -> plan intervals={} switches={}",
                pending.traffic_class,
                plan.intervals.len(),
                plan.switch_times_us.len()
            ),
        );
        let commands = plan_to_commands(&plan, (tx_start, end));
        let relays: Vec<Ipv6Addr> = commands.keys().copied().collect();
        {
            let irss = self.irsss.get_mut(&at).unwrap();
            for r in &relays {
                irss.registry.reserve(*r, end);
            }
        }
        self.flow_runtime.get_mut(&label).unwrap().commanded = relays;
        for (node, schedule) in commands {
            self.send(
                at,
                node,
                label,
                pending.traffic_class,
                IrsMessage::Command(Command {
                    schedule,
                    relocate: false,
                    target_position_cm: [0, 0, 0],
                }),
            );
        }
        let first = plan.intervals[0].serving_irsn;
        let confirmation = ServiceConfirmation {
            tx_start_time_us: tx_start,
            duration_ms: request.service_duration_ms,
            assignments: vec![crate::wire::Assignment {
                irsn_addr: first,
                pattern_id: 1,
                activate_time_us: tx_start,
            }],
        };
        self.send(
            at,
            pending.tx_addr,
            label,
            pending.traffic_class,
            IrsMessage::ServiceConfirmation(confirmation),
        );
        true
    }

    // ========================================================================
    // Surface
    // ========================================================================

    fn irsn_receive(&mut self, at: Ipv6Addr, packet: Packet) {
        if !self.irsns[&at].alive(self.now_us) {
            self.record(at, Dir::Internal, "unresponsive".into());
            return;
        }
        match packet.message {
            IrsMessage::Command(cmd) => {
                let node = self.irsns.get_mut(&at).unwrap();
                match node.state.apply_command(&cmd, self.now_us) {
                    Ok(status) => {
                        if cmd.relocate && node.state.descriptor.max_speed_mps > 0.0 {
                            let target = position_from_cm(cmd.target_position_cm);
                            let dist = node.state.descriptor.position.distance(target);
                            let travel_us =
                                (dist / node.state.descriptor.max_speed_mps * 1e6).ceil() as u64;
                            self.enqueue(
                                self.now_us + travel_us,
                                EventKind::Tick { entity: at },
                            );
                        }
                        self.send(at, packet.src, packet.flow_label, 0, IrsMessage::Status(status));
                    }
                    Err(e) => {
                        self.record(at, Dir::Internal, format!("command rejected: {e}"));
                    }
                }
            }
            IrsMessage::LocalizationQuery(q) => {
                self.irsn_answer_query(at, packet.src, q);
            }
            IrsMessage::IrssAdvertisement(_) => {
                let node = self.irsns.get_mut(&at).unwrap();
                if node.state.parent_irss.is_none() {
                    node.state.adopt(packet.src);
                    let descriptor = node.state.descriptor.clone();
                    self.record(at, Dir::Internal, format!("adopt irss={}", packet.src));
                    self.send(
                        at,
                        packet.src,
                        0,
                        0,
                        IrsMessage::IrsnAdvertisement(crate::wire::IrsnAdvertisement {
                            descriptor,
                        }),
                    );
                }
            }
            _ => {}
        }
    }

    /// Synthesizes this anchor's view of the session target: a bearing and
    /// round-trip time of flight, quantized exactly as the wire would.
    fn irsn_answer_query(&mut self, at: Ipv6Addr, irss: Ipv6Addr, q: LocalizationQuery) {
        let target = self
            .irsss
            .get(&irss)
            .and_then(|s| s.sessions.get(&q.session))
            .map(|s| s.target_true);
        let Some(target) = target else {
            return;
        };
        let anchor_pos = self.irsns[&at].true_position(self.now_us);
        let noise = NoiseModel {
            bearing_sigma_deg: self.cfg.bearing_noise_deg,
            tof_sigma_ns: self.cfg.tof_noise_ns,
        };
        let fix = {
            let rng = self.rng(at, RNG_LOCALIZE);
            irss::observe(anchor_pos, target, &noise, rng)
        };
        let range = fix.range_m.unwrap_or(0.0);
        let rssi_db = fspl_db(range.max(1e-3), self.cfg.frequency_hz)
            .map(|l| self.cfg.tx_power_dbm - l)
            .unwrap_or(-300.0);
        let m = Measurement {
            irsn_addr: at,
            aoa_cdeg: (fix.bearing_rad.to_degrees() * 100.0).round() as i16,
            tof_ns: (range * 2.0 / SPEED_OF_LIGHT_M_S * 1e9).round() as u32,
            rssi_ddb: (rssi_db * 10.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16,
        };
        self.send(
            at,
            irss,
            0,
            0,
            IrsMessage::LocalizationReport(LocalizationReport {
                session: q.session,
                measurements: vec![m],
            }),
        );
    }

    fn irsn_tick(&mut self, at: Ipv6Addr) {
        if !self.irsns[&at].alive(self.now_us) {
            return;
        }
        // Orbital surfaces ride their ephemeris; the state machine only
        // integrates commanded relocations.
        if let Some(orbit) = self.irsns[&at].orbit {
            let p = orbit.position_at(self.now_us);
            self.irsns.get_mut(&at).unwrap().state.descriptor.position = p;
        }
        let outputs = {
            let node = self.irsns.get_mut(&at).unwrap();
            node.state.tick(self.now_us)
        };
        let parent = self.irsns[&at].state.parent_irss;
        for out in outputs {
            match out {
                IrsnOutput::Status(status) => {
                    if let Some(parent) = parent {
                        self.send(at, parent, 0, 0, IrsMessage::Status(status));
                    }
                }
                IrsnOutput::Solicit(s) => {
                    let stations: Vec<Ipv6Addr> = self.irsss.keys().copied().collect();
                    for irss in stations {
                        self.send(at, irss, 0, 0, IrsMessage::IrssSolicitation(s.clone()));
                    }
                }
            }
        }
        self.enqueue(
            self.now_us + self.cfg.heartbeat_period_us,
            EventKind::Tick { entity: at },
        );
    }

    fn handle_tick(&mut self, entity: Ipv6Addr) {
        if self.txs.contains_key(&entity) {
            self.tx_tick(entity);
        } else if self.irsss.contains_key(&entity) {
            self.irss_tick(entity);
        } else if self.irsns.contains_key(&entity) {
            self.irsn_tick(entity);
        }
    }
}

// ============================================================================
// Helpers
// ============================================================================

/// Turns a handover plan into per-relay pattern schedules: each relay
/// switches on when its interval begins (at the pulled-forward switch time
/// for non-initial intervals) and back to the inert pattern when it ends.
fn plan_to_commands(
    plan: &HandoverPlan,
    window: (u64, u64),
) -> BTreeMap<Ipv6Addr, Vec<ScheduleEntry>> {
    let mut commands: BTreeMap<Ipv6Addr, Vec<ScheduleEntry>> = BTreeMap::new();
    for (i, iv) in plan.intervals.iter().enumerate() {
        let on = if i == 0 {
            window.0
        } else {
            plan.switch_times_us[i - 1]
        };
        let off = if i + 1 == plan.intervals.len() {
            window.1
        } else {
            plan.switch_times_us[i]
        };
        let entries = commands.entry(iv.serving_irsn).or_default();
        entries.push(ScheduleEntry {
            pattern_id: 1,
            activate_time_us: on,
        });
        if off > on {
            entries.push(ScheduleEntry {
                pattern_id: 0,
                activate_time_us: off,
            });
        }
    }
    for entries in commands.values_mut() {
        // Stable by time: when a pulled-forward switch lands an off and an
        // on at the same instant, the on was pushed later and wins under
        // the surface's replace-by-time schedule merge.
        entries.sort_by_key(|e| e.activate_time_us);
    }
    commands
}

/// The recruit loop over already-quantized fixes: solve with the first two,
/// recruit one more while the residual misses the bound.
fn recruit_fixes(
    fixes: &[BearingFix],
    error_bound_cm: u16,
    max_anchors: usize,
) -> Option<(LocalizationEstimate, bool)> {
    if fixes.len() < 2 {
        return None;
    }
    let limit = max_anchors.max(2).min(fixes.len());
    let mut best: Option<LocalizationEstimate> = None;
    for k in 2..=limit {
        match triangulate(&fixes[..k]) {
            Ok(est) => {
                if est.residual_cm <= error_bound_cm as f64 {
                    return Some((est, true));
                }
                if best
                    .as_ref()
                    .map_or(true, |b| est.residual_cm < b.residual_cm)
                {
                    best = Some(est);
                }
            }
            Err(_) => continue,
        }
    }
    best.map(|est| (est, false))
}

fn scenario_mac(addr: Ipv6Addr) -> crate::model::MacAddr {
    let o = addr.octets();
    crate::model::MacAddr([o[10], o[11], o[12], o[13], o[14], o[15]])
}

fn addr_list(addrs: &[Ipv6Addr]) -> String {
    let inner: Vec<String> = addrs.iter().map(|a| a.to_string()).collect();
    format!("[{}]", inner.join(","))
}

fn message_name(m: &IrsMessage) -> &'static str {
    match m {
        IrsMessage::ServiceRequest(_) => "ServiceRequest",
        IrsMessage::ServiceConfirmation(_) => "ServiceConfirmation",
        IrsMessage::ServiceDenial(_) => "ServiceDenial",
        IrsMessage::LocalizationQuery(_) => "LocalizationQuery",
        IrsMessage::LocalizationReport(_) => "LocalizationReport",
        IrsMessage::Command(_) => "Command",
        IrsMessage::Status(_) => "Status",
        IrsMessage::IrsnAdvertisement(_) => "IrsnAdvertisement",
        IrsMessage::IrssSolicitation(_) => "IrssSolicitation",
        IrsMessage::IrssAdvertisement(_) => "IrssAdvertisement",
        IrsMessage::ServerUpdate(_) => "ServerUpdate",
    }
}

fn describe(m: &IrsMessage, flow_label: u32) -> String {
    match m {
        IrsMessage::ServiceRequest(r) => format!(
            "ServiceRequest flow={flow_label} band={:?} dur_ms={} loc={}",
            r.band, r.service_duration_ms, r.localization
        ),
        IrsMessage::ServiceConfirmation(c) => format!(
            "ServiceConfirmation flow={flow_label} tx_start_us={} nodes={}",
            c.tx_start_time_us,
            c.assignments.len()
        ),
        IrsMessage::ServiceDenial(d) => {
            format!("ServiceDenial flow={flow_label} reason={}", d.reason)
        }
        IrsMessage::LocalizationQuery(q) => format!("LocalizationQuery session={}", q.session),
        IrsMessage::LocalizationReport(r) => format!(
            "LocalizationReport session={} measurements={}",
            r.session,
            r.measurements.len()
        ),
        IrsMessage::Command(c) => format!(
            "Command entries={} relocate={}",
            c.schedule.len(),
            c.relocate
        ),
        IrsMessage::Status(s) => format!(
            "Status battery={} pattern={}",
            s.battery_pct, s.active_pattern
        ),
        IrsMessage::IrsnAdvertisement(a) => format!(
            "IrsnAdvertisement n_elements={}",
            a.descriptor.n_elements
        ),
        IrsMessage::IrssSolicitation(_) => "IrssSolicitation".into(),
        IrsMessage::IrssAdvertisement(a) => format!(
            "IrssAdvertisement optimizer_version={}",
            a.optimizer_version
        ),
        IrsMessage::ServerUpdate(u) => format!(
            "ServerUpdate kind={:?} version={}",
            u.kind, u.new_version
        ),
    }
}

/// The connectivity graph of a scenario at one instant, for export: only
/// radio endpoints participate (stations and the server coordinate but do
/// not relay the data beam).
pub fn connectivity_at(
    scenario: &Scenario,
    t_us: u64,
) -> Result<graphroute::ConnectivityGraph, graphroute::RouteError> {
    let mut vertices = Vec::new();
    for e in &scenario.entities {
        let kind = match &e.kind {
            EntityKind::Tx { .. } => graphroute::VertexKind::Tx,
            EntityKind::Rx => graphroute::VertexKind::Rx,
            EntityKind::Irsn { descriptor, orbit, .. } => {
                let gain = crate::model::array_gain_db(
                    descriptor.n_elements,
                    scenario.config.element_gain_db,
                )
                .unwrap_or(0.0);
                let position = orbit
                    .as_ref()
                    .map_or(descriptor.position, |o| o.position_at(t_us));
                vertices.push(graphroute::Vertex {
                    addr: e.addr,
                    position,
                    kind: graphroute::VertexKind::Irsn { gain_db: gain },
                });
                continue;
            }
            EntityKind::Eavesdropper => graphroute::VertexKind::Eavesdropper,
            EntityKind::Irss | EntityKind::Server => continue,
        };
        vertices.push(graphroute::Vertex {
            addr: e.addr,
            position: e.position,
            kind,
        });
    }
    graphroute::build_graph(
        &vertices,
        &scenario.obstacles,
        scenario.config.frequency_hz,
        t_us,
    )
}

// ============================================================================
// Tests
// ============================================================================
