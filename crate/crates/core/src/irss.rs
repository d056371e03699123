//! Station-side decision logic.
//!
//! An IRS station owns a registry of reflecting surfaces, answers service
//! requests by searching reflection chains (and, for mobile surfaces,
//! relocation targets), emits the pattern-switch commands realizing a
//! confirmed service, and locates receivers by triangulating bearing and
//! time-of-flight reports.

use std::collections::BTreeMap;
use std::net::Ipv6Addr;

use rand::Rng;
use thiserror::Error;

use crate::model::{
    link_budget, Band, IrsnDescriptor, Mobility, Obstacle, Position, RadioParams,
    SPEED_OF_LIGHT_M_S,
};
use crate::wire::{
    Assignment, Command, DenialReason, Measurement, ScheduleEntry, ServiceConfirmation,
    ServiceRequest, Status, Weights,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrssError {
    #[error("decision references {0}, which is not in the registry")]
    UnknownNode(Ipv6Addr),
    #[error("need at least {need} anchors, have {have}")]
    InsufficientAnchors { have: usize, need: usize },
    #[error("bearing rays are parallel; the fix is underdetermined")]
    DegenerateGeometry,
}

// ============================================================================
// Registry
// ============================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub descriptor: IrsnDescriptor,
    pub last_seen_us: u64,
    /// Nodes committed to a service stay out of candidate sets until here.
    pub reserved_until_us: u64,
}

/// The station's view of every surface that has advertised to it, keyed and
/// iterated in address order so downstream selection is deterministic.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<Ipv6Addr, RegistryEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a surface or refreshes its descriptor. A live reservation
    /// survives re-advertisement.
    pub fn register(&mut self, descriptor: IrsnDescriptor, now_us: u64) {
        match self.entries.get_mut(&descriptor.addr) {
            Some(e) => {
                e.descriptor = descriptor;
                e.last_seen_us = now_us;
            }
            None => {
                self.entries.insert(
                    descriptor.addr,
                    RegistryEntry {
                        descriptor,
                        last_seen_us: now_us,
                        reserved_until_us: 0,
                    },
                );
            }
        }
    }

    /// Applies a heartbeat: refreshes liveness and the mutable telemetry.
    pub fn observe_status(&mut self, addr: Ipv6Addr, status: &Status, now_us: u64) {
        if let Some(e) = self.entries.get_mut(&addr) {
            e.last_seen_us = now_us;
            e.descriptor.battery_pct = status.battery_pct;
            e.descriptor.position = crate::model::position_from_cm(status.position_cm);
        }
    }

    pub fn reserve(&mut self, addr: Ipv6Addr, until_us: u64) {
        if let Some(e) = self.entries.get_mut(&addr) {
            e.reserved_until_us = e.reserved_until_us.max(until_us);
        }
    }

    /// Drops surfaces silent for longer than `timeout_us` and returns their
    /// addresses. Exactly `timeout_us` of silence is still alive.
    pub fn expire_stale(&mut self, now_us: u64, timeout_us: u64) -> Vec<Ipv6Addr> {
        let dead: Vec<Ipv6Addr> = self
            .entries
            .iter()
            .filter(|(_, e)| now_us.saturating_sub(e.last_seen_us) > timeout_us)
            .map(|(a, _)| *a)
            .collect();
        for a in &dead {
            self.entries.remove(a);
        }
        dead
    }

    pub fn get(&self, addr: &Ipv6Addr) -> Option<&RegistryEntry> {
        self.entries.get(addr)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv6Addr, &RegistryEntry)> {
        self.entries.iter()
    }

    /// Surfaces eligible to serve `band` right now, in address order:
    /// band supported, battery at or above the floor, not reserved.
    pub fn candidate_set(
        &self,
        band: Band,
        battery_floor_pct: u8,
        now_us: u64,
    ) -> Vec<&IrsnDescriptor> {
        self.entries
            .values()
            .filter(|e| {
                e.descriptor.bands.contains(band)
                    && e.descriptor.battery_pct >= battery_floor_pct
                    && e.reserved_until_us <= now_us
            })
            .map(|e| &e.descriptor)
            .collect()
    }
}

// ============================================================================
// Objective
// ============================================================================

/// Tunables of the decision step. Defaults mirror the scenario schema.
#[derive(Debug, Clone)]
pub struct DecisionConfig {
    /// Longest reflection chain considered.
    pub k_max: usize,
    /// A chain must beat the direct link's score by more than this.
    pub min_gain_threshold: f64,
    /// Projected battery after the service may not fall below this.
    pub battery_floor_pct: u8,
    pub battery_capacity_mwh: f64,
    /// Time a mobile surface is given to reposition before service start.
    pub relocation_deadline_s: f64,
    pub relocation_grid_step_m: f64,
    /// Hard cap on how far any relocation target may be.
    pub relocation_max_radius_m: f64,
    /// Aperture suppression toward an off-beam eavesdropper.
    pub null_depth_db: f64,
    /// Angular separation below which no suppression applies.
    pub null_beamwidth_rad: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            min_gain_threshold: 0.01,
            battery_floor_pct: 5,
            battery_capacity_mwh: 1000.0,
            relocation_deadline_s: 10.0,
            relocation_grid_step_m: 1.0,
            relocation_max_radius_m: 50.0,
            null_depth_db: 20.0,
            null_beamwidth_rad: 0.017,
        }
    }
}

/// World state the optimizer scores against.
#[derive(Debug, Clone)]
pub struct Environment<'a> {
    pub tx_position: Position,
    pub rx_position: Position,
    pub radio: RadioParams,
    pub obstacles: &'a [Obstacle],
    pub eavesdroppers: &'a [Position],
}

/// One chain's evaluation. The empty chain is the direct-link baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainScore {
    pub score: f64,
    pub sinr_db: f64,
    pub secrecy_bps_hz: f64,
    pub extra_delay_us: f64,
    pub added_power_mw: f64,
    pub blocked: bool,
}

fn squash(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

fn capacity_bps_hz(sinr_db: f64) -> f64 {
    if sinr_db == f64::NEG_INFINITY {
        return 0.0;
    }
    (1.0 + 10f64.powf(sinr_db / 10.0)).log2()
}

/// Signal level an eavesdropper hears from this chain's configuration: the
/// chain prefix as served, with the final hop redirected at the listener.
/// The serving surface (or none, for the direct link) points its beam at the
/// receiver; a listener outside `null_beamwidth_rad` of that beam, seen from
/// the final reflector, loses `null_depth_db` of aperture gain. A listener
/// inside the beam (the colocated worst case) hears the full signal.
fn eavesdropper_sinr(
    chain: &[&IrsnDescriptor],
    env: &Environment<'_>,
    eve: Position,
    cfg: &DecisionConfig,
) -> f64 {
    let mut waypoints = Vec::with_capacity(chain.len() + 1);
    waypoints.push(env.tx_position);
    waypoints.extend(chain.iter().map(|n| n.position));

    let mut loss = 0.0;
    for pair in waypoints.windows(2) {
        match crate::model::is_los(pair[0], pair[1], env.obstacles) {
            Ok(true) => match crate::model::fspl_db(pair[0].distance(pair[1]), env.radio.frequency_hz) {
                Ok(l) => loss += l,
                Err(_) => return f64::NEG_INFINITY,
            },
            _ => return f64::NEG_INFINITY,
        }
    }

    let origin = *waypoints.last().unwrap();
    let d_eve = origin.distance(eve);
    if d_eve == 0.0 {
        // Listening at the beam origin itself: hears everything.
        return f64::INFINITY;
    }
    match crate::model::is_los(origin, eve, env.obstacles) {
        Ok(true) => {}
        _ => return f64::NEG_INFINITY,
    }
    loss += match crate::model::fspl_db(d_eve, env.radio.frequency_hz) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };

    let mut gain = 0.0;
    for node in chain {
        gain += crate::model::array_gain_db(node.n_elements, env.radio.element_gain_db)
            .unwrap_or(0.0);
    }
    if !chain.is_empty() {
        let u = env.rx_position.sub(origin);
        let v = eve.sub(origin);
        if u.norm() > 0.0 {
            let cos = (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
            if cos.acos() > cfg.null_beamwidth_rad {
                gain -= cfg.null_depth_db;
            }
        }
    }

    crate::model::sinr_db(
        env.radio.tx_power_dbm,
        loss - gain,
        env.radio.noise_dbm,
        env.radio.interference_dbm,
    )
}

/// Scores a chain (at the positions its descriptors carry) under the
/// requested weights:
///
/// ```text
/// score = w_sinr * s(sinr_db/10) + w_secrecy * s(secrecy_bps_hz)
///       - w_latency * s(extra_delay_us) - w_power * s(added_power_mw)
/// ```
///
/// with `s(x) = x / (1 + |x|)` and weights normalized from wire bytes to
/// [0, 1]. Secrecy is measured against the strongest eavesdropper; with
/// none around it degenerates to the receiver's capacity. A blocked chain
/// scores negative infinity.
pub fn evaluate_objective(
    chain: &[&IrsnDescriptor],
    env: &Environment<'_>,
    weights: &Weights,
    cfg: &DecisionConfig,
) -> ChainScore {
    let budget = match link_budget(
        env.tx_position,
        env.rx_position,
        chain,
        &env.radio,
        env.obstacles,
    ) {
        Ok(b) => b,
        Err(_) => {
            return ChainScore {
                score: f64::NEG_INFINITY,
                sinr_db: f64::NEG_INFINITY,
                secrecy_bps_hz: 0.0,
                extra_delay_us: 0.0,
                added_power_mw: 0.0,
                blocked: true,
            }
        }
    };

    let path_m: f64 = budget.segments.iter().map(|s| s.from.distance(s.to)).sum();
    let direct_m = env.tx_position.distance(env.rx_position);
    let extra_delay_us = (path_m - direct_m).max(0.0) / SPEED_OF_LIGHT_M_S * 1e6;
    let added_power_mw: f64 = chain
        .iter()
        .map(|n| (n.power_active_mw - n.power_idle_mw).max(0.0))
        .sum();

    let eve_capacity = env
        .eavesdroppers
        .iter()
        .map(|&e| capacity_bps_hz(eavesdropper_sinr(chain, env, e, cfg)))
        .fold(0.0, f64::max);
    let secrecy_bps_hz = (capacity_bps_hz(budget.sinr_db) - eve_capacity).max(0.0);

    if budget.blocked {
        return ChainScore {
            score: f64::NEG_INFINITY,
            sinr_db: f64::NEG_INFINITY,
            secrecy_bps_hz,
            extra_delay_us,
            added_power_mw,
            blocked: true,
        };
    }

    let w = |b: u8| b as f64 / 255.0;
    let score = w(weights.sinr) * squash(budget.sinr_db / 10.0)
        + w(weights.secrecy) * squash(secrecy_bps_hz)
        - w(weights.latency) * squash(extra_delay_us)
        - w(weights.power) * squash(added_power_mw);

    ChainScore {
        score,
        sinr_db: budget.sinr_db,
        secrecy_bps_hz,
        extra_delay_us,
        added_power_mw,
        blocked: false,
    }
}

// ============================================================================
// Optimizer
// ============================================================================

/// A confirmed chain. `relocations` aligns with `chain`; entries hold the
/// move target for members that must reposition first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmedPlan {
    pub chain: Vec<IrsnDescriptor>,
    /// Pattern each member switches to; position in the chain, one-based.
    pub patterns: Vec<u16>,
    pub relocations: Vec<Option<Position>>,
    pub achieved_sinr_db: f64,
    pub objective_score: f64,
    pub baseline_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceDecision {
    Confirmation(ConfirmedPlan),
    Denial { reason: DenialReason },
}

/// Battery percentage a surface would burn serving for `duration_ms`.
pub fn projected_drain_pct(d: &IrsnDescriptor, duration_ms: u32, capacity_mwh: f64) -> f64 {
    let duration_h = duration_ms as f64 / 3.6e6;
    100.0 * (d.power_active_mw - d.power_idle_mw).max(0.0) * duration_h / capacity_mwh
}

fn energy_feasible(d: &IrsnDescriptor, duration_ms: u32, cfg: &DecisionConfig) -> bool {
    d.battery_pct as f64 - projected_drain_pct(d, duration_ms, cfg.battery_capacity_mwh)
        >= cfg.battery_floor_pct as f64
}

/// Relocation targets for one surface: the current spot first, then grid
/// offsets by ascending distance. The grid coarsens for large radii so the
/// search stays bounded.
fn relocation_targets(d: &IrsnDescriptor, reach_m: f64, step_m: f64) -> Vec<Position> {
    let mut out = vec![d.position];
    if reach_m <= 0.0 {
        return out;
    }
    let step = step_m.max(reach_m / 10.0);
    let n = (reach_m / step).floor() as i64;
    let mut offsets = Vec::new();
    for a in -n..=n {
        for b in -n..=n {
            if (a, b) == (0, 0) {
                continue;
            }
            let (dx, dy) = (a as f64 * step, b as f64 * step);
            if dx * dx + dy * dy <= reach_m * reach_m {
                offsets.push((dx * dx + dy * dy, dx, dy));
            }
        }
    }
    offsets.sort_by(|p, q| p.partial_cmp(q).unwrap());
    out.extend(
        offsets
            .iter()
            .map(|&(_, dx, dy)| Position::new(d.position.x + dx, d.position.y + dy, d.position.z)),
    );
    out
}

fn reachable_radius(d: &IrsnDescriptor, cfg: &DecisionConfig, relaxed: bool) -> f64 {
    if d.mobility != Mobility::Mobile || d.max_speed_mps <= 0.0 {
        return 0.0;
    }
    if relaxed {
        cfg.relocation_max_radius_m
    } else {
        (d.max_speed_mps * cfg.relocation_deadline_s).min(cfg.relocation_max_radius_m)
    }
}

struct SearchHit {
    indices: Vec<usize>,
    positions: Vec<Position>,
    score: ChainScore,
}

/// One pass of coordinate-wise grid search: each member in chain order picks
/// the target maximizing the objective with the others held fixed. Members
/// that cannot move contribute a single candidate position.
fn place_chain(
    members: &[&IrsnDescriptor],
    env: &Environment<'_>,
    weights: &Weights,
    cfg: &DecisionConfig,
    relaxed: bool,
) -> (Vec<Position>, ChainScore) {
    let mut placed: Vec<IrsnDescriptor> = members.iter().map(|d| (*d).clone()).collect();
    let eval = |nodes: &[IrsnDescriptor]| {
        let refs: Vec<&IrsnDescriptor> = nodes.iter().collect();
        evaluate_objective(&refs, env, weights, cfg)
    };
    let mut best = eval(&placed);
    for i in 0..placed.len() {
        let reach = reachable_radius(members[i], cfg, relaxed);
        if reach <= 0.0 {
            continue;
        }
        for target in relocation_targets(members[i], reach, cfg.relocation_grid_step_m) {
            let prev = placed[i].position;
            placed[i].position = target;
            let s = eval(&placed);
            if s.score > best.score {
                best = s;
            } else {
                placed[i].position = prev;
            }
        }
    }
    (placed.iter().map(|d| d.position).collect(), best)
}

fn chains_of<F: FnMut(&[usize])>(n: usize, k_max: usize, mut visit: F) {
    // All ordered selections without repetition, shortest first, then in
    // lexicographic index order; this ordering is the tie-break.
    fn extend<F: FnMut(&[usize])>(
        n: usize,
        k: usize,
        prefix: &mut Vec<usize>,
        used: &mut [bool],
        visit: &mut F,
    ) {
        if prefix.len() == k {
            visit(prefix);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(n, k, prefix, used, visit);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut used = vec![false; n];
    let mut prefix = Vec::new();
    for k in 1..=k_max.min(n) {
        extend(n, k, &mut prefix, &mut used, &mut visit);
    }
}

/// Answers a service request from the given candidate set.
///
/// Chains of 1..=k_max members are enumerated exhaustively; mobile members
/// additionally search relocation targets reachable before the deadline.
/// The best configuration wins if it clears the direct-link baseline by
/// more than `min_gain_threshold`; otherwise the denial carries the most
/// specific reason:
///
/// - `NoCandidates`: the candidate set is empty.
/// - `MobilityInfeasible`: lifting the reachability limit (up to the
///   relocation radius cap) would have cleared the bar.
/// - `EnergyBudget`: lifting the battery-drain screen would have cleared it.
/// - `NoImprovement`: nothing scores above the baseline at all.
/// - `CostOutweighsGain`: something scores above, but under the threshold.
///
/// Ties go to fewer members, then the lexicographically smaller address
/// sequence.
pub fn optimize(
    request: &ServiceRequest,
    cset: &[&IrsnDescriptor],
    env: &Environment<'_>,
    cfg: &DecisionConfig,
) -> ServiceDecision {
    if cset.is_empty() {
        return ServiceDecision::Denial {
            reason: DenialReason::NoCandidates,
        };
    }
    let mut order: Vec<usize> = (0..cset.len()).collect();
    order.sort_by_key(|&i| cset[i].addr);
    let at = |i: usize| cset[order[i]];

    let weights = request.weights;
    let baseline = evaluate_objective(&[], env, &weights, cfg);
    let bar = baseline.score + cfg.min_gain_threshold;

    let mut best: Option<SearchHit> = None;
    let mut best_energy_relaxed_score = f64::NEG_INFINITY;

    chains_of(cset.len(), cfg.k_max, |idx| {
        let members: Vec<&IrsnDescriptor> = idx.iter().map(|&i| at(i)).collect();
        let (positions, score) = place_chain(&members, env, &weights, cfg, false);
        if score.score > best_energy_relaxed_score {
            best_energy_relaxed_score = score.score;
        }
        let feasible = members
            .iter()
            .all(|d| energy_feasible(d, request.service_duration_ms, cfg));
        if feasible && best.as_ref().map_or(true, |b| score.score > b.score.score) {
            best = Some(SearchHit {
                indices: idx.to_vec(),
                positions,
                score,
            });
        }
    });

    if let Some(hit) = &best {
        if hit.score.score > bar {
            let chain: Vec<IrsnDescriptor> =
                hit.indices.iter().map(|&i| at(i).clone()).collect();
            let relocations: Vec<Option<Position>> = chain
                .iter()
                .zip(&hit.positions)
                .map(|(d, &p)| if p == d.position { None } else { Some(p) })
                .collect();
            let patterns: Vec<u16> = (1..=chain.len() as u16).collect();
            return ServiceDecision::Confirmation(ConfirmedPlan {
                chain,
                patterns,
                relocations,
                achieved_sinr_db: hit.score.sinr_db,
                objective_score: hit.score.score,
                baseline_score: baseline.score,
            });
        }
    }

    // Denial diagnosis, most specific first. Would more freedom to move
    // have cleared the bar?
    let mut relaxed_clears = false;
    chains_of(cset.len(), cfg.k_max, |idx| {
        if relaxed_clears {
            return;
        }
        let members: Vec<&IrsnDescriptor> = idx.iter().map(|&i| at(i)).collect();
        if !members
            .iter()
            .all(|d| energy_feasible(d, request.service_duration_ms, cfg))
        {
            return;
        }
        let (_, score) = place_chain(&members, env, &weights, cfg, true);
        if score.score > bar {
            relaxed_clears = true;
        }
    });
    if relaxed_clears {
        return ServiceDecision::Denial {
            reason: DenialReason::MobilityInfeasible,
        };
    }
    if best_energy_relaxed_score > bar {
        return ServiceDecision::Denial {
            reason: DenialReason::EnergyBudget,
        };
    }
    let best_score = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.score.score);
    if best_score <= baseline.score {
        ServiceDecision::Denial {
            reason: DenialReason::NoImprovement,
        }
    } else {
        ServiceDecision::Denial {
            reason: DenialReason::CostOutweighsGain,
        }
    }
}

// ============================================================================
// Command construction
// ============================================================================

/// Everything a confirmation turns into on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct ServicePlan {
    pub confirmation: ServiceConfirmation,
    pub commands: Vec<(Ipv6Addr, Command)>,
    pub tx_start_time_us: u64,
    pub end_time_us: u64,
}

/// Turns a confirmed plan into per-surface commands and the transmitter's
/// confirmation message.
///
/// Patterns activate at `now + prep_us` (or at a relocating member's arrival,
/// if later); transmission starts a guard interval after every member is in
/// place and switched. Each schedule ends with a switch back to the inert
/// pattern when the service does.
pub fn build_commands(
    plan: &ConfirmedPlan,
    duration_ms: u32,
    now_us: u64,
    guard_us: u64,
    prep_us: u64,
) -> ServicePlan {
    let base_activate = now_us + prep_us;
    let mut ready = base_activate;
    let mut activates = Vec::with_capacity(plan.chain.len());
    for (d, reloc) in plan.chain.iter().zip(&plan.relocations) {
        let activate = match reloc {
            Some(target) if d.max_speed_mps > 0.0 => {
                let travel_us =
                    (d.position.distance(*target) / d.max_speed_mps * 1e6).ceil() as u64;
                base_activate.max(now_us + travel_us)
            }
            _ => base_activate,
        };
        ready = ready.max(activate);
        activates.push(activate);
    }
    let tx_start = ready + guard_us;
    let end = tx_start + duration_ms as u64 * 1_000;

    let mut commands = Vec::with_capacity(plan.chain.len());
    let mut assignments = Vec::with_capacity(plan.chain.len());
    for ((d, reloc), (&pattern, &activate)) in plan
        .chain
        .iter()
        .zip(&plan.relocations)
        .zip(plan.patterns.iter().zip(&activates))
    {
        let mut schedule = vec![ScheduleEntry {
            pattern_id: pattern,
            activate_time_us: activate,
        }];
        if end > activate {
            schedule.push(ScheduleEntry {
                pattern_id: 0,
                activate_time_us: end,
            });
        }
        let target = reloc.unwrap_or(d.position);
        commands.push((
            d.addr,
            Command {
                schedule,
                relocate: reloc.is_some(),
                target_position_cm: crate::model::position_to_cm(target)
                    .unwrap_or([0, 0, 0]),
            },
        ));
        assignments.push(Assignment {
            irsn_addr: d.addr,
            pattern_id: pattern,
            activate_time_us: activate,
        });
    }

    ServicePlan {
        confirmation: ServiceConfirmation {
            tx_start_time_us: tx_start,
            duration_ms,
            assignments,
        },
        commands,
        tx_start_time_us: tx_start,
        end_time_us: end,
    }
}

// ============================================================================
// Localization
// ============================================================================

/// One anchor's contribution to a fix: a bearing ray in the x-y plane and,
/// usually, a round-trip range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingFix {
    pub anchor: Position,
    /// Direction from the anchor toward the target, radians in the x-y plane.
    pub bearing_rad: f64,
    pub range_m: Option<f64>,
}

impl BearingFix {
    /// Converts a wire measurement taken at a known anchor. The reported
    /// time of flight is a round trip, so the range halves it.
    pub fn from_measurement(anchor: Position, m: &Measurement) -> Self {
        Self {
            anchor,
            bearing_rad: (m.aoa_cdeg as f64 / 100.0).to_radians(),
            range_m: Some(m.tof_ns as f64 * 1e-9 * SPEED_OF_LIGHT_M_S / 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationEstimate {
    pub position: Position,
    /// RMS of the per-measurement residuals at the solution, centimeters.
    pub residual_cm: f64,
    pub anchors_used: usize,
}

/// Least-squares intersection of bearing rays, refined against the range
/// observations where present.
///
/// The linear stage minimizes squared perpendicular distance to each bearing
/// line; when ranges exist a Gauss-Newton pass polishes the point against
/// both residual families. Solving happens in the x-y plane (bearings carry
/// no elevation); the estimate's height is the anchors' mean.
pub fn triangulate(fixes: &[BearingFix]) -> Result<LocalizationEstimate, IrssError> {
    if fixes.len() < 2 {
        return Err(IrssError::InsufficientAnchors {
            have: fixes.len(),
            need: 2,
        });
    }

    // Normal equations of the perpendicular-distance least squares:
    // sum_i (I - d_i d_i^T) p = sum_i (I - d_i d_i^T) a_i.
    let mut m = [[0.0f64; 2]; 2];
    let mut rhs = [0.0f64; 2];
    for f in fixes {
        let (s, c) = f.bearing_rad.sin_cos();
        let p = [[s * s, -c * s], [-c * s, c * c]];
        m[0][0] += p[0][0];
        m[0][1] += p[0][1];
        m[1][0] += p[1][0];
        m[1][1] += p[1][1];
        rhs[0] += p[0][0] * f.anchor.x + p[0][1] * f.anchor.y;
        rhs[1] += p[1][0] * f.anchor.x + p[1][1] * f.anchor.y;
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-9 {
        return Err(IrssError::DegenerateGeometry);
    }
    let mut x = (rhs[0] * m[1][1] - rhs[1] * m[0][1]) / det;
    let mut y = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
    let z = fixes.iter().map(|f| f.anchor.z).sum::<f64>() / fixes.len() as f64;

    if fixes.iter().any(|f| f.range_m.is_some()) {
        for _ in 0..25 {
            // Gauss-Newton on [bearing perpendicular; range] residuals.
            let mut jtj = [[0.0f64; 2]; 2];
            let mut jtr = [0.0f64; 2];
            for f in fixes {
                let (s, c) = f.bearing_rad.sin_cos();
                let r = (-s) * (x - f.anchor.x) + c * (y - f.anchor.y);
                jtj[0][0] += s * s;
                jtj[0][1] += -s * c;
                jtj[1][0] += -s * c;
                jtj[1][1] += c * c;
                jtr[0] += -s * r;
                jtr[1] += c * r;
                if let Some(range) = f.range_m {
                    let dx = x - f.anchor.x;
                    let dy = y - f.anchor.y;
                    let dz = z - f.anchor.z;
                    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                    if dist > 1e-12 {
                        let (jx, jy) = (dx / dist, dy / dist);
                        let r = dist - range;
                        jtj[0][0] += jx * jx;
                        jtj[0][1] += jx * jy;
                        jtj[1][0] += jy * jx;
                        jtj[1][1] += jy * jy;
                        jtr[0] += jx * r;
                        jtr[1] += jy * r;
                    }
                }
            }
            let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-12 {
                break;
            }
            let dx = (jtr[0] * jtj[1][1] - jtr[1] * jtj[0][1]) / det;
            let dy = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
            x -= dx;
            y -= dy;
            if dx.hypot(dy) < 1e-12 {
                break;
            }
        }
    }

    let mut sq_sum = 0.0;
    let mut n_res = 0usize;
    for f in fixes {
        let (s, c) = f.bearing_rad.sin_cos();
        let perp = (-s) * (x - f.anchor.x) + c * (y - f.anchor.y);
        sq_sum += perp * perp;
        n_res += 1;
        if let Some(range) = f.range_m {
            let dx = x - f.anchor.x;
            let dy = y - f.anchor.y;
            let dz = z - f.anchor.z;
            let err = (dx * dx + dy * dy + dz * dz).sqrt() - range;
            sq_sum += err * err;
            n_res += 1;
        }
    }

    Ok(LocalizationEstimate {
        position: Position::new(x, y, z),
        residual_cm: 100.0 * (sq_sum / n_res as f64).sqrt(),
        anchors_used: fixes.len(),
    })
}

/// Measurement noise applied when synthesizing anchor observations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub bearing_sigma_deg: f64,
    pub tof_sigma_ns: f64,
}

/// Standard normal via Box-Muller; the handful of draws a session makes
/// does not justify a distributions dependency.
pub(crate) fn sample_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Synthesizes what an anchor at `anchor` would report about `target`:
/// a noisy bearing and round-trip time of flight, in exact (unquantized)
/// units. The wire layer quantizes when the values actually travel.
pub fn observe(
    anchor: Position,
    target: Position,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> BearingFix {
    let bearing = (target.y - anchor.y).atan2(target.x - anchor.x)
        + (noise.bearing_sigma_deg * sample_normal(rng)).to_radians();
    let range = anchor.distance(target)
        + noise.tof_sigma_ns * sample_normal(rng) * 1e-9 * SPEED_OF_LIGHT_M_S / 2.0;
    BearingFix {
        anchor,
        bearing_rad: bearing,
        range_m: Some(range.max(0.0)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationOutcome {
    pub estimate: LocalizationEstimate,
    /// Whether the recruit loop met the requested bound before running out
    /// of anchors.
    pub bound_met: bool,
}

/// The recruit loop: starts with the two anchors nearest `reference`, solves,
/// and recruits the next-nearest anchor while the residual misses the bound.
/// Returns the first estimate meeting the bound, or the best one found with
/// `bound_met` unset once anchors (or `max_anchors`) run out.
pub fn run_localization(
    anchors: &[(Ipv6Addr, Position)],
    target: Position,
    reference: Position,
    error_bound_cm: u16,
    max_anchors: usize,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<LocalizationOutcome, IrssError> {
    if anchors.len() < 2 {
        return Err(IrssError::InsufficientAnchors {
            have: anchors.len(),
            need: 2,
        });
    }
    let mut ordered: Vec<&(Ipv6Addr, Position)> = anchors.iter().collect();
    ordered.sort_by(|a, b| {
        a.1.distance(reference)
            .partial_cmp(&b.1.distance(reference))
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });

    let limit = max_anchors.max(2).min(ordered.len());
    let mut fixes: Vec<BearingFix> = Vec::with_capacity(limit);
    let mut best: Option<LocalizationEstimate> = None;
    let mut last_err = IrssError::DegenerateGeometry;
    for k in 2..=limit {
        while fixes.len() < k {
            fixes.push(observe(ordered[fixes.len()].1, target, noise, rng));
        }
        match triangulate(&fixes) {
            Ok(est) => {
                if est.residual_cm <= error_bound_cm as f64 {
                    return Ok(LocalizationOutcome {
                        estimate: est,
                        bound_met: true,
                    });
                }
                if best.map_or(true, |b| est.residual_cm < b.residual_cm) {
                    best = Some(est);
                }
            }
            Err(e) => last_err = e,
        }
    }
    match best {
        Some(estimate) => Ok(LocalizationOutcome {
            estimate,
            bound_met: false,
        }),
        None => Err(last_err),
    }
}

// ============================================================================
// Tests
// ============================================================================
