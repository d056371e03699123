//! Graph view of a deployment: entities become vertices, unobstructed
//! sightlines become edges weighted by free-space loss. On top of that sit
//! minimum-loss and secrecy-aware path search, circular-orbit ephemerides,
//! and a handover planner that schedules relay switches before a sightline
//! closes.

use std::net::Ipv6Addr;

use thiserror::Error;

use crate::model::{fspl_db, is_los, sinr_db, IrsnDescriptor, Obstacle, Position, RadioParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("a connectivity graph needs at least 2 entities, got {0}")]
    TooFewEntities(usize),
    #[error("duplicate entity id {0}")]
    DuplicateId(Ipv6Addr),
    #[error("no relay has a two-segment sightline at t={at_us} us")]
    NoCoverage { at_us: u64 },
}

// ============================================================================
// Graph construction
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VertexKind {
    Tx,
    Rx,
    /// A reflecting surface; `gain_db` is its aperture gain when used as an
    /// intermediate hop.
    Irsn { gain_db: f64 },
    Eavesdropper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub addr: Ipv6Addr,
    pub position: Position,
    pub kind: VertexKind,
}

/// An undirected sightline between `vertices[a]` and `vertices[b]`, always
/// stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub loss_db: f64,
    pub los: bool,
}

/// Snapshot of who can see whom at one instant.
#[derive(Debug, Clone)]
pub struct ConnectivityGraph {
    /// Sorted by address, so index order is address order.
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub timestamp_us: u64,
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// Evaluates all-pairs line of sight against the occluders and weights each
/// surviving edge with the free-space loss at `frequency_hz`. Entities at
/// identical positions get no edge (a zero-length link is not a usable hop).
pub fn build_graph(
    entities: &[Vertex],
    occluders: &[Obstacle],
    frequency_hz: f64,
    timestamp_us: u64,
) -> Result<ConnectivityGraph, RouteError> {
    if entities.len() < 2 {
        return Err(RouteError::TooFewEntities(entities.len()));
    }
    let mut vertices = entities.to_vec();
    vertices.sort_by_key(|v| v.addr);
    for pair in vertices.windows(2) {
        if pair[0].addr == pair[1].addr {
            return Err(RouteError::DuplicateId(pair[0].addr));
        }
    }

    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); vertices.len()];
    for a in 0..vertices.len() {
        for b in a + 1..vertices.len() {
            let (pa, pb) = (vertices[a].position, vertices[b].position);
            if pa.distance(pb) == 0.0 {
                continue;
            }
            if !is_los(pa, pb, occluders).unwrap_or(false) {
                continue;
            }
            let loss_db = fspl_db(pa.distance(pb), frequency_hz).unwrap_or(f64::INFINITY);
            edges.push(Edge {
                a,
                b,
                loss_db,
                los: true,
            });
            adjacency[a].push((b, loss_db));
            adjacency[b].push((a, loss_db));
        }
    }
    Ok(ConnectivityGraph {
        vertices,
        edges,
        timestamp_us,
        adjacency,
    })
}

impl ConnectivityGraph {
    pub fn index_of(&self, addr: Ipv6Addr) -> Option<usize> {
        self.vertices.binary_search_by_key(&addr, |v| v.addr).ok()
    }

    pub fn edge_loss(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, l)| *l)
    }

    /// Aperture gain a vertex contributes as an intermediate, clamped to its
    /// cheapest incident edge so a hop through it can never pay back more
    /// than the edge cost it adds. That keeps every per-hop cost
    /// non-negative, which is what makes the path search safe.
    pub fn capped_gain(&self, v: usize) -> f64 {
        match self.vertices[v].kind {
            VertexKind::Irsn { gain_db } => {
                let min_loss = self.adjacency[v]
                    .iter()
                    .map(|(_, l)| *l)
                    .fold(f64::INFINITY, f64::min);
                gain_db.min(min_loss)
            }
            _ => 0.0,
        }
    }

    /// Line-oriented adjacency export: one `edge <id_a> <id_b> <loss_db>`
    /// per sightline.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "edge {} {} {}\n",
                self.vertices[e.a].addr, self.vertices[e.b].addr, e.loss_db
            ));
        }
        out
    }
}

// ============================================================================
// Path search
// ============================================================================

/// A relay route from source to destination.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    /// Vertex addresses from source to destination inclusive.
    pub vertices: Vec<Ipv6Addr>,
    /// Sum of edge losses along the route.
    pub total_loss_db: f64,
    /// Sum of (capped) aperture gains of the intermediates.
    pub array_gain_db: f64,
    /// `total_loss_db - array_gain_db`; lower is better.
    pub score_db: f64,
}

fn path_score(g: &ConnectivityGraph, path: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    for w in path.windows(2) {
        loss += g.edge_loss(w[0], w[1]).unwrap();
    }
    let mut gain = 0.0;
    for &v in &path[1..path.len() - 1] {
        gain += g.capped_gain(v);
    }
    (loss, gain)
}

fn make_route(g: &ConnectivityGraph, path: &[usize]) -> RoutePath {
    let (total_loss_db, array_gain_db) = path_score(g, path);
    RoutePath {
        vertices: path.iter().map(|&i| g.vertices[i].addr).collect(),
        total_loss_db,
        array_gain_db,
        score_db: total_loss_db - array_gain_db,
    }
}

/// Walks every simple path from `src` to `dst` whose intermediates are all
/// reflecting surfaces, at most `max_hops` of them. Neighbors are explored
/// in address order, so the first of several equal-score paths is the
/// lexicographically smallest.
fn for_each_path<F: FnMut(&[usize])>(
    g: &ConnectivityGraph,
    src: usize,
    dst: usize,
    max_hops: usize,
    visit: &mut F,
) {
    fn recurse<F: FnMut(&[usize])>(
        g: &ConnectivityGraph,
        dst: usize,
        max_hops: usize,
        path: &mut Vec<usize>,
        visit: &mut F,
    ) {
        let here = *path.last().unwrap();
        for &(next, _) in &g.adjacency[here] {
            if next == dst {
                path.push(next);
                visit(path);
                path.pop();
                continue;
            }
            if path.len() - 1 >= max_hops
                || !matches!(g.vertices[next].kind, VertexKind::Irsn { .. })
                || path.contains(&next)
            {
                continue;
            }
            path.push(next);
            recurse(g, dst, max_hops, path, visit);
            path.pop();
        }
    }
    let mut path = vec![src];
    recurse(g, dst, max_hops, &mut path, visit);
}

/// Minimum of `sum of edge losses - sum of intermediate gains` over simple
/// paths with at most `max_hops` reflecting intermediates. Ties break to the
/// lexicographically smallest address sequence. Absent vertices or a
/// disconnected pair yield None.
pub fn best_path(
    g: &ConnectivityGraph,
    src: Ipv6Addr,
    dst: Ipv6Addr,
    max_hops: usize,
) -> Option<RoutePath> {
    let (src, dst) = (g.index_of(src)?, g.index_of(dst)?);
    if src == dst {
        return None;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_path(g, src, dst, max_hops, &mut |path| {
        let (loss, gain) = path_score(g, path);
        let score = loss - gain;
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, path.to_vec()));
        }
    });
    best.map(|(_, path)| make_route(g, &path))
}

// ============================================================================
// Secrecy-aware search
// ============================================================================

/// How sharply a reflecting surface can steer energy away from a bystander.
/// Suppression only applies when the angular separation between the intended
/// receiver and the eavesdropper, seen from the final reflector, exceeds the
/// beam width; a transmitter with no reflector in the chain cannot null at
/// all.
#[derive(Debug, Clone, Copy)]
pub struct NullingModel {
    pub null_depth_db: f64,
    pub null_beamwidth_rad: f64,
}

impl Default for NullingModel {
    fn default() -> Self {
        Self {
            null_depth_db: 20.0,
            null_beamwidth_rad: 0.017,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyRoute {
    pub route: RoutePath,
    /// Spectral efficiency at the intended receiver, log2(1 + SINR).
    pub rx_capacity_bps_hz: f64,
    /// max(0, receiver capacity - best eavesdropper capacity).
    pub secrecy_bps_hz: f64,
}

fn capacity_bps_hz(sinr_db_val: f64) -> f64 {
    if sinr_db_val == f64::NEG_INFINITY {
        return 0.0;
    }
    if sinr_db_val == f64::INFINITY {
        return f64::INFINITY;
    }
    (1.0 + 10f64.powf(sinr_db_val / 10.0)).log2()
}

fn angle_between(at: Position, p: Position, q: Position) -> f64 {
    let u = p.sub(at);
    let v = q.sub(at);
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (u.dot(v) / denom).clamp(-1.0, 1.0).acos()
}

/// Capacity leaked to one eavesdropper by a route: the chain up to the final
/// reflector is unchanged, the last hop is re-aimed at the eavesdropper, and
/// the chain gain is reduced by the null depth when the geometry lets the
/// final reflector null.
fn eavesdropper_capacity(
    g: &ConnectivityGraph,
    path: &[usize],
    eve: usize,
    radio: &RadioParams,
    nulling: &NullingModel,
) -> f64 {
    let last = path[path.len() - 2];
    let dst = path[path.len() - 1];
    let last_pos = g.vertices[last].position;
    let eve_pos = g.vertices[eve].position;
    if last_pos.distance(eve_pos) == 0.0 {
        // Sitting on the beam origin: hears everything.
        return f64::INFINITY;
    }
    let Some(final_hop_loss) = g.edge_loss(last, eve) else {
        // Occluded from the final reflector: hears nothing.
        return 0.0;
    };
    let mut loss = final_hop_loss;
    for w in path[..path.len() - 1].windows(2) {
        loss += g.edge_loss(w[0], w[1]).unwrap();
    }
    let mut gain = 0.0;
    for &v in &path[1..path.len() - 1] {
        gain += g.capped_gain(v);
    }
    let has_reflector = path.len() > 2;
    let separated =
        angle_between(last_pos, g.vertices[dst].position, eve_pos) > nulling.null_beamwidth_rad;
    if has_reflector && separated {
        gain -= nulling.null_depth_db;
    }
    capacity_bps_hz(sinr_db(
        radio.tx_power_dbm,
        loss - gain,
        radio.noise_dbm,
        radio.interference_dbm,
    ))
}

/// Maximizes the secrecy rate over the same path family as [`best_path`].
/// Ties break to lower total loss, then to the lexicographically smallest
/// address sequence. With no eavesdroppers this reduces to [`best_path`].
pub fn secrecy_path(
    g: &ConnectivityGraph,
    src: Ipv6Addr,
    dst: Ipv6Addr,
    eavesdroppers: &[Ipv6Addr],
    max_hops: usize,
    radio: &RadioParams,
    nulling: &NullingModel,
) -> Option<SecrecyRoute> {
    let rx_capacity = |score_db: f64| {
        capacity_bps_hz(sinr_db(
            radio.tx_power_dbm,
            score_db,
            radio.noise_dbm,
            radio.interference_dbm,
        ))
    };
    let eves: Vec<usize> = eavesdroppers.iter().filter_map(|&a| g.index_of(a)).collect();
    if eves.is_empty() {
        let route = best_path(g, src, dst, max_hops)?;
        let cap = rx_capacity(route.score_db);
        return Some(SecrecyRoute {
            route,
            rx_capacity_bps_hz: cap,
            secrecy_bps_hz: cap.max(0.0),
        });
    }

    let (src_i, dst_i) = (g.index_of(src)?, g.index_of(dst)?);
    if src_i == dst_i {
        return None;
    }
    let mut best: Option<(f64, f64, Vec<usize>, f64)> = None;
    for_each_path(g, src_i, dst_i, max_hops, &mut |path| {
        let (loss, gain) = path_score(g, path);
        let cap = rx_capacity(loss - gain);
        let leaked = eves
            .iter()
            .map(|&e| eavesdropper_capacity(g, path, e, radio, nulling))
            .fold(0.0, f64::max);
        let secrecy = (cap - leaked).max(0.0);
        let better = match &best {
            None => true,
            Some((s, l, _, _)) => secrecy > *s || (secrecy == *s && loss < *l),
        };
        if better {
            best = Some((secrecy, loss, path.to_vec(), cap));
        }
    });
    best.map(|(secrecy, _, path, cap)| SecrecyRoute {
        route: make_route(g, &path),
        rx_capacity_bps_hz: cap,
        secrecy_bps_hz: secrecy,
    })
}

// ============================================================================
// Orbits and handover
// ============================================================================

/// A circular orbit in an arbitrary plane. Position at time t is
/// `radius * (cos(w t + phase) * u + sin(w t + phase) * v)`; the basis
/// vectors must be orthonormal. When the central body is also the occluder
/// the radius has to exceed the body radius, or the craft is permanently
/// buried.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ephemeris {
    pub orbit_radius_m: f64,
    pub angular_rate_rad_s: f64,
    pub phase_rad: f64,
    pub basis_u: Position,
    pub basis_v: Position,
}

impl Ephemeris {
    pub fn position_at(&self, t_us: u64) -> Position {
        let theta = self.angular_rate_rad_s * (t_us as f64 / 1e6) + self.phase_rad;
        self.basis_u
            .scale(self.orbit_radius_m * theta.cos())
            .add(self.basis_v.scale(self.orbit_radius_m * theta.sin()))
    }

    /// A degenerate orbit that pins an entity at a fixed point.
    pub fn stationary(p: Position) -> Self {
        let r = p.norm();
        let u = if r == 0.0 {
            Position::new(1.0, 0.0, 0.0)
        } else {
            p.scale(1.0 / r)
        };
        // Any unit vector orthogonal to u works; pick against the axis u is
        // least aligned with.
        let seed = if u.x.abs() <= u.y.abs() && u.x.abs() <= u.z.abs() {
            Position::new(1.0, 0.0, 0.0)
        } else if u.y.abs() <= u.z.abs() {
            Position::new(0.0, 1.0, 0.0)
        } else {
            Position::new(0.0, 0.0, 1.0)
        };
        let mut v = seed.sub(u.scale(seed.dot(u)));
        v = v.scale(1.0 / v.norm());
        Self {
            orbit_radius_m: r,
            angular_rate_rad_s: 0.0,
            phase_rad: 0.0,
            basis_u: u,
            basis_v: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServingInterval {
    pub start_us: u64,
    pub end_us: u64,
    pub serving_irsn: Ipv6Addr,
}

/// The precomputed relay schedule over a planning window. Intervals are
/// contiguous and partition the window; `switch_times_us` holds one entry
/// per interval boundary, pulled one sample early whenever the outgoing
/// relay has already lost its sightline at the boundary sample, so the
/// switch is always scheduled before the loss is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverPlan {
    pub intervals: Vec<ServingInterval>,
    pub switch_times_us: Vec<u64>,
}

fn relayed_loss(
    tx: Position,
    rx: Position,
    relay: Position,
    occluder: &Obstacle,
    frequency_hz: f64,
) -> Option<f64> {
    let occ = std::slice::from_ref(occluder);
    if !is_los(tx, relay, occ).unwrap_or(false) || !is_los(relay, rx, occ).unwrap_or(false) {
        return None;
    }
    let l1 = fspl_db(tx.distance(relay), frequency_hz).ok()?;
    let l2 = fspl_db(relay.distance(rx), frequency_hz).ok()?;
    Some(l1 + l2)
}

/// Samples the window every `step_us`, picks the visible relay with minimum
/// two-segment loss at each sample (ties to the smaller address), and
/// coalesces runs into serving intervals.
pub fn predict_handover(
    tx_eph: &Ephemeris,
    rx_eph: &Ephemeris,
    irsn_ephs: &[(Ipv6Addr, Ephemeris)],
    window: (u64, u64),
    step_us: u64,
    occluder: &Obstacle,
    frequency_hz: f64,
) -> Result<HandoverPlan, RouteError> {
    assert!(step_us > 0, "sampling step must be positive");
    let (start, end) = window;

    let feasible = |addr_eph: &(Ipv6Addr, Ephemeris), t: u64| {
        relayed_loss(
            tx_eph.position_at(t),
            rx_eph.position_at(t),
            addr_eph.1.position_at(t),
            occluder,
            frequency_hz,
        )
    };

    // Per-sample winner.
    let mut samples: Vec<(u64, Ipv6Addr)> = Vec::new();
    let mut t = start;
    while t <= end {
        let winner = irsn_ephs
            .iter()
            .filter_map(|ae| feasible(ae, t).map(|loss| (loss, ae.0)))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)))
            .ok_or(RouteError::NoCoverage { at_us: t })?;
        samples.push((t, winner.1));
        if t == end {
            break;
        }
        t = (t + step_us).min(end);
    }

    // Coalesce runs; the final interval always closes at the window end.
    let mut intervals: Vec<ServingInterval> = Vec::new();
    let mut switch_times_us = Vec::new();
    for &(t, serving) in &samples {
        match intervals.last_mut() {
            Some(last) if last.serving_irsn == serving => last.end_us = end,
            _ => {
                if let Some(last) = intervals.last_mut() {
                    last.end_us = t;
                    let outgoing = irsn_ephs
                        .iter()
                        .find(|ae| ae.0 == last.serving_irsn)
                        .expect("serving relay came from irsn_ephs");
                    let switch = if feasible(outgoing, t).is_none() {
                        t.saturating_sub(step_us).max(last.start_us)
                    } else {
                        t
                    };
                    switch_times_us.push(switch);
                }
                intervals.push(ServingInterval {
                    start_us: t,
                    end_us: end,
                    serving_irsn: serving,
                });
            }
        }
    }
    Ok(HandoverPlan {
        intervals,
        switch_times_us,
    })
}

/// A surface can track a moving peer only if its pattern switching keeps up
/// with the apparent angular motion: accept iff
/// `rate <= max_switch_hz * beam_step_rad`.
pub fn feasibility_check(
    node: &IrsnDescriptor,
    relative_angular_rate_rad_s: f64,
    beam_step_rad: f64,
) -> bool {
    relative_angular_rate_rad_s <= node.max_switch_hz * beam_step_rad
}

// ============================================================================
// Tests
// ============================================================================
