//! Shared domain model: positions, obstacles, surface descriptors and the
//! free-space link budget.
//!
//! Everything here is pure math over a [`Real`] scalar (defaulting to `f64`).
//! Distances are meters, frequencies Hz, powers dBm, gains and losses dB.
//! Blocked links are represented with infinities: a blocked budget carries
//! `total_loss_db = +inf` and `sinr_db = -inf` rather than an error, because
//! "no line of sight" is an answer, not a failure.

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::scalar::Real;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    /// An input that must be strictly positive was zero or negative.
    #[error("{0} must be strictly positive")]
    NonPositiveInput(&'static str),
    /// A segment's endpoints coincide, so it has no direction.
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    /// A descriptor field violates its documented range.
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(&'static str),
    /// An obstacle with non-positive extent.
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(&'static str),
}

// ============================================================================
// Geometry
// ============================================================================

/// A point (or vector) in 3-space, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Position<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> T {
        self.sub(o).norm()
    }
}

impl<T: fmt::Display> fmt::Display for Position<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// An opaque radio blocker. Only two shapes exist because the line-of-sight
/// test is the single consumer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle<T = f64> {
    Sphere { center: Position<T>, radius_m: T },
    Aabb { min: Position<T>, max: Position<T> },
}

impl<T: Real> Obstacle<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Obstacle::Sphere { radius_m, .. } => {
                if *radius_m <= T::zero() {
                    return Err(ModelError::InvalidObstacle("sphere radius must be > 0"));
                }
            }
            Obstacle::Aabb { min, max } => {
                if !(min.x < max.x && min.y < max.y && min.z < max.z) {
                    return Err(ModelError::InvalidObstacle(
                        "box min must be strictly below max on every axis",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// True when the open segment `a -> b` misses every obstacle interior.
///
/// Endpoints sitting on an obstacle surface do not count as blockage and
/// grazing contact (tangency) counts as clear: a segment blocks only by
/// passing strictly inside a shape.
pub fn is_los<T: Real>(
    a: Position<T>,
    b: Position<T>,
    obstacles: &[Obstacle<T>],
) -> Result<bool, ModelError> {
    let d = b.sub(a);
    if d.norm() == T::zero() {
        return Err(ModelError::DegenerateSegment);
    }
    for obs in obstacles {
        let blocked = match *obs {
            Obstacle::Sphere { center, radius_m } => {
                segment_point_distance(a, b, center) < radius_m
            }
            Obstacle::Aabb { min, max } => segment_enters_box(a, b, min, max),
        };
        if blocked {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Minimum distance from point `p` to the closed segment `a -> b`.
fn segment_point_distance<T: Real>(a: Position<T>, b: Position<T>, p: Position<T>) -> T {
    let d = b.sub(a);
    let len2 = d.dot(d);
    let t = (p.sub(a).dot(d) / len2).max(T::zero()).min(T::one());
    p.distance(a.add(d.scale(t)))
}

/// True when the open segment has a sub-interval strictly inside the open box.
fn segment_enters_box<T: Real>(
    a: Position<T>,
    b: Position<T>,
    min: Position<T>,
    max: Position<T>,
) -> bool {
    // Intersect the parametric interval (0, 1) with the open slab of each
    // axis; an empty (or degenerate) intersection means the segment at most
    // touches the boundary, which counts as clear.
    let mut t_lo = T::zero();
    let mut t_hi = T::one();
    let axes = [
        (a.x, b.x - a.x, min.x, max.x),
        (a.y, b.y - a.y, min.y, max.y),
        (a.z, b.z - a.z, min.z, max.z),
    ];
    for (start, dir, lo, hi) in axes {
        if dir == T::zero() {
            if !(start > lo && start < hi) {
                return false;
            }
        } else {
            let mut t0 = (lo - start) / dir;
            let mut t1 = (hi - start) / dir;
            if t0 > t1 {
                core::mem::swap(&mut t0, &mut t1);
            }
            t_lo = t_lo.max(t0);
            t_hi = t_hi.min(t1);
            if t_lo >= t_hi {
                return false;
            }
        }
    }
    t_lo < t_hi
}

// ============================================================================
// Identifiers and descriptors
// ============================================================================

/// 48-bit hardware address, printed as colon-separated hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in &mut out {
            let part = parts
                .next()
                .ok_or(ModelError::InvalidDescriptor("mac needs six octets"))?;
            *slot = u8::from_str_radix(part, 16)
                .map_err(|_| ModelError::InvalidDescriptor("mac octet is not hex"))?;
        }
        if parts.next().is_some() {
            return Err(ModelError::InvalidDescriptor("mac needs six octets"));
        }
        Ok(MacAddr(out))
    }
}

/// Frequency band a surface or request operates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Band {
    Sub6 = 0,
    MmWave = 1,
    Thz = 2,
}

impl Band {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Band::Sub6),
            1 => Some(Band::MmWave),
            2 => Some(Band::Thz),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Band::Sub6 => "Sub6",
            Band::MmWave => "MmWave",
            Band::Thz => "THz",
        };
        f.write_str(s)
    }
}

/// Set of supported bands, stored as a 3-bit mask (bit = `Band` code).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BandSet(u8);

impl BandSet {
    pub const MASK: u8 = 0b111;

    pub fn empty() -> Self {
        BandSet(0)
    }

    pub fn of(bands: &[Band]) -> Self {
        let mut s = BandSet(0);
        for b in bands {
            s.insert(*b);
        }
        s
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits == 0 || bits & !Self::MASK != 0 {
            None
        } else {
            Some(BandSet(bits))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, b: Band) {
        self.0 |= 1 << b.to_byte();
    }

    pub fn contains(self, b: Band) -> bool {
        self.0 & (1 << b.to_byte()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for BandSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for b in [Band::Sub6, Band::MmWave, Band::Thz] {
            if self.contains(b) {
                if !first {
                    f.write_str("|")?;
                }
                write!(f, "{b}")?;
                first = false;
            }
        }
        if first {
            f.write_str("none")?;
        }
        Ok(())
    }
}

/// Whether a surface can reposition itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Mobility {
    Static = 0,
    Mobile = 1,
}

impl Mobility {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mobility::Static),
            1 => Some(Mobility::Mobile),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }
}

/// Everything a station needs to know about a reflecting surface.
///
/// Serialized on the wire in fixed point: positions and dimensions in
/// centimeters, speeds in cm/s. Values on the centimeter grid survive the
/// round trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsnDescriptor<T = f64> {
    pub addr: Ipv6Addr,
    pub width_m: T,
    pub height_m: T,
    pub n_elements: u32,
    pub power_idle_mw: T,
    pub power_active_mw: T,
    pub bands: BandSet,
    pub n_patterns: u16,
    pub mobility: Mobility,
    pub max_speed_mps: T,
    pub max_switch_hz: T,
    pub position: Position<T>,
    pub battery_pct: u8,
    pub mac: MacAddr,
}

impl<T: Real> IrsnDescriptor<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_elements == 0 {
            return Err(ModelError::InvalidDescriptor("n_elements must be >= 1"));
        }
        if self.bands.is_empty() {
            return Err(ModelError::InvalidDescriptor("bands must be nonempty"));
        }
        if self.battery_pct > 100 {
            return Err(ModelError::InvalidDescriptor("battery_pct above 100"));
        }
        if self.mobility == Mobility::Static && self.max_speed_mps != T::zero() {
            return Err(ModelError::InvalidDescriptor(
                "static surface with nonzero max_speed",
            ));
        }
        Ok(())
    }
}

/// Identity a station advertises to transmitters and surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct IrssDescriptor<T = f64> {
    pub addr: Ipv6Addr,
    pub server_addr: Ipv6Addr,
    /// Supported versions of the request, localization and command exchanges.
    pub proto_versions: [u8; 3],
    pub optimizer_version: u16,
    pub position: Position<T>,
    pub mac: MacAddr,
}

// ============================================================================
// Fixed-point unit helpers (wire <-> model)
// ============================================================================

/// Meters to signed centimeters, rounding half away from zero.
pub fn m_to_cm_i32(m: f64) -> Option<i32> {
    let cm = (m * 100.0).round();
    if cm >= i32::MIN as f64 && cm <= i32::MAX as f64 {
        Some(cm as i32)
    } else {
        None
    }
}

/// Meters to unsigned centimeters (dimensions, speeds).
pub fn m_to_cm_u32(m: f64) -> Option<u32> {
    let cm = (m * 100.0).round();
    if (0.0..=u32::MAX as f64).contains(&cm) {
        Some(cm as u32)
    } else {
        None
    }
}

pub fn cm_to_m(cm: i32) -> f64 {
    cm as f64 / 100.0
}

pub fn position_to_cm(p: Position<f64>) -> Option<[i32; 3]> {
    Some([m_to_cm_i32(p.x)?, m_to_cm_i32(p.y)?, m_to_cm_i32(p.z)?])
}

pub fn position_from_cm(cm: [i32; 3]) -> Position<f64> {
    Position::new(cm_to_m(cm[0]), cm_to_m(cm[1]), cm_to_m(cm[2]))
}

// ============================================================================
// Propagation
// ============================================================================

/// Free-space path loss in dB:
/// `20 log10(d) + 20 log10(f) + 20 log10(4 pi / c)`.
pub fn fspl_db<T: Real>(distance_m: T, frequency_hz: T) -> Result<T, ModelError> {
    if distance_m <= T::zero() {
        return Err(ModelError::NonPositiveInput("distance_m"));
    }
    if frequency_hz <= T::zero() {
        return Err(ModelError::NonPositiveInput("frequency_hz"));
    }
    let k = T::of(4.0) * T::PI() / T::of(SPEED_OF_LIGHT_M_S);
    let twenty = T::of(20.0);
    Ok(twenty * distance_m.log10() + twenty * frequency_hz.log10() + twenty * k.log10())
}

/// Aperture gain of an `n`-element surface: `20 log10(n) + g0`.
///
/// `g0` is the per-deployment element/geometry factor; 0 dB models ideal
/// isotropic elements.
pub fn array_gain_db<T: Real>(n_elements: u32, g0_db: T) -> Result<T, ModelError> {
    if n_elements == 0 {
        return Err(ModelError::NonPositiveInput("n_elements"));
    }
    Ok(T::of(20.0) * T::of(n_elements as f64).log10() + g0_db)
}

/// SINR in dB for a given end-to-end loss.
///
/// `interference_dbm` is an optional co-channel interferer, summed with the
/// noise floor in linear power. An infinite loss (blocked path) yields
/// `-inf`.
pub fn sinr_db<T: Real>(
    tx_power_dbm: T,
    total_loss_db: T,
    noise_dbm: T,
    interference_dbm: Option<T>,
) -> T {
    if total_loss_db == T::infinity() {
        return T::neg_infinity();
    }
    let received_dbm = tx_power_dbm - total_loss_db;
    let ten = T::of(10.0);
    let mut denom_mw = ten.powf(noise_dbm / ten);
    if let Some(i) = interference_dbm {
        denom_mw = denom_mw + ten.powf(i / ten);
    }
    received_dbm - ten * denom_mw.log10()
}

/// Radio parameters shared by every segment of a budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams<T = f64> {
    pub frequency_hz: T,
    pub tx_power_dbm: T,
    pub noise_dbm: T,
    pub interference_dbm: Option<T>,
    /// Per-element gain offset applied inside [`array_gain_db`].
    pub element_gain_db: T,
}

/// One hop of a (possibly reflected) path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T = f64> {
    pub from: Position<T>,
    pub to: Position<T>,
    pub loss_db: T,
}

/// End-to-end budget of `tx -> n1 -> ... -> nk -> rx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget<T = f64> {
    pub segments: Vec<Segment<T>>,
    /// Sum of segment losses minus the chain's aperture gains; `+inf` when
    /// any segment is blocked.
    pub total_loss_db: T,
    /// Sum of the chain members' aperture gains.
    pub array_gain_db: T,
    pub sinr_db: T,
    pub blocked: bool,
}

/// Computes the chained free-space budget through `chain`, in order.
///
/// An empty chain is the direct link. Any blocked segment blocks the whole
/// budget (`total_loss_db = +inf`, `sinr_db = -inf`).
pub fn link_budget<T: Real>(
    tx: Position<T>,
    rx: Position<T>,
    chain: &[&IrsnDescriptor<T>],
    radio: &RadioParams<T>,
    obstacles: &[Obstacle<T>],
) -> Result<LinkBudget<T>, ModelError> {
    let mut waypoints = Vec::with_capacity(chain.len() + 2);
    waypoints.push(tx);
    waypoints.extend(chain.iter().map(|n| n.position));
    waypoints.push(rx);

    let mut segments = Vec::with_capacity(waypoints.len() - 1);
    let mut loss_sum = T::zero();
    let mut blocked = false;
    for pair in waypoints.windows(2) {
        let clear = is_los(pair[0], pair[1], obstacles)?;
        let loss = if clear {
            fspl_db(pair[0].distance(pair[1]), radio.frequency_hz)?
        } else {
            T::infinity()
        };
        blocked |= !clear;
        loss_sum = loss_sum + loss;
        segments.push(Segment {
            from: pair[0],
            to: pair[1],
            loss_db: loss,
        });
    }

    let mut gain = T::zero();
    for node in chain {
        gain = gain + array_gain_db(node.n_elements, radio.element_gain_db)?;
    }

    let total = if blocked { T::infinity() } else { loss_sum - gain };
    Ok(LinkBudget {
        segments,
        total_loss_db: total,
        array_gain_db: gain,
        sinr_db: sinr_db(
            radio.tx_power_dbm,
            total,
            radio.noise_dbm,
            radio.interference_dbm,
        ),
        blocked,
    })
}

// ============================================================================
// Tests
// ============================================================================
