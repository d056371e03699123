//! Wire codec: adapted IPv6 base header followed by the IRS control header
//! and one message body.
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-------+---------------+-------------------------------+
//! |  = 6  | traffic class |          flow label (20)      |
//! +-------+---------------+-------+---------------+-------+
//! |        payload length         |  next = 253   |  hops |
//! +-------------------------------+---------------+-------+
//! |                     source (128)                      |
//! |                  destination (128)                    |
//! +---------------+---------------+-----------------------+
//! | proto ver = 1 | message type  |      body length      |
//! +---------------+---------------+-----------------------+
//! |                      body ...                         |
//! +-------------------------------------------------------+
//! ```
//!
//! All multi-byte fields are big-endian. Angles travel as centi-degrees,
//! power as deci-dB / deci-dBm, positions as centimeters, time as
//! microseconds. Lists are an 8-bit count followed by fixed-size records.
//! The decoder rejects anything malformed instead of guessing; in
//! particular a packet must be framed exactly (no trailing bytes) and every
//! enumerated field must carry a known code.

use std::net::Ipv6Addr;

use thiserror::Error;

use crate::model::{cm_to_m, m_to_cm_u32, BandSet, IrsnDescriptor, MacAddr, Mobility};

/// IPv6 next-header value claimed by the IRS protocol.
pub const IRS_NEXT_HEADER: u8 = 253;
/// Version written into (and required in) the IRS control header.
pub const PROTO_VERSION: u8 = 1;
/// Fixed size of the adapted IPv6 base header.
pub const IPV6_HEADER_LEN: usize = 40;
/// Fixed size of the IRS control header.
pub const IRS_HEADER_LEN: usize = 4;
/// Largest body that still fits the 16-bit IPv6 payload length.
pub const MAX_BODY_LEN: usize = u16::MAX as usize - IRS_HEADER_LEN;

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("body of {len} bytes exceeds the {MAX_BODY_LEN} byte maximum")]
    OversizeBody { len: usize },
    #[error("truncated packet: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("not an IPv6 packet (version nibble {version})")]
    NotIpv6 { version: u8 },
    #[error("not an IRS packet (next header {next_header})")]
    NotIrsProtocol { next_header: u8 },
    #[error("unsupported IRS protocol version {version}")]
    UnsupportedVersion { version: u8 },
    #[error("unknown message type 0x{code:02x}")]
    UnknownMessageType { code: u8 },
    #[error("length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid value in field {field}")]
    InvalidValue { field: &'static str },
    #[error("field {field} does not fit its wire representation")]
    FieldOutOfRange { field: &'static str },
}

// ============================================================================
// Adapted IPv6 header
// ============================================================================

/// The 40-byte base header. `payload_length` and `next_header` belong to the
/// codec: [`encode_packet`] always writes the computed length and
/// [`IRS_NEXT_HEADER`], whatever the struct holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv6Header {
    /// Priority class; higher classes are decided first at a station.
    pub traffic_class: u8,
    /// 20-bit session marker tying a packet to a flow.
    pub flow_label: u32,
    pub payload_length: u16,
    pub next_header: u8,
    /// Forwarding budget; a packet is dropped when it cannot be decremented.
    pub hop_limit: u8,
    pub source: Ipv6Addr,
    pub destination: Ipv6Addr,
}

impl Ipv6Header {
    pub const VERSION: u8 = 6;

    pub fn new(
        traffic_class: u8,
        flow_label: u32,
        hop_limit: u8,
        source: Ipv6Addr,
        destination: Ipv6Addr,
    ) -> Self {
        Self {
            traffic_class,
            flow_label,
            payload_length: 0,
            next_header: IRS_NEXT_HEADER,
            hop_limit,
            source,
            destination,
        }
    }
}

// ============================================================================
// Message type registry
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    ServiceRequest = 0x01,
    ServiceConfirmation = 0x02,
    ServiceDenial = 0x03,
    LocalizationQuery = 0x04,
    LocalizationReport = 0x05,
    Command = 0x06,
    Status = 0x07,
    IrsnAdvertisement = 0x08,
    IrssSolicitation = 0x09,
    IrssAdvertisement = 0x0A,
    ServerUpdate = 0x0B,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::ServiceRequest),
            0x02 => Some(Self::ServiceConfirmation),
            0x03 => Some(Self::ServiceDenial),
            0x04 => Some(Self::LocalizationQuery),
            0x05 => Some(Self::LocalizationReport),
            0x06 => Some(Self::Command),
            0x07 => Some(Self::Status),
            0x08 => Some(Self::IrsnAdvertisement),
            0x09 => Some(Self::IrssSolicitation),
            0x0A => Some(Self::IrssAdvertisement),
            0x0B => Some(Self::ServerUpdate),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }
}

impl std::fmt::Display for MessageType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::ServiceRequest => "ServiceRequest",
            Self::ServiceConfirmation => "ServiceConfirmation",
            Self::ServiceDenial => "ServiceDenial",
            Self::LocalizationQuery => "LocalizationQuery",
            Self::LocalizationReport => "LocalizationReport",
            Self::Command => "Command",
            Self::Status => "Status",
            Self::IrsnAdvertisement => "IrsnAdvertisement",
            Self::IrssSolicitation => "IrssSolicitation",
            Self::IrssAdvertisement => "IrssAdvertisement",
            Self::ServerUpdate => "ServerUpdate",
        };
        f.write_str(s)
    }
}

// ============================================================================
// Message bodies
// ============================================================================

/// Per-term weights of the station's objective, 0..=255 each. At least one
/// must be nonzero; only their ratios matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Weights {
    pub sinr: u8,
    pub latency: u8,
    pub secrecy: u8,
    pub power: u8,
}

impl Weights {
    pub fn is_all_zero(&self) -> bool {
        self.sinr == 0 && self.latency == 0 && self.secrecy == 0 && self.power == 0
    }
}

/// Transmitter asking a station for reflected service. 35-byte body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRequest {
    pub service_duration_ms: u32,
    pub target_rx_addr: Ipv6Addr,
    /// Opaque modulation code agreed out of band.
    pub modulation: u8,
    pub mimo_rank: u8,
    pub band: crate::model::Band,
    pub tx_power_ddbm: i16,
    pub min_sinr_ddb: i16,
    pub weights: Weights,
    pub wpt: bool,
    pub localization: bool,
    /// Required localization accuracy; must be nonzero when `localization`.
    pub error_bound_cm: u16,
}

/// One surface's part in a confirmed service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub irsn_addr: Ipv6Addr,
    pub pattern_id: u16,
    pub activate_time_us: u64,
}

/// Station's positive answer: when to transmit and who reflects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfirmation {
    pub tx_start_time_us: u64,
    pub duration_ms: u32,
    /// Nonempty; every activation is at or before `tx_start_time_us`.
    pub assignments: Vec<Assignment>,
}

/// Why a station refused a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DenialReason {
    NoCandidates = 0,
    NoImprovement = 1,
    CostOutweighsGain = 2,
    EnergyBudget = 3,
    MobilityInfeasible = 4,
}

impl DenialReason {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::NoCandidates),
            1 => Some(Self::NoImprovement),
            2 => Some(Self::CostOutweighsGain),
            3 => Some(Self::EnergyBudget),
            4 => Some(Self::MobilityInfeasible),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }
}

impl std::fmt::Display for DenialReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::NoCandidates => "NoCandidates",
            Self::NoImprovement => "NoImprovement",
            Self::CostOutweighsGain => "CostOutweighsGain",
            Self::EnergyBudget => "EnergyBudget",
            Self::MobilityInfeasible => "MobilityInfeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceDenial {
    pub reason: DenialReason,
}

/// Station asking a receiver for angular sweep measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalizationQuery {
    pub session: u32,
    /// How many anchors to measure against; at least one.
    pub sweep_count: u8,
}

/// One anchor's angle-of-arrival / round-trip-time fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measurement {
    pub irsn_addr: Ipv6Addr,
    /// Bearing in the x-y plane, centi-degrees.
    pub aoa_cdeg: i16,
    /// Round-trip time of flight, nanoseconds.
    pub tof_ns: u32,
    pub rssi_ddb: i16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalizationReport {
    pub session: u32,
    pub measurements: Vec<Measurement>,
}

/// Pattern switch scheduled on a surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    /// 0 is the reserved inert pattern.
    pub pattern_id: u16,
    pub activate_time_us: u64,
}

/// Station instructing a surface: pattern schedule and optional relocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    /// Strictly increasing activation timestamps.
    pub schedule: Vec<ScheduleEntry>,
    pub relocate: bool,
    pub target_position_cm: [i32; 3],
}

/// Surface heartbeat / command acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Status {
    pub availability: u8,
    pub battery_pct: u8,
    pub position_cm: [i32; 3],
    pub active_pattern: u16,
    pub timestamp_us: u64,
}

/// Surface joining (or refreshing) a station's registry. The body is the
/// fixed-point serialization of [`IrsnDescriptor`].
#[derive(Debug, Clone, PartialEq)]
pub struct IrsnAdvertisement {
    pub descriptor: IrsnDescriptor,
}

/// "Any station around?" Sent by parentless surfaces and by transmitters
/// looking for service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrssSolicitation {
    pub position_cm: [i32; 3],
}

/// Station identity offered in reply to a solicitation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrssAdvertisement {
    pub server_addr: Ipv6Addr,
    pub proto_versions: [u8; 3],
    pub optimizer_version: u16,
    pub position_cm: [i32; 3],
    pub mac: MacAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum UpdateKind {
    ProtocolDefs = 0,
    Optimizer = 1,
}

impl UpdateKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::ProtocolDefs),
            1 => Some(Self::Optimizer),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }
}

/// Server pushing a new protocol or optimizer version to its stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerUpdate {
    pub kind: UpdateKind,
    pub new_version: u16,
}

/// Every message the protocol can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum IrsMessage {
    ServiceRequest(ServiceRequest),
    ServiceConfirmation(ServiceConfirmation),
    ServiceDenial(ServiceDenial),
    LocalizationQuery(LocalizationQuery),
    LocalizationReport(LocalizationReport),
    Command(Command),
    Status(Status),
    IrsnAdvertisement(IrsnAdvertisement),
    IrssSolicitation(IrssSolicitation),
    IrssAdvertisement(IrssAdvertisement),
    ServerUpdate(ServerUpdate),
}

impl IrsMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            Self::ServiceRequest(_) => MessageType::ServiceRequest,
            Self::ServiceConfirmation(_) => MessageType::ServiceConfirmation,
            Self::ServiceDenial(_) => MessageType::ServiceDenial,
            Self::LocalizationQuery(_) => MessageType::LocalizationQuery,
            Self::LocalizationReport(_) => MessageType::LocalizationReport,
            Self::Command(_) => MessageType::Command,
            Self::Status(_) => MessageType::Status,
            Self::IrsnAdvertisement(_) => MessageType::IrsnAdvertisement,
            Self::IrssSolicitation(_) => MessageType::IrssSolicitation,
            Self::IrssAdvertisement(_) => MessageType::IrssAdvertisement,
            Self::ServerUpdate(_) => MessageType::ServerUpdate,
        }
    }
}

// ============================================================================
// Byte reader / writer
// ============================================================================

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Truncated {
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16, WireError> {
        Ok(i16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, WireError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn addr(&mut self) -> Result<Ipv6Addr, WireError> {
        let o: [u8; 16] = self.take(16)?.try_into().unwrap();
        Ok(Ipv6Addr::from(o))
    }

    fn mac(&mut self) -> Result<MacAddr, WireError> {
        Ok(MacAddr(self.take(6)?.try_into().unwrap()))
    }

    fn position_cm(&mut self) -> Result<[i32; 3], WireError> {
        Ok([self.i32()?, self.i32()?, self.i32()?])
    }

    fn bool_flag(&mut self, field: &'static str) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::InvalidValue { field }),
        }
    }

    fn finish(self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::LengthMismatch {
                expected: self.pos,
                found: self.buf.len(),
            });
        }
        Ok(())
    }
}

trait PutBytes {
    fn u8(&mut self, v: u8);
    fn u16(&mut self, v: u16);
    fn i16(&mut self, v: i16);
    fn u32(&mut self, v: u32);
    fn i32(&mut self, v: i32);
    fn u64(&mut self, v: u64);
    fn addr(&mut self, v: Ipv6Addr);
    fn position_cm(&mut self, v: [i32; 3]);
}

impl PutBytes for Vec<u8> {
    fn u8(&mut self, v: u8) {
        self.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.extend_from_slice(&v.to_be_bytes());
    }
    fn i16(&mut self, v: i16) {
        self.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.extend_from_slice(&v.to_be_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.extend_from_slice(&v.to_be_bytes());
    }
    fn addr(&mut self, v: Ipv6Addr) {
        self.extend_from_slice(&v.octets());
    }
    fn position_cm(&mut self, v: [i32; 3]) {
        self.i32(v[0]);
        self.i32(v[1]);
        self.i32(v[2]);
    }
}

fn list_count(len: usize, field: &'static str) -> Result<u8, WireError> {
    u8::try_from(len).map_err(|_| WireError::FieldOutOfRange { field })
}

// ============================================================================
// Body codecs
// ============================================================================

impl IrsMessage {
    fn encode_body(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        match self {
            Self::ServiceRequest(m) => {
                out.u32(m.service_duration_ms);
                out.addr(m.target_rx_addr);
                out.u8(m.modulation);
                out.u8(m.mimo_rank);
                out.u8(m.band.to_byte());
                out.i16(m.tx_power_ddbm);
                out.i16(m.min_sinr_ddb);
                out.u8(m.weights.sinr);
                out.u8(m.weights.latency);
                out.u8(m.weights.secrecy);
                out.u8(m.weights.power);
                out.u8(m.wpt as u8);
                out.u8(m.localization as u8);
                out.u16(m.error_bound_cm);
            }
            Self::ServiceConfirmation(m) => {
                out.u64(m.tx_start_time_us);
                out.u32(m.duration_ms);
                out.u8(list_count(m.assignments.len(), "assignments")?);
                for a in &m.assignments {
                    out.addr(a.irsn_addr);
                    out.u16(a.pattern_id);
                    out.u64(a.activate_time_us);
                }
            }
            Self::ServiceDenial(m) => out.u8(m.reason.to_byte()),
            Self::LocalizationQuery(m) => {
                out.u32(m.session);
                out.u8(m.sweep_count);
            }
            Self::LocalizationReport(m) => {
                out.u32(m.session);
                out.u8(list_count(m.measurements.len(), "measurements")?);
                for x in &m.measurements {
                    out.addr(x.irsn_addr);
                    out.i16(x.aoa_cdeg);
                    out.u32(x.tof_ns);
                    out.i16(x.rssi_ddb);
                }
            }
            Self::Command(m) => {
                out.u8(list_count(m.schedule.len(), "schedule")?);
                for e in &m.schedule {
                    out.u16(e.pattern_id);
                    out.u64(e.activate_time_us);
                }
                out.u8(m.relocate as u8);
                out.position_cm(m.target_position_cm);
            }
            Self::Status(m) => {
                out.u8(m.availability);
                out.u8(m.battery_pct);
                out.position_cm(m.position_cm);
                out.u16(m.active_pattern);
                out.u64(m.timestamp_us);
            }
            Self::IrsnAdvertisement(m) => encode_descriptor(&m.descriptor, out)?,
            Self::IrssSolicitation(m) => out.position_cm(m.position_cm),
            Self::IrssAdvertisement(m) => {
                out.addr(m.server_addr);
                out.u8(m.proto_versions[0]);
                out.u8(m.proto_versions[1]);
                out.u8(m.proto_versions[2]);
                out.u16(m.optimizer_version);
                out.position_cm(m.position_cm);
                out.extend_from_slice(&m.mac.0);
            }
            Self::ServerUpdate(m) => {
                out.u8(m.kind.to_byte());
                out.u16(m.new_version);
            }
        }
        Ok(())
    }

    fn decode_body(mt: MessageType, body: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(body);
        let msg = match mt {
            MessageType::ServiceRequest => {
                let service_duration_ms = r.u32()?;
                let target_rx_addr = r.addr()?;
                let modulation = r.u8()?;
                let mimo_rank = r.u8()?;
                let band = crate::model::Band::from_byte(r.u8()?)
                    .ok_or(WireError::InvalidValue { field: "band" })?;
                let tx_power_ddbm = r.i16()?;
                let min_sinr_ddb = r.i16()?;
                let weights = Weights {
                    sinr: r.u8()?,
                    latency: r.u8()?,
                    secrecy: r.u8()?,
                    power: r.u8()?,
                };
                let wpt = r.bool_flag("wpt")?;
                let localization = r.bool_flag("localization")?;
                let error_bound_cm = r.u16()?;
                if weights.is_all_zero() {
                    return Err(WireError::InvalidValue { field: "weights" });
                }
                if localization && error_bound_cm == 0 {
                    return Err(WireError::InvalidValue {
                        field: "error_bound_cm",
                    });
                }
                Self::ServiceRequest(ServiceRequest {
                    service_duration_ms,
                    target_rx_addr,
                    modulation,
                    mimo_rank,
                    band,
                    tx_power_ddbm,
                    min_sinr_ddb,
                    weights,
                    wpt,
                    localization,
                    error_bound_cm,
                })
            }
            MessageType::ServiceConfirmation => {
                let tx_start_time_us = r.u64()?;
                let duration_ms = r.u32()?;
                let count = r.u8()? as usize;
                if count == 0 {
                    return Err(WireError::InvalidValue {
                        field: "assignments",
                    });
                }
                let mut assignments = Vec::with_capacity(count);
                for _ in 0..count {
                    let a = Assignment {
                        irsn_addr: r.addr()?,
                        pattern_id: r.u16()?,
                        activate_time_us: r.u64()?,
                    };
                    if a.activate_time_us > tx_start_time_us {
                        return Err(WireError::InvalidValue {
                            field: "activate_time_us",
                        });
                    }
                    assignments.push(a);
                }
                Self::ServiceConfirmation(ServiceConfirmation {
                    tx_start_time_us,
                    duration_ms,
                    assignments,
                })
            }
            MessageType::ServiceDenial => {
                let reason = DenialReason::from_byte(r.u8()?)
                    .ok_or(WireError::InvalidValue { field: "reason" })?;
                Self::ServiceDenial(ServiceDenial { reason })
            }
            MessageType::LocalizationQuery => {
                let session = r.u32()?;
                let sweep_count = r.u8()?;
                if sweep_count == 0 {
                    return Err(WireError::InvalidValue {
                        field: "sweep_count",
                    });
                }
                Self::LocalizationQuery(LocalizationQuery {
                    session,
                    sweep_count,
                })
            }
            MessageType::LocalizationReport => {
                let session = r.u32()?;
                let count = r.u8()? as usize;
                let mut measurements = Vec::with_capacity(count);
                for _ in 0..count {
                    measurements.push(Measurement {
                        irsn_addr: r.addr()?,
                        aoa_cdeg: r.i16()?,
                        tof_ns: r.u32()?,
                        rssi_ddb: r.i16()?,
                    });
                }
                Self::LocalizationReport(LocalizationReport {
                    session,
                    measurements,
                })
            }
            MessageType::Command => {
                let count = r.u8()? as usize;
                let mut schedule = Vec::with_capacity(count);
                let mut prev: Option<u64> = None;
                for _ in 0..count {
                    let e = ScheduleEntry {
                        pattern_id: r.u16()?,
                        activate_time_us: r.u64()?,
                    };
                    if let Some(p) = prev {
                        if e.activate_time_us <= p {
                            return Err(WireError::InvalidValue { field: "schedule" });
                        }
                    }
                    prev = Some(e.activate_time_us);
                    schedule.push(e);
                }
                let relocate = r.bool_flag("relocate")?;
                let target_position_cm = r.position_cm()?;
                Self::Command(Command {
                    schedule,
                    relocate,
                    target_position_cm,
                })
            }
            MessageType::Status => {
                let availability = r.u8()?;
                let battery_pct = r.u8()?;
                if battery_pct > 100 {
                    return Err(WireError::InvalidValue {
                        field: "battery_pct",
                    });
                }
                let position_cm = r.position_cm()?;
                let active_pattern = r.u16()?;
                let timestamp_us = r.u64()?;
                Self::Status(Status {
                    availability,
                    battery_pct,
                    position_cm,
                    active_pattern,
                    timestamp_us,
                })
            }
            MessageType::IrsnAdvertisement => {
                let descriptor = decode_descriptor(&mut r)?;
                Self::IrsnAdvertisement(IrsnAdvertisement { descriptor })
            }
            MessageType::IrssSolicitation => Self::IrssSolicitation(IrssSolicitation {
                position_cm: r.position_cm()?,
            }),
            MessageType::IrssAdvertisement => {
                let server_addr = r.addr()?;
                let proto_versions = [r.u8()?, r.u8()?, r.u8()?];
                let optimizer_version = r.u16()?;
                let position_cm = r.position_cm()?;
                let mac = r.mac()?;
                Self::IrssAdvertisement(IrssAdvertisement {
                    server_addr,
                    proto_versions,
                    optimizer_version,
                    position_cm,
                    mac,
                })
            }
            MessageType::ServerUpdate => {
                let kind = UpdateKind::from_byte(r.u8()?)
                    .ok_or(WireError::InvalidValue { field: "kind" })?;
                let new_version = r.u16()?;
                Self::ServerUpdate(ServerUpdate { kind, new_version })
            }
        };
        r.finish()?;
        Ok(msg)
    }
}

/// 67-byte fixed-point descriptor record.
fn encode_descriptor(d: &IrsnDescriptor, out: &mut Vec<u8>) -> Result<(), WireError> {
    out.addr(d.addr);
    out.u32(m_to_cm_u32(d.width_m).ok_or(WireError::FieldOutOfRange { field: "width_m" })?);
    out.u32(m_to_cm_u32(d.height_m).ok_or(WireError::FieldOutOfRange { field: "height_m" })?);
    out.u32(d.n_elements);
    out.u32(mw_to_u32(d.power_idle_mw, "power_idle_mw")?);
    out.u32(mw_to_u32(d.power_active_mw, "power_active_mw")?);
    out.u8(d.bands.bits());
    out.u16(d.n_patterns);
    out.u8(d.mobility.to_byte());
    out.u32(
        m_to_cm_u32(d.max_speed_mps).ok_or(WireError::FieldOutOfRange {
            field: "max_speed_mps",
        })?,
    );
    out.u32(hz_to_u32(d.max_switch_hz)?);
    out.position_cm(crate::model::position_to_cm(d.position).ok_or(
        WireError::FieldOutOfRange { field: "position" },
    )?);
    out.u8(d.battery_pct);
    out.extend_from_slice(&d.mac.0);
    Ok(())
}

fn decode_descriptor(r: &mut Reader<'_>) -> Result<IrsnDescriptor, WireError> {
    let addr = r.addr()?;
    let width_m = cm_to_m(r.u32()? as i32);
    let height_m = cm_to_m(r.u32()? as i32);
    let n_elements = r.u32()?;
    if n_elements == 0 {
        return Err(WireError::InvalidValue { field: "n_elements" });
    }
    let power_idle_mw = r.u32()? as f64;
    let power_active_mw = r.u32()? as f64;
    let bands = BandSet::from_bits(r.u8()?).ok_or(WireError::InvalidValue { field: "bands" })?;
    let n_patterns = r.u16()?;
    let mobility =
        Mobility::from_byte(r.u8()?).ok_or(WireError::InvalidValue { field: "mobility" })?;
    let max_speed_mps = cm_to_m(r.u32()? as i32);
    if mobility == Mobility::Static && max_speed_mps != 0.0 {
        return Err(WireError::InvalidValue {
            field: "max_speed_mps",
        });
    }
    let max_switch_hz = r.u32()? as f64;
    let position = crate::model::position_from_cm(r.position_cm()?);
    let battery_pct = r.u8()?;
    if battery_pct > 100 {
        return Err(WireError::InvalidValue {
            field: "battery_pct",
        });
    }
    let mac = r.mac()?;
    Ok(IrsnDescriptor {
        addr,
        width_m,
        height_m,
        n_elements,
        power_idle_mw,
        power_active_mw,
        bands,
        n_patterns,
        mobility,
        max_speed_mps,
        max_switch_hz,
        position,
        battery_pct,
        mac,
    })
}

fn mw_to_u32(mw: f64, field: &'static str) -> Result<u32, WireError> {
    let v = mw.round();
    if (0.0..=u32::MAX as f64).contains(&v) {
        Ok(v as u32)
    } else {
        Err(WireError::FieldOutOfRange { field })
    }
}

fn hz_to_u32(hz: f64) -> Result<u32, WireError> {
    let v = hz.round();
    if (0.0..=u32::MAX as f64).contains(&v) {
        Ok(v as u32)
    } else {
        Err(WireError::FieldOutOfRange {
            field: "max_switch_hz",
        })
    }
}

// ============================================================================
// Packet codec
// ============================================================================

/// Serializes a full packet. `payload_length` and `next_header` in `header`
/// are ignored; the codec writes the computed length and the IRS protocol
/// number.
pub fn encode_packet(header: &Ipv6Header, msg: &IrsMessage) -> Result<Vec<u8>, WireError> {
    if header.flow_label > 0x000F_FFFF {
        return Err(WireError::FieldOutOfRange {
            field: "flow_label",
        });
    }
    let mut body = Vec::new();
    msg.encode_body(&mut body)?;
    if body.len() > MAX_BODY_LEN {
        return Err(WireError::OversizeBody { len: body.len() });
    }
    let payload_length = (IRS_HEADER_LEN + body.len()) as u16;

    let mut out = Vec::with_capacity(IPV6_HEADER_LEN + IRS_HEADER_LEN + body.len());
    out.push((Ipv6Header::VERSION << 4) | (header.traffic_class >> 4));
    out.push(((header.traffic_class & 0x0F) << 4) | ((header.flow_label >> 16) as u8 & 0x0F));
    out.u16((header.flow_label & 0xFFFF) as u16);
    out.u16(payload_length);
    out.push(IRS_NEXT_HEADER);
    out.push(header.hop_limit);
    out.addr(header.source);
    out.addr(header.destination);
    out.push(PROTO_VERSION);
    out.push(msg.message_type().to_byte());
    out.u16(body.len() as u16);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses a full packet, rejecting malformed input.
///
/// Length rules: a buffer shorter than the declared frame is `Truncated`;
/// a declared payload that disagrees with the IRS body length, or trailing
/// bytes beyond the frame, are `LengthMismatch`.
pub fn decode_packet(bytes: &[u8]) -> Result<(Ipv6Header, IrsMessage), WireError> {
    if bytes.len() < IPV6_HEADER_LEN {
        return Err(WireError::Truncated {
            needed: IPV6_HEADER_LEN,
            got: bytes.len(),
        });
    }
    let version = bytes[0] >> 4;
    if version != Ipv6Header::VERSION {
        return Err(WireError::NotIpv6 { version });
    }
    let traffic_class = (bytes[0] << 4) | (bytes[1] >> 4);
    let flow_label = (((bytes[1] & 0x0F) as u32) << 16)
        | u16::from_be_bytes([bytes[2], bytes[3]]) as u32;
    let payload_length = u16::from_be_bytes([bytes[4], bytes[5]]);
    let next_header = bytes[6];
    if next_header != IRS_NEXT_HEADER {
        return Err(WireError::NotIrsProtocol { next_header });
    }
    let hop_limit = bytes[7];
    let source = Ipv6Addr::from(<[u8; 16]>::try_from(&bytes[8..24]).unwrap());
    let destination = Ipv6Addr::from(<[u8; 16]>::try_from(&bytes[24..40]).unwrap());

    if bytes.len() < IPV6_HEADER_LEN + IRS_HEADER_LEN {
        return Err(WireError::Truncated {
            needed: IPV6_HEADER_LEN + IRS_HEADER_LEN,
            got: bytes.len(),
        });
    }
    let proto_version = bytes[40];
    if proto_version != PROTO_VERSION {
        return Err(WireError::UnsupportedVersion {
            version: proto_version,
        });
    }
    let type_byte = bytes[41];
    let mt = MessageType::from_byte(type_byte)
        .ok_or(WireError::UnknownMessageType { code: type_byte })?;
    let body_length = u16::from_be_bytes([bytes[42], bytes[43]]) as usize;

    if payload_length as usize != IRS_HEADER_LEN + body_length {
        return Err(WireError::LengthMismatch {
            expected: IRS_HEADER_LEN + body_length,
            found: payload_length as usize,
        });
    }
    let frame = IPV6_HEADER_LEN + IRS_HEADER_LEN + body_length;
    if bytes.len() < frame {
        return Err(WireError::Truncated {
            needed: frame,
            got: bytes.len(),
        });
    }
    if bytes.len() > frame {
        return Err(WireError::LengthMismatch {
            expected: frame,
            found: bytes.len(),
        });
    }

    let msg = IrsMessage::decode_body(mt, &bytes[IPV6_HEADER_LEN + IRS_HEADER_LEN..frame])?;
    let header = Ipv6Header {
        traffic_class,
        flow_label,
        payload_length,
        next_header,
        hop_limit,
        source,
        destination,
    };
    Ok((header, msg))
}

// ============================================================================
// Tests
// ============================================================================
