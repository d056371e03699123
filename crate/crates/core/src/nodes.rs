//! Entity state machines: transmitter flows, reflecting surfaces, and the
//! version-pushing server. Each is a plain actor; it mutates only itself and
//! talks to the world through returned messages.

use std::collections::BTreeMap;
use std::net::Ipv6Addr;

use thiserror::Error;

use crate::model::{position_from_cm, position_to_cm, IrsnDescriptor, Position};
use crate::wire::{
    Command, DenialReason, IrssSolicitation, ScheduleEntry, ServerUpdate, ServiceConfirmation,
    Status, UpdateKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("illegal flow transition {from:?} -> {to:?}")]
    IllegalTransition { from: FlowPhase, to: FlowPhase },
    #[error("no station answered the solicitation")]
    NoIrssFound,
    #[error("command schedules t={activate_time_us} behind now={now_us}")]
    RejectPastTimestamp { activate_time_us: u64, now_us: u64 },
    #[error("update to version {offered} is not ahead of {current}")]
    StaleVersion { current: u16, offered: u16 },
    #[error("flow {0:#x} is not tracked")]
    UnknownFlow(u32),
}

// ============================================================================
// Transmitter
// ============================================================================

/// Lifecycle of one service flow. The only legal walk is
/// Idle → Discovering → Requested → (Confirmed → Transmitting | Denied),
/// with teardown edges back to Idle from Discovering (nobody answered),
/// Denied, and Transmitting (service over).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowPhase {
    Idle,
    Discovering,
    Requested,
    Confirmed,
    Transmitting,
    Denied,
}

impl FlowPhase {
    pub fn can_advance_to(self, next: FlowPhase) -> bool {
        use FlowPhase::*;
        matches!(
            (self, next),
            (Idle, Discovering)
                | (Discovering, Requested)
                | (Discovering, Idle)
                | (Requested, Confirmed)
                | (Requested, Denied)
                | (Confirmed, Transmitting)
                | (Transmitting, Idle)
                | (Denied, Idle)
        )
    }
}

/// Per-flow bookkeeping on the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub target_rx: Ipv6Addr,
    pub irss_addr: Option<Ipv6Addr>,
    pub phase: FlowPhase,
    pub confirmation: Option<ServiceConfirmation>,
    pub last_denial: Option<DenialReason>,
}

impl FlowState {
    pub fn new(target_rx: Ipv6Addr) -> Self {
        Self {
            target_rx,
            irss_addr: None,
            phase: FlowPhase::Idle,
            confirmation: None,
            last_denial: None,
        }
    }
}

/// The transmitter actor: watches link quality per flow and walks each flow
/// through the request handshake.
#[derive(Debug, Clone)]
pub struct TxState {
    pub addr: Ipv6Addr,
    pub position: Position,
    /// Measured SINR strictly below this arms a service request.
    pub sinr_threshold_db: f64,
    pub flows: BTreeMap<u32, FlowState>,
}

impl TxState {
    pub fn new(addr: Ipv6Addr, position: Position, sinr_threshold_db: f64) -> Self {
        Self {
            addr,
            position,
            sinr_threshold_db,
            flows: BTreeMap::new(),
        }
    }

    pub fn flow(&self, label: u32) -> Result<&FlowState, NodeError> {
        self.flows.get(&label).ok_or(NodeError::UnknownFlow(label))
    }

    fn flow_mut(&mut self, label: u32) -> Result<&mut FlowState, NodeError> {
        self.flows
            .get_mut(&label)
            .ok_or(NodeError::UnknownFlow(label))
    }

    /// Moves a flow along one legal edge; anything else is refused.
    pub fn set_phase(&mut self, label: u32, next: FlowPhase) -> Result<(), NodeError> {
        let flow = self.flow_mut(label)?;
        if !flow.phase.can_advance_to(next) {
            return Err(NodeError::IllegalTransition {
                from: flow.phase,
                to: next,
            });
        }
        flow.phase = next;
        Ok(())
    }

    /// Degradation trigger: an idle flow whose measured SINR falls strictly
    /// below the threshold starts discovering a station. Returns true when
    /// the flow armed (the caller then broadcasts a solicitation).
    pub fn on_degradation(&mut self, label: u32, measured_sinr_db: f64) -> Result<bool, NodeError> {
        let threshold = self.sinr_threshold_db;
        let flow = self.flow_mut(label)?;
        if flow.phase != FlowPhase::Idle || measured_sinr_db >= threshold {
            return Ok(false);
        }
        flow.phase = FlowPhase::Discovering;
        Ok(true)
    }

    /// Picks the nearest answering station; ties go to the smaller address.
    pub fn choose_irss(
        &self,
        candidates: &[(Ipv6Addr, Position)],
    ) -> Result<Ipv6Addr, NodeError> {
        candidates
            .iter()
            .min_by(|a, b| {
                self.position
                    .distance(a.1)
                    .partial_cmp(&self.position.distance(b.1))
                    .unwrap()
                    .then_with(|| a.0.cmp(&b.0))
            })
            .map(|(addr, _)| *addr)
            .ok_or(NodeError::NoIrssFound)
    }

    /// Discovery finished: bind the flow to its station and mark the
    /// request sent.
    pub fn bind_irss(&mut self, label: u32, irss: Ipv6Addr) -> Result<(), NodeError> {
        self.set_phase(label, FlowPhase::Requested)?;
        self.flow_mut(label)?.irss_addr = Some(irss);
        Ok(())
    }

    pub fn apply_confirmation(
        &mut self,
        label: u32,
        confirmation: ServiceConfirmation,
    ) -> Result<(), NodeError> {
        self.set_phase(label, FlowPhase::Confirmed)?;
        self.flow_mut(label)?.confirmation = Some(confirmation);
        Ok(())
    }

    pub fn apply_denial(&mut self, label: u32, reason: DenialReason) -> Result<(), NodeError> {
        self.set_phase(label, FlowPhase::Denied)?;
        self.flow_mut(label)?.last_denial = Some(reason);
        Ok(())
    }

    /// Confirmed flows start transmitting once the scheduled start arrives;
    /// called early, this is a no-op returning false.
    pub fn begin_transmitting(&mut self, label: u32, now_us: u64) -> Result<bool, NodeError> {
        let flow = self.flow_mut(label)?;
        if flow.phase != FlowPhase::Confirmed {
            return Err(NodeError::IllegalTransition {
                from: flow.phase,
                to: FlowPhase::Transmitting,
            });
        }
        let start = flow
            .confirmation
            .as_ref()
            .map(|c| c.tx_start_time_us)
            .unwrap_or(0);
        if now_us < start {
            return Ok(false);
        }
        flow.phase = FlowPhase::Transmitting;
        Ok(true)
    }
}

// ============================================================================
// Reflecting surface
// ============================================================================

/// An in-progress relocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub target: Position,
    pub speed_mps: f64,
}

/// Messages a surface tick wants sent.
#[derive(Debug, Clone, PartialEq)]
pub enum IrsnOutput {
    Status(Status),
    Solicit(IrssSolicitation),
}

/// The reflecting-surface actor: executes pattern schedules, relocates, and
/// heartbeats to its parent station.
#[derive(Debug, Clone)]
pub struct IrsnState {
    pub descriptor: IrsnDescriptor,
    /// Pattern activations sorted by time; the active pattern at `t` is the
    /// last entry at or before `t`, or the inert pattern 0.
    pub schedule: Vec<ScheduleEntry>,
    pub motion: Option<Motion>,
    pub parent_irss: Option<Ipv6Addr>,
    pub heartbeat_period_us: u64,
    last_tick_us: u64,
    next_heartbeat_us: u64,
}

impl IrsnState {
    pub fn new(descriptor: IrsnDescriptor, heartbeat_period_us: u64) -> Self {
        Self {
            descriptor,
            schedule: Vec::new(),
            motion: None,
            parent_irss: None,
            heartbeat_period_us,
            last_tick_us: 0,
            next_heartbeat_us: heartbeat_period_us,
        }
    }

    /// Pure function of (schedule, t).
    pub fn active_pattern(&self, t_us: u64) -> u16 {
        self.schedule
            .iter()
            .take_while(|e| e.activate_time_us <= t_us)
            .last()
            .map_or(0, |e| e.pattern_id)
    }

    pub fn make_status(&self, now_us: u64) -> Status {
        Status {
            availability: 1,
            battery_pct: self.descriptor.battery_pct,
            position_cm: position_to_cm(self.descriptor.position).unwrap_or([0, 0, 0]),
            active_pattern: self.active_pattern(now_us),
            timestamp_us: now_us,
        }
    }

    /// Merges a command into the running schedule (same-timestamp entries
    /// are replaced) and arms relocation. The returned Status is the
    /// acknowledgement; exactly one per accepted command.
    pub fn apply_command(&mut self, cmd: &Command, now_us: u64) -> Result<Status, NodeError> {
        if let Some(e) = cmd.schedule.iter().find(|e| e.activate_time_us < now_us) {
            return Err(NodeError::RejectPastTimestamp {
                activate_time_us: e.activate_time_us,
                now_us,
            });
        }
        for e in &cmd.schedule {
            match self
                .schedule
                .binary_search_by_key(&e.activate_time_us, |s| s.activate_time_us)
            {
                Ok(i) => self.schedule[i] = *e,
                Err(i) => self.schedule.insert(i, *e),
            }
        }
        if cmd.relocate {
            self.motion = Some(Motion {
                target: position_from_cm(cmd.target_position_cm),
                speed_mps: self.descriptor.max_speed_mps,
            });
        }
        Ok(self.make_status(now_us))
    }

    /// Advances motion and emits whatever is due: a Status on relocation
    /// arrival, the periodic heartbeat, and a solicitation while orphaned.
    pub fn tick(&mut self, now_us: u64) -> Vec<IrsnOutput> {
        let dt_s = now_us.saturating_sub(self.last_tick_us) as f64 / 1e6;
        self.last_tick_us = now_us;
        let mut out = Vec::new();

        if let Some(motion) = self.motion {
            let here = self.descriptor.position;
            let dist = here.distance(motion.target);
            let step = motion.speed_mps * dt_s;
            if step >= dist || dist == 0.0 {
                self.descriptor.position = motion.target;
                self.motion = None;
                out.push(IrsnOutput::Status(self.make_status(now_us)));
            } else {
                let dir = motion.target.sub(here).scale(1.0 / dist);
                self.descriptor.position = here.add(dir.scale(step));
            }
        }

        if self.heartbeat_period_us > 0 && now_us >= self.next_heartbeat_us {
            out.push(IrsnOutput::Status(self.make_status(now_us)));
            // Re-anchor instead of bursting if ticks were sparse.
            self.next_heartbeat_us = now_us + self.heartbeat_period_us;
        }

        if self.parent_irss.is_none() {
            out.push(IrsnOutput::Solicit(IrssSolicitation {
                position_cm: position_to_cm(self.descriptor.position).unwrap_or([0, 0, 0]),
            }));
        }
        out
    }

    pub fn adopt(&mut self, parent: Ipv6Addr) {
        self.parent_irss = Some(parent);
    }
}

// ============================================================================
// Server
// ============================================================================

/// The root server: tracks its stations and pushes monotonically increasing
/// protocol and optimizer versions to them.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub addr: Ipv6Addr,
    pub children: Vec<Ipv6Addr>,
    pub protocol_defs_version: u16,
    pub optimizer_version: u16,
}

impl ServerState {
    pub fn new(addr: Ipv6Addr) -> Self {
        Self {
            addr,
            children: Vec::new(),
            protocol_defs_version: 1,
            optimizer_version: 1,
        }
    }

    pub fn push_update(
        &mut self,
        kind: UpdateKind,
        new_version: u16,
    ) -> Result<Vec<(Ipv6Addr, ServerUpdate)>, NodeError> {
        let current = match kind {
            UpdateKind::ProtocolDefs => &mut self.protocol_defs_version,
            UpdateKind::Optimizer => &mut self.optimizer_version,
        };
        if new_version <= *current {
            return Err(NodeError::StaleVersion {
                current: *current,
                offered: new_version,
            });
        }
        *current = new_version;
        let msg = ServerUpdate { kind, new_version };
        Ok(self.children.iter().map(|&c| (c, msg)).collect())
    }
}

// ============================================================================
// Tests
// ============================================================================
