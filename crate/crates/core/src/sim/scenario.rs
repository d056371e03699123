//! Scenario files: the JSON schema, defaults, and the validation pass that
//! turns a parsed file into something the world builder can trust. Every
//! validation failure names the offending field by path.

use std::collections::BTreeSet;
use std::net::Ipv6Addr;

use serde::Deserialize;
use thiserror::Error;

use crate::graphroute::Ephemeris;
use crate::model::{Band, BandSet, MacAddr, Mobility, Obstacle, Position};
use crate::wire::Weights;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("{path}: {reason}")]
    InvalidScenario { path: String, reason: String },
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidScenario {
        path: path.into(),
        reason: reason.into(),
    }
}

// ============================================================================
// Raw schema
// ============================================================================

/// Entity records are flat: one struct covers every kind, and validation
/// rejects fields that do not belong to the declared kind. A tagged enum
/// would read nicer but serde cannot reject unknown keys inside internally
/// tagged variants, and the schema promises strict checking.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub kind: String,
    pub addr: Ipv6Addr,
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    /// Transmitters only: measured SINR below this arms a service request.
    #[serde(default)]
    pub sinr_threshold_db: Option<f64>,
    // Reflecting-surface descriptor fields.
    #[serde(default)]
    pub width_m: Option<f64>,
    #[serde(default)]
    pub height_m: Option<f64>,
    #[serde(default)]
    pub n_elements: Option<u32>,
    #[serde(default)]
    pub power_idle_mw: Option<f64>,
    #[serde(default)]
    pub power_active_mw: Option<f64>,
    #[serde(default)]
    pub bands: Option<Vec<String>>,
    #[serde(default)]
    pub n_patterns: Option<u16>,
    #[serde(default)]
    pub max_speed_mps: Option<f64>,
    #[serde(default)]
    pub max_switch_hz: Option<f64>,
    #[serde(default)]
    pub battery_pct: Option<u8>,
    /// Reflecting surfaces only: the node stops responding (and reflecting)
    /// at this time.
    #[serde(default)]
    pub fail_at_us: Option<u64>,
    #[serde(default)]
    pub orbit: Option<OrbitSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub radius_m: f64,
    pub angular_rate_rad_s: f64,
    #[serde(default)]
    pub phase_rad: f64,
    #[serde(default = "default_basis_u")]
    pub basis_u: [f64; 3],
    #[serde(default = "default_basis_v")]
    pub basis_v: [f64; 3],
}

fn default_basis_u() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_basis_v() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub shape: String,
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    #[serde(default)]
    pub radius_m: Option<f64>,
    #[serde(default)]
    pub min: Option<[f64; 3]>,
    #[serde(default)]
    pub max: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub tx: Ipv6Addr,
    pub rx: Ipv6Addr,
    pub flow_label: u32,
    #[serde(default)]
    pub start_us: u64,
    #[serde(default)]
    pub traffic_class: u8,
    #[serde(default = "default_duration_ms")]
    pub duration_ms: u32,
    #[serde(default = "default_band")]
    pub band: String,
    #[serde(default = "default_weights")]
    pub weights: WeightsSpec,
    #[serde(default = "default_min_sinr_db")]
    pub min_sinr_db: f64,
    #[serde(default)]
    pub wpt: bool,
    #[serde(default)]
    pub localization: bool,
    #[serde(default)]
    pub error_bound_cm: u16,
}

fn default_duration_ms() -> u32 {
    2_000
}

fn default_band() -> String {
    "mmwave".into()
}

fn default_min_sinr_db() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    #[serde(default)]
    pub sinr: u8,
    #[serde(default)]
    pub latency: u8,
    #[serde(default)]
    pub secrecy: u8,
    #[serde(default)]
    pub power: u8,
}

fn default_weights() -> WeightsSpec {
    WeightsSpec {
        sinr: 255,
        latency: 32,
        secrecy: 0,
        power: 32,
    }
}

/// Run-wide knobs. Every field has a default so a minimal scenario runs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigSpec {
    pub frequency_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub element_gain_db: f64,
    pub seed: u64,
    pub until_us: u64,
    pub measure_period_us: u64,
    pub heartbeat_period_us: u64,
    pub registry_timeout_us: u64,
    pub proc_delay_us: u64,
    pub guard_us: u64,
    pub command_prep_us: u64,
    pub discovery_window_us: u64,
    pub hop_limit: u8,
    pub k_max: usize,
    pub min_gain_threshold: f64,
    pub battery_floor_pct: u8,
    pub battery_capacity_mwh: f64,
    pub relocation_deadline_s: f64,
    pub relocation_grid_step_m: f64,
    pub relocation_max_radius_m: f64,
    pub null_depth_db: f64,
    pub null_beamwidth_rad: f64,
    pub beam_step_rad: f64,
    pub predictive_handover: bool,
    pub handover_step_us: u64,
    pub measurement_noise_db: f64,
    pub bearing_noise_deg: f64,
    pub tof_noise_ns: f64,
    pub max_anchors: usize,
    /// Direct radio reach; farther packets hop through intermediate
    /// entities. Absent means unlimited.
    pub radio_range_m: Option<f64>,
}

impl Default for ConfigSpec {
    fn default() -> Self {
        Self {
            frequency_hz: 28e9,
            tx_power_dbm: 30.0,
            noise_dbm: -90.0,
            element_gain_db: 0.0,
            seed: 0,
            until_us: 10_000_000,
            measure_period_us: 100_000,
            heartbeat_period_us: 1_000_000,
            registry_timeout_us: 3_000_000,
            proc_delay_us: 100,
            guard_us: 1_000,
            command_prep_us: 1_000,
            discovery_window_us: 5_000,
            hop_limit: 64,
            k_max: 3,
            min_gain_threshold: 0.01,
            battery_floor_pct: 5,
            battery_capacity_mwh: 1_000.0,
            relocation_deadline_s: 10.0,
            relocation_grid_step_m: 1.0,
            relocation_max_radius_m: 50.0,
            null_depth_db: 20.0,
            null_beamwidth_rad: 0.017,
            beam_step_rad: 0.001,
            predictive_handover: true,
            handover_step_us: 1_000_000,
            measurement_noise_db: 0.0,
            bearing_noise_deg: 0.0,
            tof_noise_ns: 0.0,
            max_anchors: 8,
            radio_range_m: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub config: ConfigSpec,
}

// ============================================================================
// Validated form
// ============================================================================

#[derive(Debug, Clone)]
pub enum EntityKind {
    Tx {
        sinr_threshold_db: f64,
    },
    Rx,
    Irss,
    Server,
    Irsn {
        descriptor: crate::model::IrsnDescriptor,
        fail_at_us: Option<u64>,
        orbit: Option<Ephemeris>,
    },
    Eavesdropper,
}

#[derive(Debug, Clone)]
pub struct Entity {
    pub addr: Ipv6Addr,
    pub position: Position,
    pub kind: EntityKind,
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub tx: Ipv6Addr,
    pub rx: Ipv6Addr,
    pub flow_label: u32,
    pub start_us: u64,
    pub traffic_class: u8,
    pub duration_ms: u32,
    pub band: Band,
    pub weights: Weights,
    pub min_sinr_db: f64,
    pub wpt: bool,
    pub localization: bool,
    pub error_bound_cm: u16,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub entities: Vec<Entity>,
    pub obstacles: Vec<Obstacle>,
    pub flows: Vec<Flow>,
    pub config: ConfigSpec,
}

pub fn parse_band(s: &str) -> Option<Band> {
    match s {
        "sub6" => Some(Band::Sub6),
        "mmwave" => Some(Band::MmWave),
        "thz" => Some(Band::Thz),
        _ => None,
    }
}

fn pos_of(p: [f64; 3]) -> Position {
    Position::new(p[0], p[1], p[2])
}

/// Last six bytes of the address double as a stable MAC.
fn mac_of(addr: Ipv6Addr) -> MacAddr {
    let o = addr.octets();
    MacAddr([o[10], o[11], o[12], o[13], o[14], o[15]])
}

impl EntitySpec {
    /// Fields that only make sense for reflecting surfaces.
    fn surface_only_fields(&self) -> Vec<&'static str> {
        let mut used = Vec::new();
        if self.width_m.is_some() {
            used.push("width_m");
        }
        if self.height_m.is_some() {
            used.push("height_m");
        }
        if self.n_elements.is_some() {
            used.push("n_elements");
        }
        if self.power_idle_mw.is_some() {
            used.push("power_idle_mw");
        }
        if self.power_active_mw.is_some() {
            used.push("power_active_mw");
        }
        if self.bands.is_some() {
            used.push("bands");
        }
        if self.n_patterns.is_some() {
            used.push("n_patterns");
        }
        if self.max_speed_mps.is_some() {
            used.push("max_speed_mps");
        }
        if self.max_switch_hz.is_some() {
            used.push("max_switch_hz");
        }
        if self.battery_pct.is_some() {
            used.push("battery_pct");
        }
        if self.fail_at_us.is_some() {
            used.push("fail_at_us");
        }
        if self.orbit.is_some() {
            used.push("orbit");
        }
        used
    }
}

fn validate_orbit(spec: &OrbitSpec, path: &str) -> Result<Ephemeris, SimError> {
    if spec.radius_m <= 0.0 {
        return Err(invalid(format!("{path}.radius_m"), "must be positive"));
    }
    let u = pos_of(spec.basis_u);
    let v = pos_of(spec.basis_v);
    if (u.norm() - 1.0).abs() > 1e-6 || (v.norm() - 1.0).abs() > 1e-6 {
        return Err(invalid(
            format!("{path}.basis_u"),
            "basis vectors must be unit length",
        ));
    }
    if u.dot(v).abs() > 1e-6 {
        return Err(invalid(
            format!("{path}.basis_v"),
            "basis vectors must be orthogonal",
        ));
    }
    Ok(Ephemeris {
        orbit_radius_m: spec.radius_m,
        angular_rate_rad_s: spec.angular_rate_rad_s,
        phase_rad: spec.phase_rad,
        basis_u: u,
        basis_v: v,
    })
}

fn validate_entity(spec: &EntitySpec, i: usize) -> Result<Entity, SimError> {
    let path = format!("entities[{i}]");
    let need_position = || {
        spec.position
            .map(pos_of)
            .ok_or_else(|| invalid(format!("{path}.position"), "required for this kind"))
    };
    if spec.kind != "irsn" {
        if let Some(field) = spec.surface_only_fields().first() {
            return Err(invalid(
                format!("{path}.{field}"),
                format!("not allowed for kind `{}`", spec.kind),
            ));
        }
    }
    if spec.kind != "tx" && spec.sinr_threshold_db.is_some() {
        return Err(invalid(
            format!("{path}.sinr_threshold_db"),
            format!("not allowed for kind `{}`", spec.kind),
        ));
    }

    let kind = match spec.kind.as_str() {
        "tx" => EntityKind::Tx {
            sinr_threshold_db: spec.sinr_threshold_db.unwrap_or(15.0),
        },
        "rx" => EntityKind::Rx,
        "irss" => EntityKind::Irss,
        "server" => EntityKind::Server,
        "eavesdropper" => EntityKind::Eavesdropper,
        "irsn" => {
            let orbit = match &spec.orbit {
                Some(o) => Some(validate_orbit(o, &format!("{path}.orbit"))?),
                None => None,
            };
            if spec.position.is_none() && orbit.is_none() {
                return Err(invalid(
                    format!("{path}.position"),
                    "a surface needs a position or an orbit",
                ));
            }
            let position = match &orbit {
                Some(e) => e.position_at(0),
                None => pos_of(spec.position.unwrap()),
            };
            let bands = match &spec.bands {
                None => BandSet::of(&[Band::Sub6, Band::MmWave, Band::Thz]),
                Some(names) => {
                    let mut set = BandSet::empty();
                    for (j, name) in names.iter().enumerate() {
                        let band = parse_band(name).ok_or_else(|| {
                            invalid(
                                format!("{path}.bands[{j}]"),
                                format!("unknown band `{name}`"),
                            )
                        })?;
                        set.insert(band);
                    }
                    set
                }
            };
            let max_speed = spec.max_speed_mps.unwrap_or(0.0);
            let descriptor = crate::model::IrsnDescriptor {
                addr: spec.addr,
                width_m: spec.width_m.unwrap_or(1.0),
                height_m: spec.height_m.unwrap_or(1.0),
                n_elements: spec.n_elements.unwrap_or(4_096),
                power_idle_mw: spec.power_idle_mw.unwrap_or(10.0),
                power_active_mw: spec.power_active_mw.unwrap_or(100.0),
                bands,
                n_patterns: spec.n_patterns.unwrap_or(64),
                mobility: if max_speed > 0.0 {
                    Mobility::Mobile
                } else {
                    Mobility::Static
                },
                max_speed_mps: max_speed,
                max_switch_hz: spec.max_switch_hz.unwrap_or(1_000.0),
                position,
                battery_pct: spec.battery_pct.unwrap_or(100),
                mac: mac_of(spec.addr),
            };
            descriptor
                .validate()
                .map_err(|e| invalid(path.clone(), e.to_string()))?;
            return Ok(Entity {
                addr: spec.addr,
                position,
                kind: EntityKind::Irsn {
                    descriptor,
                    fail_at_us: spec.fail_at_us,
                    orbit,
                },
            });
        }
        other => {
            return Err(invalid(
                format!("{path}.kind"),
                format!("unknown kind `{other}`"),
            ))
        }
    };
    Ok(Entity {
        addr: spec.addr,
        position: need_position()?,
        kind,
    })
}

fn validate_obstacle(spec: &ObstacleSpec, i: usize) -> Result<Obstacle, SimError> {
    let path = format!("obstacles[{i}]");
    let obstacle = match spec.shape.as_str() {
        "sphere" => {
            if spec.min.is_some() || spec.max.is_some() {
                return Err(invalid(
                    format!("{path}.min"),
                    "not allowed for shape `sphere`",
                ));
            }
            Obstacle::Sphere {
                center: spec
                    .center
                    .map(pos_of)
                    .ok_or_else(|| invalid(format!("{path}.center"), "required"))?,
                radius_m: spec
                    .radius_m
                    .ok_or_else(|| invalid(format!("{path}.radius_m"), "required"))?,
            }
        }
        "aabb" => {
            if spec.center.is_some() || spec.radius_m.is_some() {
                return Err(invalid(
                    format!("{path}.center"),
                    "not allowed for shape `aabb`",
                ));
            }
            Obstacle::Aabb {
                min: spec
                    .min
                    .map(pos_of)
                    .ok_or_else(|| invalid(format!("{path}.min"), "required"))?,
                max: spec
                    .max
                    .map(pos_of)
                    .ok_or_else(|| invalid(format!("{path}.max"), "required"))?,
            }
        }
        other => {
            return Err(invalid(
                format!("{path}.shape"),
                format!("unknown shape `{other}`"),
            ))
        }
    };
    obstacle
        .validate()
        .map_err(|e| invalid(path, e.to_string()))?;
    Ok(obstacle)
}

impl ScenarioFile {
    /// Full semantic validation; the returned scenario is safe to run.
    pub fn validate(&self) -> Result<Scenario, SimError> {
        let mut entities = Vec::with_capacity(self.entities.len());
        let mut seen = BTreeSet::new();
        for (i, spec) in self.entities.iter().enumerate() {
            let entity = validate_entity(spec, i)?;
            if !seen.insert(entity.addr) {
                return Err(invalid(
                    format!("entities[{i}].addr"),
                    format!("duplicate address {}", entity.addr),
                ));
            }
            entities.push(entity);
        }

        let mut obstacles = Vec::with_capacity(self.obstacles.len());
        for (i, spec) in self.obstacles.iter().enumerate() {
            obstacles.push(validate_obstacle(spec, i)?);
        }

        let kind_of = |addr: Ipv6Addr| {
            entities
                .iter()
                .find(|e| e.addr == addr)
                .map(|e| &e.kind)
        };
        let mut labels = BTreeSet::new();
        let mut flows = Vec::with_capacity(self.flows.len());
        for (i, f) in self.flows.iter().enumerate() {
            let path = format!("flows[{i}]");
            match kind_of(f.tx) {
                Some(EntityKind::Tx { .. }) => {}
                Some(_) => {
                    return Err(invalid(
                        format!("{path}.tx"),
                        format!("{} is not a transmitter", f.tx),
                    ))
                }
                None => {
                    return Err(invalid(
                        format!("{path}.tx"),
                        format!("unknown entity {}", f.tx),
                    ))
                }
            }
            match kind_of(f.rx) {
                Some(EntityKind::Rx) => {}
                Some(_) => {
                    return Err(invalid(
                        format!("{path}.rx"),
                        format!("{} is not a receiver", f.rx),
                    ))
                }
                None => {
                    return Err(invalid(
                        format!("{path}.rx"),
                        format!("unknown entity {}", f.rx),
                    ))
                }
            }
            if f.flow_label > 0xF_FFFF {
                return Err(invalid(
                    format!("{path}.flow_label"),
                    "exceeds 20 bits",
                ));
            }
            if !labels.insert(f.flow_label) {
                return Err(invalid(
                    format!("{path}.flow_label"),
                    format!("duplicate flow label {:#x}", f.flow_label),
                ));
            }
            if f.duration_ms == 0 {
                return Err(invalid(format!("{path}.duration_ms"), "must be positive"));
            }
            let weights = Weights {
                sinr: f.weights.sinr,
                latency: f.weights.latency,
                secrecy: f.weights.secrecy,
                power: f.weights.power,
            };
            if weights.is_all_zero() {
                return Err(invalid(
                    format!("{path}.weights"),
                    "at least one weight must be nonzero",
                ));
            }
            if f.localization && f.error_bound_cm == 0 {
                return Err(invalid(
                    format!("{path}.error_bound_cm"),
                    "localization needs a positive error bound",
                ));
            }
            let band = parse_band(&f.band)
                .ok_or_else(|| invalid(format!("{path}.band"), format!("unknown band `{}`", f.band)))?;
            flows.push(Flow {
                tx: f.tx,
                rx: f.rx,
                flow_label: f.flow_label,
                start_us: f.start_us,
                traffic_class: f.traffic_class,
                duration_ms: f.duration_ms,
                band,
                weights,
                min_sinr_db: f.min_sinr_db,
                wpt: f.wpt,
                localization: f.localization,
                error_bound_cm: f.error_bound_cm,
            });
        }

        let c = &self.config;
        for (value, name) in [
            (c.frequency_hz, "frequency_hz"),
            (c.measure_period_us as f64, "measure_period_us"),
            (c.heartbeat_period_us as f64, "heartbeat_period_us"),
            (c.handover_step_us as f64, "handover_step_us"),
            (c.battery_capacity_mwh, "battery_capacity_mwh"),
        ] {
            if value <= 0.0 {
                return Err(invalid(format!("config.{name}"), "must be positive"));
            }
        }
        if c.k_max == 0 {
            return Err(invalid("config.k_max", "must be at least 1"));
        }
        if c.hop_limit == 0 {
            return Err(invalid("config.hop_limit", "must be at least 1"));
        }
        if let Some(r) = c.radio_range_m {
            if r <= 0.0 {
                return Err(invalid("config.radio_range_m", "must be positive"));
            }
        }

        Ok(Scenario {
            entities,
            obstacles,
            flows,
            config: c.clone(),
        })
    }
}

/// Parses and validates scenario JSON in one step. Syntax errors surface
/// with serde's line/column diagnostics, semantic errors with a field path.
pub fn load_scenario(json: &str) -> Result<Scenario, SimError> {
    let file: ScenarioFile = serde_json::from_str(json)
        .map_err(|e| invalid("scenario", e.to_string()))?;
    file.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "entities": [
            {"kind": "tx", "addr": "fd00::1", "position": [0, 0, 0]},
            {"kind": "rx", "addr": "fd00::2", "position": [20, 0, 0]},
            {"kind": "irss", "addr": "fd00::10", "position": [5, 5, 0]},
            {"kind": "irsn", "addr": "fd00::20", "position": [10, 8, 0]}
        ],
        "flows": [
            {"tx": "fd00::1", "rx": "fd00::2", "flow_label": 7}
        ]
    }"#;

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.entities.len(), 4);
        assert_eq!(s.flows.len(), 1);
        assert_eq!(s.config.frequency_hz, 28e9);
        assert_eq!(s.config.seed, 0);
        assert_eq!(s.flows[0].duration_ms, 2_000);
        assert_eq!(s.flows[0].band, Band::MmWave);
        match &s.entities[3].kind {
            EntityKind::Irsn { descriptor, .. } => {
                assert_eq!(descriptor.n_elements, 4_096);
                assert_eq!(descriptor.battery_pct, 100);
            }
            other => panic!("expected surface, got {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_and_nested_keys_are_rejected() {
        let bad = r#"{"entities": [], "extra": 1}"#;
        assert!(load_scenario(bad).is_err());
        let bad = r#"{"entities": [{"kind": "rx", "addr": "fd00::2", "position": [0,0,0], "bogus": 1}]}"#;
        assert!(load_scenario(bad).is_err());
    }

    #[test]
    fn duplicate_addresses_name_the_entity_index() {
        let bad = r#"{"entities": [
            {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
            {"kind": "rx", "addr": "fd00::1", "position": [1,0,0]}
        ]}"#;
        let err = load_scenario(bad).unwrap_err();
        let SimError::InvalidScenario { path, reason } = err;
        assert_eq!(path, "entities[1].addr");
        assert!(reason.contains("duplicate"));
    }

    #[test]
    fn kind_mismatched_fields_are_named() {
        let bad = r#"{"entities": [
            {"kind": "rx", "addr": "fd00::2", "position": [0,0,0], "n_elements": 64}
        ]}"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "entities[0].n_elements");
    }

    #[test]
    fn flows_must_reference_the_right_kinds() {
        let bad = r#"{
            "entities": [
                {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
                {"kind": "rx", "addr": "fd00::2", "position": [20,0,0]}
            ],
            "flows": [{"tx": "fd00::2", "rx": "fd00::1", "flow_label": 1}]
        }"#;
        let SimError::InvalidScenario { path, reason } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "flows[0].tx");
        assert!(reason.contains("not a transmitter"));

        let bad = r#"{
            "entities": [
                {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
                {"kind": "rx", "addr": "fd00::2", "position": [20,0,0]}
            ],
            "flows": [{"tx": "fd00::1", "rx": "fd00::9", "flow_label": 1}]
        }"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "flows[0].rx");
    }

    #[test]
    fn flow_labels_stay_unique_and_in_range() {
        let bad = r#"{
            "entities": [
                {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
                {"kind": "rx", "addr": "fd00::2", "position": [20,0,0]}
            ],
            "flows": [
                {"tx": "fd00::1", "rx": "fd00::2", "flow_label": 3},
                {"tx": "fd00::1", "rx": "fd00::2", "flow_label": 3}
            ]
        }"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "flows[1].flow_label");

        let bad = r#"{
            "entities": [
                {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
                {"kind": "rx", "addr": "fd00::2", "position": [20,0,0]}
            ],
            "flows": [{"tx": "fd00::1", "rx": "fd00::2", "flow_label": 1048576}]
        }"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "flows[0].flow_label");
    }

    #[test]
    fn orbits_need_an_orthonormal_basis() {
        let bad = r#"{"entities": [
            {"kind": "irsn", "addr": "fd00::20",
             "orbit": {"radius_m": 1000.0, "angular_rate_rad_s": 0.01,
                       "basis_u": [1,0,0], "basis_v": [1,0,0]}}
        ]}"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "entities[0].orbit.basis_v");
    }

    #[test]
    fn orbital_surfaces_start_on_their_orbit() {
        let json = r#"{"entities": [
            {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
            {"kind": "irsn", "addr": "fd00::20",
             "orbit": {"radius_m": 500.0, "angular_rate_rad_s": 0.01, "phase_rad": 0.0}}
        ]}"#;
        let s = load_scenario(json).unwrap();
        assert!((s.entities[1].position.x - 500.0).abs() < 1e-9);
    }

    #[test]
    fn localization_flows_need_an_error_bound() {
        let bad = r#"{
            "entities": [
                {"kind": "tx", "addr": "fd00::1", "position": [0,0,0]},
                {"kind": "rx", "addr": "fd00::2", "position": [20,0,0]}
            ],
            "flows": [{"tx": "fd00::1", "rx": "fd00::2", "flow_label": 1, "localization": true}]
        }"#;
        let SimError::InvalidScenario { path, .. } = load_scenario(bad).unwrap_err();
        assert_eq!(path, "flows[0].error_bound_cm");
    }
}
