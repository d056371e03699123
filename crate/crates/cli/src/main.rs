//! `ioirs`: run control-plane scenarios, decode captured packets, and export
//! connectivity graphs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ioirs_core::sim::{self, load_scenario, Scenario};
use ioirs_core::wire::{self, IrsMessage, Ipv6Header, WireError};

#[derive(Parser)]
#[command(name = "ioirs", version, about = "Reflecting-surface control plane tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write trace.jsonl and metrics.csv.
    Run {
        /// Scenario file (JSON).
        file: PathBuf,
        /// Random seed; overrides the scenario's `config.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory. Defaults to $IOIRS_OUT, then the current
        /// directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulation horizon; overrides the scenario's `config.until_us`.
        #[arg(long)]
        until_us: Option<u64>,
    },
    /// Decode a hex-encoded control packet to readable fields.
    Decode {
        /// The packet, as even-length hex.
        hex: String,
    },
    /// Print the connectivity graph of a scenario at one instant, one
    /// `edge <id_a> <id_b> <loss_db>` line per sightline.
    Graph {
        /// Scenario file (JSON).
        file: PathBuf,
        /// Evaluation time in microseconds.
        #[arg(long)]
        at_us: u64,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            file,
            seed,
            out,
            until_us,
        } => run_scenario(&file, seed, out, until_us),
        Command::Decode { hex } => decode_hex(&hex),
        Command::Graph { file, at_us } => export_graph(&file, at_us),
    }
}

/// Scenario problems exit with 2 so scripts can tell bad inputs from
/// operational failures (1).
const EXIT_INVALID_SCENARIO: u8 = 2;

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(1)
    })?;
    load_scenario(&text).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(EXIT_INVALID_SCENARIO)
    })
}

fn run_scenario(
    file: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    until_us: Option<u64>,
) -> ExitCode {
    let scenario = match load(file) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let seed = seed.unwrap_or(scenario.config.seed);
    let until_us = until_us.unwrap_or(scenario.config.until_us);
    let out_dir = out
        .or_else(|| std::env::var_os("IOIRS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let (trace, metrics) = sim::run(&scenario, seed, until_us);

    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("{}: {e}", out_dir.display());
        return ExitCode::from(1);
    }
    let artifacts = [
        ("trace.jsonl", sim::trace::to_jsonl(&trace)),
        ("metrics.csv", metrics.to_csv()),
    ];
    for (name, contents) in artifacts {
        if let Err(e) = std::fs::write(out_dir.join(name), contents) {
            eprintln!("{}: {e}", out_dir.join(name).display());
            return ExitCode::from(1);
        }
    }
    println!(
        "seed={seed} until_us={until_us} records={} flows={} -> {}",
        trace.len(),
        metrics.flows.len(),
        out_dir.display()
    );
    ExitCode::SUCCESS
}

fn decode_hex(hex_input: &str) -> ExitCode {
    let bytes = match hex::decode(hex_input.trim()) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("BadHex: {e}");
            return ExitCode::from(1);
        }
    };
    match wire::decode_packet(&bytes) {
        Ok((header, message)) => {
            print!("{}", render_packet(&header, &message));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {e}", wire_error_name(&e));
            ExitCode::from(1)
        }
    }
}

fn export_graph(file: &PathBuf, at_us: u64) -> ExitCode {
    let scenario = match load(file) {
        Ok(s) => s,
        Err(code) => return code,
    };
    match sim::connectivity_at(&scenario, at_us) {
        Ok(graph) => {
            print!("{}", graph.edge_list());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn wire_error_name(e: &WireError) -> &'static str {
    match e {
        WireError::OversizeBody { .. } => "OversizeBody",
        WireError::Truncated { .. } => "Truncated",
        WireError::NotIpv6 { .. } => "NotIpv6",
        WireError::NotIrsProtocol { .. } => "NotIrsProtocol",
        WireError::UnsupportedVersion { .. } => "UnsupportedVersion",
        WireError::UnknownMessageType { .. } => "UnknownMessageType",
        WireError::LengthMismatch { .. } => "LengthMismatch",
        WireError::InvalidValue { .. } => "InvalidValue",
        WireError::FieldOutOfRange { .. } => "FieldOutOfRange",
    }
}

fn render_packet(h: &Ipv6Header, m: &IrsMessage) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Ipv6Header source={} destination={} traffic_class={} flow_label=0x{:05x} \
         payload_length={} next_header={} hop_limit={}\n",
        h.source, h.destination, h.traffic_class, h.flow_label, h.payload_length,
        h.next_header, h.hop_limit
    ));
    render_message(&mut out, m);
    out
}

fn field(out: &mut String, name: &str, value: impl std::fmt::Display) {
    out.push_str(&format!("  {name}={value}\n"));
}

fn render_message(out: &mut String, m: &IrsMessage) {
    match m {
        IrsMessage::ServiceRequest(r) => {
            out.push_str("ServiceRequest\n");
            field(out, "service_duration_ms", r.service_duration_ms);
            field(out, "target_rx_addr", r.target_rx_addr);
            field(out, "modulation", r.modulation);
            field(out, "mimo_rank", r.mimo_rank);
            field(out, "band", format!("{:?}", r.band));
            field(out, "tx_power_ddbm", r.tx_power_ddbm);
            field(out, "min_sinr_ddb", r.min_sinr_ddb);
            field(
                out,
                "weights",
                format!(
                    "sinr={} latency={} secrecy={} power={}",
                    r.weights.sinr, r.weights.latency, r.weights.secrecy, r.weights.power
                ),
            );
            field(out, "wpt", r.wpt);
            field(out, "localization", r.localization);
            field(out, "error_bound_cm", r.error_bound_cm);
        }
        IrsMessage::ServiceConfirmation(c) => {
            out.push_str("ServiceConfirmation\n");
            field(out, "tx_start_time_us", c.tx_start_time_us);
            field(out, "duration_ms", c.duration_ms);
            for a in &c.assignments {
                field(
                    out,
                    "assignment",
                    format!(
                        "irsn_addr={} pattern_id={} activate_time_us={}",
                        a.irsn_addr, a.pattern_id, a.activate_time_us
                    ),
                );
            }
        }
        IrsMessage::ServiceDenial(d) => {
            out.push_str("ServiceDenial\n");
            field(out, "reason", d.reason);
        }
        IrsMessage::LocalizationQuery(q) => {
            out.push_str("LocalizationQuery\n");
            field(out, "session", q.session);
            field(out, "sweep_count", q.sweep_count);
        }
        IrsMessage::LocalizationReport(r) => {
            out.push_str("LocalizationReport\n");
            field(out, "session", r.session);
            for m in &r.measurements {
                field(
                    out,
                    "measurement",
                    format!(
                        "irsn_addr={} aoa_cdeg={} tof_ns={} rssi_ddb={}",
                        m.irsn_addr, m.aoa_cdeg, m.tof_ns, m.rssi_ddb
                    ),
                );
            }
        }
        IrsMessage::Command(c) => {
            out.push_str("Command\n");
            for e in &c.schedule {
                field(
                    out,
                    "schedule",
                    format!(
                        "pattern_id={} activate_time_us={}",
                        e.pattern_id, e.activate_time_us
                    ),
                );
            }
            field(out, "relocate", c.relocate);
            field(out, "target_position_cm", fmt_cm(c.target_position_cm));
        }
        IrsMessage::Status(s) => {
            out.push_str("Status\n");
            field(out, "availability", s.availability);
            field(out, "battery_pct", s.battery_pct);
            field(out, "position_cm", fmt_cm(s.position_cm));
            field(out, "active_pattern", s.active_pattern);
            field(out, "timestamp_us", s.timestamp_us);
        }
        IrsMessage::IrsnAdvertisement(a) => {
            let d = &a.descriptor;
            out.push_str("IrsnAdvertisement\n");
            field(out, "addr", d.addr);
            field(out, "mac", d.mac);
            field(
                out,
                "position_m",
                format!("[{},{},{}]", d.position.x, d.position.y, d.position.z),
            );
            field(out, "width_m", d.width_m);
            field(out, "height_m", d.height_m);
            field(out, "n_elements", d.n_elements);
            field(out, "n_patterns", d.n_patterns);
            field(out, "bands", format!("0b{:03b}", d.bands.bits()));
            field(out, "mobility", format!("{:?}", d.mobility));
            field(out, "max_speed_mps", d.max_speed_mps);
            field(out, "max_switch_hz", d.max_switch_hz);
            field(out, "power_idle_mw", d.power_idle_mw);
            field(out, "power_active_mw", d.power_active_mw);
            field(out, "battery_pct", d.battery_pct);
        }
        IrsMessage::IrssSolicitation(s) => {
            out.push_str("IrssSolicitation\n");
            field(out, "position_cm", fmt_cm(s.position_cm));
        }
        IrsMessage::IrssAdvertisement(a) => {
            out.push_str("IrssAdvertisement\n");
            field(out, "server_addr", a.server_addr);
            field(
                out,
                "proto_versions",
                format!(
                    "[{},{},{}]",
                    a.proto_versions[0], a.proto_versions[1], a.proto_versions[2]
                ),
            );
            field(out, "optimizer_version", a.optimizer_version);
            field(out, "position_cm", fmt_cm(a.position_cm));
            field(out, "mac", a.mac);
        }
        IrsMessage::ServerUpdate(u) => {
            out.push_str("ServerUpdate\n");
            field(out, "kind", format!("{:?}", u.kind));
            field(out, "new_version", u.new_version);
        }
    }
}

fn fmt_cm(p: [i32; 3]) -> String {
    format!("[{},{},{}]", p[0], p[1], p[2])
}
