//! Run artifacts: the event trace and per-flow metrics, plus their
//! line-oriented serializations (JSONL for the trace, CSV for metrics).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::wire::DenialReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    Send,
    Recv,
    Internal,
}

/// One line of the run log. Records appear in nondecreasing time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub actor: String,
    pub dir: Dir,
    pub summary: String,
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records always serialize"));
        out.push('\n');
    }
    out
}

/// Everything the run learned about one flow.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowMetrics {
    pub requests: u32,
    pub confirmations: u32,
    pub denials: u32,
    pub last_denial: Option<DenialReason>,
    /// First request to first confirmation.
    pub confirm_latency_us: Option<u64>,
    /// (time, measured SINR) samples.
    pub sinr_series: Vec<(u64, f64)>,
    /// Time spent measured below the flow's minimum SINR after its start.
    pub outage_us: u64,
    /// Serving-set changes observed while reflection was active.
    pub handovers: u32,
}

impl FlowMetrics {
    pub fn mean_sinr_db(&self) -> f64 {
        let finite: Vec<f64> = self
            .sinr_series
            .iter()
            .map(|(_, s)| *s)
            .filter(|s| s.is_finite())
            .collect();
        if finite.is_empty() {
            return 0.0;
        }
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub flows: BTreeMap<u32, FlowMetrics>,
}

impl Metrics {
    /// Tabular export. Missing numeric values print as 0 so every field
    /// stays machine-parseable; a flow that was never denied shows `-` in
    /// the reason column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "flow,requests,confirmations,denials,denial_reason,confirm_latency_us,mean_sinr_db,outage_us,handovers\n",
        );
        for (label, m) in &self.flows {
            let reason = m
                .last_denial
                .map_or_else(|| "-".to_string(), |r| r.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                label,
                m.requests,
                m.confirmations,
                m.denials,
                reason,
                m.confirm_latency_us.unwrap_or(0),
                m.mean_sinr_db(),
                m.outage_us,
                m.handovers
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrips_line_by_line() {
        let records = vec![
            TraceRecord {
                time_us: 0,
                actor: "fd00::1".into(),
                dir: Dir::Send,
                summary: "ServiceRequest flow=0x7".into(),
            },
            TraceRecord {
                time_us: 12,
                actor: "fd00::10".into(),
                dir: Dir::Recv,
                summary: "ServiceRequest flow=0x7".into(),
            },
        ];
        let text = to_jsonl(&records);
        assert_eq!(text.lines().count(), 2);
        for (line, want) in text.lines().zip(&records) {
            let got: TraceRecord = serde_json::from_str(line).unwrap();
            assert_eq!(&got, want);
        }
    }

    #[test]
    fn csv_has_constant_columns_and_numeric_fields() {
        let mut metrics = Metrics::default();
        metrics.flows.insert(
            7,
            FlowMetrics {
                requests: 2,
                confirmations: 1,
                denials: 1,
                last_denial: Some(DenialReason::EnergyBudget),
                confirm_latency_us: Some(5_200),
                sinr_series: vec![(0, 10.0), (100, 20.0), (200, f64::NEG_INFINITY)],
                outage_us: 100_000,
                handovers: 1,
            },
        );
        metrics.flows.insert(9, FlowMetrics::default());
        let csv = metrics.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in &lines {
            assert_eq!(line.split(',').count(), 9);
        }
        let row: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(row[0], "7");
        assert_eq!(row[4], "EnergyBudget");
        // Mean skips non-finite samples.
        assert_eq!(row[6].parse::<f64>().unwrap(), 15.0);
        // The empty flow still parses numerically.
        let row: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(row[5].parse::<u64>().unwrap(), 0);
        assert_eq!(row[6].parse::<f64>().unwrap(), 0.0);
    }
}
