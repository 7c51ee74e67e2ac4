//! CSV/JSON emission. Milliseconds carry 3 decimals, fractions 6.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use edgelab::metrics::{regret_series, rolling_qos, MetricsReport};
use edgelab::model::InstanceId;
use edgelab::scenario::ScenarioEvent;
use edgelab::SimulationTrace;
use serde::Serialize;

pub const RUN_FILES: [&str; 6] =
    ["requests.csv", "weights.csv", "rolling_qos.csv", "regret.csv", "summary.json", "manifest.json"];
pub const EVENTS_FILE: &str = "events.csv";

pub fn ms(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        "inf".to_string()
    }
}

pub fn frac(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes through a sibling temp file and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn requests_csv(trace: &SimulationTrace) -> Vec<u8> {
    let header =
        strings(&["id", "client", "lb", "instance", "send_time_ms", "net_ms", "proc_ms", "total_ms", "success"]);
    csv_bytes(
        &header,
        trace.records.iter().map(|r| {
            vec![
                r.id.to_string(),
                r.client.0.to_string(),
                r.lb.0.to_string(),
                r.instance.map(|m| m.0.to_string()).unwrap_or_default(),
                ms(r.send_time_ms),
                ms(r.net_ms),
                ms(r.proc_ms),
                ms(r.total_ms),
                (r.success as u8).to_string(),
            ]
        }),
    )
}

/// One row per load balancer per decision step; one column per instance
/// ever deployed. Cells are empty while the instance does not exist.
pub fn weights_csv(trace: &SimulationTrace) -> Vec<u8> {
    let ids: Vec<InstanceId> = trace.instances.iter().map(|i| i.id).collect();
    let mut header = strings(&["time_ms", "lb", "epsilon"]);
    header.extend(ids.iter().map(|m| m.to_string()));
    csv_bytes(
        &header,
        trace.snapshots.iter().map(|s| {
            let mut row = vec![ms(s.time_ms), s.lb.0.to_string(), s.epsilon.map(frac).unwrap_or_default()];
            row.extend(trace.instances.iter().map(|i| {
                if i.active_at(s.time_ms) {
                    frac(s.weights.get(i.id))
                } else {
                    String::new()
                }
            }));
            row
        }),
    )
}

pub fn rolling_points(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    let sc = &trace.scenario;
    rolling_qos(&trace.records, sc.qos.window_ms(), sc.engine.rolling_step_s * 1000.0, sc.duration_ms)
}

pub fn rolling_csv(points: &[(f64, f64)]) -> Vec<u8> {
    csv_bytes(&strings(&["time_ms", "qos"]), points.iter().map(|&(t, q)| vec![ms(t), frac(q)]))
}

/// System step and cumulative regret, then the per-LB step regret.
pub fn regret_csv(trace: &SimulationTrace) -> Vec<u8> {
    let rs = regret_series(trace);
    let mut header = strings(&["time_ms", "system_step", "system_cumulative"]);
    header.extend((0..rs.per_lb_step.len()).map(|k| format!("lb{k}")));
    csv_bytes(
        &header,
        rs.times_ms.iter().enumerate().map(|(i, &t)| {
            let mut row = vec![ms(t), frac(rs.system_step[i]), frac(rs.system_cumulative[i])];
            row.extend(rs.per_lb_step.iter().map(|lb| frac(lb[i])));
            row
        }),
    )
}

/// Declared events next to the rolling QoS around them: the last sample at
/// or before the event, the minimum after it, and the first sample whose
/// window lies entirely after the event and meets ρ.
pub fn events_csv(trace: &SimulationTrace, points: &[(f64, f64)]) -> Vec<u8> {
    let sc = &trace.scenario;
    let header = strings(&["time_ms", "kind", "subject", "count", "qos_before", "qos_min_after", "recovered_ms"]);
    csv_bytes(
        &header,
        sc.events.iter().filter(|e| e.time_ms < sc.duration_ms).map(|e| {
            let (kind, subject, count) = match &e.event {
                ScenarioEvent::AddClients { lbs } => ("add_clients", String::new(), lbs.len()),
                ScenarioEvent::RemoveInstance { instance } => ("remove_instance", instance.to_string(), 1),
                ScenarioEvent::AddInstance { node } => ("add_instance", node.to_string(), 1),
            };
            let before = points.iter().rev().find(|p| p.0 <= e.time_ms).map(|p| frac(p.1)).unwrap_or_default();
            let min_after = points
                .iter()
                .filter(|p| p.0 > e.time_ms)
                .map(|p| p.1)
                .fold(None, |m: Option<f64>, q| Some(m.map_or(q, |m| m.min(q))))
                .map(frac)
                .unwrap_or_default();
            let settled = e.time_ms + sc.qos.window_ms();
            let recovered =
                points.iter().find(|p| p.0 >= settled && p.1 >= sc.qos.rho).map(|p| ms(p.0)).unwrap_or_default();
            vec![ms(e.time_ms), kind.to_string(), subject, count.to_string(), before, min_after, recovered]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub seed: u64,
    pub strategy: String,
    pub out_dir: PathBuf,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: &'static str,
    pub files: Vec<String>,
}

/// Aggregate row for one comparison cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub strategy: String,
    pub topology: u64,
    pub report: MetricsReport,
}

pub fn aggregate_csv(cells: &[CellSummary]) -> Vec<u8> {
    let header = strings(&[
        "strategy",
        "topology",
        "satisfied_fraction",
        "jain_index",
        "success_ratio",
        "requests",
        "unroutable",
        "cooldowns",
        "mean_step_regret",
    ]);
    csv_bytes(
        &header,
        cells.iter().map(|c| {
            let r = &c.report;
            vec![
                c.strategy.clone(),
                c.topology.to_string(),
                frac(r.satisfied_fraction),
                frac(r.jain_index),
                frac(r.success_ratio),
                r.requests.to_string(),
                r.unroutable.to_string(),
                r.cooldowns.to_string(),
                frac(r.mean_step_regret),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(ms(16.0), "16.000");
        assert_eq!(ms(1.23456), "1.235");
        assert_eq!(ms(f64::INFINITY), "inf");
        assert_eq!(frac(0.9), "0.900000");
        assert_eq!(frac(1.0 / 3.0), "0.333333");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"x\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
