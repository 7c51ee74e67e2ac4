use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 1
duration_s = 20

[qos]
tau_ms = 80
rho = 0.9
window_s = 10

[topology]
kind = "generated"
n_nodes = 8

[placement]
kind = "k_center"
k = 3

[clients]
per_lb = 2
rate_per_s = 10

[strategy]
kind = "qedgeproxy"
"#;

fn edgelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgelab")).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = edgelab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files_in(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_exactly_the_six_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    let expected: BTreeSet<String> =
        ["requests.csv", "weights.csv", "rolling_qos.csv", "regret.csv", "summary.json", "manifest.json"]
            .into_iter()
            .map(String::from)
            .collect();
    assert_eq!(files_in(&out), expected);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "complete");
    assert_eq!(m["strategy"], "qedgeproxy");
    assert_eq!(m["seed"], 1);
    assert!(m["finished_at"].is_string());
}

#[test]
fn invalid_rho_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", &SMALL.replace("rho = 0.9", "rho = 1.5"));
    let out = edgelab(&["run", "--scenario", s(&sc), "--out", s(&dir.path().join("out"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rho"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn parse_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", &SMALL.replace("per_lb = 2", "per_lb = \"two\""));
    let out = edgelab(&["validate", "--scenario", s(&sc)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");
    assert!(err.contains("per_lb"), "{err}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&a)]);
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&b)]);
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&c), "--seed", "2"]);
    for f in ["requests.csv", "weights.csv", "regret.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("requests.csv")).unwrap(), fs::read(c.join("requests.csv")).unwrap());
}

#[test]
fn output_collisions_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    let again = edgelab(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&out), "--force"]);

    fs::write(out.join("notes.txt"), "keep me").unwrap();
    let foreign = edgelab(&["run", "--scenario", s(&sc), "--out", s(&out), "--force"]);
    assert!(!foreign.status.success());
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep me");
}

#[test]
fn numbers_use_fixed_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    let decimals = |x: &str| x.split_once('.').map(|(_, d)| d.len());
    let (h, rows) = read_csv(&out.join("requests.csv"));
    assert_eq!(h, ["id", "client", "lb", "instance", "send_time_ms", "net_ms", "proc_ms", "total_ms", "success"]);
    for r in &rows {
        for cell in &r[4..8] {
            assert!(cell == "inf" || decimals(cell) == Some(3), "{cell}");
        }
    }
    let (h, rows) = read_csv(&out.join("rolling_qos.csv"));
    assert_eq!(h, ["time_ms", "qos"]);
    assert!(rows.iter().all(|r| decimals(&r[0]) == Some(3) && decimals(&r[1]) == Some(6)));
}

#[test]
fn summary_is_recomputable_from_requests() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&out)]);
    let (_, rows) = read_csv(&out.join("requests.csv"));
    let summary = json(&out.join("summary.json"));

    let ok = rows.iter().filter(|r| r[8] == "1").count();
    assert_eq!(summary["requests"], rows.len());
    assert_eq!(summary["successes"], ok);
    assert_eq!(summary["unroutable"], rows.iter().filter(|r| r[3].is_empty()).count());
    assert!((summary["success_ratio"].as_f64().unwrap() - ok as f64 / rows.len() as f64).abs() < 1e-12);

    let mut per_client: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in &rows {
        let e = per_client.entry(r[1].parse().unwrap()).or_default();
        e.0 += 1;
        e.1 += (r[8] == "1") as usize;
    }
    let rho = summary["rho"].as_f64().unwrap();
    let satisfied = per_client.values().filter(|(n, k)| *k as f64 / *n as f64 >= rho).count();
    assert_eq!(summary["clients"], per_client.len());
    assert_eq!(summary["satisfied_clients"], satisfied);
    let frac = satisfied as f64 / per_client.len() as f64;
    assert!((summary["satisfied_fraction"].as_f64().unwrap() - frac).abs() < 1e-12);

    // instances come from the weights.csv header so idle ones count as zero load
    let (header, _) = read_csv(&out.join("weights.csv"));
    let mut loads: BTreeMap<String, f64> =
        header[3..].iter().map(|h| (h.trim_start_matches('i').to_string(), 0.0)).collect();
    for r in rows.iter().filter(|r| !r[3].is_empty()) {
        *loads.get_mut(&r[3]).unwrap() += 1.0;
    }
    let xs: Vec<f64> = loads.into_values().collect();
    let jain = xs.iter().sum::<f64>().powi(2) / (xs.len() as f64 * xs.iter().map(|x| x * x).sum::<f64>());
    assert!((summary["jain_index"].as_f64().unwrap() - jain).abs() < 1e-12);
}

#[test]
fn compare_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "t.toml", &SMALL.replace("duration_s = 20", "duration_s = 5"));
    let out = dir.path().join("cmp");
    run_ok(&[
        "compare",
        "--template",
        s(&sc),
        "--strategies",
        "qedgeproxy,proxymity:1.0,proxymity:0.9,dec_sarsa",
        "--topologies",
        "5",
        "--out",
        s(&out),
        "--workers",
        "2",
    ]);
    let (h, rows) = read_csv(&out.join("aggregate.csv"));
    assert_eq!(h[..4], ["strategy", "topology", "satisfied_fraction", "jain_index"]);
    assert_eq!(rows.len(), 20);
    let cells: BTreeSet<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(cells.len(), 20);
    for r in &rows {
        let cell = json(&out.join("cells").join(format!("{}-t{}.json", r[0].replace(':', "-"), r[1])));
        let report = &cell["report"];
        assert_eq!(format!("{:.6}", report["satisfied_fraction"].as_f64().unwrap()), r[2]);
        assert_eq!(format!("{:.6}", report["jain_index"].as_f64().unwrap()), r[3]);
        assert_eq!(report["strategy"], r[0].as_str());
        assert_eq!(report["seed"].to_string(), r[1]);
    }
    assert_eq!(json(&out.join("manifest.json"))["status"], "complete");
}

#[test]
fn compare_rejects_unknown_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "t.toml", SMALL);
    let out = edgelab(&[
        "compare",
        "--template",
        s(&sc),
        "--strategies",
        "qedgeproxy,roundrobin",
        "--topologies",
        "1",
        "--out",
        s(&dir.path().join("cmp")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("roundrobin"));
}

#[test]
fn events_refuses_without_events() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = edgelab(&["events", "--scenario", s(&sc), "--out", s(&dir.path().join("ev"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no events"));
    assert!(!dir.path().join("ev").exists());
}

#[test]
fn surge_events_csv_has_one_add_clients_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[[events]]\nkind = \"add_clients\"\nat_s = 10\ncount = 4\nn_lbs = 2\n");
    let sc = write_scenario(dir.path(), "s.toml", &text);
    let out = dir.path().join("ev");
    run_ok(&["events", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(files_in(&out).len(), 7);
    let (h, rows) = read_csv(&out.join("events.csv"));
    assert_eq!(h, ["time_ms", "kind", "subject", "count", "qos_before", "qos_min_after", "recovered_ms"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][..2], ["10000.000", "add_clients"]);
    assert_eq!(rows[0][3], "4");
}

#[test]
fn removed_instance_column_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[[events]]\nkind = \"remove_instance\"\nat_s = 10\ninstance = 1\n");
    let sc = write_scenario(dir.path(), "s.toml", &text);
    let out = dir.path().join("ev");
    run_ok(&["events", "--scenario", s(&sc), "--out", s(&out)]);
    let (h, rows) = read_csv(&out.join("weights.csv"));
    let col = h.iter().position(|c| c == "i1").unwrap();
    for r in &rows {
        let t: f64 = r[0].parse().unwrap();
        assert_eq!(r[col].is_empty(), t >= 10_000.0, "t={t} cell={:?}", r[col]);
    }
    let (_, ev) = read_csv(&out.join("events.csv"));
    assert_eq!(ev[0][1..3], ["remove_instance", "i1"]);
}

#[test]
fn matrix_topology_is_read_and_asymmetry_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = "0,1,2\n0,10,20\n10,0,15\n20,15,0\n";
    fs::write(dir.path().join("m.csv"), matrix).unwrap();
    let text = SMALL
        .replace("kind = \"generated\"\nn_nodes = 8", "kind = \"matrix\"\npath = \"m.csv\"")
        .replace("k = 3", "k = 2");
    let sc = write_scenario(dir.path(), "s.toml", &text);
    run_ok(&["run", "--scenario", s(&sc), "--out", s(&dir.path().join("out"))]);
    let (h, _) = read_csv(&dir.path().join("out/weights.csv"));
    assert_eq!(h.len(), 3 + 2);

    fs::write(dir.path().join("m.csv"), "0,1,2\n0,10,20\n11,0,15\n20,15,0\n").unwrap();
    let out = edgelab(&["run", "--scenario", s(&sc), "--out", s(&dir.path().join("bad"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("asymmetric"));
}
