use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use edgelab::error::{PolicyError, ScenarioError};
use edgelab::metrics::MetricsReport;
use edgelab::scenario::{ScenarioSpec, StrategySpec, TopologySource};
use edgelab::SimulationTrace;
use thiserror::Error;

use crate::output::{self, CellSummary, RunManifest, EVENTS_FILE, RUN_FILES};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] PolicyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output directory {0} is not empty; pass --force to overwrite a previous run")]
    OutputExists(PathBuf),
    #[error("output directory {dir} holds {file}, which this tool did not write; refusing to overwrite")]
    ForeignFile { dir: PathBuf, file: String },
    #[error("scenario {0} declares no events; add [[events]] entries or use `run`")]
    NoEvents(PathBuf),
    #[error("cell {strategy} / topology {topology}: {source}")]
    Cell { strategy: String, topology: u64, source: Box<CliError> },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Creates `dir` or checks it can be reused. A non-empty directory is only
/// reused with `force`, and only if everything in it is ours.
fn prepare_out_dir(dir: &Path, force: bool, ours: &dyn Fn(&str) -> bool) -> Result<(), CliError> {
    if dir.exists() {
        let entries: Vec<String> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<Result<_, _>>()
            .map_err(io_err(dir))?;
        if !entries.is_empty() {
            if !force {
                return Err(CliError::OutputExists(dir.to_path_buf()));
            }
            if let Some(file) = entries.iter().find(|f| !ours(f)) {
                return Err(CliError::ForeignFile { dir: dir.to_path_buf(), file: file.clone() });
            }
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    output::write_atomic(&path, bytes).map_err(io_err(&path))
}

fn base_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn simulate(spec: &ScenarioSpec, base: &Path) -> Result<SimulationTrace, CliError> {
    let scenario = spec.resolve(base)?;
    Ok(edgelab::run(&scenario)?)
}

fn single(scenario: &Path, out: &Path, seed: Option<u64>, force: bool, with_events: bool) -> Result<(), CliError> {
    let mut spec = ScenarioSpec::load(scenario)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if with_events && spec.events.is_empty() {
        return Err(CliError::NoEvents(scenario.to_path_buf()));
    }
    let mut files: Vec<String> = RUN_FILES.iter().map(|s| s.to_string()).collect();
    if with_events {
        files.push(EVENTS_FILE.to_string());
    }
    let ours = |f: &str| files.iter().any(|x| x == f);
    prepare_out_dir(out, force, &ours)?;
    for f in &files {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }

    let mut manifest = RunManifest {
        scenario: scenario.to_path_buf(),
        seed: spec.seed,
        strategy: spec.strategy_id(),
        out_dir: out.to_path_buf(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now(),
        finished_at: None,
        status: "running",
        files: files.clone(),
    };
    write(out, "manifest.json", &output::json(&manifest))?;

    let trace = simulate(&spec, base_dir(scenario))?;
    let report = MetricsReport::from_trace(&trace);
    let rolling = output::rolling_points(&trace);
    write(out, "requests.csv", &output::requests_csv(&trace))?;
    write(out, "weights.csv", &output::weights_csv(&trace))?;
    write(out, "rolling_qos.csv", &output::rolling_csv(&rolling))?;
    write(out, "regret.csv", &output::regret_csv(&trace))?;
    write(out, "summary.json", &output::json(&report))?;
    if with_events {
        write(out, EVENTS_FILE, &output::events_csv(&trace, &rolling))?;
    }

    manifest.finished_at = Some(now());
    manifest.status = "complete";
    write(out, "manifest.json", &output::json(&manifest))?;
    eprintln!(
        "{}: satisfied {:.3} of {} clients, success {:.3}, Jain {:.3}",
        report.strategy, report.satisfied_fraction, report.clients, report.success_ratio, report.jain_index
    );
    Ok(())
}

pub fn run(scenario: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<(), CliError> {
    single(scenario, out, seed, force, false)
}

pub fn events(scenario: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<(), CliError> {
    single(scenario, out, seed, force, true)
}

pub fn validate(scenario: &Path) -> Result<(), CliError> {
    let spec = ScenarioSpec::load(scenario)?;
    spec.resolve(base_dir(scenario))?;
    Ok(())
}

fn cell_file(strategy: &str, topology: u64) -> String {
    format!("{}-t{topology}.json", strategy.replace(':', "-"))
}

/// Runs every `strategy × topology` cell. Topology `k` uses seed `k` for both
/// the generated network and the run.
pub fn compare(
    template: &Path,
    strategies: &[String],
    topologies: u64,
    out: &Path,
    workers: usize,
    force: bool,
) -> Result<(), CliError> {
    let base = ScenarioSpec::load(template)?;
    let parsed: Vec<StrategySpec> = strategies.iter().map(|s| StrategySpec::parse_id(s)).collect::<Result<_, _>>()?;
    let cells: Vec<(usize, u64)> = (0..parsed.len()).flat_map(|s| (1..=topologies).map(move |t| (s, t))).collect();

    let names: Vec<String> = cells.iter().map(|&(s, t)| cell_file(&parsed[s].id(), t)).collect();
    let ours = |f: &str| f == "aggregate.csv" || f == "manifest.json" || f == "cells";
    prepare_out_dir(out, force, &ours)?;
    let cell_dir = out.join("cells");
    if cell_dir.exists() {
        fs::remove_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
    }
    fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;

    let mut manifest = RunManifest {
        scenario: template.to_path_buf(),
        seed: base.seed,
        strategy: parsed.iter().map(|s| s.id()).collect::<Vec<_>>().join(","),
        out_dir: out.to_path_buf(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now(),
        finished_at: None,
        status: "running",
        files: ["aggregate.csv", "manifest.json"]
            .into_iter()
            .map(String::from)
            .chain(names.iter().map(|n| format!("cells/{n}")))
            .collect(),
    };
    write(out, "manifest.json", &output::json(&manifest))?;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<CellSummary>>> = Mutex::new(vec![None; cells.len()]);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let run_cell = |i: usize| -> Result<CellSummary, CliError> {
        let (s, t) = cells[i];
        let mut spec = base.clone();
        spec.seed = t;
        spec.strategy = parsed[s].clone();
        if let TopologySource::Generated(g) = &mut spec.topology {
            g.seed = None;
        }
        let trace = simulate(&spec, base_dir(template))?;
        let cell = CellSummary { strategy: parsed[s].id(), topology: t, report: MetricsReport::from_trace(&trace) };
        write(&cell_dir, &names[i], &output::json(&cell))?;
        Ok(cell)
    };
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(cells.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    return;
                }
                match run_cell(i) {
                    Ok(c) => {
                        eprintln!(
                            "{} topology {}: satisfied {:.3}",
                            c.strategy, c.topology, c.report.satisfied_fraction
                        );
                        results.lock().unwrap()[i] = Some(c);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        let (s, t) = cells[i];
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(CliError::Cell { strategy: parsed[s].id(), topology: t, source: Box::new(e) });
                        }
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let cells: Vec<CellSummary> =
        results.into_inner().unwrap().into_iter().map(|c| c.expect("every cell ran")).collect();
    write(out, "aggregate.csv", &output::aggregate_csv(&cells))?;
    manifest.finished_at = Some(now());
    manifest.status = "complete";
    write(out, "manifest.json", &output::json(&manifest))?;
    Ok(())
}
