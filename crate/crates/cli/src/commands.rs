use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use smoothctl_core::analysis::{bound_curves, certify_run, CurveScale};
use smoothctl_core::controller::{read_trace_csv, EpisodeConfig, EpisodeTrace};
use smoothctl_core::experiments::{fig4_table, SideInfoLevel};
use smoothctl_core::{run_episode, Dataset};

use crate::config::{expand_grid, resolve_episode, Cell};
use crate::error::{CliError, CliResult};
use crate::svg::{self, Chart, Series};

/// Everything a command needs, as parsed from the command line.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<(String, Value)>,
    pub env: Option<String>,
    pub svg: bool,
    pub jobs: Option<usize>,
    pub input: Option<PathBuf>,
}

impl RunManifest {
    fn read_config(&self) -> CliResult<Value> {
        match &self.config {
            None => Ok(Value::Null),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    fn all_overrides(&self) -> Vec<(String, Value)> {
        let mut o = self.overrides.clone();
        if let Some(s) = self.seed {
            o.push(("seed".into(), Value::from(s)));
        }
        o
    }

    /// Flat parameters of the table commands: the config file's top-level
    /// keys, then overrides.
    fn table_params(&self) -> CliResult<Map<String, Value>> {
        let mut params = match self.read_config()? {
            Value::Null => Map::new(),
            Value::Object(m) => m,
            _ => return Err(CliError::Config("config must be a JSON object".into())),
        };
        for (k, v) in &self.overrides {
            params.insert(k.clone(), v.clone());
        }
        Ok(params)
    }
}

/// Records the command and its resolved parameters next to its outputs.
fn write_manifest(out: &Path, command: &str, params: &Value) -> CliResult<()> {
    let bytes = serde_json::to_vec(params).map_err(CliError::runtime)?;
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": hex::encode(Sha256::digest(bytes)),
        "params": params,
    });
    write_json(&out.join("manifest.json"), &manifest)
}

fn reject_unknown(params: &Map<String, Value>, known: &[&str]) -> CliResult<()> {
    match params.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(CliError::Config(format!("unknown parameter {k:?}, expected one of {known:?}"))),
        None => Ok(()),
    }
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))
}

fn create(p: &Path) -> CliResult<BufWriter<File>> {
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(p, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
}

fn write_svg(p: &Path, chart: &Chart, series: &[Series]) -> CliResult<()> {
    fs::write(p, svg::render(chart, series)).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
}

/// Writes config, trace, timing, dataset and summary files of one episode.
fn write_episode(dir: &Path, trace: &EpisodeTrace, with_svg: bool) -> CliResult<()> {
    create_dir(dir)?;
    write_json(&dir.join("config.json"), &trace.config)?;
    trace.write_csv(create(&dir.join("trace.csv"))?).map_err(CliError::runtime)?;
    trace.write_timing_csv(create(&dir.join("timing.csv"))?).map_err(CliError::runtime)?;
    trace.dataset.write_csv(create(&dir.join("dataset.csv"))?).map_err(CliError::runtime)?;
    write_json(&dir.join("summary.json"), &trace.summary())?;
    if with_svg {
        let cost = trace.steps.iter().map(|s| (s.t as f64, s.cost)).collect();
        let regret = trace.steps.iter().filter_map(|s| Some((s.t as f64, s.regret?))).collect();
        let chart = Chart { title: "one-step cost", x_label: "t", y_label: "value", log_x: false, log_y: false };
        write_svg(&dir.join("cost.svg"), &chart, &[Series { name: "cost", points: cost }, Series { name: "regret", points: regret }])?;
        let ms = trace.steps.iter().map(|s| (s.t as f64, s.solve_time * 1e3)).collect();
        let chart = Chart { title: "solve time", x_label: "t", y_label: "ms", log_x: false, log_y: false };
        write_svg(&dir.join("timing.svg"), &chart, &[Series { name: "solve_ms", points: ms }])?;
    }
    Ok(())
}

fn episode_outcome(trace: &EpisodeTrace) -> CliResult<()> {
    match &trace.error {
        Some(e) => Err(CliError::Runtime(format!("{} at t={}: {}", e.kind, e.t, e.message))),
        None => Ok(()),
    }
}

pub fn cmd_run(m: &RunManifest) -> CliResult<()> {
    let cfg = resolve_episode(m.read_config()?, m.env.as_deref(), &m.all_overrides())?;
    let trace = run_episode(&cfg).map_err(CliError::config)?;
    write_episode(&m.out, &trace, m.svg)?;
    let s = trace.summary();
    log::info!(
        "{} steps, target reached: {}, cumulative regret: {:?}",
        s.steps,
        s.terminated_at_target,
        s.cum_regret
    );
    episode_outcome(&trace)
}

#[derive(Serialize)]
struct SweepRow {
    cell: usize,
    overrides: String,
    config_hash: String,
    steps: usize,
    terminated_at_target: bool,
    steps_to_target: Option<usize>,
    avg_regret: Option<f64>,
    cum_regret: Option<f64>,
    prop1_violations: Option<usize>,
    error: Option<String>,
}

fn run_cell(m: &RunManifest, base: &Value, idx: usize, cell: &Cell) -> CliResult<SweepRow> {
    let mut overrides = m.all_overrides();
    overrides.extend(cell.iter().cloned());
    let described = serde_json::to_string(&cell.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Map<_, _>>())
        .map_err(CliError::runtime)?;
    let cfg = resolve_episode(base.clone(), m.env.as_deref(), &overrides)?;
    let row = |cfg: &EpisodeConfig, trace: Option<&EpisodeTrace>, error: Option<String>| {
        let s = trace.map(|t| t.summary());
        SweepRow {
            cell: idx,
            overrides: described.clone(),
            config_hash: cfg.hash(),
            steps: s.as_ref().map_or(0, |s| s.steps),
            terminated_at_target: s.as_ref().is_some_and(|s| s.terminated_at_target),
            steps_to_target: s.as_ref().and_then(|s| s.steps_to_target),
            avg_regret: s.as_ref().and_then(|s| s.avg_regret),
            cum_regret: s.as_ref().and_then(|s| s.cum_regret),
            prop1_violations: s.as_ref().and_then(|s| s.prop1_violations),
            error,
        }
    };
    match run_episode(&cfg) {
        Ok(trace) => {
            write_episode(&m.out.join("cells").join(format!("{idx:04}")), &trace, m.svg)?;
            let err = trace.error.as_ref().map(|e| format!("{}: {}", e.kind, e.message));
            Ok(row(&cfg, Some(&trace), err))
        }
        Err(e) => Ok(row(&cfg, None, Some(e.to_string()))),
    }
}

pub fn cmd_sweep(m: &RunManifest) -> CliResult<()> {
    let file = m.read_config()?;
    let obj = file.as_object().ok_or_else(|| CliError::Config("sweep config must be an object".into()))?;
    let grid = obj
        .get("grid")
        .and_then(Value::as_object)
        .ok_or_else(|| CliError::Config("sweep config needs a \"grid\" object".into()))?;
    let base = obj.get("base").cloned().unwrap_or(Value::Null);
    let cells = expand_grid(grid)?;
    // Fail on malformed cells before spending time on any episode.
    for cell in &cells {
        let mut o = m.all_overrides();
        o.extend(cell.iter().cloned());
        resolve_episode(base.clone(), m.env.as_deref(), &o)?;
    }
    create_dir(&m.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.jobs.unwrap_or(0))
        .build()
        .map_err(CliError::runtime)?;
    let rows: Vec<CliResult<SweepRow>> =
        pool.install(|| cells.par_iter().enumerate().map(|(i, c)| run_cell(m, &base, i, c)).collect());
    let rows: Vec<SweepRow> = rows.into_iter().collect::<CliResult<_>>()?;
    let mut w = csv_writer(&m.out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    let failed: Vec<usize> = rows.iter().filter(|r| r.error.is_some()).map(|r| r.cell).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} of {} cells failed: {failed:?}", failed.len(), rows.len())))
    }
}

fn csv_writer(p: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(p)?))
}

pub fn cmd_certify(m: &RunManifest) -> CliResult<()> {
    let dir = match (&m.input, &m.config) {
        (Some(d), _) => d.clone(),
        (None, Some(c)) => c.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
        (None, None) => return Err(CliError::Config("certify needs --input DIR or --config DIR/config.json".into())),
    };
    let read = |name: &str| -> CliResult<File> {
        let p = dir.join(name);
        File::open(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    };
    let cfg: EpisodeConfig = serde_json::from_reader(read("config.json")?).map_err(CliError::config)?;
    let env = cfg.env.build().map_err(CliError::config)?;
    let rows = read_trace_csv(read("trace.csv")?).map_err(CliError::config)?;
    let dataset = Dataset::read_csv(read("dataset.csv")?, env.dim_z()).map_err(CliError::config)?;
    let diam = env.context_box().product(env.control_set().bounding_box()).diameter();
    let report = certify_run(&cfg, &rows, &dataset, diam).map_err(CliError::config)?;
    let out = if m.out.as_os_str().is_empty() { dir.clone() } else { m.out.clone() };
    create_dir(&out)?;
    write_json(&out.join("certification.json"), &report)?;
    if report.ok {
        Ok(())
    } else {
        Err(CliError::Certification(format!(
            "prop1_violations={:?} cor2_ok={:?} regret_nonnegative={}",
            report.prop1_violations, report.cor2_ok, report.regret_nonnegative
        )))
    }
}

pub fn cmd_fig4(m: &RunManifest) -> CliResult<()> {
    let params = m.table_params()?;
    reject_unknown(&params, &["points"])?;
    let points = match params.get("points") {
        Some(v) => v.as_u64().filter(|p| *p >= 2).ok_or_else(|| CliError::Config("points must be an integer >= 2".into()))?
            as usize,
        None => 701,
    };
    create_dir(&m.out)?;
    write_manifest(&m.out, "fig4", &serde_json::json!({ "points": points }))?;
    let mut series = Vec::new();
    for level in SideInfoLevel::ALL {
        let rows = fig4_table(level, points).map_err(CliError::runtime)?;
        let mut w = csv_writer(&m.out.join(format!("fig4_{}.csv", level.name())))?;
        w.write_record(["z", "J", "lower", "upper"]).map_err(CliError::runtime)?;
        for r in &rows {
            w.write_record([r.z, r.j, r.lower, r.upper].map(|v| format!("{v:?}"))).map_err(CliError::runtime)?;
        }
        w.flush().map_err(CliError::runtime)?;
        series.push((level, rows));
    }
    if m.svg {
        let mut lines = vec![Series { name: "J", points: series[0].1.iter().map(|r| (r.z, r.j)).collect() }];
        for (level, rows) in &series {
            lines.push(Series { name: level.name(), points: rows.iter().map(|r| (r.z, r.upper - r.lower)).collect() });
        }
        let chart = Chart { title: "bounds on -log NormalCDF", x_label: "z", y_label: "J and gap", log_x: false, log_y: false };
        write_svg(&m.out.join("fig4.svg"), &chart, &lines)?;
    }
    Ok(())
}

/// Distinct integers log-spaced over `[2, t_max]`.
fn horizon_grid(t_max: f64, points: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..points)
        .map(|k| (2f64.ln() + (t_max.ln() - 2f64.ln()) * k as f64 / (points - 1).max(1) as f64).exp().round())
        .collect();
    ts.dedup();
    ts
}

pub fn cmd_curves(m: &RunManifest) -> CliResult<()> {
    let params = m.table_params()?;
    reject_unknown(&params, &["d", "t_max", "t_points", "scale"])?;
    let dims: Vec<usize> = match params.get("d") {
        Some(v) => serde_json::from_value(v.clone()).map_err(CliError::config)?,
        None => vec![2, 3, 4, 5, 7],
    };
    let t_max = params.get("t_max").and_then(Value::as_f64).unwrap_or(1e4);
    let points = params.get("t_points").and_then(Value::as_u64).unwrap_or(200) as usize;
    if !(t_max > 2.0) || points < 2 {
        return Err(CliError::Config("need t_max > 2 and t_points >= 2".into()));
    }
    let scale = match params.get("scale").and_then(Value::as_f64) {
        Some(c) => CurveScale::Constant(c),
        None => CurveScale::Normalized,
    };
    let ts = horizon_grid(t_max, points);
    create_dir(&m.out)?;
    let resolved = serde_json::json!({ "d": dims, "t_max": t_max, "t_points": points, "scale": scale });
    write_manifest(&m.out, "curves", &resolved)?;
    let mut lines = Vec::new();
    for &d in &dims {
        let curve = bound_curves(d, &ts, scale).map_err(CliError::config)?;
        let mut w = csv_writer(&m.out.join(format!("curves_d{d}.csv")))?;
        w.write_record(["T", "bound_value"]).map_err(CliError::runtime)?;
        for (t, v) in &curve {
            w.write_record([format!("{t:?}"), format!("{v:?}")]).map_err(CliError::runtime)?;
        }
        w.flush().map_err(CliError::runtime)?;
        lines.push((d, curve));
    }
    if m.svg {
        let names: Vec<String> = lines.iter().map(|(d, _)| format!("d = {d}")).collect();
        let series: Vec<Series> =
            lines.iter().zip(&names).map(|((_, c), n)| Series { name: n, points: c.clone() }).collect();
        let chart = Chart { title: "worst-case average regret rate", x_label: "T", y_label: "bound", log_x: true, log_y: true };
        write_svg(&m.out.join("curves.svg"), &chart, &series)?;
    }
    Ok(())
}
