//! The batch commands. Each one writes into a staging directory next to
//! the requested output directory and renames it into place on success, so
//! a failed run leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use distdiff_core::data::{self, split_standardize, Part};
use distdiff_core::metrics::{case_metrics, CaseMetrics, MetricsReport};
use distdiff_core::sampler::{autoregressive_rollout, epistemic_estimate, sample_case};
use distdiff_core::trainer::{fit, TrainingReport};
use distdiff_core::{Dataset, Matrix, ModelCheckpoint, SamplerConfig};

use crate::config::RunConfig;
use crate::io;

pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gendata,
    Train,
    Sample,
    Evaluate,
    Calibrate,
}

impl FromStr for Command {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gendata" => Command::Gendata,
            "train" => Command::Train,
            "sample" => Command::Sample,
            "evaluate" => Command::Evaluate,
            "calibrate" => Command::Calibrate,
            _ => bail!("unknown command `{s}`"),
        })
    }
}

/// Runs `cmd`, writing into `out` or, when `None`, into `output.dir`.
pub fn run(cmd: Command, cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let out = match out {
        Some(p) => p.to_path_buf(),
        None if !cfg.get("output.dir").is_empty() => PathBuf::from(cfg.get("output.dir")),
        None => bail!("no output directory: pass --out or set output.dir"),
    };
    match cmd {
        Command::Gendata => cmd_gendata(cfg, &out).map(drop),
        Command::Train => cmd_train(cfg, &out).map(drop),
        Command::Sample => cmd_sample(cfg, &out).map(drop),
        Command::Evaluate => cmd_evaluate(cfg, &out).map(drop),
        Command::Calibrate => cmd_calibrate(cfg, &out).map(drop),
    }?;
    Ok(out)
}

/// Runs `body` against a fresh staging directory holding the echoed
/// config, then moves it to `out`. An existing `out` is replaced only if it
/// is empty or an earlier output directory (it holds a config echo).
fn atomic<T>(cfg: &RunConfig, out: &Path, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let name = out.file_name().ok_or_else(|| anyhow!("invalid output directory {}", out.display()))?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if out.exists() {
        let replaceable = out.is_dir()
            && (out.join(CONFIG_ECHO).is_file() || fs::read_dir(out).map(|mut d| d.next().is_none()).unwrap_or(false));
        if !replaceable {
            bail!("{} exists and is not an earlier output directory; refusing to replace it", out.display());
        }
    }
    fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
    let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
    let result = (|| {
        let mut echo = cfg.clone();
        echo.set("output.dir", out.display().to_string())?;
        io::write_text(&staging.join(CONFIG_ECHO), &echo.render())?;
        body(&staging)
    })();
    match result {
        Ok(v) => {
            if out.exists() {
                fs::remove_dir_all(out).with_context(|| format!("removing old {}", out.display()))?;
            }
            fs::rename(&staging, out).with_context(|| format!("moving output into {}", out.display()))?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

/// The dataset in raw units, from `data.path` or the configured generator.
pub fn load_raw(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.get("data.path");
    if !path.is_empty() {
        let targets: Vec<String> = cfg.list("data.targets")?;
        let targets = (!targets.is_empty()).then_some(targets.as_slice());
        return Ok(io::load_delimited(Path::new(path), targets)?);
    }
    let n: usize = cfg.parse_value("data.n")?;
    let seed: u64 = cfg.parse_value("data.seed")?;
    Ok(match cfg.get("data.generator") {
        "heteroscedastic" => {
            let r: Vec<f64> = cfg.list("data.range")?;
            let [lo, hi] = r[..] else { bail!("data.range needs two numbers") };
            data::gen_heteroscedastic_on(n, seed, lo, hi)?
        }
        "bimodal" => data::gen_bimodal(n, seed)?,
        "dynamics" => data::gen_dynamics(n, cfg.parse_value("data.steps")?, seed)?,
        g => bail!("unknown data.generator `{g}` (heteroscedastic, bimodal, dynamics)"),
    })
}

/// Raw dataset together with its seeded split and standardization.
pub struct Prepared {
    pub raw: Dataset,
    pub standardized: Dataset,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let raw = load_raw(cfg)?;
        let standardized = split_standardize(raw.clone(), cfg.split_ratios()?, cfg.parse_value("data.seed")?)?;
        Ok(Prepared { raw, standardized })
    }

    /// Raw features and targets of one split part.
    pub fn part(&self, part: Part) -> Result<(Matrix, Matrix)> {
        Ok(self.raw.subset(self.standardized.indices(part)?))
    }
}

fn parse_part(cfg: &RunConfig, key: &str) -> Result<Part> {
    Ok(match cfg.get(key) {
        "train" => Part::Train,
        "val" => Part::Val,
        "test" => Part::Test,
        p => bail!("{key}: unknown split `{p}` (train, val, test)"),
    })
}

/// Samples every case and scores it. Case `i` uses sampling stream `i`.
pub fn evaluate_cases(
    ckpt: &ModelCheckpoint,
    features: &Matrix,
    targets: &Matrix,
    scfg: &SamplerConfig,
) -> Result<(MetricsReport, Vec<CaseMetrics>)> {
    let cases = (0..features.rows())
        .map(|i| {
            let out = sample_case(ckpt, features.row(i), scfg, i as u64)?;
            Ok(case_metrics(&out.samples, targets.row(i))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricsReport::aggregate(&cases, scfg.seed)?, cases))
}

/// Left-aligned plain-text table.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

const METRIC_HEADER: [&str; 5] = ["rmse", "es", "crps", "nll", "coverage_95"];

fn metric_cells(m: &MetricsReport) -> Vec<String> {
    [m.rmse, m.es, m.crps, m.nll, m.coverage_95].iter().map(|v| format!("{v:.5}")).collect()
}

fn write_cases(path: &Path, cases: &[CaseMetrics]) -> Result<()> {
    let header: Vec<String> =
        std::iter::once("case").chain(METRIC_HEADER).map(String::from).collect();
    let rows = cases.iter().enumerate().map(|(i, c)| vec![i as f64, c.rmse, c.es, c.crps, c.nll, c.coverage_95]);
    Ok(io::write_table(path, &header, rows)?)
}

fn one_checkpoint(cfg: &RunConfig) -> Result<(PathBuf, ModelCheckpoint)> {
    match cfg.checkpoints().as_slice() {
        [p] => Ok((p.clone(), io::load_checkpoint(p)?)),
        [] => bail!("model.checkpoint is not set"),
        _ => bail!("this command takes exactly one model.checkpoint"),
    }
}

pub fn cmd_gendata(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    atomic(cfg, out, |dir| {
        let ds = load_raw(cfg)?;
        io::write_dataset(&dir.join("data.csv"), &ds)?;
        Ok(ds)
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub report: TrainingReport,
    /// Metrics on the validation part with the configured sampler.
    pub val_metrics: MetricsReport,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let sched = cfg.schedule()?;
    let tcfg = cfg.train_config()?;
    let scfg = cfg.sampler_config()?;
    let prepared = Prepared::load(cfg)?;
    let ds = &prepared.standardized;
    let net = cfg.net_config(ds.data_dim(), ds.cond_dim())?;
    atomic(cfg, out, |dir| {
        let start = Instant::now();
        let clock = move || start.elapsed().as_secs_f64();
        let (ckpt, report) = fit(net, &sched, ds, &tcfg, Some(&clock))?;
        io::save_checkpoint(&dir.join("checkpoint.json"), &ckpt)?;

        let header: Vec<String> =
            ["epoch", "train_loss", "val_loss", "lr", "wall_time"].iter().map(|s| s.to_string()).collect();
        let rows = report
            .epochs
            .iter()
            .map(|e| vec![e.epoch as f64, e.train_loss, e.val_loss, e.lr, e.wall_time.unwrap_or(f64::NAN)]);
        io::write_table(&dir.join("training_report.csv"), &header, rows)?;
        io::write_json(&dir.join("training_report.json"), &report)?;

        let (vc, vy) = prepared.part(Part::Val)?;
        let (val_metrics, _) = evaluate_cases(&ckpt, &vc, &vy, &scfg)?;
        io::write_json(&dir.join("val_metrics.json"), &val_metrics)?;

        let mut text = format!(
            "head {}, loss {}, {} epochs{}, best epoch {} (val loss {:.6}), {} non-finite steps\n\n",
            report.head,
            report.loss,
            report.epochs.len(),
            if report.stopped_early { " (stopped early)" } else { "" },
            report.best_epoch,
            report.best_val_loss,
            report.nonfinite_steps,
        );
        text += &render_table(&METRIC_HEADER, &[metric_cells(&val_metrics)]);
        io::write_text(&dir.join("summary.txt"), &text)?;
        Ok(TrainOutcome { checkpoint: ckpt, report, val_metrics })
    })
}

fn indexed_header(first: &[&str], prefix: &str, d: usize) -> Vec<String> {
    first.iter().map(|s| s.to_string()).chain((0..d).map(|i| format!("{prefix}{i}"))).collect()
}

/// Samples for each input row, or autoregressive trajectories when
/// `sample.rollout_steps > 0`. Returns the path of the main output file.
pub fn cmd_sample(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let (_, ckpt) = one_checkpoint(cfg)?;
    let scfg = cfg.sampler_config()?;
    let inputs = cfg.get("sample.inputs");
    if inputs.is_empty() {
        bail!("sample.inputs is not set");
    }
    let table = io::read_table(Path::new(inputs))?;
    let dc = ckpt.net.config().cond_dim;
    let d = ckpt.net.config().data_dim;
    if table.header.len() != dc {
        bail!("{inputs}: {} columns, checkpoint expects {dc} conditions", table.header.len());
    }
    let rollout: usize = cfg.parse_value("sample.rollout_steps")?;
    let weighting = scfg.eu_weighting;
    atomic(cfg, out, |dir| {
        if rollout > 0 {
            if dc != 2 * d {
                bail!("rollout needs conditions (u_prev, u_prev2) of twice the response dimension");
            }
            let mut rows = Vec::new();
            for (case, c) in table.rows.iter().enumerate() {
                let trajs = autoregressive_rollout(&ckpt, &c[..d], &c[d..], rollout, &scfg)?;
                for (m, tr) in trajs.iter().enumerate() {
                    for s in 0..tr.rows() {
                        let mut row = vec![case as f64, m as f64, s as f64];
                        row.extend_from_slice(tr.row(s));
                        rows.push(row);
                    }
                }
            }
            let path = dir.join("trajectories.csv");
            io::write_table(&path, &indexed_header(&["case", "member", "step"], "u_", d), rows)?;
            return Ok(out.join("trajectories.csv"));
        }
        let mut samples = Vec::new();
        let mut trace = Vec::new();
        let mut unc = Vec::new();
        for (case, c) in table.rows.iter().enumerate() {
            let p = sample_case(&ckpt, c, &scfg, case as u64)?;
            for m in 0..p.samples.rows() {
                let mut row = vec![case as f64, m as f64];
                row.extend_from_slice(p.samples.row(m));
                samples.push(row);
            }
            if let Some(tr) = &p.var_trace {
                for t in 0..tr.rows() {
                    let mut row = vec![case as f64, (t + 1) as f64];
                    row.extend_from_slice(tr.row(t));
                    trace.push(row);
                }
                let u = epistemic_estimate(&p, &ckpt.schedule, &ckpt.standardization.target_std, weighting)?;
                let mut row = vec![case as f64];
                row.extend(u.epistemic);
                row.extend(u.aleatoric);
                unc.push(row);
            }
        }
        io::write_table(&dir.join("samples.csv"), &indexed_header(&["case", "member"], "y_", d), samples)?;
        if !trace.is_empty() {
            io::write_table(&dir.join("variance_trace.csv"), &indexed_header(&["case", "t"], "var_", d), trace)?;
            let mut header = indexed_header(&["case"], "eu_", d);
            header.extend((0..d).map(|i| format!("au_{i}")));
            io::write_table(&dir.join("uncertainty.csv"), &header, unc)?;
        }
        Ok(out.join("samples.csv"))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub checkpoint: String,
    pub head: String,
    pub split: String,
    pub metrics: MetricsReport,
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<EvalRow>> {
    let paths = cfg.checkpoints();
    if paths.is_empty() {
        bail!("model.checkpoint is not set");
    }
    let ckpts = paths.iter().map(|p| io::load_checkpoint(p)).collect::<Result<Vec<_>, _>>()?;
    let scfg = cfg.sampler_config()?;
    let part = parse_part(cfg, "eval.split")?;
    let prepared = Prepared::load(cfg)?;
    let (fc, fy) = prepared.part(part)?;
    atomic(cfg, out, |dir| {
        let mut rows = Vec::new();
        for (i, (p, ckpt)) in paths.iter().zip(&ckpts).enumerate() {
            let (metrics, cases) = evaluate_cases(ckpt, &fc, &fy, &scfg)?;
            write_cases(&dir.join(format!("cases_{i}.csv")), &cases)?;
            rows.push(EvalRow {
                checkpoint: p.display().to_string(),
                head: distdiff_core::net::describe(ckpt.net.config()),
                split: cfg.get("eval.split").to_string(),
                metrics,
            });
        }
        io::write_json(&dir.join("metrics.json"), &rows)?;
        let mut header = vec!["#", "head"];
        header.extend(METRIC_HEADER);
        let cells: Vec<Vec<String>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| [vec![i.to_string(), r.head.clone()], metric_cells(&r.metrics)].concat())
            .collect();
        let mut text = render_table(&header, &cells);
        text.push('\n');
        for (i, r) in rows.iter().enumerate() {
            let _ = writeln!(text, "{i}: {}", r.checkpoint);
        }
        io::write_text(&dir.join("metrics.txt"), &text)?;
        Ok(rows)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub tau: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub checkpoint: String,
    pub split: String,
    pub rows: Vec<CalibrationRow>,
    /// Grid value whose 95% coverage is closest to 0.95.
    pub best_tau: f64,
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &Path) -> Result<Calibration> {
    let (path, ckpt) = one_checkpoint(cfg)?;
    let grid: Vec<f64> = cfg.list("calibrate.grid")?;
    if grid.is_empty() {
        bail!("calibrate.grid is empty");
    }
    let base = cfg.sampler_config()?;
    let scfgs = grid
        .iter()
        .map(|&tau| {
            let s = SamplerConfig { tau, ..base };
            s.validate().map(|_| s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let part = parse_part(cfg, "calibrate.split")?;
    let prepared = Prepared::load(cfg)?;
    let (fc, fy) = prepared.part(part)?;
    atomic(cfg, out, |dir| {
        let mut rows = Vec::new();
        for (tau, scfg) in grid.iter().zip(&scfgs) {
            let (metrics, _) = evaluate_cases(&ckpt, &fc, &fy, scfg)?;
            rows.push(CalibrationRow { tau: *tau, metrics });
        }
        let best = rows
            .iter()
            .min_by(|a, b| {
                let da = (a.metrics.coverage_95 - 0.95).abs();
                let db = (b.metrics.coverage_95 - 0.95).abs();
                da.total_cmp(&db)
            })
            .map(|r| r.tau)
            .unwrap_or(1.0);
        let header: Vec<String> = std::iter::once("tau").chain(METRIC_HEADER).map(String::from).collect();
        let table = rows.iter().map(|r| {
            let m = &r.metrics;
            vec![r.tau, m.rmse, m.es, m.crps, m.nll, m.coverage_95]
        });
        io::write_table(&dir.join("calibration.csv"), &header, table)?;
        let cal = Calibration {
            checkpoint: path.display().to_string(),
            split: cfg.get("calibrate.split").to_string(),
            rows,
            best_tau: best,
        };
        io::write_json(&dir.join("calibration.json"), &cal)?;
        let mut h = vec!["tau"];
        h.extend(METRIC_HEADER);
        let cells: Vec<Vec<String>> =
            cal.rows.iter().map(|r| [vec![format!("{}", r.tau)], metric_cells(&r.metrics)].concat()).collect();
        let text = render_table(&h, &cells) + &format!("\nclosest 95% coverage at tau = {}\n", cal.best_tau);
        io::write_text(&dir.join("calibration.txt"), &text)?;
        Ok(cal)
    })
}
