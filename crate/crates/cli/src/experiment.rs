//! Monte-Carlo sweeps over SNR and trials.
//!
//! Trial `t` at every SNR draws its data with seed `seed + t`. Trials run on a
//! worker pool and are gathered in `(snr, trial, variant)` order, so the
//! results and summary files do not depend on the thread count. Wall times
//! go to a separate file.

use std::path::Path;
use std::time::{Duration, Instant};

use gridtopo::alm::{self, AlmConfig};
use gridtopo::datagen::{simulate, GridSpec, SimSpec};
use gridtopo::lapcore::ComplexAdmittance;
use gridtopo::models::{build, ModelKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{evaluate, write_file, write_json, GridSource};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Case CSV or bundled case name; ignored when `grid` is set.
    #[serde(default)]
    pub case: Option<String>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Model generating the data.
    pub model: ModelKind,
    /// Estimator models; empty selects every model the data supports.
    #[serde(default)]
    pub variants: Vec<ModelKind>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub solver: AlmConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn grid_source(&self) -> GridSource {
        match (&self.grid, &self.case) {
            (Some(spec), _) => GridSource::Random(spec.clone()),
            (None, Some(case)) => GridSource::Case(case.clone()),
            (None, None) => GridSource::Case("ieee33".into()),
        }
    }

    /// Estimators run on each trial.
    pub fn effective_variants(&self) -> Vec<ModelKind> {
        if !self.variants.is_empty() {
            return self.variants.clone();
        }
        if self.model == ModelKind::Dc {
            vec![ModelKind::Dc]
        } else {
            ModelKind::ALL.to_vec()
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return usage("the SNR grid must be non-empty and finite".into());
        }
        if self.trials == 0 || self.n_samples == 0 {
            return usage("trials and samples must be at least 1".into());
        }
        if self.model == ModelKind::Dc {
            if let Some(v) = self.variants.iter().find(|&&v| v != ModelKind::Dc) {
                return usage(format!("DC data carries no q or |v|; cannot run the {v} estimator"));
            }
        }
        self.solver.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub mse_g: Option<f64>,
    pub mse_b: f64,
    pub fscore_g: Option<f64>,
    pub fscore_b: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub variant: ModelKind,
    /// Failure message for trials whose simulation or solve failed.
    pub outcome: Result<TrialMetrics, String>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub variant: ModelKind,
    pub trials: usize,
    pub failures: usize,
    pub converged: usize,
    pub median_mse_g: Option<f64>,
    pub mean_mse_g: Option<f64>,
    pub median_mse_b: Option<f64>,
    pub mean_mse_b: Option<f64>,
    pub median_fscore_g: Option<f64>,
    pub mean_fscore_g: Option<f64>,
    pub median_fscore_b: Option<f64>,
    pub mean_fscore_b: Option<f64>,
    pub median_iterations: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

/// `GRIDTOPO_THREADS` if set, otherwise the flag; 0 lets the pool decide.
pub fn resolve_threads(flag: usize) -> CliResult<usize> {
    match std::env::var("GRIDTOPO_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("GRIDTOPO_THREADS must be a count, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn run_trial(
    truth: &ComplexAdmittance,
    cfg: &ExperimentConfig,
    variants: &[ModelKind],
    snr_db: f64,
    trial: usize,
) -> Vec<TrialRecord> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let start = Instant::now();
    let data = simulate(truth, &SimSpec::new(cfg.model, cfg.n_samples, snr_db, seed));
    let sim_time = start.elapsed();
    variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|data| {
                let solve = || -> gridtopo::Result<TrialMetrics> {
                    let meas = data.as_kind(variant)?;
                    let report = alm::run(&build(&meas)?, &meas, &cfg.solver)?;
                    let metrics =
                        evaluate(truth, report.g_hat.as_ref().map(|g| g.entries()), report.b_hat_tilde.entries())?;
                    Ok(TrialMetrics {
                        mse_g: metrics.mse_g,
                        mse_b: metrics.mse_b,
                        fscore_g: metrics.fscore_g,
                        fscore_b: metrics.fscore_b,
                        iterations: report.iterations,
                        converged: report.converged,
                    })
                };
                solve().map_err(|e| e.to_string())
            });
            TrialRecord { snr_db, trial, seed, variant, outcome, wall_time: sim_time + start.elapsed() }
        })
        .collect()
}

fn summarize(cfg: &ExperimentConfig, variants: &[ModelKind], records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &snr_db in &cfg.snr_db {
        for &variant in variants {
            let group: Vec<&TrialRecord> =
                records.iter().filter(|r| r.snr_db == snr_db && r.variant == variant).collect();
            let ok: Vec<&TrialMetrics> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let collect = |f: &dyn Fn(&TrialMetrics) -> Option<f64>| ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>();
            let mse_g = collect(&|m| m.mse_g);
            let mse_b = collect(&|m| Some(m.mse_b));
            let fs_g = collect(&|m| m.fscore_g);
            let fs_b = collect(&|m| Some(m.fscore_b));
            let iters = collect(&|m| Some(m.iterations as f64));
            rows.push(SummaryRow {
                snr_db,
                variant,
                trials: group.len(),
                failures: group.len() - ok.len(),
                converged: ok.iter().filter(|m| m.converged).count(),
                median_mse_g: median(&mse_g),
                mean_mse_g: mean(&mse_g),
                median_mse_b: median(&mse_b),
                mean_mse_b: mean(&mse_b),
                median_fscore_g: median(&fs_g),
                mean_fscore_g: mean(&fs_g),
                median_fscore_b: median(&fs_b),
                mean_fscore_b: mean(&fs_b),
                median_iterations: median(&iters),
            });
        }
    }
    rows
}

/// Runs every `(snr, trial)` pair on a pool of `threads` workers.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> CliResult<ExperimentReport> {
    cfg.validate()?;
    let (truth, _) = cfg.grid_source().load()?;
    let variants = cfg.effective_variants();
    let tasks: Vec<(f64, usize)> =
        cfg.snr_db.iter().flat_map(|&s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(snr, t)| run_trial(&truth, cfg, &variants, snr, t))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let summary = summarize(cfg, &variants, &records);
    Ok(ExperimentReport { records, summary })
}

fn num(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:?}"))
}

fn csv_err(e: csv::Error) -> gridtopo::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => gridtopo::Error::Io(e),
        other => gridtopo::Error::InvalidInput(format!("{other:?}")),
    }
}

pub const RESULTS_HEADER: [&str; 11] =
    ["snr_db", "trial", "seed", "variant", "mse_g", "mse_b", "fscore_g", "fscore_b", "iterations", "converged", "error"];

/// Long format: one row per `(snr, trial, variant)`.
pub fn write_results(path: &Path, records: &[TrialRecord]) -> CliResult<()> {
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(RESULTS_HEADER).map_err(csv_err)?;
        for r in records {
            let mut row = vec![format!("{:?}", r.snr_db), r.trial.to_string(), r.seed.to_string(), r.variant.to_string()];
            match &r.outcome {
                Ok(m) => row.extend([
                    num(m.mse_g),
                    num(Some(m.mse_b)),
                    num(m.fscore_g),
                    num(Some(m.fscore_b)),
                    m.iterations.to_string(),
                    m.converged.to_string(),
                    String::new(),
                ]),
                Err(e) => row.extend(std::iter::repeat_n(String::new(), 6).chain([e.clone()])),
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> CliResult<()> {
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "snr_db",
            "variant",
            "trials",
            "failures",
            "converged",
            "median_mse_g",
            "mean_mse_g",
            "median_mse_b",
            "mean_mse_b",
            "median_fscore_g",
            "mean_fscore_g",
            "median_fscore_b",
            "mean_fscore_b",
            "median_iterations",
        ])
        .map_err(csv_err)?;
        for r in rows {
            out.write_record([
                format!("{:?}", r.snr_db),
                r.variant.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
                r.converged.to_string(),
                num(r.median_mse_g),
                num(r.mean_mse_g),
                num(r.median_mse_b),
                num(r.mean_mse_b),
                num(r.median_fscore_g),
                num(r.mean_fscore_g),
                num(r.median_fscore_b),
                num(r.mean_fscore_b),
                num(r.median_iterations),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn write_timings(path: &Path, records: &[TrialRecord]) -> CliResult<()> {
    write_file(path, |w| {
        use std::io::Write;
        writeln!(w, "snr_db,trial,variant,wall_seconds")?;
        for r in records {
            writeln!(w, "{:?},{},{},{:?}", r.snr_db, r.trial, r.variant, r.wall_time.as_secs_f64())?;
        }
        Ok(())
    })
}

/// Median MSE(B̃) against SNR on a log axis, one polyline per variant.
pub fn render_svg(rows: &[SummaryRow], variants: &[ModelKind]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 3] = ["#1b6ca8", "#d1495b", "#66a182"];
    let pts: Vec<(f64, f64)> =
        rows.iter().filter_map(|r| r.median_mse_b.filter(|&v| v > 0.0).map(|v| (r.snr_db, v.log10()))).collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{t}\" text-anchor=\"middle\">SNR [dB]</text>\n\
         <text x=\"12\" y=\"{cy}\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">log10 median MSE(B)</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        t = H - 12.0,
        cy = H / 2.0,
    );
    for (k, &variant) in variants.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let line: Vec<String> = rows
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.median_mse_b.filter(|&v| v > 0.0).map(|v| format!("{:.2},{:.2}", sx(r.snr_db), sy(v.log10()))))
            .collect();
        svg += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", line.join(" "));
        svg += &format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">ALM-{}</text>\n",
            W - PAD - 60.0,
            PAD + 14.0 * k as f64,
            variant.as_str().to_uppercase()
        );
    }
    for (v, label) in [(x0, x0), (x1, x1)] {
        svg += &format!("<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>\n", sx(v), H - PAD + 14.0);
    }
    for v in [y0, y1] {
        svg += &format!("<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>\n", PAD - 4.0, sy(v) + 4.0);
    }
    svg + "</svg>\n"
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a ExperimentConfig,
    variants: &'a [ModelKind],
    summary: &'a [SummaryRow],
}

/// Runs the sweep and writes `results.csv`, `summary.csv`, `summary.json`,
/// `timings.csv` and optionally `plot.svg` under `out`.
pub fn run_and_write(cfg: &ExperimentConfig, threads: usize, out: &Path, svg: bool) -> CliResult<ExperimentReport> {
    let report = run_experiment(cfg, threads)?;
    let variants = cfg.effective_variants();
    write_results(&out.join("results.csv"), &report.records)?;
    write_summary(&out.join("summary.csv"), &report.summary)?;
    write_json(&out.join("summary.json"), &SummaryFile { config: cfg, variants: &variants, summary: &report.summary })?;
    write_timings(&out.join("timings.csv"), &report.records)?;
    if svg {
        let text = render_svg(&report.summary, &variants);
        write_file(&out.join("plot.svg"), |w| {
            use std::io::Write;
            Ok(w.write_all(text.as_bytes())?)
        })?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            case: None,
            grid: Some(GridSpec::new(5, 1, seed)),
            model: ModelKind::Dlpf,
            variants: vec![],
            snr_db: vec![10.0, 30.0],
            trials: 2,
            n_samples: 40,
            solver: AlmConfig::default(),
            seed,
        }
    }

    #[test]
    fn median_of_even_and_odd_counts() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn row_count_and_order() {
        let report = run_experiment(&small(1), 1).unwrap();
        assert_eq!(report.records.len(), 2 * 2 * 3);
        let keys: Vec<(f64, usize, ModelKind)> = report.records.iter().map(|r| (r.snr_db, r.trial, r.variant)).collect();
        assert_eq!(keys[0], (10.0, 0, ModelKind::Ac));
        assert_eq!(keys[4], (10.0, 1, ModelKind::Dlpf));
        assert_eq!(keys[11], (30.0, 1, ModelKind::Dc));
        assert_eq!(report.summary.len(), 2 * 3);
        for r in &report.records {
            let m = r.outcome.as_ref().unwrap();
            assert!((0.0..=1.0).contains(&m.fscore_b) && m.mse_b >= 0.0);
            assert_eq!(m.mse_g.is_none(), r.variant == ModelKind::Dc);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let strip = |r: ExperimentReport| r.records.into_iter().map(|x| (x.trial, x.outcome)).collect::<Vec<_>>();
        let a = strip(run_experiment(&small(2), 1).unwrap());
        let b = strip(run_experiment(&small(2), 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_budget_is_reported_per_row() {
        let cfg = ExperimentConfig { solver: AlmConfig { max_iters: 1, ..AlmConfig::default() }, ..small(3) };
        let report = run_experiment(&cfg, 1).unwrap();
        assert!(report.records.iter().all(|r| !r.outcome.as_ref().unwrap().converged));
        assert!(report.summary.iter().all(|r| r.converged == 0 && r.failures == 0));
    }

    #[test]
    fn error_rows_leave_metrics_empty() {
        let mut rec = run_experiment(&ExperimentConfig { trials: 1, snr_db: vec![20.0], ..small(5) }, 1).unwrap().records[0].clone();
        rec.outcome = Err("solver diverged: boom, \"quoted\"".into());
        let dir = tempfile::tempdir().unwrap();
        write_results(&dir.path().join("r.csv"), &[rec]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let row = reader.records().next().unwrap().unwrap();
        assert_eq!(&row[10], "solver diverged: boom, \"quoted\"");
        assert!(row.iter().skip(4).take(6).all(|s| s.is_empty()));
    }

    #[test]
    fn invalid_configs() {
        assert!(ExperimentConfig { snr_db: vec![], ..small(0) }.validate().is_err());
        assert!(ExperimentConfig { trials: 0, ..small(0) }.validate().is_err());
        let dc = ExperimentConfig { model: ModelKind::Dc, variants: vec![ModelKind::Ac], ..small(0) };
        assert!(matches!(dc.validate(), Err(CliError::Usage(_))));
        assert_eq!(ExperimentConfig { model: ModelKind::Dc, ..small(0) }.effective_variants(), vec![ModelKind::Dc]);
    }

    #[test]
    fn svg_has_one_line_per_variant() {
        let report = run_experiment(&small(4), 1).unwrap();
        let svg = render_svg(&report.summary, &ModelKind::ALL);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
