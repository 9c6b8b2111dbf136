//! Subcommand implementations other than the Monte-Carlo sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gridtopo::alm::{self, default_lambda, AlmConfig, RhoScale};
use gridtopo::datagen::{gen_grid, simulate, GridSpec, SimSpec};
use gridtopo::io::{read_matrix, read_measurements, write_matrix, write_measurements, NoiseSource};
use gridtopo::lapcore::{
    build_admittance, fscore, ieee14, ieee33, magnitude_ratio, mse, project_to_laplacian, read_case, write_case,
    ComplexAdmittance, LineList, SupportSet,
};
use gridtopo::models::{build, MeasurementSet, ModelKind};
use gridtopo::oracle::{self, OracleConfig};
use gridtopo::Error;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::args::{CaseStatsArgs, EstimateArgs, EvalArgs, GridArgs, NoiseArgs, OracleArgs, SimulateArgs, SolverArgs};
use crate::error::{at, CliError, CliResult};

/// Reads a case file, falling back to the bundled `ieee14` / `ieee33` when
/// the name matches and no such file exists.
pub fn load_case(spec: &str) -> CliResult<LineList> {
    let path = Path::new(spec);
    if !path.exists() && path.parent().is_none_or(|p| p.as_os_str().is_empty()) {
        match spec.trim_end_matches(".csv") {
            "ieee14" => return Ok(ieee14()),
            "ieee33" => return Ok(ieee33()),
            _ => {}
        }
    }
    read_case(path).map_err(at(path))
}

/// Where the reference grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSource {
    Case(String),
    Random(GridSpec),
}

impl GridSource {
    pub fn from_args(args: &GridArgs, seed: u64) -> Self {
        match args.random_buses {
            Some(m) => GridSource::Random(GridSpec {
                overlap: args.overlap,
                ..GridSpec::new(m as usize, args.extra_edges, seed)
            }),
            None => GridSource::Case(args.case.clone()),
        }
    }

    pub fn load(&self) -> CliResult<(ComplexAdmittance, LineList)> {
        match self {
            GridSource::Case(spec) => {
                let lines = load_case(spec)?;
                Ok((build_admittance(&lines), lines))
            }
            GridSource::Random(spec) => Ok(gen_grid(spec)?),
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.to_path_buf(), source })
}

/// Writes a file through a buffered writer, creating parent directories.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> gridtopo::Result<()>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(at(path))?;
    w.flush().map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, |w| Ok(writeln!(w, "{text}")?))
}

fn write_matrix_file(path: &Path, a: &DMatrix<f64>) -> CliResult<()> {
    write_file(path, |w| write_matrix(w, a))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    rho: Option<f64>,
    lambda_g: Option<f64>,
    lambda_b: Option<f64>,
    max_iters: Option<usize>,
    eps: Option<f64>,
    jitter: Option<f64>,
    seed: Option<u64>,
}

/// Solver settings from the optional JSON file, overridden by flags.
/// Returns the seed from the file as well.
pub fn solver_config(args: &SolverArgs) -> CliResult<(AlmConfig, Option<u64>)> {
    let file: SolverFile = match &args.solver_config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|source| CliError::File { path: path.clone(), source })?;
            serde_json::from_str(&text)?
        }
        None => SolverFile::default(),
    };
    let d = AlmConfig::default();
    let cfg = AlmConfig {
        rho: args.rho.or(file.rho).unwrap_or(d.rho),
        rho_scale: if args.absolute_rho { RhoScale::Absolute } else { d.rho_scale },
        lambda_g: args.lambda_g.or(file.lambda_g),
        lambda_b: args.lambda_b.or(file.lambda_b),
        max_iters: args.max_iters.map(|n| n as usize).or(file.max_iters).unwrap_or(d.max_iters),
        eps: args.eps.or(file.eps).unwrap_or(d.eps),
        jitter: args.jitter.or(file.jitter).unwrap_or(d.jitter),
        normalized_stop: !args.unnormalized_stop,
        update_rule: args.rule.map_or(d.update_rule, Into::into),
        threshold: !args.no_threshold,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((cfg, file.seed))
}

/// Loads measurements with `--sigma2`, `--noise`, or the `σ²` recorded in the
/// JSON sidecar written by `simulate`.
pub fn load_measurements(path: &Path, noise: &NoiseArgs) -> CliResult<MeasurementSet> {
    let source = if let Some(s) = noise.sigma2 {
        NoiseSource::Sigma2(s)
    } else if let Some(p) = &noise.noise {
        let r = read_matrix(p).map_err(at(p))?;
        NoiseSource::Covariance(gridtopo::models::NoiseModel::new(r).map_err(at(p))?)
    } else {
        let sidecar = path.with_extension("json");
        let sigma2 = std::fs::read_to_string(&sidecar)
            .ok()
            .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
            .and_then(|v| v["sigma2"].as_f64())
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "no noise model: pass --sigma2 or --noise, or keep {} next to the measurements",
                    sidecar.display()
                ))
            })?;
        NoiseSource::Sigma2(sigma2)
    };
    read_measurements(path, source).map_err(at(path))
}

fn check_model(meas: &MeasurementSet, declared: ModelKind, path: &Path) -> CliResult<()> {
    if meas.kind() != declared {
        return Err(at(path)(Error::WrongModel { expected: declared.to_string(), actual: meas.kind().to_string() }));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    sigma2: f64,
    seed: u64,
    m: usize,
    n_samples: usize,
    snr_db: f64,
    grid: &'a GridSource,
    spec: &'a SimSpec,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let grid = GridSource::from_args(&args.grid, args.seed);
    let (adm, lines) = grid.load()?;
    let spec = SimSpec { noiseless: args.noiseless, ..SimSpec::new(args.model, args.samples as usize, args.snr_db, args.seed) };
    let meas = simulate(&adm, &spec)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("measurements.csv"), |w| write_measurements(w, &meas))?;
    write_file(&args.out.join("case.csv"), |w| write_case(w, &lines))?;
    let sigma2 = meas.noise().mean_variance();
    let sidecar =
        SimulateSidecar { sigma2, seed: args.seed, m: meas.m(), n_samples: meas.n_samples(), snr_db: args.snr_db, grid: &grid, spec: &spec };
    write_json(&args.out.join("measurements.json"), &sidecar)?;
    println!("wrote {} samples on {} buses to {} (sigma2 {sigma2:?})", meas.n_samples(), meas.m(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    model: ModelKind,
    m: usize,
    n_samples: usize,
    #[serde(flatten)]
    report: &'a alm::AlmReport,
}

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let (cfg, _) = solver_config(&args.solver)?;
    let meas = load_measurements(&args.measurements, &args.noise)?;
    check_model(&meas, args.model, &args.measurements)?;
    let q = build(&meas)?;
    let report = alm::run(&q, &meas, &cfg)?;
    create_dir(&args.out)?;
    if let Some(g) = &report.g_hat {
        write_matrix_file(&args.out.join("g_hat.csv"), g.entries())?;
    }
    write_matrix_file(&args.out.join("b_hat.csv"), report.b_hat_tilde.entries())?;
    let out = EstimateOutput { model: args.model, m: meas.m(), n_samples: meas.n_samples(), report: &report };
    write_json(&args.out.join("report.json"), &out)?;
    println!(
        "converged={} iterations={} objective={:?}",
        report.converged, report.iterations, report.final_objective
    );
    Ok(())
}

/// Errors and support agreement of an estimate against a reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub m: usize,
    pub mse_g: Option<f64>,
    pub mse_b: f64,
    pub fscore_g: Option<f64>,
    pub fscore_b: f64,
    /// Agreement between the estimated G and B̃ supports.
    pub fscore_gb: Option<f64>,
}

pub fn evaluate(truth: &ComplexAdmittance, g: Option<&DMatrix<f64>>, b: &DMatrix<f64>) -> gridtopo::Result<EvalMetrics> {
    let support = |a: &DMatrix<f64>| SupportSet::from_matrix(a, 0.0);
    let (tg, tb) = (truth.g.entries(), truth.b_tilde.entries());
    let mse_b = mse(tb, b)?;
    let mse_g = g.map(|g| mse(tg, g)).transpose()?;
    Ok(EvalMetrics {
        m: truth.m(),
        mse_g,
        mse_b,
        fscore_g: g.map(|g| fscore(&support(tg), &support(g))),
        fscore_b: fscore(&support(tb), &support(b)),
        fscore_gb: g.map(|g| fscore(&support(g), &support(b))),
    })
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let truth = build_admittance(&load_case(&args.case)?);
    let (g_path, b_path): (Option<PathBuf>, PathBuf) = match &args.estimate {
        Some(dir) => {
            let g = dir.join("g_hat.csv");
            (g.exists().then_some(g), dir.join("b_hat.csv"))
        }
        None => (args.g.clone(), args.b.clone().ok_or_else(|| CliError::Usage("--b is required".into()))?),
    };
    let b = read_matrix(&b_path).map_err(at(&b_path))?;
    let g = g_path.as_ref().map(|p| read_matrix(p).map_err(at(p))).transpose()?;
    let metrics = evaluate(&truth, g.as_ref(), &b)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_json(out, &metrics)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStats {
    pub case: String,
    pub buses: usize,
    pub lines: usize,
    pub xi_g: usize,
    pub xi_b: usize,
    pub fscore: f64,
    /// Absent when no entry is nonzero in both matrices.
    pub ratio: Option<f64>,
}

pub fn case_stats(name: &str, lines: &LineList) -> gridtopo::Result<CaseStats> {
    let adm = build_admittance(lines);
    let (sg, sb) = (adm.g.support(0.0), adm.b_tilde.support(0.0));
    let ratio = match magnitude_ratio(&adm.g, &adm.b_tilde) {
        Ok(r) => Some(r),
        Err(Error::UndefinedRatio) => None,
        Err(e) => return Err(e),
    };
    Ok(CaseStats {
        case: name.to_string(),
        buses: lines.m(),
        lines: lines.lines().len(),
        xi_g: sg.len(),
        xi_b: sb.len(),
        fscore: fscore(&sg, &sb),
        ratio,
    })
}

pub fn cmd_case_stats(args: &CaseStatsArgs) -> CliResult<()> {
    let names = if args.case.is_empty() { vec!["ieee14".to_string(), "ieee33".to_string()] } else { args.case.clone() };
    let stats = names
        .iter()
        .map(|name| Ok(case_stats(name, &load_case(name)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    println!("case,buses,lines,xi_g,xi_b,fscore,ratio");
    for s in &stats {
        let ratio = s.ratio.map_or(String::new(), |r| format!("{r:?}"));
        println!("{},{},{},{},{},{:?},{ratio}", s.case, s.buses, s.lines, s.xi_g, s.xi_b, s.fscore);
    }
    if let Some(out) = &args.out {
        write_json(out, &stats)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput {
    model: ModelKind,
    m: usize,
    lambda_g: f64,
    lambda_b: f64,
    iterations: usize,
    /// Objective at the projected-gradient iterate.
    objective: f64,
    /// Objective after exact projection onto the Laplacian set.
    objective_projected: f64,
}

pub fn cmd_oracle(args: &OracleArgs) -> CliResult<()> {
    let meas = load_measurements(&args.measurements, &args.noise)?;
    check_model(&meas, args.model, &args.measurements)?;
    let q = build(&meas)?;
    let lambda_g = if q.estimates_g { args.lambda_g.unwrap_or_else(|| default_lambda(&meas)) } else { 0.0 };
    let lambda_b = args.lambda_b.unwrap_or_else(|| default_lambda(&meas));
    if !(lambda_g >= 0.0 && lambda_b >= 0.0) {
        return Err(CliError::Usage("regularization weights must be non-negative".into()));
    }
    let cfg = OracleConfig { max_iters: args.max_iters as usize, tol: args.eps, ..OracleConfig::default() };
    let sol = oracle::solve(&q, lambda_g, lambda_b, &cfg).map_err(|e| match e {
        Error::InvalidInput(msg) => CliError::Usage(msg),
        e => e.into(),
    })?;
    create_dir(&args.out)?;
    let b = project_to_laplacian(&sol.b_tilde)?;
    let g = sol.g.as_ref().map(project_to_laplacian).transpose()?;
    if let Some(g) = &g {
        write_matrix_file(&args.out.join("g_oracle.csv"), g.entries())?;
    }
    write_matrix_file(&args.out.join("b_oracle.csv"), b.entries())?;
    let g_eval = g.map_or_else(|| DMatrix::zeros(meas.m(), meas.m()), |g| g.into_inner());
    let objective_projected = gridtopo::models::regularized_objective(&q, &g_eval, b.entries(), lambda_g, lambda_b)?;
    let out = OracleOutput {
        model: args.model,
        m: meas.m(),
        lambda_g,
        lambda_b,
        iterations: sol.iterations,
        objective: sol.objective,
        objective_projected,
    };
    write_json(&args.out.join("oracle.json"), &out)?;
    println!("iterations={} objective={:?}", sol.iterations, sol.objective);
    Ok(())
}
