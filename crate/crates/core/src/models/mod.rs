//! Measurement models and the quadratic objective they induce.
//!
//! Every model's negative log-likelihood is a quadratic in
//! `g = vec(G)` and `b = vec(B̃)`:
//!
//! ```text
//! ψ(G, B̃) = ½ gᵀ H_gg g + gᵀ H_gb b + ½ bᵀ H_bb b + l_gᵀ g + l_bᵀ b + c
//! ∇_g ψ    = H_gg g + H_gb b + l_g
//! ∇_b ψ    = H_bg g + H_bb b + l_b,          H_bg = H_gbᵀ
//! ```
//!
//! [`QuadraticForm`] stores these blocks densely (`M² × M²`). Builders also
//! keep the measurements so the objective can be evaluated straight from the
//! model residuals, which stays exact at a perfect fit where the expanded
//! form suffers cancellation.

mod assemble;
mod builders;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::vec;

pub use assemble::{assemble_from_samples, PerSampleQuadratic};
pub use builders::{build, build_ac, build_dc, build_dlpf, factored_form};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ac,
    Dlpf,
    Dc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ac, ModelKind::Dlpf, ModelKind::Dc];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ac => "ac",
            ModelKind::Dlpf => "dlpf",
            ModelKind::Dc => "dc",
        }
    }

    /// Whether the model identifies the conductance matrix at all.
    pub fn estimates_g(self) -> bool {
        !matches!(self, ModelKind::Dc)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ac" => Ok(ModelKind::Ac),
            "dlpf" => Ok(ModelKind::Dlpf),
            "dc" => Ok(ModelKind::Dc),
            other => Err(Error::InvalidInput(format!("unknown model {other:?}"))),
        }
    }
}

/// Complex noise covariance `R_η` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    r_eta: DMatrix<f64>,
    r_eta_inv: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(r_eta: DMatrix<f64>) -> Result<Self> {
        let m = crate::linalg::ensure_square(&r_eta, "noise covariance")?;
        for i in 0..m {
            for j in 0..i {
                if r_eta[(i, j)] != r_eta[(j, i)] {
                    return Err(Error::InvalidInput("noise covariance is not symmetric".into()));
                }
            }
        }
        let chol = r_eta
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("noise covariance is not positive definite".into()))?;
        let mut r_eta_inv = chol.inverse();
        // symmetrize away rounding in the inverse
        r_eta_inv = (&r_eta_inv + r_eta_inv.transpose()) * 0.5;
        Ok(Self { r_eta, r_eta_inv })
    }

    /// `R_η = σ² I`.
    pub fn isotropic(m: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self {
            r_eta: DMatrix::identity(m, m) * sigma2,
            r_eta_inv: DMatrix::identity(m, m) / sigma2,
        })
    }

    pub fn m(&self) -> usize {
        self.r_eta.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.r_eta
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.r_eta_inv
    }

    /// Average per-bus variance `trace(R_η) / M`.
    pub fn mean_variance(&self) -> f64 {
        self.r_eta.trace() / self.m() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcSample {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub v: DVector<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlpfSample {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub v_mag: DVector<f64>,
    pub theta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcSample {
    pub p: DVector<f64>,
    pub theta: DVector<f64>,
}

/// Time series for one measurement model.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Ac(Vec<AcSample>),
    Dlpf(Vec<DlpfSample>),
    Dc(Vec<DcSample>),
}

impl Samples {
    pub fn kind(&self) -> ModelKind {
        match self {
            Samples::Ac(_) => ModelKind::Ac,
            Samples::Dlpf(_) => ModelKind::Dlpf,
            Samples::Dc(_) => ModelKind::Dc,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::Ac(s) => s.len(),
            Samples::Dlpf(s) => s.len(),
            Samples::Dc(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    m: usize,
    samples: Samples,
    noise: NoiseModel,
}

impl MeasurementSet {
    pub fn new(samples: Samples, noise: NoiseModel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("at least one sample is required".into()));
        }
        let m = noise.m();
        let check = |v: usize, what: &str, n: usize| {
            if v != m {
                Err(Error::Dimension(format!(
                    "sample {n}: {what} has length {v}, expected {m}"
                )))
            } else {
                Ok(())
            }
        };
        match &samples {
            Samples::Ac(s) => {
                for (n, x) in s.iter().enumerate() {
                    check(x.p.len(), "p", n)?;
                    check(x.q.len(), "q", n)?;
                    check(x.v.len(), "v", n)?;
                }
            }
            Samples::Dlpf(s) => {
                for (n, x) in s.iter().enumerate() {
                    check(x.p.len(), "p", n)?;
                    check(x.q.len(), "q", n)?;
                    check(x.v_mag.len(), "v_mag", n)?;
                    check(x.theta.len(), "theta", n)?;
                    if x.v_mag.iter().any(|&a| a.is_nan() || a <= 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "sample {n}: voltage magnitudes must be positive"
                        )));
                    }
                }
            }
            Samples::Dc(s) => {
                for (n, x) in s.iter().enumerate() {
                    check(x.p.len(), "p", n)?;
                    check(x.theta.len(), "theta", n)?;
                }
            }
        }
        Ok(Self { m, samples, noise })
    }

    pub fn kind(&self) -> ModelKind {
        self.samples.kind()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Reinterprets the data under another model: polar voltages are split
    /// into magnitude and angle or recombined, and `q` is dropped for DC.
    /// A DC set cannot be lifted to AC or DLPF since `q` is missing.
    pub fn as_kind(&self, kind: ModelKind) -> Result<MeasurementSet> {
        if kind == self.kind() {
            return Ok(self.clone());
        }
        let samples = match (&self.samples, kind) {
            (Samples::Ac(s), ModelKind::Dlpf) => Samples::Dlpf(
                s.iter()
                    .map(|x| DlpfSample {
                        p: x.p.clone(),
                        q: x.q.clone(),
                        v_mag: x.v.map(|c| c.norm()),
                        theta: x.v.map(|c| c.arg()),
                    })
                    .collect(),
            ),
            (Samples::Ac(s), ModelKind::Dc) => Samples::Dc(
                s.iter()
                    .map(|x| DcSample {
                        p: x.p.clone(),
                        theta: x.v.map(|c| c.arg()),
                    })
                    .collect(),
            ),
            (Samples::Dlpf(s), ModelKind::Ac) => Samples::Ac(
                s.iter()
                    .map(|x| AcSample {
                        p: x.p.clone(),
                        q: x.q.clone(),
                        v: x.v_mag.zip_map(&x.theta, Complex64::from_polar),
                    })
                    .collect(),
            ),
            (Samples::Dlpf(s), ModelKind::Dc) => Samples::Dc(
                s.iter()
                    .map(|x| DcSample {
                        p: x.p.clone(),
                        theta: x.theta.clone(),
                    })
                    .collect(),
            ),
            (Samples::Dc(_), other) => {
                return Err(Error::WrongModel {
                    expected: other.to_string(),
                    actual: "dc (no reactive power)".into(),
                })
            }
            _ => unreachable!("same-kind conversion handled above"),
        };
        MeasurementSet::new(samples, self.noise.clone())
    }

    /// Complex voltage proxies: the phasors for AC, `|v| e^{jθ}` for DLPF and
    /// `e^{jθ}` for DC.
    pub fn voltage_phasors(&self) -> Vec<DVector<Complex64>> {
        match &self.samples {
            Samples::Ac(s) => s.iter().map(|x| x.v.clone()).collect(),
            Samples::Dlpf(s) => s
                .iter()
                .map(|x| x.v_mag.zip_map(&x.theta, Complex64::from_polar))
                .collect(),
            Samples::Dc(s) => s
                .iter()
                .map(|x| x.theta.map(|t| Complex64::from_polar(1.0, t)))
                .collect(),
        }
    }

    /// `Σₙ ‖p[n] + j q[n]‖²` (DC: `Σₙ ‖p[n]‖²`).
    pub fn injection_energy(&self) -> f64 {
        match &self.samples {
            Samples::Ac(s) => s.iter().map(|x| x.p.norm_squared() + x.q.norm_squared()).sum(),
            Samples::Dlpf(s) => s.iter().map(|x| x.p.norm_squared() + x.q.norm_squared()).sum(),
            Samples::Dc(s) => s.iter().map(|x| x.p.norm_squared()).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Source {
    Measurements(MeasurementSet),
    Generic(Vec<PerSampleQuadratic>),
}

/// Quadratic objective in `vec` coordinates.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    m: usize,
    /// Curvature of the conductance block.
    pub gg: DMatrix<f64>,
    /// Cross term in `∇_g ψ`.
    pub gb: DMatrix<f64>,
    /// Cross term in `∇_b ψ` (`gbᵀ`).
    pub bg: DMatrix<f64>,
    /// Curvature of the susceptance block.
    pub bb: DMatrix<f64>,
    pub lin_g: DVector<f64>,
    pub lin_b: DVector<f64>,
    pub constant: f64,
    pub estimates_g: bool,
    source: Option<Arc<Source>>,
}

impl QuadraticForm {
    pub fn zeros(m: usize, estimates_g: bool) -> Self {
        let n = m * m;
        Self {
            m,
            gg: DMatrix::zeros(n, n),
            gb: DMatrix::zeros(n, n),
            bg: DMatrix::zeros(n, n),
            bb: DMatrix::zeros(n, n),
            lin_g: DVector::zeros(n),
            lin_b: DVector::zeros(n),
            constant: 0.0,
            estimates_g,
            source: None,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub(crate) fn with_source(mut self, source: Source) -> Self {
        self.source = Some(Arc::new(source));
        self
    }

    /// Drops the retained samples; evaluation falls back to the expanded form.
    pub fn without_source(mut self) -> Self {
        self.source = None;
        self
    }

    pub fn has_source(&self) -> bool {
        self.source.is_some()
    }

    fn check_args(&self, g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
        if self.estimates_g {
            crate::linalg::ensure_dim(g, self.m, "G")?;
        }
        crate::linalg::ensure_dim(b, self.m, "B̃")
    }

    /// ψ evaluated through the expanded quadratic.
    pub fn expanded_value(&self, g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        self.check_args(g, b)?;
        let vb = vec(b);
        let mut value = 0.5 * vb.dot(&(&self.bb * &vb)) + self.lin_b.dot(&vb) + self.constant;
        if self.estimates_g {
            let vg = vec(g);
            value += 0.5 * vg.dot(&(&self.gg * &vg)) + vg.dot(&(&self.gb * &vb)) + self.lin_g.dot(&vg);
        }
        Ok(value)
    }
}

/// ψ(G, B̃). Uses the model residuals when the form still carries its
/// samples, otherwise the expanded quadratic. For DC, `g` is ignored.
pub fn eval_objective(q: &QuadraticForm, g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    q.check_args(g, b)?;
    match q.source.as_deref() {
        Some(Source::Measurements(meas)) => Ok(builders::residual_objective(meas, g, b)),
        Some(Source::Generic(samples)) if q.estimates_g => Ok(assemble::residual_objective(samples, g, b)),
        Some(Source::Generic(samples)) => {
            Ok(assemble::residual_objective(samples, &DMatrix::zeros(q.m, q.m), b))
        }
        None => q.expanded_value(g, b),
    }
}

/// `(∇_g ψ, ∇_b ψ)` in `vec` coordinates. The first entry is zero for DC.
pub fn grad_objective(
    q: &QuadraticForm,
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    q.check_args(g, b)?;
    let vb = vec(b);
    if !q.estimates_g {
        return Ok((DVector::zeros(q.m * q.m), &q.bb * &vb + &q.lin_b));
    }
    let vg = vec(g);
    let grad_g = &q.gg * &vg + &q.gb * &vb + &q.lin_g;
    let grad_b = &q.bg * &vg + &q.bb * &vb + &q.lin_b;
    Ok((grad_g, grad_b))
}

/// `trace((I − 11ᵀ) A)`, i.e. minus the sum of the off-diagonal entries.
pub fn offdiag_penalty(a: &DMatrix<f64>) -> f64 {
    a.trace() - a.sum()
}

/// The regularized objective `ψ + λ_G tr((I−11ᵀ)G) + λ_B tr((I−11ᵀ)B̃)`.
pub fn regularized_objective(
    q: &QuadraticForm,
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda_g: f64,
    lambda_b: f64,
) -> Result<f64> {
    let mut value = eval_objective(q, g, b)? + lambda_b * offdiag_penalty(b);
    if q.estimates_g {
        value += lambda_g * offdiag_penalty(g);
    }
    Ok(value)
}
