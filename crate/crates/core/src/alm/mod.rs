//! Augmented-Lagrangian solver for the constrained maximum-likelihood problem
//!
//! ```text
//! min  ψ(G, B̃) + λ_G tr((I − 11ᵀ)G) + λ_B tr((I − 11ᵀ)B̃)
//! s.t. X = Xᵀ,  X1 = 0,  X_ij ≤ 0 (i ≠ j)      for X ∈ {G, B̃}
//! ```
//!
//! Each iteration updates `G` (skipped for DC), then `B̃`, then ascends the
//! multipliers. The outputs are projected onto the Laplacian set and
//! thresholded at the end.

mod init;
mod updates;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lapcore::{project_to_laplacian, threshold_offdiag, RealLaplacian};
use crate::models::{regularized_objective, MeasurementSet, QuadraticForm};

pub use init::init_from_samples;
pub use updates::{
    build_e_matrix, gamma_vector, update_b, update_g, update_multipliers, BlockId, BlockUpdate, Mask, PrimalSolver,
};

/// How the sign constraint enters the primal update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// Solve the piecewise-linear subproblem exactly by iterating on the set
    /// of entries where `Λ + ρX > 0`.
    #[default]
    ActiveSet,
    /// Pick each entry from one of two full solves according to the sign of
    /// `Λ + ρX₁`.
    Masked,
}

/// Units of [`AlmConfig::rho`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoScale {
    /// `ρ` is used as given.
    Absolute,
    /// `ρ` multiplies the mean diagonal entry of the curvature blocks.
    #[default]
    Curvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmConfig {
    pub rho: f64,
    pub rho_scale: RhoScale,
    /// `None` selects `σ̂² √(log M / N)`.
    pub lambda_g: Option<f64>,
    pub lambda_b: Option<f64>,
    pub max_iters: usize,
    pub eps: f64,
    pub jitter: f64,
    /// Divide the squared changes by the squared norm of the previous iterate.
    pub normalized_stop: bool,
    pub update_rule: UpdateRule,
    /// Apply the off-diagonal threshold after projection.
    pub threshold: bool,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            rho_scale: RhoScale::Curvature,
            lambda_g: None,
            lambda_b: None,
            max_iters: 5000,
            eps: 1e-12,
            jitter: 1e-10,
            normalized_stop: true,
            update_rule: UpdateRule::ActiveSet,
            threshold: true,
        }
    }
}

/// `σ̂² √(log M / N)` with `σ̂² = trace(R_η) / M`.
pub fn default_lambda(meas: &MeasurementSet) -> f64 {
    let m = meas.m() as f64;
    let n = meas.n_samples() as f64;
    meas.noise().mean_variance() * (m.ln() / n).sqrt()
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        for (name, l) in [("lambda_g", self.lambda_g), ("lambda_b", self.lambda_b)] {
            if let Some(l) = l {
                if !(l >= 0.0 && l.is_finite()) {
                    return bad(format!("{name} must be non-negative, got {l}"));
                }
            }
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be non-negative, got {}", self.jitter));
        }
        Ok(())
    }

    /// Effective `ρ` for a given quadratic form.
    pub fn effective_rho(&self, q: &QuadraticForm) -> f64 {
        match self.rho_scale {
            RhoScale::Absolute => self.rho,
            RhoScale::Curvature => {
                let n = (q.m() * q.m()).max(1) as f64;
                let mut scale = q.bb.trace() / n;
                if q.estimates_g {
                    scale = 0.5 * (scale + q.gg.trace() / n);
                }
                // degenerate data: fall back to the raw value
                if scale > 0.0 {
                    self.rho * scale
                } else {
                    self.rho
                }
            }
        }
    }

    /// `(ρ, λ_G, λ_B)`; unset weights need `meas` for the default rule.
    pub fn resolve_for(&self, q: &QuadraticForm, meas: Option<&MeasurementSet>) -> Result<(f64, f64, f64)> {
        self.validate()?;
        let pick = |l: Option<f64>, name: &str| match (l, meas) {
            (Some(l), _) => Ok(l),
            (None, Some(meas)) => Ok(default_lambda(meas)),
            (None, None) => Err(Error::InvalidInput(format!("{name} must be given without measurements"))),
        };
        let lambda_g = if q.estimates_g { pick(self.lambda_g, "lambda_g")? } else { 0.0 };
        Ok((self.effective_rho(q), lambda_g, pick(self.lambda_b, "lambda_b")?))
    }
}

/// Primal iterates and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    pub g: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub mu_g: DVector<f64>,
    pub mu_b: DVector<f64>,
    pub v_g: DMatrix<f64>,
    pub v_b: DMatrix<f64>,
    /// Only the off-diagonal part enters the primal updates.
    pub lam_g: DMatrix<f64>,
    pub lam_b: DMatrix<f64>,
    pub iter: usize,
}

impl AlmState {
    /// Given primal start, all multipliers zero.
    pub fn new(g: DMatrix<f64>, b_tilde: DMatrix<f64>) -> Self {
        let m = b_tilde.nrows();
        Self {
            g,
            b_tilde,
            mu_g: DVector::zeros(m),
            mu_b: DVector::zeros(m),
            v_g: DMatrix::zeros(m, m),
            v_b: DMatrix::zeros(m, m),
            lam_g: DMatrix::zeros(m, m),
            lam_b: DMatrix::zeros(m, m),
            iter: 0,
        }
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(DMatrix::zeros(m, m), DMatrix::zeros(m, m))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlmReport {
    /// Absent for models without conductance information.
    #[serde(skip)]
    pub g_hat: Option<RealLaplacian>,
    #[serde(skip)]
    pub b_hat_tilde: RealLaplacian,
    #[serde(skip)]
    pub g_raw: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub b_raw: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Squared Frobenius changes `(‖ΔG‖², ‖ΔB̃‖²)` per iteration.
    pub change_history: Vec<(f64, f64)>,
    /// Regularized objective at each raw iterate.
    pub objective_history: Vec<f64>,
    /// Regularized objective at the finalized estimate.
    pub final_objective: f64,
    pub rho: f64,
    pub lambda_g: f64,
    pub lambda_b: f64,
    pub factorizations: usize,
}

/// Projection onto the Laplacian set followed by thresholding.
pub fn finalize(g_raw: &DMatrix<f64>, b_raw: &DMatrix<f64>) -> Result<(RealLaplacian, RealLaplacian)> {
    finalize_one(g_raw, true).and_then(|g| Ok((g, finalize_one(b_raw, true)?)))
}

fn finalize_one(raw: &DMatrix<f64>, threshold: bool) -> Result<RealLaplacian> {
    let p = project_to_laplacian(raw)?;
    Ok(if threshold { threshold_offdiag(&p) } else { p })
}

fn squared_change(new: &DMatrix<f64>, old: &DMatrix<f64>, normalized: bool) -> f64 {
    let d = (new - old).norm_squared();
    if normalized {
        d / old.norm_squared().max(f64::MIN_POSITIVE)
    } else {
        d
    }
}

/// Runs the solver from the covariance initialization.
pub fn run(q: &QuadraticForm, meas: &MeasurementSet, cfg: &AlmConfig) -> Result<AlmReport> {
    if q.m() != meas.m() {
        return Err(Error::Dimension(format!(
            "quadratic form has {} buses, measurements {}",
            q.m(),
            meas.m()
        )));
    }
    let (g0, b0) = init_from_samples(meas)?;
    run_from(q, AlmState::new(g0.into_inner(), b0.into_inner()), Some(meas), cfg)
}

/// Runs the solver from an explicit starting state.
pub fn run_from(
    q: &QuadraticForm,
    start: AlmState,
    meas: Option<&MeasurementSet>,
    cfg: &AlmConfig,
) -> Result<AlmReport> {
    let (rho, lambda_g, lambda_b) = cfg.resolve_for(q, meas)?;
    let m = q.m();
    crate::linalg::ensure_dim(&start.b_tilde, m, "initial B̃")?;
    if q.estimates_g {
        crate::linalg::ensure_dim(&start.g, m, "initial G")?;
    }
    let mut solver = PrimalSolver::new(q, cfg, rho);
    let mut state = start;
    if !q.estimates_g {
        state.g = DMatrix::zeros(m, m);
    }
    let mut change_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut converged = false;

    while state.iter < cfg.max_iters {
        let dg = if q.estimates_g {
            let up = solver.update(q, BlockId::G, &state.b_tilde, &state.mu_g, &state.v_g, &state.lam_g, lambda_g)?;
            let d = squared_change(&up.x, &state.g, cfg.normalized_stop);
            state.g = up.x;
            d
        } else {
            0.0
        };
        let up = solver.update(q, BlockId::B, &state.g, &state.mu_b, &state.v_b, &state.lam_b, lambda_b)?;
        let db = squared_change(&up.x, &state.b_tilde, cfg.normalized_stop);
        state.b_tilde = up.x;
        state = update_multipliers(&state, rho, q.estimates_g);
        state.iter += 1;

        change_history.push((dg, db));
        let obj = regularized_objective(q, &state.g, &state.b_tilde, lambda_g, lambda_b)?;
        if !obj.is_finite() {
            return Err(Error::Divergence(format!("objective became {obj} at iteration {}", state.iter)));
        }
        objective_history.push(obj);
        if dg < cfg.eps && db < cfg.eps {
            converged = true;
            break;
        }
    }

    let b_hat_tilde = finalize_one(&state.b_tilde, cfg.threshold)?;
    let g_hat = if q.estimates_g { Some(finalize_one(&state.g, cfg.threshold)?) } else { None };
    let g_final = g_hat.as_ref().map_or_else(|| DMatrix::zeros(m, m), |g| g.entries().clone());
    let final_objective = regularized_objective(q, &g_final, b_hat_tilde.entries(), lambda_g, lambda_b)?;
    Ok(AlmReport {
        g_hat,
        b_hat_tilde,
        g_raw: q.estimates_g.then_some(state.g),
        b_raw: state.b_tilde,
        iterations: state.iter,
        converged,
        change_history,
        objective_history,
        final_objective,
        rho,
        lambda_g,
        lambda_b,
        factorizations: solver.factorizations(),
    })
}
