//! Reference solver for the regularized problem, independent of the ALM.
//!
//! Projected gradient descent with step `1/L` (power-iteration estimate of
//! the curvature), halved whenever the objective would increase. The
//! projection onto `{X = Xᵀ, X1 = 0, X_ij ≤ 0 for i ≠ j}` is computed with
//! Dykstra's algorithm. Intended for small instances only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unvec, vec};
use crate::models::{grad_objective, regularized_objective, QuadraticForm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub max_iters: usize,
    /// Relative objective change that ends the descent.
    pub tol: f64,
    pub dykstra_iters: usize,
    pub power_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { max_iters: 50_000, tol: 1e-12, dykstra_iters: 200, power_iters: 200 }
    }
}

/// Feasibility target of [`project_feasible`] relative to `‖a‖_F`.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Orthogonal projection onto symmetric matrices with zero row sums:
/// `J · sym(X) · J` with `J = I − 11ᵀ/M`.
fn project_affine(x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mut s = (x + x.transpose()) * 0.5;
    let row_mean = s.column_mean();
    let total_mean = row_mean.mean();
    for j in 0..m {
        for i in 0..m {
            s[(i, j)] += total_mean - row_mean[i] - row_mean[j];
        }
    }
    s
}

fn clip_offdiag(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| if i == j { x[(i, j)] } else { x[(i, j)].min(0.0) })
}

/// Largest violation of the affine constraints.
fn affine_violation(x: &DMatrix<f64>) -> f64 {
    let asym = (x - x.transpose()).amax();
    let rows = x.column_sum().amax();
    asym.max(rows)
}

/// Euclidean projection onto the Laplacian constraint set.
///
/// Runs up to `iters` Dykstra sweeps and stops once the affine constraints
/// hold to [`PROJECTION_TOL`]` · ‖a‖_F`. The sign constraint holds exactly.
pub fn project_feasible(a: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let tol = PROJECTION_TOL * a.norm().max(f64::MIN_POSITIVE);
    let (m, n) = a.shape();
    let mut x = a.clone();
    let mut p = DMatrix::zeros(m, n);
    let mut q = DMatrix::zeros(m, n);
    for _ in 0..iters.max(1) {
        let y = project_affine(&(&x + &p));
        p = &x + &p - &y;
        let next = clip_offdiag(&(&y + &q));
        q = &y + &q - &next;
        x = next;
        if affine_violation(&x) <= tol {
            break;
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// `None` when the model carries no conductance information.
    pub g: Option<DMatrix<f64>>,
    pub b_tilde: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub objective_history: Vec<f64>,
}

/// Stacked variable `[vec(G); vec(B̃)]` or `vec(B̃)` alone.
struct Layout {
    m: usize,
    with_g: bool,
}

impl Layout {
    fn split(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mm = self.m * self.m;
        if self.with_g {
            let g = unvec(&x.rows(0, mm).into_owned(), self.m);
            let b = unvec(&x.rows(mm, mm).into_owned(), self.m);
            (g, b)
        } else {
            (DMatrix::zeros(self.m, self.m), unvec(x, self.m))
        }
    }

    fn join(&self, g: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
        if self.with_g {
            let (vg, vb) = (vec(g), vec(b));
            DVector::from_iterator(vg.len() * 2, vg.iter().chain(vb.iter()).copied())
        } else {
            vec(b)
        }
    }

    fn hessian_apply(&self, q: &QuadraticForm, x: &DVector<f64>) -> DVector<f64> {
        let mm = self.m * self.m;
        if self.with_g {
            let (xg, xb) = (x.rows(0, mm), x.rows(mm, mm));
            let hg = &q.gg * xg + &q.gb * xb;
            let hb = &q.bg * xg + &q.bb * xb;
            DVector::from_iterator(2 * mm, hg.iter().chain(hb.iter()).copied())
        } else {
            &q.bb * x
        }
    }
}

/// Largest eigenvalue of the curvature by power iteration.
fn curvature_bound(q: &QuadraticForm, layout: &Layout, iters: usize) -> f64 {
    let n = layout.m * layout.m * if layout.with_g { 2 } else { 1 };
    // deterministic start with no special alignment
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let y = layout.hessian_apply(q, &x);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        x = y / norm;
    }
    est
}

/// Minimizes `ψ + λ_G tr((I−11ᵀ)G) + λ_B tr((I−11ᵀ)B̃)` over the Laplacian set.
pub fn solve(q: &QuadraticForm, lambda_g: f64, lambda_b: f64, cfg: &OracleConfig) -> Result<OracleSolution> {
    if cfg.max_iters == 0 || cfg.dykstra_iters == 0 || cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::InvalidInput("oracle parameters must be positive".into()));
    }
    let m = q.m();
    let layout = Layout { m, with_g: q.estimates_g };
    let objective = |x: &DVector<f64>| {
        let (g, b) = layout.split(x);
        regularized_objective(q, &g, &b, lambda_g, lambda_b)
    };
    let gradient = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let (g, b) = layout.split(x);
        let (mut dg, mut db) = grad_objective(q, &g, &b)?;
        // d/dX of λ tr((I − 11ᵀ)X) is λ(I − 11ᵀ)
        for k in 0..m * m {
            if k % m != k / m {
                dg[k] -= lambda_g;
                db[k] -= lambda_b;
            }
        }
        Ok(if layout.with_g { layout.join(&unvec(&dg, m), &unvec(&db, m)) } else { db })
    };
    let project = |x: &DVector<f64>| {
        let (g, b) = layout.split(x);
        let b = project_feasible(&b, cfg.dykstra_iters);
        let g = if layout.with_g { project_feasible(&g, cfg.dykstra_iters) } else { g };
        layout.join(&g, &b)
    };

    let lip = curvature_bound(q, &layout, cfg.power_iters);
    let base_step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut x = layout.join(&DMatrix::zeros(m, m), &DMatrix::zeros(m, m));
    let mut f = objective(&x)?;
    let mut history = vec![f];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let grad = gradient(&x)?;
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = project(&(&x - &grad * step));
            let fc = objective(&cand)?;
            if !fc.is_finite() {
                return Err(Error::Divergence(format!("oracle objective became {fc}")));
            }
            if fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let change = f - fc;
        x = cand;
        f = fc;
        history.push(f);
        if change <= cfg.tol * f.abs().max(1.0) {
            break;
        }
    }
    let (g, b) = layout.split(&x);
    Ok(OracleSolution {
        g: layout.with_g.then_some(g),
        b_tilde: b,
        objective: f,
        iterations,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exact projection for small `m` by enumerating which off-diagonal pairs
    /// are pinned at zero. Free pairs `w_ij` (i<j) parametrize a Laplacian
    /// with off-diagonal `w_ij` and balanced diagonal.
    fn brute_force_projection(a: &DMatrix<f64>) -> DMatrix<f64> {
        let m = a.nrows();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let p = pairs.len();
        // Laplacian as a linear map of w: L(w) = Σ w_ij (e_i e_jᵀ + e_j e_iᵀ − e_i e_iᵀ − e_j e_jᵀ)
        let basis: Vec<DMatrix<f64>> = pairs
            .iter()
            .map(|&(i, j)| {
                let mut b = DMatrix::zeros(m, m);
                b[(i, j)] = 1.0;
                b[(j, i)] = 1.0;
                b[(i, i)] = -1.0;
                b[(j, j)] = -1.0;
                b
            })
            .collect();
        let mut best: Option<(f64, DMatrix<f64>)> = None;
        for pattern in 0u32..(1 << p) {
            let free: Vec<usize> = (0..p).filter(|k| pattern & (1 << k) != 0).collect();
            let k = free.len();
            let mut gram = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                rhs[r] = basis[i].dot(a);
                for (c, &j) in free.iter().enumerate() {
                    gram[(r, c)] = basis[i].dot(&basis[j]);
                }
            }
            let w = if k == 0 { DVector::zeros(0) } else { gram.lu().solve(&rhs).unwrap() };
            if w.iter().any(|&x| x > 1e-14) {
                continue;
            }
            let mut x = DMatrix::zeros(m, m);
            for (r, &i) in free.iter().enumerate() {
                x += &basis[i] * w[r];
            }
            let d = (&x - a).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
        best.unwrap().1
    }

    fn feasible(x: &DMatrix<f64>, tol: f64) -> bool {
        let m = x.nrows();
        affine_violation(x) <= tol
            && (0..m).all(|i| (0..m).all(|j| i == j || x[(i, j)] <= tol))
    }

    #[test]
    fn feasible_input_is_fixed() {
        let l = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.5, -0.5, -1.0, -0.5, 1.5]);
        assert!((project_feasible(&l, 200) - &l).amax() < 1e-12);
    }

    #[test]
    fn positive_pair_is_projected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = project_feasible(&a, 200);
        assert!(feasible(&p, 1e-8));
        assert!(p[(0, 1)] <= 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let p = project_feasible(&a, 10_000);
            let exact = brute_force_projection(&a);
            assert!((&p - &exact).amax() < 1e-8, "{p} vs {exact}");
        }
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let pa = project_feasible(&a, 200);
            let pb = project_feasible(&b, 200);
            assert!(feasible(&pa, 1e-8 * a.norm()));
            assert!((project_feasible(&pa, 200) - &pa).amax() < 1e-8);
            assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-8);
        }
    }

    #[test]
    fn zero_data_returns_constant() {
        use crate::models::{AcSample, MeasurementSet, NoiseModel, Samples};
        let m = 3;
        let sample = AcSample { p: DVector::zeros(m), q: DVector::zeros(m), v: DVector::zeros(m) };
        let meas = MeasurementSet::new(Samples::Ac(vec![sample]), NoiseModel::isotropic(m, 1.0).unwrap()).unwrap();
        let q = crate::models::build(&meas).unwrap();
        let sol = solve(&q, 0.1, 0.1, &OracleConfig::default()).unwrap();
        assert!((sol.objective - q.constant).abs() <= 1e-9);
        assert!(sol.b_tilde.amax() <= 1e-9 && sol.g.unwrap().amax() <= 1e-9);
    }

    #[test]
    fn noiseless_ac_reaches_truth() {
        use crate::datagen::{simulate, SimSpec};
        use crate::lapcore::{build_admittance, Line, LineList};
        use crate::models::ModelKind;
        let lines = vec![
            Line { from_bus: 1, to_bus: 2, g_line: 1.0, b_tilde_line: 3.0 },
            Line { from_bus: 2, to_bus: 3, g_line: 0.5, b_tilde_line: 2.0 },
        ];
        let adm = build_admittance(&LineList::new(3, lines).unwrap());
        let spec = SimSpec { noiseless: true, ..SimSpec::new(ModelKind::Ac, 30, 30.0, 5) };
        let q = crate::models::build(&simulate(&adm, &spec).unwrap()).unwrap();
        let sol = solve(&q, 0.0, 0.0, &OracleConfig { tol: 1e-16, ..OracleConfig::default() }).unwrap();
        let g = sol.g.unwrap();
        assert!((&g - adm.g.entries()).norm() <= 1e-4 * adm.g.entries().norm());
        assert!((&sol.b_tilde - adm.b_tilde.entries()).norm() <= 1e-4 * adm.b_tilde.entries().norm());
        assert!(feasible(&g, 1e-8) && feasible(&sol.b_tilde, 1e-8));
        assert!(sol.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
    }
}
