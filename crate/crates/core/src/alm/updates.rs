//! Closed-form primal updates and multiplier ascent.
//!
//! With `X` either `G` or `B̃`, the augmented Lagrangian in `x = vec(X)` is
//! minimized through `(H + ρE) x = r` where
//! `r = −H_cross vec(other) − l − γ` and `E = (11ᵀ ⊗ I) + 2I − 2K`.
//! The sign constraint on off-diagonal entries adds `Λ + ρX` wherever that
//! quantity is positive.

use std::rc::Rc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{AlmConfig, AlmState, UpdateRule};
use crate::error::{Error, Result};
use crate::linalg::{commutation, positive_part, row_sums, unvec, vec};
use crate::models::QuadraticForm;

/// `E = (11ᵀ ⊗ I) + 2I − 2K` of size `m² × m²`.
pub fn build_e_matrix(m: usize) -> DMatrix<f64> {
    let n = m * m;
    let ones = DMatrix::from_element(m, m, 1.0);
    ones.kronecker(&DMatrix::<f64>::identity(m, m)) + DMatrix::identity(n, n) * 2.0 - commutation(m) * 2.0
}

/// `vec(μ1ᵀ + (V − Vᵀ) + λ(I − 11ᵀ))`.
pub fn gamma_vector(mu: &DVector<f64>, v_mult: &DMatrix<f64>, lambda: f64, m: usize) -> DVector<f64> {
    assert_eq!(mu.len(), m, "gamma_vector: μ has length {}, expected {m}", mu.len());
    let mut x = v_mult - v_mult.transpose();
    for j in 0..m {
        for i in 0..m {
            x[(i, j)] += mu[i] + if i == j { 0.0 } else { -lambda };
        }
    }
    vec(&x)
}

/// Off-diagonal part of `a`.
pub(crate) fn offdiag(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    out.fill_diagonal(0.0);
    out
}

/// Cholesky factorization, retried once with a trace-scaled diagonal shift.
pub(crate) fn factor(a: DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let shift = jitter * a.trace().abs() / n.max(1) as f64;
    if shift > 0.0 {
        if let Some(c) = (a + DMatrix::identity(n, n) * shift).cholesky() {
            return Ok(c);
        }
    }
    Err(Error::SingularSystem(format!(
        "{n}x{n} update system is not positive definite (jitter {jitter:e})"
    )))
}

/// Which of the two primal blocks an update refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    G,
    B,
}

/// Quadratic data of one primal block.
struct Block<'a> {
    cross: &'a DMatrix<f64>,
    lin: &'a DVector<f64>,
}

fn block(q: &QuadraticForm, id: BlockId) -> Block<'_> {
    match id {
        BlockId::G => Block { cross: &q.gb, lin: &q.lin_g },
        BlockId::B => Block { cross: &q.bg, lin: &q.lin_b },
    }
}

/// Entrywise choice between the two branches; `true` selects the branch where
/// the sign constraint is inactive. Diagonal entries are always `true`.
pub type Mask = Vec<bool>;

/// Factorizations for one curvature matrix. Masks seen recently are cached
/// since the active set settles after a few iterations.
struct FactorCache {
    shifted: DMatrix<f64>,
    cache: Vec<(Mask, Rc<Cholesky<f64, Dyn>>)>,
    slots: usize,
    factorizations: usize,
}

impl FactorCache {
    fn new(curvature: &DMatrix<f64>, e: &DMatrix<f64>, rho: f64, slots: usize) -> Self {
        Self { shifted: curvature + e * rho, cache: Vec::new(), slots, factorizations: 0 }
    }

    /// Factor of `H + ρE + ρ·diag(!mask)`.
    fn get(&mut self, mask: &Mask, rho: f64, jitter: f64) -> Result<Rc<Cholesky<f64, Dyn>>> {
        if let Some(pos) = self.cache.iter().position(|(k, _)| k == mask) {
            let hit = self.cache.remove(pos);
            let f = hit.1.clone();
            self.cache.insert(0, hit);
            return Ok(f);
        }
        let mut a = self.shifted.clone();
        for (k, &free) in mask.iter().enumerate() {
            if !free {
                a[(k, k)] += rho;
            }
        }
        let f = Rc::new(factor(a, jitter)?);
        self.factorizations += 1;
        self.cache.insert(0, (mask.clone(), f.clone()));
        self.cache.truncate(self.slots);
        Ok(f)
    }
}

/// Per-run solver holding the factorizations of `H + ρE` and its shifts.
pub struct PrimalSolver {
    m: usize,
    rho: f64,
    jitter: f64,
    rule: UpdateRule,
    g_cache: Option<FactorCache>,
    b_cache: FactorCache,
    /// `H_gg == H_bb`, so both blocks share one cache.
    shared: bool,
    last_mask: [Option<Mask>; 2],
}

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct BlockUpdate {
    pub x: DMatrix<f64>,
    pub mask: Mask,
    /// Masked rule only: solution of `(H + ρE) x = r`.
    pub x1: Option<DMatrix<f64>>,
    /// Masked rule only: solution of `(H + ρ(E + I)) x = r − vec(Λ)`.
    pub x2: Option<DMatrix<f64>>,
}

const MAX_ACTIVE_SET_STEPS: usize = 50;

impl PrimalSolver {
    pub fn new(q: &QuadraticForm, cfg: &AlmConfig, rho: f64) -> Self {
        let m = q.m();
        let e = build_e_matrix(m);
        let shared = q.estimates_g && q.gg == q.bb;
        let slots = if shared { 6 } else { 3 };
        let b_cache = FactorCache::new(&q.bb, &e, rho, slots);
        let g_cache = (q.estimates_g && !shared).then(|| FactorCache::new(&q.gg, &e, rho, slots));
        Self {
            m,
            rho,
            jitter: cfg.jitter,
            rule: cfg.update_rule,
            g_cache,
            b_cache,
            shared,
            last_mask: [None, None],
        }
    }

    fn cache(&mut self, id: BlockId) -> &mut FactorCache {
        match (id, &mut self.g_cache) {
            (BlockId::G, Some(c)) if !self.shared => c,
            _ => &mut self.b_cache,
        }
    }

    /// Number of matrix factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.b_cache.factorizations + self.g_cache.as_ref().map_or(0, |c| c.factorizations)
    }

    /// Minimizes the augmented Lagrangian over one block, the other fixed.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        q: &QuadraticForm,
        id: BlockId,
        other: &DMatrix<f64>,
        mu: &DVector<f64>,
        v_mult: &DMatrix<f64>,
        lam: &DMatrix<f64>,
        lambda: f64,
    ) -> Result<BlockUpdate> {
        let (m, rho, jitter) = (self.m, self.rho, self.jitter);
        let blk = block(q, id);
        let rhs = -(blk.cross * vec(other)) - blk.lin - gamma_vector(mu, v_mult, lambda, m);
        let lam_off = vec(&offdiag(lam));
        let mask_of = |x: &DVector<f64>| -> Mask {
            (0..m * m)
                .map(|k| k % m == k / m || lam_off[k] + rho * x[k] <= 0.0)
                .collect()
        };
        match self.rule {
            UpdateRule::Masked => {
                let x1 = self.cache(id).get(&vec![true; m * m], rho, jitter)?.solve(&rhs);
                let mask = mask_of(&x1);
                // H + ρ(E + I), diagonal included
                let f2 = self.cache(id).get(&vec![false; m * m], rho, jitter)?;
                let x2 = f2.solve(&(&rhs - &lam_off));
                let x = DVector::from_fn(m * m, |k, _| if mask[k] { x1[k] } else { x2[k] });
                check_finite(&x)?;
                Ok(BlockUpdate { x: unvec(&x, m), mask, x1: Some(unvec(&x1, m)), x2: Some(unvec(&x2, m)) })
            }
            UpdateRule::ActiveSet => {
                let slot = id as usize;
                let mut mask = match self.last_mask[slot].take() {
                    Some(mask) => mask,
                    None => mask_of(&self.cache(id).get(&vec![true; m * m], rho, jitter)?.solve(&rhs)),
                };
                let mut x = DVector::zeros(m * m);
                for _ in 0..MAX_ACTIVE_SET_STEPS {
                    let f = self.cache(id).get(&mask, rho, jitter)?;
                    let shifted_rhs = DVector::from_fn(m * m, |k, _| if mask[k] { rhs[k] } else { rhs[k] - lam_off[k] });
                    x = f.solve(&shifted_rhs);
                    let next = mask_of(&x);
                    if next == mask {
                        break;
                    }
                    mask = next;
                }
                check_finite(&x)?;
                self.last_mask[slot] = Some(mask.clone());
                Ok(BlockUpdate { x: unvec(&x, m), mask, x1: None, x2: None })
            }
        }
    }
}

fn check_finite(x: &DVector<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence("primal update produced non-finite entries".into()))
    }
}

/// `G` update for the current state; factors the systems from scratch.
pub fn update_g(q: &QuadraticForm, state: &AlmState, cfg: &AlmConfig) -> Result<DMatrix<f64>> {
    if !q.estimates_g {
        return Err(Error::InvalidInput("model does not estimate the conductance matrix".into()));
    }
    let (rho, lambda_g, _) = cfg.resolve_for(q, None)?;
    let mut solver = PrimalSolver::new(q, cfg, rho);
    let up = solver.update(q, BlockId::G, &state.b_tilde, &state.mu_g, &state.v_g, &state.lam_g, lambda_g)?;
    Ok(up.x)
}

/// `B̃` update for the current state; factors the systems from scratch.
pub fn update_b(q: &QuadraticForm, state: &AlmState, cfg: &AlmConfig) -> Result<DMatrix<f64>> {
    let (rho, _, lambda_b) = cfg.resolve_for(q, None)?;
    let mut solver = PrimalSolver::new(q, cfg, rho);
    let other = if q.estimates_g { state.g.clone() } else { DMatrix::zeros(q.m(), q.m()) };
    let up = solver.update(q, BlockId::B, &other, &state.mu_b, &state.v_b, &state.lam_b, lambda_b)?;
    Ok(up.x)
}

/// Dual ascent on one block's multipliers.
pub(crate) fn ascend(mu: &mut DVector<f64>, v_mult: &mut DMatrix<f64>, lam: &mut DMatrix<f64>, x: &DMatrix<f64>, rho: f64) {
    *mu += row_sums(x) * rho;
    *v_mult += (x - x.transpose()) * rho;
    *lam = positive_part(&(&*lam + x * rho));
}

/// `μ ← μ + ρX1`, `V ← V + ρ(X − Xᵀ)`, `Λ ← {Λ + ρX}⁺` for each estimated block.
pub fn update_multipliers(state: &AlmState, rho: f64, estimates_g: bool) -> AlmState {
    let mut next = state.clone();
    if estimates_g {
        ascend(&mut next.mu_g, &mut next.v_g, &mut next.lam_g, &state.g, rho);
    }
    ascend(&mut next.mu_b, &mut next.v_b, &mut next.lam_b, &state.b_tilde, rho);
    next
}
