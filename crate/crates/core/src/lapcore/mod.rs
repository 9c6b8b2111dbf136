//! Real and complex-valued graph Laplacians.
//!
//! A real Laplacian is symmetric, has zero row sums and non-positive
//! off-diagonal entries; diagonal dominance then makes it positive
//! semi-definite. An admittance matrix `Y = G + jB` is represented by the pair
//! `(G, B̃)` with `B̃ = -B`, both of which are real Laplacians.
//!
//! Bus numbers in [`LineList`] and [`SupportSet`] are 1-based, as in case
//! files. Matrix indices are 0-based.

mod case;
mod metrics;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_square, max_abs, min_eigenvalue};

pub use case::{ieee14, ieee33, parse_case, read_case, write_case};
pub use metrics::{fscore, magnitude_ratio, mse};

/// Relative tolerance on row sums accepted by [`RealLaplacian`].
pub const INVARIANT_TOL: f64 = 1e-9;

/// Relative tolerance (to the trace) on the smallest eigenvalue in PSD checks.
pub const PSD_TOL: f64 = 1e-8;

/// Symmetric, zero-row-sum matrix with non-positive off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLaplacian {
    entries: DMatrix<f64>,
}

impl RealLaplacian {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_laplacian(&entries)?;
        Ok(Self { entries })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            entries: DMatrix::zeros(m, m),
        }
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    /// Smallest eigenvalue; non-negative up to rounding for every Laplacian.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.entries)
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -PSD_TOL * self.entries.trace().abs().max(f64::MIN_POSITIVE)
    }

    /// Off-diagonal support with `|entry| > tol`.
    pub fn support(&self, tol: f64) -> SupportSet {
        support_of(self, tol)
    }
}

/// Checks the exact Laplacian invariants (symmetry, row sums, sign pattern).
pub fn check_laplacian(a: &DMatrix<f64>) -> Result<()> {
    let m = ensure_square(a, "Laplacian")?;
    let scale = max_abs(a).max(1.0);
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..m {
            let x = a[(i, j)];
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
            if x != a[(j, i)] {
                return Err(Error::InvalidInput(format!("not symmetric at ({i}, {j})")));
            }
            if i != j && x > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "positive off-diagonal entry {x} at ({i}, {j})"
                )));
            }
            row_sum += x;
        }
        if row_sum.abs() > INVARIANT_TOL * scale {
            return Err(Error::InvalidInput(format!("row {i} sums to {row_sum}")));
        }
    }
    Ok(())
}

/// Admittance matrix `Y = G - jB̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexAdmittance {
    pub g: RealLaplacian,
    pub b_tilde: RealLaplacian,
}

impl ComplexAdmittance {
    pub fn new(g: RealLaplacian, b_tilde: RealLaplacian) -> Result<Self> {
        if g.m() != b_tilde.m() {
            return Err(Error::Dimension(format!(
                "conductance is {0}x{0} but susceptance is {1}x{1}",
                g.m(),
                b_tilde.m()
            )));
        }
        Ok(Self { g, b_tilde })
    }

    pub fn m(&self) -> usize {
        self.g.m()
    }

    pub fn y(&self) -> DMatrix<Complex64> {
        self.g
            .entries()
            .zip_map(self.b_tilde.entries(), |g, b| Complex64::new(g, -b))
    }
}

/// Unordered off-diagonal bus pairs, stored as `(i, j)` with `1 ≤ i < j ≤ m`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupportSet {
    edges: BTreeSet<(usize, usize)>,
}

impl SupportSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the pair in canonical order. Self-loops and bus 0 are rejected.
    pub fn insert(&mut self, a: usize, b: usize) -> Result<bool> {
        if a == b || a == 0 || b == 0 {
            return Err(Error::InvalidInput(format!("invalid edge ({a}, {b})")));
        }
        Ok(self.edges.insert((a.min(b), a.max(b))))
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.edges.iter()
    }

    /// Support of an arbitrary square matrix (upper triangle, `|a_ij| > tol`).
    pub fn from_matrix(a: &DMatrix<f64>, tol: f64) -> Self {
        let m = a.nrows().min(a.ncols());
        let edges = (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .filter(|&(i, j)| a[(i, j)].abs() > tol)
            .map(|(i, j)| (i + 1, j + 1))
            .collect();
        Self { edges }
    }
}

impl FromIterator<(usize, usize)> for SupportSet {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Self {
            edges: iter
                .into_iter()
                .filter(|&(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect(),
        }
    }
}

/// Series line between two buses, admittance in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub g_line: f64,
    pub b_tilde_line: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineList {
    m: usize,
    lines: Vec<Line>,
}

impl LineList {
    pub fn new(m: usize, lines: Vec<Line>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("bus count must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &lines {
            let (a, b) = (l.from_bus, l.to_bus);
            if a == 0 || b == 0 || a > m || b > m {
                return Err(Error::InvalidInput(format!(
                    "line ({a}, {b}) outside buses 1..={m}"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at bus {a}")));
            }
            if !(l.g_line >= 0.0 && l.b_tilde_line >= 0.0)
                || !l.g_line.is_finite()
                || !l.b_tilde_line.is_finite()
            {
                return Err(Error::InvalidInput(format!(
                    "line ({a}, {b}) needs finite non-negative admittances"
                )));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::DuplicateLine(a.min(b), a.max(b)));
            }
        }
        Ok(Self { m, lines })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }
}

/// Nodal admittance of a series-line network: `[G]_ij = -g_ij`,
/// `[B̃]_ij = -b̃_ij`, diagonals balance the rows.
pub fn build_admittance(lines: &LineList) -> ComplexAdmittance {
    let m = lines.m();
    let mut g = DMatrix::zeros(m, m);
    let mut b = DMatrix::zeros(m, m);
    for l in lines.lines() {
        let (i, j) = (l.from_bus - 1, l.to_bus - 1);
        g[(i, j)] = -l.g_line;
        g[(j, i)] = -l.g_line;
        b[(i, j)] = -l.b_tilde_line;
        b[(j, i)] = -l.b_tilde_line;
    }
    set_balanced_diagonal(&mut g);
    set_balanced_diagonal(&mut b);
    ComplexAdmittance {
        g: RealLaplacian { entries: g },
        b_tilde: RealLaplacian { entries: b },
    }
}

/// Sets each diagonal entry to minus the sum of the row's off-diagonals.
fn set_balanced_diagonal(a: &mut DMatrix<f64>) {
    let m = a.nrows();
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = -off;
    }
}

/// Maps a square matrix into the Laplacian set: symmetrize, clip the
/// off-diagonals to `min(x, 0)`, then rebalance the diagonal.
pub fn project_to_laplacian(a: &DMatrix<f64>) -> Result<RealLaplacian> {
    let m = ensure_square(a, "input")?;
    let mut out = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            0.0
        } else {
            (0.5 * (a[(i, j)] + a[(j, i)])).min(0.0)
        }
    });
    set_balanced_diagonal(&mut out);
    Ok(RealLaplacian { entries: out })
}

/// Zeroes off-diagonal entries smaller in magnitude than
/// `τ = min(diag) / M`, then rebalances the diagonal.
pub fn threshold_offdiag(a: &RealLaplacian) -> RealLaplacian {
    let m = a.m();
    if m == 0 {
        return a.clone();
    }
    let tau = threshold_level(a);
    if tau <= 0.0 {
        return a.clone();
    }
    let mut out = a.entries.map(|x| if x.abs() < tau { 0.0 } else { x });
    set_balanced_diagonal(&mut out);
    RealLaplacian { entries: out }
}

/// `τ = min_m a_mm / M`.
pub fn threshold_level(a: &RealLaplacian) -> f64 {
    let m = a.m();
    if m == 0 {
        return 0.0;
    }
    a.entries.diagonal().min() / m as f64
}

pub fn support_of(a: &RealLaplacian, tol: f64) -> SupportSet {
    SupportSet::from_matrix(a.entries(), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(m: usize) -> LineList {
        let lines = (1..m)
            .map(|i| Line {
                from_bus: i,
                to_bus: i + 1,
                g_line: i as f64,
                b_tilde_line: 2.0 * i as f64,
            })
            .collect();
        LineList::new(m, lines).unwrap()
    }

    #[test]
    fn single_line_admittance() {
        let ll = LineList::new(
            2,
            vec![Line {
                from_bus: 1,
                to_bus: 2,
                g_line: 1.0,
                b_tilde_line: 2.0,
            }],
        )
        .unwrap();
        let y = build_admittance(&ll);
        assert_eq!(
            y.g.entries(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        assert_eq!(
            y.b_tilde.entries(),
            &DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0])
        );
        let yc = y.y();
        assert_eq!(yc[(0, 1)], Complex64::new(-1.0, 2.0));
    }

    #[test]
    fn empty_line_list_gives_zero() {
        let y = build_admittance(&LineList::new(3, vec![]).unwrap());
        assert_eq!(y.g.entries(), &DMatrix::zeros(3, 3));
        assert_eq!(y.b_tilde.entries(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn duplicate_line_rejected() {
        let l = |a, b| Line {
            from_bus: a,
            to_bus: b,
            g_line: 1.0,
            b_tilde_line: 1.0,
        };
        let err = LineList::new(3, vec![l(1, 2), l(2, 1)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateLine(1, 2)));
        assert!(LineList::new(3, vec![l(1, 4)]).is_err());
        assert!(LineList::new(3, vec![l(2, 2)]).is_err());
    }

    #[test]
    fn admittance_is_psd_laplacian() {
        let y = build_admittance(&chain(6));
        for l in [&y.g, &y.b_tilde] {
            check_laplacian(l.entries()).unwrap();
            assert!(l.is_psd());
        }
    }

    #[test]
    fn projection_keeps_laplacians() {
        let y = build_admittance(&chain(5));
        let p = project_to_laplacian(y.b_tilde.entries()).unwrap();
        assert!((p.entries() - y.b_tilde.entries()).abs().max() <= 1e-12);
    }

    #[test]
    fn projection_clips_positive_offdiagonals() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(project_to_laplacian(&a).unwrap().entries(), &DMatrix::zeros(2, 2));
        assert!(project_to_laplacian(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn threshold_drops_small_entries() {
        let mut a = DMatrix::from_element(4, 4, 0.0);
        a[(0, 1)] = -0.1;
        a[(1, 0)] = -0.1;
        a[(2, 3)] = -1.0;
        a[(3, 2)] = -1.0;
        a[(0, 2)] = -0.9;
        a[(2, 0)] = -0.9;
        a[(1, 3)] = -0.9;
        a[(3, 1)] = -0.9;
        set_balanced_diagonal(&mut a);
        let l = RealLaplacian::new(a).unwrap();
        // min diagonal is 1.0 -> tau = 0.25
        assert_eq!(threshold_level(&l), 0.25);
        let t = threshold_offdiag(&l);
        assert_eq!(t.entries()[(0, 1)], 0.0);
        assert_eq!(t.support(0.0).len(), 3);
        check_laplacian(t.entries()).unwrap();
    }

    #[test]
    fn threshold_keeps_large_entries() {
        let y = build_admittance(&chain(4));
        let t = threshold_offdiag(&y.g);
        assert_eq!(t.support(0.0), y.g.support(0.0));
    }

    #[test]
    fn support_examples() {
        assert!(RealLaplacian::zeros(3).support(0.0).is_empty());
        let ll = LineList::new(
            2,
            vec![Line {
                from_bus: 1,
                to_bus: 2,
                g_line: 1.0,
                b_tilde_line: 1.0,
            }],
        )
        .unwrap();
        let s = build_admittance(&ll).g.support(0.0);
        assert_eq!(s.iter().copied().collect::<Vec<_>>(), vec![(1, 2)]);
    }

    fn square(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-5.0..5.0f64, m * m)
            .prop_map(move |v| DMatrix::from_vec(m, m, v))
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(a in (1usize..7).prop_flat_map(square)) {
            let p = project_to_laplacian(&a).unwrap();
            check_laplacian(p.entries()).unwrap();
            prop_assert!(p.is_psd());
            let pp = project_to_laplacian(p.entries()).unwrap();
            prop_assert!((pp.entries() - p.entries()).abs().max() <= 1e-12);
        }

        #[test]
        fn threshold_never_grows_support(a in (2usize..7).prop_flat_map(square)) {
            let p = project_to_laplacian(&a).unwrap();
            let t = threshold_offdiag(&p);
            check_laplacian(t.entries()).unwrap();
            prop_assert!(t.support(0.0).len() <= p.support(0.0).len());
        }
    }
}
