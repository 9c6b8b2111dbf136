use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{QuadraticForm, Source};
use crate::error::{Error, Result};

/// One sample's contribution `(scale/2) · ‖r‖²_W` with residual
/// `r = offset + g_left · G · g_right + b_left · B̃ · b_right`
/// and `‖x‖²_W = xᴴ W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleQuadratic {
    pub offset: DVector<Complex64>,
    pub g_left: DMatrix<Complex64>,
    pub g_right: DVector<Complex64>,
    pub b_left: DMatrix<Complex64>,
    pub b_right: DVector<Complex64>,
    /// Hermitian positive semidefinite weight.
    pub weight: DMatrix<Complex64>,
    pub scale: f64,
}

impl PerSampleQuadratic {
    pub fn m(&self) -> usize {
        self.offset.len()
    }

    fn validate(&self, m: usize, n: usize) -> Result<()> {
        let vecs = [("offset", &self.offset), ("g_right", &self.g_right), ("b_right", &self.b_right)];
        for (what, v) in vecs {
            if v.len() != m {
                return Err(Error::Dimension(format!("sample {n}: {what} has length {}, expected {m}", v.len())));
            }
        }
        let mats = [("g_left", &self.g_left), ("b_left", &self.b_left), ("weight", &self.weight)];
        for (what, a) in mats {
            if a.shape() != (m, m) {
                return Err(Error::Dimension(format!("sample {n}: {what} is {:?}, expected {m}x{m}", a.shape())));
            }
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {n}: scale must be non-negative")));
        }
        Ok(())
    }

    fn residual(&self, g: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<Complex64> {
        let to_c = |a: &DMatrix<f64>| a.map(|x| Complex64::new(x, 0.0));
        &self.offset + &self.g_left * (to_c(g) * &self.g_right) + &self.b_left * (to_c(b) * &self.b_right)
    }
}

fn weighted_norm2(w: &DMatrix<Complex64>, r: &DVector<Complex64>) -> f64 {
    r.dotc(&(w * r)).re
}

pub(crate) fn residual_objective(samples: &[PerSampleQuadratic], g: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    samples
        .iter()
        .map(|s| 0.5 * s.scale * weighted_norm2(&s.weight, &s.residual(g, b)))
        .sum()
}

/// Accumulates per-sample quadratics into a [`QuadraticForm`].
///
/// The conductance blocks are marked as estimated unless every sample has a
/// vanishing `g_left` or `g_right`.
pub fn assemble_from_samples(samples: &[PerSampleQuadratic]) -> Result<QuadraticForm> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples to assemble".into()))?;
    let m = first.m();
    for (n, s) in samples.iter().enumerate() {
        s.validate(m, n)?;
    }
    let estimates_g = samples
        .iter()
        .any(|s| s.g_left.iter().any(|z| z.norm() > 0.0) && s.g_right.iter().any(|z| z.norm() > 0.0));

    let mut q = QuadraticForm::zeros(m, estimates_g);
    let re = |a: DMatrix<Complex64>| a.map(|z| z.re);
    for s in samples {
        let left = [&s.g_left, &s.b_left];
        let right = [&s.g_right, &s.b_right];
        // curvature pieces Aᵢᴴ W Aⱼ and conj(aᵢ) aⱼᵀ
        let wl: Vec<DMatrix<Complex64>> = left.iter().map(|a| &s.weight * *a).collect();
        let block = |i: usize, j: usize| {
            let inner = left[i].adjoint() * &wl[j];
            let outer = right[i].conjugate() * right[j].transpose();
            re(outer.kronecker(&inner)) * s.scale
        };
        q.gg += block(0, 0);
        q.gb += block(0, 1);
        q.bg += block(1, 0);
        q.bb += block(1, 1);
        // linear pieces Re vec(Aᵢᴴ W a₁ aᵢᴴ)
        let wa = &s.weight * &s.offset;
        let lin = |i: usize| {
            let x = left[i].adjoint() * &wa * right[i].adjoint();
            DVector::from_iterator(m * m, x.iter().map(|z| z.re * s.scale))
        };
        q.lin_g += lin(0);
        q.lin_b += lin(1);
        q.constant += 0.5 * s.scale * weighted_norm2(&s.weight, &s.offset);
    }
    if !estimates_g {
        let n = m * m;
        q.gg = DMatrix::zeros(n, n);
        q.gb = DMatrix::zeros(n, n);
        q.bg = DMatrix::zeros(n, n);
        q.lin_g = DVector::zeros(n);
    }
    Ok(q.with_source(Source::Generic(samples.to_vec())))
}
