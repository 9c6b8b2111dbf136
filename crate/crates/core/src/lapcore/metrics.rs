use nalgebra::DMatrix;

use super::{RealLaplacian, SupportSet};
use crate::error::{Error, Result};

/// Edge-detection F-score `2tp / (2tp + fp + fn)` over unordered pairs.
///
/// Two empty supports agree perfectly and score 1.
pub fn fscore(truth: &SupportSet, est: &SupportSet) -> f64 {
    let tp = est.iter().filter(|&&(a, b)| truth.contains(a, b)).count();
    let fp = est.len() - tp;
    let fn_ = truth.len() - tp;
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// `(1/M²) · trace((Â − A)ᵀ(Â − A))`.
pub fn mse(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != est.shape() || truth.nrows() != truth.ncols() {
        return Err(Error::Dimension(format!(
            "mse needs equal square matrices, got {:?} and {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let m = truth.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    Ok((est - truth).norm_squared() / (m * m) as f64)
}

/// Mean of `|b̃_ij| / |g_ij|` over the entries where both are nonzero.
pub fn magnitude_ratio(g: &RealLaplacian, b_tilde: &RealLaplacian) -> Result<f64> {
    if g.m() != b_tilde.m() {
        return Err(Error::Dimension(format!(
            "ratio of {0}x{0} and {1}x{1} matrices",
            g.m(),
            b_tilde.m()
        )));
    }
    let (sum, count) = g
        .entries()
        .iter()
        .zip(b_tilde.entries().iter())
        .filter(|(x, y)| **x != 0.0 && **y != 0.0)
        .fold((0.0, 0usize), |(s, c), (x, y)| (s + y.abs() / x.abs(), c + 1));
    if count == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(sum / count as f64)
}
