use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lapcore::RealLaplacian;
use crate::models::MeasurementSet;

/// Centered sample covariance `(1/N) Σ (xₙ − x̄)(xₙ − x̄)ᵀ` of the columns.
fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols() as f64;
    let mean = x.column_mean();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    &c * c.transpose() / n
}

/// Keeps the non-positive off-diagonal entries of `s` and balances the
/// diagonal so that rows sum to zero.
fn to_laplacian(s: &DMatrix<f64>) -> RealLaplacian {
    let m = s.nrows();
    let mut l = s.map(|x| x.min(0.0));
    for i in 0..m {
        l[(i, i)] = 0.0;
        let off: f64 = l.row(i).sum();
        l[(i, i)] = -off;
    }
    // the clipped covariance is symmetric, so this cannot fail
    RealLaplacian::new(l).expect("clipped covariance is a Laplacian")
}

/// Starting points from the real and imaginary parts of the voltage phasors
/// (`|v| e^{jθ}` for DLPF, `e^{jθ}` for DC).
pub fn init_from_samples(meas: &MeasurementSet) -> Result<(RealLaplacian, RealLaplacian)> {
    let x = meas.voltage_phasors();
    if x.is_empty() {
        return Err(Error::InsufficientData("initialization needs at least one sample".into()));
    }
    let m = meas.m();
    let re = DMatrix::from_fn(m, x.len(), |i, n| x[n][i].re);
    let im = DMatrix::from_fn(m, x.len(), |i, n| x[n][i].im);
    Ok((to_laplacian(&covariance(&re)), to_laplacian(&covariance(&im))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AcSample, MeasurementSet, NoiseModel, Samples};
    use nalgebra::DVector;
    use num_complex::Complex64;

    fn ac(vs: &[[Complex64; 2]]) -> MeasurementSet {
        let s = vs
            .iter()
            .map(|v| AcSample {
                p: DVector::zeros(2),
                q: DVector::zeros(2),
                v: DVector::from_row_slice(v),
            })
            .collect();
        MeasurementSet::new(Samples::Ac(s), NoiseModel::isotropic(2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn identical_samples_give_zero() {
        let v = [Complex64::new(1.0, 0.1), Complex64::new(0.9, -0.2)];
        let (g, b) = init_from_samples(&ac(&[v, v, v])).unwrap();
        assert_eq!(g.entries(), &DMatrix::zeros(2, 2));
        assert_eq!(b.entries(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn two_bus_hand_computation() {
        // Re parts (1, 3) and (3, 1): mean (2, 2), covariance [[1, -1], [-1, 1]]
        // Im parts (0, 0) and (2, 2): mean (1, 1), covariance [[1, 1], [1, 1]]
        let c = Complex64::new;
        let (g, b) = init_from_samples(&ac(&[[c(1.0, 0.0), c(3.0, 0.0)], [c(3.0, 2.0), c(1.0, 2.0)]])).unwrap();
        assert_eq!(g.entries(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        // positive covariance is clipped away entirely
        assert_eq!(b.entries(), &DMatrix::zeros(2, 2));
    }
}
