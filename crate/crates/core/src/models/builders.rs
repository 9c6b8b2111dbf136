//! Closed-form assembly for the three power-flow models.
//!
//! AC:   `s = diag(v) (G + jB̃) v*`
//! DLPF: `p = B̃θ + G|v|`, `q = −Gθ + B̃|v|`
//! DC:   `p = B̃θ`
//!
//! The noise enters the real and imaginary parts with weight `R_η⁻¹`, so each
//! objective is `Σₙ rₙᴴ R_η⁻¹ rₙ` for the model residual `rₙ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{
    AcSample, DcSample, DlpfSample, MeasurementSet, ModelKind, PerSampleQuadratic,
    QuadraticForm, Samples, Source,
};
use crate::error::{Error, Result};
use crate::linalg::vec;

fn wrong_model(expected: ModelKind, meas: &MeasurementSet) -> Error {
    Error::WrongModel {
        expected: expected.to_string(),
        actual: meas.kind().to_string(),
    }
}

/// Builds the quadratic form matching the kind of `meas`.
pub fn build(meas: &MeasurementSet) -> Result<QuadraticForm> {
    match meas.kind() {
        ModelKind::Ac => build_ac(meas),
        ModelKind::Dlpf => build_dlpf(meas),
        ModelKind::Dc => build_dc(meas),
    }
}

/// Matrix whose columns are the given per-sample vectors.
fn stack<'a>(m: usize, cols: impl ExactSizeIterator<Item = &'a DVector<f64>>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, cols.len());
    for (k, c) in cols.enumerate() {
        out.set_column(k, c);
    }
    out
}

pub fn build_ac(meas: &MeasurementSet) -> Result<QuadraticForm> {
    let Samples::Ac(samples) = meas.samples() else {
        return Err(wrong_model(ModelKind::Ac, meas));
    };
    let m = meas.m();
    let mm = m * m;
    let n = samples.len();
    let r_inv = meas.noise().inverse();

    // z[i + m k] = conj(v_i) v_k, so Σ z zᴴ carries (v vᴴ)[k,l] · conj(v_i) v_j
    let mut zr = DMatrix::zeros(mm, n);
    let mut zi = DMatrix::zeros(mm, n);
    let mut t = DMatrix::<Complex64>::zeros(m, m);
    let mut constant = 0.0;
    for (col, x) in samples.iter().enumerate() {
        for k in 0..m {
            for i in 0..m {
                let z = x.v[i].conj() * x.v[k];
                zr[(i + m * k, col)] = z.re;
                zi[(i + m * k, col)] = z.im;
            }
        }
        let s = x.p.zip_map(&x.q, Complex64::new);
        let rs = r_inv.map(|a| Complex64::new(a, 0.0)) * &s;
        constant += s.dotc(&rs).re;
        // T += diag(v*) R⁻¹ s vᵀ
        for k in 0..m {
            for i in 0..m {
                t[(i, k)] += x.v[i].conj() * rs[i] * x.v[k];
            }
        }
    }
    let zrt = zr.transpose();
    let zit = zi.transpose();
    let mut re_k = &zr * &zrt + &zi * &zit;
    let mut im_k = &zi * &zrt - &zr * &zit;
    // Hadamard with 11ᵀ ⊗ R⁻¹
    for c in 0..mm {
        for r in 0..mm {
            let w = r_inv[(r % m, c % m)];
            re_k[(r, c)] *= w;
            im_k[(r, c)] *= w;
        }
    }
    let gg = re_k * 2.0;
    let bg = im_k * 2.0;
    let gb = -&bg;
    let q = QuadraticForm {
        m,
        bb: gg.clone(),
        gg,
        gb,
        bg,
        lin_g: vec(&t.map(|z| -2.0 * z.re)),
        lin_b: vec(&t.map(|z| -2.0 * z.im)),
        constant,
        estimates_g: true,
        source: None,
    };
    Ok(q.with_source(Source::Measurements(meas.clone())))
}

pub fn build_dlpf(meas: &MeasurementSet) -> Result<QuadraticForm> {
    let Samples::Dlpf(samples) = meas.samples() else {
        return Err(wrong_model(ModelKind::Dlpf, meas));
    };
    let m = meas.m();
    let r_inv = meas.noise().inverse();
    let p = stack(m, samples.iter().map(|x| &x.p));
    let q = stack(m, samples.iter().map(|x| &x.q));
    let a = stack(m, samples.iter().map(|x| &x.v_mag));
    let th = stack(m, samples.iter().map(|x| &x.theta));
    let (at, tht) = (a.transpose(), th.transpose());

    let c1 = &a * &at + &th * &tht;
    let c2 = &a * &tht - &th * &at;
    let gg = c1.kronecker(r_inv) * 2.0;
    let gb = c2.kronecker(r_inv) * 2.0;
    let lin_g = vec(&(r_inv * (&q * &tht - &p * &at) * 2.0));
    let lin_b = vec(&(r_inv * (&p * &tht + &q * &at) * -2.0));
    let constant = (r_inv * &p).component_mul(&p).sum() + (r_inv * &q).component_mul(&q).sum();
    let form = QuadraticForm {
        m,
        bb: gg.clone(),
        gg,
        bg: gb.transpose(),
        gb,
        lin_g,
        lin_b,
        constant,
        estimates_g: true,
        source: None,
    };
    Ok(form.with_source(Source::Measurements(meas.clone())))
}

pub fn build_dc(meas: &MeasurementSet) -> Result<QuadraticForm> {
    let Samples::Dc(samples) = meas.samples() else {
        return Err(wrong_model(ModelKind::Dc, meas));
    };
    let m = meas.m();
    let r_inv = meas.noise().inverse();
    let p = stack(m, samples.iter().map(|x| &x.p));
    let th = stack(m, samples.iter().map(|x| &x.theta));
    let mut form = QuadraticForm::zeros(m, false);
    form.bb = (&th * th.transpose()).kronecker(r_inv) * 2.0;
    form.lin_b = vec(&(r_inv * (&p * th.transpose()) * -2.0));
    form.constant = (r_inv * &p).component_mul(&p).sum();
    Ok(form.with_source(Source::Measurements(meas.clone())))
}

/// Per-sample factored form of a measurement set. Assembling it with
/// [`assemble_from_samples`](super::assemble_from_samples) reproduces the closed-form builders.
pub fn factored_form(meas: &MeasurementSet) -> Vec<PerSampleQuadratic> {
    let m = meas.m();
    let w = meas.noise().inverse().map(|a| Complex64::new(a, 0.0));
    let c = |v: &DVector<f64>| v.map(|a| Complex64::new(a, 0.0));
    let neg_eye = DMatrix::<Complex64>::identity(m, m).map(|z| -z);
    let j = Complex64::i();
    match meas.samples() {
        Samples::Ac(s) => s
            .iter()
            .map(|x| {
                let diag = DMatrix::from_diagonal(&x.v);
                PerSampleQuadratic {
                    offset: x.p.zip_map(&x.q, Complex64::new),
                    g_left: diag.map(|z| -z),
                    g_right: x.v.conjugate(),
                    b_left: diag.map(|z| -j * z),
                    b_right: x.v.conjugate(),
                    weight: w.clone(),
                    scale: 2.0,
                }
            })
            .collect(),
        Samples::Dlpf(s) => s
            .iter()
            .map(|x| {
                let a2 = x.v_mag.zip_map(&x.theta, |a, t| Complex64::new(a, -t));
                PerSampleQuadratic {
                    offset: x.p.zip_map(&x.q, Complex64::new),
                    g_left: neg_eye.clone(),
                    b_right: a2.map(|z| j * z),
                    g_right: a2,
                    b_left: neg_eye.clone(),
                    weight: w.clone(),
                    scale: 2.0,
                }
            })
            .collect(),
        Samples::Dc(s) => s
            .iter()
            .map(|x| PerSampleQuadratic {
                offset: c(&x.p),
                g_left: DMatrix::zeros(m, m),
                g_right: DVector::zeros(m),
                b_left: neg_eye.clone(),
                b_right: c(&x.theta),
                weight: w.clone(),
                scale: 2.0,
            })
            .collect(),
    }
}

/// Generic assembly of the factored form, mainly a cross-check.
#[cfg(test)]
pub(crate) fn build_generic(meas: &MeasurementSet) -> Result<QuadraticForm> {
    super::assemble_from_samples(&factored_form(meas))
}

fn weighted(r_inv: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    r.dot(&(r_inv * r))
}

fn ac_residual(x: &AcSample, g: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<Complex64> {
    let y = g.zip_map(b, Complex64::new);
    let iv = y * x.v.conjugate();
    DVector::from_fn(x.p.len(), |i, _| Complex64::new(x.p[i], x.q[i]) - x.v[i] * iv[i])
}

fn dlpf_residual(x: &DlpfSample, g: &DMatrix<f64>, b: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let rp = &x.p - b * &x.theta - g * &x.v_mag;
    let rq = &x.q + g * &x.theta - b * &x.v_mag;
    (rp, rq)
}

fn dc_residual(x: &DcSample, b: &DMatrix<f64>) -> DVector<f64> {
    &x.p - b * &x.theta
}

/// ψ computed from the model residuals.
pub(crate) fn residual_objective(meas: &MeasurementSet, g: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r_inv = meas.noise().inverse();
    match meas.samples() {
        Samples::Ac(s) => s
            .iter()
            .map(|x| {
                let r = ac_residual(x, g, b);
                // real symmetric weight: no cross term between Re r and Im r
                weighted(r_inv, &r.map(|z| z.re)) + weighted(r_inv, &r.map(|z| z.im))
            })
            .sum(),
        Samples::Dlpf(s) => s
            .iter()
            .map(|x| {
                let (rp, rq) = dlpf_residual(x, g, b);
                weighted(r_inv, &rp) + weighted(r_inv, &rq)
            })
            .sum(),
        Samples::Dc(s) => s.iter().map(|x| weighted(r_inv, &dc_residual(x, b))).sum(),
    }
}
