//! Synthetic grids and noisy measurements.
//!
//! Voltages are exogenous excitation: magnitudes uniform in `[0.95, 1.05]`
//! p.u. and angles uniform in `[−0.2, 0.2]` rad, i.i.d. over buses and
//! samples. Injections follow the selected model exactly, then Gaussian noise
//! calibrated to the requested SNR is added to `p` (and `q`).
//!
//! Voltages and noise come from separate ChaCha streams of the same seed, so a
//! noiseless and a noisy simulation with one seed share their voltages.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lapcore::{build_admittance, ComplexAdmittance, Line, LineList};
use crate::models::{
    AcSample, DcSample, DlpfSample, MeasurementSet, ModelKind, NoiseModel, Samples,
};

const VOLTAGE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: usize,
    /// Chords added to the random spanning tree.
    pub extra_edges: usize,
    /// Mean of `b̃_line / g_line`.
    pub ratio_mean: f64,
    /// Log-scale standard deviation of the per-line ratio.
    #[serde(default = "default_ratio_spread")]
    pub ratio_spread: f64,
    /// Probability that a line also carries conductance.
    pub overlap: f64,
    pub seed: u64,
}

fn default_ratio_spread() -> f64 {
    0.25
}

impl GridSpec {
    pub fn new(m: usize, extra_edges: usize, seed: u64) -> Self {
        Self { m, extra_edges, ratio_mean: 2.0, ratio_spread: default_ratio_spread(), overlap: 1.0, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput(format!("a grid needs at least 2 buses, got {}", self.m)));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(Error::InvalidInput(format!("overlap must lie in (0, 1], got {}", self.overlap)));
        }
        if !(self.ratio_mean > 0.0 && self.ratio_mean.is_finite()) {
            return Err(Error::InvalidInput(format!("ratio_mean must be positive, got {}", self.ratio_mean)));
        }
        if !(self.ratio_spread >= 0.0 && self.ratio_spread.is_finite()) {
            return Err(Error::InvalidInput(format!("ratio_spread must be non-negative, got {}", self.ratio_spread)));
        }
        let capacity = self.m * (self.m - 1) / 2 - (self.m - 1);
        if self.extra_edges > capacity {
            return Err(Error::InvalidInput(format!(
                "{} extra edges exceed the {capacity} pairs left by a spanning tree on {} buses",
                self.extra_edges, self.m
            )));
        }
        Ok(())
    }
}

/// Random connected grid: spanning tree plus chords.
pub fn gen_grid(spec: &GridSpec) -> Result<(ComplexAdmittance, LineList)> {
    spec.validate()?;
    let m = spec.m;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // random recursive tree over a shuffled bus order
    let mut order: Vec<usize> = (1..=m).collect();
    order.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(m - 1 + spec.extra_edges);
    for k in 1..m {
        let parent = order[rng.random_range(0..k)];
        pairs.push(ordered(order[k], parent));
    }
    let mut rest: Vec<(usize, usize)> = (1..=m)
        .flat_map(|i| (i + 1..=m).map(move |j| (i, j)))
        .filter(|p| !pairs.contains(p))
        .collect();
    rest.shuffle(&mut rng);
    pairs.extend(rest.into_iter().take(spec.extra_edges));

    let b_dist = Uniform::new(0.5, 2.0).expect("valid range");
    let s = spec.ratio_spread;
    let ratio_dist = LogNormal::new(spec.ratio_mean.ln() - 0.5 * s * s, s)
        .map_err(|e| Error::InvalidInput(format!("ratio distribution: {e}")))?;
    let lines = pairs
        .into_iter()
        .map(|(from_bus, to_bus)| {
            let b_tilde_line = b_dist.sample(&mut rng);
            let ratio = ratio_dist.sample(&mut rng);
            let keep_g = rng.random::<f64>() < spec.overlap;
            Line { from_bus, to_bus, g_line: if keep_g { b_tilde_line / ratio } else { 0.0 }, b_tilde_line }
        })
        .collect();
    let lines = LineList::new(m, lines)?;
    Ok((build_admittance(&lines), lines))
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Per-sample voltage excitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageProfile {
    pub mag_min: f64,
    pub mag_max: f64,
    /// Angles are drawn from `[−angle_max, angle_max]`.
    pub angle_max: f64,
}

impl Default for VoltageProfile {
    fn default() -> Self {
        Self { mag_min: 0.95, mag_max: 1.05, angle_max: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub model: ModelKind,
    pub n_samples: usize,
    pub snr_db: f64,
    /// Skip the noise draw; `R_η` is still calibrated from `snr_db`.
    #[serde(default)]
    pub noiseless: bool,
    /// Noise variance to use instead of the SNR calibration.
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default)]
    pub voltage_profile: VoltageProfile,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(model: ModelKind, n_samples: usize, snr_db: f64, seed: u64) -> Self {
        Self { model, n_samples, snr_db, noiseless: false, sigma2: None, voltage_profile: VoltageProfile::default(), seed }
    }
}

/// `σ²` giving the requested SNR for a given total signal energy.
pub fn sigma2_for_snr(energy: f64, m: usize, n: usize, snr_db: f64) -> f64 {
    energy / ((m * n) as f64 * 10f64.powf(snr_db / 10.0))
}

/// `10 log₁₀(Σₙ ‖p + jq‖² / (M N σ²))`; DC uses `‖p‖²`.
pub fn snr_of(meas: &MeasurementSet, sigma2: f64) -> f64 {
    10.0 * (meas.injection_energy() / ((meas.m() * meas.n_samples()) as f64 * sigma2)).log10()
}

/// Noiseless injections for the given voltages.
fn clean_samples(adm: &ComplexAdmittance, model: ModelKind, mags: &[DVector<f64>], angles: &[DVector<f64>]) -> Samples {
    let (g, b) = (adm.g.entries(), adm.b_tilde.entries());
    let y = adm.y();
    let pairs = mags.iter().zip(angles);
    match model {
        ModelKind::Ac => Samples::Ac(
            pairs
                .map(|(a, t)| {
                    let v = a.zip_map(t, Complex64::from_polar);
                    let s = v.component_mul(&(&y * &v).conjugate());
                    AcSample { p: s.map(|z| z.re), q: s.map(|z| z.im), v }
                })
                .collect(),
        ),
        ModelKind::Dlpf => Samples::Dlpf(
            pairs
                .map(|(a, t)| DlpfSample {
                    p: b * t + g * a,
                    q: b * a - g * t,
                    v_mag: a.clone(),
                    theta: t.clone(),
                })
                .collect(),
        ),
        ModelKind::Dc => Samples::Dc(pairs.map(|(_, t)| DcSample { p: b * t, theta: t.clone() }).collect()),
    }
}

/// Draws voltages, computes injections under `spec.model` and adds noise.
pub fn simulate(adm: &ComplexAdmittance, spec: &SimSpec) -> Result<MeasurementSet> {
    let m = adm.m();
    let n = spec.n_samples;
    if n == 0 {
        return Err(Error::InsufficientData("n_samples must be at least 1".into()));
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("snr_db must be finite, got {}", spec.snr_db)));
    }
    let vp = spec.voltage_profile;
    if !(vp.mag_min > 0.0 && vp.mag_min <= vp.mag_max && vp.angle_max >= 0.0) {
        return Err(Error::InvalidInput("invalid voltage profile".into()));
    }
    let mut vrng = ChaCha8Rng::seed_from_u64(spec.seed);
    vrng.set_stream(VOLTAGE_STREAM);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let mut mags = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    for _ in 0..n {
        mags.push(DVector::from_fn(m, |_, _| draw(&mut vrng, vp.mag_min, vp.mag_max)));
        angles.push(DVector::from_fn(m, |_, _| draw(&mut vrng, -vp.angle_max, vp.angle_max)));
    }
    let mut samples = clean_samples(adm, spec.model, &mags, &angles);
    let energy: f64 = match &samples {
        Samples::Ac(s) => s.iter().map(|x| x.p.norm_squared() + x.q.norm_squared()).sum(),
        Samples::Dlpf(s) => s.iter().map(|x| x.p.norm_squared() + x.q.norm_squared()).sum(),
        Samples::Dc(s) => s.iter().map(|x| x.p.norm_squared()).sum(),
    };
    let sigma2 = spec.sigma2.unwrap_or_else(|| sigma2_for_snr(energy, m, n, spec.snr_db));
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InsufficientData("injections are identically zero; SNR is undefined".into()));
    }
    if !spec.noiseless {
        let mut nrng = ChaCha8Rng::seed_from_u64(spec.seed);
        nrng.set_stream(NOISE_STREAM);
        // half the variance per real component
        let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("positive variance");
        let mut noise = |x: &mut DVector<f64>| x.iter_mut().for_each(|v| *v += normal.sample(&mut nrng));
        match &mut samples {
            Samples::Ac(s) => s.iter_mut().for_each(|x| {
                noise(&mut x.p);
                noise(&mut x.q);
            }),
            Samples::Dlpf(s) => s.iter_mut().for_each(|x| {
                noise(&mut x.p);
                noise(&mut x.q);
            }),
            Samples::Dc(s) => s.iter_mut().for_each(|x| noise(&mut x.p)),
        }
    }
    MeasurementSet::new(samples, NoiseModel::isotropic(m, sigma2)?)
}

/// Whether the union of both supports connects all buses.
pub fn is_connected(adm: &ComplexAdmittance) -> bool {
    let m = adm.m();
    let adj: DMatrix<bool> = DMatrix::from_fn(m, m, |i, j| {
        i != j && (adm.g.entries()[(i, j)] != 0.0 || adm.b_tilde.entries()[(i, j)] != 0.0)
    });
    let mut seen = vec![false; m];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..m {
            if adj[(i, j)] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
