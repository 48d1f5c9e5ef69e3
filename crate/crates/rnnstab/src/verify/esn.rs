//! Echo-state network identification and the synthetic benchmark plant.
//!
//! The surrogate is a Hammerstein-type SISO recursion: a static pH-like
//! S-curve on the input followed by a stable second-order linear part. It
//! stands in for a real neutralization process; the identification and
//! design pipeline, not the plant itself, is the reproducible object.
//! Excitation is a multilevel pseudo-random signal (MPRS) over the plant's
//! input range.
//!
//! Training is the standard reservoir recipe: fixed random reservoir scaled
//! to a target spectral radius, states driven by teacher-forced output
//! feedback, linear readout by ridge regression, FIT scored on a free-run
//! over the validation split.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VerifyError;
use crate::model::EsnModel;
use crate::sigmoid::SigmoidKind;

/// Input-output record with a fixed sampling time.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub sample_time: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Affine normalization applied before identification; the stability
/// analyses work around the origin of the normalized coordinates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scaling {
    pub u_off: f64,
    pub u_scale: f64,
    pub y_off: f64,
    pub y_scale: f64,
}

impl Scaling {
    pub fn fit(data: &Dataset) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let std = |v: &[f64], m: f64| {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64)
                .sqrt()
                .max(1e-12)
        };
        let (um, ym) = (mean(&data.u), mean(&data.y));
        Scaling {
            u_off: um,
            u_scale: std(&data.u, um),
            y_off: ym,
            y_scale: std(&data.y, ym),
        }
    }

    pub fn normalize(&self, data: &Dataset) -> Dataset {
        Dataset {
            u: data.u.iter().map(|v| (v - self.u_off) / self.u_scale).collect(),
            y: data.y.iter().map(|v| (v - self.y_off) / self.y_scale).collect(),
            sample_time: data.sample_time,
        }
    }

    pub fn normalize_y(&self, y: f64) -> f64 {
        (y - self.y_off) / self.y_scale
    }

    pub fn denormalize_y(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_off
    }
}

#[derive(Debug, Clone)]
pub struct EsnTrainConfig {
    pub n_s: usize,
    pub spectral_radius_target: f64,
    pub ridge_lambda: f64,
    pub input_scale: f64,
    pub feedback_scale: f64,
    pub washout: usize,
    pub train_fraction: f64,
    /// Echo-state bound on ρ(W_x + W_xy W_y) after training.
    pub echo_bound: f64,
    pub seed: u64,
}

impl Default for EsnTrainConfig {
    fn default() -> Self {
        EsnTrainConfig {
            n_s: 3,
            spectral_radius_target: 0.8,
            ridge_lambda: 1e-6,
            input_scale: 0.3,
            feedback_scale: 0.05,
            washout: 100,
            train_fraction: 0.7,
            echo_bound: 1.0,
            seed: 1,
        }
    }
}

/// Deterministic reservoir construction for a seed; training with the same
/// seed and order as a generating network reproduces its reservoir exactly.
pub fn build_reservoir(cfg: &EsnTrainConfig) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ns = cfg.n_s;
    let mut wx = DMatrix::from_fn(ns, ns, |_, _| rng.gen_range(-1.0..1.0));
    let rho = wx
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if rho > 1e-12 {
        wx *= cfg.spectral_radius_target / rho;
    }
    let wu = DMatrix::from_fn(ns, 1, |_, _| rng.gen_range(-1.0..1.0)) * cfg.input_scale;
    let wxy = DMatrix::from_fn(ns, 1, |_, _| rng.gen_range(-1.0..1.0)) * cfg.feedback_scale;
    (wx, wu, wxy)
}

/// Trains an ESN on the dataset and returns the model with its FIT
/// percentage `100·(1 − ‖y − ŷ‖ / ‖y − ȳ‖)` from a free run on the
/// validation split.
pub fn train_esn(data: &Dataset, cfg: &EsnTrainConfig) -> Result<(EsnModel, f64), VerifyError> {
    let t = data.len();
    if t != data.y.len() {
        return Err(VerifyError::DimensionMismatch(
            "input and output series have different lengths".into(),
        ));
    }
    if t <= cfg.n_s * 10 {
        return Err(VerifyError::InvalidInput(format!(
            "need more than {} samples for order {}",
            cfg.n_s * 10,
            cfg.n_s
        )));
    }
    if data.u.iter().chain(&data.y).any(|v| !v.is_finite()) {
        return Err(VerifyError::InvalidInput("dataset has non-finite entries".into()));
    }
    let (wx, wu, wxy) = build_reservoir(cfg);
    let ns = cfg.n_s;
    let n_train = ((t as f64) * cfg.train_fraction) as usize;
    if cfg.washout + 10 >= n_train {
        return Err(VerifyError::InvalidInput("washout swallows the training split".into()));
    }

    // Teacher-forced state run over the training split.
    let mut x = DVector::zeros(ns);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n_train);
    let mut targets: Vec<f64> = Vec::with_capacity(n_train);
    for k in 0..n_train {
        if k >= cfg.washout {
            rows.push(x.clone());
            targets.push(data.y[k]);
        }
        let pre = &wx * &x + &wu * data.u[k] + &wxy * data.y[k];
        x = pre.map(|v| v.tanh());
    }

    // Ridge readout: W_y = (XᵀX + λI)⁻¹ Xᵀ y.
    let mut gram = DMatrix::zeros(ns, ns);
    let mut rhs = DVector::zeros(ns);
    for (xr, yk) in rows.iter().zip(&targets) {
        gram += xr * xr.transpose();
        rhs += xr * *yk;
    }
    for i in 0..ns {
        gram[(i, i)] += cfg.ridge_lambda;
    }
    let chol = gram.cholesky().ok_or(VerifyError::IllConditioned)?;
    let wy_vec = chol.solve(&rhs);
    let wy = DMatrix::from_fn(1, ns, |_, j| wy_vec[j]);

    let esn = EsnModel::new(wx, wu, wxy, wy, cfg.echo_bound)?;

    // Free-run FIT on the validation split, continuing from the
    // teacher-forced state.
    let mut yhat = Vec::with_capacity(t - n_train);
    let mut xs = x;
    for k in n_train..t {
        let ys = (&esn.wy * &xs)[(0, 0)];
        yhat.push(ys);
        let pre = &esn.wx * &xs + &esn.wu * data.u[k] + &esn.wxy * ys;
        xs = pre.map(|v| v.tanh());
    }
    let yval = &data.y[n_train..];
    let ymean = yval.iter().sum::<f64>() / yval.len() as f64;
    let err: f64 = yval
        .iter()
        .zip(&yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let base: f64 = yval
        .iter()
        .map(|a| (a - ymean) * (a - ymean))
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    let fit = 100.0 * (1.0 - err / base);
    Ok((esn, fit))
}

/// Best-of-N reservoir restarts: trains with seeds `cfg.seed .. cfg.seed +
/// restarts` and keeps the highest validation FIT. Deterministic for a
/// fixed base seed.
pub fn train_esn_restarts(
    data: &Dataset,
    cfg: &EsnTrainConfig,
    restarts: usize,
) -> Result<(EsnModel, f64, u64), VerifyError> {
    let mut best: Option<(EsnModel, f64, u64)> = None;
    let mut last_err = None;
    for k in 0..restarts.max(1) as u64 {
        let mut c = cfg.clone();
        c.seed = cfg.seed + k;
        match train_esn(data, &c) {
            Ok((model, fit)) => {
                if best.as_ref().map_or(true, |(_, bf, _)| fit > *bf) {
                    best = Some((model, fit, c.seed));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(VerifyError::IllConditioned))
}

/// Free-run simulation of an ESN driven by an input series.
pub fn simulate_esn(esn: &EsnModel, u: &[f64]) -> Vec<f64> {
    let mut x = DVector::zeros(esn.ns());
    let mut out = Vec::with_capacity(u.len());
    for &uk in u {
        let ys = (&esn.wy * &x)[(0, 0)];
        out.push(ys);
        let pre = &esn.wx * &x + &esn.wu * uk + &esn.wxy * ys;
        x = pre.map(|v| v.tanh());
    }
    out
}

/// Multilevel pseudo-random signal: levels drawn uniformly from an evenly
/// spaced grid over [min, max], held for `hold` samples.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MprsSpec {
    pub levels: usize,
    pub min: f64,
    pub max: f64,
    pub hold: usize,
}

impl Default for MprsSpec {
    fn default() -> Self {
        MprsSpec {
            levels: 12,
            min: 14.35,
            max: 16.35,
            hold: 15,
        }
    }
}

pub fn mprs_signal(spec: &MprsSpec, t: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(t);
    let mut current = 0.5 * (spec.min + spec.max);
    for k in 0..t {
        if k % spec.hold.max(1) == 0 {
            current = if spec.levels <= 1 {
                0.5 * (spec.min + spec.max)
            } else {
                let idx = rng.gen_range(0..spec.levels);
                spec.min + (spec.max - spec.min) * idx as f64 / (spec.levels - 1) as f64
            };
        }
        out.push(current);
    }
    out
}

/// Fixed coefficients of the synthetic pH-like plant. The input S-curve is
/// centered in the MPRS range; the linear part is stable with a settling
/// time of a few dozen samples; the output sits near pH 7 at midrange.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SurrogatePreset {
    pub name: String,
    pub u_center: f64,
    pub u_steepness: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c_out: f64,
    pub y_offset: f64,
    pub noise_std: f64,
}

impl Default for SurrogatePreset {
    fn default() -> Self {
        SurrogatePreset {
            name: "ph-like-hammerstein-v1".into(),
            u_center: 15.35,
            u_steepness: 0.45,
            a1: 0.85,
            b1: 0.3,
            a2: 0.8,
            b2: 0.15,
            c_out: 2.2,
            y_offset: 7.0,
            noise_std: 0.01,
        }
    }
}

impl SurrogatePreset {
    /// One plant transition; state is (s1, s2).
    fn step(&self, s: (f64, f64), u: f64) -> (f64, f64) {
        let g = ((u - self.u_center) / self.u_steepness).tanh();
        (self.a1 * s.0 + self.b1 * g, self.a2 * s.1 + self.b2 * s.0)
    }

    fn output(&self, s: (f64, f64)) -> f64 {
        self.y_offset + self.c_out * s.1
    }
}

/// Generates a reproducible dataset from the synthetic plant under MPRS
/// excitation.
pub fn generate_surrogate_data(
    preset: &SurrogatePreset,
    input: &MprsSpec,
    t: usize,
    sample_time: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = mprs_signal(input, t, &mut rng);
    let mut s = (0.0, 0.0);
    let mut y = Vec::with_capacity(t);
    for &uk in &u {
        use rand_distr::StandardNormal;
        let noise: f64 = rng.sample(StandardNormal);
        y.push(preset.output(s) + preset.noise_std * noise);
        s = preset.step(s, uk);
    }
    Dataset {
        u,
        y,
        sample_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_deterministic() {
        let p = SurrogatePreset::default();
        let spec = MprsSpec::default();
        let d1 = generate_surrogate_data(&p, &spec, 2000, 25.0, 7);
        let d2 = generate_surrogate_data(&p, &spec, 2000, 25.0, 7);
        assert_eq!(d1.u, d2.u);
        assert_eq!(d1.y, d2.y);
        let d3 = generate_surrogate_data(&p, &spec, 2000, 25.0, 8);
        assert_ne!(d1.y, d3.y);
    }

    #[test]
    fn surrogate_constant_input_settles() {
        let p = SurrogatePreset {
            noise_std: 0.0,
            ..Default::default()
        };
        let spec = MprsSpec {
            levels: 1,
            ..Default::default()
        };
        let d = generate_surrogate_data(&p, &spec, 800, 25.0, 1);
        assert!(d.u.iter().all(|&u| u == d.u[0]));
        let tail: Vec<f64> = d.y[700..].to_vec();
        let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - tail.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-6, "output spread {spread}");
        assert!((d.y[799] - 7.0).abs() < 0.5, "settles near pH 7");
    }

    #[test]
    fn mprs_level_one_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MprsSpec {
            levels: 1,
            min: 2.0,
            max: 4.0,
            hold: 5,
        };
        let s = mprs_signal(&spec, 100, &mut rng);
        assert!(s.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn esn_realizable_self_consistency() {
        // Data generated by an ESN, trained with the same seed/order: the
        // reservoir matches exactly and ridge recovers the readout, so the
        // free-run fit is essentially perfect.
        let cfg = EsnTrainConfig {
            n_s: 3,
            seed: 11,
            ridge_lambda: 1e-9,
            ..Default::default()
        };
        let (wx, wu, wxy) = build_reservoir(&cfg);
        let wy_true = DMatrix::from_row_slice(1, 3, &[0.4, -0.3, 0.25]);
        let gen = EsnModel {
            wx,
            wu,
            wxy,
            wy: wy_true.clone(),
            kind: SigmoidKind::Tanh,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u = mprs_signal(
            &MprsSpec {
                levels: 9,
                min: -1.0,
                max: 1.0,
                hold: 7,
            },
            4000,
            &mut rng,
        );
        let y = simulate_esn(&gen, &u);
        let data = Dataset {
            u,
            y,
            sample_time: 1.0,
        };
        let (model, fit) = train_esn(&data, &cfg).unwrap();
        assert!(fit >= 99.0, "fit = {fit}");
        assert!((&model.wy - &wy_true).amax() < 1e-3);
    }

    #[test]
    fn esn_huge_ridge_kills_readout() {
        let cfg = EsnTrainConfig {
            n_s: 3,
            seed: 5,
            ridge_lambda: 1e12,
            ..Default::default()
        };
        let preset = SurrogatePreset::default();
        let data = generate_surrogate_data(&preset, &MprsSpec::default(), 3000, 25.0, 2);
        let scaled = Scaling::fit(&data).normalize(&data);
        let (model, fit) = train_esn(&scaled, &cfg).unwrap();
        assert!(model.wy.amax() < 1e-6);
        assert!(fit <= 0.0, "fit = {fit}");
    }

    #[test]
    fn esn_fits_surrogate_reasonably() {
        let preset = SurrogatePreset::default();
        let data = generate_surrogate_data(&preset, &MprsSpec::default(), 30_000, 25.0, 1);
        let scaling = Scaling::fit(&data);
        let normalized = scaling.normalize(&data);
        let (_, fit, _) = train_esn_restarts(&normalized, &EsnTrainConfig::default(), 8).unwrap();
        assert!(fit > 60.0, "fit = {fit}");
    }

    #[test]
    fn esn_too_short_dataset_rejected() {
        let data = Dataset {
            u: vec![0.0; 20],
            y: vec![0.0; 20],
            sample_time: 1.0,
        };
        assert!(matches!(
            train_esn(&data, &EsnTrainConfig::default()),
            Err(VerifyError::InvalidInput(_))
        ));
    }
}
