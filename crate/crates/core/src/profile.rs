//! Per-layer model profiles and the regression curves fitted to them.
//!
//! A [`ModelProfile`] records, for every possible cut-layer `l` in `1..=L`,
//! the size of the client-side model, the sample-wise forward FLOPs of the
//! client-side model and the size of the smashed data crossing the cut.
//! [`fit_curves`] reduces it to five parameters:
//!
//! | quantity | model |
//! |---|---|
//! | client model size | `alpha * l^2` |
//! | client training load (FP + BP) | `beta * l * (1 + kappa)` |
//! | backward / forward cost | `kappa` |
//! | smashed-data size | `gamma1 / (l + gamma2)` |
//!
//! Layers are indexed from 1; a cut at `l` keeps layers `1..=l` on the client.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Curve, Error, Result};
use crate::tolerances::{GAMMA2_RANGE_FACTOR, GOLDEN_ABS};

/// Ground-truth per-layer measurements of an `L`-layer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub layer_count: usize,
    /// `|w^C|` in bits when cutting at layer `l` (entry `l - 1`).
    pub client_model_bits: Vec<f64>,
    /// Sample-wise forward FLOPs of the client-side model when cutting at `l`.
    pub client_flops_fwd: Vec<f64>,
    /// Smashed-data bits per sample when cutting at `l`. The entry for `l = L`
    /// is ignored: nothing crosses the cut when the whole model is local.
    pub smashed_bits: Vec<f64>,
    #[serde(with = "integral")]
    pub total_model_bits: f64,
    /// Sample-wise forward plus backward FLOPs of the full model.
    #[serde(with = "integral")]
    pub total_flops: f64,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<()> {
        let l = self.layer_count;
        if l == 0 {
            return Err(Error::InvalidProfile("layer_count must be positive".into()));
        }
        for (name, arr) in [
            ("client_model_bits", &self.client_model_bits),
            ("client_flops_fwd", &self.client_flops_fwd),
            ("smashed_bits", &self.smashed_bits),
        ] {
            if arr.len() != l {
                return Err(Error::InvalidProfile(format!(
                    "{name} has {} entries, expected {l}",
                    arr.len()
                )));
            }
            if let Some(i) = arr.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "{name}[{}] = {} is not a finite nonnegative value",
                    i + 1,
                    arr[i]
                )));
            }
        }
        for (name, arr) in [
            ("client_model_bits", &self.client_model_bits),
            ("client_flops_fwd", &self.client_flops_fwd),
        ] {
            if arr.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidProfile(format!("{name} is all zeros")));
            }
            if let Some(i) = arr.windows(2).position(|w| w[1] < w[0]) {
                return Err(Error::InvalidProfile(format!(
                    "{name} decreases between layers {} and {}",
                    i + 1,
                    i + 2
                )));
            }
        }
        if l > 1 && self.smashed_bits[..l - 1].iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidProfile("smashed_bits is all zeros".into()));
        }
        for (name, v) in [
            ("total_model_bits", self.total_model_bits),
            ("total_flops", self.total_flops),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidProfile(format!("{name} must be positive")));
            }
        }
        let last = self.client_model_bits[l - 1];
        if (last - self.total_model_bits).abs() > 1e-9 * self.total_model_bits {
            return Err(Error::InvalidProfile(format!(
                "client_model_bits[L] = {last} differs from total_model_bits = {}",
                self.total_model_bits
            )));
        }
        Ok(())
    }
}

/// Fitted regression parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedCurves {
    /// Bits per layer squared.
    pub alpha: f64,
    /// FLOPs per layer.
    pub beta: f64,
    pub kappa: f64,
    /// Bits times layers.
    pub gamma1: f64,
    /// Layers.
    pub gamma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_flops: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_smashed: Option<f64>,
}

impl FittedCurves {
    /// Curves given directly rather than fitted; no determination coefficients.
    pub fn new(alpha: f64, beta: f64, kappa: f64, gamma1: f64, gamma2: f64) -> Self {
        FittedCurves {
            alpha,
            beta,
            kappa,
            gamma1,
            gamma2,
            r2_size: None,
            r2_flops: None,
            r2_smashed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (Curve::ModelSize, self.alpha >= 0.0, "alpha must be >= 0"),
            (Curve::TrainingLoad, self.beta > 0.0, "beta must be > 0"),
            (
                Curve::BackwardRatio,
                self.kappa >= 1.0,
                "kappa must be >= 1",
            ),
            (Curve::SmashedData, self.gamma1 > 0.0, "gamma1 must be > 0"),
            (
                Curve::SmashedData,
                self.gamma2 >= 0.0,
                "gamma2 must be >= 0",
            ),
        ];
        for (curve, ok, msg) in checks {
            if !ok {
                return Err(Error::FitFailure {
                    curve,
                    reason: msg.into(),
                });
            }
        }
        for v in [self.alpha, self.beta, self.kappa, self.gamma1, self.gamma2] {
            if !v.is_finite() {
                return Err(Error::Domain("curve parameters must be finite".into()));
            }
        }
        Ok(())
    }

    /// `|w^C|` for a cut at (real) layer `l`.
    pub fn model_bits(&self, l: f64) -> f64 {
        self.alpha * l * l
    }

    /// Sample-wise FP + BP FLOPs of `l` layers.
    pub fn training_flops(&self, l: f64) -> f64 {
        self.beta * (1.0 + self.kappa) * l
    }

    /// Smashed-data (and gradient) bits per sample at cut `l`.
    pub fn smashed_bits(&self, l: f64) -> f64 {
        self.gamma1 / (l + self.gamma2)
    }
}

/// Measured forward/backward durations of repeated training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimingPairs {
    pub samples: Vec<(f64, f64)>,
}

impl TimingPairs {
    pub fn new(samples: Vec<(f64, f64)>) -> Self {
        TimingPairs { samples }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidTiming("no samples".into()));
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|(f, b)| !(f.is_finite() && b.is_finite() && *f > 0.0 && *b > 0.0))
        {
            return Err(Error::InvalidTiming(format!(
                "sample {i} is not a pair of positive durations"
            )));
        }
        Ok(())
    }
}

/// Knobs of the `gamma2` search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Search `gamma2` over `[0, gamma2_range_factor * L]`.
    pub gamma2_range_factor: f64,
    pub golden_tolerance: f64,
    /// Coarse samples taken before golden-section refinement.
    pub coarse_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            gamma2_range_factor: GAMMA2_RANGE_FACTOR,
            golden_tolerance: GOLDEN_ABS,
            coarse_points: 64,
        }
    }
}

pub fn fit_curves(profile: &ModelProfile, timing: &TimingPairs) -> Result<FittedCurves> {
    fit_curves_with(profile, timing, &FitOptions::default())
}

pub fn fit_curves_with(
    profile: &ModelProfile,
    timing: &TimingPairs,
    opts: &FitOptions,
) -> Result<FittedCurves> {
    profile.validate()?;
    timing.validate()?;
    let n = profile.layer_count;
    let layers: Vec<f64> = (1..=n).map(|l| l as f64).collect();

    let kappa = fit_kappa(timing)?;

    // alpha: least squares of y against l^2 through the origin.
    let num: f64 = layers
        .iter()
        .zip(&profile.client_model_bits)
        .map(|(l, y)| l * l * y)
        .sum();
    let den: f64 = layers.iter().map(|l| l.powi(4)).sum();
    let alpha = (num / den).max(0.0);
    if !alpha.is_finite() {
        return Err(fit_err(Curve::ModelSize, "non-finite slope"));
    }
    let predicted: Vec<f64> = layers.iter().map(|l| alpha * l * l).collect();
    let r2_size = determination_coefficient(&profile.client_model_bits, &predicted)
        .map_err(|e| fit_err(Curve::ModelSize, &e.to_string()))?;

    // beta: F_tot = (1 + kappa) F^C against (1 + kappa) l; the factor cancels.
    let num: f64 = layers
        .iter()
        .zip(&profile.client_flops_fwd)
        .map(|(l, y)| l * y)
        .sum();
    let den: f64 = layers.iter().map(|l| l * l).sum();
    let beta = num / den;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(fit_err(Curve::TrainingLoad, "slope is not positive"));
    }
    let truth: Vec<f64> = profile
        .client_flops_fwd
        .iter()
        .map(|y| y * (1.0 + kappa))
        .collect();
    let predicted: Vec<f64> = layers.iter().map(|l| beta * (1.0 + kappa) * l).collect();
    let r2_flops = determination_coefficient(&truth, &predicted)
        .map_err(|e| fit_err(Curve::TrainingLoad, &e.to_string()))?;

    let (gamma1, gamma2, r2_smashed) = fit_hyperbola(profile, opts)?;

    let curves = FittedCurves {
        alpha,
        beta,
        kappa,
        gamma1,
        gamma2,
        r2_size: Some(r2_size),
        r2_flops: Some(r2_flops),
        r2_smashed: Some(r2_smashed),
    };
    curves.validate()?;
    Ok(curves)
}

fn fit_err(curve: Curve, reason: &str) -> Error {
    Error::FitFailure {
        curve,
        reason: reason.to_string(),
    }
}

/// Through-origin slope of backward against forward durations.
pub fn fit_kappa(timing: &TimingPairs) -> Result<f64> {
    timing.validate()?;
    let (num, den) = timing
        .samples
        .iter()
        .fold((0.0, 0.0), |(n, d), (fp, bp)| (n + fp * bp, d + fp * fp));
    let kappa = num / den;
    if !kappa.is_finite() {
        return Err(fit_err(Curve::BackwardRatio, "non-finite slope"));
    }
    if kappa < 1.0 {
        return Err(fit_err(
            Curve::BackwardRatio,
            &format!("backward/forward ratio {kappa} is below 1"),
        ));
    }
    Ok(kappa)
}

/// Closed-form `gamma1` for a fixed `gamma2`, and the resulting residual sum.
fn hyperbola_sse(points: &[(f64, f64)], gamma2: f64) -> (f64, f64) {
    let (su, uu) = points.iter().fold((0.0, 0.0), |(su, uu), (l, s)| {
        let u = 1.0 / (l + gamma2);
        (su + s * u, uu + u * u)
    });
    let gamma1 = su / uu;
    let sse = points
        .iter()
        .map(|(l, s)| {
            let r = s - gamma1 / (l + gamma2);
            r * r
        })
        .sum();
    (gamma1, sse)
}

/// Sign-carrying derivative of the profiled residual sum with respect to `gamma2`.
fn hyperbola_slope(points: &[(f64, f64)], gamma2: f64) -> f64 {
    let (gamma1, _) = hyperbola_sse(points, gamma2);
    let s: f64 = points
        .iter()
        .map(|(l, s)| {
            let x = l + gamma2;
            (s - gamma1 / x) / (x * x)
        })
        .sum();
    2.0 * gamma1 * s
}

fn fit_hyperbola(profile: &ModelProfile, opts: &FitOptions) -> Result<(f64, f64, f64)> {
    let n = profile.layer_count;
    // The last layer carries no smashed data; fit the split branch only.
    let points: Vec<(f64, f64)> = (1..n)
        .map(|l| (l as f64, profile.smashed_bits[l - 1]))
        .collect();
    if points.len() < 2 {
        return Err(fit_err(
            Curve::SmashedData,
            "needs at least three layers to fit two parameters",
        ));
    }

    let hi = opts.gamma2_range_factor * n as f64;
    let steps = opts.coarse_points.max(3);
    let grid: Vec<f64> = (0..=steps).map(|i| hi * i as f64 / steps as f64).collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| {
            hyperbola_sse(&points, *a.1)
                .1
                .total_cmp(&hyperbola_sse(&points, *b.1).1)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(steps)];

    // Golden-section on the bracket around the best coarse sample.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = hyperbola_sse(&points, c).1;
    let mut fd = hyperbola_sse(&points, d).1;
    while (b - a).abs() > opts.golden_tolerance {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = hyperbola_sse(&points, c).1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = hyperbola_sse(&points, d).1;
        }
    }
    let mut gamma2 = 0.5 * (a + b);

    // Polish on the sign of the derivative; golden-section alone stalls where
    // the residual sum is flat to machine precision.
    let pad = 2.0 * opts.golden_tolerance;
    let (mut lo, mut up) = ((a - pad).max(0.0), (b + pad).min(hi));
    let (slo, sup) = (hyperbola_slope(&points, lo), hyperbola_slope(&points, up));
    if slo < 0.0 && sup > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if mid <= lo || mid >= up {
                break;
            }
            if hyperbola_slope(&points, mid) < 0.0 {
                lo = mid;
            } else {
                up = mid;
            }
        }
        gamma2 = 0.5 * (lo + up);
    } else if lo == 0.0 && slo >= 0.0 {
        gamma2 = 0.0;
    }

    let (gamma1, _) = hyperbola_sse(&points, gamma2);
    if !(gamma1.is_finite() && gamma1 > 0.0) {
        return Err(fit_err(Curve::SmashedData, "gamma1 is not positive"));
    }
    let truth: Vec<f64> = points.iter().map(|p| p.1).collect();
    let predicted: Vec<f64> = points.iter().map(|(l, _)| gamma1 / (l + gamma2)).collect();
    let r2 = determination_coefficient(&truth, &predicted)
        .map_err(|e| fit_err(Curve::SmashedData, &e.to_string()))?;
    Ok((gamma1, gamma2, r2))
}

/// `1 - SS_res / SS_tot` with the mean of `truth` as the baseline.
pub fn determination_coefficient(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "truth has {} values, predicted has {}",
            truth.len(),
            predicted.len()
        )));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR);
    }
    let ss_res: f64 = truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Parameters of a synthetic profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub layer_count: usize,
    /// Half-width of the uniform multiplicative noise, e.g. `0.1` for ±10%.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl SynthesisSpec {
    /// The parameters behind the bundled 59-layer profile.
    pub fn effnetv2_like(seed: u64) -> Self {
        SynthesisSpec {
            alpha: 4.6e4,
            beta: 4.4e8,
            kappa: 2.0,
            gamma1: 4.2e6,
            gamma2: 2.0,
            layer_count: 59,
            noise_amplitude: 0.1,
            seed,
        }
    }

    pub fn curves(&self) -> FittedCurves {
        FittedCurves::new(self.alpha, self.beta, self.kappa, self.gamma1, self.gamma2)
    }
}

/// Generates a profile that follows the three curves up to bounded
/// multiplicative noise. Monotone arrays are repaired with a running maximum.
pub fn synthesize_profile(spec: &SynthesisSpec) -> Result<ModelProfile> {
    spec.curves()
        .validate()
        .map_err(|e| Error::Domain(format!("synthesis parameters: {e}")))?;
    if spec.layer_count == 0 {
        return Err(Error::Domain("layer_count must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.noise_amplitude) {
        return Err(Error::Domain("noise amplitude must lie in [0, 1)".into()));
    }
    let n = spec.layer_count;
    let amp = spec.noise_amplitude;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise = move || {
        if amp == 0.0 {
            1.0
        } else {
            1.0 + rng.gen_range(-amp..=amp)
        }
    };

    let mut model = Vec::with_capacity(n);
    let mut flops = Vec::with_capacity(n);
    let mut smashed = Vec::with_capacity(n);
    let (mut max_model, mut max_flops) = (0.0f64, 0.0f64);
    for l in 1..=n {
        let x = l as f64;
        max_model = max_model.max(spec.alpha * x * x * noise());
        max_flops = max_flops.max(spec.beta * x * noise());
        model.push(max_model);
        flops.push(max_flops);
        let s = spec.gamma1 / (x + spec.gamma2) * noise();
        smashed.push(if l == n { 0.0 } else { s });
    }
    let total_model_bits = model[n - 1];
    let total_flops = flops[n - 1] * (1.0 + spec.kappa);
    Ok(ModelProfile {
        layer_count: n,
        client_model_bits: model,
        client_flops_fwd: flops,
        smashed_bits: smashed,
        total_model_bits,
        total_flops,
    })
}

/// Synthetic forward/backward timings with backward = `kappa` x forward.
pub fn synthesize_timing(
    kappa: f64,
    samples: usize,
    mean_fp_seconds: f64,
    noise_amplitude: f64,
    seed: u64,
) -> Result<TimingPairs> {
    if !(kappa >= 1.0 && mean_fp_seconds > 0.0 && samples > 0) {
        return Err(Error::Domain("timing synthesis parameters".into()));
    }
    if !(0.0..1.0).contains(&noise_amplitude) {
        return Err(Error::Domain("noise amplitude must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng| {
        if noise_amplitude == 0.0 {
            1.0
        } else {
            1.0 + rng.gen_range(-noise_amplitude..=noise_amplitude)
        }
    };
    let pairs = (0..samples)
        .map(|_| {
            let fp = mean_fp_seconds * jitter(&mut rng);
            let bp = kappa * fp * jitter(&mut rng);
            (fp, bp)
        })
        .collect();
    Ok(TimingPairs::new(pairs))
}

/// Writes whole-valued floats as JSON integers.
mod integral {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            s.serialize_i64(*v as i64)
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}
