//! Reverse processes: ancestral sampling, deterministic DDIM (η = 0), the
//! partial reverse process started from pure noise, noise-then-denoise
//! translation, and paired sampling from a shared initial noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoisePredictor;
use crate::rng::normal_matrix;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::train::forward_perturb;

pub const DEFAULT_DDIM_STEPS: usize = 40;
pub const DEFAULT_EDIT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ancestral,
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(Self::Ancestral),
            "ddim" => Ok(Self::Ddim),
            other => Err(Error::Parameter(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// DDIM sub-sequence length; ignored by the ancestral sampler.
    pub num_steps: usize,
    /// First timestep of the reverse chain; `None` means the full horizon.
    pub start_t: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            num_steps: DEFAULT_DDIM_STEPS,
            start_t: None,
            seed: 0,
        }
    }
}

impl SamplerSpec {
    pub fn ddim(num_steps: usize, seed: u64) -> Self {
        Self {
            kind: SamplerKind::Ddim,
            num_steps,
            start_t: None,
            seed,
        }
    }

    pub fn start(&self, schedule: &NoiseSchedule) -> usize {
        self.start_t.unwrap_or(schedule.horizon())
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let start = self.start(schedule);
        schedule
            .check(start)
            .map_err(|_| Error::Parameter(format!("start_t {start} outside 1..={}", schedule.horizon())))?;
        if self.kind == SamplerKind::Ddim && (self.num_steps == 0 || self.num_steps > schedule.horizon()) {
            return Err(Error::Parameter(format!(
                "ddim needs 1..={} steps, got {}",
                schedule.horizon(),
                self.num_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationSpec {
    /// Editing depth as a fraction of the horizon.
    pub t0_frac: f64,
    pub sampler: SamplerSpec,
}

impl Default for TranslationSpec {
    fn default() -> Self {
        Self {
            t0_frac: DEFAULT_EDIT_FRACTION,
            sampler: SamplerSpec::default(),
        }
    }
}

/// Evenly spaced decreasing timesteps from `start` to 1, both included,
/// at most `steps` long (shorter when `start < steps`).
pub fn ddim_timesteps(start: usize, steps: usize) -> Vec<usize> {
    if steps <= 1 || start == 1 {
        return vec![start];
    }
    let span = (start - 1) as f64;
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| start - (span * i as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

fn predict_uniform<M: NoisePredictor + ?Sized>(model: &M, x: &Tensor, t: usize) -> Result<Tensor> {
    model.predict_noise(x, &vec![t; x.rows()])
}

/// `x_{t-1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + √β_t·z`, with no noise at `t = 1`.
pub fn ancestral_step<M: NoisePredictor + ?Sized, R: Rng>(
    model: &M,
    x_t: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    schedule.check(t)?;
    let eps = predict_uniform(model, x_t, t)?;
    Ok(ancestral_update(x_t, &eps, t, schedule, rng))
}

fn ancestral_update<R: Rng>(x_t: &Tensor, eps: &Tensor, t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Tensor {
    let (beta, alpha, ab) = (schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t));
    let coef = beta / (1.0 - ab).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let sigma = beta.sqrt();
    let mut out = x_t.clone();
    for (o, e) in out.values_mut().iter_mut().zip(eps.values()) {
        *o = inv * (*o - coef * e);
        if t > 1 {
            let z: f64 = StandardNormal.sample(rng);
            *o += sigma * z;
        }
    }
    out
}

/// Deterministic update from `t` to `t_prev` using the predicted noise;
/// `t_prev = 0` returns the clean-sample estimate.
pub fn ddim_update(x_t: &Tensor, eps: &Tensor, t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
    if x_t.shape() != eps.shape() {
        return Err(Error::dims("ddim_update", x_t.shape(), eps.shape()));
    }
    let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (s_prev, n_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let values = x_t
        .values()
        .iter()
        .zip(eps.values())
        .map(|(&x, &e)| {
            let x0 = (x - n * e) / s;
            s_prev * x0 + n_prev * e
        })
        .collect();
    Tensor::new(x_t.shape().to_vec(), values)
}

pub fn ddim_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check(t)?;
    if t_prev > t {
        return Err(Error::Parameter(format!("ddim step must not go up: {t} -> {t_prev}")));
    }
    if t_prev == t {
        return Ok(x_t.clone());
    }
    let eps = predict_uniform(model, x_t, t)?;
    ddim_update(x_t, &eps, t, t_prev, schedule)
}

/// Runs the reverse chain from `x_start` at `start` down to a clean sample.
pub fn reverse_chain<M: NoisePredictor + ?Sized, R: Rng>(
    model: &M,
    x_start: Tensor,
    start: usize,
    spec: &SamplerSpec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    schedule.check(start)?;
    let mut x = x_start;
    match spec.kind {
        SamplerKind::Ddim => {
            let ts = ddim_timesteps(start, spec.num_steps);
            for (i, &t) in ts.iter().enumerate() {
                let t_prev = ts.get(i + 1).copied().unwrap_or(0);
                x = ddim_step(model, &x, t, t_prev, schedule)?;
            }
        }
        SamplerKind::Ancestral => {
            for t in (1..=start).rev() {
                x = ancestral_step(model, &x, t, schedule, rng)?;
            }
        }
    }
    Ok(x)
}

/// Initial noise for `n` rows; shared by [`sample`] and [`aligned_pair`].
fn initial_noise(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    normal_matrix(rng, n, d)
}

/// `n` samples from standard-normal noise placed at `spec.start_t`.
pub fn sample<M: NoisePredictor + ?Sized>(model: &M, spec: &SamplerSpec, schedule: &NoiseSchedule, n: usize) -> Result<Tensor> {
    spec.validate(schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x_t = initial_noise(&mut rng, n, model.input_dim());
    reverse_chain(model, x_t, spec.start(schedule), spec, schedule, &mut rng)
}

/// Noises `x_src` to `round(t0_frac·T)` and denoises it with `model`.
pub fn sdedit_translate<M: NoisePredictor + ?Sized, R: Rng>(
    model: &M,
    x_src: &Tensor,
    spec: &TranslationSpec,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&spec.t0_frac) {
        return Err(Error::Parameter(format!("t0_frac must be in [0, 1], got {}", spec.t0_frac)));
    }
    if !x_src.is_finite() {
        return Err(Error::Contract("translation input contains non-finite values".into()));
    }
    if x_src.cols() != model.input_dim() {
        return Err(Error::dims("sdedit_translate", x_src.shape(), &[x_src.rows(), model.input_dim()]));
    }
    let t0 = (spec.t0_frac * schedule.horizon() as f64).round() as usize;
    if t0 == 0 {
        return Ok(x_src.clone());
    }
    let n = x_src.rows();
    let eps = normal_matrix(rng, n, x_src.cols());
    let x_t0 = forward_perturb(x_src, &vec![t0; n], &eps, schedule)?;
    let chain = SamplerSpec {
        start_t: Some(t0),
        ..spec.sampler
    };
    if chain.kind == SamplerKind::Ddim && chain.num_steps == 0 {
        return Err(Error::Parameter("ddim needs at least one step".into()));
    }
    reverse_chain(model, x_t0, t0, &chain, schedule, rng)
}

/// Pushes the same initial noise through both models' deterministic
/// samplers.
pub fn aligned_pair<A: NoisePredictor + ?Sized, B: NoisePredictor + ?Sized>(
    src: &A,
    trg: &B,
    spec: &SamplerSpec,
    schedule: &NoiseSchedule,
    n: usize,
) -> Result<(Tensor, Tensor)> {
    if src.input_dim() != trg.input_dim() {
        return Err(Error::dims("aligned_pair", &[src.input_dim()], &[trg.input_dim()]));
    }
    let spec = SamplerSpec {
        kind: SamplerKind::Ddim,
        ..*spec
    };
    Ok((sample(src, &spec, schedule, n)?, sample(trg, &spec, schedule, n)?))
}
