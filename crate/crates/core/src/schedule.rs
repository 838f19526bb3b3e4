//! Discrete noise schedules and per-timestep loss weighting.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`. Index `t` of every table refers to the
//! same step, and `alpha_bar(0)` is defined as 1 for samplers that jump to the
//! clean sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleFamily {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Parameter(format!("unknown schedule family `{other}`"))),
        }
    }
}

/// Construction parameters; a schedule is a pure function of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub family: ScheduleFamily,
    pub horizon: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            family: ScheduleFamily::Linear,
            horizon: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    snr: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let t_max = params.horizon;
        if t_max == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        let beta = match params.family {
            ScheduleFamily::Linear => {
                let (b0, b1) = (params.beta_start, params.beta_end);
                if !(b0 > 0.0 && b0 <= b1 && b1 < 1.0) {
                    return Err(Error::Parameter(format!(
                        "linear schedule needs 0 < beta_start <= beta_end < 1, got {b0}..{b1}"
                    )));
                }
                if t_max == 1 {
                    vec![b0]
                } else {
                    let step = (b1 - b0) / (t_max - 1) as f64;
                    (0..t_max).map(|i| b0 + step * i as f64).collect()
                }
            }
            ScheduleFamily::Cosine => {
                let f = |t: f64| {
                    let x = (t / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=t_max)
                    .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(COSINE_MAX_BETA))
                    .collect()
            }
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let snr = alpha_bar.iter().map(|ab| ab / (1.0 - ab)).collect();
        let schedule = Self {
            params,
            beta,
            alpha,
            alpha_bar,
            snr,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// `make_schedule` with explicit arguments.
    pub fn make(family: ScheduleFamily, horizon: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleParams {
            family,
            horizon,
            beta_start,
            beta_end,
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("schedule violates: {what}")));
        if self.beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return bad("0 < beta < 1");
        }
        if self.alpha_bar.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return bad("0 < alpha_bar < 1");
        }
        if self.alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return bad("alpha_bar strictly decreasing");
        }
        Ok(())
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.horizon() {
            return Err(Error::TimestepRange {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn snr(&self, t: usize) -> Result<f64> {
        Ok(self.snr[self.check(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn snrs(&self) -> &[f64] {
        &self.snr
    }
}

/// SNR from a cumulative signal level.
pub fn snr_of(alpha_bar: f64) -> f64 {
    alpha_bar / (1.0 - alpha_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Plain ε-prediction error (the simple weight cancels the ELBO factor).
    Simple,
    /// Weight 1 on the raw squared error.
    ConstantOne,
    /// `1 / (k + SNR)^γ`
    P2,
    /// Same shape as P2, applied to teacher-matching terms.
    Sdft,
    /// `min(SNR, γ)`
    MinSnr,
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simple" => Self::Simple,
            "constant" | "constant_one" | "constant-one" => Self::ConstantOne,
            "p2" => Self::P2,
            "sdft" => Self::Sdft,
            "min_snr" | "min-snr" => Self::MinSnr,
            other => return Err(Error::Parameter(format!("unknown weighting scheme `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingScheme {
    pub kind: WeightKind,
    pub k: f64,
    pub gamma: f64,
}

impl WeightingScheme {
    pub fn new(kind: WeightKind, k: f64, gamma: f64) -> Result<Self> {
        let s = Self { kind, k, gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn simple() -> Self {
        Self {
            kind: WeightKind::Simple,
            k: 1.0,
            gamma: 0.0,
        }
    }

    pub fn sdft(gamma: f64) -> Result<Self> {
        Self::new(WeightKind::Sdft, 1.0, gamma)
    }

    /// Min-SNR clamp at 5.
    pub fn min_snr_5() -> Self {
        Self {
            kind: WeightKind::MinSnr,
            k: 1.0,
            gamma: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Parameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if matches!(self.kind, WeightKind::P2 | WeightKind::Sdft) && !(self.k > 0.0) {
            return Err(Error::Parameter(format!("k must be > 0, got {}", self.k)));
        }
        Ok(())
    }

    /// Effective coefficient multiplying the per-timestep squared error.
    pub fn weight(&self, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
        self.validate()?;
        let snr = schedule.snr(t)?;
        Ok(self.coefficient(snr))
    }

    /// Coefficient at a given SNR value.
    pub fn coefficient(&self, snr: f64) -> f64 {
        match self.kind {
            WeightKind::Simple | WeightKind::ConstantOne => 1.0,
            WeightKind::P2 | WeightKind::Sdft => (self.k + snr).powf(self.gamma).recip(),
            WeightKind::MinSnr => snr.min(self.gamma),
        }
    }

    /// Coefficients for every `t ∈ 1..=T`.
    pub fn curve(&self, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(schedule.snrs().iter().map(|&s| self.coefficient(s)).collect())
    }
}
