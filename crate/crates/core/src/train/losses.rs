//! Diffusion, teacher-matching and pure-noise losses.
//!
//! Every loss is a per-element mean of row-weighted squared errors, so a
//! zero predictor against unit-normal noise scores about 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DenoiserModel, TracedPredictor};
use crate::rng::{normal_matrix, uniform_timesteps, Stream, Streams};
use crate::schedule::{NoiseSchedule, WeightingScheme};
use crate::tensor::{Tape, Tensor, Var};

/// Weights of the two teacher-matching terms and their SNR exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdftConfig {
    pub lambda_distill: f64,
    pub lambda_aux: f64,
    pub gamma_distill: f64,
    pub gamma_aux: f64,
    #[serde(default = "default_k")]
    pub k: f64,
}

fn default_k() -> f64 {
    1.0
}

impl Default for SdftConfig {
    fn default() -> Self {
        Self::low_gamma()
    }
}

impl SdftConfig {
    /// λ = 0.1 / 0.1, γ = 3 / 3.
    pub fn low_gamma() -> Self {
        Self {
            lambda_distill: 0.1,
            lambda_aux: 0.1,
            gamma_distill: 3.0,
            gamma_aux: 3.0,
            k: 1.0,
        }
    }

    /// λ = 0.1 / 0.3, γ = 50 / 50.
    pub fn high_gamma() -> Self {
        Self {
            lambda_distill: 0.1,
            lambda_aux: 0.3,
            gamma_distill: 50.0,
            gamma_aux: 50.0,
            k: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_distill", self.lambda_distill),
            ("lambda_aux", self.lambda_aux),
            ("gamma_distill", self.gamma_distill),
            ("gamma_aux", self.gamma_aux),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.k.is_finite() || self.k <= 0.0 {
            return Err(Error::Parameter(format!("k must be finite and > 0, got {}", self.k)));
        }
        Ok(())
    }

    pub fn distill_scheme(&self) -> Result<WeightingScheme> {
        WeightingScheme::new(crate::schedule::WeightKind::Sdft, self.k, self.gamma_distill)
    }

    pub fn aux_scheme(&self) -> Result<WeightingScheme> {
        WeightingScheme::new(crate::schedule::WeightKind::Sdft, self.k, self.gamma_aux)
    }
}

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`, one timestep per row.
pub fn forward_perturb(
    x0: &Tensor,
    timesteps: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::dims("forward_perturb", x0.shape(), eps.shape()));
    }
    if x0.rows() != timesteps.len() {
        return Err(Error::dims("forward_perturb", x0.shape(), &[timesteps.len()]));
    }
    let cols = x0.cols();
    let mut out = Vec::with_capacity(x0.len());
    for (r, &t) in timesteps.iter().enumerate() {
        schedule.check(t)?;
        let ab = schedule.alpha_bar(t);
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        for c in r * cols..(r + 1) * cols {
            out.push(signal * x0.values()[c] + noise * eps.values()[c]);
        }
    }
    Tensor::new(x0.shape().to_vec(), out)
}

fn coefficients(scheme: &WeightingScheme, schedule: &NoiseSchedule, ts: &[usize]) -> Result<Vec<f64>> {
    ts.iter().map(|&t| scheme.weight(schedule, t)).collect()
}

/// Weighted ε-prediction error on the data batch `x0`, drawing timesteps and
/// noise from the diffusion substreams.
pub fn loss_diffusion<P: TracedPredictor>(
    tape: &mut Tape,
    model: &P,
    x0: &Tensor,
    schedule: &NoiseSchedule,
    scheme: &WeightingScheme,
    streams: &mut Streams,
) -> Result<Var> {
    let n = x0.rows();
    if n == 0 || x0.is_empty() {
        return Err(Error::Contract("loss_diffusion on an empty batch".into()));
    }
    let ts = uniform_timesteps(streams.get(Stream::DiffusionT), n, schedule.horizon());
    let eps = normal_matrix(streams.get(Stream::DiffusionEps), n, x0.cols());
    let x_t = forward_perturb(x0, &ts, &eps, schedule)?;
    let pred = model.predict(tape, &x_t, &ts)?;
    let target = tape.constant(eps);
    let w = coefficients(scheme, schedule, &ts)?;
    tape.weighted_mean_squared(pred, target, &w)
}

fn check_pair<P: TracedPredictor>(teacher: &DenoiserModel, student: &P) -> Result<()> {
    if !teacher.is_frozen() {
        return Err(Error::Contract("teacher model must be frozen".into()));
    }
    if teacher.input_dim() != student.input_dim() {
        return Err(Error::dims(
            "distillation",
            &[teacher.input_dim()],
            &[student.input_dim()],
        ));
    }
    Ok(())
}

fn matching_loss<P: TracedPredictor>(
    tape: &mut Tape,
    teacher: &DenoiserModel,
    student: &P,
    x: &Tensor,
    ts: &[usize],
    scheme: &WeightingScheme,
    schedule: &NoiseSchedule,
) -> Result<Var> {
    let w = coefficients(scheme, schedule, ts)?;
    let target = tape.constant(teacher.predict_noise(x, ts)?);
    let pred = student.predict(tape, x, ts)?;
    tape.weighted_mean_squared(pred, target, &w)
}

/// Matches the student to the frozen teacher on noised target-domain data.
pub fn loss_distill<P: TracedPredictor>(
    tape: &mut Tape,
    teacher: &DenoiserModel,
    student: &P,
    x0: &Tensor,
    schedule: &NoiseSchedule,
    cfg: &SdftConfig,
    streams: &mut Streams,
) -> Result<Var> {
    check_pair(teacher, student)?;
    let n = x0.rows();
    if n == 0 || x0.is_empty() {
        return Err(Error::Contract("loss_distill on an empty batch".into()));
    }
    let ts = uniform_timesteps(streams.get(Stream::DistillT), n, schedule.horizon());
    let eps = normal_matrix(streams.get(Stream::DistillEps), n, x0.cols());
    let x_t = forward_perturb(x0, &ts, &eps, schedule)?;
    matching_loss(tape, teacher, student, &x_t, &ts, &cfg.distill_scheme()?, schedule)
}

/// Matches the student to the teacher on pure Gaussian inputs at random
/// timesteps; `n` fresh inputs per call.
pub fn loss_aux<P: TracedPredictor>(
    tape: &mut Tape,
    teacher: &DenoiserModel,
    student: &P,
    n: usize,
    schedule: &NoiseSchedule,
    cfg: &SdftConfig,
    streams: &mut Streams,
) -> Result<Var> {
    check_pair(teacher, student)?;
    if n == 0 {
        return Err(Error::Contract("loss_aux with zero rows".into()));
    }
    let ts = uniform_timesteps(streams.get(Stream::AuxT), n, schedule.horizon());
    let x_noise = normal_matrix(streams.get(Stream::AuxNoise), n, student.input_dim());
    matching_loss(tape, teacher, student, &x_noise, &ts, &cfg.aux_scheme()?, schedule)
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub diffusion: f64,
    pub distill: f64,
    pub aux: f64,
    pub total: f64,
}

/// `L_diffusion + λ_distill·L_distill + λ_aux·L_aux`. Terms with λ = 0 are
/// skipped entirely, leaving their substreams untouched.
pub fn loss_total<P: TracedPredictor>(
    tape: &mut Tape,
    teacher: &DenoiserModel,
    student: &P,
    x0: &Tensor,
    schedule: &NoiseSchedule,
    cfg: &SdftConfig,
    streams: &mut Streams,
) -> Result<(Var, LossParts)> {
    cfg.validate()?;
    let diffusion = loss_diffusion(tape, student, x0, schedule, &WeightingScheme::simple(), streams)?;
    let mut parts = LossParts {
        diffusion: tape.value(diffusion).item(),
        ..LossParts::default()
    };
    let mut total = diffusion;
    if cfg.lambda_distill > 0.0 {
        let d = loss_distill(tape, teacher, student, x0, schedule, cfg, streams)?;
        parts.distill = tape.value(d).item();
        let d = tape.scale(d, cfg.lambda_distill)?;
        total = tape.add(total, d)?;
    }
    if cfg.lambda_aux > 0.0 {
        let a = loss_aux(tape, teacher, student, x0.rows(), schedule, cfg, streams)?;
        parts.aux = tape.value(a).item();
        let a = tape.scale(a, cfg.lambda_aux)?;
        total = tape.add(total, a)?;
    }
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

/// Draws a training minibatch (with replacement) from the data substream.
pub fn sample_indices<R: Rng>(rng: &mut R, batch: usize, len: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::schedule::{ScheduleParams, WeightKind};

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleParams::default()).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 2,
            hidden_dims: vec![16],
            time_embed_dim: 4,
        }
    }

    fn ring_batch(n: usize) -> Tensor {
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = i as f64 * 0.7;
                [a.cos(), a.sin()]
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    /// Predicts the exact noise by inverting the forward process with the
    /// known clean batch.
    struct Oracle<'a> {
        x0: &'a Tensor,
        schedule: &'a NoiseSchedule,
    }

    impl TracedPredictor for Oracle<'_> {
        fn input_dim(&self) -> usize {
            2
        }

        fn predict(&self, tape: &mut Tape, x: &Tensor, ts: &[usize]) -> Result<Var> {
            let mut out = Vec::new();
            for (r, &t) in ts.iter().enumerate() {
                let ab = self.schedule.alpha_bar(t);
                for c in 0..2 {
                    out.push((x.row(r)[c] - ab.sqrt() * self.x0.row(r)[c]) / (1.0 - ab).sqrt());
                }
            }
            Ok(tape.constant(Tensor::matrix(ts.len(), 2, out)?))
        }
    }

    struct Zero;

    impl TracedPredictor for Zero {
        fn input_dim(&self) -> usize {
            2
        }

        fn predict(&self, tape: &mut Tape, x: &Tensor, _: &[usize]) -> Result<Var> {
            Ok(tape.constant(Tensor::zeros(x.shape())))
        }
    }

    #[test]
    fn perturb_without_noise_scales_signal() {
        let s = schedule();
        let x0 = ring_batch(4);
        let ts = [1, 10, 500, 1000];
        let x_t = forward_perturb(&x0, &ts, &Tensor::zeros(&[4, 2]), &s).unwrap();
        for (r, &t) in ts.iter().enumerate() {
            for c in 0..2 {
                assert_eq!(x_t.row(r)[c], s.alpha_bar(t).sqrt() * x0.row(r)[c]);
            }
        }
    }

    #[test]
    fn perturb_at_first_step_stays_close() {
        let s = schedule();
        let x0 = ring_batch(3);
        let eps = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 1.5]).unwrap();
        let x_t = forward_perturb(&x0, &[1, 1, 1], &eps, &s).unwrap();
        let bound = (1.0 - s.alpha_bar(1)).sqrt();
        for i in 0..6 {
            let gap = (x_t.values()[i] - x0.values()[i]).abs();
            assert!(gap <= bound * eps.values()[i].abs() + 1e-4 * x0.values()[i].abs());
        }
    }

    #[test]
    fn perturb_shape_mismatch() {
        let s = schedule();
        let x0 = ring_batch(3);
        assert!(forward_perturb(&x0, &[1, 2, 3], &Tensor::zeros(&[2, 2]), &s).is_err());
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let s = schedule();
        let x0 = ring_batch(16);
        let mut tape = Tape::new();
        let oracle = Oracle { x0: &x0, schedule: &s };
        let l = loss_diffusion(&mut tape, &oracle, &x0, &s, &WeightingScheme::simple(), &mut Streams::new(1)).unwrap();
        assert!(tape.value(l).item() < 1e-20);
    }

    #[test]
    fn zero_predictor_scores_about_one() {
        let s = schedule();
        let x0 = ring_batch(20_000);
        let mut tape = Tape::new();
        let l = loss_diffusion(&mut tape, &Zero, &x0, &s, &WeightingScheme::simple(), &mut Streams::new(2)).unwrap();
        // Mean of 40k squared unit normals: sd of the mean ≈ √2/200.
        assert!((tape.value(l).item() - 1.0).abs() < 4.0 * 2f64.sqrt() / 200.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let s = schedule();
        let mut tape = Tape::new();
        let empty = Tensor::zeros(&[0, 2]);
        assert!(loss_diffusion(&mut tape, &Zero, &empty, &s, &WeightingScheme::simple(), &mut Streams::new(0)).is_err());
    }

    #[test]
    fn identical_models_have_zero_matching_loss() {
        let s = schedule();
        let base = DenoiserModel::init(tiny(), 4).unwrap();
        let teacher = base.clone_frozen();
        let mut tape = Tape::new();
        let student = base.trace(&mut tape);
        let cfg = SdftConfig::low_gamma();
        let mut streams = Streams::new(3);
        let x0 = ring_batch(32);
        let d = loss_distill(&mut tape, &teacher, &student, &x0, &s, &cfg, &mut streams).unwrap();
        let a = loss_aux(&mut tape, &teacher, &student, 32, &s, &cfg, &mut streams).unwrap();
        assert_eq!(tape.value(d).item(), 0.0);
        assert_eq!(tape.value(a).item(), 0.0);
    }

    #[test]
    fn teacher_must_be_frozen_and_compatible() {
        let s = schedule();
        let base = DenoiserModel::init(tiny(), 4).unwrap();
        let mut tape = Tape::new();
        let student = base.trace(&mut tape);
        let cfg = SdftConfig::low_gamma();
        let x0 = ring_batch(4);
        let err = loss_distill(&mut tape, &base, &student, &x0, &s, &cfg, &mut Streams::new(0));
        assert!(matches!(err, Err(Error::Contract(_))));

        let wide = DenoiserModel::init(
            ModelConfig {
                input_dim: 3,
                ..tiny()
            },
            1,
        )
        .unwrap()
        .clone_frozen();
        let err = loss_aux(&mut tape, &wide, &student, 4, &s, &cfg, &mut Streams::new(0));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn teacher_never_receives_gradients() {
        let s = schedule();
        let teacher = DenoiserModel::init(tiny(), 1).unwrap().clone_frozen();
        let student_model = DenoiserModel::init(tiny(), 2).unwrap();
        let mut tape = Tape::new();
        let traced_teacher = teacher.trace(&mut tape);
        let student = student_model.trace(&mut tape);
        let (total, _) = loss_total(&mut tape, &teacher, &student, &ring_batch(8), &s, &SdftConfig::high_gamma(), &mut Streams::new(5)).unwrap();
        tape.backward(total).unwrap();
        assert!(traced_teacher.params().iter().all(|&p| tape.grad(p).is_none()));
        assert!(student.params().iter().all(|&p| tape.grad(p).is_some()));
    }

    #[test]
    fn aux_is_deterministic_per_stream_state() {
        let s = schedule();
        let teacher = DenoiserModel::init(tiny(), 1).unwrap().clone_frozen();
        let student_model = DenoiserModel::init(tiny(), 2).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let student = student_model.trace(&mut tape);
            let l = loss_aux(&mut tape, &teacher, &student, 64, &s, &SdftConfig::low_gamma(), &mut Streams::new(8)).unwrap();
            tape.value(l).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn gamma_zero_distill_is_plain_matching_mse() {
        let s = schedule();
        let teacher = DenoiserModel::init(tiny(), 1).unwrap().clone_frozen();
        let student_model = DenoiserModel::init(tiny(), 2).unwrap();
        let x0 = ring_batch(32);
        let cfg = SdftConfig {
            gamma_distill: 0.0,
            ..SdftConfig::low_gamma()
        };
        let mut tape = Tape::new();
        let student = student_model.trace(&mut tape);
        let mut streams = Streams::new(6);
        let l = loss_distill(&mut tape, &teacher, &student, &x0, &s, &cfg, &mut streams.clone()).unwrap();

        // Replay the same draws by hand.
        let ts = uniform_timesteps(streams.get(Stream::DistillT), 32, 1000);
        let eps = normal_matrix(streams.get(Stream::DistillEps), 32, 2);
        let x_t = forward_perturb(&x0, &ts, &eps, &s).unwrap();
        let a = teacher.predict_noise(&x_t, &ts).unwrap();
        let b = student_model.predict_noise(&x_t, &ts).unwrap();
        let mse = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 64.0;
        assert!((tape.value(l).item() - mse).abs() <= 1e-15 * mse.max(1.0));
    }

    #[test]
    fn distill_weight_ratio_between_ends() {
        let s = schedule();
        let w = WeightingScheme::new(WeightKind::Sdft, 1.0, 3.0).unwrap();
        let ratio = w.weight(&s, 1).unwrap() / w.weight(&s, 1000).unwrap();
        let snr1 = s.alpha_bar(1) / (1.0 - s.alpha_bar(1));
        let snr_t = s.alpha_bar(1000) / (1.0 - s.alpha_bar(1000));
        let expect = ((1.0 + snr_t) / (1.0 + snr1)).powi(3);
        assert!((ratio - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn high_aux_gamma_silences_small_t_rows() {
        let s = schedule();
        let w = WeightingScheme::sdft(50.0).unwrap();
        for t in 1..=10 {
            assert!(w.weight(&s, t).unwrap() < 1e-6 * w.weight(&s, 1000).unwrap());
        }
    }

    #[test]
    fn total_is_linear_combination() {
        let parts = LossParts {
            diffusion: 1.0,
            distill: 2.0,
            aux: 3.0,
            total: 0.0,
        };
        let total = parts.diffusion + 0.1 * parts.distill + 0.3 * parts.aux;
        assert!((total - 2.1).abs() < 1e-12);

        let s = schedule();
        let teacher = DenoiserModel::init(tiny(), 1).unwrap().clone_frozen();
        let student_model = DenoiserModel::init(tiny(), 2).unwrap();
        let mut tape = Tape::new();
        let student = student_model.trace(&mut tape);
        let cfg = SdftConfig {
            lambda_aux: 0.3,
            ..SdftConfig::low_gamma()
        };
        let (_, p) = loss_total(&mut tape, &teacher, &student, &ring_batch(16), &s, &cfg, &mut Streams::new(1)).unwrap();
        assert!((p.total - (p.diffusion + 0.1 * p.distill + 0.3 * p.aux)).abs() < 1e-9);
    }

    #[test]
    fn presets_match_published_table() {
        let low = SdftConfig::low_gamma();
        assert_eq!((low.lambda_distill, low.lambda_aux, low.gamma_distill, low.gamma_aux), (0.1, 0.1, 3.0, 3.0));
        let high = SdftConfig::high_gamma();
        assert_eq!((high.lambda_distill, high.lambda_aux, high.gamma_distill, high.gamma_aux), (0.1, 0.3, 50.0, 50.0));
        assert!(SdftConfig { lambda_aux: -1.0, ..low }.validate().is_err());
        assert!(SdftConfig { gamma_distill: f64::NAN, ..low }.validate().is_err());
    }

    #[test]
    fn zero_lambdas_reduce_to_diffusion_bitwise() {
        let s = schedule();
        let teacher = DenoiserModel::init(tiny(), 1).unwrap().clone_frozen();
        let student_model = DenoiserModel::init(tiny(), 2).unwrap();
        let x0 = ring_batch(16);
        let cfg = SdftConfig {
            lambda_distill: 0.0,
            lambda_aux: 0.0,
            ..SdftConfig::low_gamma()
        };
        let mut tape = Tape::new();
        let student = student_model.trace(&mut tape);
        let (total, _) = loss_total(&mut tape, &teacher, &student, &x0, &s, &cfg, &mut Streams::new(4)).unwrap();
        let mut tape2 = Tape::new();
        let student2 = student_model.trace(&mut tape2);
        let d = loss_diffusion(&mut tape2, &student2, &x0, &s, &WeightingScheme::simple(), &mut Streams::new(4)).unwrap();
        assert_eq!(tape.value(total).item().to_bits(), tape2.value(d).item().to_bits());
    }
}
