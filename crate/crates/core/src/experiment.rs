//! The desk-scale fine-tuning experiment.
//!
//! A source model is trained from scratch on the 8-mode unit ring, then
//! fine-tuned on the 3-mode radius-2 target three ways: naively, with
//! self-distillation, and with self-distillation minus the pure-noise term.
//! Each fine-tuned model is probed for angular coverage, SDEdit translation
//! of held-out source points at angles the target never shows, and
//! alignment with the source model under shared DDIM noise.

use std::f64::consts::PI;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RingSpec, ToyDataset};
use crate::error::{Error, Result};
use crate::metrics::{alignment, angular_coverage, faithfulness, Coverage, Faithfulness};
use crate::model::{DenoiserModel, ModelConfig};
use crate::sampler::{aligned_pair, sample, sdedit_translate, SamplerSpec, TranslationSpec, DEFAULT_DDIM_STEPS};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::tensor::Tensor;
use crate::train::{run_training, SdftConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleParams,
    pub source: RingSpec,
    pub source_points: usize,
    pub target_radius: f64,
    pub keep_modes: Vec<usize>,
    pub target_points: usize,
    pub source_iterations: usize,
    pub finetune_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub sdft: SdftConfig,
    /// Samples drawn per model, and held-out points translated.
    pub eval_samples: usize,
    pub capture_angle: f64,
    pub min_hits: usize,
    pub t0_frac: f64,
    pub ddim_steps: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelConfig::default(),
            schedule: ScheduleParams::default(),
            source: RingSpec::default(),
            source_points: 8000,
            target_radius: 2.0,
            keep_modes: vec![0, 1, 2],
            target_points: 600,
            source_iterations: 20_000,
            finetune_iterations: 8_000,
            batch_size: 64,
            learning_rate: 1e-3,
            finetune_learning_rate: 1e-3,
            sdft: SdftConfig::low_gamma(),
            eval_samples: 2000,
            capture_angle: PI / 8.0,
            min_hits: 5,
            t0_frac: 0.5,
            ddim_steps: DEFAULT_DDIM_STEPS,
        }
    }
}

/// Probe results for one fine-tuned model.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub coverage: Coverage,
    pub translation: Faithfulness,
    pub alignment: f64,
}

#[derive(Debug, Clone)]
pub struct DeskReport {
    pub source: Probe,
    pub naive: Probe,
    pub sdft: Probe,
    pub no_aux: Probe,
    pub seconds: f64,
}

impl DeskReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8} {:>8} {:>12} {:>12} {:>10}\n", "model", "coverage", "angle_med", "radius_med", "alignment");
        for (name, p) in [("source", &self.source), ("naive", &self.naive), ("sdft", &self.sdft), ("no_aux", &self.no_aux)] {
            out.push_str(&format!(
                "{name:<8} {:>8} {:>12.4} {:>12.4} {:>10.4}  {:?}\n",
                format!("{}/{}", hits(p), p.coverage.per_mode_counts.len()),
                p.translation.angle_median,
                p.translation.radius_median,
                p.alignment,
                p.coverage.per_mode_counts
            ));
        }
        out.push_str(&format!("elapsed {:.1}s\n", self.seconds));
        out
    }
}

/// Number of modes counted as hit.
pub fn hits(p: &Probe) -> usize {
    (p.coverage.coverage * p.coverage.per_mode_counts.len() as f64).round() as usize
}

/// Source points whose labels are outside `keep`, drawn from a fresh seed.
pub fn held_out_unseen(spec: RingSpec, keep: &[usize], n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let unseen = spec.n_modes - keep.iter().filter(|&&k| k < spec.n_modes).count();
    if unseen == 0 {
        return Err(Error::Parameter("every source mode is kept; no unseen angles".into()));
    }
    let per_mode = n.div_ceil(unseen);
    let ds = ToyDataset::ring(spec, per_mode * spec.n_modes, seed)?;
    Ok(ds
        .points
        .iter()
        .zip(&ds.labels)
        .filter(|(_, l)| !keep.contains(l))
        .map(|(p, _)| *p)
        .take(n)
        .collect())
}

fn to_points(t: &Tensor) -> Vec<[f64; 2]> {
    (0..t.rows()).map(|i| [t.row(i)[0], t.row(i)[1]]).collect()
}

fn probe(
    cfg: &DeskConfig,
    schedule: &NoiseSchedule,
    source_model: &DenoiserModel,
    model: &DenoiserModel,
    held_out: &Tensor,
) -> Result<Probe> {
    let modes = cfg.source.modes();
    let spec = SamplerSpec::ddim(cfg.ddim_steps, cfg.seed ^ 0x5a5a);
    let samples = to_points(&sample(model, &spec, schedule, cfg.eval_samples)?);
    let coverage = angular_coverage(&samples, &modes, cfg.capture_angle, cfg.min_hits)?;

    let translation_spec = TranslationSpec {
        t0_frac: cfg.t0_frac,
        sampler: SamplerSpec::ddim(cfg.ddim_steps, 0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5);
    let translated = sdedit_translate(model, held_out, &translation_spec, schedule, &mut rng)?;
    let translation = faithfulness(&to_points(held_out), &to_points(&translated))?;

    let (a, b) = aligned_pair(source_model, model, &spec, schedule, cfg.eval_samples)?;
    let alignment = alignment(&to_points(&a), &to_points(&b))?;
    Ok(Probe {
        coverage,
        translation,
        alignment,
    })
}

struct Setup {
    schedule: NoiseSchedule,
    source_data: ToyDataset,
    target_data: ToyDataset,
    held_out: Tensor,
}

impl Setup {
    fn new(cfg: &DeskConfig) -> Result<Self> {
        let held_out = held_out_unseen(cfg.source, &cfg.keep_modes, cfg.eval_samples, cfg.seed.wrapping_add(2))?;
        Ok(Self {
            schedule: NoiseSchedule::new(cfg.schedule)?,
            source_data: ToyDataset::ring(cfg.source, cfg.source_points, cfg.seed)?,
            target_data: ToyDataset::limited_target(
                cfg.source,
                cfg.target_radius,
                &cfg.keep_modes,
                cfg.target_points,
                cfg.seed.wrapping_add(1),
            )?,
            held_out: Tensor::from_rows(&held_out)?,
        })
    }
}

fn train_config(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size,
        learning_rate,
        seed,
        eval_every: (iterations / 4).max(1),
        ..TrainConfig::default()
    }
}

/// Trains the source model from scratch on the full ring.
pub fn train_source(cfg: &DeskConfig, mut log: impl FnMut(&str)) -> Result<DenoiserModel> {
    let setup = Setup::new(cfg)?;
    let train = train_config(cfg.source_iterations, cfg.batch_size, cfg.learning_rate, cfg.seed);
    let out = run_training(
        TrainMode::Scratch,
        None,
        &cfg.model,
        &setup.source_data,
        &setup.schedule,
        &cfg.sdft,
        &train,
        |_, r| {
            log(&format!("source it={} loss={:.5}", r.iteration, r.loss_total));
            Ok(())
        },
    )?;
    Ok(out.model)
}

/// Fine-tunes `source_model` three ways and probes all four models.
pub fn compare_finetunes(cfg: &DeskConfig, source_model: &DenoiserModel, mut log: impl FnMut(&str)) -> Result<DeskReport> {
    let start = Instant::now();
    let setup = Setup::new(cfg)?;
    let train = train_config(
        cfg.finetune_iterations,
        cfg.batch_size,
        cfg.finetune_learning_rate,
        cfg.seed.wrapping_add(10),
    );
    let mut finetune = |mode: TrainMode, sdft: &SdftConfig, name: &str| {
        run_training(
            mode,
            Some(source_model),
            &cfg.model,
            &setup.target_data,
            &setup.schedule,
            sdft,
            &train,
            |_, r| {
                log(&format!("{name} it={} loss={:.5}", r.iteration, r.loss_total));
                Ok(())
            },
        )
        .map(|o| o.model)
    };
    let naive = finetune(TrainMode::NaiveFinetune, &cfg.sdft, "naive")?;
    let sdft = finetune(TrainMode::Sdft, &cfg.sdft, "sdft")?;
    let no_aux_cfg = SdftConfig {
        lambda_aux: 0.0,
        ..cfg.sdft
    };
    let no_aux = finetune(TrainMode::Sdft, &no_aux_cfg, "no_aux")?;

    let probe = |m: &DenoiserModel| probe(cfg, &setup.schedule, source_model, m, &setup.held_out);
    Ok(DeskReport {
        source: probe(source_model)?,
        naive: probe(&naive)?,
        sdft: probe(&sdft)?,
        no_aux: probe(&no_aux)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every training and probe. `log` receives progress lines.
pub fn run_desk(cfg: &DeskConfig, mut log: impl FnMut(&str)) -> Result<DeskReport> {
    let start = Instant::now();
    let source_model = train_source(cfg, &mut log)?;
    let mut report = compare_finetunes(cfg, &source_model, log)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
