//! Training loops: from scratch, naive fine-tuning, and self-distilled
//! fine-tuning against a frozen copy of the source model.

use serde::{Deserialize, Serialize};

use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::model::{DenoiserModel, ModelConfig};
use crate::rng::{Stream, Streams};
use crate::schedule::{NoiseSchedule, WeightingScheme};
use crate::tensor::Tape;

pub mod adam;
pub mod losses;

pub use adam::{adam_step, AdamParams, AdamState};
pub use losses::{
    forward_perturb, loss_aux, loss_diffusion, loss_distill, loss_total, LossParts, SdftConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Scratch,
    #[serde(alias = "naive")]
    NaiveFinetune,
    Sdft,
}

impl TrainMode {
    pub fn tag(self) -> u8 {
        match self {
            TrainMode::Scratch => 0,
            TrainMode::NaiveFinetune => 1,
            TrainMode::Sdft => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(TrainMode::Scratch),
            1 => Some(TrainMode::NaiveFinetune),
            2 => Some(TrainMode::Sdft),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Scratch => "scratch",
            TrainMode::NaiveFinetune => "naive",
            TrainMode::Sdft => "sdft",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(TrainMode::Scratch),
            "naive" | "naive_finetune" | "naive-finetune" => Ok(TrainMode::NaiveFinetune),
            "sdft" => Ok(TrainMode::Sdft),
            other => Err(Error::Parameter(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Parameter(
                "iterations, batch_size and eval_every must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter("learning_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Loss components averaged over the iterations since the previous record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss_diffusion: f64,
    pub loss_distill: f64,
    pub loss_aux: f64,
    pub loss_total: f64,
}

pub const RECORD_HEADER: &str = "iteration,loss_diffusion,loss_distill,loss_aux,loss_total";

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.iteration, self.loss_diffusion, self.loss_distill, self.loss_aux, self.loss_total
        )
    }
}

pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut s = String::from(RECORD_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    pub records: Vec<TrainRecord>,
    /// The frozen teacher, for sdft runs.
    pub teacher: Option<DenoiserModel>,
}

/// Runs `train.iterations` optimizer steps. `on_record` sees the model and
/// the averaged losses every `eval_every` iterations and after the last one.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    mode: TrainMode,
    source: Option<&DenoiserModel>,
    model_config: &ModelConfig,
    dataset: &ToyDataset,
    schedule: &NoiseSchedule,
    sdft: &SdftConfig,
    train: &TrainConfig,
    mut on_record: impl FnMut(&DenoiserModel, &TrainRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    train.validate()?;
    sdft.validate()?;
    if dataset.is_empty() {
        return Err(Error::Parameter("training dataset is empty".into()));
    }
    let mut streams = Streams::new(train.seed);
    let (mut model, teacher) = match mode {
        TrainMode::Scratch => (
            DenoiserModel::init_with(model_config.clone(), streams.get(Stream::Init))?,
            None,
        ),
        TrainMode::NaiveFinetune | TrainMode::Sdft => {
            let src = source.ok_or_else(|| {
                Error::Parameter(format!("mode `{}` needs a source checkpoint", mode.name()))
            })?;
            let teacher = (mode == TrainMode::Sdft).then(|| src.clone_frozen());
            (src.clone_trainable(), teacher)
        }
    };
    let names: Vec<String> = (0..model.layers().len()).map(DenoiserModel::layer_name).collect();
    let mut adam_state = AdamState::new(model.layers());
    let hp = train.adam();
    let plain = WeightingScheme::simple();

    let mut records = Vec::new();
    let mut window = LossParts::default();
    let mut window_len = 0usize;
    for iteration in 1..=train.iterations {
        let idx = losses::sample_indices(streams.get(Stream::Data), train.batch_size, dataset.len());
        let x0 = dataset.batch(&idx);
        let mut tape = Tape::new();
        let traced = model.trace(&mut tape);
        let (loss, parts) = match &teacher {
            Some(teacher) => loss_total(&mut tape, teacher, &traced, &x0, schedule, sdft, &mut streams)?,
            None => {
                let l = loss_diffusion(&mut tape, &traced, &x0, schedule, &plain, &mut streams)?;
                let v = tape.value(l).item();
                (
                    l,
                    LossParts {
                        diffusion: v,
                        total: v,
                        ..LossParts::default()
                    },
                )
            }
        };
        tape.backward(loss)?;
        let grads = traced.gradients(&tape);
        drop(tape);
        adam_step(model.layers_mut(), &grads, &mut adam_state, &hp, &names)?;

        window.diffusion += parts.diffusion;
        window.distill += parts.distill;
        window.aux += parts.aux;
        window.total += parts.total;
        window_len += 1;
        if iteration % train.eval_every == 0 || iteration == train.iterations {
            let n = window_len as f64;
            let record = TrainRecord {
                iteration,
                loss_diffusion: window.diffusion / n,
                loss_distill: window.distill / n,
                loss_aux: window.aux / n,
                loss_total: window.total / n,
            };
            on_record(&model, &record)?;
            records.push(record);
            window = LossParts::default();
            window_len = 0;
        }
    }
    Ok(TrainOutcome {
        model,
        records,
        teacher,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RingSpec;
    use crate::schedule::ScheduleParams;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 2,
            hidden_dims: vec![32, 32],
            time_embed_dim: 8,
        }
    }

    fn quick(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 32,
            seed,
            eval_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fine_tune_modes_need_a_source() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let ds = ToyDataset::ring(RingSpec::default(), 80, 0).unwrap();
        for mode in [TrainMode::NaiveFinetune, TrainMode::Sdft] {
            let r = run_training(mode, None, &small(), &ds, &s, &SdftConfig::default(), &quick(5, 0), |_, _| Ok(()));
            assert!(matches!(r, Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn records_satisfy_linear_identity() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let ds = ToyDataset::ring(RingSpec::default(), 80, 0).unwrap();
        let src = DenoiserModel::init(small(), 1).unwrap();
        let cfg = SdftConfig::high_gamma();
        let out = run_training(TrainMode::Sdft, Some(&src), &small(), &ds, &s, &cfg, &quick(35, 2), |_, _| Ok(())).unwrap();
        assert_eq!(out.records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![10, 20, 30, 35]);
        for r in &out.records {
            let combo = r.loss_diffusion + cfg.lambda_distill * r.loss_distill + cfg.lambda_aux * r.loss_aux;
            assert!((r.loss_total - combo).abs() <= 1e-9);
        }
        assert_eq!(out.teacher.as_ref().unwrap().flat_parameters(), src.flat_parameters());
    }

    #[test]
    fn zero_lambda_sdft_tracks_naive() {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let ds = ToyDataset::ring(RingSpec::default(), 80, 0).unwrap();
        let src = DenoiserModel::init(small(), 1).unwrap();
        let off = SdftConfig {
            lambda_distill: 0.0,
            lambda_aux: 0.0,
            ..SdftConfig::default()
        };
        let a = run_training(TrainMode::NaiveFinetune, Some(&src), &small(), &ds, &s, &off, &quick(20, 3), |_, _| Ok(())).unwrap();
        let b = run_training(TrainMode::Sdft, Some(&src), &small(), &ds, &s, &off, &quick(20, 3), |_, _| Ok(())).unwrap();
        assert_eq!(a.model, b.model.clone_trainable());
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn record_csv_has_header() {
        let csv = records_to_csv(&[TrainRecord {
            iteration: 1,
            loss_diffusion: 1.0,
            loss_distill: 0.0,
            loss_aux: 0.0,
            loss_total: 1.0,
        }]);
        assert!(csv.starts_with(RECORD_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}
