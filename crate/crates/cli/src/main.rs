//! `sdft`: command-line front end for the toy fine-tuning pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sdft_core::data::{Domain, ToyDataset};
use sdft_core::io::checkpoint::Checkpoint;
use sdft_core::io::config::RunConfig;
use sdft_core::io::csv::{weights_csv, PointTable};
use sdft_core::io::svg::{scatter_svg, ScatterStyle};
use sdft_core::io::write_atomic;
use sdft_core::metrics::{alignment, angular_coverage, faithfulness, mmd_rbf, mode_coverage, MetricReport};
use sdft_core::model::DenoiserModel;
use sdft_core::rng::seeded;
use sdft_core::sampler::{
    sample, sdedit_translate, SamplerKind, SamplerSpec, TranslationSpec, DEFAULT_DDIM_STEPS, DEFAULT_EDIT_FRACTION,
};
use sdft_core::schedule::{NoiseSchedule, WeightKind, WeightingScheme};
use sdft_core::tensor::Tensor;
use sdft_core::train::{records_to_csv, run_training, SdftConfig, TrainMode};
use sdft_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sdft", version, about = "Toy-scale diffusion fine-tuning with self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source ring or the limited target dataset.
    GenData(GenDataArgs),
    /// Train from scratch or fine-tune a source checkpoint.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// SDEdit-style translation of a point set.
    Translate(TranslateArgs),
    /// Compute one metric over point CSVs.
    Eval(EvalArgs),
    /// Emit a timestep weighting curve as CSV.
    Weights(WeightsArgs),
    /// Render a point CSV as an SVG scatter plot.
    Plot(PlotArgs),
}

#[derive(clap::Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    domain: DomainArg,
    /// TOML run config; its `data` section and seed are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file (`SDFT-DATA v1`).
    #[arg(long)]
    out: PathBuf,
    /// Also write the points as `x,y,mode` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Scratch,
    Naive,
    Sdft,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Scratch => TrainMode::Scratch,
            ModeArg::Naive => TrainMode::NaiveFinetune,
            ModeArg::Sdft => TrainMode::Sdft,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    LowGamma,
    HighGamma,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Source checkpoint; required by `naive` and `sdft`.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's `sdft` section with a named preset.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Final checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Loss records CSV.
    #[arg(long)]
    log: PathBuf,
    /// Effective configuration with every default filled in.
    #[arg(long)]
    config_out: PathBuf,
    /// Directory for a checkpoint at every record interval.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "ddim")]
    sampler: SamplerArg,
    #[arg(long, default_value_t = DEFAULT_DDIM_STEPS)]
    steps: usize,
    /// Start the reverse chain at this timestep instead of the horizon.
    #[arg(long)]
    start_t: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplerArg {
    Ddim,
    Ancestral,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Ddim => SamplerKind::Ddim,
            SamplerArg::Ancestral => SamplerKind::Ancestral,
        }
    }
}

#[derive(clap::Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input points (`x,y[,mode]` CSV).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EDIT_FRACTION)]
    t0_frac: f64,
    #[arg(long, value_enum, default_value = "ddim")]
    sampler: SamplerArg,
    #[arg(long, default_value_t = DEFAULT_DDIM_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Coverage,
    Mmd,
    Faithfulness,
    Alignment,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Generated or translated points.
    #[arg(long)]
    samples: PathBuf,
    /// Reference points: the second MMD set, the translation inputs, or the
    /// paired samples of the other model.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Dataset whose mode table coverage is measured against.
    #[arg(long)]
    modes: Option<PathBuf>,
    /// Coverage by distance to mode centres.
    #[arg(long, default_value_t = 0.25)]
    capture_radius: f64,
    /// Coverage by direction only, within this many radians of each mode.
    #[arg(long, conflicts_with = "capture_radius")]
    capture_angle: Option<f64>,
    #[arg(long, default_value_t = 5)]
    min_hits: usize,
    /// Kernel bandwidth for MMD; median heuristic when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Simple,
    ConstantOne,
    P2,
    Sdft,
    MinSnr,
}

impl From<SchemeArg> for WeightKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Simple => WeightKind::Simple,
            SchemeArg::ConstantOne => WeightKind::ConstantOne,
            SchemeArg::P2 => WeightKind::P2,
            SchemeArg::Sdft => WeightKind::Sdft,
            SchemeArg::MinSnr => WeightKind::MinSnr,
        }
    }
}

#[derive(clap::Args, Debug)]
struct WeightsArgs {
    #[arg(long, value_enum)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Config whose schedule section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
    /// Half-width of the plotted square.
    #[arg(long, default_value_t = 3.0)]
    extent: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Translate(a) => translate(a),
        Command::Eval(a) => eval(a),
        Command::Weights(a) => weights(a),
        Command::Plot(a) => plot(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn read_points(path: &Path) -> Result<PointTable> {
    PointTable::from_csv(&std::fs::read_to_string(path)?)
}

fn to_points(t: &Tensor) -> Vec<[f64; 2]> {
    (0..t.rows()).map(|i| [t.row(i)[0], t.row(i)[1]]).collect()
}

fn points_tensor(points: &[[f64; 2]]) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::Parameter("input point set is empty".into()));
    }
    Tensor::from_rows(points)
}

fn load_model(path: &Path) -> Result<(DenoiserModel, NoiseSchedule)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.to_model()?, NoiseSchedule::new(ckpt.schedule)?))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let ds = match a.domain {
        DomainArg::Source => cfg.data.source_dataset(seed)?,
        DomainArg::Target => cfg.data.target_dataset(seed)?,
    };
    ds.save(&a.out)?;
    if let Some(csv) = a.csv {
        write_atomic(&csv, PointTable::labelled(ds.points.clone(), ds.labels.clone()).to_csv().as_bytes())?;
    }
    eprintln!("wrote {} {} points to {}", ds.len(), ds.domain.tag(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg.sdft = match p {
            PresetArg::LowGamma => SdftConfig::low_gamma(),
            PresetArg::HighGamma => SdftConfig::high_gamma(),
        };
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    let mode = TrainMode::from(a.mode);
    let source = match (&a.source, mode) {
        (Some(p), TrainMode::NaiveFinetune | TrainMode::Sdft) => {
            let ckpt = Checkpoint::load(p)?;
            // A fine-tune inherits the source's architecture and schedule.
            cfg.model = ckpt.model.clone();
            cfg.schedule = ckpt.schedule;
            Some(ckpt.to_model()?)
        }
        (Some(_), TrainMode::Scratch) => {
            return Err(Error::Parameter("`--source` is only used by naive and sdft modes".into()))
        }
        (None, _) => None,
    };
    cfg.validate()?;
    let data = ToyDataset::load(&a.data)?;
    let expected = if mode == TrainMode::Scratch { Domain::Source } else { Domain::Target };
    if data.domain != expected {
        eprintln!("note: training `{}` on a {} dataset", mode.name(), data.domain.tag());
    }
    let schedule = NoiseSchedule::new(cfg.schedule)?;
    cfg.save(&a.config_out)?;

    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let outcome = run_training(
        mode,
        source.as_ref(),
        &cfg.model,
        &data,
        &schedule,
        &cfg.sdft,
        &cfg.train,
        |model, r| {
            eprintln!(
                "it {:>7}  total {:.6}  diffusion {:.6}  distill {:.6}  aux {:.6}",
                r.iteration, r.loss_total, r.loss_diffusion, r.loss_distill, r.loss_aux
            );
            if let Some(dir) = &a.checkpoint_dir {
                let path = dir.join(format!("iter_{:07}.ckpt", r.iteration));
                Checkpoint::from_model(model, cfg.schedule, r.iteration as u64, cfg.seed, mode).save(&path)?;
            }
            Ok(())
        },
    )?;
    write_atomic(&a.log, records_to_csv(&outcome.records).as_bytes())?;
    Checkpoint::from_model(&outcome.model, cfg.schedule, cfg.train.iterations as u64, cfg.seed, mode).save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let (model, schedule) = load_model(&a.model)?;
    let spec = SamplerSpec {
        kind: a.sampler.into(),
        num_steps: a.steps,
        start_t: a.start_t,
        seed: a.seed,
    };
    let x = sample(&model, &spec, &schedule, a.n)?;
    write_atomic(&a.out, PointTable::new(to_points(&x)).to_csv().as_bytes())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let (model, schedule) = load_model(&a.model)?;
    let table = read_points(&a.input)?;
    let x = points_tensor(&table.points)?;
    let spec = TranslationSpec {
        t0_frac: a.t0_frac,
        sampler: SamplerSpec {
            kind: a.sampler.into(),
            num_steps: a.steps,
            start_t: None,
            seed: a.seed,
        },
    };
    let mut rng = seeded(a.seed);
    let out = sdedit_translate(&model, &x, &spec, &schedule, &mut rng)?;
    let result = PointTable {
        points: to_points(&out),
        labels: table.labels,
    };
    write_atomic(&a.out, result.to_csv().as_bytes())
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Parameter(format!("metric `{metric}` needs `--{flag}`")))
}

fn eval(a: EvalArgs) -> Result<()> {
    let samples = read_points(&a.samples)?.points;
    let mut report = MetricReport::default();
    match a.metric {
        MetricArg::Coverage => {
            let modes = ToyDataset::load(need(&a.modes, "modes", "coverage")?)?.modes;
            let c = match a.capture_angle {
                Some(angle) => angular_coverage(&samples, &modes, angle, a.min_hits)?,
                None => mode_coverage(&samples, &modes, a.capture_radius, a.min_hits)?,
            };
            report.coverage = Some(c.coverage);
            report.per_mode_counts = Some(c.per_mode_counts);
            report.min_hits = Some(a.min_hits);
        }
        MetricArg::Mmd => {
            let reference = read_points(need(&a.reference, "reference", "mmd")?)?.points;
            report.mmd = Some(mmd_rbf(&samples, &reference, a.bandwidth)?);
        }
        MetricArg::Faithfulness => {
            let inputs = read_points(need(&a.reference, "reference", "faithfulness")?)?.points;
            let f = faithfulness(&inputs, &samples)?;
            report.faithfulness_angle_median = Some(f.angle_median);
            report.faithfulness_radius_median = Some(f.radius_median);
        }
        MetricArg::Alignment => {
            let other = read_points(need(&a.reference, "reference", "alignment")?)?.points;
            report.alignment_median = Some(alignment(&other, &samples)?);
        }
    }
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    print!("{}", report.to_text());
    Ok(())
}

fn weights(a: WeightsArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let schedule = NoiseSchedule::new(cfg.schedule)?;
    let scheme = WeightingScheme::new(a.scheme.into(), a.k, a.gamma)?;
    write_atomic(&a.out, weights_csv(&schedule, &scheme)?.as_bytes())
}

fn plot(a: PlotArgs) -> Result<()> {
    let table = read_points(&a.input)?;
    if !(a.extent > 0.0) {
        return Err(Error::Parameter(format!("extent must be > 0, got {}", a.extent)));
    }
    let style = ScatterStyle {
        extent: a.extent,
        title: a.title,
        ..ScatterStyle::default()
    };
    write_atomic(&a.out, scatter_svg(&table, &style).as_bytes())
}
