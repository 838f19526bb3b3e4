//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failing criteria are reported
//! but only turn into a nonzero exit code when `SDFT_ACCEPTANCE_STRICT=1`,
//! so the toy experiment's outcome is visible without breaking the
//! workspace test run. Set `SDFT_ACCEPTANCE_SKIP_DESK=1` to skip the
//! minutes-long training experiment (criteria 6 and 7).

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdft_core::data::{RingSpec, ToyDataset};
use sdft_core::experiment::{hits, run_desk, DeskConfig, DeskReport};
use sdft_core::io::checkpoint::Checkpoint;
use sdft_core::model::{DenoiserModel, ModelConfig};
use sdft_core::rng::{normal_matrix, Streams};
use sdft_core::sampler::{ddim_update, sample, SamplerSpec};
use sdft_core::schedule::{NoiseSchedule, ScheduleFamily, ScheduleParams, WeightKind, WeightingScheme};
use sdft_core::tensor::{Tape, Tensor};
use sdft_core::train::{
    forward_perturb, loss_aux, loss_diffusion, loss_distill, loss_total, run_training, SdftConfig, TrainConfig,
    TrainMode,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let took = start.elapsed();
    let in_budget = took <= budget;
    let pass = o.pass && in_budget;
    let timing = if in_budget {
        format!("{:.2}s", took.as_secs_f64())
    } else {
        format!("{:.2}s OVER BUDGET {:.0}s", took.as_secs_f64(), budget.as_secs_f64())
    };
    println!(
        "[{}] {id}. {name} ({timing}): {}",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn micro_config() -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        hidden_dims: vec![8],
        time_embed_dim: 2,
    }
}

fn close_grad(auto: f64, fd: f64) -> bool {
    (auto - fd).abs() <= (1e-3 * auto.abs().max(fd.abs())).max(1e-8)
}

/// Central differences of `loss(flat)` against the tape gradient.
fn check_gradients(
    flat: &[f64],
    cfg: &ModelConfig,
    loss: &dyn Fn(&DenoiserModel) -> (f64, Vec<f64>),
) -> (usize, f64) {
    let model = DenoiserModel::from_flat(cfg.clone(), flat).unwrap();
    let (_, grad) = loss(&model);
    let h = 1e-6;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.to_vec();
        p[i] += h;
        let up = loss(&DenoiserModel::from_flat(cfg.clone(), &p).unwrap()).0;
        p[i] -= 2.0 * h;
        let down = loss(&DenoiserModel::from_flat(cfg.clone(), &p).unwrap()).0;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        if !close_grad(grad[i], fd) {
            bad += 1;
        }
    }
    (bad, worst)
}

fn criterion_1() -> Outcome {
    let cfg = micro_config();
    let schedule = NoiseSchedule::make(ScheduleFamily::Linear, 100, 1e-4, 0.05).unwrap();
    let n_params = cfg.parameter_count();
    assert!(n_params <= 64);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let flat: Vec<f64> = (0..n_params).map(|_| rng.random_range(-0.8..0.8)).collect();
        let teacher_flat: Vec<f64> = (0..n_params).map(|_| rng.random_range(-0.8..0.8)).collect();
        let teacher = DenoiserModel::from_flat(cfg.clone(), &teacher_flat).unwrap().clone_frozen();
        let x0 = normal_matrix(&mut rng, 5, 2);
        let sdft = SdftConfig {
            lambda_distill: rng.random_range(0.05..1.0),
            lambda_aux: rng.random_range(0.05..1.0),
            gamma_distill: rng.random_range(0.0..3.0),
            gamma_aux: rng.random_range(0.0..3.0),
            k: 1.0,
        };
        let seed = 1000 + case;

        let diffusion = |m: &DenoiserModel| {
            let mut tape = Tape::new();
            let traced = m.trace(&mut tape);
            let mut streams = Streams::new(seed);
            let l = loss_diffusion(&mut tape, &traced, &x0, &schedule, &WeightingScheme::simple(), &mut streams).unwrap();
            let v = tape.value(l).item();
            tape.backward(l).unwrap();
            (v, traced.gradients(&tape).concat())
        };
        let total = |m: &DenoiserModel| {
            let mut tape = Tape::new();
            let traced = m.trace(&mut tape);
            let mut streams = Streams::new(seed);
            let (l, _) = loss_total(&mut tape, &teacher, &traced, &x0, &schedule, &sdft, &mut streams).unwrap();
            let v = tape.value(l).item();
            tape.backward(l).unwrap();
            (v, traced.gradients(&tape).concat())
        };
        for f in [&diffusion as &dyn Fn(&DenoiserModel) -> (f64, Vec<f64>), &total] {
            let (bad, w) = check_gradients(&flat, &cfg, f);
            failures += bad;
            worst = worst.max(w);
        }
    }
    outcome(
        failures == 0,
        format!("100 models x {n_params} params x 2 losses, {failures} mismatches, worst relative error {worst:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut problems = Vec::new();
    for family in [ScheduleFamily::Linear, ScheduleFamily::Cosine] {
        let s = NoiseSchedule::new(ScheduleParams {
            family,
            ..ScheduleParams::default()
        })
        .unwrap();
        let ab = s.alpha_bars();
        let snr = s.snrs();
        if !ab.windows(2).all(|w| w[1] < w[0]) {
            problems.push(format!("{family:?}: alpha_bar not strictly decreasing"));
        }
        if !snr.windows(2).all(|w| w[1] < w[0]) {
            problems.push(format!("{family:?}: snr not strictly decreasing"));
        }
        for gamma in [0.5, 1.0, 3.0, 50.0] {
            let c = WeightingScheme::sdft(gamma).unwrap().curve(&s).unwrap();
            if !c.windows(2).all(|w| w[1] > w[0]) {
                problems.push(format!("{family:?}: sdft gamma={gamma} not strictly increasing"));
            }
        }
        let identity = WeightingScheme::sdft(0.0).unwrap().curve(&s).unwrap();
        if identity.iter().any(|&w| w != 1.0) {
            problems.push(format!("{family:?}: gamma=0 is not the identity"));
        }
        let clamp = WeightingScheme::new(WeightKind::MinSnr, 1.0, 5.0).unwrap();
        for t in 1..=s.horizon() {
            let expected = s.snr(t).unwrap().min(5.0) * 1.0;
            if clamp.weight(&s, t).unwrap().to_bits() != expected.to_bits() {
                problems.push(format!("{family:?}: min-snr differs at t={t}"));
                break;
            }
        }
    }
    let detail = if problems.is_empty() {
        "linear and cosine, T=1000: monotone tables, sdft curves for gamma in {0.5,1,3,50}, identity, clamp at 5".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn criterion_3() -> Outcome {
    let schedule = NoiseSchedule::new(ScheduleParams::default()).unwrap();
    let cfg = ModelConfig {
        input_dim: 2,
        hidden_dims: vec![32, 32],
        time_embed_dim: 8,
    };
    let model = DenoiserModel::init(cfg.clone(), 4).unwrap();
    let teacher = model.clone_frozen();
    let x0 = ToyDataset::ring(RingSpec::default(), 64, 1).unwrap().to_tensor();
    let mut tape = Tape::new();
    let traced = model.trace(&mut tape);
    let mut streams = Streams::new(9);
    let preset = SdftConfig::high_gamma();
    let d = loss_distill(&mut tape, &teacher, &traced, &x0, &schedule, &preset, &mut streams).unwrap();
    let a = loss_aux(&mut tape, &teacher, &traced, 64, &schedule, &preset, &mut streams).unwrap();
    let (d, a) = (tape.value(d).item(), tape.value(a).item());

    let target = ToyDataset::limited_target(RingSpec::default(), 2.0, &[0, 1, 2], 300, 2).unwrap();
    let off = SdftConfig {
        lambda_distill: 0.0,
        lambda_aux: 0.0,
        ..SdftConfig::low_gamma()
    };
    let train = TrainConfig {
        iterations: 200,
        batch_size: 64,
        seed: 21,
        eval_every: 1,
        ..TrainConfig::default()
    };
    let naive = run_training(TrainMode::NaiveFinetune, Some(&model), &cfg, &target, &schedule, &off, &train, |_, _| Ok(())).unwrap();
    let sdft = run_training(TrainMode::Sdft, Some(&model), &cfg, &target, &schedule, &off, &train, |_, _| Ok(())).unwrap();
    let same_params = naive
        .model
        .flat_parameters()
        .iter()
        .zip(sdft.model.flat_parameters())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let same_losses = naive.records.len() == 200
        && naive
            .records
            .iter()
            .zip(&sdft.records)
            .all(|(a, b)| a.loss_total.to_bits() == b.loss_total.to_bits());
    outcome(
        d == 0.0 && a == 0.0 && same_params && same_losses,
        format!(
            "teacher==student: distill={d:e} aux={a:e}; lambda=0 sdft vs naive over 200 iterations: parameters {}, per-step losses {}",
            if same_params { "bitwise equal" } else { "DIFFER" },
            if same_losses { "bitwise equal" } else { "DIFFER" },
        ),
    )
}

fn criterion_4() -> Outcome {
    let schedule = NoiseSchedule::make(ScheduleFamily::Linear, 1, 0.5, 0.5).unwrap();
    let ab = schedule.alpha_bar(1);
    let n = 100_000;
    let x0_row = [0.8, -1.3];
    let x0 = Tensor::from_rows(&vec![x0_row; n]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps = normal_matrix(&mut rng, n, 2);
    let xt = forward_perturb(&x0, &vec![1; n], &eps, &schedule).unwrap();
    let mut ok = ab == 0.5;
    let mut parts = Vec::new();
    for (c, &x) in x0_row.iter().enumerate() {
        let vals: Vec<f64> = (0..n).map(|i| xt.row(i)[c]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (0.5 / n as f64).sqrt();
        let se_var = 0.5 * (2.0 / (n - 1) as f64).sqrt();
        let z_mean = (mean - 0.5f64.sqrt() * x) / se_mean;
        let z_var = (var - 0.5) / se_var;
        ok &= z_mean.abs() <= 3.0 && z_var.abs() <= 3.0;
        parts.push(format!("coord {c}: mean z={z_mean:+.2}, var z={z_var:+.2}"));
    }
    outcome(ok, format!("10^5 draws at alpha_bar=0.5; {}", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let schedule = NoiseSchedule::new(ScheduleParams::default()).unwrap();
    let model = DenoiserModel::init(ModelConfig::default(), 8).unwrap();
    let spec = SamplerSpec::ddim(40, 17);
    let a = sample(&model, &spec, &schedule, 256).unwrap();
    let b = sample(&model, &spec, &schedule, 256).unwrap();
    let deterministic = a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = normal_matrix(&mut rng, 64, 2);
    let mut worst: f64 = 0.0;
    for t in [1, 10, 250, 500, 999, 1000] {
        let eps = normal_matrix(&mut rng, 64, 2);
        let xt = forward_perturb(&x0, &vec![t; 64], &eps, &schedule).unwrap();
        let back = ddim_update(&xt, &eps, t, 0, &schedule).unwrap();
        for (u, v) in back.values().iter().zip(x0.values()) {
            worst = worst.max((u - v).abs());
        }
    }

    let partial = SamplerSpec {
        start_t: Some(schedule.horizon()),
        ..spec
    };
    let c = sample(&model, &partial, &schedule, 256).unwrap();
    let full_equal = a.values().iter().zip(c.values()).all(|(x, y)| x.to_bits() == y.to_bits());
    outcome(
        deterministic && worst <= 1e-9 && full_equal,
        format!(
            "repeat 40-step sampling {}; oracle-eps inversion max error {worst:.1e}; start_t=T {}",
            if deterministic { "bitwise equal" } else { "DIFFERS" },
            if full_equal { "bitwise equals full sampling" } else { "DIFFERS from full sampling" },
        ),
    )
}

fn criterion_6(r: &DeskReport, cfg: &DeskConfig) -> Outcome {
    let (s, n) = (hits(&r.sdft), hits(&r.naive));
    let total = r.sdft.coverage.per_mode_counts.len();
    let cov_ok = s >= n && s >= 6 && n <= 5;
    let shift = cfg.target_radius - cfg.source.radius;
    let angle_ok = r.sdft.translation.angle_median < r.naive.translation.angle_median;
    let radius_ok = (r.sdft.translation.radius_median - shift).abs() <= 0.2 * shift;
    let align_ok = r.sdft.alignment < r.naive.alignment;
    let mark = |b: bool| if b { "ok" } else { "NO" };
    outcome(
        cov_ok && angle_ok && radius_ok && align_ok,
        format!(
            "(a) coverage sdft {s}/{total} vs naive {n}/{total} [{}]; (b) translation angle {:.4} vs {:.4} [{}], sdft radius shift {:.4} vs {shift} [{}]; (c) alignment {:.4} vs {:.4} [{}]",
            mark(cov_ok),
            r.sdft.translation.angle_median,
            r.naive.translation.angle_median,
            mark(angle_ok),
            r.sdft.translation.radius_median,
            mark(radius_ok),
            r.sdft.alignment,
            r.naive.alignment,
            mark(align_ok),
        ),
    )
}

fn criterion_7(r: &DeskReport) -> Outcome {
    let (full, ablated) = (r.sdft.translation.angle_median, r.no_aux.translation.angle_median);
    outcome(
        ablated > full,
        format!("translation angle median without aux {ablated:.4} vs full sdft {full:.4} (difference {:+.4})", ablated - full),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let schedule = ScheduleParams::default();
    let model = DenoiserModel::init(ModelConfig::default(), 12).unwrap();
    let ckpt = Checkpoint::from_model(&model, schedule, 123, 5, TrainMode::Sdft);
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    ckpt.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    let ckpt_exact = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap() && loaded == ckpt;

    let restored = loaded.to_model().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = normal_matrix(&mut rng, 512, 2);
    let ts: Vec<usize> = (0..512).map(|_| rng.random_range(1..=1000)).collect();
    let a = model.predict_noise(&x, &ts).unwrap();
    let b = restored.predict_noise(&x, &ts).unwrap();
    let worst = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);

    let ds = ToyDataset::limited_target(RingSpec::default(), 2.0, &[0, 1, 2], 600, 4).unwrap();
    let dp = dir.path().join("d.txt");
    ds.save(&dp).unwrap();
    let back = ToyDataset::load(&dp).unwrap();
    let dp2 = dir.path().join("d2.txt");
    back.save(&dp2).unwrap();
    let data_exact = back == ds && std::fs::read(&dp).unwrap() == std::fs::read(&dp2).unwrap();
    outcome(
        ckpt_exact && data_exact && worst <= 1e-6,
        format!(
            "checkpoint round trip {}, dataset round trip {}, max prediction drift {worst:.2e}",
            if ckpt_exact { "byte-exact" } else { "NOT exact" },
            if data_exact { "byte-exact" } else { "NOT exact" },
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        report(1, "gradient correctness", secs(10), criterion_1),
        report(2, "schedule and weight invariants", secs(1), criterion_2),
        report(3, "loss degenerations", secs(30), criterion_3),
        report(4, "forward-process statistics", secs(5), criterion_4),
        report(5, "DDIM determinism and inversion", secs(5), criterion_5),
    ];

    if std::env::var("SDFT_ACCEPTANCE_SKIP_DESK").as_deref() == Ok("1") {
        println!("[SKIP] 6. fine-tuning experiment");
        println!("[SKIP] 7. aux-input ablation");
    } else {
        let cfg = DeskConfig::default();
        let start = Instant::now();
        let desk = run_desk(&cfg, |line| eprintln!("  {line}"));
        let took = start.elapsed();
        match desk {
            Ok(r) => {
                eprint!("{}", r.to_text());
                let budget = secs(15 * 60);
                let over = took > budget;
                let c6 = criterion_6(&r, &cfg);
                let c6 = outcome(c6.pass && !over, c6.detail);
                results.push(report(6, "fine-tuning experiment", budget, || c6));
                let c7 = criterion_7(&r);
                results.push(report(7, "aux-input ablation", budget, || outcome(c7.pass && !over, c7.detail)));
                println!("     experiment wall time {:.1}s (budget 900s)", took.as_secs_f64());
            }
            Err(e) => {
                results.push(report(6, "fine-tuning experiment", secs(900), || outcome(false, format!("error: {e}"))));
                results.push(report(7, "aux-input ablation", secs(900), || outcome(false, "not run")));
            }
        }
    }
    results.push(report(8, "persistence", secs(1), criterion_8));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() && std::env::var("SDFT_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
