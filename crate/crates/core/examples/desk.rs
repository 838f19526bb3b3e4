//! Runs the fine-tuning comparison and prints the probe table.
//!
//! Usage: `desk [config.toml] [source.ckpt]`. With a checkpoint path the
//! source model is loaded from it when present and saved to it otherwise.

use std::path::Path;

use sdft_core::experiment::{compare_finetunes, train_source, DeskConfig};
use sdft_core::io::checkpoint::Checkpoint;
use sdft_core::train::TrainMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let cfg: DeskConfig = match args.get(1) {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?)?,
        None => DeskConfig::default(),
    };
    let log = |line: &str| eprintln!("{line}");
    let source = match args.get(2).map(Path::new) {
        Some(p) if p.exists() => Checkpoint::load(p)?.to_model()?,
        other => {
            let m = train_source(&cfg, log)?;
            if let Some(p) = other {
                Checkpoint::from_model(&m, cfg.schedule, cfg.source_iterations as u64, cfg.seed, TrainMode::Scratch).save(p)?;
            }
            m
        }
    };
    let report = compare_finetunes(&cfg, &source, log)?;
    print!("{}", report.to_text());
    Ok(())
}
