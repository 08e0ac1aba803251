use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use medbox_core::data::{generate_synthetic, load_manifest, make_splits, ImageCollection, SynthSpec, ViewConfig};
use medbox_core::densenet::{ModelConfig, Network};
use medbox_core::eval::{ablate, CvOptions};
use medbox_core::training::{fit, write_epoch_log, FreezePolicy, TrainConfig};
use medbox_service::{benchmark, placeholder_catalog, Engine, EngineConfig};

#[derive(Parser)]
#[command(name = "medbox", version, about = "Medicine-box recognition with densenets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic box dataset plus a placeholder catalog.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model on every sample of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// CSV epoch log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Cross-validate a grid of growth rates at one compression.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        /// e.g. `k=4,8,16`
        #[arg(long, default_value = "k=4,8,16")]
        grid: String,
        #[arg(long, default_value_t = 0.5)]
        phi: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Repetitions trained at once; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Serve the classification API.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Measure end-to-end classify latency on a set of image files.
    Benchmark {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, required = true, num_args = 1..)]
        frames: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long = "model-phi", default_value_t = 0.5)]
    model_phi: f64,
    /// Dense layers per block, comma separated.
    #[arg(long, default_value = "2,4,4")]
    blocks: String,
    /// Square input side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training config; overrides `--epochs`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long = "lambda", default_value_t = medbox_service::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = medbox_service::MAX_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = 1024)]
    max_frame_dim: u32,
}

impl ModelArgs {
    fn config(&self, k: usize, phi: f64, classes: usize) -> Result<ModelConfig> {
        let blocks = self
            .blocks
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("bad --blocks {:?}", self.blocks))?;
        let cfg = ModelConfig::desk(k, phi, blocks, classes, self.size);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::from_scratch(self.epochs),
        };
        if self.config.is_none() {
            cfg.seed = self.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EngineArgs {
    fn load(&self) -> Result<Engine> {
        Ok(Engine::load(EngineConfig {
            model_path: self.model.clone(),
            catalog_path: self.catalog.clone(),
            lambda: self.lambda,
            top_k: self.top_k,
            max_frame_dim: self.max_frame_dim,
        })?)
    }
}

/// `k=4,8,16` → `[4, 8, 16]`.
fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    let Some(values) = spec.strip_prefix("k=") else {
        bail!("grid must look like k=4,8,16, got {spec:?}");
    };
    values
        .split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad growth rate {v:?}")))
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { out, classes, per_class, size, seed } => {
            let spec = SynthSpec { size, ..SynthSpec::uniform(classes, per_class, seed) };
            let manifest = generate_synthetic(&spec, &out)?;
            let catalog = out.join("catalog.json");
            std::fs::write(&catalog, serde_json::to_vec_pretty(&placeholder_catalog(&manifest))?)?;
            println!("{} images in {}, catalog at {}", manifest.samples.len(), out.display(), catalog.display());
        }
        Command::Train { manifest, out, model, train, log } => {
            let manifest = load_manifest(&manifest)?;
            let data = ImageCollection::load(&manifest)?;
            let cfg = model.config(model.k, model.model_phi, manifest.classes.len())?;
            let train_cfg = train.config()?;
            if train_cfg.freeze_policy == FreezePolicy::BackboneFrozen {
                eprintln!("note: backbone_frozen on a freshly initialized network trains only the classifier");
            }
            let mut net = Network::build(cfg, train_cfg.seed)?;
            let all: Vec<usize> = (0..data.images.len()).collect();
            let subset = data.subset(&all, ViewConfig::train(model.size, train_cfg.seed));
            let rows = fit(&mut net, &subset, &train_cfg, |r| {
                eprintln!("epoch {:>3}  lr {:.4}  loss {:.4}  acc {:.3}", r.epoch, r.lr, r.loss, r.train_acc)
            })?;
            net.save(&out)?;
            if let Some(path) = log {
                write_epoch_log(BufWriter::new(File::create(path)?), &rows)?;
            }
            println!("saved {}", out.display());
        }
        Command::Ablate { manifest, grid, phi, out, repetitions, train_fraction, model, train, workers } => {
            let manifest = load_manifest(&manifest)?;
            let data = ImageCollection::load(&manifest)?;
            let grid: Vec<(usize, f64)> = parse_grid(&grid)?.into_iter().map(|k| (k, phi)).collect();
            let base = model.config(grid[0].0, phi, manifest.classes.len())?;
            let train_cfg = train.config()?;
            let plan = make_splits(&manifest, train_fraction, repetitions, train_cfg.seed)?;
            let progress = |rep: usize, r: &medbox_core::training::EpochLog| {
                eprintln!("rep {rep:>2} epoch {:>3}  loss {:.4}  acc {:.3}", r.epoch, r.loss, r.train_acc)
            };
            let opts = CvOptions { workers, progress: Some(&progress), ..CvOptions::new(model.size) };
            let result = ablate(&data, &base, &grid, &train_cfg, &plan, &opts)?;
            let names: Vec<String> = manifest.classes.iter().map(|c| c.id.clone()).collect();
            result.write_report(&out, &names)?;
            print!("{}", result.table());
        }
        Command::Serve { engine, bind } => {
            let engine = Arc::new(engine.load()?);
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{bind}");
            runtime.block_on(medbox_service::serve(engine, bind))?;
        }
        Command::Benchmark { engine, frames, iterations, threads } => {
            let engine = engine.load()?;
            let frames = frames.iter().map(std::fs::read).collect::<Result<Vec<_>, _>>()?;
            let report = benchmark(&engine, &frames, iterations, threads)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::parse_grid;

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("k=4,8,16").unwrap(), [4, 8, 16]);
        assert_eq!(parse_grid("k=12").unwrap(), [12]);
        assert!(parse_grid("4,8").is_err());
        assert!(parse_grid("k=4,x").is_err());
    }
}
