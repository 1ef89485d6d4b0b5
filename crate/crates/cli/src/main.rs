use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobitok::pipeline::{write_synthetic_city, Pipeline, PipelineConfig};
use mobitok::synth::CityConfig;
use mobitok::Error;

/// Semantic location tokenization and mobility prediction pipeline.
#[derive(Debug, Parser)]
#[command(name = "mobitok", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set quantizer.codebook_size=64`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Seed for every randomized stage.
    #[arg(long, env = "MOBITOK_SEED", global = true)]
    seed: Option<u64>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse check-ins, build trajectories and split them.
    Ingest,
    /// Write the textual description of every location.
    Describe,
    /// Build the embedding table.
    Embed,
    /// Train the residual-quantized autoencoder.
    TrainQuantizer,
    /// Assign location tokens and quantized vectors.
    Tokenize,
    /// Build the instruction-tuning dataset.
    BuildSft,
    /// Fit the n-gram scorer on training trajectories.
    FitScorer,
    /// Rank next locations for test trajectories.
    Predict,
    /// Rank masked locations for test trajectories.
    Recover,
    /// Write next-location and recovery reports.
    Evaluate,
    /// Run the representation-consistency study.
    Consistency,
    /// Retrain and evaluate over the codebook-size and level grid.
    Sweep,
    /// Write a synthetic city and a matching config.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Describe => "describe",
            Command::Embed => "embed",
            Command::TrainQuantizer => "train-quantizer",
            Command::Tokenize => "tokenize",
            Command::BuildSft => "build-sft",
            Command::FitScorer => "fit-scorer",
            Command::Predict => "predict",
            Command::Recover => "recover",
            Command::Evaluate => "evaluate",
            Command::Consistency => "consistency",
            Command::Sweep => "sweep",
            Command::Synth { .. } => "synth",
        }
    }
}

fn load(cli: &Cli) -> mobitok::Result<Pipeline> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "a config file is required"))?;
    if !path.exists() {
        return Err(Error::config("--config", format!("{} does not exist", path.display())));
    }
    let mut cfg = PipelineConfig::load(path, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    log::debug!("config:\n{}", cfg.to_toml()?);
    Pipeline::new(cfg)
}

fn run(cli: &Cli) -> mobitok::Result<()> {
    if let Command::Synth { out } = &cli.command {
        let city = CityConfig {
            seed: cli.seed.unwrap_or(CityConfig::default().seed),
            ..CityConfig::default()
        };
        let path = write_synthetic_city(out, &city)?;
        println!("wrote synthetic city; config at {}", path.display());
        return Ok(());
    }
    let p = load(cli)?;
    match &cli.command {
        Command::Ingest => {
            let s = p.ingest()?;
            println!(
                "{} check-ins read, {} kept; {} trajectories (train {}, validation {}, test {})",
                s.records_read, s.records_kept, s.trajectories, s.train, s.validation, s.test
            );
        }
        Command::Describe => println!("{} descriptions", p.describe()?),
        Command::Embed => println!("{} embeddings", p.embed()?),
        Command::TrainQuantizer => {
            let h = p.train_quantizer()?;
            if let (Some(a), Some(b)) = (h.first(), h.last()) {
                println!(
                    "{} epochs; reconstruction {:.6} -> {:.6}",
                    h.len(),
                    a.reconstruction,
                    b.reconstruction
                );
            }
        }
        Command::Tokenize => {
            let t = p.tokenize()?;
            println!("{} locations tokenized, {} collisions", t.tokens.len(), t.collisions);
        }
        Command::BuildSft => {
            let m = p.build_sft()?;
            println!("{} examples", m.total);
        }
        Command::FitScorer => println!("scorer vocabulary of {} tokens", p.fit_scorer()?),
        Command::Predict => println!("{} predictions", p.predict()?),
        Command::Recover => println!("{} recovered slots", p.recover()?),
        Command::Evaluate => {
            for r in p.evaluate()? {
                let metrics: Vec<String> = r.metrics.iter().map(|m| format!("{} {:.4}", m.name, m.value)).collect();
                let ratio = r.config.ratio.map(|x| format!(" ratio {x}")).unwrap_or_default();
                println!("{}{ratio} ({} instances): {}", r.task, r.instances, metrics.join(", "));
            }
        }
        Command::Consistency => {
            let r = p.consistency()?;
            println!(
                "A {:.4}  B {:.4}  C {:.4}  D {:.4}  ({} categories, {} skipped)",
                r.groups.a,
                r.groups.b,
                r.groups.c,
                r.groups.d,
                r.categories.len(),
                r.skipped.len()
            );
        }
        Command::Sweep => {
            for c in p.sweep()? {
                let hit = c.reports.first().and_then(|r| r.metric("Hit@10")).unwrap_or(f64::NAN);
                println!("K={} L={}: next-location Hit@10 {:.4}", c.codebook_size, c.levels, hit);
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", cli.command.name());
            ExitCode::from(1)
        }
    }
}
