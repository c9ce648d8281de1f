use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use echotrail::eval::{
    build_memory, compute_metrics, emit_embeddings, evaluate, quality_over_time, read_jsonl,
    run_ablation, sweep_csv, sweep_k, write_jsonl, ExperimentSpec,
};
use echotrail::explore::{EpisodeLog, ExplorerConfig};
use echotrail::inference::{EpisodeResult, InferenceConfig};
use echotrail::memory::{MemoryDb, THETA_GOOD};
use echotrail::retrieval::{Embedder, HashEmbedder, Ranking};
use echotrail::sim::Suite;

#[derive(Parser)]
#[command(
    name = "echotrail",
    version,
    about = "Explore, remember and replay GUI task experience"
)]
struct Cli {
    /// Suite definition; defaults to the built-in suite.
    #[arg(long, global = true)]
    suite: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Hybrid,
    Dense,
    Sparse,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Explore the suite and archive high-scoring trajectories.
    Explore {
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "on")]
        guidance: Switch,
        #[arg(long, value_enum, default_value = "on")]
        critic_filter: Switch,
        /// Probability that a goal-directed step follows the planner.
        #[arg(long)]
        competence: Option<f64>,
        #[arg(long)]
        db: PathBuf,
        /// Exploration log (JSON lines).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run every task with retrieved memories and write per-episode results.
    Run {
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "hybrid")]
        ranking: RankingArg,
        /// First evaluation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds per task.
        #[arg(long, default_value_t = 8)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics from a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ablation variants described by a spec file.
    Ablate {
        /// JSON experiment spec; defaults to the built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success rate as a function of the number of retrieved memories.
    SweepK {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
        ks: Vec<usize>,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// High-quality rate over four stages of an exploration log.
    StageQuality {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export record embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn seed_range(first: u64, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        bail!("--seeds must be at least 1");
    }
    Ok((first..first + n).collect())
}

fn run(cli: Cli) -> Result<()> {
    let suite = match &cli.suite {
        Some(p) => Suite::load(p).with_context(|| format!("loading suite {}", p.display()))?,
        None => Suite::default_suite()?,
    };
    let embedder = HashEmbedder::default();
    match cli.command {
        Command::Explore {
            episodes,
            seed,
            guidance,
            critic_filter,
            competence,
            db,
            log,
        } => {
            let defaults = ExplorerConfig::default();
            let cfg = ExplorerConfig {
                competence: competence.unwrap_or(defaults.competence),
                episodes,
                seed,
                guidance_enabled: matches!(guidance, Switch::On),
                critic_filter: matches!(critic_filter, Switch::On),
                ..defaults
            };
            let (dmem, run) = build_memory(&suite, &cfg, &embedder)?;
            dmem.persist(&db)?;
            if let Some(log) = log {
                write_jsonl(log, &run.log)?;
            }
            println!("{}", serde_json::to_string(&run.summary)?);
        }
        Command::Run {
            db,
            k,
            alpha,
            ranking,
            seed,
            seeds,
            out,
        } => {
            let dmem = match db {
                Some(p) => MemoryDb::load(&p, &embedder)?,
                None => MemoryDb::new(embedder.dim()),
            };
            let mut cfg = InferenceConfig::default();
            cfg.retrieval.k = k;
            cfg.retrieval.alpha = alpha;
            cfg.retrieval.ranking = match ranking {
                RankingArg::Hybrid => Ranking::Hybrid,
                RankingArg::Dense => Ranking::Dense,
                RankingArg::Sparse => Ranking::Sparse,
                RankingArg::Random => Ranking::Random { seed },
            };
            let results = evaluate(&suite, &dmem, &cfg, &seed_range(seed, seeds)?, &embedder)?;
            write_jsonl(&out, &results)?;
            let report = compute_metrics(&results, &suite)?;
            println!("{}", serde_json::to_string(&report.overall)?);
        }
        Command::Eval { results, out } => {
            let results: Vec<EpisodeResult> = read_jsonl(&results)?;
            let report = compute_metrics(&results, &suite)?;
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&report)? + "\n"),
            )?;
        }
        Command::Ablate { spec, out } => {
            let spec: ExperimentSpec = match spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing spec {}", p.display()))?,
                None => ExperimentSpec::default(),
            };
            let table = run_ablation(&spec, &suite, &embedder)?;
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("ablation.json"),
                serde_json::to_string_pretty(&table)? + "\n",
            )?;
            let csv = table.to_csv()?;
            fs::write(out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::SweepK {
            ks,
            db,
            seed,
            seeds,
            out,
        } => {
            let dmem = MemoryDb::load(&db, &embedder)?;
            let rows = sweep_k(
                &suite,
                &dmem,
                &InferenceConfig::default(),
                &ks,
                &seed_range(seed, seeds)?,
                &embedder,
            )?;
            emit(out.as_deref(), &sweep_csv(&rows)?)?;
        }
        Command::StageQuality { log, out } => {
            let log: Vec<EpisodeLog> = read_jsonl(&log)?;
            emit(
                out.as_deref(),
                &quality_over_time(&log, THETA_GOOD).to_csv()?,
            )?;
        }
        Command::ExportEmbeddings { db, out } => {
            let dmem = MemoryDb::load(&db, &embedder)?;
            emit(out.as_deref(), &emit_embeddings(&dmem)?)?;
        }
    }
    Ok(())
}
