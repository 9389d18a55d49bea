//! `streetgraph` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use streetgraph::graph::{graph_stats, validate_graph};
use streetgraph::pipeline::{
    run_pipeline, with_pipeline, PipelineError, RunConfig, Stage, CONFIG_KEYS,
};
use streetgraph::report::{self, Precision};

#[derive(Parser)]
#[command(name = "streetgraph", version, about = "Street-scene perception from scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene-graph JSONL.
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Comparison JSONL.
    #[arg(long)]
    comparisons: Option<PathBuf>,
    /// Text-embedding JSONL table used instead of hashed features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    hash_dim: Option<usize>,
    #[arg(long)]
    hash_seed: Option<u64>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check scene graphs (and comparisons, if given) and write the dataset summary.
    Validate(Common),
    /// Partition scenes into train/val/test and write the manifest.
    Split(Common),
    /// Pretrain the masked graph autoencoder on the training split.
    Pretrain(Common),
    /// Embed every scene with the pretrained encoder.
    Embed(Common),
    /// Train one pairwise scorer per perceptual dimension.
    Train(Common),
    /// Report test-split metrics in both table layouts.
    Evaluate(Common),
    /// Write a continuous score for every scene and dimension.
    Score(Common),
    /// Rank relational motifs by association with low scores.
    Motifs(Common),
    /// Apply trained models to another city without retraining.
    CrossCity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target_scenes: Option<PathBuf>,
        #[arg(long)]
        target_comparisons: Option<PathBuf>,
    },
    /// Run every stage in order.
    Run(Common),
    /// List configuration keys.
    Keys,
}

fn usage(message: String) -> PipelineError {
    PipelineError::usage(Stage::Config, message)
}

fn build_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let here = Path::new(".");
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v, here).map_err(usage)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = &c.out {
        cfg.out = p.clone();
    }
    if let Some(p) = &c.scenes {
        cfg.scenes = Some(p.clone());
    }
    if let Some(p) = &c.comparisons {
        cfg.comparisons = Some(p.clone());
    }
    if let Some(p) = &c.embeddings {
        cfg.embedding_table = Some(p.clone());
    }
    if let Some(d) = c.hash_dim {
        cfg.hash_dim = d;
    }
    if let Some(s) = c.hash_seed {
        cfg.hash_seed = s;
    }
    Ok(cfg)
}

fn log(line: &str) {
    eprintln!("{line}");
}

/// Scene-only validation when no comparisons are configured.
fn validate_scenes(path: &Path) -> Result<(), PipelineError> {
    let graphs = streetgraph::pipeline::read_scenes(path)?;
    let mut warnings = 0;
    for g in &graphs {
        for w in validate_graph(g).warnings {
            warnings += 1;
            eprintln!("warning: {}: {w}", g.scene_id);
        }
    }
    let edges: usize = graphs.iter().map(|g| graph_stats(g).edge_count).sum();
    println!(
        "{} scene graphs, {edges} edges, {warnings} warning(s)",
        graphs.len()
    );
    Ok(())
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Keys => {
            for (k, doc) in CONFIG_KEYS {
                println!("{k:<22}{doc}");
            }
            Ok(())
        }
        Command::Validate(c) => {
            let cfg = build_config(&c)?;
            match (&cfg.scenes, &cfg.comparisons) {
                (Some(s), None) => validate_scenes(s),
                _ => with_pipeline(cfg, |p| {
                    p.write_summary()?;
                    println!("{}", p.out_dir().join("dataset_summary.txt").display());
                    Ok(())
                }),
            }
        }
        Command::Split(c) => with_pipeline(build_config(&c)?, |p| {
            let (split, assigned) = p.write_split()?;
            println!(
                "scenes train={} val={} test={}; comparisons train={} val={} test={} dropped={}",
                split.train.len(),
                split.val.len(),
                split.test.len(),
                assigned.train.len(),
                assigned.val.len(),
                assigned.test.len(),
                assigned.dropped
            );
            Ok(())
        }),
        Command::Pretrain(c) => with_pipeline(build_config(&c)?, |p| p.pretrain(log).map(|_| ())),
        Command::Embed(c) => with_pipeline(build_config(&c)?, |p| {
            let t = p.embed()?;
            println!("embedded {} scenes", t.len());
            Ok(())
        }),
        Command::Train(c) => with_pipeline(build_config(&c)?, |p| p.train(log).map(|_| ())),
        Command::Evaluate(c) => with_pipeline(build_config(&c)?, |p| {
            let r = p.evaluate()?;
            print!("{}", report::table1_for("scene-graph-mgae", &r, Precision::Text).to_text());
            println!();
            print!("{}", report::table2("scene-graph-mgae", &r, Precision::Text).to_text());
            Ok(())
        }),
        Command::Score(c) => with_pipeline(build_config(&c)?, |p| {
            let s = p.score()?;
            println!("wrote {} scores", s.len());
            Ok(())
        }),
        Command::Motifs(c) => with_pipeline(build_config(&c)?, |p| p.motifs()),
        Command::CrossCity {
            common,
            target_scenes,
            target_comparisons,
        } => {
            let mut cfg = build_config(&common)?;
            if let Some(p) = target_scenes {
                cfg.target_scenes = Some(p);
            }
            if let Some(p) = target_comparisons {
                cfg.target_comparisons = Some(p);
            }
            let (Some(ts), Some(tc)) = (cfg.target_scenes.clone(), cfg.target_comparisons.clone())
            else {
                return Err(usage(
                    "cross-city needs target_scenes and target_comparisons".into(),
                ));
            };
            with_pipeline(cfg, |p| {
                let rows = p.cross_city(&ts, &tc)?;
                print!("{}", report::table3(&rows, Precision::Text).to_text());
                Ok(())
            })
        }
        Command::Run(c) => {
            let r = run_pipeline(build_config(&c)?, log)?;
            print!("{}", report::table2("scene-graph-mgae", &r, Precision::Text).to_text());
            Ok(())
        }
    }
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
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
