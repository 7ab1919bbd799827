//! `bpstory`: annotate, train, generate, evaluate and refine from the shell.
//!
//! Every run appends one line to `manifest.jsonl` beside its primary output
//! (or in `--manifest-dir`). Failures exit non-zero and print
//! `{"error": {"category": ..., "message": ...}}` on stderr.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bpstory::control::EntityRule;
use bpstory::corpus::Split;
use bpstory::model::Mode;
use bpstory::toy::ToyConfig;
use bpstory::Result;

use config::Config;
use manifest::Recorder;

#[derive(Parser)]
#[command(name = "bpstory", version, about = "Blueprint-planned visual storytelling")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set decode.beam_size=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Where to append the run manifest.
    #[arg(long, global = true)]
    manifest_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn entity_rule(s: &str) -> std::result::Result<EntityRule, String> {
    match s {
        "head_noun" | "head-noun" => Ok(EntityRule::HeadNoun),
        "full_phrase" | "full-phrase" => Ok(EntityRule::FullPhrase),
        _ => Err(format!("unknown entity rule `{s}` (head_noun, full_phrase)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic colour-scene corpus and its images.
    ToyCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        stories: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        noise: u8,
    },
    /// Print (and optionally write) corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add silver blueprints to every story of a corpus.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Detect the concepts of every image sequence.
    Concepts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a story model on the training split of an annotated corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a plan and story for each image sequence.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file whose image sequences are used.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        /// Drop plan pairs about entities the detector did not see.
        #[arg(long)]
        refine: bool,
        #[arg(long, value_parser = entity_rule)]
        entity_rule: Option<EntityRule>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        beam_size: Option<usize>,
    },
    /// Score generated stories.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        /// Reference corpus, needed by reference-based metrics.
        #[arg(long)]
        references: Option<PathBuf>,
        /// JSONL with `sequence_id` and `concepts` per line.
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "repetition,faithfulness")]
        metrics: Vec<String>,
        /// `.csv` writes the corpus table, anything else the JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the blueprints of generated stories against their concepts.
    Refine {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = entity_rule)]
        entity_rule: Option<EntityRule>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ToyCorpus { .. } => "toy-corpus",
            Command::Stats { .. } => "stats",
            Command::Annotate { .. } => "annotate",
            Command::Concepts { .. } => "concepts",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::Refine { .. } => "refine",
        }
    }

    fn manifest_dir(&self) -> PathBuf {
        fn parent(p: &Path) -> PathBuf {
            match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            }
        }
        match self {
            Command::ToyCorpus { out_dir, .. } => out_dir.clone(),
            Command::Train { checkpoint_dir, .. } => checkpoint_dir.clone(),
            Command::Stats { out: Some(p), .. } => parent(p),
            Command::Stats { corpus, .. } => parent(corpus),
            Command::Annotate { out, .. }
            | Command::Concepts { out, .. }
            | Command::Generate { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Refine { out, .. } => parent(out),
        }
    }

    /// Command flags win over the file and `--set`.
    fn apply_flags(&self, cfg: &mut Config) {
        match self {
            Command::Annotate { parallelism, .. } => {
                cfg.parallelism = parallelism.unwrap_or(cfg.parallelism);
            }
            Command::Train {
                steps,
                learning_rate,
                batch_size,
                checkpoint_every,
                seed,
                ..
            } => {
                let t = &mut cfg.train;
                t.max_steps = steps.unwrap_or(t.max_steps);
                t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
                t.batch_size = batch_size.unwrap_or(t.batch_size);
                t.checkpoint_every = checkpoint_every.or(t.checkpoint_every);
                t.seed = seed.unwrap_or(t.seed);
            }
            Command::Generate {
                entity_rule,
                max_iterations,
                beam_size,
                ..
            } => {
                let d = &mut cfg.decode;
                d.max_iterations = max_iterations.unwrap_or(d.max_iterations);
                d.beam_size = beam_size.unwrap_or(d.beam_size);
                cfg.control.entity_rule = entity_rule.unwrap_or(cfg.control.entity_rule);
            }
            Command::Refine { entity_rule, .. } => {
                cfg.control.entity_rule = entity_rule.unwrap_or(cfg.control.entity_rule);
            }
            _ => {}
        }
    }

    fn seed(&self, cfg: &Config) -> u64 {
        match self {
            Command::ToyCorpus { seed, .. } => *seed,
            Command::Train { .. } => cfg.train.seed,
            _ => cfg.model.seed,
        }
    }
}

fn run(cmd: &Command, cfg: &Config, rec: &mut Recorder) -> Result<()> {
    match cmd {
        Command::ToyCorpus {
            out_dir,
            stories,
            seed,
            noise,
        } => commands::toy_corpus(
            rec,
            out_dir,
            &ToyConfig {
                stories: *stories,
                seed: *seed,
                noise: *noise,
            },
        ),
        Command::Stats { corpus, split, out } => commands::stats(rec, corpus, *split, out.as_deref()),
        Command::Annotate { corpus, out, .. } => commands::annotate(rec, cfg, corpus, out),
        Command::Concepts { corpus, out } => commands::concepts(rec, cfg, corpus, out),
        Command::Train {
            corpus,
            mode,
            checkpoint_dir,
            ..
        } => commands::train_cmd(rec, cfg, corpus, *mode, checkpoint_dir),
        Command::Generate {
            checkpoint,
            images,
            out,
            split,
            refine,
            ..
        } => commands::generate(
            rec,
            cfg,
            &commands::GenerateArgs {
                checkpoint,
                images,
                split: *split,
                out,
                refine: *refine,
            },
        ),
        Command::Evaluate {
            generated,
            references,
            concepts,
            metrics,
            out,
        } => commands::evaluate_cmd(
            rec,
            cfg,
            &commands::EvaluateArgs {
                generated,
                references: references.as_deref(),
                concepts: concepts.as_deref(),
                metrics,
                out,
            },
        ),
        Command::Refine {
            generated,
            concepts,
            out,
            ..
        } => commands::refine(rec, generated, concepts.as_deref(), out, cfg.control.entity_rule),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut rec = Recorder::new(cli.command.name(), 0);
    let loaded = config::load(cli.config.as_deref(), &cli.set).and_then(|mut c| {
        cli.command.apply_flags(&mut c);
        c.train.validate()?;
        c.decode.validate()?;
        Ok(c)
    });
    let (cfg, outcome) = match loaded {
        Ok(c) => {
            rec.seed = cli.command.seed(&c);
            let r = run(&cli.command, &c, &mut rec);
            (Some(c), r)
        }
        Err(e) => (None, Err(e)),
    };
    let dir = cli.manifest_dir.clone().unwrap_or_else(|| cli.command.manifest_dir());
    let m = rec.finish(cfg.as_ref(), outcome.as_ref().map(|_| ()));
    if let Err(e) = manifest::append(&dir, &m) {
        eprintln!("cannot write manifest in {}: {e}", dir.display());
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({"error": {"category": e.category(), "message": e.to_string()}});
            eprintln!("{err}");
            ExitCode::from(if e.category() == "config" { 2 } else { 1 })
        }
    }
}
