//! `unlearn-lab` command line.

pub mod aggregate;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::unlearn::{Method, StopReason};
use config::ExperimentConfig;
use pipeline::{Stage, CORPUS_FILE, VANILLA_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "unlearn-lab",
    version,
    about = "Localized unlearning experiments on small recurrent LMs"
)]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Pipeline seed; for bench/ablate it replaces the configured seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent cells (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Warn instead of failing when an input's recorded hash does not match.
    #[arg(long, global = true)]
    pub allow_mismatch: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenCorpus,
    /// Train the vanilla model on the corpus.
    Train,
    /// Probe gradient magnitudes for the four core datasets.
    Probe,
    /// Build the frozen mask and the Jaccard overlap tables.
    Localize,
    /// Run one unlearning method from the vanilla checkpoint.
    Unlearn {
        #[arg(long)]
        method: String,
    },
    /// Evaluate a checkpoint.
    Eval {
        /// Defaults to the vanilla checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `eval-<checkpoint stem>.json` in the seed directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Every configured method on every seed, with aggregate tables.
    Bench {
        /// Comma-separated method tags overriding the configured list.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Mask component and k-sweep ablations.
    Ablate,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Command::Bench { methods: Some(m) } = &cli.command {
        cfg.methods = m.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_seed(cli: &Cli, cfg: &ExperimentConfig) -> u64 {
    cli.seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(0)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let stage = Stage::new(&cfg, single_seed(cli, &cfg), cli.allow_mismatch);
    match &cli.command {
        Command::GenCorpus => {
            let corpus = stage.gen_corpus()?;
            println!(
                "wrote {} ({} items, {} cross-domain shared subjects)",
                stage.path(CORPUS_FILE).display(),
                corpus.items().count(),
                corpus.overlap.cross_domain_shared_subjects()
            );
        }
        Command::Train => {
            let model = stage.train()?;
            println!(
                "wrote {} ({})",
                stage.path(VANILLA_FILE).display(),
                model.fingerprint()
            );
        }
        Command::Probe => {
            let summaries = stage.probe()?;
            println!(
                "wrote {} summaries to {}",
                summaries.len(),
                stage.path("summaries").display()
            );
        }
        Command::Localize => {
            let file = stage.localize()?;
            println!(
                "wrote {} ({} frozen parameters)",
                stage.path(pipeline::MASK_FILE).display(),
                file.mask.frozen.count()
            );
        }
        Command::Unlearn { method } => {
            let method: Method = method.parse()?;
            let dir = cfg.run_dir("runs", method.tag(), stage.seed);
            let cell = stage.unlearn(method, &dir, None)?;
            let r = &cell.report;
            println!(
                "{method} seed {}: US {:.2}/{:.2} RS {:.2}/{:.2} HS {:.2}/{:.2} after {} epochs -> {}",
                stage.seed,
                r.privacy.us,
                r.copyright.us,
                r.privacy.rs,
                r.copyright.rs,
                r.privacy.hs,
                r.copyright.hs,
                cell.record.epochs_run(),
                dir.display()
            );
            if cell.record.stop_reason == StopReason::Diverged {
                return Err(Error::Diverged {
                    epoch: cell.record.epochs_run(),
                    msg: format!("last good checkpoint kept in {}", dir.display()),
                });
            }
        }
        Command::Eval { checkpoint, report } => {
            let checkpoint = checkpoint
                .clone()
                .unwrap_or_else(|| stage.path(VANILLA_FILE));
            if !checkpoint.exists() {
                return Err(Error::MissingArtifact {
                    path: checkpoint,
                    command: "train".into(),
                });
            }
            let (corpus, _) = stage.load_corpus()?;
            let stem = checkpoint
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let out = report
                .clone()
                .unwrap_or_else(|| stage.path(&format!("eval-{stem}.json")));
            let r = stage.evaluate(&checkpoint, &corpus, &stem, &out)?;
            println!(
                "US {:.2}/{:.2} RS {:.2}/{:.2} HS {:.2}/{:.2} -> {}",
                r.privacy.us,
                r.copyright.us,
                r.privacy.rs,
                r.copyright.rs,
                r.privacy.hs,
                r.copyright.hs,
                out.display()
            );
        }
        Command::Bench { .. } => {
            let out = aggregate::bench(&cfg, cli.allow_mismatch)?;
            for m in &out.methods {
                println!(
                    "{:>12}  HS {:6.2} / {:6.2}  RS {:6.2} / {:6.2}  US {:6.2} / {:6.2}",
                    m.name,
                    m.privacy.hs.mean,
                    m.copyright.hs.mean,
                    m.privacy.rs.mean,
                    m.copyright.rs.mean,
                    m.privacy.us.mean,
                    m.copyright.us.mean
                );
            }
            println!("wrote {}", cfg.out.join("bench.csv").display());
        }
        Command::Ablate => {
            let out = aggregate::ablate(&cfg, cli.allow_mismatch)?;
            for row in &out.rows {
                println!(
                    "{:>14}  RS {:6.2} / {:6.2}  US {:6.2} / {:6.2}",
                    row.cell.name,
                    row.summary.privacy.rs.mean,
                    row.summary.copyright.rs.mean,
                    row.summary.privacy.us.mean,
                    row.summary.copyright.us.mean
                );
            }
            println!("wrote {}", cfg.out.join("ablation.csv").display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build();
    let result = match pool {
        Ok(pool) => pool.install(|| execute(&cli)),
        Err(e) => Err(Error::InvalidArgument(format!(
            "cannot start {} workers: {e}",
            cli.jobs.unwrap_or(0)
        ))),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
