//! `smlm`: prepare, train, generate, render, eval and serve.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use smlm::io::{excerpt_to_midi, read_dataset, render_piano_roll, write_atomic, write_dataset, DatasetRecord};
use smlm::midi::prepare;
use smlm::net::{read_checkpoint, ModelConfig};
use smlm::sampler::{generate, Granularity, SamplerConfig};
use smlm::score::{compile_constraints, CompileError, ConstraintSpec, Excerpt};
use smlm::train::{evaluate, run_training, RunOptions, TrainConfig};
use smlm::Execution;

#[derive(Parser)]
#[command(name = "smlm", version, about = "Constrained symbolic music generation", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a directory of MIDI files into a dataset.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Process files on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Train a model; writes checkpoints and metrics into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
        model_preset: String,
        /// Training config JSON; defaults apply to absent fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the state found in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Sample an excerpt that satisfies a constraint spec.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Constraint spec JSON; no constraints when absent.
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the spec's temperature.
        #[arg(long)]
        temperature: Option<f64>,
        /// Overrides the spec's topP.
        #[arg(long)]
        top_p: Option<f64>,
        #[arg(long, value_enum, default_value = "per-attribute")]
        granularity: GranularityArg,
        /// Dataset holding the base excerpt for imputation.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 0, requires = "base")]
        base_index: usize,
        /// MIDI output.
        #[arg(long)]
        out: PathBuf,
        /// Piano-roll SVG output.
        #[arg(long)]
        roll: Option<PathBuf>,
    },
    /// Draw one dataset record as a piano-roll SVG.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean masked NLL of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum GranularityArg {
    PerAttribute,
    PerNote,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMLM_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            input,
            out,
            seed,
            sequential,
        } => {
            let report = prepare(&input, seed, execution(sequential)).with_context(|| format!("reading {}", input.display()))?;
            write_dataset(&out, &report.records)?;
            eprintln!(
                "{} files, {} rejected, {} records",
                report.files,
                report.rejected.len(),
                report.records.len()
            );
            Ok(())
        }
        Command::Train {
            data,
            model_preset,
            config,
            out,
            resume,
            sequential,
        } => {
            let mcfg = ModelConfig::preset(&model_preset).ok_or_else(|| anyhow!("unknown preset {model_preset}"))?;
            let tcfg: TrainConfig = match config {
                Some(p) => serde_json::from_str(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => TrainConfig::default(),
            };
            let records = read_dataset(&data)?;
            let opts = RunOptions {
                resume,
                execution: execution(sequential),
            };
            let report = run_training(&records, &tcfg, &mcfg, &out, opts)?;
            eprintln!(
                "best epoch {} with validation NLL {:.4}",
                report.best_epoch, report.best_val_nll
            );
            Ok(())
        }
        Command::Generate {
            ckpt,
            constraints,
            seed,
            temperature,
            top_p,
            granularity,
            base,
            base_index,
            out,
            roll,
        } => {
            let params = read_checkpoint(&ckpt)?;
            let slots = params.config.slot_count;
            let spec = match constraints {
                Some(p) => ConstraintSpec::from_json(&read_text(&p)?).with_context(|| p.display().to_string())?,
                None => ConstraintSpec::default(),
            };
            let base = match base {
                Some(p) => Some(record_at(&p, base_index)?.to_excerpt(slots)?),
                None => None,
            };
            let grid = match compile_constraints(&spec, base.as_ref(), slots) {
                Ok(g) => g,
                Err(CompileError::Infeasible(c)) => bail!("infeasible constraints: {c}"),
                Err(e) => return Err(e.into()),
            };
            let cfg = SamplerConfig {
                temperature: temperature.or(spec.temperature).unwrap_or(1.0),
                top_p: top_p.or(spec.top_p).unwrap_or(0.9),
                seed,
                granularity: match granularity {
                    GranularityArg::PerAttribute => Granularity::PerAttribute,
                    GranularityArg::PerNote => Granularity::PerNote,
                },
            };
            let (excerpt, trace) = generate(&grid, &params, &cfg)?;
            let violations = spec.violations(&excerpt, base.as_ref());
            if !violations.is_empty() {
                bail!("generated excerpt violates the spec: {}", violations.join("; "));
            }
            write_file(&out, &excerpt_to_midi(&excerpt))?;
            if let Some(r) = roll {
                write_file(&r, render_piano_roll(&excerpt, Some(&grid)).as_bytes())?;
            }
            let record = DatasetRecord::from_excerpt(format!("generated:{seed}"), &excerpt);
            println!("{}", serde_json::to_string(&record)?);
            eprintln!("{} notes, {} forward passes", excerpt.note_count(), trace.forward_passes);
            Ok(())
        }
        Command::Render { input, index, out } => {
            let record = record_at(&input, index)?;
            let excerpt = Excerpt::from_notes(&record.to_notes()?, record.notes.len().max(1))?;
            write_file(&out, render_piano_roll(&excerpt, None).as_bytes())
        }
        Command::Eval { ckpt, data, seed } => {
            let params = read_checkpoint(&ckpt)?;
            let excerpts = read_dataset(&data)?
                .iter()
                .map(|r| r.to_excerpt(params.config.slot_count))
                .collect::<Result<Vec<_>, _>>()?;
            let nll = evaluate(&excerpts, &params, seed, Execution::Parallel)?;
            println!("{}", serde_json::json!({ "examples": excerpts.len(), "nll": nll }));
            Ok(())
        }
        Command::Serve { ckpt, port, host } => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            let config = smlm_service::ServiceConfig::default();
            runtime.block_on(smlm_service::run(SocketAddr::new(host, port), ckpt, config))?;
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn record_at(path: &Path, index: usize) -> Result<DatasetRecord> {
    let mut records = read_dataset(path)?;
    if index >= records.len() {
        bail!("{} has {} records, no index {index}", path.display(), records.len());
    }
    Ok(records.swap_remove(index))
}
