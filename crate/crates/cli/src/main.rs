use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use skanet_cli::commands::*;
use skanet_cli::config::{RunConfig, Scale};
use skanet_cli::{exit_code, OUT_ROOT_ENV};

/// Compound GNSS jamming classification with SKANet.
#[derive(Parser, Debug)]
#[command(name = "skanet", version)]
struct Cli {
    /// TOML file layered over the scale preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for synthesis and feature loading.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to `$SKANET_OUT/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Preset the config file overrides.
    #[arg(long, global = true, value_enum, default_value_t = Scale::Paper)]
    scale: Scale,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate signals and feature images over the configured grid.
    Synth,
    /// Compute feature images for a manifest holding only signals.
    Featurize { manifest: PathBuf },
    /// Train on a featurized manifest.
    Train { manifest: PathBuf },
    /// Evaluate a checkpoint; with --split only its test indices are used.
    Eval {
        /// Checkpoint written by train or fuse.
        checkpoint: PathBuf,
        /// Featurized manifest (manifest.jsonl).
        manifest: PathBuf,
        /// split.json written by train.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Fold ACB branches into single kernels and verify equivalence.
    Fuse { checkpoint: PathBuf },
    /// Print the FLOPs report of the configured model.
    Flops,
    /// Train and compare the four ablation variants.
    Ablate { manifest: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Fuse { .. } => "fuse",
            Command::Flops => "flops",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("skanet-out"));
        root.join(cli.command.name())
    });
    let cfg = || RunConfig::load(cli.scale, cli.config.as_deref(), cli.seed);
    let jobs = cli.jobs.max(1);
    match &cli.command {
        Command::Synth => {
            let m = cmd_synth(&cfg()?, &out, jobs)?;
            println!("wrote {} records to {}", m.records.len(), out.display());
        }
        Command::Featurize { manifest } => {
            let m = cmd_featurize(manifest, &out, jobs)?;
            println!("featurized {} records into {}", m.records.len(), out.display());
        }
        Command::Train { manifest } => {
            let s = cmd_train(manifest, &cfg()?, &out, jobs)?;
            println!("trained {} run(s), {} parameters; test OA {:.2} +- {:.2} %", s.runs, s.params, s.mean_test_oa, s.std_test_oa);
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Eval { checkpoint, manifest, split } => {
            let s = cmd_eval(checkpoint, manifest, split.as_deref(), &out, jobs)?;
            println!("OA {:.2} % over {} samples (loss {:.4})", s.overall_accuracy, s.samples, s.loss);
            println!("jnr_db,accuracy");
            for r in &s.per_jnr {
                println!("{},{:.2}", r.jnr_db, r.accuracy);
            }
        }
        Command::Fuse { checkpoint } => {
            let r = cmd_fuse(checkpoint, &out, cli.seed.unwrap_or(0))?;
            println!(
                "fused {} -> {} parameters; max deviation {:.3e} (stored), {:.3e} (64-bit)",
                r.params_train_form, r.params_fused, r.max_abs_deviation, r.max_abs_deviation_f64
            );
        }
        Command::Flops => {
            let cfg = cfg()?;
            let report = cmd_flops(&cfg)?;
            print!("{}", report.to_table());
            if cli.out.is_some() {
                write_flops(&cfg, &report, &out)?;
            }
        }
        Command::Ablate { manifest } => {
            let rows = cmd_ablate(manifest, &cfg()?, &out, jobs)?;
            println!("variant,params,mean_oa,std_oa");
            for r in rows {
                println!("{},{},{:.2},{:.2}", r.variant.name(), r.params, r.mean_oa, r.std_oa);
            }
        }
    }
    Ok(())
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", single_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn single_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

