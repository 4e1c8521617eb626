use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use countkey::predict::FeatureSet;
use countkey::Execution;
use countkey_cli::{
    cmd_counts, cmd_eval, cmd_pipeline, cmd_select, cmd_synth, cmd_verify_bound, CliError, EvalMode, PipelineConfig,
};

/// Counting-key selection pipeline. Set COUNTKEY_LOG=debug for more output.
#[derive(Parser)]
#[command(name = "countkey", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory for all artifacts; overrides `workdir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic impression stream.
    Synth(#[command(flatten)] Common),
    /// Select counting keys on the selection window.
    Select(#[command(flatten)] Common),
    /// Build a count table over the count window.
    Counts {
        #[command(flatten)]
        common: Common,
        /// ACF or RANDOM-SPARSE.
        #[arg(long, default_value = "ACF")]
        features: FeatureSet,
    },
    /// Run one experiment on the eval window.
    Eval {
        #[command(flatten)]
        common: Common,
        /// online or batch.
        #[arg(long, default_value = "online")]
        mode: EvalMode,
        /// BASE, ACF or RANDOM-SPARSE.
        #[arg(long, default_value = "ACF")]
        features: FeatureSet,
    },
    /// Check the split-gain lower bound on random distributions.
    VerifyBound {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run trials on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run every stage and every experiment.
    Pipeline(#[command(flatten)] Common),
}

fn load(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.workdir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let s = cmd_synth(&load(&c)?)?;
            println!("impressions\t{}\nclicks\t{}", s.n_impressions, s.n_clicks);
            for k in &s.truth {
                println!("planted\t{k}");
            }
        }
        Command::Select(c) => {
            let s = cmd_select(&load(&c)?)?;
            println!("users\t{}\ncandidates\t{}", s.n_users, s.n_candidates);
            for k in &s.keys {
                println!("key\t{k}");
            }
        }
        Command::Counts { common, features } => {
            let s = cmd_counts(&load(&common)?, features)?;
            println!("window\t{} impressions\t{} clicks", s.n_impressions, s.n_clicks);
            for (k, (i, e)) in s.keys.iter().zip(&s.totals) {
                println!("total\t{k}\t{i}\t{e}");
            }
            println!("wrote\t{}", s.path.display());
        }
        Command::Eval { common, mode, features } => {
            let (r, path) = cmd_eval(&load(&common)?, mode, features)?;
            println!(
                "final_rce\t{}\nn_holdout\t{}\nwrote\t{}",
                r.final_rce,
                r.n_holdout,
                path.display()
            );
        }
        Command::VerifyBound {
            trials,
            seed,
            sequential,
        } => {
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let s = cmd_verify_bound(trials, seed, exec)?;
            println!(
                "trials\t{}\nviolations\t{}\ntight\t{}\nmin_slack\t{}",
                s.n_trials, s.violations, s.tight, s.min_slack
            );
        }
        Command::Pipeline(c) => {
            for path in cmd_pipeline(&load(&c)?)? {
                println!("wrote\t{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COUNTKEY_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(2, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
