use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reward_lab::experiment::{self, ExperimentConfig, ExperimentError};
use reward_lab::reward::{RewardKind, RewardSpec};
use reward_lab::service::RewardResponse;

/// Verifiable rewards and GRPO training on a synthetic judge.
#[derive(Debug, Parser)]
#[command(name = "reward-lab", version)]
struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides env.seed and grpo.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding output_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen raw ratings and build the normalized MOS table.
    Mos {
        /// CSV with header participant,sample,dimension,score.
        input: PathBuf,
    },
    /// PLCC, SROCC and MainScore between two id,score files.
    Eval { pred: PathBuf, gt: PathBuf },
    /// Score one response against a ground-truth score.
    Reward {
        /// Model response text.
        response: String,
        #[arg(long)]
        gt: f64,
        #[arg(long)]
        kind: Option<RewardKind>,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long = "d0")]
        d_0: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train the toy judge policy with GRPO.
    Train {
        /// Scenario preset, as if `scenario = NAME` were in the config.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Tabulate expected reward per depth and format choice.
    Oracle {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Serve the reward over HTTP.
    Serve,
}

fn load(cli: &Cli, scenario: Option<&str>) -> Result<ExperimentConfig, ExperimentError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), scenario)?;
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Mos { input } => {
            let cfg = load(cli, None)?;
            let outcome = experiment::cmd_mos(input, &cfg, &out_dir(cli, &cfg))?;
            let rejected = &outcome.output.screening.rejected;
            println!(
                "{} stimuli, {} participant(s) rejected{}",
                outcome.output.table.len(),
                rejected.len(),
                if rejected.is_empty() {
                    String::new()
                } else {
                    format!(": {}", rejected.iter().cloned().collect::<Vec<_>>().join(", "))
                }
            );
            list(&outcome.files);
        }
        Command::Eval { pred, gt } => {
            let cfg = load(cli, None)?;
            let (report, files) = experiment::cmd_eval(pred, gt, &cfg, &out_dir(cli, &cfg))?;
            print!("{}", report.to_csv());
            list(&files);
        }
        Command::Reward { response, gt, kind, r_min, d_0, lambda } => {
            let cfg = load(cli, None)?;
            let base = cfg.reward;
            let spec = RewardSpec {
                kind: kind.unwrap_or(base.kind),
                r_min: r_min.unwrap_or(base.r_min),
                d_0: d_0.unwrap_or(base.d_0),
                lambda: lambda.unwrap_or(base.lambda),
                ..base
            };
            let b = experiment::cmd_reward(response, *gt, &spec)?;
            let shown = RewardResponse {
                parsed_score: b.parsed.score,
                format_ok: b.parsed.format_ok,
                r_acc: b.r_acc,
                r_fmt: b.r_fmt,
                r_total: b.r_total,
            };
            println!("{}", serde_json::to_string(&shown).expect("response serializes"));
        }
        Command::Train { scenario } => {
            let cfg = load(cli, scenario.as_deref())?;
            let outcome = experiment::cmd_train(&cfg, &out_dir(cli, &cfg))?;
            let last = outcome.log.steps.last();
            println!(
                "scenario {}: {} steps, mean depth {:.3} -> {:.3}, modal depth {} -> {}, format rate {:.3}",
                cfg.scenario,
                outcome.log.len(),
                outcome.initial.mean_depth(),
                outcome.policy.mean_depth(),
                outcome.initial.modal_depth(),
                outcome.policy.modal_depth(),
                last.map_or(0.0, |s| s.format_rate),
            );
            list(&outcome.files);
        }
        Command::Oracle { scenario } => {
            let cfg = load(cli, scenario.as_deref())?;
            let (table, files) = experiment::cmd_oracle(&cfg, &out_dir(cli, &cfg))?;
            print!("{}", table.to_csv());
            println!("optimal depth {}", table.optimal_depth);
            list(&files);
        }
        Command::Serve => {
            let cfg = load(cli, None)?;
            experiment::cmd_serve(&cfg)?;
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
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
