use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dme_cli::{
    ablate, check_trace, eval, gen_data, import_gaze, train_run, validate, CliError, EvalArgs, GenDataArgs, Preset,
    RunConfig,
};
use dme_core::client::ClientConfig;
use dme_core::planner::AblationMode;

#[derive(Parser)]
#[command(name = "dme", version, about = "Decision-conditioned driving planner toolkit")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Table3,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene, logic and dialogue dataset.
    GenData {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Total scene count (at least 1).
        #[arg(long, default_value_t = 320)]
        scenes: usize,
        /// Held-out scenes, taken from the end; defaults to a fifth.
        #[arg(long)]
        eval_scenes: Option<usize>,
        #[arg(long, default_value_t = 3)]
        agents: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write offline-paraphrased dialogues.
        #[arg(long)]
        augment: bool,
        /// Use a remote decision maker at this endpoint instead of the scripted one.
        #[arg(long)]
        dm_endpoint: Option<String>,
    },
    /// Train the planner from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's ablation mode.
        #[arg(long)]
        ablation: Option<AblationMode>,
    },
    /// Evaluate a checkpoint (or the expert) on the held-out scenes.
    Eval {
        #[arg(long, required_unless_present = "expert")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the expert trajectories instead of a checkpoint.
        #[arg(long)]
        expert: bool,
        #[arg(long)]
        data: PathBuf,
        /// Report path; `.md` writes markdown, anything else CSV.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        ablation: Option<AblationMode>,
        /// Planning threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Exit 1 when the average L2 exceeds this value.
        #[arg(long)]
        fail_if_l2_above: Option<f64>,
        /// Score logic with a remote judge at this endpoint.
        #[arg(long)]
        judge_endpoint: Option<String>,
    },
    /// Train and evaluate every ablation mode and write a combined report.
    Ablate {
        #[arg(long, value_enum)]
        preset: PresetArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Validate a record file or a dataset directory.
    Validate {
        path: PathBuf,
        /// Fail on the first bad line instead of listing bad lines.
        #[arg(long)]
        strict: bool,
    },
    /// Render a loss log or ablation report as SVG.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a decision trace covers every held-out scene.
    CheckTrace {
        trace: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Convert a clip,frame,x,y gaze CSV into per-window boxes.
    ImportGaze {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn client(endpoint: Option<String>) -> Option<ClientConfig> {
    endpoint.map(ClientConfig::new)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            seed,
            scenes,
            eval_scenes,
            agents,
            out,
            augment,
            dm_endpoint,
        } => {
            let manifest = gen_data(&GenDataArgs {
                seed,
                scenes,
                eval_scenes,
                agents,
                out,
                augment,
                decision_maker: client(dm_endpoint),
            })?;
            println!("{}", serde_json::to_string(&manifest).expect("manifest serializes"));
        }
        Command::Train { config, out, ablation } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = ablation {
                cfg.ablation = m;
            }
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let outcome = train_run(&cfg, &dir)?;
            if let Some(last) = outcome.log.last() {
                println!("final loss {:.6} after {} epochs", last.total, last.epoch);
            }
        }
        Command::Eval {
            checkpoint,
            expert,
            data,
            report,
            ablation,
            jobs,
            fail_if_l2_above,
            judge_endpoint,
        } => {
            let outcome = eval(&EvalArgs {
                checkpoint,
                expert,
                data,
                report,
                ablation,
                thresholds: None,
                jobs,
                fail_if_l2_above,
                judge: client(judge_endpoint),
            })?;
            println!(
                "{}",
                serde_json::to_string(&outcome.metrics).expect("metrics serialize")
            );
        }
        Command::Ablate {
            preset,
            config,
            out,
            jobs,
        } => {
            let cfg = RunConfig::load(&config)?;
            let PresetArg::Table3 = preset;
            let rows = ablate(&cfg, Preset::Table3, &out, jobs)?;
            for r in rows {
                println!(
                    "{}: L2 {:.2} col {:.2} mismatch {:.2}",
                    r.method, r.metrics.l2_avg, r.metrics.col_avg, r.metrics.mismatch_rate
                );
            }
        }
        Command::Validate { path, strict } => {
            let summary = validate(&path, strict)?;
            for (file, d) in &summary.diagnostics {
                eprintln!("{file}:{}: {}", d.line, d.message);
            }
            println!(
                "{} valid records, {} bad lines",
                summary.records,
                summary.diagnostics.len()
            );
        }
        Command::Plot { input, out } => dme_cli::plot::plot(&input, &out)?,
        Command::CheckTrace { trace, data } => {
            let coverage = check_trace(&trace, &data)?;
            println!("trace coverage {:.2}%", 100.0 * coverage);
        }
        Command::ImportGaze { csv, out } => {
            let records = import_gaze(&csv, &out)?;
            println!("{} gaze windows", records.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
