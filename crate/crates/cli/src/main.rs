use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use liveroom::eval::MetricsReport;
use liveroom::harness::oracle::{run_choice_calibration, run_gradcheck, run_sarsa_oracle, run_slateq_oracle};
use liveroom::harness::{
    compare, eval_checkpoint_to, eval_to, generate_to, initial_agent, load_or_generate, train_to, AgentKind,
    Checkpoint,
};
use liveroom::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "liveroom", version, about = "Live-room recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for session simulation. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sessions under the logging policy and write the interaction log.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train an agent and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: AgentKind,
        /// Environment steps for online agents; defaults to `harness.train_steps`.
        #[arg(long)]
        steps: Option<u64>,
        /// Interaction log for DFM and SlateQ; regenerated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or an untrained agent, on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "agent")]
        checkpoint: Option<PathBuf>,
        /// Evaluates the untrained agent of this kind instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        agent: Option<AgentKind>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Side-by-side table of two sets of metrics reports, paired by seed.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        a: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        b: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic against finite-difference gradients on random models.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the brute-force MDP oracles: SARSA chain, slate decomposition and
    /// choice calibration.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SARSA sessions.
        #[arg(long, default_value_t = 2_500_000)]
        steps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> liveroom::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> liveroom::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|source| Error::Write { path, source })
}

fn report_line(pass: bool, text: String) -> bool {
    println!("[{}] {text}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn run(cli: Cli) -> liveroom::Result<bool> {
    match cli.command {
        Command::Generate { common } => {
            let config = load_config(&common)?;
            let m = generate_to(&config, &common.out, common.workers)?;
            println!("wrote {} records to {}", m.end_step, common.out.display());
        }
        Command::Train {
            common,
            agent,
            steps,
            data,
        } => {
            let config = load_config(&common)?;
            let steps = steps.unwrap_or(config.harness.train_steps);
            let (_, stats) = train_to(&config, agent, steps, data.as_deref(), &common.out, common.workers)?;
            println!(
                "{agent}: {} env steps, {} sessions, mean return {:.4}, {} updates",
                stats.env_steps, stats.sessions_completed, stats.mean_return, stats.updates
            );
        }
        Command::Eval {
            common,
            checkpoint,
            agent,
            data,
        } => {
            let config = load_config(&common)?;
            let report = match (checkpoint, agent) {
                (Some(path), _) => eval_to(&config, &path, data.as_deref(), &common.out, common.workers)?,
                (None, Some(kind)) => {
                    let needs_data = matches!(kind, AgentKind::Dfm | AgentKind::Slateq);
                    let dataset = if needs_data {
                        Some(load_or_generate(&config, data.as_deref(), common.workers)?)
                    } else {
                        None
                    };
                    let checkpoint = Checkpoint::new(&config, 0, initial_agent(&config, kind, dataset.as_ref())?);
                    eval_checkpoint_to(&config, &checkpoint, data.as_deref(), &common.out, common.workers)?
                }
                (None, None) => return Err(Error::InvalidArgument("need --checkpoint or --agent".into())),
            };
            print!("{}", report.to_json()?);
        }
        Command::Compare { a, b, out } => {
            let load = |paths: &[PathBuf]| -> liveroom::Result<Vec<MetricsReport>> {
                paths
                    .iter()
                    .map(|p| MetricsReport::from_json(&std::fs::read_to_string(p)?))
                    .collect()
            };
            let table = compare(&load(&a)?, &load(&b)?)?;
            let markdown = table.to_markdown();
            print!("{markdown}");
            if let Some(dir) = out {
                write_json(&dir, "comparison.json", &table)?;
                std::fs::write(dir.join("comparison.md"), markdown)?;
            }
        }
        Command::Gradcheck { seed, seeds, out } => {
            let rows = run_gradcheck(&(seed..seed + seeds).collect::<Vec<_>>())?;
            let mut ok = true;
            for r in &rows {
                ok &= report_line(
                    r.worst() < 1e-4,
                    format!(
                        "seed {}: max rel err critic {:.2e} policy {:.2e} dfm {:.2e}",
                        r.seed, r.critic, r.policy, r.dfm
                    ),
                );
            }
            if let Some(dir) = out {
                write_json(&dir, "gradcheck.json", &rows)?;
            }
            return Ok(ok);
        }
        Command::Oracle { seed, steps, out } => {
            let sarsa = run_sarsa_oracle(seed, steps)?;
            let slate = run_slateq_oracle(seed, 100_000, 50)?;
            let choice = run_choice_calibration(seed, 20, 100_000)?;
            let mut ok = report_line(
                sarsa.max_error <= 1e-3 && sarsa.greedy_matches,
                format!(
                    "sarsa chain: {} sessions, max |Q - Q*| {:.2e}, greedy matches {}",
                    sarsa.sessions, sarsa.max_error, sarsa.greedy_matches
                ),
            );
            ok &= report_line(
                slate.max_value_error <= 1e-2 && slate.exhaustive_matches == slate.instances,
                format!(
                    "slate decomposition: max |value - MC| {:.2e}; exhaustive = brute force on {}/{}",
                    slate.max_value_error, slate.exhaustive_matches, slate.instances
                ),
            );
            ok &= report_line(
                choice.max_total_variation < 0.01,
                format!(
                    "choice calibration: {} slates x {} samples, max TV {:.4}",
                    choice.slates, choice.samples, choice.max_total_variation
                ),
            );
            if let Some(dir) = out {
                write_json(&dir, "oracle_sarsa.json", &sarsa)?;
                write_json(&dir, "oracle_slate.json", &slate)?;
                write_json(&dir, "oracle_choice.json", &choice)?;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
