use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reasoning_game::harness::{
    cmd_audit, cmd_etl, cmd_eval, cmd_generate, cmd_inspect, cmd_topsim, cmd_train, AuditOptions, EvalOptions,
    HarnessError, LanguageSource, RunConfig, Stage, TrainOptions, CONFIG_FILE,
};

/// Worker threads for generation, auditing and language transfer.
const WORKERS_ENV: &str = "RGAME_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "rgame", version, about = "Rule-based reasoning game: data, agents and language metrics")]
struct Cli {
    /// Run configuration JSON (for example a previous run's config.json).
    #[arg(long, global = true, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Named profile: desk-tiny, desk-small, full, generalization.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Training seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the joint-game dataset and the pretraining set.
    Generate,
    /// Audit a dataset directory or generate run; exits 1 on any violation.
    Audit {
        path: PathBuf,
        /// Audit perturbation-generated candidates instead of the stored ones.
        #[arg(long)]
        perturbation: bool,
    },
    /// Train the speaker and listener.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Skip speaker pretraining.
        #[arg(long)]
        no_pretrain: bool,
        /// Previous train run to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generalization report, message-blocked audit and token table.
    Eval {
        run: Option<PathBuf>,
        /// Evaluate the symbolic oracle pair.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        no_blocked: bool,
        #[arg(long)]
        no_tokens: bool,
    },
    /// Topographic similarity in rule and panel space.
    Topsim {
        run: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "agent")]
        language: LanguageArg,
    },
    /// Language transfer to fresh listeners on other attribute ranges.
    Etl {
        run: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "agent")]
        language: LanguageArg,
    },
    /// Describe a run, dataset, checkpoint, log or curve.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Pretrain,
    Joint,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LanguageArg {
    Agent,
    Oracle,
    Random,
}

impl From<LanguageArg> for LanguageSource {
    fn from(l: LanguageArg) -> Self {
        match l {
            LanguageArg::Agent => LanguageSource::Agent,
            LanguageArg::Oracle => LanguageSource::Oracle,
            LanguageArg::Random => LanguageSource::Random,
        }
    }
}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    extern "C" {
        fn mallopt(param: i32, value: i32) -> i32;
    }
    const M_TRIM_THRESHOLD: i32 = -1;
    const M_MMAP_THRESHOLD: i32 = -3;
    // keep matrix buffers on the heap instead of mapping and unmapping them
    // every step
    unsafe {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn configure_workers() -> Result<(), HarnessError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Usage(e.to_string()))
}

fn resolve_config(cli: &Cli, run: Option<&Path>) -> Result<RunConfig, HarnessError> {
    let cfg = match (&cli.config, &cli.profile) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::profile(name)?,
        (None, None) => match run.map(|r| r.join(CONFIG_FILE)).filter(|p| p.is_file()) {
            Some(path) => RunConfig::load(&path)?,
            None => RunConfig::profile("desk-tiny")?,
        },
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn run(cli: &Cli) -> Result<bool, HarnessError> {
    configure_workers()?;
    match &cli.command {
        Command::Generate => {
            let cfg = resolve_config(cli, None)?;
            let o = cmd_generate(&cfg, &cli.out)?;
            for s in &o.splits {
                println!("{}/{}: {} problems, {} combos", s.dataset, s.split, s.problems, s.combos);
            }
            println!("run: {}", o.dir.display());
        }
        Command::Audit { path, perturbation } => {
            let o = cmd_audit(path, AuditOptions { perturbation: *perturbation })?;
            println!("audited {} problems, {} violations", o.problems, o.violations);
            for (split, n) in &o.failing {
                println!("  {split}: {n} failing problems");
            }
            for e in &o.examples {
                println!("  {e}");
            }
            return Ok(o.is_clean());
        }
        Command::Train { stage, no_pretrain, resume } => {
            let cfg = resolve_config(cli, None)?;
            let opts = TrainOptions {
                stage: match stage {
                    StageArg::Pretrain => Stage::Pretrain,
                    StageArg::Joint => Stage::Joint,
                    StageArg::Both => Stage::Both,
                },
                no_pretrain: *no_pretrain,
                resume: resume.clone(),
            };
            let o = cmd_train(&cfg, &cli.out, &opts)?;
            if let Some(p) = &o.pretrain {
                println!("pretrain token accuracy {:.4}", p.token_accuracy);
            }
            if let Some(acc) = o.final_train_accuracy() {
                println!("final train accuracy {acc:.4}");
            }
            if let Some(acc) = o.test_accuracy {
                println!("held-out accuracy {acc:.4}");
            }
            println!("run: {}", o.dir.display());
        }
        Command::Eval {
            run,
            oracle,
            no_blocked,
            no_tokens,
        } => {
            let cfg = resolve_config(cli, run.as_deref())?;
            let opts = EvalOptions {
                oracle: *oracle,
                blocked: !no_blocked,
                tokens: !no_tokens,
            };
            let o = cmd_eval(&cfg, run.as_deref(), &cli.out, opts)?;
            for s in &o.generalization.splits {
                println!("{}: {:.4} over {} problems", s.split, s.accuracy, s.problems);
            }
            if let Some(b) = &o.blocked {
                println!("message-blocked listener {:.4}", b.final_accuracy);
            }
            if let Some(acc) = o.with_message_accuracy {
                println!("with messages {acc:.4}");
            }
            println!("run: {}", o.dir.display());
        }
        Command::Topsim { run, language } => {
            let cfg = resolve_config(cli, run.as_deref())?;
            let o = cmd_topsim(&cfg, run.as_deref(), &cli.out, (*language).into())?;
            println!("distinct messages {}", o.distinct_messages);
            println!("rule space  {:.4} ± {:.4}", o.rule.mean, o.rule.stderr);
            println!("panel space {:.4} ± {:.4}", o.panel.mean, o.panel.stderr);
            println!("run: {}", o.dir.display());
        }
        Command::Etl { run, language } => {
            let cfg = resolve_config(cli, run.as_deref())?;
            let o = cmd_etl(&cfg, run.as_deref(), &cli.out, (*language).into())?;
            for p in &o.pairs {
                let (agent, rule, random) = p.report.finals();
                println!(
                    "{} -> {}: agent {agent:.4} rule {rule:.4} random {random:.4} oracle {:.4}",
                    p.source, p.target, p.oracle_accuracy
                );
            }
            println!("run: {}", o.dir.display());
        }
        Command::Inspect { path } => print!("{}", cmd_inspect(path)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    tune_allocator();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
