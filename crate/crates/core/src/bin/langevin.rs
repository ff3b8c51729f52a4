use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use langevin::config::load_config;
use langevin::data::Dataset;
use langevin::diagnostics::mess;
use langevin::eval::{adversarial_accuracy, ood_max_prob};
use langevin::harness::{run_suite, write_adversarial, write_ood, RunArtifacts, Trainer};
use langevin::plots::{emit_plots, run_dirs};
use langevin::Error;

#[derive(Parser)]
#[command(version, about = "Langevin samplers for CNN classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured sampler (or every suite member).
    Run {
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Recompute mESS for a run's chain.
    Diagnose {
        run_dir: PathBuf,
        /// Burn-in fraction; defaults to the run's setting.
        #[arg(long)]
        burn_in: Option<f64>,
    },
    /// FGSM accuracy of a run's ensemble on its test set.
    Attack {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
    },
    /// Max-probability histogram of a run's ensemble on an IDX image file.
    Ood { run_dir: PathBuf, dataset: PathBuf },
    /// Gather figure CSVs from a run or suite directory.
    Plots { run_dir: PathBuf },
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::MissingInput(_))
        )
    })
}

fn run(config: &Path, resume: bool) -> anyhow::Result<()> {
    let cfg = load_config(config).with_context(|| format!("loading {}", config.display()))?;
    if resume {
        if !cfg.suite.is_empty() {
            for s in &cfg.suite {
                Trainer::resume(cfg.for_sampler(*s))?.finish()?;
            }
        } else {
            Trainer::resume(cfg)?.finish()?;
        }
        return Ok(());
    }
    let mut failed = None;
    for r in run_suite(&cfg) {
        match r {
            Ok(s) => println!(
                "{}: test {:.4} evaluated {:.4} -> {}",
                s.kind,
                s.final_test_accuracy,
                s.eval_accuracy,
                s.dir.display()
            ),
            Err(e) => {
                log::error!("{e}");
                failed.get_or_insert(e);
            }
        }
    }
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn diagnose(dir: &Path, burn_in: Option<f64>) -> anyhow::Result<()> {
    for run in run_dirs(dir)? {
        let cfg = load_config(&run.join(langevin::harness::CONFIG_ECHO_FILE))?;
        let state = langevin::checkpoint::read_checkpoint(&run.join(langevin::harness::CHECKPOINT_FILE))?;
        let chain = state
            .chain
            .after_burn_in(burn_in.unwrap_or(cfg.diagnostics.burn_in));
        let report = mess(&chain)?;
        report.write_csv(std::fs::File::create(run.join("ess.csv"))?)?;
        println!(
            "{}: mESS {:.3} over n = {} ({} coordinates, {} excluded)",
            state.kind,
            report.mess,
            report.n,
            report.p(),
            report.excluded.len()
        );
    }
    Ok(())
}

fn attack(dir: &Path, epsilon: f64) -> anyhow::Result<()> {
    for run in run_dirs(dir)? {
        let a = RunArtifacts::open(&run)?;
        let r = adversarial_accuracy(&a.net, &a.ensemble()?, &a.test, epsilon)?;
        write_adversarial(&run.join(format!("adversarial_eps{epsilon}.csv")), &r)?;
        println!(
            "{}: clean {:.4} adversarial {:.4} (eps {epsilon})",
            a.state.kind, r.clean_accuracy, r.adversarial_accuracy
        );
    }
    Ok(())
}

fn ood(dir: &Path, dataset: &Path) -> anyhow::Result<()> {
    let data = Dataset::from_idx_images("ood", dataset)?;
    let stem = dataset
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    for run in run_dirs(dir)? {
        let a = RunArtifacts::open(&run)?;
        let h = ood_max_prob(&a.net, &a.ensemble()?, &data)?;
        write_ood(&run, &format!("ood_{stem}"), &h)?;
        println!(
            "{}: mean max-prob {:.4}, median {:.4}",
            a.state.kind, h.mean, h.median
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, resume } => run(config, *resume),
        Command::Diagnose { run_dir, burn_in } => diagnose(run_dir, *burn_in),
        Command::Attack { run_dir, epsilon } => attack(run_dir, *epsilon),
        Command::Ood { run_dir, dataset } => ood(run_dir, dataset),
        Command::Plots { run_dir } => emit_plots(run_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
