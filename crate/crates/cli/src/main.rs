use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsg_core::corpus::Split;
use hsg_core::diagnostics::{gradient_suite, GRAD_TOLERANCE};
use hsg_core::run::pipeline;
use hsg_core::run::{RunConfig, SEED_ENV};
use hsg_core::Error;
use serde_json::json;

const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "hsg", version, about = "Hidden-state guided caption decoder training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set student.lambda=0.5`. Applied after the
    /// file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into `corpus_dir`.
    GenCorpus(ConfigArgs),
    /// Pretrain the teacher autoencoder.
    TrainTeacher(ConfigArgs),
    /// Pretrain the state network and train the student decoder.
    TrainStudent(ConfigArgs),
    /// Beam-search metrics of a student checkpoint.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of every op and loss.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Exhaustive-enumeration check of the policy-gradient estimators.
    EnumCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &a.set {
        cfg.set(s)?;
    }
    cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn progress(v: &impl serde::Serialize) {
    eprintln!("{}", serde_json::to_string(v).expect("serializable"));
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message}}));
    ExitCode::FAILURE
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::GenCorpus(a) => {
            let cfg = load_config(&a)?;
            let c = pipeline::gen_corpus(&cfg)?;
            print(&json!({
                "corpus_dir": cfg.corpus_dir,
                "train": c.train.len(),
                "val": c.val.len(),
                "test": c.test.len(),
                "vocab_size": c.vocab.len(),
            }));
        }
        Command::TrainTeacher(a) => {
            let cfg = load_config(&a)?;
            let out = pipeline::train_teacher(&cfg, progress)?;
            print(&json!({
                "checkpoint": out.checkpoint,
                "epochs": out.history.len(),
                "accuracy": out.accuracy,
            }));
        }
        Command::TrainStudent(a) => {
            let cfg = load_config(&a)?;
            let out = pipeline::train_student(&cfg, progress)?;
            print(&json!({
                "checkpoint": out.checkpoint,
                "best_epoch": out.best_epoch,
                "state_net_final_loss": out.state_net.last().map(|e| e.mean_loss),
                "history": out.history,
            }));
        }
        Command::Evaluate { cfg, checkpoint, split } => {
            let cfg = load_config(&cfg)?;
            let split: Split = split.parse()?;
            let m = pipeline::evaluate(&cfg, &checkpoint, split)?;
            print(&json!({
                "split": split.name(),
                "bleu4": m.bleu4,
                "rouge_l": m.rouge_l,
                "cider": m.cider,
            }));
        }
        Command::GradCheck { seeds } => {
            let entries = gradient_suite(seeds)?;
            let failed: Vec<_> = entries.iter().filter(|e| !e.passed).collect();
            print(&json!({
                "tolerance": GRAD_TOLERANCE,
                "checks": entries.len(),
                "failed": failed.len(),
                "entries": entries,
            }));
            if !failed.is_empty() {
                return Ok(fail("check_failed", format!("{} gradient checks failed", failed.len())));
            }
        }
        Command::EnumCheck { seed } => {
            let checks = pipeline::enum_check(seed)?;
            let mut failing = Vec::new();
            for c in &checks {
                for (name, r) in [("scst", &c.scst), ("hsg", &c.hsg)] {
                    if r.max_abs_diff > ORACLE_TOLERANCE {
                        failing.push(format!("{name}/{}: {:.3e}", c.family.name(), r.max_abs_diff));
                    }
                }
            }
            print(&json!({"tolerance": ORACLE_TOLERANCE, "checks": checks}));
            if !failing.is_empty() {
                return Ok(fail(
                    "check_failed",
                    format!("estimator expectation differs from the analytic gradient: {}", failing.join(", ")),
                ));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.render().to_string()),
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
