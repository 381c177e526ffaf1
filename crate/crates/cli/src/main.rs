//! `hcap`: batch front end for the capacity and harmonic-measure
//! estimators. Every run reads a JSON job (from a file, the command line,
//! or both) and writes `summary.json` plus CSV tables to an output
//! directory.
//!
//! Exit status: 0 on success, 1 on invalid input or a failed
//! precondition, 2 when the simulation ran but its output is flagged.

mod job;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use job::{ExperimentKind, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl From<hcap_core::Error> for CliError {
    fn from(e: hcap_core::Error) -> Self {
        match e {
            hcap_core::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            CliError::Validation(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hcap", version, about = "Monte Carlo half-plane capacity and harmonic measure estimators")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "HCAP_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Job file; command-line values override its fields.
    job: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=json` override, e.g. `n_per_node=8000` or `walk.eps_absorb=1e-5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Run a job file, whatever its command.
    Run(Common),
    /// Check that a hull is an H-hull on a grid.
    Validate(Common),
    /// Half-plane capacity by the line-integral estimator.
    Hcap(Common),
    /// Capacity relative to a parallel slit domain.
    BmdHcap(Common),
    /// Sample the harmonic measure from a point.
    HmSample(Common),
    /// Surrogate distance between two harmonic measures.
    HmDistance(Common),
    ProbeRegularity(Common),
    ProbeBeurling(Common),
    ProbeHitting(Common),
    /// Experiments along a built-in hull family.
    Experiment {
        kind: ExperimentKind,
        #[arg(long)]
        family: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn read_document(path: &Option<PathBuf>) -> Result<Option<Value>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Validation(format!("{} is not valid JSON: {e}", path.display())))
}

fn main_inner(cli: Cli) -> Result<Option<String>, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Validation("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    }
    let (common, fixed) = match cli.command {
        Sub::Run(c) => {
            if c.job.is_none() {
                return Err(CliError::Validation("run needs a job file".into()));
            }
            (c, Vec::new())
        }
        Sub::Validate(c) => (c, vec![("command".to_string(), Value::from("validate"))]),
        Sub::Hcap(c) => (c, vec![("command".to_string(), Value::from("hcap"))]),
        Sub::BmdHcap(c) => (c, vec![("command".to_string(), Value::from("bmd-hcap"))]),
        Sub::HmSample(c) => (c, vec![("command".to_string(), Value::from("hm-sample"))]),
        Sub::HmDistance(c) => (c, vec![("command".to_string(), Value::from("hm-distance"))]),
        Sub::ProbeRegularity(c) => (c, vec![("command".to_string(), Value::from("probe-regularity"))]),
        Sub::ProbeBeurling(c) => (c, vec![("command".to_string(), Value::from("probe-beurling"))]),
        Sub::ProbeHitting(c) => (c, vec![("command".to_string(), Value::from("probe-hitting"))]),
        Sub::Experiment { kind, family, common } => {
            let mut fixed = vec![
                ("command".to_string(), Value::from("experiment")),
                ("kind".to_string(), serde_json::to_value(kind).expect("kind serializes")),
            ];
            let family = family.or_else(|| (kind == ExperimentKind::Counterexample).then(|| "e".to_string()));
            if let Some(f) = family {
                fixed.push(("family".to_string(), Value::from(f)));
            }
            (common, fixed)
        }
    };
    let doc = read_document(&common.job)?;
    let overrides = Overrides { seed: common.seed, out: common.out, set: common.set, fixed };
    let job = job::load(doc, &overrides)?;
    let out_dir = job
        .out
        .clone()
        .ok_or_else(|| CliError::Validation("an output directory is mandatory (job field `out` or --out)".into()))?;
    let started = std::time::Instant::now();
    let outcome = run::execute(&job)?;
    output::write(&out_dir, &job, &outcome, started.elapsed().as_secs_f64())?;
    if let Some(msg) = &outcome.validation_failure {
        return Err(CliError::Validation(msg.clone()));
    }
    if let Some(msg) = &outcome.numerical_failure {
        return Err(CliError::Numerical(msg.clone()));
    }
    Ok(Some(format!("wrote {}", out_dir.join(output::SUMMARY).display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(msg) => {
            if let Some(m) = msg {
                eprintln!("{m}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
