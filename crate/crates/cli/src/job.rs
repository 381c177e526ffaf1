//! Job files: a versioned JSON document naming one command and its
//! parameters. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use hcap_core::bmd::ChainSetup;
use hcap_core::geometry::{Hull, Point, Slit, SlitDomain};
use hcap_core::measures::TestDictionary;
use hcap_core::sampler::WalkConfig;
use hcap_core::sequences::{Budgets, EstimatorKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const JOB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub walk: WalkSection,
    pub job: Command,
}

/// Walk parameters other than the seed, which is top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub eps_absorb: f64,
    pub max_steps: u64,
    pub chunk_size: usize,
}

impl Default for WalkSection {
    fn default() -> Self {
        let d = WalkConfig::default();
        WalkSection { eps_absorb: d.eps_absorb, max_steps: d.max_steps, chunk_size: d.chunk_size }
    }
}

impl JobFile {
    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            eps_absorb: self.walk.eps_absorb,
            max_steps: self.walk.max_steps,
            seed: self.seed,
            chunk_size: self.walk.chunk_size,
        }
    }

    /// Resolved configuration with every default filled in, as embedded in
    /// the summary.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("job serializes")
    }

    /// SHA-256 of the resolved configuration in canonical (sorted-key,
    /// compact) form.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(&self.resolved()).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    Validate {
        hull: Hull,
        #[serde(default = "default_resolution")]
        resolution: f64,
    },
    Hcap {
        hull: Hull,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default = "default_nodes")]
        xi_nodes: usize,
        #[serde(default = "default_per_node")]
        n_per_node: usize,
        /// Heights for the vertical estimator; empty skips it.
        #[serde(default)]
        vertical_heights: Vec<f64>,
        #[serde(default = "default_vertical")]
        n_vertical: usize,
    },
    BmdHcap {
        hull: Hull,
        setup: ChainSetup,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default = "default_nodes")]
        xi_nodes: usize,
        #[serde(default = "default_per_node")]
        n_per_node: usize,
        #[serde(default = "default_chain")]
        n_chain: usize,
    },
    HmSample {
        hull: Hull,
        #[serde(default)]
        slits: SlitDomain,
        z: Point,
        n: usize,
    },
    HmDistance {
        hull_a: Hull,
        hull_b: Hull,
        #[serde(default)]
        slits: SlitDomain,
        z: Point,
        n: usize,
        /// Defaults to the standard dictionary around `hull_b`.
        #[serde(default)]
        dictionary: Option<TestDictionary>,
    },
    ProbeRegularity {
        #[serde(default)]
        hull: Hull,
        #[serde(default)]
        slits: SlitDomain,
        points: Vec<Point>,
        eps: Vec<f64>,
        n: usize,
    },
    ProbeBeurling {
        slit: Slit,
        eps: f64,
        /// `ρ/ε` values; the start point sits above the slit midpoint.
        ratios: Vec<f64>,
        n: usize,
        #[serde(default)]
        hull: Hull,
        #[serde(default)]
        slits: SlitDomain,
    },
    ProbeHitting {
        slits: SlitDomain,
        targets: Vec<Point>,
        eps_list: Vec<f64>,
        #[serde(default = "default_starts")]
        starts_per_slit: usize,
        n: usize,
    },
    Experiment(ExperimentJob),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Continuity,
    Weak,
    Counterexample,
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentJob {
    pub kind: ExperimentKind,
    pub family: String,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub budgets: Budgets,
    /// Start point of the weak-convergence experiment; defaults to the
    /// family's reference point.
    #[serde(default)]
    pub z0: Option<Point>,
    #[serde(default)]
    pub dictionary: Option<TestDictionary>,
    /// Grid resolution of kernel certificates and monotone limits.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// Largest index used by kernel certificates and monotone limits.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Replaces the family's claimed limit before certification.
    #[serde(default)]
    pub claimed_limit: Option<Hull>,
}

fn default_resolution() -> f64 {
    1e-2
}
fn default_half_width() -> f64 {
    60.0
}
fn default_nodes() -> usize {
    64
}
fn default_per_node() -> usize {
    4000
}
fn default_vertical() -> usize {
    20_000
}
fn default_chain() -> usize {
    20_000
}
fn default_starts() -> usize {
    3
}
fn default_n_list() -> Vec<usize> {
    hcap_core::sequences::DEFAULT_N_LIST.to_vec()
}
fn default_estimator() -> EstimatorKind {
    EstimatorKind::Plain
}
fn default_n_max() -> usize {
    256
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Hcap { .. } => "hcap",
            Command::BmdHcap { .. } => "bmd-hcap",
            Command::HmSample { .. } => "hm-sample",
            Command::HmDistance { .. } => "hm-distance",
            Command::ProbeRegularity { .. } => "probe-regularity",
            Command::ProbeBeurling { .. } => "probe-beurling",
            Command::ProbeHitting { .. } => "probe-hitting",
            Command::Experiment(_) => "experiment",
        }
    }
}

/// Command-line values layered over the job document before it is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `key=json` assignments; `walk.*` keys go to the walk section, other
    /// dotted keys are paths inside `job`.
    pub set: Vec<String>,
    /// Fields the subcommand itself fixes, such as `command` or `kind`.
    pub fixed: Vec<(String, Value)>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Validation(format!("empty segment in key `{path}`")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Validation(format!("`{path}` does not address an object field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Parse a `key=value` assignment; values that are not valid JSON are taken
/// as strings.
fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("expected key=value, got `{s}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Merge the job document (if any) with the overrides and parse it.
pub fn load(document: Option<Value>, ov: &Overrides) -> Result<JobFile, CliError> {
    let mut doc = document.unwrap_or_else(|| serde_json::json!({ "version": JOB_VERSION, "job": {} }));
    if !doc.is_object() {
        return Err(CliError::Validation("job file must hold a JSON object".into()));
    }
    for (key, value) in &ov.fixed {
        if let Some(existing) = doc.get("job").and_then(|j| j.get(key)) {
            if existing != value {
                return Err(CliError::Validation(format!(
                    "job file has {key} = {existing} but the command line asks for {value}"
                )));
            }
        }
        set_path(&mut doc, &format!("job.{key}"), value.clone())?;
    }
    for s in &ov.set {
        let (key, value) = parse_assignment(s)?;
        let path = if key.starts_with("walk.") { key } else { format!("job.{key}") };
        set_path(&mut doc, &path, value)?;
    }
    if let Some(seed) = ov.seed {
        set_path(&mut doc, "seed", Value::from(seed))?;
    }
    if let Some(out) = &ov.out {
        set_path(&mut doc, "out", Value::from(out.to_string_lossy().into_owned()))?;
    }
    if doc.get("seed").is_none() {
        return Err(CliError::Validation("a seed is mandatory (job field `seed` or --seed)".into()));
    }
    let job: JobFile = serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("bad job: {e}")))?;
    if job.version != JOB_VERSION {
        return Err(CliError::Validation(format!(
            "unsupported job version {} (expected {JOB_VERSION})",
            job.version
        )));
    }
    job.walk_config().check()?;
    Ok(job)
}
