use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::sdr::EstimatorConfig;
use crate::simulation::{DgpParams, StudyGrid};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything that determines a run's outputs. Loaded from a TOML file,
/// overridden by flags, and echoed into every output file. The output
/// directory is not part of it, so reruns into a different directory
/// produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<String>,
    pub policy_prime: String,
    pub policy_dprime: String,
    /// `baseline`, `adjacent` or `file:<path>`.
    pub contrast: String,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub inference: InferenceConfig,
    pub dgp: DgpParams,
    pub grid: StudyGrid,
    /// Study worker threads; 0 uses the available parallelism.
    pub threads: usize,
    /// Sample size for `generate`.
    pub n: usize,
    /// Number of time points for `contrast` when no input is given.
    pub tau: Option<usize>,
    pub dump_eif: bool,
    pub keep_replicates: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            input: None,
            policy_prime: "identity".into(),
            policy_dprime: "shift:-1".into(),
            contrast: "baseline".into(),
            seed: 0,
            estimator: EstimatorConfig::default(),
            inference: InferenceConfig::default(),
            dgp: DgpParams::default(),
            grid: StudyGrid::default(),
            threads: 0,
            n: 1000,
            tau: None,
            dump_eif: false,
            keep_replicates: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash(),
            seed: self.seed,
            config: self.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Provenance {
    /// First line of every CSV and SVG output.
    pub fn comment(&self) -> String {
        format!(
            "lmtp schema_version={} config_hash={} seed={}",
            self.schema_version, self.config_hash, self.seed
        )
    }
}
