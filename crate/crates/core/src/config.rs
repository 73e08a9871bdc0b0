//! Run configuration: every path and hyperparameter one training/eval run
//! needs, in a single file that round-trips losslessly. Each command writes
//! its resolved config next to its outputs so runs are reproducible from the
//! artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::LossConfig;
use crate::rng;
use crate::trainer::TrainConfig;
use crate::vlm::ScoreConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub feasible: PathBuf,
    /// Normalized presence distributions (output of `score`).
    #[serde(default)]
    pub scores: Option<PathBuf>,
    /// Raw similarity rows; re-normalized with the current tau when sweeping.
    #[serde(default)]
    pub raw_scores: Option<PathBuf>,
    /// Binary embedding table, the alternative scoring input.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub seed: u64,
    pub loss: LossConfig,
    pub trainer: TrainConfig,
    pub score: ScoreConfig,
    pub eval: EvalConfig,
    /// Permissive feasible-set reading: negative annotations also count.
    #[serde(default)]
    pub feasible_include_negatives: bool,
    /// Provenance of generated benchmarks; required for annotation-rate
    /// sweeps.
    #[serde(default)]
    pub synth: Option<SyntheticSpec>,
}

impl RunConfig {
    /// Propagates the run seed into the trainer and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        self.trainer.seed = self.seed;
        self.trainer.validate()?;
        self.loss = self.loss.validated()?;
        self.score.validate()?;
        self.eval.validate()?;
        if let Some(spec) = &self.synth {
            spec.validate()?;
        }
        Ok(self)
    }

    /// Stable hash of the hyperparameters, stamped into checkpoints.
    pub fn config_hash(&self) -> u64 {
        let blob = serde_json::to_string(&(&self.loss, &self.trainer, &self.score, self.seed))
            .expect("config serializes");
        rng::fnv1a64(blob.as_bytes())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(Error::io(path))
    }
}
