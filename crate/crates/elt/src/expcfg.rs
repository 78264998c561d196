//! Experiment configuration: strict JSON (unknown keys rejected), a required
//! version field, and the end-to-end training run it describes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ckpt;
use crate::data::DataSourceSpec;
use crate::error::{EltError, Result};
use crate::model::{LoopConfig, LoopedModel, Mode};
use crate::rng::{derive_seed, rng_from_seed};
use crate::train::{DistillSpace, LossBreakdown, OptimizerConfig, TrainCsv, Trainer};

pub const CONFIG_VERSION: &str = "elt-config-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub total_steps: usize,
    pub batch_size: usize,
    /// Probability of replacing the class label with the null class.
    #[serde(default)]
    pub label_drop: f64,
    #[serde(default)]
    pub distill_space: DistillSpace,
    /// Write an intermediate checkpoint every this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ckpt_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: String,
    pub model: LoopConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainSection,
    pub data: DataSourceSpec,
    pub seed: u64,
    /// false trains the vanilla looping baseline: teacher ground-truth only.
    pub ilsd_enabled: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| EltError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| EltError::Config(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(EltError::Config(format!(
                "unsupported config version {:?}, expected {CONFIG_VERSION:?}",
                self.version
            )));
        }
        self.model.validate()?;
        if self.train.total_steps == 0 || self.train.batch_size == 0 {
            return Err(EltError::Config(
                "total_steps and batch_size must be >= 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.train.label_drop) {
            return Err(EltError::Config("label_drop outside [0, 1]".to_string()));
        }
        match (&self.model.mode, &self.data) {
            (
                Mode::Masked,
                DataSourceSpec::MarkovGrid {
                    shape,
                    vocab,
                    n_classes,
                    ..
                },
            ) => {
                let n: usize = shape.iter().product();
                if n != self.model.seq_len {
                    return Err(EltError::Config(format!(
                        "source shape {:?} flattens to {n}, model seq_len is {}",
                        shape, self.model.seq_len
                    )));
                }
                if *vocab != self.model.vocab_size()? {
                    return Err(EltError::Config("vocab mismatch between model and source".to_string()));
                }
                if *n_classes != self.model.n_classes {
                    return Err(EltError::Config("class count mismatch between model and source".to_string()));
                }
            }
            (Mode::Diffusion, DataSourceSpec::GaussianMixture { seq_len, timesteps, .. }) => {
                if *seq_len != self.model.seq_len {
                    return Err(EltError::Config("seq_len mismatch between model and source".to_string()));
                }
                if self.model.latent_dim()? != 2 {
                    return Err(EltError::Config(
                        "the mixture source is 2-d; latent_dim must be 2".to_string(),
                    ));
                }
                if *timesteps == 0 {
                    return Err(EltError::Config("timesteps must be >= 1".to_string()));
                }
            }
            (mode, src) => {
                return Err(EltError::Config(format!(
                    "mode {mode:?} incompatible with source {src:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_ckpt: PathBuf,
    pub csv: PathBuf,
    pub steps_run: usize,
    pub last: Option<LossBreakdown>,
}

/// Run the configured training end to end: deterministic in the seed,
/// one CSV row per step, checkpoints at configured intervals and at the end.
pub fn run_training(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let model = LoopedModel::init(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        cfg.optimizer.clone(),
        cfg.train.total_steps,
        cfg.ilsd_enabled,
        cfg.train.distill_space,
    )?;
    let csv_path = out_dir.join("train.csv");
    let mut csv = TrainCsv::create(&csv_path)?;
    let mut step_rng = rng_from_seed(derive_seed(cfg.seed, 0xe17));
    let mut last = None;
    for step in 0..cfg.train.total_steps {
        let batch = cfg.data.assemble_batch(
            cfg.train.batch_size,
            cfg.train.label_drop,
            derive_seed(cfg.seed, step as u64),
        )?;
        let stats = trainer.train_step(&batch, &mut step_rng)?;
        csv.append(&stats)?;
        last = Some(stats.breakdown);
        if let Some(every) = cfg.train.ckpt_every {
            if every > 0 && (step + 1) % every == 0 && step + 1 < cfg.train.total_steps {
                let path = out_dir.join(format!("model-step{:06}.ckpt", step + 1));
                ckpt::save(&path, trainer.model().cfg(), trainer.model().params())?;
            }
        }
    }
    csv.finish()?;
    let final_ckpt = out_dir.join("model-final.ckpt");
    let model = trainer.into_model();
    ckpt::save(&final_ckpt, model.cfg(), model.params())?;
    Ok(TrainOutcome {
        final_ckpt,
        csv: csv_path,
        steps_run: cfg.train.total_steps,
        last,
    })
}
