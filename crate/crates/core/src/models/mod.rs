//! Sequence classifiers over embedding frames.
//!
//! Three architectures behind one config:
//!
//! - `class_latent` — cross-attention from per-class learned latent arrays to
//!   the input frames. Attention and projection weights are shared across
//!   classes; only the latent arrays are class-indexed. Logits come from a
//!   factorized projection: a shared feature reduction followed by one joint
//!   linear map over the flattened (latent, feature) axes.
//! - `transformer_pool` — self-attention blocks over frames, masked mean
//!   pooling over time, dense head.
//! - `perceiver_pool` — one shared latent array cross-attends to frames,
//!   self-attention blocks over latents, mean over the latent axis, dense
//!   head.

pub mod checkpoint;
pub mod classifier;
pub mod loss;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use classifier::{BatchItem, SeqClassifier};
pub use loss::{bce_loss, predict, sigmoid};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    ClassLatent,
    TransformerPool,
    PerceiverPool,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::ClassLatent => "class_latent",
            Architecture::TransformerPool => "transformer_pool",
            Architecture::PerceiverPool => "perceiver_pool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class_latent" => Ok(Architecture::ClassLatent),
            "transformer_pool" => Ok(Architecture::TransformerPool),
            "perceiver_pool" => Ok(Architecture::PerceiverPool),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }

    pub fn all() -> [Architecture; 3] {
        [
            Architecture::TransformerPool,
            Architecture::PerceiverPool,
            Architecture::ClassLatent,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskConditioning {
    None,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub latents_per_class: usize,
    pub latent_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub reduce_dim: usize,
    pub num_self_blocks: usize,
    pub task_conditioning: TaskConditioning,
    pub input_dim: usize,
    pub num_tasks: usize,
    pub use_positions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::ClassLatent,
            num_classes: 14,
            latents_per_class: 4,
            latent_dim: 256,
            model_dim: 256,
            heads: 4,
            reduce_dim: 16,
            num_self_blocks: 1,
            task_conditioning: TaskConditioning::None,
            input_dim: 128,
            num_tasks: 3,
            use_positions: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.latents_per_class == 0 || self.reduce_dim == 0 {
            return Err(Error::Config(
                "num_classes, latents_per_class and reduce_dim must be >= 1".into(),
            ));
        }
        if self.heads == 0 || self.latent_dim % self.heads != 0 || self.model_dim % self.heads != 0
        {
            return Err(Error::Config(format!(
                "heads ({}) must divide latent_dim ({}) and model_dim ({})",
                self.heads, self.latent_dim, self.model_dim
            )));
        }
        if self.use_positions && self.model_dim % 2 != 0 {
            return Err(Error::Config(
                "model_dim must be even when positional encodings are enabled".into(),
            ));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.task_conditioning == TaskConditioning::Embedding && self.num_tasks == 0 {
            return Err(Error::Config("task conditioning needs num_tasks >= 1".into()));
        }
        Ok(())
    }

    /// Shared latent count for the perceiver baseline: C * L, so its latent
    /// budget matches the class-latent model.
    pub fn shared_latents(&self) -> usize {
        self.num_classes * self.latents_per_class
    }

    pub fn to_kv(&self) -> String {
        let task = match self.task_conditioning {
            TaskConditioning::None => "none",
            TaskConditioning::Embedding => "embedding",
        };
        format!(
            "architecture={}\nnum_classes={}\nlatents_per_class={}\nlatent_dim={}\nmodel_dim={}\nheads={}\nreduce_dim={}\nnum_self_blocks={}\ntask_conditioning={}\ninput_dim={}\nnum_tasks={}\nuse_positions={}\n",
            self.architecture.as_str(),
            self.num_classes,
            self.latents_per_class,
            self.latent_dim,
            self.model_dim,
            self.heads,
            self.reduce_dim,
            self.num_self_blocks,
            task,
            self.input_dim,
            self.num_tasks,
            self.use_positions
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad config line '{line}'")))?;
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad value for {key}: '{v}'")))
            };
            match key {
                "architecture" => cfg.architecture = Architecture::parse(value)?,
                "num_classes" => cfg.num_classes = parse_usize(value)?,
                "latents_per_class" => cfg.latents_per_class = parse_usize(value)?,
                "latent_dim" => cfg.latent_dim = parse_usize(value)?,
                "model_dim" => cfg.model_dim = parse_usize(value)?,
                "heads" => cfg.heads = parse_usize(value)?,
                "reduce_dim" => cfg.reduce_dim = parse_usize(value)?,
                "num_self_blocks" => cfg.num_self_blocks = parse_usize(value)?,
                "task_conditioning" => {
                    cfg.task_conditioning = match value {
                        "none" => TaskConditioning::None,
                        "embedding" => TaskConditioning::Embedding,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown task_conditioning '{other}'"
                            )))
                        }
                    }
                }
                "input_dim" => cfg.input_dim = parse_usize(value)?,
                "num_tasks" => cfg.num_tasks = parse_usize(value)?,
                "use_positions" => {
                    cfg.use_positions = value
                        .parse::<bool>()
                        .map_err(|_| Error::Config(format!("bad value for {key}: '{value}'")))?
                }
                other => return Err(Error::Config(format!("unknown config key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-class logits with sigmoid probabilities and >= 0 thresholding.
#[derive(Debug, Clone)]
pub struct LogitVector {
    pub logits: Vec<f64>,
}

impl LogitVector {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }

    /// prediction[c] = (logit[c] >= 0); a logit of exactly zero counts as
    /// positive, matching probability >= 0.5.
    pub fn predictions(&self) -> Vec<bool> {
        predict(&self.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.architecture = Architecture::PerceiverPool;
        cfg.task_conditioning = TaskConditioning::Embedding;
        cfg.heads = 8;
        cfg.latent_dim = 64;
        cfg.model_dim = 64;
        let back = ModelConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = ModelConfig {
            heads: 3,
            latent_dim: 64,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn perceiver_latent_budget_matches() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.shared_latents(), 56);
    }
}
