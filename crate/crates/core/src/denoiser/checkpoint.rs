use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserParams, ParamInfo, TrainingMetadata};
use crate::diffusion::{NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::io;
use crate::lti::Dims;
use crate::tasks::{ConditionLayout, TaskFamily};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: DenoiserConfig,
    pub schedule: ScheduleParams,
    pub family: TaskFamily,
    pub dims: Dims,
    pub condition: ConditionLayout,
    /// Normalization scales of the training dataset.
    pub scales: Vec<f64>,
    /// sha256 of the training dataset's `manifest.json`.
    pub dataset_manifest_sha256: String,
    pub training: Option<TrainingMetadata>,
    pub params: Vec<ParamInfo>,
    pub weights_sha256: String,
}

/// Trained parameters together with everything needed to sample from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: DenoiserParams,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: DenoiserParams,
        schedule: &NoiseSchedule,
        family: TaskFamily,
        dims: Dims,
        condition: ConditionLayout,
        scales: Vec<f64>,
        dataset_manifest_sha256: String,
    ) -> Result<Self> {
        let schedule = schedule
            .params()
            .ok_or_else(|| Error::domain("only linear schedules can be stored in a checkpoint"))?;
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: params.config().clone(),
            schedule,
            family,
            dims,
            condition,
            scales,
            dataset_manifest_sha256,
            training: params.metadata.clone(),
            params: params.param_info(),
            weights_sha256: io::sha256_hex(&io::encode_f64s(params.flat())),
        };
        let ckpt = Self { header, params };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.header.schedule.build()
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        let bad = |reason: String| Error::format("checkpoint header", reason);
        h.config.validate().map_err(|e| bad(e.to_string()))?;
        if h.config.input_dim != h.dims.flat_len() {
            return Err(bad(format!("input_dim {} does not match dims", h.config.input_dim)));
        }
        if h.config.cond_dim != h.condition.len() {
            return Err(bad(format!("cond_dim {} does not match layout", h.config.cond_dim)));
        }
        if h.scales.len() != h.config.input_dim || h.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(bad("scales must be positive, one per trajectory coordinate".into()));
        }
        if h.params != self.params.param_info() {
            return Err(bad("parameter list does not match config".into()));
        }
        h.schedule.build().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn from_bytes(header: &[u8], weights: &[u8]) -> Result<Self> {
        let header: CheckpointHeader = io::from_json_bytes(header, "checkpoint header")?;
        io::check_version("checkpoint header", header.format_version, CHECKPOINT_FORMAT_VERSION)?;
        header
            .config
            .validate()
            .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let expected: usize = header
            .config
            .layer_shapes()
            .iter()
            .try_fold(0usize, |acc, (i, o)| i.checked_mul(*o).and_then(|w| acc.checked_add(w + o)))
            .ok_or_else(|| Error::format("checkpoint header", "parameter count overflows"))?;
        if expected.checked_mul(8) != Some(weights.len()) {
            return Err(Error::format(
                "checkpoint weights",
                format!("{} bytes, expected {} parameters", weights.len(), expected),
            ));
        }
        if io::sha256_hex(weights) != header.weights_sha256 {
            return Err(Error::format("checkpoint weights", "sha256 does not match header"));
        }
        let theta = io::decode_f64s(weights, "checkpoint weights")?;
        let mut params = DenoiserParams::from_flat(&header.config, theta)
            .map_err(|e| Error::format("checkpoint weights", e.to_string()))?;
        params.metadata = header.training.clone();
        let ckpt = Self { header, params };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    io::write_bytes(&dir.join("weights.bin"), &io::encode_f64s(ckpt.params.flat()))?;
    io::write_json(&dir.join("header.json"), &ckpt.header)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let header = io::read_bytes(&dir.join("header.json"))?;
    let weights = io::read_bytes(&dir.join("weights.bin"))?;
    Checkpoint::from_bytes(&header, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Activation;
    use crate::diffusion::linear_schedule;

    fn checkpoint() -> Checkpoint {
        let dims = Dims {
            n: 1,
            m: 1,
            horizon: 2,
        };
        let condition = ConditionLayout::Lqr { n: 1 };
        let config = DenoiserConfig {
            input_dim: dims.flat_len(),
            cond_dim: condition.len(),
            time_embed_dim: 4,
            hidden_dim: 8,
            hidden_layers: 2,
            activation: Activation::Silu,
            seed: 9,
        };
        let params = DenoiserParams::init(&config).unwrap();
        Checkpoint::new(
            params,
            &linear_schedule(0.1, 10).unwrap(),
            TaskFamily::Lqr,
            dims,
            condition,
            vec![1.0; 5],
            "00".into(),
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = checkpoint();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt, a.path()).unwrap();
        let loaded = load_checkpoint(a.path()).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&loaded, b.path()).unwrap();
        for f in ["header.json", "weights.bin"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn truncated_or_versioned_files_rejected() {
        let ckpt = checkpoint();
        let header = io::to_json_bytes(&ckpt.header);
        let weights = io::encode_f64s(ckpt.params.flat());
        assert!(Checkpoint::from_bytes(&header, &weights[..weights.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&header, &weights[..weights.len() - 8]).is_err());
        let mut h = ckpt.header.clone();
        h.format_version = 99;
        assert!(Checkpoint::from_bytes(&io::to_json_bytes(&h), &weights).is_err());
    }

    #[test]
    fn loaded_checkpoint_reproduces_forward() {
        let ckpt = checkpoint();
        let loaded = Checkpoint::from_bytes(
            &io::to_json_bytes(&ckpt.header),
            &io::encode_f64s(ckpt.params.flat()),
        )
        .unwrap();
        let tau = [0.1, -0.2, 0.3, 0.4, -0.5];
        assert_eq!(
            ckpt.params.forward(&tau, 3, &[1.0, 2.0]).unwrap(),
            loaded.params.forward(&tau, 3, &[1.0, 2.0]).unwrap()
        );
    }
}
