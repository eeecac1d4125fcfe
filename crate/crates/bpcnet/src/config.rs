use std::path::Path;

use bpcnet_core::model::ModelSpec;
use bpcnet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A training run: model and optimiser fields side by side in one flat JSON
/// object, plus an optional cap on the number of training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if cfg.max_samples == Some(0) {
            return Err(Error::Config("max_samples must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Desk-scale MNIST run.
    pub fn mnist_default() -> Self {
        Self {
            model: ModelSpec::mnist_fig1(),
            train: TrainConfig::default(),
            max_samples: Some(2000),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpcnet_core::model::{Arch, Expand};
    use bpcnet_core::train::OptimizerKind;

    #[test]
    fn minimal_json_takes_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"arch":"fig1","image_h":28,"image_w":28,"channels":1,"meta_dim":10,"bottleneck":10,
                "batch_size":256,"epochs":20}"#,
        )
        .unwrap();
        assert_eq!(cfg.model, ModelSpec::mnist_fig1());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.max_samples, None);
    }

    #[test]
    fn explicit_fields() {
        let cfg = RunConfig::from_json(
            r#"{"arch":"fig2","image_h":100,"image_w":100,"channels":3,"meta_dim":8,"bottleneck":8,
                "patch":{"patch_h":20,"patch_w":20},"k1":"1/3","k_expand":"3/2","use_cpe_front":true,
                "batch_size":64,"epochs":2000,"optimizer":{"kind":"sgd"},"seed":9,"shuffle":false,
                "learning_rate":0.01,"max_samples":500}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.arch, Arch::Fig2);
        assert_eq!(cfg.model.k_expand, Expand::Ratio("3/2".parse().unwrap()));
        assert_eq!(cfg.train.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.max_samples, Some(500));
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            r#"{"arch":"fig1","image_h":28,"image_w":28,"channels":1,"meta_dim":10,"bottleneck":10,"batch_size":256,"epochs":0}"#,
            r#"{"arch":"fig2","image_h":28,"image_w":28,"channels":1,"meta_dim":10,"bottleneck":10,"batch_size":256,"epochs":1}"#,
            r#"{"arch":"fig1","image_h":28}"#,
            "not json",
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
