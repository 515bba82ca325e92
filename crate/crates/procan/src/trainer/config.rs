//! Training configuration: every knob of the training procedure, the
//! full-scale and desk-scale presets, and the flat key=value config-file
//! format.

use crate::attention::CanVariant;
use crate::curriculum::DifficultyCriterion;
use crate::error::{ProcanError, Result};
use crate::network::{CBarRule, NetworkSpec};
use crate::progrow::BlendStrategy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after_epoch20: f64,
    /// Global epoch at which the learning rate drops.
    pub lr_drop_epoch: usize,
    /// First global epoch trained on the non-augmented stream.
    pub refine_start_epoch: usize,
    /// Weight decay on the classifier weight only.
    pub fc_weight_decay: f64,
    pub dropout_p: f64,
    pub base_block_count: usize,
    pub base_channels: Vec<usize>,
    pub base_strides: Vec<usize>,
    /// Cube side in voxels; the depth axis feeds the network as channels.
    pub cube_side: usize,
    /// Number of extended blocks grown during training (T).
    pub extended_budget: usize,
    pub curriculum: DifficultyCriterion,
    pub blending: BlendStrategy,
    pub variant: CanVariant,
    pub c_bar: CBarRule,
    pub validation_fraction: f64,
    /// Held-out fraction carved off synthetic datasets before training.
    pub test_fraction: f64,
    pub augment: bool,
    pub synthetic_n: usize,
    pub seed_model: u64,
    pub seed_data: u64,
    pub seed_mask: u64,
    pub seed_dropout: u64,
}

impl TrainConfig {
    /// The published training recipe on the full architecture.
    pub fn full_scale() -> Self {
        TrainConfig {
            total_epochs: 60,
            batch_size: 256,
            lr_initial: 1e-3,
            lr_after_epoch20: 1e-4,
            lr_drop_epoch: 20,
            refine_start_epoch: 51,
            fc_weight_decay: 1e-4,
            dropout_p: 0.5,
            base_block_count: 4,
            base_channels: vec![32, 64, 128, 256],
            base_strides: vec![1, 2, 2, 1],
            cube_side: 32,
            extended_budget: 3,
            curriculum: DifficultyCriterion::Diameter,
            blending: BlendStrategy::Bernoulli,
            variant: CanVariant::Can,
            c_bar: CBarRule::One,
            validation_fraction: 0.10,
            test_fraction: 0.2,
            augment: true,
            synthetic_n: 500,
            seed_model: 7,
            seed_data: 8,
            seed_mask: 9,
            seed_dropout: 10,
        }
    }

    /// Reduced recipe that trains in minutes on a CPU: 16mm cubes,
    /// channels 8/16/32/32, batch 32, two extended blocks.
    pub fn desk_scale() -> Self {
        TrainConfig {
            total_epochs: 26,
            batch_size: 32,
            refine_start_epoch: 21,
            base_channels: vec![8, 16, 32, 32],
            cube_side: 16,
            extended_budget: 2,
            ..TrainConfig::full_scale()
        }
    }

    /// Point every seed at `seed`, with fixed offsets separating the
    /// model, data, mask, and dropout streams.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seed_model = seed;
        self.seed_data = seed.wrapping_add(1);
        self.seed_mask = seed.wrapping_add(2);
        self.seed_dropout = seed.wrapping_add(3);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.refine_start_epoch > self.total_epochs {
            return Err(ProcanError::config(format!(
                "refine_start_epoch {} exceeds total_epochs {}",
                self.refine_start_epoch, self.total_epochs
            )));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 0.5) {
            return Err(ProcanError::config(format!(
                "validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if !(0.0..0.9).contains(&self.test_fraction) {
            return Err(ProcanError::config(format!(
                "test_fraction must lie in [0, 0.9), got {}",
                self.test_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(ProcanError::config(
                "batch_size must be at least 2 for batch norm".to_string(),
            ));
        }
        if self.base_block_count != self.base_channels.len()
            || self.base_block_count != self.base_strides.len()
        {
            return Err(ProcanError::config(format!(
                "base_block_count {} does not match {} channels / {} strides",
                self.base_block_count,
                self.base_channels.len(),
                self.base_strides.len()
            )));
        }
        if self.lr_initial <= 0.0 || self.lr_after_epoch20 <= 0.0 {
            return Err(ProcanError::config("learning rates must be positive".to_string()));
        }
        self.network_spec()?;
        Ok(())
    }

    /// The architecture this configuration trains.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let plan: Vec<(usize, usize)> = self
            .base_channels
            .iter()
            .zip(&self.base_strides)
            .map(|(&c, &s)| (c, s))
            .collect();
        NetworkSpec::new(
            self.cube_side,
            self.cube_side,
            &plan,
            self.c_bar,
            self.variant,
            self.extended_budget,
            self.dropout_p,
        )
    }

    /// Learning rate in force at a 1-based global epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.lr_initial
        } else {
            self.lr_after_epoch20
        }
    }

    /// Whether a 1-based global epoch trains on the augmented stream.
    pub fn augmented_at(&self, epoch: usize) -> bool {
        self.augment && epoch < self.refine_start_epoch
    }

    /// Load a config file onto the desk-scale preset. Lines are
    /// `key = value`; `#` starts a comment; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = TrainConfig::desk_scale();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ProcanError::config(format!(
                    "config line {}: expected 'key = value', got '{raw}'",
                    line_no + 1
                ))
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| ProcanError::config(format!("config line {}: {e}", line_no + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| ProcanError::config(format!("bad value '{value}' for {key}")))
        }
        fn list(key: &str, value: &str) -> Result<Vec<usize>> {
            value
                .split(',')
                .map(|v| num::<usize>(key, v.trim()))
                .collect()
        }
        match key {
            "total_epochs" => self.total_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_initial" => self.lr_initial = num(key, value)?,
            "lr_after_epoch20" => self.lr_after_epoch20 = num(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = num(key, value)?,
            "refine_start_epoch" => self.refine_start_epoch = num(key, value)?,
            "fc_weight_decay" => self.fc_weight_decay = num(key, value)?,
            "dropout_p" => self.dropout_p = num(key, value)?,
            "base_block_count" => self.base_block_count = num(key, value)?,
            "base_channels" => self.base_channels = list(key, value)?,
            "base_strides" => self.base_strides = list(key, value)?,
            "cube_side" => self.cube_side = num(key, value)?,
            "extended_budget" => self.extended_budget = num(key, value)?,
            "curriculum" => self.curriculum = DifficultyCriterion::parse(value)?,
            "blending" => self.blending = BlendStrategy::parse(value)?,
            "variant" => self.variant = CanVariant::parse(value)?,
            "c_bar" => self.c_bar = CBarRule::parse(value)?,
            "validation_fraction" => self.validation_fraction = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "augment" => {
                self.augment = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(ProcanError::config(format!(
                            "bad value '{value}' for augment (expected true/false)"
                        )))
                    }
                }
            }
            "synthetic_n" => self.synthetic_n = num(key, value)?,
            "seed_model" => self.seed_model = num(key, value)?,
            "seed_data" => self.seed_data = num(key, value)?,
            "seed_mask" => self.seed_mask = num(key, value)?,
            "seed_dropout" => self.seed_dropout = num(key, value)?,
            other => {
                return Err(ProcanError::config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Every field as sorted `key = value` lines, with the resolved
    /// regularization reading spelled out up front.
    pub fn resolved_string(&self) -> String {
        let mut s = String::new();
        s.push_str("# resolved training configuration\n");
        s.push_str("# regularization: weight decay applies to the fully-connected weight only;\n");
        s.push_str("# dropout 0.5 sits before the fully-connected layer.\n");
        let channels: Vec<String> = self.base_channels.iter().map(|c| c.to_string()).collect();
        let strides: Vec<String> = self.base_strides.iter().map(|c| c.to_string()).collect();
        let mut rows = vec![
            format!("augment = {}", self.augment),
            format!("base_block_count = {}", self.base_block_count),
            format!("base_channels = {}", channels.join(",")),
            format!("base_strides = {}", strides.join(",")),
            format!("batch_size = {}", self.batch_size),
            format!("blending = {}", self.blending.name()),
            format!("c_bar = {}", self.c_bar.name()),
            format!("cube_side = {}", self.cube_side),
            format!("curriculum = {}", self.curriculum.name()),
            format!("dropout_p = {}", self.dropout_p),
            format!("extended_budget = {}", self.extended_budget),
            format!("fc_weight_decay = {}", self.fc_weight_decay),
            format!("lr_after_epoch20 = {}", self.lr_after_epoch20),
            format!("lr_drop_epoch = {}", self.lr_drop_epoch),
            format!("lr_initial = {}", self.lr_initial),
            format!("refine_start_epoch = {}", self.refine_start_epoch),
            format!("seed_data = {}", self.seed_data),
            format!("seed_dropout = {}", self.seed_dropout),
            format!("seed_mask = {}", self.seed_mask),
            format!("seed_model = {}", self.seed_model),
            format!("synthetic_n = {}", self.synthetic_n),
            format!("test_fraction = {}", self.test_fraction),
            format!("total_epochs = {}", self.total_epochs),
            format!("validation_fraction = {}", self.validation_fraction),
            format!("variant = {}", self.variant.name()),
        ];
        rows.sort();
        for r in rows {
            let _ = writeln!(s, "{r}");
        }
        s
    }
}

/// The four independent random streams of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RngStreams {
    pub model: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub mask: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_config(config: &TrainConfig) -> Self {
        RngStreams {
            model: ChaCha8Rng::seed_from_u64(config.seed_model),
            data: ChaCha8Rng::seed_from_u64(config.seed_data),
            mask: ChaCha8Rng::seed_from_u64(config.seed_mask),
            dropout: ChaCha8Rng::seed_from_u64(config.seed_dropout),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::full_scale().validate().unwrap();
        TrainConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn invariants_are_enforced() {
        let mut c = TrainConfig::desk_scale();
        c.refine_start_epoch = 99;
        assert!(c.validate().is_err());
        let mut c2 = TrainConfig::desk_scale();
        c2.validation_fraction = 0.6;
        assert!(c2.validate().is_err());
        let mut c3 = TrainConfig::desk_scale();
        c3.base_channels = vec![8, 16];
        assert!(c3.validate().is_err());
    }

    #[test]
    fn lr_schedule_boundary() {
        let c = TrainConfig::full_scale();
        assert_eq!(c.lr_at(1), 1e-3);
        assert_eq!(c.lr_at(19), 1e-3);
        assert_eq!(c.lr_at(20), 1e-4);
        assert_eq!(c.lr_at(60), 1e-4);
    }

    #[test]
    fn refinement_boundary() {
        let c = TrainConfig::full_scale();
        assert!(c.augmented_at(50));
        assert!(!c.augmented_at(51));
        assert!(!c.augmented_at(60));
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut config = TrainConfig::desk_scale().with_master_seed(42);
        config.total_epochs = 12;
        config.refine_start_epoch = 9;
        config.blending = BlendStrategy::Scalar;
        std::fs::write(&path, config.resolved_string()).unwrap();
        let back = TrainConfig::from_file(&path).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "nonsense_key = 3\n").unwrap();
        let err = TrainConfig::from_file(&path).unwrap_err();
        assert!(err.to_string().contains("nonsense_key"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "# comment\n\ntotal_epochs = 9 # tail comment\nrefine_start_epoch = 9\n").unwrap();
        let config = TrainConfig::from_file(&path).unwrap();
        assert_eq!(config.total_epochs, 9);
    }
}
