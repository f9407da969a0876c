use serde::{Deserialize, Serialize};

use super::{GanError, Result};

/// Training hyperparameters. Every field has a default, so a config only
/// needs to list what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub batch_size: usize,
    /// R1 weight.
    pub gamma: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub latent_dim: usize,
    /// Discriminator steps between R1 applications (lazy regularization).
    pub r1_interval: usize,
    /// Thousands of real images shown to the discriminator.
    pub total_kimg: u64,
    pub snapshot_kimg: u64,
    pub seed: u64,
    pub deterministic: bool,
    /// Generated samples per FID evaluation during training.
    pub fid_n_gen: usize,
    /// Channels of the layer next to the image; doubles per level inward.
    pub width: usize,
    pub max_channels: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            batch_size: 32,
            gamma: 1.0,
            lr_g: 2e-4,
            lr_d: 2e-4,
            latent_dim: 64,
            r1_interval: 16,
            total_kimg: 200,
            snapshot_kimg: 10,
            seed: 0,
            deterministic: true,
            fid_n_gen: 1024,
            width: 16,
            max_channels: 64,
        }
    }
}

/// Names accepted by [`Hyperparameters::set`].
pub const HYPERPARAMETER_NAMES: &[&str] = &[
    "batch_size",
    "gamma",
    "lr_g",
    "lr_d",
    "latent_dim",
    "r1_interval",
    "total_kimg",
    "snapshot_kimg",
    "seed",
    "deterministic",
    "fid_n_gen",
    "width",
    "max_channels",
];

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GanError::InvalidHyperparameter(msg.to_string()));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.r1_interval < 1 {
            return bad("r1_interval must be >= 1");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a non-negative number");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite()) {
            return bad("learning rates must be positive");
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1");
        }
        if self.snapshot_kimg < 1 || self.snapshot_kimg > self.total_kimg {
            return bad("snapshot_kimg must be in 1..=total_kimg");
        }
        if self.fid_n_gen < 2 {
            return bad("fid_n_gen must be >= 2");
        }
        if self.width < 1 || self.max_channels < 1 {
            return bad("width and max_channels must be >= 1");
        }
        Ok(())
    }

    /// Override one field by name. Integer fields reject fractional values and
    /// `deterministic` takes 0 or 1.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let int = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(GanError::InvalidHyperparameter(format!("{name} needs a non-negative integer, got {v}")))
            }
        };
        match name {
            "batch_size" => self.batch_size = int(value)? as usize,
            "gamma" => self.gamma = value,
            "lr_g" => self.lr_g = value,
            "lr_d" => self.lr_d = value,
            "latent_dim" => self.latent_dim = int(value)? as usize,
            "r1_interval" => self.r1_interval = int(value)? as usize,
            "total_kimg" => self.total_kimg = int(value)?,
            "snapshot_kimg" => self.snapshot_kimg = int(value)?,
            "seed" => self.seed = int(value)?,
            "deterministic" => {
                self.deterministic = match int(value)? {
                    0 => false,
                    1 => true,
                    _ => return Err(GanError::InvalidHyperparameter("deterministic takes 0 or 1".into())),
                }
            }
            "fid_n_gen" => self.fid_n_gen = int(value)? as usize,
            "width" => self.width = int(value)? as usize,
            "max_channels" => self.max_channels = int(value)? as usize,
            _ => return Err(GanError::UnknownHyperparameter(name.to_string())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let hp = Hyperparameters::default();
        hp.validate().unwrap();
        assert_eq!((hp.latent_dim, hp.batch_size, hp.r1_interval), (64, 32, 16));
        assert_eq!((hp.lr_g, hp.lr_d, hp.gamma), (2e-4, 2e-4, 1.0));
    }

    #[test]
    fn set_by_name() {
        let mut hp = Hyperparameters::default();
        hp.set("gamma", 0.1).unwrap();
        hp.set("batch_size", 16.0).unwrap();
        assert_eq!((hp.gamma, hp.batch_size), (0.1, 16));
        assert!(matches!(hp.set("batch_size", 1.5), Err(GanError::InvalidHyperparameter(_))));
        assert!(matches!(hp.set("momentum", 0.9), Err(GanError::UnknownHyperparameter(_))));
        for name in HYPERPARAMETER_NAMES {
            let mut h = Hyperparameters::default();
            h.set(name, 1.0).unwrap();
        }
    }

    #[test]
    fn validation_rejects_bad_schedules() {
        let hp = Hyperparameters { snapshot_kimg: 5, total_kimg: 2, ..Default::default() };
        assert!(hp.validate().is_err());
        let hp = Hyperparameters { r1_interval: 0, ..Default::default() };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn toml_partial_override() {
        let hp: Hyperparameters = toml::from_str("gamma = 0.5\nseed = 3").unwrap();
        assert_eq!(hp, Hyperparameters { gamma: 0.5, seed: 3, ..Default::default() });
        assert!(toml::from_str::<Hyperparameters>("gama = 0.5").is_err());
    }
}
