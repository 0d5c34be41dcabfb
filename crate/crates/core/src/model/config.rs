use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channels at the first encoder step; each deeper step doubles it.
    pub base_filters: usize,
    /// Encoder steps including the bottleneck.
    pub depth: usize,
    /// Conv blocks in the densely connected bottleneck.
    pub dense_blocks: usize,
    pub input_channels: usize,
    /// `(height, width)`, each divisible by `2^(depth - 1)`.
    pub input_size: (usize, usize),
    pub kernel_size: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

/// Bundled defaults for the command line and the tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Base 2, depth 2, 8x8, two dense blocks. Gradient checks and smoke runs.
    Micro,
    /// Base 16, depth 4, 64x64, three dense blocks.
    Desk,
    /// Base 64, depth 4, 64x64 patches, three dense blocks.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Preset::Micro),
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::usage(format!(
                "unknown preset {other:?} (expected micro, desk or full)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Micro => "micro",
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    pub fn model_config(self) -> ModelConfig {
        let (base_filters, depth, size, dense_blocks) = match self {
            Preset::Micro => (2, 2, 8, 2),
            Preset::Desk => (16, 4, 64, 3),
            Preset::Full => (64, 4, 64, 3),
        };
        ModelConfig {
            base_filters,
            depth,
            dense_blocks,
            input_channels: 1,
            input_size: (size, size),
            kernel_size: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Preset::Desk.model_config()
    }
}

impl ModelConfig {
    /// Channel count at encoder step `level` (1-based).
    pub fn filters_at(&self, level: usize) -> usize {
        self.base_filters << (level - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 || self.input_channels == 0 {
            return Err(Error::usage("filter and channel counts must be positive"));
        }
        if self.depth < 2 {
            return Err(Error::usage(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.dense_blocks == 0 {
            return Err(Error::usage("dense_blocks must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::usage(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        let factor = 1usize << (self.depth - 1);
        for (name, n) in [("height", self.input_size.0), ("width", self.input_size.1)] {
            if n == 0 || n % factor != 0 {
                return Err(Error::dim(format!(
                    "input {name} {n} is not divisible by 2^(depth-1) = {factor}"
                )));
            }
        }
        Ok(())
    }

    /// `key=value` lines, as stored in checkpoint metadata.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "base_filters={}", self.base_filters);
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "dense_blocks={}", self.dense_blocks);
        let _ = writeln!(s, "input_channels={}", self.input_channels);
        let _ = writeln!(s, "height={}", self.input_size.0);
        let _ = writeln!(s, "width={}", self.input_size.1);
        let _ = writeln!(s, "kernel_size={}", self.kernel_size);
        let _ = writeln!(s, "bn_momentum={}", self.bn_momentum);
        let _ = writeln!(s, "bn_eps={}", self.bn_eps);
        let _ = writeln!(s, "model_seed={}", self.seed);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        fn get<V: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<V> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::usage(format!("model metadata lacks {key}")))?;
            raw.parse()
                .map_err(|_| Error::usage(format!("bad value {raw:?} for {key}")))
        }
        let config = Self {
            base_filters: get(&map, "base_filters")?,
            depth: get(&map, "depth")?,
            dense_blocks: get(&map, "dense_blocks")?,
            input_channels: get(&map, "input_channels")?,
            input_size: (get(&map, "height")?, get(&map, "width")?),
            kernel_size: get(&map, "kernel_size")?,
            bn_momentum: get(&map, "bn_momentum")?,
            bn_eps: get(&map, "bn_eps")?,
            seed: get(&map, "model_seed")?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let c = Preset::Micro.model_config();
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn indivisible_size_names_extent() {
        let mut c = Preset::Desk.model_config();
        c.input_size = (64, 60);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("width 60"), "{err}");
    }

    #[test]
    fn zero_dense_blocks_rejected() {
        let mut c = Preset::Micro.model_config();
        c.dense_blocks = 0;
        assert!(c.validate().is_err());
    }
}
