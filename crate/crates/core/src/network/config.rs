use serde::{Deserialize, Serialize};

use super::{NetworkError, Result};
use crate::tensor::BnConfig;

pub const PRESETS: [&str; 2] = ["densenet121-paper", "tiny"];

/// Topology of a dense-connectivity network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    /// Channels produced by the stem convolution.
    pub init_features: usize,
    /// Channels each dense layer adds to its block's stack.
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    /// Transition width multiplier θ; transitions emit ⌊θ·C⌋ channels.
    pub compression: f64,
    /// Bottleneck 1×1 conv emits `bottleneck_factor · growth_rate` channels.
    pub bottleneck_factor: usize,
    pub input_channels: usize,
    /// Side of the square input image.
    pub input_size: usize,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable: usize,
    pub non_trainable: usize,
}

pub fn preset_config(name: &str) -> Result<DenseNetConfig> {
    let bn = BnConfig::default();
    match name {
        "densenet121-paper" => Ok(DenseNetConfig {
            init_features: 64,
            growth_rate: 32,
            block_layers: vec![6, 12, 24, 16],
            compression: 0.5,
            bottleneck_factor: 4,
            input_channels: 3,
            input_size: 320,
            num_classes: 2,
            bn_eps: bn.eps,
            bn_momentum: bn.momentum,
        }),
        "tiny" => Ok(DenseNetConfig {
            init_features: 8,
            growth_rate: 4,
            block_layers: vec![2, 2],
            compression: 0.5,
            bottleneck_factor: 4,
            input_channels: 1,
            input_size: 32,
            num_classes: 2,
            bn_eps: bn.eps,
            bn_momentum: bn.momentum,
        }),
        other => Err(NetworkError::UnknownPreset(other.to_string())),
    }
}

impl DenseNetConfig {
    /// Total spatial reduction: stem conv and pool halve twice, each transition once more.
    pub fn downsampling(&self) -> usize {
        1 << (self.block_layers.len() + 1)
    }

    /// Side of the final feature maps fed to global average pooling.
    pub fn penultimate_side(&self) -> usize {
        self.input_size / self.downsampling()
    }

    pub fn transition_channels(&self, channels: usize) -> usize {
        (self.compression * channels as f64).floor() as usize
    }

    /// Width of the final feature stack (input of the linear head).
    pub fn feature_channels(&self) -> usize {
        let mut c = self.init_features;
        for (b, &layers) in self.block_layers.iter().enumerate() {
            c += layers * self.growth_rate;
            if b + 1 < self.block_layers.len() {
                c = self.transition_channels(c);
            }
        }
        c
    }

    pub fn bn(&self) -> BnConfig {
        BnConfig { eps: self.bn_eps, momentum: self.bn_momentum }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NetworkError::InvalidConfig(msg));
        if self.init_features == 0
            || self.growth_rate == 0
            || self.bottleneck_factor == 0
            || self.input_channels == 0
            || self.input_size == 0
        {
            return bad("all widths and sizes must be positive".into());
        }
        if self.block_layers.is_empty() || self.block_layers.contains(&0) {
            return bad(format!("block_layers {:?} must be non-empty and positive", self.block_layers));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_eps {} / bn_momentum {}", self.bn_eps, self.bn_momentum));
        }
        let factor = self.downsampling();
        if !self.input_size.is_multiple_of(factor) {
            return bad(format!(
                "input_size {} must be a multiple of {factor} for {} blocks",
                self.input_size,
                self.block_layers.len()
            ));
        }
        let mut c = self.init_features;
        for (b, &layers) in self.block_layers.iter().enumerate() {
            c += layers * self.growth_rate;
            if b + 1 < self.block_layers.len() {
                c = self.transition_channels(c);
                if c == 0 {
                    return bad(format!("transition {} compresses to zero channels", b + 1));
                }
            }
        }
        Ok(())
    }

    /// Parameter counts implied by the topology, without building anything.
    pub fn closed_form_counts(&self) -> ParamCounts {
        let k = self.growth_rate;
        let bottleneck = self.bottleneck_factor * k;
        let mut trainable = 0;
        let mut bn_channels = 0;

        trainable += self.input_channels * self.init_features * 49;
        bn_channels += self.init_features;
        let mut c = self.init_features;
        for (b, &layers) in self.block_layers.iter().enumerate() {
            for l in 0..layers {
                let in_c = c + l * k;
                bn_channels += in_c + bottleneck;
                trainable += in_c * bottleneck + bottleneck * k * 9;
            }
            c += layers * k;
            if b + 1 < self.block_layers.len() {
                let out_c = self.transition_channels(c);
                bn_channels += c;
                trainable += c * out_c;
                c = out_c;
            }
        }
        bn_channels += c;
        trainable += c * self.num_classes + self.num_classes;
        ParamCounts { trainable: trainable + 2 * bn_channels, non_trainable: 2 * bn_channels }
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv_lines(&self) -> Vec<String> {
        let layers: Vec<String> = self.block_layers.iter().map(|l| l.to_string()).collect();
        vec![
            format!("init_features={}", self.init_features),
            format!("growth_rate={}", self.growth_rate),
            format!("block_layers={}", layers.join(",")),
            format!("compression={}", self.compression),
            format!("bottleneck_factor={}", self.bottleneck_factor),
            format!("input_channels={}", self.input_channels),
            format!("input_size={}", self.input_size),
            format!("num_classes={}", self.num_classes),
            format!("bn_eps={}", self.bn_eps),
            format!("bn_momentum={}", self.bn_momentum),
        ]
    }

    /// Inverse of [`to_kv_lines`](Self::to_kv_lines); unknown keys are ignored.
    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut fields: std::collections::HashMap<&str, &str> = pairs.into_iter().collect();
        let mut take =
            |key: &str| fields.remove(key).ok_or_else(|| NetworkError::Format(format!("config key {key:?} missing")));
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| NetworkError::Format(format!("config key {key:?}: bad value {v:?}")))
        }
        let block_layers =
            take("block_layers")?.split(',').map(|v| num("block_layers", v)).collect::<Result<Vec<usize>>>()?;
        Ok(DenseNetConfig {
            init_features: num("init_features", take("init_features")?)?,
            growth_rate: num("growth_rate", take("growth_rate")?)?,
            block_layers,
            compression: num("compression", take("compression")?)?,
            bottleneck_factor: num("bottleneck_factor", take("bottleneck_factor")?)?,
            input_channels: num("input_channels", take("input_channels")?)?,
            input_size: num("input_size", take("input_size")?)?,
            num_classes: num("num_classes", take("num_classes")?)?,
            bn_eps: num("bn_eps", take("bn_eps")?)?,
            bn_momentum: num("bn_momentum", take("bn_momentum")?)?,
        })
    }
}
