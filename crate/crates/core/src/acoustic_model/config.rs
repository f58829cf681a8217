use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::INPUT_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Tdnn { context: Vec<i32>, out_dim: usize },
    Lstmp { cell_dim: usize, proj_dim: usize },
}

impl LayerSpec {
    pub fn tdnn(context: &[i32], out_dim: usize) -> Self {
        LayerSpec::Tdnn {
            context: context.to_vec(),
            out_dim,
        }
    }

    pub fn lstmp(cell_dim: usize, proj_dim: usize) -> Self {
        LayerSpec::Lstmp { cell_dim, proj_dim }
    }

    /// Width of the layer's output sequence.
    pub fn output_dim(&self) -> usize {
        match self {
            LayerSpec::Tdnn { out_dim, .. } => *out_dim,
            LayerSpec::Lstmp { proj_dim, .. } => *proj_dim,
        }
    }

    pub fn is_tdnn(&self) -> bool {
        matches!(self, LayerSpec::Tdnn { .. })
    }

    fn scaled(&self, scale: f64) -> LayerSpec {
        let s = |d: usize| ((d as f64 * scale).round() as usize).max(1);
        match self {
            LayerSpec::Tdnn { context, out_dim } => LayerSpec::Tdnn {
                context: context.clone(),
                out_dim: s(*out_dim),
            },
            LayerSpec::Lstmp { cell_dim, proj_dim } => LayerSpec::Lstmp {
                cell_dim: s(*cell_dim),
                proj_dim: s(*proj_dim),
            },
        }
    }
}

/// Network description. Layer widths are given at full size and multiplied
/// by `scale_factor` when the network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub num_outputs: usize,
    pub scale_factor: f64,
}

pub const TDNN_DIM: usize = 1024;
pub const LSTM_CELL_DIM: usize = 1024;
pub const LSTM_PROJ_DIM: usize = 256;
pub const DESK_SCALE: f64 = 1.0 / 16.0;
pub const DESK_NUM_OUTPUTS: usize = 40;

impl ModelConfig {
    /// The seven-TDNN, three-LSTMP stack at full width.
    pub fn tdnn_lstm(num_outputs: usize) -> Self {
        let t = |ctx: &[i32]| LayerSpec::tdnn(ctx, TDNN_DIM);
        let l = || LayerSpec::lstmp(LSTM_CELL_DIM, LSTM_PROJ_DIM);
        ModelConfig {
            input_dim: INPUT_DIM,
            layers: vec![
                t(&[-2, -1, 0, 1, 2]),
                t(&[-1, 0, 1]),
                t(&[-1, 0, 1]),
                l(),
                t(&[-3, 0, 3]),
                t(&[-3, 0, 3]),
                l(),
                t(&[-3, 0, 3]),
                t(&[-3, 0, 3]),
                l(),
            ],
            num_outputs,
            scale_factor: 1.0,
        }
    }

    /// The same stack shrunk by [`DESK_SCALE`].
    pub fn desk(num_outputs: usize) -> Self {
        ModelConfig {
            scale_factor: DESK_SCALE,
            ..Self::tdnn_lstm(num_outputs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_outputs == 0 {
            return Err(Error::config("input_dim and num_outputs must be positive"));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(Error::config(format!("scale_factor {} not in (0, 1]", self.scale_factor)));
        }
        if self.layers.is_empty() {
            return Err(Error::config("model needs at least one hidden layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerSpec::Tdnn { context, out_dim } => {
                    if context.is_empty() || *out_dim == 0 {
                        return Err(Error::config(format!("layer {i}: empty context or zero width")));
                    }
                }
                LayerSpec::Lstmp { cell_dim, proj_dim } => {
                    if *cell_dim == 0 || *proj_dim == 0 {
                        return Err(Error::config(format!("layer {i}: zero lstm width")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Layer specs with `scale_factor` applied.
    pub fn effective_layers(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.scaled(self.scale_factor)).collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Frames of left and right context seen through the TDNN layers, plus
/// whether any recurrent layer extends the left history without bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub left: usize,
    pub right: usize,
    pub recurrent: bool,
}

pub fn receptive_field(config: &ModelConfig) -> ReceptiveField {
    let mut rf = ReceptiveField {
        left: 0,
        right: 0,
        recurrent: false,
    };
    for l in &config.layers {
        match l {
            LayerSpec::Tdnn { context, .. } => {
                let lo = context.iter().copied().min().unwrap_or(0);
                let hi = context.iter().copied().max().unwrap_or(0);
                rf.left += lo.min(0).unsigned_abs() as usize;
                rf.right += hi.max(0) as usize;
            }
            LayerSpec::Lstmp { .. } => rf.recurrent = true,
        }
    }
    rf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_order() {
        let c = ModelConfig::tdnn_lstm(40);
        let kinds: String = c.layers.iter().map(|l| if l.is_tdnn() { 'T' } else { 'L' }).collect();
        assert_eq!(kinds, "TTTLTTLTTL");
        assert_eq!(c.input_dim, 300);
    }

    #[test]
    fn desk_scaling() {
        let c = ModelConfig::desk(40).effective_layers();
        assert_eq!(c[0], LayerSpec::tdnn(&[-2, -1, 0, 1, 2], 64));
        assert_eq!(c[3], LayerSpec::lstmp(64, 16));
    }

    #[test]
    fn receptive_fields() {
        let rf = receptive_field(&ModelConfig::tdnn_lstm(40));
        assert_eq!((rf.left, rf.right, rf.recurrent), (16, 16, true));
        let single = ModelConfig {
            layers: vec![LayerSpec::tdnn(&[-2, -1, 0, 1, 2], 8)],
            ..ModelConfig::desk(4)
        };
        let rf = receptive_field(&single);
        assert_eq!((rf.left, rf.right, rf.recurrent), (2, 2, false));
        let zero = ModelConfig {
            layers: vec![LayerSpec::tdnn(&[0], 8), LayerSpec::tdnn(&[0], 8)],
            ..ModelConfig::desk(4)
        };
        let rf = receptive_field(&zero);
        assert_eq!((rf.left, rf.right), (0, 0));
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&LayerSpec::tdnn(&[-1, 0, 1], 8)).unwrap();
        assert_eq!(json, r#"{"kind":"tdnn","context":[-1,0,1],"out_dim":8}"#);
        assert!(ModelConfig {
            scale_factor: 0.0,
            ..ModelConfig::desk(4)
        }
        .validate()
        .is_err());
    }
}
