//! Network definitions and the checkpointed parameter store.
//!
//! Every kind is a function from input tensors to an output tensor recorded on
//! a [`Graph`](crate::nn::Graph). Parameters live in a name-keyed
//! [`ParamSet`]; the names and shapes a config needs are discovered by running
//! its forward once in initialization mode, so the forward definition is the
//! single source of truth for the architecture.

mod arch;
mod bundle;
mod convert;
mod net;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{COMPLETE_K, FRONT_K, GRID};
use crate::synthgen::IMAGE_SIZE;

pub use arch::{argmax_grid, build_forward, ForwardOutput};
pub use bundle::GenerationBundle;
pub use convert::{grids_one_hot, images_to_tensor, tensor_to_image};
pub use net::{is_trainable, ParamSet};
pub use store::{
    count_parameters, load_checkpoint, read_container, save_checkpoint, write_container, ParameterStore,
    CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Refiner,
    Img2prog,
    Discriminator,
    #[serde(rename = "infer_2lyr")]
    Infer2lyr,
    #[serde(rename = "infer_5lyr")]
    Infer5lyr,
    InferResidual,
    InferUnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Refiner,
        ModelKind::Img2prog,
        ModelKind::Discriminator,
        ModelKind::Infer2lyr,
        ModelKind::Infer5lyr,
        ModelKind::InferResidual,
        ModelKind::InferUnet,
    ];

    pub const INFERENCE: [ModelKind; 4] = [
        ModelKind::Infer2lyr,
        ModelKind::Infer5lyr,
        ModelKind::InferResidual,
        ModelKind::InferUnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Refiner => "refiner",
            ModelKind::Img2prog => "img2prog",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Infer2lyr => "infer_2lyr",
            ModelKind::Infer5lyr => "infer_5lyr",
            ModelKind::InferResidual => "infer_residual",
            ModelKind::InferUnet => "infer_unet",
        }
    }

    pub fn is_inference(self) -> bool {
        ModelKind::INFERENCE.contains(&self)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// Accepts the full names and the short inference names (`2lyr`, `residual`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().strip_prefix("infer_") == Some(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// Architecture hyperparameters. Fields a kind does not use keep their
/// defaults and are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Seed of the parameter initialization.
    pub seed: u64,
    /// Spatial side of the (square) input.
    pub input_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Condition planes of the discriminator.
    #[serde(default)]
    pub cond_channels: usize,
    /// Per-stage channel widths.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    #[serde(default)]
    pub blocks: usize,
    /// Dilation of the bottleneck convolutions.
    #[serde(default = "one")]
    pub dilation: usize,
    /// Width of the 1×1-reduced space-to-depth skips.
    #[serde(default)]
    pub skip_width: usize,
    /// Per-channel constant subtracted from the input (the refiner adds it back).
    #[serde(default)]
    pub input_shift: Vec<f32>,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    /// Desk-scale defaults. Inference widths are chosen so parameter counts
    /// land near the published model sizes.
    pub fn default_for(kind: ModelKind) -> ModelConfig {
        let base = ModelConfig {
            kind,
            seed: 0,
            input_size: IMAGE_SIZE,
            in_channels: 3,
            out_channels: 3,
            cond_channels: 0,
            widths: Vec::new(),
            blocks: 0,
            dilation: 1,
            skip_width: 0,
            input_shift: Vec::new(),
        };
        let infer = ModelConfig {
            input_size: GRID,
            in_channels: FRONT_K,
            out_channels: COMPLETE_K,
            ..base.clone()
        };
        match kind {
            ModelKind::Refiner => ModelConfig {
                widths: vec![16, 32],
                blocks: 2,
                input_shift: vec![0.5; 3],
                ..base
            },
            ModelKind::Img2prog => ModelConfig {
                out_channels: FRONT_K,
                widths: vec![16, 32, 64],
                blocks: 2,
                skip_width: 16,
                input_shift: vec![0.5; 3],
                ..base
            },
            ModelKind::Discriminator => ModelConfig {
                out_channels: 1,
                cond_channels: FRONT_K,
                widths: vec![16, 32, 64],
                input_shift: vec![0.5; 3],
                ..base
            },
            ModelKind::Infer2lyr => ModelConfig {
                widths: vec![48],
                ..infer
            },
            ModelKind::Infer5lyr => ModelConfig {
                widths: vec![234; 4],
                ..infer
            },
            ModelKind::InferResidual => ModelConfig {
                widths: vec![64, 128, 36],
                blocks: 1,
                dilation: 2,
                ..infer
            },
            ModelKind::InferUnet => ModelConfig {
                widths: vec![24, 48, 96],
                ..infer
            },
        }
    }

    /// Tiny variant (8×8 input, at most 4 channels) for gradient checks.
    pub fn toy(kind: ModelKind) -> ModelConfig {
        let d = ModelConfig::default_for(kind);
        let small = ModelConfig {
            input_size: 8,
            in_channels: 3,
            out_channels: 4,
            ..d
        };
        match kind {
            ModelKind::Refiner => ModelConfig {
                out_channels: 3,
                widths: vec![3, 4],
                blocks: 1,
                input_shift: vec![0.4, 0.5, 0.6],
                ..small
            },
            ModelKind::Img2prog => ModelConfig {
                widths: vec![2, 3, 4],
                blocks: 1,
                skip_width: 2,
                ..small
            },
            ModelKind::Discriminator => ModelConfig {
                out_channels: 1,
                cond_channels: 4,
                widths: vec![2, 3, 4],
                ..small
            },
            ModelKind::Infer2lyr => ModelConfig {
                in_channels: 4,
                widths: vec![3],
                ..small
            },
            ModelKind::Infer5lyr => ModelConfig {
                in_channels: 4,
                widths: vec![3; 4],
                ..small
            },
            ModelKind::InferResidual => ModelConfig {
                in_channels: 4,
                widths: vec![3, 4, 2],
                ..small
            },
            ModelKind::InferUnet => ModelConfig {
                in_channels: 4,
                widths: vec![2, 3, 4],
                ..small
            },
        }
    }

    /// Spatial side of the output map.
    pub fn output_size(&self) -> usize {
        match self.kind {
            ModelKind::Refiner => self.input_size,
            ModelKind::Img2prog | ModelKind::Discriminator => self.input_size / 8,
            _ => self.input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{} config: {msg}", self.kind)));
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.iter().any(|&w| w == 0) {
            return bad("all widths must be at least 1".into());
        }
        let want_widths = match self.kind {
            ModelKind::Refiner => 2,
            ModelKind::Img2prog | ModelKind::Discriminator => 3,
            ModelKind::Infer2lyr => 1,
            ModelKind::Infer5lyr => 4,
            ModelKind::InferResidual | ModelKind::InferUnet => 3,
        };
        if self.widths.len() != want_widths {
            return bad(format!("expected {want_widths} widths, got {}", self.widths.len()));
        }
        let divisor = match self.kind {
            ModelKind::Refiner => 4,
            ModelKind::Img2prog | ModelKind::Discriminator => 8,
            ModelKind::InferResidual | ModelKind::InferUnet => 4,
            ModelKind::Infer2lyr | ModelKind::Infer5lyr => 1,
        };
        if self.input_size == 0 || self.input_size % divisor != 0 {
            return bad(format!("input size {} must be a positive multiple of {divisor}", self.input_size));
        }
        if self.dilation == 0 {
            return bad("dilation must be at least 1".into());
        }
        match self.kind {
            ModelKind::Refiner => {
                if self.out_channels != self.in_channels {
                    return bad("refiner must preserve channels".into());
                }
                if self.input_shift.len() != self.in_channels {
                    return bad("input_shift needs one value per channel".into());
                }
            }
            ModelKind::Img2prog => {
                if self.skip_width == 0 {
                    return bad("skip_width must be at least 1".into());
                }
                if !self.input_shift.is_empty() && self.input_shift.len() != self.in_channels {
                    return bad("input_shift needs one value per channel".into());
                }
            }
            ModelKind::Discriminator => {
                if self.cond_channels == 0 || self.out_channels != 1 {
                    return bad("discriminator needs condition planes and a single output".into());
                }
                if !self.input_shift.is_empty() && self.input_shift.len() != self.in_channels {
                    return bad("input_shift needs one value per channel".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}
