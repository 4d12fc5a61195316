//! Synthetic depth scenes, training-time augmentation and on-disk formats.

mod augment;
mod io;
mod synth;

pub use augment::{augment, augment_traced, AugmentConfig, AugmentTrace};
pub use io::{
    decode_raw_f32, encode_raw_f32, read_dataset, read_depth_pgm, read_raw_f32, read_sample, write_depth_pgm,
    write_raw_f32, write_sample,
};
pub use synth::{render, scene_layout, synth_scene, SceneLayout, Shape, ShapeKind};

use crate::error::{config_err, Result};
use crate::tensor::{concat, Tensor};

/// RGB image `[3, H, W]` in `[0, 1]`, depth `[1, H, W]` in metres, and a
/// per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSample {
    pub rgb: Tensor<f32>,
    pub depth: Tensor<f32>,
    pub mask: Vec<bool>,
}

impl DepthSample {
    pub fn new(rgb: Tensor<f32>, depth: Tensor<f32>, mask: Vec<bool>) -> Result<Self> {
        let ok = rgb.rank() == 3
            && depth.rank() == 3
            && rgb.shape()[0] == 3
            && depth.shape()[0] == 1
            && rgb.shape()[1..] == depth.shape()[1..]
            && mask.len() == depth.numel();
        if !ok {
            return Err(config_err(format!(
                "sample shapes disagree: rgb {:?}, depth {:?}, mask {}",
                rgb.shape(),
                depth.shape(),
                mask.len()
            )));
        }
        Ok(Self { rgb, depth, mask })
    }

    /// Mask of pixels with depth in `(0, max_depth]`.
    pub fn with_valid_mask(rgb: Tensor<f32>, depth: Tensor<f32>, max_depth: f32) -> Result<Self> {
        let mask = depth.data().iter().map(|&d| d > 0.0 && d <= max_depth).collect();
        Self::new(rgb, depth, mask)
    }

    pub fn height(&self) -> usize {
        self.depth.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.depth.shape()[2]
    }
}

/// Stacks samples into `N×3×H×W` images, `N×1×H×W` depths and a flat mask.
pub fn collate(samples: &[&DepthSample]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<bool>)> {
    let first = samples.first().ok_or_else(|| config_err("cannot collate an empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut rgbs = Vec::new();
    let mut depths = Vec::new();
    let mut mask = Vec::new();
    for s in samples {
        rgbs.push(s.rgb.reshape(&[1, 3, h, w])?);
        depths.push(s.depth.reshape(&[1, 1, h, w])?);
        mask.extend_from_slice(&s.mask);
    }
    let rgb_refs: Vec<&Tensor<f32>> = rgbs.iter().collect();
    let depth_refs: Vec<&Tensor<f32>> = depths.iter().collect();
    Ok((concat(&rgb_refs, 0)?.detach(), concat(&depth_refs, 0)?.detach(), mask))
}
