use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DepthSample;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// Axis-aligned object at a constant depth. Bounds are in pixel units,
/// `[top, bottom) × [left, right)`; ellipses are inscribed in the box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub top: f32,
    pub bottom: f32,
    pub left: f32,
    pub right: f32,
    pub depth: f32,
    pub albedo: [f32; 3],
}

impl Shape {
    /// Whether the pixel centre `(r + 0.5, c + 0.5)` lies inside.
    pub fn covers(&self, r: usize, c: usize) -> bool {
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        match self.kind {
            ShapeKind::Rect => y >= self.top && y < self.bottom && x >= self.left && x < self.right,
            ShapeKind::Ellipse => {
                let (cy, cx) = ((self.top + self.bottom) / 2.0, (self.left + self.right) / 2.0);
                let (ry, rx) = ((self.bottom - self.top) / 2.0, (self.right - self.left) / 2.0);
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// Background depth ramps linearly from `far` (top row) to `near` (bottom row).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub max_depth: f32,
    pub far: f32,
    pub near: f32,
    pub background_albedo: [f32; 3],
    pub shapes: Vec<Shape>,
}

impl SceneLayout {
    pub fn background_depth(&self, r: usize) -> f32 {
        let t = r as f32 / (self.height - 1) as f32;
        self.far + (self.near - self.far) * t
    }
}

pub fn scene_layout(seed: u64, height: usize, width: usize, max_depth: f32) -> Result<SceneLayout> {
    if height < 64 || width < 64 {
        return Err(config_err(format!("synthetic scenes need at least 64×64, got {height}×{width}")));
    }
    if !(max_depth > 0.0 && max_depth.is_finite()) {
        return Err(config_err(format!("max_depth must be positive, got {max_depth}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let far = max_depth * rng.random_range(0.7..1.0);
    let near = far * rng.random_range(0.25..0.6);
    let albedo = |rng: &mut ChaCha8Rng| [0; 3].map(|_: i32| rng.random_range(0.35f32..1.0));
    let background_albedo = albedo(&mut rng);
    let count = rng.random_range(3..=8);
    let (h, w) = (height as f32, width as f32);
    let shapes = (0..count)
        .map(|_| {
            let sh = h * rng.random_range(0.15..0.5);
            let sw = w * rng.random_range(0.15..0.5);
            let top = rng.random_range(0.0..h - sh);
            let left = rng.random_range(0.0..w - sw);
            Shape {
                kind: if rng.random_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
                top,
                bottom: top + sh,
                left,
                right: left + sw,
                depth: max_depth * rng.random_range(0.08..0.7),
                albedo: albedo(&mut rng),
            }
        })
        .collect();
    Ok(SceneLayout {
        height,
        width,
        max_depth,
        far,
        near,
        background_albedo,
        shapes,
    })
}

/// Depth is the minimum over the background and every covering shape; colour
/// is the nearest surface's albedo shaded by its depth.
pub fn render(layout: &SceneLayout) -> Result<DepthSample> {
    let (h, w) = (layout.height, layout.width);
    let mut depth = vec![0f32; h * w];
    let mut rgb = vec![0f32; 3 * h * w];
    for r in 0..h {
        for c in 0..w {
            let mut d = layout.background_depth(r);
            let mut albedo = layout.background_albedo;
            for s in &layout.shapes {
                if s.depth < d && s.covers(r, c) {
                    d = s.depth;
                    albedo = s.albedo;
                }
            }
            let d = d.clamp(f32::MIN_POSITIVE, layout.max_depth);
            depth[r * w + c] = d;
            let shade = 1.0 - 0.75 * d / layout.max_depth;
            for ch in 0..3 {
                rgb[ch * h * w + r * w + c] = (albedo[ch] * shade).clamp(0.0, 1.0);
            }
        }
    }
    DepthSample::new(
        Tensor::new(rgb, &[3, h, w])?,
        Tensor::new(depth, &[1, h, w])?,
        vec![true; h * w],
    )
}

/// Deterministic procedural scene: a depth ramp plus 3–8 rectangles and
/// ellipses, min-composited.
pub fn synth_scene(seed: u64, height: usize, width: usize, max_depth: f32) -> Result<DepthSample> {
    render(&scene_layout(seed, height, width, max_depth)?)
}
