//! Tile-based differentiable Gaussian rasterizer, a brute-force reference
//! renderer and image metrics.

mod raster;
mod reference;

pub use raster::{rasterize, rasterize_on_tape, RenderVars, SplatVars};
pub use reference::brute_force_render;

use crate::error::{Error, Result};

/// Upper clamp on per-Gaussian alpha.
pub const ALPHA_MAX: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct TileConfig {
    /// Pixels per tile side.
    pub tile: usize,
    pub background: [f64; 3],
    /// Contributions with smaller alpha are skipped.
    pub alpha_cutoff: f64,
    /// Blending stops once transmittance falls below this.
    pub transmittance_floor: f64,
    /// A Gaussian only touches pixels within this many standard deviations
    /// (Mahalanobis radius). `None` means unbounded support.
    pub support: Option<f64>,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile: 16,
            background: [0.0; 3],
            alpha_cutoff: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            support: Some(3.0),
        }
    }
}

impl TileConfig {
    /// Every shortcut disabled: no cutoff, no early exit, unbounded support.
    pub fn exact() -> Self {
        Self {
            alpha_cutoff: 0.0,
            transmittance_floor: 0.0,
            support: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 {
            return Err(Error::invalid("tile size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.alpha_cutoff)
            || !(0.0..1.0).contains(&self.transmittance_floor)
        {
            return Err(Error::invalid(
                "alpha cutoff and transmittance floor must lie in [0,1)",
            ));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("background color outside [0,1]"));
        }
        if self.support.is_some_and(|k| !(k > 0.0)) {
            return Err(Error::invalid("support radius must be positive"));
        }
        Ok(())
    }
}

/// Per-view rendered maps, row-major over pixels (`y·W + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// `H·W·3`
    pub color: Vec<f64>,
    /// `H·W`
    pub depth: Vec<f64>,
    /// `H·W·feature_dim`
    pub feature: Vec<f64>,
    /// `H·W`
    pub transmittance: Vec<f64>,
}

impl RenderOutput {
    pub fn background(width: usize, height: usize, feature_dim: usize, bg: [f64; 3]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            feature_dim,
            color: bg.repeat(n),
            depth: vec![0.0; n],
            feature: vec![0.0; n * feature_dim],
            transmittance: vec![1.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// `10·log10(1/MSE)` over equally sized images; `+∞` for identical inputs.
pub fn psnr(img: &[f64], reference: &[f64]) -> Result<f64> {
    if img.len() != reference.len() || img.is_empty() {
        return Err(Error::invalid(format!(
            "psnr: image sizes {} and {} differ or are empty",
            img.len(),
            reference.len()
        )));
    }
    let mse = img
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / img.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}
