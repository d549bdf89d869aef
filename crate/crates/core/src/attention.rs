//! Attention-alignment numerics for ViT detectors.
//!
//! * [`attention_rollout`] aggregates per-layer attention into a
//!   classification-token heatmap over the patch grid.
//! * [`patch_artifact_heatmap`] turns an annotation mask into per-patch
//!   artifact coverage on the same grid.
//! * [`alignment_loss`] / [`alignment_grad`] compare the two with a weighted
//!   squared error whose benign cells (zero coverage) are scaled by `lambda`.
//!
//! Everything here runs in `f64`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Row-major grid of values, conventionally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} heatmap",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Index of the first value outside `[0, 1]` (or non-finite), if any.
    pub fn first_out_of_unit_range(&self) -> Option<usize> {
        self.values.iter().position(|v| !(0.0..=1.0).contains(v))
    }

    fn check_same_shape(&self, other: &Heatmap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Per-layer attention matrices over `1 + n` tokens (token 0 is the
/// classification token), heads already averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    tokens: usize,
    layers: Vec<Vec<f64>>,
    gradients: Option<Vec<Vec<f64>>>,
}

/// Row sums must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl AttentionStack {
    pub fn new(
        tokens: usize,
        layers: Vec<Vec<f64>>,
        gradients: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if tokens < 2 {
            return Err(Error::ShapeMismatch(format!("{tokens} tokens (need >= 2)")));
        }
        let cells = tokens * tokens;
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != cells {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} has {} entries, expected {cells}",
                    layer.len()
                )));
            }
            for (r, row) in layer.chunks_exact(tokens).enumerate() {
                let sum: f64 = row.iter().sum();
                let negative = row.iter().any(|&v| !v.is_finite() || v < 0.0);
                if negative || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::NonStochasticRow {
                        layer: l,
                        row: r,
                        sum,
                    });
                }
            }
        }
        if let Some(grads) = &gradients {
            if grads.len() != layers.len() || grads.iter().any(|g| g.len() != cells) {
                return Err(Error::ShapeMismatch(
                    "gradient weights must match the attention layers".into(),
                ));
            }
            if let Some(i) = grads.iter().flatten().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(i));
            }
        }
        Ok(Self {
            tokens,
            layers,
            gradients,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn gradients(&self) -> Option<&[Vec<f64>]> {
        self.gradients.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutOptions {
    /// Min-max normalize the patch row to `[0, 1]`.
    pub normalize: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub heatmap: Heatmap,
    /// Set when the patch row was constant and normalization yielded zeros.
    pub degenerate: bool,
}

fn renormalize_rows(m: &mut [f64], n: usize) {
    for row in m.chunks_exact_mut(n) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// Residual-averaged layer `(A + I) / 2`, gradient-weighted first when
/// weights are present (`A ⊙ max(G, 0)`, rows renormalized).
pub fn effective_layer(stack: &AttentionStack, layer: usize) -> Vec<f64> {
    let n = stack.tokens;
    let mut a = stack.layers[layer].clone();
    if let Some(grads) = &stack.gradients {
        for (v, g) in a.iter_mut().zip(&grads[layer]) {
            *v *= g.max(0.0);
        }
        renormalize_rows(&mut a, n);
    }
    for (i, v) in a.iter_mut().enumerate() {
        *v *= 0.5;
        if i / n == i % n {
            *v += 0.5;
        }
    }
    renormalize_rows(&mut a, n);
    a
}

/// Classification-token rollout `row_0(Â_L · … · Â_1)` over the patch tokens,
/// reshaped to `grid_h × grid_w`.
pub fn attention_rollout(
    stack: &AttentionStack,
    grid_h: usize,
    grid_w: usize,
    opts: RolloutOptions,
) -> Result<Rollout> {
    let n = stack.tokens;
    if grid_h * grid_w + 1 != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} tokens cannot hold a {grid_h}x{grid_w} patch grid plus the classification token"
        )));
    }
    // row vector times matrices, applied from the last layer down
    let mut row = vec![0.0; n];
    row[0] = 1.0;
    let mut next = vec![0.0; n];
    for l in (0..stack.layers.len()).rev() {
        let a = effective_layer(stack, l);
        next.iter_mut().for_each(|v| *v = 0.0);
        for (k, &rk) in row.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            for (dst, &akj) in next.iter_mut().zip(&a[k * n..(k + 1) * n]) {
                *dst += rk * akj;
            }
        }
        std::mem::swap(&mut row, &mut next);
    }

    let mut patches = row[1..].to_vec();
    let mut degenerate = false;
    if opts.normalize {
        let (lo, hi) = patches
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi > lo {
            patches.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        } else {
            degenerate = true;
            patches.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(Rollout {
        heatmap: Heatmap::new(grid_h, grid_w, patches)?,
        degenerate,
    })
}

/// Fraction of artifact pixels per `patch × patch` cell. Edge cells that
/// overhang the image are normalized by the pixels they actually contain.
pub fn patch_artifact_heatmap(mask: &BinaryMask, patch: u32) -> Result<Heatmap> {
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be >= 1".into()));
    }
    let (h, w) = (mask.height().div_ceil(patch), mask.width().div_ceil(patch));
    let mut counts = vec![0u64; (h * w) as usize];
    for (row, col) in mask.iter_set() {
        counts[((row / patch) * w + col / patch) as usize] += 1;
    }
    let values = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / patch_cell_pixels(mask, patch, i as u32 / w, i as u32 % w) as f64)
        .collect();
    Heatmap::new(h as usize, w as usize, values)
}

/// Number of image pixels inside grid cell `(cell_row, cell_col)`.
pub fn patch_cell_pixels(mask: &BinaryMask, patch: u32, cell_row: u32, cell_col: u32) -> u64 {
    let rows = (mask.height() - cell_row * patch).min(patch) as u64;
    let cols = (mask.width() - cell_col * patch).min(patch) as u64;
    rows * cols
}

/// Validated `λ` and `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentParams {
    pub lambda: f64,
    pub beta: f64,
}

impl AlignmentParams {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lambda} outside [0, 1]"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta {beta} must be > 0")));
        }
        Ok(Self { lambda, beta })
    }
}

#[inline]
fn cell_weight(art: f64, lambda: f64) -> f64 {
    if art > 0.0 {
        1.0
    } else {
        lambda
    }
}

/// `(1/hw) Σ W (cls − art)²` on raw slices; `W = 1` where `art > 0`, else `lambda`.
pub fn weighted_squared_error(cls: &[f64], art: &[f64], lambda: f64) -> f64 {
    let sum: f64 = cls
        .iter()
        .zip(art)
        .map(|(&c, &a)| cell_weight(a, lambda) * (c - a) * (c - a))
        .sum();
    sum / cls.len() as f64
}

pub fn alignment_loss(a_cls: &Heatmap, a_art: &Heatmap, lambda: f64) -> Result<f64> {
    a_cls.check_same_shape(a_art)?;
    Ok(weighted_squared_error(&a_cls.values, &a_art.values, lambda))
}

/// `∂L/∂A_cls = (2/hw) W (A_cls − A_art)`.
pub fn alignment_grad(a_cls: &Heatmap, a_art: &Heatmap, lambda: f64) -> Result<Heatmap> {
    a_cls.check_same_shape(a_art)?;
    let scale = 2.0 / a_cls.values.len() as f64;
    let values = a_cls
        .values
        .iter()
        .zip(&a_art.values)
        .map(|(&c, &a)| scale * cell_weight(a, lambda) * (c - a))
        .collect();
    Heatmap::new(a_cls.height, a_cls.width, values)
}

/// Scores are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BceLoss {
    pub value: f64,
    pub clamped: bool,
}

pub fn bce_loss(score: f64, label: u8) -> BceLoss {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let y = if label == 0 { 0.0 } else { 1.0 };
    BceLoss {
        value: -(y * s.ln() + (1.0 - y) * (1.0 - s).ln()),
        clamped: s != score,
    }
}

pub fn total_loss(bce: f64, align: f64, beta: f64) -> f64 {
    bce + beta * align
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub cells: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            cells: self.cells + other.cells,
        }
    }
}

/// Relative error `|a − b| / max(|a|, |b|)`, 0 when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central finite differences of the alignment loss w.r.t. every `A_cls` cell.
pub fn gradient_check(
    a_cls: &Heatmap,
    a_art: &Heatmap,
    lambda: f64,
    step: f64,
) -> Result<GradCheck> {
    let analytic = alignment_grad(a_cls, a_art, lambda)?;
    let mut x = a_cls.values.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        cells: x.len(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = weighted_squared_error(&x, &a_art.values, lambda);
        x[i] = orig - step;
        let minus = weighted_squared_error(&x, &a_art.values, lambda);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.values[i];
        out.max_abs_error = out.max_abs_error.max((a - numeric).abs());
        out.max_rel_error = out.max_rel_error.max(relative_error(a, numeric));
    }
    Ok(out)
}
