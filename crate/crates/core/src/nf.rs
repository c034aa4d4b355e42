//! Neuron Feature: activation-weighted average of a neuron's top crops.
//!
//! The default ([`NfNormalization::Literal`]) divides the weighted sum by
//! `n_max` even when fewer crops passed the ranking threshold, so sparse
//! neurons produce darker features. [`NfNormalization::WeightSum`] instead
//! divides by the per-pixel sum of contributing weights.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CroppedImage;
use crate::raster::RgbGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NfNormalization {
    #[default]
    Literal,
    WeightSum,
}

/// Whether pixels that fell outside the source image take part in sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskHandling {
    #[default]
    Exclude,
    Include,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NfOptions {
    pub normalization: NfNormalization,
    pub masked: MaskHandling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronFeature {
    pub pixels: RgbGrid,
    pub n_used: usize,
    pub n_max: usize,
    pub weight_sum: f64,
    /// Per-pixel count of contributing crops.
    pub coverage: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelStdMap {
    pub rows: usize,
    pub cols: usize,
    /// Root-mean of the three per-channel variances, per pixel.
    pub std: Vec<f64>,
    pub mean: RgbGrid,
}

fn check_inputs(crops: &[CroppedImage], weights: &[f64]) -> Result<(usize, usize)> {
    let first = crops
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty crop list".into()))?;
    if weights.len() != crops.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} crops but {} weights",
            crops.len(),
            weights.len()
        )));
    }
    let dims = (first.pixels.rows, first.pixels.cols);
    if let Some(bad) = crops.iter().find(|c| (c.pixels.rows, c.pixels.cols) != dims) {
        return Err(Error::DimensionMismatch(format!(
            "crop {}x{} differs from {}x{}",
            bad.pixels.rows, bad.pixels.cols, dims.0, dims.1
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(Error::InvalidArgument(format!("weight {w} outside (0, 1]")));
    }
    Ok(dims)
}

pub fn compute_nf(crops: &[CroppedImage], weights: &[f64], n_max: usize, opts: NfOptions) -> Result<NeuronFeature> {
    let (rows, cols) = check_inputs(crops, weights)?;
    if n_max == 0 || crops.len() > n_max {
        return Err(Error::InvalidArgument(format!(
            "{} crops exceed n_max {n_max}",
            crops.len()
        )));
    }
    let npx = rows * cols;
    let mut sum = vec![0.0f64; npx * 3];
    let mut wsum = vec![0.0f64; npx];
    let mut coverage = vec![0u32; npx];
    for (crop, &w) in crops.iter().zip(weights) {
        for p in 0..npx {
            if opts.masked == MaskHandling::Exclude && !crop.valid[p] {
                continue;
            }
            coverage[p] += 1;
            wsum[p] += w;
            for ch in 0..3 {
                sum[p * 3 + ch] += w * crop.pixels.data[p * 3 + ch];
            }
        }
    }
    let mut pixels = RgbGrid::new(rows, cols);
    for p in 0..npx {
        let denom = match opts.normalization {
            NfNormalization::Literal => n_max as f64,
            NfNormalization::WeightSum => wsum[p],
        };
        if denom > 0.0 {
            for ch in 0..3 {
                pixels.data[p * 3 + ch] = sum[p * 3 + ch] / denom;
            }
        }
    }
    Ok(NeuronFeature {
        pixels,
        n_used: crops.len(),
        n_max,
        weight_sum: weights.iter().sum(),
        coverage,
    })
}

/// Weighted population standard deviation of each pixel across the crops
/// that cover it. Uncovered pixels get zero mean and zero deviation.
pub fn pixel_std_map(crops: &[CroppedImage], weights: &[f64]) -> Result<PixelStdMap> {
    let (rows, cols) = check_inputs(crops, weights)?;
    let npx = rows * cols;
    let mut mean = RgbGrid::new(rows, cols);
    let mut std = vec![0.0; npx];
    for p in 0..npx {
        let covering = || crops.iter().zip(weights).filter(|(c, _)| c.valid[p]);
        let wsum: f64 = covering().map(|(_, w)| w).sum();
        if wsum <= 0.0 {
            continue;
        }
        let mut var_sum = 0.0;
        for ch in 0..3 {
            let mu = covering().map(|(c, w)| w * c.pixels.data[p * 3 + ch]).sum::<f64>() / wsum;
            let var = covering()
                .map(|(c, w)| {
                    let d = c.pixels.data[p * 3 + ch] - mu;
                    w * d * d
                })
                .sum::<f64>()
                / wsum;
            mean.data[p * 3 + ch] = mu;
            var_sum += var;
        }
        std[p] = (var_sum / 3.0).sqrt();
    }
    Ok(PixelStdMap { rows, cols, std, mean })
}

/// Mean squared forward-difference gradient over pixels and channels.
/// Zero for flat features; larger values mean more spatial structure.
pub fn nf_sharpness(nf: &NeuronFeature) -> f64 {
    grid_sharpness(&nf.pixels)
}

pub fn grid_sharpness(g: &RgbGrid) -> f64 {
    if g.pixel_count() == 0 {
        return 0.0;
    }
    let mut energy = 0.0;
    for r in 0..g.rows {
        for c in 0..g.cols {
            let here = g.get(r, c);
            let right = if c + 1 < g.cols { g.get(r, c + 1) } else { here };
            let down = if r + 1 < g.rows { g.get(r + 1, c) } else { here };
            for ch in 0..3 {
                let gx = right[ch] - here[ch];
                let gy = down[ch] - here[ch];
                energy += gx * gx + gy * gy;
            }
        }
    }
    energy / (3 * g.pixel_count()) as f64
}

/// Writes `<stem>.png` plus a `<stem>.txt` sidecar with n_used, weight_sum
/// and sharpness.
pub fn export_nf(nf: &NeuronFeature, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    nf.pixels.save_png(&dir.join(format!("{stem}.png")))?;
    let side = dir.join(format!("{stem}.txt"));
    let mut f = std::fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
    writeln!(
        f,
        "n_used = {}\nn_max = {}\nweight_sum = {}\nsharpness = {}",
        nf.n_used,
        nf.n_max,
        nf.weight_sum,
        nf_sharpness(nf)
    )
    .map_err(|e| Error::io(&side, e))
}
