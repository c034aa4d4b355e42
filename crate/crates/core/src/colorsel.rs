//! Color selectivity index.
//!
//! NF pixels are mapped into an orthonormal opponent basis
//!
//! ```text
//! o1 = (R + G + B) / sqrt(3)    intensity
//! o2 = (R - G) / sqrt(2)        red-green
//! o3 = (R + G - 2B) / sqrt(6)   yellow-blue
//! ```
//!
//! so the intensity axis is exactly `(1, 0, 0)`. The first principal axis
//! `v` of the inverse-std weighted pixel cloud gives the index
//! `alpha = acos(|v . b|) / 90deg`: 0 for achromatic features, 1 for
//! features whose color varies only in chroma.

use std::io::Write;

use crate::error::{Error, Result};
use crate::nf::{NeuronFeature, PixelStdMap};
use crate::raster::RgbGrid;

pub const DEFAULT_ALPHA_THRESHOLD: f64 = 0.40;
pub const DEFAULT_STD_EPSILON: f64 = 1e-4;
pub const EIGEN_TOLERANCE: f64 = 1e-12;
pub const HUE_TOLERANCE: f64 = 1e-9;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT3: f64 = 0.577_350_269_189_625_8;
const INV_SQRT6: f64 = 0.408_248_290_463_863;

pub type Vec3 = [f64; 3];

#[inline]
pub fn opp_from_rgb([r, g, b]: Vec3) -> Vec3 {
    [
        (r + g + b) * INV_SQRT3,
        (r - g) * INV_SQRT2,
        (r + g - 2.0 * b) * INV_SQRT6,
    ]
}

#[inline]
pub fn rgb_from_opp([o1, o2, o3]: Vec3) -> Vec3 {
    [
        o1 * INV_SQRT3 + o2 * INV_SQRT2 + o3 * INV_SQRT6,
        o1 * INV_SQRT3 - o2 * INV_SQRT2 + o3 * INV_SQRT6,
        o1 * INV_SQRT3 - 2.0 * o3 * INV_SQRT6,
    ]
}

pub fn rgb_to_opp(image: &RgbGrid) -> Result<Vec<Vec3>> {
    if let Some(v) = image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(image.pixels().map(opp_from_rgb).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OppPixelCloud {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl OppPixelCloud {
    pub fn new(points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points, {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("PCA weight {w} must be positive and finite")));
        }
        Ok(OppPixelCloud { points, weights })
    }

    pub fn uniform(points: Vec<Vec3>) -> Self {
        let weights = vec![1.0; points.len()];
        OppPixelCloud { points, weights }
    }

    /// NF pixels weighted by `1 / (std + eps)`.
    pub fn from_nf(nf: &NeuronFeature, std: &PixelStdMap, eps: f64) -> Result<Self> {
        if std.std.len() != nf.pixels.pixel_count() {
            return Err(Error::DimensionMismatch("std map does not match NF".into()));
        }
        let points = rgb_to_opp(&nf.pixels)?;
        let weights = std.std.iter().map(|s| 1.0 / (s + eps)).collect();
        Self::new(points, weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPca {
    /// Unit first principal axis, sign canonicalized.
    pub axis: Vec3,
    /// Eigenvalues, descending.
    pub eigenvalues: Vec3,
    pub mean: Vec3,
    /// Covariance vanished; `axis` is set to the intensity direction.
    pub degenerate: bool,
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations. Returns eigenvalues (descending) and the matching unit
/// eigenvectors as columns `vecs[i][k]` = component i of vector k.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> (Vec3, [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..64 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= EIGEN_TOLERANCE * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vecs = [[0.0; 3]; 3];
    for (k, &src) in order.iter().enumerate() {
        for i in 0..3 {
            vecs[i][k] = v[i][src];
        }
    }
    (vals, vecs)
}

fn canonical_sign(mut v: Vec3) -> Vec3 {
    if let Some(first) = v.iter().find(|c| c.abs() > EIGEN_TOLERANCE) {
        if *first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
    v
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub fn weighted_covariance(cloud: &OppPixelCloud) -> Result<(Vec3, [[f64; 3]; 3])> {
    if cloud.points.len() < 2 {
        return Err(Error::InvalidArgument("weighted PCA needs at least 2 points".into()));
    }
    let total: f64 = cloud.weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidArgument("total PCA weight must be positive".into()));
    }
    let mut mean = [0.0; 3];
    for (p, w) in cloud.points.iter().zip(&cloud.weights) {
        for i in 0..3 {
            mean[i] += w * p[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = [[0.0; 3]; 3];
    for (p, w) in cloud.points.iter().zip(&cloud.weights) {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] += w * d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            cov[i][j] /= total;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

pub fn weighted_pca_axis(cloud: &OppPixelCloud) -> Result<WeightedPca> {
    let (mean, cov) = weighted_covariance(cloud)?;
    let (vals, vecs) = symmetric_eigen3(cov);
    let mean_sq = mean.iter().map(|m| m * m).sum::<f64>();
    let degenerate = vals[0] <= 0.0 || vals[0] <= 1e-24 * mean_sq;
    let axis = if degenerate {
        [1.0, 0.0, 0.0]
    } else {
        canonical_sign(normalize([vecs[0][0], vecs[1][0], vecs[2][0]]))
    };
    Ok(WeightedPca {
        axis,
        eigenvalues: vals,
        mean,
        degenerate,
    })
}

/// `acos(|v . b|) / 90` in degrees, with `b` the intensity axis.
pub fn color_selectivity_index(axis: Vec3) -> f64 {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let cos = (axis[0].abs() / norm).min(1.0);
    cos.acos().to_degrees() / 90.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hue {
    /// Degrees in [0, 360); `None` when the axis is achromatic.
    pub degrees: Option<f64>,
    pub chroma_magnitude: f64,
}

pub fn hue_angle(axis: Vec3) -> Hue {
    let chroma_magnitude = axis[1].hypot(axis[2]);
    let degrees = (chroma_magnitude > HUE_TOLERANCE).then(|| {
        let d = axis[2].atan2(axis[1]).to_degrees();
        let d = if d < 0.0 { d + 360.0 } else { d };
        if d >= 360.0 {
            0.0
        } else {
            d
        }
    });
    Hue {
        degrees,
        chroma_magnitude,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorSelectivity {
    /// First weighted principal axis, oriented toward the cloud's mean chroma.
    pub axis: Vec3,
    pub alpha: f64,
    pub hue: Hue,
    pub degenerate: bool,
}

impl ColorSelectivity {
    pub fn is_selective(&self, threshold: f64) -> bool {
        self.alpha >= threshold
    }
}

/// Full per-neuron pipeline: opponent cloud, weighted PCA, index, hue.
/// The returned axis points toward the weighted mean chroma.
pub fn color_selectivity(cloud: &OppPixelCloud) -> Result<ColorSelectivity> {
    let pca = weighted_pca_axis(cloud)?;
    let mut axis = pca.axis;
    let along = axis[1] * pca.mean[1] + axis[2] * pca.mean[2];
    if pca.mean[1].hypot(pca.mean[2]) > HUE_TOLERANCE && along < 0.0 {
        axis.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(ColorSelectivity {
        axis,
        alpha: color_selectivity_index(axis),
        hue: hue_angle(axis),
        degenerate: pca.degenerate,
    })
}

pub fn nf_color_selectivity(nf: &NeuronFeature, std: &PixelStdMap, eps: f64) -> Result<ColorSelectivity> {
    color_selectivity(&OppPixelCloud::from_nf(nf, std, eps)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorRecord {
    pub layer: String,
    pub neuron: usize,
    /// `None` for dead neurons.
    pub selectivity: Option<ColorSelectivity>,
}

/// CSV: layer, neuron, alpha, hue_angle, chroma_magnitude, dead.
pub fn write_color_csv<W: Write>(out: W, records: &[ColorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "neuron", "alpha", "hue_angle", "chroma_magnitude", "dead"])?;
    for r in records {
        let (alpha, hue, chroma) = match &r.selectivity {
            Some(s) => (
                s.alpha.to_string(),
                s.hue.degrees.map(|d| d.to_string()).unwrap_or_default(),
                s.hue.chroma_magnitude.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            r.layer.clone(),
            r.neuron.to_string(),
            alpha,
            hue,
            chroma,
            r.selectivity.is_none().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
