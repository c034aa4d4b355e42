//! Receptive-field arithmetic and crop placement.
//!
//! Walking the ops in order, each kernel `k`, stride `s`, pad `p` updates
//!
//! ```text
//! size'  = size + (k - 1) * jump
//! jump'  = jump * s
//! start' = start - p * jump
//! ```
//!
//! where `start` is the input coordinate of the first pixel in the footprint
//! of activation (0, 0). The footprint center is `start + (size - 1) / 2`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::RgbGrid;

pub const VGG_M_ARCH: &str = include_str!("../arch/vgg_m.arch");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Convolution,
    Pooling,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometryOp {
    pub kind: OpKind,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Name of the layer boundary right after this op, if any.
    pub name: Option<String>,
}

impl GeometryOp {
    pub fn conv(name: &str, kernel: usize, stride: usize, pad: usize) -> Self {
        GeometryOp {
            kind: OpKind::Convolution,
            kernel,
            stride,
            pad,
            name: Some(name.to_string()),
        }
    }

    pub fn pool(kernel: usize, stride: usize, pad: usize) -> Self {
        GeometryOp {
            kind: OpKind::Pooling,
            kernel,
            stride,
            pad,
            name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub input_size: (usize, usize),
    pub ops: Vec<GeometryOp>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfGeometry {
    /// Side length in input pixels.
    pub size: usize,
    /// Input pixels per unit step in the activation map.
    pub jump: usize,
    /// Input coordinate of the first footprint pixel of activation 0.
    pub start: i64,
    /// Input coordinate of the footprint center of activation 0.
    pub offset: f64,
}

impl RfGeometry {
    pub const IDENTITY: RfGeometry = RfGeometry {
        size: 1,
        jump: 1,
        start: 0,
        offset: 0.0,
    };

    pub fn compose(self, kernel: usize, stride: usize, pad: usize) -> RfGeometry {
        let size = self.size + (kernel - 1) * self.jump;
        let start = self.start - (pad * self.jump) as i64;
        RfGeometry {
            size,
            jump: self.jump * stride,
            start,
            offset: start as f64 + (size - 1) as f64 / 2.0,
        }
    }
}

impl ArchitectureSpec {
    pub fn vgg_m() -> Self {
        VGG_M_ARCH.parse().expect("bundled VGG-M description parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().filter_map(|op| op.name.as_deref())
    }

    pub fn conv_layer_names(&self) -> Vec<String> {
        self.ops
            .iter()
            .filter(|op| op.kind == OpKind::Convolution)
            .filter_map(|op| op.name.clone())
            .collect()
    }

    fn ops_through(&self, layer: &str) -> Result<&[GeometryOp]> {
        let end = self
            .ops
            .iter()
            .position(|op| op.name.as_deref() == Some(layer))
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
        Ok(&self.ops[..=end])
    }

    pub fn receptive_field(&self, layer: &str) -> Result<RfGeometry> {
        Ok(self
            .ops_through(layer)?
            .iter()
            .fold(RfGeometry::IDENTITY, |rf, op| rf.compose(op.kernel, op.stride, op.pad)))
    }

    /// Activation-map dims at `layer` (floor rounding).
    pub fn output_dims(&self, layer: &str) -> Result<(usize, usize)> {
        let mut dims = self.input_size;
        for op in self.ops_through(layer)? {
            let step = |n: usize| -> Result<usize> {
                let padded = n + 2 * op.pad;
                if padded < op.kernel {
                    return Err(Error::InvalidArgument(format!(
                        "kernel {} exceeds padded extent {padded} before `{layer}`",
                        op.kernel
                    )));
                }
                Ok((padded - op.kernel) / op.stride + 1)
            };
            dims = (step(dims.0)?, step(dims.1)?);
        }
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            if op.kernel == 0 || op.stride == 0 {
                return Err(Error::InvalidArgument("kernel and stride must be >= 1".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.layer_names() {
            if !seen.insert(name) {
                return Err(Error::InvalidArgument(format!("duplicate boundary `{name}`")));
            }
        }
        Ok(())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut input_size = None;
        let mut ops = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |reason: String| Error::Architecture { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            match head {
                "input" => {
                    let dims: Vec<usize> = words
                        .map(|w| w.parse().map_err(|_| err(format!("bad input size `{w}`"))))
                        .collect::<Result<_>>()?;
                    match dims.as_slice() {
                        [r, c] if *r > 0 && *c > 0 => input_size = Some((*r, *c)),
                        _ => return Err(err("expected `input ROWS COLS`".into())),
                    }
                }
                "conv" | "pool" => {
                    let kind = if head == "conv" { OpKind::Convolution } else { OpKind::Pooling };
                    let (mut k, mut s, mut p, mut name) = (None, None, None, None);
                    for w in words {
                        let parsed = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer in `{w}`")));
                        if let Some(v) = w.strip_prefix("k=") {
                            k = Some(parsed(v)?);
                        } else if let Some(v) = w.strip_prefix("s=") {
                            s = Some(parsed(v)?);
                        } else if let Some(v) = w.strip_prefix("p=") {
                            p = Some(parsed(v)?);
                        } else if name.is_none() && !w.contains('=') {
                            name = Some(w.to_string());
                        } else {
                            return Err(err(format!("unexpected token `{w}`")));
                        }
                    }
                    let kernel = k.ok_or_else(|| err("missing k=".into()))?;
                    let stride = s.unwrap_or(1);
                    if kernel == 0 || stride == 0 {
                        return Err(err("kernel and stride must be >= 1".into()));
                    }
                    ops.push(GeometryOp {
                        kind,
                        kernel,
                        stride,
                        pad: p.unwrap_or(0),
                        name,
                    });
                }
                // per-position ops
                "lrn" | "relu" => {}
                other => return Err(err(format!("unknown op `{other}`"))),
            }
        }
        let arch = ArchitectureSpec {
            input_size: input_size.ok_or(Error::Architecture {
                line: 0,
                reason: "missing `input` line".into(),
            })?,
            ops,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Rows/cols of a crop that fell outside the image, per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClipMask {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl ClipMask {
    pub fn is_empty(&self) -> bool {
        *self == ClipMask::default()
    }
}

/// Inclusive pixel rectangle in input-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub top: i64,
    pub left: i64,
    pub bottom: i64,
    pub right: i64,
    pub clipped: ClipMask,
}

impl CropRect {
    pub fn side(&self) -> usize {
        (self.bottom - self.top + 1) as usize
    }

    pub fn is_fully_outside(&self, image_size: (usize, usize)) -> bool {
        self.bottom < 0 || self.right < 0 || self.top >= image_size.0 as i64 || self.left >= image_size.1 as i64
    }
}

pub fn project_to_image(rf: &RfGeometry, pos: (usize, usize), image_size: (usize, usize)) -> CropRect {
    let top = rf.start + (pos.0 * rf.jump) as i64;
    let left = rf.start + (pos.1 * rf.jump) as i64;
    let side = rf.size as i64;
    let (bottom, right) = (top + side - 1, left + side - 1);
    let (rows, cols) = (image_size.0 as i64, image_size.1 as i64);
    let outside = |n: i64| n.clamp(0, side) as usize;
    CropRect {
        top,
        left,
        bottom,
        right,
        clipped: ClipMask {
            top: outside(-top),
            left: outside(-left),
            bottom: outside(bottom - (rows - 1)),
            right: outside(right - (cols - 1)),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadPolicy {
    #[default]
    Zero,
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CroppedImage {
    pub pixels: RgbGrid,
    /// `true` where the pixel came from inside the source image.
    pub valid: Vec<bool>,
    pub clipped: ClipMask,
}

impl CroppedImage {
    pub fn unmasked(pixels: RgbGrid) -> Self {
        let valid = vec![true; pixels.pixel_count()];
        CroppedImage {
            pixels,
            valid,
            clipped: ClipMask::default(),
        }
    }
}

pub fn crop_image(image: &RgbGrid, rect: &CropRect, pad: PadPolicy) -> CroppedImage {
    let side = rect.side();
    let mut pixels = RgbGrid::new(side, side);
    let mut valid = vec![false; side * side];
    let (rows, cols) = (image.rows as i64, image.cols as i64);
    for dr in 0..side {
        let r = rect.top + dr as i64;
        for dc in 0..side {
            let c = rect.left + dc as i64;
            let inside = (0..rows).contains(&r) && (0..cols).contains(&c);
            if inside {
                valid[dr * side + dc] = true;
                pixels.set(dr, dc, image.get(r as usize, c as usize));
            } else if pad == PadPolicy::Clamp && rows > 0 && cols > 0 {
                pixels.set(dr, dc, image.get(r.clamp(0, rows - 1) as usize, c.clamp(0, cols - 1) as usize));
            }
        }
    }
    CroppedImage {
        pixels,
        valid,
        clipped: rect.clipped,
    }
}
