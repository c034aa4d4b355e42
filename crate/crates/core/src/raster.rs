//! RGB pixel grids in [0, 1] and lossless PNG I/O.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Row-major RGB grid, three interleaved `f64` channels per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RgbGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        RgbGrid {
            rows,
            cols,
            data: vec![0.0; rows * cols * 3],
        }
    }

    pub fn filled(rows: usize, cols: usize, rgb: [f64; 3]) -> Self {
        let mut g = Self::new(rows, cols);
        for px in g.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        g
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut g = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                g.set(r, c, f(r, c));
            }
        }
        g
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.cols + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.cols + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ::image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        RgbGrid {
            rows: h as usize,
            cols: w as usize,
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// Quantizes to 8 bits per channel (values clamped to [0, 1]).
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(self.cols as u32, self.rows as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image {
                    path: path.to_path_buf(),
                    reason: other.to_string(),
                },
            })
    }
}
