//! Image containers and the unfold/fold reshapes between image layout and
//! pixel-matrix layout.
//!
//! Layout conventions, fixed once for the whole crate: pixels are row-major
//! (y-major, then x); channels are interleaved per pixel, setting-major then
//! RGB. A stack with N settings therefore stores, per pixel, setting 0's
//! (R,G,B), then setting 1's (R,G,B), and so on.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// An H x W image carrying N white-balance renditions concatenated
/// channel-wise (3N channels per pixel), values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub height: usize,
    pub width: usize,
    pub settings: usize,
    pub data: Vec<f64>,
}

/// A plain 3-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// One row per pixel, `channels` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMatrix {
    pub pixels: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageStack {
    pub fn new(height: usize, width: usize, settings: usize, data: Vec<f64>) -> Result<Self> {
        if settings == 0 || data.len() != height * width * 3 * settings {
            return Err(Error::Dimension {
                context: "ImageStack::new",
                expected: format!("{}x{}x{} = {} values", height, width, 3 * settings, height * width * 3 * settings),
                got: format!("{} values (settings={})", data.len(), settings),
            });
        }
        Ok(Self { height, width, settings, data })
    }

    pub fn zeros(height: usize, width: usize, settings: usize) -> Self {
        Self {
            height,
            width,
            settings,
            data: vec![0.0; height * width * 3 * settings],
        }
    }

    pub fn channels(&self) -> usize {
        3 * self.settings
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let c = self.channels();
        let base = (y * self.width + x) * c;
        &self.data[base..base + c]
    }

    /// Rectangular crop; `y0 + h <= height`, `x0 + w <= width`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageStack {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let c = self.channels();
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + w * c]);
        }
        ImageStack { height: h, width: w, settings: self.settings, data }
    }

    /// A canonical image viewed as a 1-setting stack (same layout).
    pub fn from_canonical(img: &CanonicalImage) -> ImageStack {
        ImageStack {
            height: img.height,
            width: img.width,
            settings: 1,
            data: img.data.clone(),
        }
    }
}

impl CanonicalImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Dimension {
                context: "CanonicalImage::new",
                expected: format!("{} values", height * width * 3),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * 3;
        &self.data[base..base + 3]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> CanonicalImage {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        CanonicalImage { height: h, width: w, data }
    }
}

/// Reshape an image stack into an HW x 3N pixel matrix. Row p of the output
/// is pixel p's channel values, pixels in row-major order. The storage
/// layouts coincide, so this is a straight copy.
pub fn unfold(img: &ImageStack) -> PixelMatrix {
    PixelMatrix {
        pixels: img.height * img.width,
        channels: img.channels(),
        data: img.data.clone(),
    }
}

/// Exact inverse of `unfold`.
pub fn fold(pm: &PixelMatrix, height: usize, width: usize, settings: usize) -> Result<ImageStack> {
    if pm.pixels != height * width || pm.channels != 3 * settings {
        return Err(Error::Dimension {
            context: "fold",
            expected: format!("{} pixels x {} channels", height * width, 3 * settings),
            got: format!("{} pixels x {} channels", pm.pixels, pm.channels),
        });
    }
    ImageStack::new(height, width, settings, pm.data.clone())
}

impl PixelMatrix {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.pixels, self.channels, self.data.clone())
            .expect("pixel matrix dims are consistent by construction")
    }

    pub fn from_matrix(m: &Matrix) -> PixelMatrix {
        PixelMatrix {
            pixels: m.rows(),
            channels: m.cols(),
            data: m.data().to_vec(),
        }
    }
}
