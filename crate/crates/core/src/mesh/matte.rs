use image::RgbaImage;

use super::MeshError;
use crate::grid::Mask;

const ALPHA_THRESHOLD: u8 = 128;

/// An RGBA photograph whose alpha channel is the foreground matte.
#[derive(Debug, Clone, PartialEq)]
pub struct InputImage(RgbaImage);

impl InputImage {
    /// Fails when no pixel has nonzero alpha.
    pub fn new(pixels: RgbaImage) -> Result<Self, MeshError> {
        if !pixels.pixels().any(|p| p[3] > 0) {
            return Err(MeshError::EmptyForeground);
        }
        Ok(Self(pixels))
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, MeshError> {
        Self::new(image::open(path)?.to_rgba8())
    }

    pub fn pixels(&self) -> &RgbaImage {
        &self.0
    }

    pub fn into_inner(self) -> RgbaImage {
        self.0
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn foreground(&self) -> Mask {
        Mask::from_fn(self.width(), self.height(), |x, y| self.0.get_pixel(x, y)[3] > 0)
    }
}

/// Binarizes the matte. With an explicit mask, pixels outside it get alpha 0
/// and pixels inside are untouched; without one, alpha is thresholded at 128.
pub fn apply_matte(image: &RgbaImage, mask: Option<&Mask>) -> Result<InputImage, MeshError> {
    let mut out = image.clone();
    match mask {
        Some(mask) => {
            if mask.dimensions() != image.dimensions() {
                return Err(MeshError::DimensionMismatch {
                    image: image.dimensions(),
                    mask: mask.dimensions(),
                });
            }
            for (x, y, p) in out.enumerate_pixels_mut() {
                if !*mask.get(x, y) {
                    p[3] = 0;
                }
            }
        }
        None => {
            for p in out.pixels_mut() {
                p[3] = if p[3] >= ALPHA_THRESHOLD { 255 } else { 0 };
            }
        }
    }
    InputImage::new(out)
}
