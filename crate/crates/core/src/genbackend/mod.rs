//! Generation requests, reference routing and backend transports.

mod conformance;
mod mock;
mod remote;
pub mod stub;
pub mod wire;

use image::{GrayImage, RgbaImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mesh::InputImage;
use crate::views::{ViewRole, Viewpoint};

pub use conformance::{run_conformance, ConformanceCheck, ConformanceReport};
pub use mock::MockBackend;
pub use remote::{RemoteBackend, RetryPolicy, BACKEND_URL_ENV};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("view {view} needs the back reference, which has not been generated yet")]
    MissingBackReference { view: usize },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend returned {actual:?}, requested {expected:?}")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Generate,
    Inpaint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAngles {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl From<&Viewpoint> for ViewAngles {
    fn from(v: &Viewpoint) -> Self {
        Self {
            azimuth_deg: v.azimuth_deg,
            elevation_deg: v.elevation_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub mode: GenMode,
    pub reference: RgbaImage,
    /// Near-bright conditioning depth; its size is the output size.
    pub depth: GrayImage,
    /// Nonzero where inpainting may change pixels.
    pub mask: Option<GrayImage>,
    pub prompt: String,
    pub seed: u64,
    pub view: ViewAngles,
}

impl GenRequest {
    pub fn width(&self) -> u32 {
        self.depth.width()
    }

    pub fn height(&self) -> u32 {
        self.depth.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.depth.dimensions()
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let (w, h) = self.dimensions();
        if w == 0 || h == 0 {
            return Err(GenError::InvalidRequest("empty depth image".into()));
        }
        if self.reference.width() == 0 || self.reference.height() == 0 {
            return Err(GenError::InvalidRequest("empty reference image".into()));
        }
        match (&self.mode, &self.mask) {
            (GenMode::Inpaint, None) => Err(GenError::InvalidRequest("inpaint requires a mask".into())),
            (GenMode::Inpaint, Some(m)) if m.dimensions() != (w, h) => Err(GenError::InvalidRequest(format!(
                "mask is {:?}, depth is {:?}",
                m.dimensions(),
                (w, h)
            ))),
            (GenMode::Inpaint, Some(_)) if self.reference.dimensions() != (w, h) => Err(GenError::InvalidRequest(
                "inpaint reference must match the depth size".into(),
            )),
            _ => Ok(()),
        }
    }

    /// SHA-256 over a length-prefixed encoding of every field, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(match self.mode {
            GenMode::Generate => b"generate".as_slice(),
            GenMode::Inpaint => b"inpaint".as_slice(),
        });
        let mut image = |w: u32, hgt: u32, bytes: &[u8]| {
            h.update(w.to_le_bytes());
            h.update(hgt.to_le_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        image(self.reference.width(), self.reference.height(), self.reference.as_raw());
        image(self.depth.width(), self.depth.height(), self.depth.as_raw());
        match &self.mask {
            Some(m) => image(m.width(), m.height(), m.as_raw()),
            None => image(0, 0, &[]),
        }
        h.update((self.prompt.len() as u64).to_le_bytes());
        h.update(self.prompt.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.view.azimuth_deg.to_bits().to_le_bytes());
        h.update(self.view.elevation_deg.to_bits().to_le_bytes());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub seed: u64,
    pub request_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenImage {
    pub pixels: RgbaImage,
    pub provenance: Provenance,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, request: &GenRequest) -> Result<GenImage, GenError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn generate(&self, request: &GenRequest) -> Result<GenImage, GenError> {
        (**self).generate(request)
    }
}

/// Validates the request, calls the backend and enforces the size contract.
pub fn generate(request: &GenRequest, backend: &dyn Backend) -> Result<GenImage, GenError> {
    request.validate()?;
    let img = backend.generate(request)?;
    if img.pixels.dimensions() != request.dimensions() {
        return Err(GenError::DimensionMismatch {
            expected: request.dimensions(),
            actual: img.pixels.dimensions(),
        });
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Front,
    Back,
}

/// Which image conditions a view. The back view is generated from the front
/// photograph and then serves rear and vertical views.
pub fn reference_source(role: ViewRole) -> ReferenceSource {
    match role {
        ViewRole::Front | ViewRole::FrontSide | ViewRole::Side | ViewRole::Back => ReferenceSource::Front,
        ViewRole::BackSide | ViewRole::Top | ViewRole::Bottom => ReferenceSource::Back,
    }
}

pub fn select_reference<'a>(
    view: &Viewpoint,
    front: &'a InputImage,
    back: Option<&'a GenImage>,
) -> Result<&'a RgbaImage, GenError> {
    match reference_source(view.role()) {
        ReferenceSource::Front => Ok(front.pixels()),
        ReferenceSource::Back => back
            .map(|b| &b.pixels)
            .ok_or(GenError::MissingBackReference { view: view.index }),
    }
}

pub fn seed_for_view(global_seed: u64, view_index: usize) -> u64 {
    global_seed ^ view_index as u64
}

#[cfg(test)]
mod tests {
    use image::{Luma, Rgba};

    use super::*;
    use crate::views::default_view_set;

    pub(super) fn request(size: u32, rgb: [u8; 3]) -> GenRequest {
        GenRequest {
            mode: GenMode::Generate,
            reference: RgbaImage::from_pixel(16, 16, Rgba([rgb[0], rgb[1], rgb[2], 255])),
            depth: GrayImage::from_fn(size, size, |x, y| {
                let (dx, dy) = (x as i32 - size as i32 / 2, y as i32 - size as i32 / 2);
                Luma([if dx * dx + dy * dy < (size as i32 * size as i32) / 9 { 40 + (x % 200) as u8 } else { 0 }])
            }),
            mask: None,
            prompt: "a person, back view".into(),
            seed: 7,
            view: ViewAngles {
                azimuth_deg: 180.0,
                elevation_deg: 0.0,
            },
        }
    }

    #[test]
    fn routing_over_the_canonical_views() {
        let front = InputImage::new(RgbaImage::from_pixel(4, 4, Rgba([1, 2, 3, 255]))).unwrap();
        let back = GenImage {
            pixels: RgbaImage::from_pixel(4, 4, Rgba([9, 9, 9, 255])),
            provenance: Provenance {
                backend_id: "t".into(),
                seed: 0,
                request_hash: String::new(),
            },
        };
        let expected = [
            ReferenceSource::Front, // 180
            ReferenceSource::Front, // 0
            ReferenceSource::Front, // 45
            ReferenceSource::Front, // 315
            ReferenceSource::Front, // 90
            ReferenceSource::Front, // 270
            ReferenceSource::Back,  // 135
            ReferenceSource::Back,  // 225
            ReferenceSource::Back,  // top
            ReferenceSource::Back,  // bottom
        ];
        for (v, want) in default_view_set(2.0).iter().zip(expected) {
            assert_eq!(reference_source(v.role()), want, "view {}", v.index);
            let got = select_reference(v, &front, Some(&back)).unwrap();
            let want_img = if want == ReferenceSource::Front { front.pixels() } else { &back.pixels };
            assert_eq!(got, want_img);
            let missing = select_reference(v, &front, None);
            assert_eq!(missing.is_err(), want == ReferenceSource::Back);
        }
    }

    #[test]
    fn seeds_xor_the_view_index() {
        assert_eq!(seed_for_view(0b1010, 3), 0b1001);
        assert_eq!(seed_for_view(42, 0), 42);
    }

    #[test]
    fn hash_covers_every_field() {
        let base = request(32, [200, 10, 10]);
        let h = base.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, base.clone().hash());
        let mut r = base.clone();
        r.seed += 1;
        assert_ne!(r.hash(), h);
        let mut r = base.clone();
        r.prompt.push('!');
        assert_ne!(r.hash(), h);
        let mut r = base.clone();
        r.view.elevation_deg = 1.0;
        assert_ne!(r.hash(), h);
        let mut r = base.clone();
        r.depth.put_pixel(0, 0, Luma([1]));
        assert_ne!(r.hash(), h);
        let mut r = base;
        r.mode = GenMode::Inpaint;
        assert_ne!(r.hash(), h);
    }

    #[test]
    fn inpaint_without_mask_is_invalid() {
        let mut r = request(16, [1, 1, 1]);
        r.mode = GenMode::Inpaint;
        assert!(matches!(r.validate(), Err(GenError::InvalidRequest(_))));
        r.reference = RgbaImage::new(16, 16);
        r.mask = Some(GrayImage::new(16, 16));
        assert!(r.validate().is_ok());
    }

    struct WrongSize;

    impl Backend for WrongSize {
        fn id(&self) -> String {
            "wrong".into()
        }

        fn generate(&self, r: &GenRequest) -> Result<GenImage, GenError> {
            Ok(GenImage {
                pixels: RgbaImage::new(r.width() - 1, r.height()),
                provenance: Provenance {
                    backend_id: self.id(),
                    seed: r.seed,
                    request_hash: r.hash(),
                },
            })
        }
    }

    #[test]
    fn size_contract_is_enforced() {
        assert!(matches!(
            generate(&request(8, [0; 3]), &WrongSize),
            Err(GenError::DimensionMismatch { expected: (8, 8), actual: (7, 8) })
        ));
    }
}
