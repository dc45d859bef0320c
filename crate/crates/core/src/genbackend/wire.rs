//! JSON shapes of the `/v1/generate` endpoint.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, GrayImage, ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{GenError, GenMode, GenRequest, ViewAngles};

pub const GENERATE_PATH: &str = "/v1/generate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub mode: GenMode,
    pub reference_png_b64: String,
    pub depth_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_png_b64: Option<String>,
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub view: ViewAngles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub image_png_b64: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}

pub fn encode_png(img: &DynamicImage) -> Result<String, GenError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png(b64: &str) -> Result<DynamicImage, GenError> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| GenError::Malformed(format!("base64: {e}")))?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?)
}

impl WireRequest {
    pub fn from_request(r: &GenRequest) -> Result<Self, GenError> {
        Ok(Self {
            mode: r.mode,
            reference_png_b64: encode_png(&DynamicImage::ImageRgba8(r.reference.clone()))?,
            depth_png_b64: encode_png(&DynamicImage::ImageLuma8(r.depth.clone()))?,
            mask_png_b64: r
                .mask
                .as_ref()
                .map(|m| encode_png(&DynamicImage::ImageLuma8(m.clone())))
                .transpose()?,
            prompt: r.prompt.clone(),
            seed: r.seed,
            width: r.width(),
            height: r.height(),
            view: r.view,
        })
    }

    /// Decodes the images and checks the declared size against the depth.
    pub fn into_request(self) -> Result<GenRequest, GenError> {
        let depth: GrayImage = decode_png(&self.depth_png_b64)?.to_luma8();
        if depth.dimensions() != (self.width, self.height) {
            return Err(GenError::DimensionMismatch {
                expected: (self.width, self.height),
                actual: depth.dimensions(),
            });
        }
        let reference: RgbaImage = decode_png(&self.reference_png_b64)?.to_rgba8();
        let mask = self
            .mask_png_b64
            .as_deref()
            .map(|m| decode_png(m).map(|i| i.to_luma8()))
            .transpose()?;
        let r = GenRequest {
            mode: self.mode,
            reference,
            depth,
            mask,
            prompt: self.prompt,
            seed: self.seed,
            view: self.view,
        };
        r.validate()?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use image::Rgba;

    use super::*;

    #[test]
    fn request_round_trips_through_json() {
        let r = GenRequest {
            mode: GenMode::Inpaint,
            reference: RgbaImage::from_fn(5, 3, |x, y| Rgba([x as u8, y as u8, 3, 200])),
            depth: GrayImage::from_fn(5, 3, |x, _| image::Luma([x as u8 * 40])),
            mask: Some(GrayImage::from_fn(5, 3, |x, _| image::Luma([if x > 2 { 255 } else { 0 }]))),
            prompt: "p".into(),
            seed: u64::MAX,
            view: ViewAngles {
                azimuth_deg: 45.0,
                elevation_deg: 0.0,
            },
        };
        let json = serde_json::to_string(&WireRequest::from_request(&r).unwrap()).unwrap();
        assert!(json.contains("\"mode\":\"inpaint\""));
        let back: WireRequest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_request().unwrap(), r);
    }

    #[test]
    fn generate_requests_omit_the_mask() {
        let r = GenRequest {
            mode: GenMode::Generate,
            reference: RgbaImage::new(2, 2),
            depth: GrayImage::new(2, 2),
            mask: None,
            prompt: String::new(),
            seed: 1,
            view: ViewAngles {
                azimuth_deg: 0.0,
                elevation_deg: 90.0,
            },
        };
        let v = serde_json::to_value(WireRequest::from_request(&r).unwrap()).unwrap();
        assert!(v.get("mask_png_b64").is_none());
        assert_eq!(v["view"]["elevation_deg"], 90.0);
        assert_eq!(v["width"], 2);
    }

    #[test]
    fn bad_base64_is_malformed() {
        assert!(matches!(decode_png("!!!"), Err(GenError::Malformed(_))));
    }
}
