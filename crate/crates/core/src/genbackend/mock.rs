use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, GenError, GenImage, GenMode, GenRequest, Provenance};

/// Deterministic stand-in for a diffusion service.
///
/// `generate` shades the conditioning depth with the mean foreground color of
/// the reference, so generated views agree with the geometry and carry the
/// subject's overall tint. A small brightness jitter keyed on the request hash
/// makes the output depend on every request field (the seed included) without
/// shifting hue. `inpaint` box-blurs the reference inside the mask.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

pub const MOCK_ID: &str = "mock-v1";
const JITTER: f32 = 0.02;
const BLUR_RADIUS: i64 = 2;

fn mean_foreground(img: &RgbaImage) -> [f32; 3] {
    let mut sum = [0f64; 3];
    let mut n = 0u64;
    for p in img.pixels().filter(|p| p[3] > 0) {
        for k in 0..3 {
            sum[k] += p[k] as f64;
        }
        n += 1;
    }
    if n == 0 {
        return [128.0; 3];
    }
    sum.map(|s| (s / n as f64) as f32)
}

fn rng_for(hash: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hash[2 * i..2 * i + 2], 16).unwrap_or(0);
    }
    ChaCha8Rng::from_seed(seed)
}

fn shade(req: &GenRequest, hash: &str) -> RgbaImage {
    let tint = mean_foreground(&req.reference);
    let mut rng = rng_for(hash);
    RgbaImage::from_fn(req.width(), req.height(), |x, y| {
        let d = req.depth.get_pixel(x, y)[0];
        let jitter = 1.0 + JITTER * (rng.gen::<f32>() * 2.0 - 1.0);
        let s = (0.35 + 0.65 * d as f32 / 255.0) * jitter;
        let c = tint.map(|t| (t * s).round().clamp(0.0, 255.0) as u8);
        Rgba([c[0], c[1], c[2], if d > 0 { 255 } else { 0 }])
    })
}

fn blur_masked(req: &GenRequest) -> RgbaImage {
    let src = &req.reference;
    let mask = req.mask.as_ref().expect("validated inpaint request has a mask");
    let (w, h) = (src.width() as i64, src.height() as i64);
    RgbaImage::from_fn(src.width(), src.height(), |x, y| {
        if mask.get_pixel(x, y)[0] == 0 {
            return *src.get_pixel(x, y);
        }
        let mut sum = [0u32; 4];
        let mut n = 0;
        for dy in -BLUR_RADIUS..=BLUR_RADIUS {
            for dx in -BLUR_RADIUS..=BLUR_RADIUS {
                let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let p = src.get_pixel(sx as u32, sy as u32);
                if p[3] == 0 {
                    continue;
                }
                for k in 0..4 {
                    sum[k] += p[k] as u32;
                }
                n += 1;
            }
        }
        if n == 0 {
            return *src.get_pixel(x, y);
        }
        Rgba(sum.map(|s| ((s + n / 2) / n) as u8))
    })
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        MOCK_ID.into()
    }

    fn generate(&self, req: &GenRequest) -> Result<GenImage, GenError> {
        req.validate()?;
        let hash = req.hash();
        let pixels = match req.mode {
            GenMode::Generate => shade(req, &hash),
            GenMode::Inpaint => blur_masked(req),
        };
        Ok(GenImage {
            pixels,
            provenance: Provenance {
                backend_id: self.id(),
                seed: req.seed,
                request_hash: hash,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use image::GrayImage;

    use super::super::tests::request;
    use super::*;

    /// Hue in degrees, independent of the mock's own code.
    fn hue(p: [u8; 3]) -> f64 {
        let [r, g, b] = p.map(|c| c as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let d = max - min;
        if d == 0.0 {
            return 0.0;
        }
        let h = if max == r {
            ((g - b) / d).rem_euclid(6.0)
        } else if max == g {
            (b - r) / d + 2.0
        } else {
            (r - g) / d + 4.0
        };
        h * 60.0
    }

    #[test]
    fn identical_requests_give_identical_images() {
        let r = request(48, [120, 60, 30]);
        let a = MockBackend.generate(&r).unwrap();
        let b = MockBackend.generate(&r.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance.request_hash, r.hash());
        assert_eq!(a.pixels.dimensions(), (48, 48));
    }

    #[test]
    fn seed_changes_output() {
        let r = request(48, [120, 60, 30]);
        let mut s = r.clone();
        s.seed ^= 1;
        assert_ne!(MockBackend.generate(&r).unwrap().pixels, MockBackend.generate(&s).unwrap().pixels);
    }

    #[test]
    fn red_reference_yields_red_foreground() {
        let r = request(64, [255, 0, 0]);
        let out = MockBackend.generate(&r).unwrap().pixels;
        let mut n = 0;
        for (x, y, p) in out.enumerate_pixels() {
            if r.depth.get_pixel(x, y)[0] == 0 {
                assert_eq!(p[3], 0);
                continue;
            }
            let h = hue([p[0], p[1], p[2]]);
            let off = h.min(360.0 - h);
            assert!(off <= 10.0, "hue {h} at ({x},{y})");
            n += 1;
        }
        assert!(n > 100);
    }

    #[test]
    fn nearer_pixels_are_brighter() {
        let mut r = request(4, [200, 200, 200]);
        r.depth = GrayImage::from_fn(4, 1, |x, _| image::Luma([1 + x as u8 * 80]));
        let out = MockBackend.generate(&r).unwrap().pixels;
        for x in 1..4 {
            assert!(out.get_pixel(x, 0)[0] > out.get_pixel(x - 1, 0)[0]);
        }
    }

    #[test]
    fn inpaint_only_touches_masked_pixels() {
        let mut r = request(16, [0; 3]);
        r.mode = GenMode::Inpaint;
        r.reference = RgbaImage::from_fn(16, 16, |x, _| Rgba([if x < 8 { 0 } else { 255 }, 0, 0, 255]));
        r.mask = Some(GrayImage::from_fn(16, 16, |x, _| image::Luma([if (6..10).contains(&x) { 255 } else { 0 }])));
        let out = MockBackend.generate(&r).unwrap().pixels;
        for (x, y, p) in out.enumerate_pixels() {
            if !(6..10).contains(&x) {
                assert_eq!(p, r.reference.get_pixel(x, y));
            }
        }
        assert!(out.get_pixel(7, 5)[0] > 0 && out.get_pixel(8, 5)[0] < 255);
    }
}
