//! PSNR / SSIM and the four-view evaluation table.

use std::fmt;
use std::path::Path;

use image::RgbaImage;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::atlas::TextureAtlas;
use crate::grid::{Grid, Mask};
use crate::mesh::Mesh;
use crate::render::{render_color, RenderError};
use crate::views::{auto_fit_distance, camera_mats, CameraMats, ViewError, Viewpoint, DEFAULT_FOV_DEG};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("images differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}px SSIM window")]
    TooSmall((u32, u32)),
    #[error("nothing to compare: empty region")]
    EmptyRegion,
    #[error("missing reference image {0}")]
    MissingReference(String),
    #[error("reference {0} has no foreground")]
    EmptyReference(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    View(#[from] ViewError),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Psnr {
    /// Zero error; the ratio is unbounded.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(&self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => *v,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.4}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

fn check(a: &RgbaImage, b: &RgbaImage) -> Result<(), MetricError> {
    if a.dimensions() != b.dimensions() {
        Err(MetricError::DimensionMismatch(a.dimensions(), b.dimensions()))
    } else {
        Ok(())
    }
}

fn psnr_from_sse(sse: f64, count: usize) -> Psnr {
    if sse == 0.0 {
        Psnr::Identical
    } else {
        let mse = sse / count as f64;
        Psnr::Db(10.0 * (L * L / mse).log10())
    }
}

/// PSNR over the RGB channels of every pixel; alpha is ignored.
pub fn psnr(a: &RgbaImage, b: &RgbaImage) -> Result<Psnr, MetricError> {
    check(a, b)?;
    psnr_masked(a, b, &Mask::new(a.width(), a.height(), true))
}

pub fn psnr_masked(a: &RgbaImage, b: &RgbaImage, mask: &Mask) -> Result<Psnr, MetricError> {
    check(a, b)?;
    let mut sse = 0.0;
    let mut n = 0;
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        if !mask[i] {
            continue;
        }
        for k in 0..3 {
            let d = pa[k] as f64 - pb[k] as f64;
            sse += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(MetricError::EmptyRegion);
    }
    Ok(psnr_from_sse(sse, n))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Valid-mode separable Gaussian filter.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| plane[y * w + x + i] * k[i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| rows[(y + i) * ow + x] * k[i]).sum();
        }
    }
    out
}

/// Per-window SSIM for one channel, over all valid window positions.
fn ssim_map(a: &RgbaImage, b: &RgbaImage, channel: usize) -> Vec<f64> {
    let (w, h) = (a.width() as usize, a.height() as usize);
    let k = gaussian_kernel();
    let pa: Vec<f64> = a.pixels().map(|p| p[channel] as f64).collect();
    let pb: Vec<f64> = b.pixels().map(|p| p[channel] as f64).collect();
    let prod = |f: &dyn Fn(usize) -> f64| (0..w * h).map(f).collect::<Vec<f64>>();
    let mu_a = filter(&pa, w, h, &k);
    let mu_b = filter(&pb, w, h, &k);
    let aa = filter(&prod(&|i| pa[i] * pa[i]), w, h, &k);
    let bb = filter(&prod(&|i| pb[i] * pb[i]), w, h, &k);
    let ab = filter(&prod(&|i| pa[i] * pb[i]), w, h, &k);
    let (c1, c2) = ((K1 * L).powi(2), (K2 * L).powi(2));
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

/// Mean SSIM over windows whose center lies in `mask`, averaged over RGB.
pub fn ssim_masked(a: &RgbaImage, b: &RgbaImage, mask: &Mask) -> Result<f64, MetricError> {
    check(a, b)?;
    let (w, h) = a.dimensions();
    if (w as usize) < SSIM_WINDOW || (h as usize) < SSIM_WINDOW {
        return Err(MetricError::TooSmall((w, h)));
    }
    if a == b && mask.any() {
        return Ok(1.0);
    }
    let ow = w as usize - SSIM_WINDOW + 1;
    let half = (SSIM_WINDOW / 2) as u32;
    let centers: Vec<usize> = (0..ow * (h as usize - SSIM_WINDOW + 1))
        .filter(|&i| *mask.get((i % ow) as u32 + half, (i / ow) as u32 + half))
        .collect();
    if centers.is_empty() {
        return Err(MetricError::EmptyRegion);
    }
    let mut total = 0.0;
    for c in 0..3 {
        let m = ssim_map(a, b, c);
        total += centers.iter().map(|&i| m[i]).sum::<f64>() / centers.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn ssim(a: &RgbaImage, b: &RgbaImage) -> Result<f64, MetricError> {
    ssim_masked(a, b, &Mask::new(a.width(), a.height(), true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalView {
    Front,
    Back,
    Left,
    Right,
}

impl EvalView {
    pub const ALL: [EvalView; 4] = [EvalView::Front, EvalView::Back, EvalView::Left, EvalView::Right];

    pub fn azimuth_deg(self) -> f64 {
        match self {
            EvalView::Front => 0.0,
            EvalView::Back => 180.0,
            EvalView::Left => 90.0,
            EvalView::Right => 270.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalView::Front => "front",
            EvalView::Back => "back",
            EvalView::Left => "left",
            EvalView::Right => "right",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.png", self.name())
    }
}

/// Evaluation camera: default fov, auto-fit distance, square `size` image.
pub fn eval_camera(mesh: &Mesh, view: EvalView, size: (u32, u32)) -> Result<CameraMats, MetricError> {
    let bounds = mesh.bounds().ok_or(ViewError::ZeroExtent)?;
    let vp = Viewpoint {
        index: 0,
        azimuth_deg: view.azimuth_deg(),
        elevation_deg: 0.0,
        distance: auto_fit_distance(&bounds, DEFAULT_FOV_DEG),
        fov_deg: DEFAULT_FOV_DEG,
    };
    Ok(camera_mats(&vp, &bounds, size)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub view: EvalView,
    pub azimuth_deg: f64,
    pub psnr: Psnr,
    pub ssim: f64,
    /// Reserved for learned metrics computed by external tooling.
    pub clip: Option<f64>,
    pub lpips: Option<f64>,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,azimuth_deg,psnr_db,ssim,clip,lpips,pixels\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6},{},{},{}\n",
                r.view.name(),
                r.azimuth_deg,
                r.psnr,
                r.ssim,
                opt(r.clip),
                opt(r.lpips),
                r.pixels
            ));
        }
        s
    }
}

/// Reference renders keyed by view.
pub type References = Vec<(EvalView, RgbaImage)>;

pub fn load_references(dir: &Path) -> Result<References, MetricError> {
    EvalView::ALL
        .iter()
        .map(|&v| {
            let path = dir.join(v.file_name());
            if !path.exists() {
                return Err(MetricError::MissingReference(path.display().to_string()));
            }
            let img = image::open(&path).map_err(|e| MetricError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            Ok((v, img.to_rgba8()))
        })
        .collect()
}

/// Zeroes the color of transparent pixels so background content can't leak
/// into the score.
fn flatten(img: &RgbaImage) -> RgbaImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        if p[3] == 0 {
            p.0 = [0, 0, 0, 0];
        }
    }
    out
}

/// Renders the textured mesh at the four cardinal views and scores each
/// against its reference over the union of both foregrounds.
pub fn eval_views(mesh: &Mesh, atlas: &TextureAtlas, refs: &References) -> Result<EvalTable, MetricError> {
    let mut rows = Vec::new();
    for view in EvalView::ALL {
        let reference = refs
            .iter()
            .find(|(v, _)| *v == view)
            .map(|(_, img)| img)
            .ok_or_else(|| MetricError::MissingReference(view.file_name()))?;
        if !reference.pixels().any(|p| p[3] > 0) {
            return Err(MetricError::EmptyReference(view.file_name()));
        }
        let cams = eval_camera(mesh, view, reference.dimensions())?;
        let render = render_color(mesh, atlas, &cams)?;
        let (w, h) = reference.dimensions();
        let union: Mask = Grid::from_fn(w, h, |x, y| *render.foreground.get(x, y) || reference.get_pixel(x, y)[3] > 0);
        let (a, b) = (flatten(&render.image), flatten(reference));
        rows.push(EvalRow {
            view,
            azimuth_deg: view.azimuth_deg(),
            psnr: psnr_masked(&a, &b, &union)?,
            ssim: ssim_masked(&a, &b, &union)?,
            clip: None,
            lpips: None,
            pixels: union.count(),
        });
    }
    Ok(EvalTable { rows })
}

#[cfg(test)]
mod tests {
    use image::Rgba;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn noise(w: u32, h: u32, lo: u8, hi: u8, seed: u64) -> RgbaImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbaImage::from_fn(w, h, |_, _| Rgba([rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), 255]))
    }

    fn offset(img: &RgbaImage, d: i16) -> RgbaImage {
        let mut out = img.clone();
        for p in out.pixels_mut() {
            for k in 0..3 {
                p[k] = (p[k] as i16 + d).clamp(0, 255) as u8;
            }
        }
        out
    }

    /// Direct per-window SSIM without separable filtering.
    fn ssim_oracle(a: &RgbaImage, b: &RgbaImage) -> f64 {
        let n = SSIM_WINDOW as i64;
        let s = SSIM_SIGMA;
        let mut g = vec![0.0; (n * n) as usize];
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = ((x - n / 2) as f64, (y - n / 2) as f64);
                g[(y * n + x) as usize] = (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
        }
        let sum: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= sum);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let (w, h) = (a.width() as i64, a.height() as i64);
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for oy in 0..=h - n {
                for ox in 0..=w - n {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for y in 0..n {
                        for x in 0..n {
                            let wgt = g[(y * n + x) as usize];
                            ma += wgt * a.get_pixel((ox + x) as u32, (oy + y) as u32)[c] as f64;
                            mb += wgt * b.get_pixel((ox + x) as u32, (oy + y) as u32)[c] as f64;
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for y in 0..n {
                        for x in 0..n {
                            let wgt = g[(y * n + x) as usize];
                            let da = a.get_pixel((ox + x) as u32, (oy + y) as u32)[c] as f64 - ma;
                            let db = b.get_pixel((ox + x) as u32, (oy + y) as u32)[c] as f64 - mb;
                            va += wgt * da * da;
                            vb += wgt * db * db;
                            cov += wgt * da * db;
                        }
                    }
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn identical_images_are_identical() {
        let a = noise(16, 16, 0, 255, 1);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn unit_difference_is_48_13_db() {
        let a = noise(20, 20, 1, 254, 2);
        let b = offset(&a, 1);
        let db = psnr(&a, &b).unwrap().db();
        assert!((db - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((db - 48.13).abs() < 0.01, "{db}");
    }

    #[test]
    fn black_vs_white_is_zero_db() {
        let a = RgbaImage::from_pixel(4, 4, Rgba([0, 0, 0, 255]));
        let b = RgbaImage::from_pixel(4, 4, Rgba([255, 255, 255, 255]));
        assert!(psnr(&a, &b).unwrap().db().abs() < 1e-12);
    }

    #[test]
    fn dimension_and_size_errors() {
        let a = RgbaImage::new(12, 12);
        assert!(matches!(psnr(&a, &RgbaImage::new(12, 13)), Err(MetricError::DimensionMismatch(..))));
        let s = RgbaImage::new(10, 20);
        assert!(matches!(ssim(&s, &s), Err(MetricError::TooSmall(_))));
    }

    #[test]
    fn offset_penalizes_luminance_only() {
        let a = noise(40, 32, 0, 200, 3);
        let b = offset(&a, 50);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_oracle(&a, &b);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!(got < 1.0 && got > 0.5, "{got}");
    }

    #[test]
    fn matches_oracle_on_structured_images() {
        let a = RgbaImage::from_fn(24, 19, |x, y| Rgba([(x * 10) as u8, (y * 13) as u8, ((x * y) % 256) as u8, 255]));
        let b = noise(24, 19, 0, 255, 9);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        for trial in 0..10 {
            let a = noise(64, 64, 0, 255, 100 + trial);
            let b = noise(64, 64, 0, 255, 200 + trial);
            let s = ssim(&a, &b).unwrap();
            assert!(s.abs() < 0.05, "trial {trial}: {s}");
        }
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let base = RgbaImage::from_pixel(32, 32, Rgba([128, 128, 128, 255]));
        let mut last = f64::INFINITY;
        for (i, amp) in [4u8, 16, 64].into_iter().enumerate() {
            let n = noise(32, 32, 0, 2 * amp, 50 + i as u64);
            let noisy = RgbaImage::from_fn(32, 32, |x, y| {
                let d = n.get_pixel(x, y);
                let c = |k: usize| (128 + d[k] as i16 - amp as i16) as u8;
                Rgba([c(0), c(1), c(2), 255])
            });
            let db = psnr(&base, &noisy).unwrap().db();
            assert!(db < last);
            last = db;
        }
    }

    #[test]
    fn psnr_serializes_identical_as_string() {
        assert_eq!(serde_json::to_string(&Psnr::Identical).unwrap(), "\"identical\"");
        assert_eq!(serde_json::to_string(&Psnr::Db(3.5)).unwrap(), "3.5");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metrics_are_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = noise(14, 12, 0, 255, s1);
            let b = noise(14, 12, 0, 255, s2);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
