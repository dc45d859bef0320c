//! Seams between mask regions: edge maps, the blend band and its smoothing.

use image::{GrayImage, Luma, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genbackend::{self, Backend, GenMode, GenRequest, ViewAngles};
use crate::genmask::{Region, RegionMask};
use crate::grid::{Grid, Mask};

pub const DEFAULT_DILATION_PX: u32 = 4;
pub const MAX_ITERATIONS: usize = 200;
/// Stop once no channel moves by more than this, in 0..255 units.
pub const CONVERGENCE_DELTA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeamError {
    #[error("edge maps differ in size: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
}

/// Region families whose borders are blended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeamLabel {
    /// KEEP together with ALWAYS_KEEP.
    Keep,
    New,
    Update,
}

impl SeamLabel {
    pub fn regions(self) -> &'static [Region] {
        match self {
            SeamLabel::Keep => &[Region::Keep, Region::AlwaysKeep],
            SeamLabel::New => &[Region::New],
            SeamLabel::Update => &[Region::Update],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeamRule {
    /// Pair with NEW when the view has NEW pixels, else with UPDATE.
    #[default]
    Content,
    /// Pair with NEW for views 1..=4, else with UPDATE.
    Index,
}

/// Boundary pixels of `region`: members with an 8-neighbour outside the
/// region or outside the image. For a binary image this is exactly what an
/// edge detector marks.
pub fn boundary(region: &Mask) -> Mask {
    let (w, h) = region.dimensions();
    Grid::from_fn(w, h, |x, y| {
        if !*region.get(x, y) {
            return false;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if !region.try_get(x as i64 + dx, y as i64 + dy).copied().unwrap_or(false) {
                    return true;
                }
            }
        }
        false
    })
}

pub fn canny_of_mask(mask: &RegionMask, label: SeamLabel) -> Mask {
    boundary(&mask.select(label.regions()))
}

fn near(m: &Mask, x: u32, y: u32) -> bool {
    (-1i64..=1).any(|dy| (-1i64..=1).any(|dx| m.try_get(x as i64 + dx, y as i64 + dy).copied().unwrap_or(false)))
}

/// Pixels of either map lying within one pixel (Chebyshev) of the other.
pub fn tolerant_intersection(a: &Mask, b: &Mask) -> Result<Mask, SeamError> {
    if !a.same_dimensions(b) {
        return Err(SeamError::DimensionMismatch(a.dimensions(), b.dimensions()));
    }
    let (w, h) = a.dimensions();
    Ok(Grid::from_fn(w, h, |x, y| {
        (*a.get(x, y) && near(b, x, y)) || (*b.get(x, y) && near(a, x, y))
    }))
}

/// Dilation by a Euclidean disk of radius `r`.
pub fn dilate(m: &Mask, r: u32) -> Mask {
    if r == 0 {
        return m.clone();
    }
    let ri = r as i64;
    let offsets: Vec<(i64, i64)> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= ri * ri)
        .collect();
    let (w, h) = m.dimensions();
    let mut out = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !*m.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                    *out.get_mut(nx as u32, ny as u32) = true;
                }
            }
        }
    }
    out
}

pub fn seam_band(a: &Mask, b: &Mask, dilation_px: u32) -> Result<Mask, SeamError> {
    Ok(dilate(&tolerant_intersection(a, b)?, dilation_px))
}

/// Which two region families meet at this view's seam, or `None` when there
/// is nothing freshly written to blend against.
pub fn seam_pair_for_view(mask: &RegionMask, rule: SeamRule, view_index: usize) -> Option<(SeamLabel, SeamLabel)> {
    let has_new = mask.contains(Region::New);
    let has_update = mask.contains(Region::Update);
    if !has_new && !has_update {
        return None;
    }
    let second = match rule {
        SeamRule::Content if has_new => SeamLabel::New,
        SeamRule::Content => SeamLabel::Update,
        SeamRule::Index if (1..=4).contains(&view_index) => SeamLabel::New,
        SeamRule::Index => SeamLabel::Update,
    };
    Some((SeamLabel::Keep, second))
}

/// The band as a region mask for re-projection: textured-family pixels inside
/// the band become UPDATE, everything else is held fixed.
pub fn band_update_mask(mask: &RegionMask, band: &Mask) -> RegionMask {
    let labels = Grid::from_fn(mask.width(), mask.height(), |x, y| {
        let l = *mask.labels.get(x, y);
        let in_band = *band.get(x, y);
        match l {
            Region::Keep | Region::Update | Region::New if in_band => Region::Update,
            Region::AlwaysKeep | Region::Ignore => l,
            _ => Region::Keep,
        }
    });
    RegionMask { labels }
}

/// Conditioning for an optional inpainting pass over the band.
pub struct InpaintContext<'a> {
    pub backend: &'a dyn Backend,
    pub depth: &'a GrayImage,
    pub prompt: &'a str,
    pub seed: u64,
    pub view: ViewAngles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothOutcome {
    pub image: RgbaImage,
    pub used_backend: bool,
    pub iterations: usize,
    pub warning: Option<String>,
}

/// Pixels that take part in relaxation: alpha > 0.
fn valid_mask(img: &RgbaImage) -> Mask {
    Grid::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[3] > 0)
}

/// Sum of squared RGB differences over 4-neighbour pairs touching the band,
/// both ends valid.
pub fn band_energy(img: &RgbaImage, band: &Mask) -> f64 {
    let field = to_field(img);
    field_energy(&field, band, &valid_mask(img))
}

fn to_field(img: &RgbaImage) -> Grid<[f32; 3]> {
    Grid::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        [p[0] as f32, p[1] as f32, p[2] as f32]
    })
}

pub(crate) fn field_energy(f: &Grid<[f32; 3]>, band: &Mask, valid: &Mask) -> f64 {
    let (w, h) = f.dimensions();
    let mut e = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                if !(*band.get(x, y) || *band.get(nx, ny)) || !*valid.get(x, y) || !*valid.get(nx, ny) {
                    continue;
                }
                let (a, b) = (f.get(x, y), f.get(nx, ny));
                for k in 0..3 {
                    let d = (a[k] - b[k]) as f64;
                    e += d * d;
                }
            }
        }
    }
    e
}

/// Gauss-Seidel sweeps of the discrete Laplace equation over the band. Each
/// update replaces a pixel by the mean of its valid 4-neighbours, the exact
/// minimizer of the local squared-gradient energy, so the band energy never
/// increases. Returns the number of sweeps run.
pub(crate) fn relax(f: &mut Grid<[f32; 3]>, unknown: &Mask, valid: &Mask) -> usize {
    let (w, h) = f.dimensions();
    let cells: Vec<(u32, u32)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| *unknown.get(x, y))
        .collect();
    for it in 1..=MAX_ITERATIONS {
        let mut max_delta = 0.0f32;
        for &(x, y) in &cells {
            let mut sum = [0f32; 3];
            let mut n = 0;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if valid.try_get(nx, ny).copied().unwrap_or(false) {
                    let v = f.get(nx as u32, ny as u32);
                    for k in 0..3 {
                        sum[k] += v[k];
                    }
                    n += 1;
                }
            }
            if n == 0 {
                continue;
            }
            let cur = f.get_mut(x, y);
            for k in 0..3 {
                let next = sum[k] / n as f32;
                max_delta = max_delta.max((next - cur[k]).abs());
                cur[k] = next;
            }
        }
        if max_delta < CONVERGENCE_DELTA {
            return it;
        }
    }
    MAX_ITERATIONS
}

fn relax_image(rendered: &RgbaImage, band: &Mask) -> (RgbaImage, usize) {
    let valid = valid_mask(rendered);
    let unknown = band.and(&valid);
    let mut field = to_field(rendered);
    let iterations = relax(&mut field, &unknown, &valid);
    let mut out = rendered.clone();
    for (i, &u) in unknown.iter().enumerate() {
        if u {
            let (x, y) = unknown.coords(i);
            let v = field.get(x, y);
            let p = out.get_pixel_mut(x, y);
            for k in 0..3 {
                p[k] = v[k].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (out, iterations)
}

fn inpaint(rendered: &RgbaImage, band: &Mask, ctx: &InpaintContext<'_>) -> Result<RgbaImage, genbackend::GenError> {
    let req = GenRequest {
        mode: GenMode::Inpaint,
        reference: rendered.clone(),
        depth: ctx.depth.clone(),
        mask: Some(GrayImage::from_fn(band.width(), band.height(), |x, y| {
            Luma([if *band.get(x, y) { 255 } else { 0 }])
        })),
        prompt: ctx.prompt.to_string(),
        seed: ctx.seed,
        view: ctx.view,
    };
    let gen = genbackend::generate(&req, ctx.backend)?;
    let mut out = rendered.clone();
    for (i, &b) in band.iter().enumerate() {
        let (x, y) = band.coords(i);
        if b && rendered.get_pixel(x, y)[3] > 0 {
            let g = gen.pixels.get_pixel(x, y);
            let p = out.get_pixel_mut(x, y);
            p[0] = g[0];
            p[1] = g[1];
            p[2] = g[2];
        }
    }
    Ok(out)
}

/// Smooths `rendered` inside `band`. Pixels outside the band, transparent
/// pixels and alpha values are never changed.
pub fn smooth_seams(rendered: &RgbaImage, band: &Mask, backend: Option<&InpaintContext<'_>>) -> SmoothOutcome {
    assert_eq!(rendered.dimensions(), band.dimensions(), "band and image size differ");
    if !band.any() {
        return SmoothOutcome {
            image: rendered.clone(),
            used_backend: false,
            iterations: 0,
            warning: None,
        };
    }
    let mut warning = None;
    if let Some(ctx) = backend {
        match inpaint(rendered, band, ctx) {
            Ok(image) => {
                return SmoothOutcome {
                    image,
                    used_backend: true,
                    iterations: 0,
                    warning: None,
                }
            }
            Err(e) => {
                let msg = format!("seam inpaint failed, using built-in smoother: {e}");
                log::warn!("{msg}");
                warning = Some(msg);
            }
        }
    }
    let (image, iterations) = relax_image(rendered, band);
    SmoothOutcome {
        image,
        used_backend: false,
        iterations,
        warning,
    }
}
