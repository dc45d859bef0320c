//! Texture atlas: texel colors plus the per-texel projection history.

use std::path::Path;
use std::sync::Arc;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::UvLayout;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("bad checkpoint metadata: {0}")]
    Meta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TexelStatus {
    Untextured,
    Textured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TexelState {
    pub status: TexelStatus,
    /// Set by the front-image projection; never overwritten afterwards.
    pub protected: bool,
    pub best_similarity: f32,
    pub source_view: Option<u8>,
}

impl TexelState {
    pub const UNTEXTURED: TexelState = TexelState {
        status: TexelStatus::Untextured,
        protected: false,
        best_similarity: 0.0,
        source_view: None,
    };

    pub fn is_textured(&self) -> bool {
        self.status == TexelStatus::Textured
    }
}

#[derive(Debug, Clone)]
pub struct TextureAtlas {
    colors: RgbaImage,
    states: Vec<TexelState>,
    layout: Arc<UvLayout>,
}

impl PartialEq for TextureAtlas {
    fn eq(&self, other: &Self) -> bool {
        self.colors == other.colors && self.states == other.states
    }
}

impl TextureAtlas {
    /// Every texel untextured and transparent.
    pub fn new(layout: Arc<UvLayout>) -> Self {
        let (w, h) = (layout.width(), layout.height());
        Self {
            colors: RgbaImage::new(w, h),
            states: vec![TexelState::UNTEXTURED; w as usize * h as usize],
            layout,
        }
    }

    pub fn width(&self) -> u32 {
        self.colors.width()
    }

    pub fn height(&self) -> u32 {
        self.colors.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.colors.dimensions()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn layout(&self) -> &Arc<UvLayout> {
        &self.layout
    }

    pub fn colors(&self) -> &RgbaImage {
        &self.colors
    }

    pub fn states(&self) -> &[TexelState] {
        &self.states
    }

    #[inline]
    pub fn state(&self, texel: usize) -> &TexelState {
        &self.states[texel]
    }

    #[inline]
    pub fn color(&self, texel: usize) -> [u8; 4] {
        let w = self.width() as usize;
        self.colors.get_pixel((texel % w) as u32, (texel / w) as u32).0
    }

    /// Overwrites one texel. Callers own the protection policy.
    #[inline]
    pub fn write(&mut self, texel: usize, rgb: [u8; 3], state: TexelState) {
        let w = self.width() as usize;
        self.colors
            .put_pixel((texel % w) as u32, (texel / w) as u32, Rgba([rgb[0], rgb[1], rgb[2], 255]));
        self.states[texel] = state;
    }

    pub fn textured_count(&self) -> usize {
        self.layout
            .covered_texels()
            .filter(|&i| self.states[i].is_textured())
            .count()
    }

    /// Fraction of uv-covered texels that carry a color.
    pub fn coverage(&self) -> f64 {
        let covered = self.layout.covered_count();
        if covered == 0 {
            0.0
        } else {
            self.textured_count() as f64 / covered as f64
        }
    }

    /// `(texel, color)` for every protected texel, in texel order.
    pub fn protected_texels(&self) -> Vec<(usize, [u8; 4])> {
        (0..self.states.len())
            .filter(|&i| self.states[i].protected)
            .map(|i| (i, self.color(i)))
            .collect()
    }

    /// The atlas with a few texels of gutter filled from the nearest textured
    /// texel, so bilinear viewers don't bleed background into charts.
    pub fn export_texture(&self, gutter: u32) -> RgbaImage {
        let (w, h) = self.dimensions();
        let mut out = self.colors.clone();
        let mut filled: Vec<bool> = self.states.iter().map(|s| s.is_textured()).collect();
        for _ in 0..gutter {
            let snapshot = out.clone();
            let mut next = filled.clone();
            for y in 0..h {
                for x in 0..w {
                    let i = (y * w + x) as usize;
                    if filled[i] {
                        continue;
                    }
                    let mut sum = [0u32; 3];
                    let mut n = 0u32;
                    for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = (ny as u32 * w + nx as u32) as usize;
                        if filled[j] {
                            let p = snapshot.get_pixel(nx as u32, ny as u32);
                            for k in 0..3 {
                                sum[k] += p[k] as u32;
                            }
                            n += 1;
                        }
                    }
                    if n > 0 {
                        let c = sum.map(|s| ((s + n / 2) / n) as u8);
                        out.put_pixel(x, y, Rgba([c[0], c[1], c[2], 255]));
                        next[i] = true;
                    }
                }
            }
            filled = next;
        }
        out
    }

    /// Wraps an exported texture: every covered texel counts as textured.
    pub fn from_texture(layout: Arc<UvLayout>, texture: RgbaImage) -> Result<Self, AtlasError> {
        if texture.dimensions() != (layout.width(), layout.height()) {
            return Err(AtlasError::Meta(format!(
                "texture is {:?}, layout {}x{}",
                texture.dimensions(),
                layout.width(),
                layout.height()
            )));
        }
        let mut atlas = Self::new(layout);
        let textured = TexelState {
            status: TexelStatus::Textured,
            ..TexelState::UNTEXTURED
        };
        let covered: Vec<usize> = atlas.layout.covered_texels().collect();
        for t in covered {
            atlas.states[t] = textured;
        }
        atlas.colors = texture;
        Ok(atlas)
    }

    pub fn save_checkpoint(&self, png: &Path, meta: &Path) -> Result<(), AtlasError> {
        self.colors.save(png)?;
        let doc = CheckpointMeta {
            width: self.width(),
            height: self.height(),
            runs: encode_runs(&self.states),
        };
        let body = serde_json::to_vec(&doc).map_err(|e| AtlasError::Meta(e.to_string()))?;
        std::fs::write(meta, body).map_err(|source| AtlasError::Io {
            path: meta.display().to_string(),
            source,
        })
    }

    pub fn load_checkpoint(png: &Path, meta: &Path, layout: Arc<UvLayout>) -> Result<Self, AtlasError> {
        let colors = image::open(png)?.to_rgba8();
        let body = std::fs::read(meta).map_err(|source| AtlasError::Io {
            path: meta.display().to_string(),
            source,
        })?;
        let doc: CheckpointMeta =
            serde_json::from_slice(&body).map_err(|e| AtlasError::Meta(e.to_string()))?;
        if (doc.width, doc.height) != colors.dimensions()
            || (doc.width, doc.height) != (layout.width(), layout.height())
        {
            return Err(AtlasError::Meta(format!(
                "checkpoint is {}x{}, image {:?}, layout {}x{}",
                doc.width,
                doc.height,
                colors.dimensions(),
                layout.width(),
                layout.height()
            )));
        }
        let states = decode_runs(&doc.runs, doc.width as usize * doc.height as usize)?;
        Ok(Self {
            colors,
            states,
            layout,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    width: u32,
    height: u32,
    runs: Vec<StateRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateRun {
    n: usize,
    #[serde(flatten)]
    state: TexelState,
}

fn encode_runs(states: &[TexelState]) -> Vec<StateRun> {
    let mut runs: Vec<StateRun> = Vec::new();
    for s in states {
        match runs.last_mut() {
            Some(r) if r.state == *s => r.n += 1,
            _ => runs.push(StateRun { n: 1, state: *s }),
        }
    }
    runs
}

fn decode_runs(runs: &[StateRun], len: usize) -> Result<Vec<TexelState>, AtlasError> {
    let mut out = Vec::with_capacity(len);
    for r in runs {
        out.extend(std::iter::repeat(r.state).take(r.n));
    }
    if out.len() != len {
        return Err(AtlasError::Meta(format!("runs cover {} of {len} texels", out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_state() -> impl Strategy<Value = TexelState> {
        (any::<bool>(), any::<bool>(), 0.0f32..=1.0, proptest::option::of(0u8..10)).prop_map(
            |(textured, protected, s, v)| {
                if textured {
                    TexelState {
                        status: TexelStatus::Textured,
                        protected,
                        best_similarity: s,
                        source_view: v,
                    }
                } else {
                    TexelState::UNTEXTURED
                }
            },
        )
    }

    proptest! {
        #[test]
        fn run_length_metadata_round_trips(states in proptest::collection::vec(any_state(), 0..200)) {
            let runs = encode_runs(&states);
            let json = serde_json::to_string(&runs).unwrap();
            let back: Vec<StateRun> = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(decode_runs(&back, states.len()).unwrap(), states);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let layout = Arc::new(UvLayout::empty(8, 4));
        let mut atlas = TextureAtlas::new(layout.clone());
        let state = TexelState {
            status: TexelStatus::Textured,
            protected: true,
            best_similarity: 0.731_234_5,
            source_view: Some(1),
        };
        atlas.write(5, [1, 2, 3], state);
        let dir = tempfile::tempdir().unwrap();
        let (png, meta) = (dir.path().join("a.png"), dir.path().join("a.json"));
        atlas.save_checkpoint(&png, &meta).unwrap();
        let back = TextureAtlas::load_checkpoint(&png, &meta, layout).unwrap();
        assert_eq!(back, atlas);
    }

    #[test]
    fn gutter_fill_leaves_textured_texels_alone() {
        let layout = Arc::new(UvLayout::empty(5, 5));
        let mut atlas = TextureAtlas::new(layout);
        let s = TexelState {
            status: TexelStatus::Textured,
            ..TexelState::UNTEXTURED
        };
        atlas.write(12, [200, 100, 50], s);
        let out = atlas.export_texture(2);
        assert_eq!(out.get_pixel(2, 2).0, [200, 100, 50, 255]);
        assert_eq!(out.get_pixel(3, 2).0, [200, 100, 50, 255]);
        assert_eq!(out.get_pixel(4, 2).0, [200, 100, 50, 255]);
        assert_eq!(out.get_pixel(0, 0).0, [0, 0, 0, 0]);
    }
}
