//! Five-way generation mask over view pixels.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atlas::TextureAtlas;
use crate::grid::{Grid, Mask};
use crate::render::{SimilarityMap, TexelVisMap};

pub const DEFAULT_UPDATE_MARGIN: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("{what} is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("update margin {0} outside [0, 1)")]
    Margin(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    AlwaysKeep,
    Keep,
    Update,
    New,
    Ignore,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::AlwaysKeep,
        Region::Keep,
        Region::Update,
        Region::New,
        Region::Ignore,
    ];

    /// Higher wins when several texels land on one pixel.
    fn precedence(self) -> u8 {
        match self {
            Region::Ignore => 0,
            Region::Keep => 1,
            Region::Update => 2,
            Region::New => 3,
            Region::AlwaysKeep => 4,
        }
    }

    pub fn is_write(self) -> bool {
        matches!(self, Region::Update | Region::New)
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            Region::AlwaysKeep => [0, 0, 255],
            Region::Keep => [0, 255, 0],
            Region::Update => [255, 255, 0],
            Region::New => [255, 0, 0],
            Region::Ignore => [0, 0, 0],
        }
    }
}

/// Per-label pixel counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub always_keep: usize,
    pub keep: usize,
    pub update: usize,
    pub new: usize,
    pub ignore: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.always_keep + self.keep + self.update + self.new + self.ignore
    }

    pub fn get(&self, r: Region) -> usize {
        match r {
            Region::AlwaysKeep => self.always_keep,
            Region::Keep => self.keep,
            Region::Update => self.update,
            Region::New => self.new,
            Region::Ignore => self.ignore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub labels: Grid<Region>,
}

impl RegionMask {
    pub fn filled(width: u32, height: u32, region: Region) -> Self {
        Self {
            labels: Grid::new(width, height, region),
        }
    }

    pub fn width(&self) -> u32 {
        self.labels.width()
    }

    pub fn height(&self) -> u32 {
        self.labels.height()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.labels.dimensions()
    }

    #[inline]
    pub fn label(&self, pixel: usize) -> Region {
        self.labels[pixel]
    }

    pub fn counts(&self) -> RegionCounts {
        let mut c = RegionCounts::default();
        for r in self.labels.iter() {
            match r {
                Region::AlwaysKeep => c.always_keep += 1,
                Region::Keep => c.keep += 1,
                Region::Update => c.update += 1,
                Region::New => c.new += 1,
                Region::Ignore => c.ignore += 1,
            }
        }
        c
    }

    pub fn contains(&self, r: Region) -> bool {
        self.labels.iter().any(|&l| l == r)
    }

    /// Pixels whose label is any of `regions`.
    pub fn select(&self, regions: &[Region]) -> Mask {
        self.labels.map(|l| regions.contains(l))
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width(), self.height(), |x, y| Rgb(self.labels.get(x, y).color()))
    }
}

/// Label of one visible texel, before pixel-level precedence.
pub fn texel_region(state: &crate::atlas::TexelState, current: f32, margin: f32) -> Region {
    if state.protected {
        Region::AlwaysKeep
    } else if !state.is_textured() {
        Region::New
    } else if current > state.best_similarity + margin {
        Region::Update
    } else {
        Region::Keep
    }
}

/// Labels every pixel of the view. A pixel takes the highest-precedence label
/// among the texels mapped onto it; pixels with no visible texel are ignored.
/// The current observation quality is read from the similarity map at the
/// pixel, the same value projection stores as the texel's best.
pub fn classify(
    visibility: &TexelVisMap,
    atlas: &TextureAtlas,
    similarity: &SimilarityMap,
    update_margin: f32,
) -> Result<RegionMask, MaskError> {
    if !(0.0..1.0).contains(&update_margin) {
        return Err(MaskError::Margin(update_margin));
    }
    check_dims("similarity map", visibility.view_size, similarity.values.dimensions())?;
    check_dims("atlas", visibility.atlas_size, atlas.dimensions())?;
    let (w, h) = visibility.view_size;
    let mut mask = RegionMask::filled(w, h, Region::Ignore);
    for e in &visibility.entries {
        let p = e.pixel as usize;
        let r = texel_region(atlas.state(e.texel as usize), similarity.values[p], update_margin);
        let slot = &mut mask.labels[p];
        if r.precedence() > slot.precedence() {
            *slot = r;
        }
    }
    Ok(mask)
}

pub(crate) fn check_dims(what: &'static str, expected: (u32, u32), actual: (u32, u32)) -> Result<(), MaskError> {
    if expected == actual {
        Ok(())
    } else {
        Err(MaskError::DimensionMismatch { what, expected, actual })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::atlas::{TexelState, TexelStatus};
    use crate::render::{TexelVis, UvLayout};

    fn atlas(n: u32) -> TextureAtlas {
        TextureAtlas::new(Arc::new(UvLayout::empty(n, n)))
    }

    fn sim(w: u32, h: u32, v: f32) -> SimilarityMap {
        SimilarityMap {
            values: Grid::new(w, h, v),
            foreground: Mask::new(w, h, true),
        }
    }

    fn vis(entries: Vec<(u32, u32)>, view: u32, atlas: u32) -> TexelVisMap {
        TexelVisMap {
            view_size: (view, view),
            atlas_size: (atlas, atlas),
            entries: entries
                .into_iter()
                .map(|(texel, pixel)| TexelVis {
                    texel,
                    pixel,
                    similarity: 0.5,
                    depth: 1.0,
                })
                .collect(),
        }
    }

    fn textured(best: f32, protected: bool) -> TexelState {
        TexelState {
            status: TexelStatus::Textured,
            protected,
            best_similarity: best,
            source_view: Some(0),
        }
    }

    #[test]
    fn empty_atlas_gives_new_everywhere_visible() {
        let a = atlas(4);
        let v = vis((0..8).map(|i| (i, i)).collect(), 4, 4);
        let m = classify(&v, &a, &sim(4, 4, 0.7), 0.1).unwrap();
        for p in 0..16 {
            let expected = if p < 8 { Region::New } else { Region::Ignore };
            assert_eq!(m.label(p), expected);
        }
    }

    #[test]
    fn protected_atlas_gives_always_keep() {
        let mut a = atlas(4);
        for t in 0..16 {
            a.write(t, [1, 2, 3], textured(0.2, true));
        }
        let v = vis((0..16).map(|i| (i, i)).collect(), 4, 4);
        let m = classify(&v, &a, &sim(4, 4, 1.0), 0.0).unwrap();
        assert_eq!(m.counts().always_keep, 16);
    }

    #[test]
    fn update_threshold_respects_margin() {
        let mut a = atlas(2);
        a.write(0, [0; 3], textured(0.6, false));
        let v = vis(vec![(0, 0)], 2, 2);
        assert_eq!(classify(&v, &a, &sim(2, 2, 0.9), 0.1).unwrap().label(0), Region::Update);
        assert_eq!(classify(&v, &a, &sim(2, 2, 0.65), 0.1).unwrap().label(0), Region::Keep);
    }

    #[test]
    fn precedence_on_shared_pixel() {
        let mut a = atlas(2);
        a.write(0, [0; 3], textured(0.0, false)); // update
        a.write(1, [0; 3], textured(0.9, false)); // keep
        a.write(3, [0; 3], textured(0.9, true)); // always keep
        let mask = |pairs| classify(&vis(pairs, 2, 2), &a, &sim(2, 2, 0.5), 0.1).unwrap().label(0);
        assert_eq!(mask(vec![(1, 0), (0, 0)]), Region::Update);
        assert_eq!(mask(vec![(0, 0), (2, 0)]), Region::New);
        assert_eq!(mask(vec![(2, 0), (3, 0), (0, 0)]), Region::AlwaysKeep);
        assert_eq!(mask(vec![(1, 0)]), Region::Keep);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = atlas(4);
        let v = vis(vec![], 4, 4);
        assert!(matches!(
            classify(&v, &a, &sim(5, 4, 0.0), 0.1),
            Err(MaskError::DimensionMismatch { what: "similarity map", .. })
        ));
        let v = vis(vec![], 4, 8);
        assert!(classify(&v, &a, &sim(4, 4, 0.0), 0.1).is_err());
        assert!(matches!(classify(&vis(vec![], 4, 4), &a, &sim(4, 4, 0.0), 1.0), Err(MaskError::Margin(_))));
    }

    #[test]
    fn palette_is_fixed() {
        let mut m = RegionMask::filled(5, 1, Region::Ignore);
        for (i, r) in Region::ALL.iter().enumerate() {
            m.labels[i] = *r;
        }
        let img = m.to_image();
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 255, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [255, 255, 0]);
        assert_eq!(img.get_pixel(3, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(4, 0).0, [0, 0, 0]);
    }

    fn arb_state() -> impl Strategy<Value = TexelState> {
        (any::<bool>(), any::<bool>(), 0.0f32..1.0).prop_map(|(tex, prot, best)| {
            if tex {
                textured(best, prot)
            } else {
                TexelState::UNTEXTURED
            }
        })
    }

    type Case = (Vec<TexelState>, Vec<(u32, u32)>, Vec<f32>);

    fn arb_case() -> impl Strategy<Value = Case> {
        (
            prop::collection::vec(arb_state(), 16),
            prop::collection::vec((0u32..16, 0u32..9), 0..24),
            prop::collection::vec(0.0f32..1.0, 9),
        )
            .prop_map(|(states, mut pairs, sims)| {
                pairs.sort();
                pairs.dedup_by_key(|p| p.0);
                (states, pairs, sims)
            })
    }

    fn build(states: &[TexelState]) -> TextureAtlas {
        let mut a = atlas(4);
        for (t, s) in states.iter().enumerate() {
            if s.is_textured() {
                a.write(t, [9; 3], *s);
            }
        }
        a
    }

    fn sim_of(values: &[f32]) -> SimilarityMap {
        SimilarityMap {
            values: Grid::from_vec(3, 3, values.to_vec()).unwrap(),
            foreground: Mask::new(3, 3, true),
        }
    }

    proptest! {
        #[test]
        fn labels_partition_the_image((states, pairs, sims) in arb_case(), margin in 0.0f32..0.99) {
            let m = classify(&vis(pairs, 3, 4), &build(&states), &sim_of(&sims), margin).unwrap();
            prop_assert_eq!(m.counts().total(), 9);
        }

        #[test]
        fn all_protected_pixels_never_written((states, pairs, sims) in arb_case(), margin in 0.0f32..0.99) {
            let a = build(&states);
            let m = classify(&vis(pairs.clone(), 3, 4), &a, &sim_of(&sims), margin).unwrap();
            for p in 0..9u32 {
                let texels: Vec<_> = pairs.iter().filter(|e| e.1 == p).map(|e| e.0).collect();
                if !texels.is_empty() && texels.iter().all(|&t| a.state(t as usize).protected) {
                    prop_assert!(!m.label(p as usize).is_write());
                }
                if texels.iter().any(|&t| a.state(t as usize).protected) {
                    prop_assert_eq!(m.label(p as usize), Region::AlwaysKeep);
                }
            }
        }

        #[test]
        fn update_set_shrinks_as_margin_grows((states, pairs, sims) in arb_case(), lo in 0.0f32..0.5, d in 0.0f32..0.49) {
            let a = build(&states);
            let v = vis(pairs, 3, 4);
            let s = sim_of(&sims);
            let low = classify(&v, &a, &s, lo).unwrap();
            let high = classify(&v, &a, &s, lo + d).unwrap();
            for p in 0..9 {
                if high.label(p) == Region::Update {
                    prop_assert_eq!(low.label(p), Region::Update);
                }
                if low.label(p) == Region::Keep {
                    prop_assert_eq!(high.label(p), Region::Keep);
                }
            }
        }
    }
}
