use serde::{Deserialize, Serialize};

use crate::genbackend::{Provenance, ReferenceSource};
use crate::genmask::RegionCounts;
use crate::seams::SeamLabel;
use crate::views::ViewRole;

/// What happened in one view of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub index: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub role: ViewRole,
    /// `None` for the front view, which uses the photograph directly.
    pub reference: Option<ReferenceSource>,
    pub prompt: Option<String>,
    pub provenance: Option<Provenance>,
    pub visible_texels: usize,
    pub labels: RegionCounts,
    pub texels_written: usize,
    pub seam_pair: Option<(SeamLabel, SeamLabel)>,
    pub band_pixels: usize,
    pub band_texels_written: usize,
    pub seam_iterations: usize,
    pub coverage: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub prepare_s: f64,
    pub views_s: f64,
    pub export_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub input_faces: usize,
    pub faces: usize,
    pub covered_texels: usize,
    pub protected_texels: usize,
    pub views: Vec<ViewReport>,
    /// Coverage after each processed view, in processing order.
    pub coverage_after_view: Vec<f64>,
    pub final_coverage: f64,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
    /// Index of a checkpoint the run resumed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resumed_from: Option<usize>,
}

impl RunReport {
    pub fn coverage_monotone(&self) -> bool {
        self.coverage_after_view.windows(2).all(|w| w[1] >= w[0])
    }
}
