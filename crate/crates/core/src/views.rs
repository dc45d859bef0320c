//! The fixed ten-camera set and the pinhole camera model.
//!
//! World convention: +Z is up, the input photograph looks along +Y (camera on
//! the -Y side), and azimuth 90 puts the camera on +X.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FOV_DEG: f64 = 45.0;
/// Auto-fit distance multiplier on `radius / tan(fov / 2)`.
pub const AUTO_FIT_FACTOR: f64 = 1.4;
/// Minimum fraction of the image width/height left free on every side of the
/// projected bounds.
pub const FIT_MARGIN: f64 = 0.05;

/// Horizontal azimuths in generation order.
pub const RING_AZIMUTHS: [f64; 8] = [180.0, 0.0, 45.0, 315.0, 90.0, 270.0, 135.0, 225.0];

#[derive(Debug, Error, PartialEq)]
pub enum ViewError {
    #[error("bounding box has zero extent")]
    ZeroExtent,
    #[error("mesh bounds do not fit view {index} with a {margin} margin")]
    DoesNotFit { index: usize, margin: f64 },
    #[error("invalid viewpoint: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn radius(&self) -> f64 {
        (self.max - self.min).norm() * 0.5
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [0, 1, 2, 3, 4, 5, 6, 7].map(|i| {
            Vector3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }
}

/// Semantic role of a view, independent of its index in the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Front,
    FrontSide,
    Side,
    BackSide,
    Back,
    Top,
    Bottom,
}

impl ViewRole {
    pub fn classify(azimuth_deg: f64, elevation_deg: f64) -> ViewRole {
        if elevation_deg >= 60.0 {
            return ViewRole::Top;
        }
        if elevation_deg <= -60.0 {
            return ViewRole::Bottom;
        }
        let az = azimuth_deg.rem_euclid(360.0);
        let off = az.min(360.0 - az);
        match off {
            o if o <= 22.5 => ViewRole::Front,
            o if o <= 67.5 => ViewRole::FrontSide,
            o if o <= 112.5 => ViewRole::Side,
            o if o <= 157.5 => ViewRole::BackSide,
            _ => ViewRole::Back,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub index: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
}

impl Viewpoint {
    pub fn role(&self) -> ViewRole {
        ViewRole::classify(self.azimuth_deg, self.elevation_deg)
    }

    pub fn is_vertical(&self) -> bool {
        matches!(self.role(), ViewRole::Top | ViewRole::Bottom)
    }

    /// Unit vector from the target toward the camera.
    pub fn direction(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        if self.elevation_deg.abs() == 90.0 {
            return Vector3::new(0.0, 0.0, self.elevation_deg.signum());
        }
        Vector3::new(az.sin() * el.cos(), -az.cos() * el.cos(), el.sin())
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        if !(self.distance > 0.0) {
            return Err(ViewError::Invalid(format!("distance {}", self.distance)));
        }
        if !(0.0..360.0).contains(&self.azimuth_deg) {
            return Err(ViewError::Invalid(format!("azimuth {}", self.azimuth_deg)));
        }
        if !(-90.0..=90.0).contains(&self.elevation_deg) {
            return Err(ViewError::Invalid(format!("elevation {}", self.elevation_deg)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(ViewError::Invalid(format!("fov {}", self.fov_deg)));
        }
        Ok(())
    }
}

/// The eight ring views followed by top and bottom.
pub fn default_view_set(distance: f64) -> Vec<Viewpoint> {
    view_set(distance, DEFAULT_FOV_DEG)
}

pub fn view_set(distance: f64, fov_deg: f64) -> Vec<Viewpoint> {
    let ring = RING_AZIMUTHS.iter().map(|&az| (az, 0.0));
    ring.chain([(0.0, 90.0), (0.0, -90.0)])
        .enumerate()
        .map(|(index, (azimuth_deg, elevation_deg))| Viewpoint {
            index,
            azimuth_deg,
            elevation_deg,
            distance,
            fov_deg,
        })
        .collect()
}

/// Distance at which the bounding sphere fills `1 / AUTO_FIT_FACTOR` of the
/// half field of view.
pub fn auto_fit_distance(bounds: &Aabb, fov_deg: f64) -> f64 {
    AUTO_FIT_FACTOR * bounds.radius() / (fov_deg.to_radians() * 0.5).tan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMats {
    pub eye: Vector3<f64>,
    /// Rows are the camera right, up and forward axes in world space.
    pub rotation: Matrix3<f64>,
    pub focal_px: f64,
    pub principal: Vector2<f64>,
    pub width: u32,
    pub height: u32,
}

/// A world point in camera and screen coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    /// Continuous pixel coordinates; pixel (i, j) spans [i, i+1) x [j, j+1).
    pub screen: Vector2<f64>,
    /// Distance along the optical axis.
    pub depth: f64,
}

impl CameraMats {
    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.eye)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Projected {
        let c = self.to_camera(p);
        Projected {
            screen: Vector2::new(
                self.principal.x + self.focal_px * c.x / c.z,
                self.principal.y - self.focal_px * c.y / c.z,
            ),
            depth: c.z,
        }
    }

    /// World-space unit ray through a continuous pixel position.
    pub fn ray(&self, screen: Vector2<f64>) -> Vector3<f64> {
        let c = Vector3::new(
            (screen.x - self.principal.x) / self.focal_px,
            -(screen.y - self.principal.y) / self.focal_px,
            1.0,
        );
        (self.rotation.transpose() * c).normalize()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

/// Places a pinhole camera on the view sphere around the bounds center.
///
/// Horizontal views use world +Z as up; top and bottom views use the
/// azimuth-0 viewing direction (+Y) so the frame is well defined.
pub fn camera_mats(view: &Viewpoint, bounds: &Aabb, image_size: (u32, u32)) -> Result<CameraMats, ViewError> {
    view.validate()?;
    let extent = bounds.max - bounds.min;
    if !(extent.max() > 0.0) {
        return Err(ViewError::ZeroExtent);
    }
    let center = bounds.center();
    let eye = center + view.direction() * view.distance;
    let forward = (center - eye).normalize();
    let up = if view.is_vertical() { Vector3::y() } else { Vector3::z() };
    let right = forward.cross(&up).normalize();
    let cam_up = right.cross(&forward);
    let rotation = Matrix3::from_rows(&[right.transpose(), cam_up.transpose(), forward.transpose()]);
    let (w, h) = image_size;
    let focal_px = (h as f64 * 0.5) / (view.fov_deg.to_radians() * 0.5).tan();
    let cams = CameraMats {
        eye,
        rotation,
        focal_px,
        principal: Vector2::new(w as f64 * 0.5, h as f64 * 0.5),
        width: w,
        height: h,
    };
    let (lo_x, hi_x) = (w as f64 * FIT_MARGIN, w as f64 * (1.0 - FIT_MARGIN));
    let (lo_y, hi_y) = (h as f64 * FIT_MARGIN, h as f64 * (1.0 - FIT_MARGIN));
    for corner in bounds.corners() {
        let p = cams.project(&corner);
        if p.depth <= 0.0
            || p.screen.x < lo_x
            || p.screen.x > hi_x
            || p.screen.y < lo_y
            || p.screen.y > hi_y
        {
            return Err(ViewError::DoesNotFit {
                index: view.index,
                margin: FIT_MARGIN,
            });
        }
    }
    Ok(cams)
}
