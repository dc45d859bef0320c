use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::genbackend::RetryPolicy;
use crate::seams::SeamRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock,
    Remote {
        /// Falls back to `ULTRAMAN_BACKEND_URL` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_deg: Option<f64>,
}

fn d_atlas() -> u32 {
    1024
}
fn d_render() -> u32 {
    768
}
fn d_faces() -> usize {
    40_000
}
fn d_margin() -> f32 {
    crate::genmask::DEFAULT_UPDATE_MARGIN
}
fn d_dilation() -> u32 {
    crate::seams::DEFAULT_DILATION_PX
}
fn d_backend() -> BackendConfig {
    BackendConfig::Mock
}
fn d_gutter() -> u32 {
    4
}
fn d_true() -> bool {
    true
}

/// One JSON document describing a run. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: PathBuf,
    pub front_image: PathBuf,
    pub answers: PathBuf,
    pub output_dir: PathBuf,
    /// Optional binary foreground mask for the front image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default = "d_atlas")]
    pub atlas_resolution: u32,
    #[serde(default = "d_render")]
    pub render_resolution: u32,
    #[serde(default = "d_faces")]
    pub target_faces: usize,
    #[serde(default = "d_margin")]
    pub update_margin: f32,
    #[serde(default = "d_dilation")]
    pub dilation_px: u32,
    #[serde(default)]
    pub seam_rule: SeamRule,
    /// Ask the backend to inpaint seam bands instead of the built-in smoother.
    #[serde(default)]
    pub seam_inpaint: bool,
    #[serde(default = "d_backend")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default)]
    pub views: ViewOverrides,
    /// Texels of gutter filled around charts in the exported texture.
    #[serde(default = "d_gutter")]
    pub gutter_px: u32,
    /// Atlas checkpoints and generated images, needed for `--resume-from`.
    #[serde(default = "d_true")]
    pub checkpoints: bool,
    /// Per-view depth, similarity, mask and render images.
    #[serde(default)]
    pub debug_dumps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: PathBuf::from("mesh.obj"),
            front_image: PathBuf::from("front.png"),
            answers: PathBuf::from("answers.json"),
            output_dir: PathBuf::from("out"),
            mask: None,
            atlas_resolution: d_atlas(),
            render_resolution: d_render(),
            target_faces: d_faces(),
            update_margin: d_margin(),
            dilation_px: d_dilation(),
            seam_rule: SeamRule::Content,
            seam_inpaint: false,
            backend: BackendConfig::Mock,
            global_seed: 0,
            views: ViewOverrides::default(),
            gutter_px: d_gutter(),
            checkpoints: true,
            debug_dumps: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.mesh);
        fix(&mut self.front_image);
        fix(&mut self.answers);
        fix(&mut self.output_dir);
        if let Some(m) = &mut self.mask {
            fix(m);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.atlas_resolution == 0 || self.render_resolution == 0 {
            return bad("resolutions must be positive".into());
        }
        if self.atlas_resolution > 16_384 || self.render_resolution > 16_384 {
            return bad("resolutions above 16384 are not supported".into());
        }
        if !(0.0..1.0).contains(&self.update_margin) {
            return bad(format!("update_margin {} outside [0, 1)", self.update_margin));
        }
        if self.target_faces == 0 {
            return bad("target_faces must be positive".into());
        }
        if let Some(d) = self.views.distance {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("view distance {d} must be positive"));
            }
        }
        if let Some(f) = self.views.fov_deg {
            if !(f > 0.0 && f < 180.0) {
                return bad(format!("fov {f} outside (0, 180)"));
            }
        }
        if let BackendConfig::Remote { retry, .. } = &self.backend {
            if retry.attempts == 0 {
                return bad("retry.attempts must be at least 1".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"mesh": "m.obj", "front_image": "f.png", "answers": "a.json", "output_dir": "o"}"#,
        )
        .unwrap();
        assert_eq!(cfg.atlas_resolution, 1024);
        assert_eq!(cfg.render_resolution, 768);
        assert_eq!(cfg.target_faces, 40_000);
        assert_eq!(cfg.dilation_px, 4);
        assert_eq!(cfg.seam_rule, SeamRule::Content);
        assert_eq!(cfg.backend, BackendConfig::Mock);
    }

    #[test]
    fn remote_backend_parses() {
        let cfg = RunConfig::from_json(
            r#"{"mesh": "m", "front_image": "f", "answers": "a", "output_dir": "o",
                "backend": {"kind": "remote", "base_url": "http://x:1"}, "seam_rule": "index"}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.backend,
            BackendConfig::Remote {
                base_url: Some("http://x:1".into()),
                retry: RetryPolicy::default()
            }
        );
        assert_eq!(cfg.seam_rule, SeamRule::Index);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let base = RunConfig::default();
        for cfg in [
            RunConfig { update_margin: 1.0, ..base.clone() },
            RunConfig { render_resolution: 0, ..base.clone() },
            RunConfig {
                views: ViewOverrides { distance: Some(-1.0), fov_deg: None },
                ..base.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        }
        assert!(matches!(RunConfig::from_json("{"), Err(PipelineError::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"mesh":"m","front_image":"f","answers":"a","output_dir":"o","typo":1}"#),
            Err(PipelineError::Config(_))
        ));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut cfg = RunConfig::default();
        cfg.mask = Some("mask.png".into());
        cfg.output_dir = "/abs/out".into();
        cfg.resolve_relative(Path::new("/runs/a"));
        assert_eq!(cfg.mesh, PathBuf::from("/runs/a/mesh.obj"));
        assert_eq!(cfg.mask, Some(PathBuf::from("/runs/a/mask.png")));
        assert_eq!(cfg.output_dir, PathBuf::from("/abs/out"));
    }
}
