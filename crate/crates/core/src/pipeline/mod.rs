//! The texturing run: preparation, front projection, the view loop, export.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use image::{imageops, DynamicImage, RgbaImage};
use thiserror::Error;

use crate::atlas::{AtlasError, TextureAtlas};
use crate::genbackend::{
    self, reference_source, select_reference, seed_for_view, Backend, GenError, GenImage, GenMode, GenRequest,
    MockBackend, ReferenceSource, RemoteBackend, ViewAngles,
};
use crate::genmask::{classify, MaskError, Region, RegionMask};
use crate::grid::Mask;
use crate::mesh::{
    apply_matte, bake_vertex_colors, compute_normals, load_mesh, naive_unwrap, simplify, write_obj, InputImage,
    Mesh, MeshError,
};
use crate::project::{project_front, project_view, ProjectError};
use crate::prompts::{compose, PromptBundle, PromptError};
use crate::render::{
    color_from_gbuffer, export_conditioning_depth, render_view, texel_visibility, RenderError, TexelVisMap,
    UvLayout, ViewRender,
};
use crate::seams::{
    band_update_mask, canny_of_mask, seam_band, seam_pair_for_view, smooth_seams, InpaintContext, SeamError,
};
use crate::views::{auto_fit_distance, camera_mats, view_set, Aabb, CameraMats, ViewError, ViewRole, Viewpoint, DEFAULT_FOV_DEG};

pub use config::{BackendConfig, RunConfig, ViewOverrides};
pub use report::{RunReport, StageTimings, ViewReport};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Seam(#[from] SeamError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error("{0}")]
    Order(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(MeshError),
    #[error("stage '{stage}' failed{}: {source}", view.map(|v| format!(" at view {v}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        view: Option<usize>,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }

    pub fn view(&self) -> Option<usize> {
        match self {
            PipelineError::Stage { view, .. } => *view,
            _ => None,
        }
    }
}

fn stage<E: Into<StageError>>(stage: &'static str, view: Option<usize>) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        view,
        source: e.into(),
    }
}

/// The ten views for a mesh under the config's overrides.
pub fn view_set_for(bounds: &Aabb, config: &RunConfig) -> Vec<Viewpoint> {
    let fov = config.views.fov_deg.unwrap_or(DEFAULT_FOV_DEG);
    let distance = config.views.distance.unwrap_or_else(|| auto_fit_distance(bounds, fov));
    view_set(distance, fov)
}

/// Camera of view `index` for `mesh` as the pipeline would place it.
pub fn camera_for(mesh: &Mesh, config: &RunConfig, index: usize) -> Result<CameraMats, PipelineError> {
    let bounds = mesh.bounds().ok_or(MeshError::Empty).map_err(stage("views", Some(index)))?;
    let views = view_set_for(&bounds, config);
    let view = views.get(index).ok_or_else(|| PipelineError::Config(format!("no view {index}")))?;
    let res = config.render_resolution;
    camera_mats(view, &bounds, (res, res)).map_err(stage("views", Some(index)))
}

/// Index of the view that consumes the photograph.
pub fn front_view_index(views: &[Viewpoint]) -> usize {
    views.iter().position(|v| v.role() == ViewRole::Front).unwrap_or(0)
}

pub fn make_backend(config: &BackendConfig) -> Result<Box<dyn Backend>, PipelineError> {
    Ok(match config {
        BackendConfig::Mock => Box::new(MockBackend),
        BackendConfig::Remote { base_url, retry } => match base_url {
            Some(u) => Box::new(RemoteBackend::new(u.clone(), *retry)),
            None => Box::new(RemoteBackend::from_env(*retry).ok_or_else(|| {
                PipelineError::Config(format!(
                    "remote backend needs base_url or {}",
                    genbackend::BACKEND_URL_ENV
                ))
            })?),
        },
    })
}

/// Everything one view produced, beyond what goes into the report.
#[derive(Debug, Clone)]
pub struct ViewOutcome {
    pub report: ViewReport,
    pub mask: RegionMask,
    pub visibility: TexelVisMap,
    pub band: Option<Mask>,
}

/// A run in progress. Views are processed one at a time; the atlas has a
/// single writer.
pub struct Session {
    config: RunConfig,
    mesh: Mesh,
    views: Vec<Viewpoint>,
    cameras: Vec<CameraMats>,
    front: InputImage,
    prompts: PromptBundle,
    backend: Box<dyn Backend>,
    atlas: TextureAtlas,
    back_reference: Option<GenImage>,
    front_done: bool,
    report: RunReport,
    started: Instant,
}

fn load_front(config: &RunConfig) -> Result<InputImage, PipelineError> {
    let img = image::open(&config.front_image)
        .map_err(|e| stage("load_front", None)(MeshError::Image(e)))?
        .to_rgba8();
    let mask = match &config.mask {
        Some(p) => Some(Mask::from_image(
            &image::open(p).map_err(|e| stage("load_front", None)(MeshError::Image(e)))?.to_luma8(),
        )),
        None => None,
    };
    let matted = apply_matte(&img, mask.as_ref()).map_err(stage("matte", None))?;
    let res = config.render_resolution;
    if matted.pixels().dimensions() == (res, res) {
        return Ok(matted);
    }
    let (w, h) = matted.pixels().dimensions();
    if w != h {
        return Err(PipelineError::Config(format!(
            "front image is {w}x{h}; it must be square to align with the {res}x{res} front render"
        )));
    }
    let resized = imageops::resize(matted.pixels(), res, res, imageops::FilterType::Nearest);
    InputImage::new(resized).map_err(stage("matte", None))
}

impl Session {
    pub fn prepare(config: RunConfig) -> Result<Session, PipelineError> {
        let backend = make_backend(&config.backend)?;
        Self::prepare_with_backend(config, backend)
    }

    /// Loads and conditions every input. The camera frame comes from the
    /// input mesh's bounds so it matches the photograph even after decimation.
    pub fn prepare_with_backend(config: RunConfig, backend: Box<dyn Backend>) -> Result<Session, PipelineError> {
        config.validate()?;
        let t0 = Instant::now();
        let mut report = RunReport::default();
        let input = load_mesh(&config.mesh).map_err(stage("load_mesh", None))?;
        report.input_faces = input.face_count();
        let bounds = input.bounds().ok_or(MeshError::Empty).map_err(stage("load_mesh", None))?;
        let simplified = if input.face_count() > config.target_faces {
            let out = simplify(&input, config.target_faces);
            report.warnings.extend(out.warning);
            out.mesh
        } else {
            input
        };
        let (mut mesh, warnings) = compute_normals(&simplified).map_err(stage("normals", None))?;
        report.warnings.extend(warnings);
        if mesh.uvs.is_none() {
            log::info!("mesh has no uvs; using the naive per-face unwrap");
            mesh = naive_unwrap(&mesh, config.atlas_resolution);
        }
        mesh.validate().map_err(stage("validate", None))?;
        report.faces = mesh.face_count();

        let res = config.atlas_resolution;
        let atlas = if mesh.vertex_colors.is_some() {
            bake_vertex_colors(&mesh, res).map_err(stage("bake", None))?
        } else {
            TextureAtlas::new(Arc::new(UvLayout::build(&mesh, res, res).map_err(stage("bake", None))?))
        };
        report.covered_texels = atlas.layout().covered_count();

        let views = view_set_for(&bounds, &config);
        let r = config.render_resolution;
        let cameras = views
            .iter()
            .map(|v| camera_mats(v, &bounds, (r, r)).map_err(stage("views", Some(v.index))))
            .collect::<Result<Vec<_>, _>>()?;
        let front = load_front(&config)?;
        let prompts = PromptBundle::load(&config.answers).map_err(stage("prompts", None))?;
        report.timings.prepare_s = t0.elapsed().as_secs_f64();
        Ok(Session {
            config,
            mesh,
            views,
            cameras,
            front,
            prompts,
            backend,
            atlas,
            back_reference: None,
            front_done: false,
            report,
            started: t0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn atlas(&self) -> &TextureAtlas {
        &self.atlas
    }

    pub fn views(&self) -> &[Viewpoint] {
        &self.views
    }

    pub fn camera(&self, index: usize) -> &CameraMats {
        &self.cameras[index]
    }

    pub fn front_image(&self) -> &InputImage {
        &self.front
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn front_index(&self) -> usize {
        front_view_index(&self.views)
    }

    /// Generated views in processing order: the set order with the front
    /// view removed.
    pub fn generation_order(&self) -> Vec<usize> {
        let f = self.front_index();
        (0..self.views.len()).filter(|&i| i != f).collect()
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.config.output_dir.join("checkpoints")
    }

    fn debug_dir(&self) -> PathBuf {
        self.config.output_dir.join("debug")
    }

    fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
    }

    fn save_png(&self, img: DynamicImage, path: PathBuf, view: usize) -> Result<(), PipelineError> {
        img.save(&path)
            .map_err(|e| stage("dump", Some(view))(MeshError::Image(e)))
    }

    fn checkpoint(&self, view: usize) -> Result<(), PipelineError> {
        if !self.config.checkpoints {
            return Ok(());
        }
        let dir = self.checkpoint_dir();
        Self::ensure_dir(&dir)?;
        self.atlas
            .save_checkpoint(
                &dir.join(format!("atlas_after_{view}.png")),
                &dir.join(format!("atlas_meta_{view}.json")),
            )
            .map_err(stage("checkpoint", Some(view)))
    }

    fn dump_render(&self, view: usize, r: &ViewRender) -> Result<(), PipelineError> {
        if !self.config.debug_dumps {
            return Ok(());
        }
        let dir = self.debug_dir();
        Self::ensure_dir(&dir)?;
        self.save_png(DynamicImage::ImageLuma16(r.depth.to_image16()), dir.join(format!("depth_{view}.png")), view)?;
        let cond = export_conditioning_depth(&r.depth);
        self.save_png(DynamicImage::ImageLuma8(cond.image), dir.join(format!("cond_depth_{view}.png")), view)?;
        self.save_png(
            DynamicImage::ImageLuma8(r.similarity.to_image()),
            dir.join(format!("similarity_{view}.png")),
            view,
        )
    }

    fn dump(&self, name: String, img: DynamicImage, view: usize) -> Result<(), PipelineError> {
        if !self.config.debug_dumps {
            return Ok(());
        }
        let dir = self.debug_dir();
        Self::ensure_dir(&dir)?;
        self.save_png(img, dir.join(name), view)
    }

    fn finish_view(&mut self, report: ViewReport) {
        self.report.coverage_after_view.push(report.coverage);
        self.report.views.push(report);
    }

    /// Projects the photograph through the front camera and protects every
    /// texel it writes.
    pub fn project_front(&mut self) -> Result<ViewOutcome, PipelineError> {
        let t = Instant::now();
        let idx = self.front_index();
        let cams = &self.cameras[idx];
        let r = render_view(&self.mesh, cams);
        self.dump_render(idx, &r)?;
        let vis = texel_visibility(&self.mesh, &self.atlas, cams, &r.depth);
        let stats = project_front(&mut self.atlas, &self.front, &vis, &r.similarity, idx as u8)
            .map_err(stage("project_front", Some(idx)))?;
        let mask = classify(&vis, &self.atlas, &r.similarity, self.config.update_margin)
            .map_err(stage("classify", Some(idx)))?;
        self.dump(format!("mask_{idx}.png"), DynamicImage::ImageRgb8(mask.to_image()), idx)?;
        self.front_done = true;
        self.report.protected_texels = self.atlas.protected_texels().len();
        self.checkpoint(idx)?;
        let v = &self.views[idx];
        let report = ViewReport {
            index: idx,
            azimuth_deg: v.azimuth_deg,
            elevation_deg: v.elevation_deg,
            role: v.role(),
            reference: None,
            prompt: None,
            provenance: None,
            visible_texels: vis.len(),
            labels: mask.counts(),
            texels_written: stats.written,
            seam_pair: None,
            band_pixels: 0,
            band_texels_written: 0,
            seam_iterations: 0,
            coverage: self.atlas.coverage(),
            seconds: t.elapsed().as_secs_f64(),
        };
        self.finish_view(report.clone());
        Ok(ViewOutcome {
            report,
            mask,
            visibility: vis,
            band: None,
        })
    }

    /// One generated view: render, classify, generate, project, then blend
    /// the seam band and project it again.
    pub fn process_view(&mut self, idx: usize) -> Result<ViewOutcome, PipelineError> {
        let t = Instant::now();
        let view = *self
            .views
            .get(idx)
            .ok_or_else(|| PipelineError::Config(format!("no view {idx}")))?;
        if idx == self.front_index() {
            return Err(stage("generate", Some(idx))(StageError::Order(
                "the front view uses the photograph; call project_front".into(),
            )));
        }
        if !self.front_done {
            return Err(stage("generate", Some(idx))(StageError::Order(
                "front projection must run before generated views".into(),
            )));
        }
        let cams = self.cameras[idx].clone();
        let r = render_view(&self.mesh, &cams);
        self.dump_render(idx, &r)?;
        let vis = texel_visibility(&self.mesh, &self.atlas, &cams, &r.depth);
        let mask = classify(&vis, &self.atlas, &r.similarity, self.config.update_margin)
            .map_err(stage("classify", Some(idx)))?;
        self.dump(format!("mask_{idx}.png"), DynamicImage::ImageRgb8(mask.to_image()), idx)?;

        let source = reference_source(view.role());
        let reference = select_reference(&view, &self.front, self.back_reference.as_ref())
            .map_err(stage("select_reference", Some(idx)))?
            .clone();
        let cond = export_conditioning_depth(&r.depth);
        let prompt = compose(&self.prompts, &view);
        let seed = seed_for_view(self.config.global_seed, idx);
        let request = GenRequest {
            mode: GenMode::Generate,
            reference,
            depth: cond.image.clone(),
            mask: None,
            prompt: prompt.clone(),
            seed,
            view: ViewAngles::from(&view),
        };
        let gen = genbackend::generate(&request, self.backend.as_ref()).map_err(stage("generate", Some(idx)))?;
        if self.config.checkpoints {
            let dir = self.checkpoint_dir();
            Self::ensure_dir(&dir)?;
            self.save_png(DynamicImage::ImageRgba8(gen.pixels.clone()), dir.join(format!("gen_{idx}.png")), idx)?;
        }
        let stats = project_view(&mut self.atlas, &gen.pixels, &mask, &vis, &r.similarity, idx as u8)
            .map_err(stage("project_view", Some(idx)))?;
        if view.role() == ViewRole::Back && source == ReferenceSource::Front {
            self.back_reference = Some(gen.clone());
        }

        let mut render = color_from_gbuffer(&self.mesh, &self.atlas, &r.gbuffer)
            .map_err(stage("render_color", Some(idx)))?;
        for (i, p) in render.image.pixels_mut().enumerate() {
            if !render.textured[i] {
                p[3] = 0;
            }
        }
        self.dump(format!("render_{idx}.png"), DynamicImage::ImageRgba8(render.image.clone()), idx)?;

        let pair = seam_pair_for_view(&mask, self.config.seam_rule, idx);
        let mut band_pixels = 0;
        let mut band_written = 0;
        let mut iterations = 0;
        let mut band_mask = None;
        if let Some((a, b)) = pair {
            let band = seam_band(&canny_of_mask(&mask, a), &canny_of_mask(&mask, b), self.config.dilation_px)
                .map_err(stage("seam_band", Some(idx)))?
                .and(&render.textured);
            band_pixels = band.count();
            self.dump(format!("seam_band_{idx}.png"), DynamicImage::ImageLuma8(band.to_image()), idx)?;
            if band_pixels > 0 {
                let ctx = InpaintContext {
                    backend: self.backend.as_ref(),
                    depth: &cond.image,
                    prompt: &prompt,
                    seed,
                    view: ViewAngles::from(&view),
                };
                let smoothed = smooth_seams(&render.image, &band, self.config.seam_inpaint.then_some(&ctx));
                iterations = smoothed.iterations;
                if let Some(w) = smoothed.warning {
                    self.report.warnings.push(format!("view {idx}: {w}"));
                }
                self.dump(
                    format!("render_smoothed_{idx}.png"),
                    DynamicImage::ImageRgba8(smoothed.image.clone()),
                    idx,
                )?;
                let reproject = band_update_mask(&mask, &band);
                band_written = project_view(&mut self.atlas, &smoothed.image, &reproject, &vis, &r.similarity, idx as u8)
                    .map_err(stage("reproject_band", Some(idx)))?
                    .written;
            }
            band_mask = Some(band);
        }
        self.checkpoint(idx)?;
        let report = ViewReport {
            index: idx,
            azimuth_deg: view.azimuth_deg,
            elevation_deg: view.elevation_deg,
            role: view.role(),
            reference: Some(source),
            prompt: Some(prompt),
            provenance: Some(gen.provenance),
            visible_texels: vis.len(),
            labels: mask.counts(),
            texels_written: stats.written,
            seam_pair: pair,
            band_pixels,
            band_texels_written: band_written,
            seam_iterations: iterations,
            coverage: self.atlas.coverage(),
            seconds: t.elapsed().as_secs_f64(),
        };
        self.finish_view(report.clone());
        Ok(ViewOutcome {
            report,
            mask,
            visibility: vis,
            band: band_mask,
        })
    }

    /// Continues from the checkpoint written after view `from`, which must
    /// be the front view or a generated view. The back reference is reloaded
    /// from its saved generation when later views need it.
    pub fn resume_from(&mut self, from: usize) -> Result<Vec<usize>, PipelineError> {
        let dir = self.checkpoint_dir();
        let atlas = TextureAtlas::load_checkpoint(
            &dir.join(format!("atlas_after_{from}.png")),
            &dir.join(format!("atlas_meta_{from}.json")),
            self.atlas.layout().clone(),
        )
        .map_err(stage("resume", Some(from)))?;
        let mut order = vec![self.front_index()];
        order.extend(self.generation_order());
        let pos = order
            .iter()
            .position(|&i| i == from)
            .ok_or_else(|| PipelineError::Config(format!("no view {from} to resume from")))?;
        self.atlas = atlas;
        self.front_done = true;
        self.report.resumed_from = Some(from);
        self.report.protected_texels = self.atlas.protected_texels().len();
        if let Some(back) = order[..=pos].iter().copied().find(|&i| self.views[i].role() == ViewRole::Back) {
            let path = dir.join(format!("gen_{back}.png"));
            if path.exists() {
                let pixels = image::open(&path)
                    .map_err(|e| stage("resume", Some(from))(MeshError::Image(e)))?
                    .to_rgba8();
                self.back_reference = Some(GenImage {
                    pixels,
                    provenance: genbackend::Provenance {
                        backend_id: format!("checkpoint:{}", path.display()),
                        seed: seed_for_view(self.config.global_seed, back),
                        request_hash: String::new(),
                    },
                });
            }
        }
        Ok(order[pos + 1..].to_vec())
    }

    /// Writes `mesh.obj`, `mesh.mtl`, `texture.png`, `views.json` and
    /// `report.json` into the output directory.
    pub fn export(&mut self) -> Result<RunReport, PipelineError> {
        let t = Instant::now();
        let out = self.config.output_dir.clone();
        Self::ensure_dir(&out)?;
        let texture = self.atlas.export_texture(self.config.gutter_px);
        texture
            .save(out.join("texture.png"))
            .map_err(|e| stage("export", None)(MeshError::Image(e)))?;
        let mut mesh = self.mesh.clone();
        mesh.vertex_colors = None;
        write_obj(&mesh, out.join("mesh.obj"), Some("mesh.mtl")).map_err(stage("export", None))?;
        let mtl = "newmtl texture\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nmap_Kd texture.png\n";
        let mtl_path = out.join("mesh.mtl");
        std::fs::write(&mtl_path, mtl).map_err(|e| PipelineError::io(&mtl_path, e))?;
        let views_path = out.join("views.json");
        let views = serde_json::json!({
            "front_index": self.front_index(),
            "views": self.views,
            "cameras": self.cameras.iter().map(|c| serde_json::json!({
                "eye": [c.eye.x, c.eye.y, c.eye.z],
                "rotation_rows": (0..3).map(|r| [c.rotation[(r, 0)], c.rotation[(r, 1)], c.rotation[(r, 2)]]).collect::<Vec<_>>(),
                "focal_px": c.focal_px,
                "principal": [c.principal.x, c.principal.y],
                "size": [c.width, c.height],
            })).collect::<Vec<_>>(),
        });
        std::fs::write(&views_path, serde_json::to_vec_pretty(&views).expect("serializable"))
            .map_err(|e| PipelineError::io(&views_path, e))?;
        self.report.final_coverage = self.atlas.coverage();
        self.report.timings.export_s = t.elapsed().as_secs_f64();
        self.report.timings.total_s = self.started.elapsed().as_secs_f64();
        self.report.timings.views_s = self.report.views.iter().map(|v| v.seconds).sum();
        if !self.report.coverage_monotone() {
            self.report.warnings.push("coverage decreased between views".into());
        }
        let report_path = out.join("report.json");
        std::fs::write(&report_path, serde_json::to_vec_pretty(&self.report).expect("serializable"))
            .map_err(|e| PipelineError::io(&report_path, e))?;
        Ok(self.report.clone())
    }

    /// Front projection, every generated view in order, export.
    pub fn run_all(&mut self) -> Result<RunReport, PipelineError> {
        self.project_front()?;
        for idx in self.generation_order() {
            self.process_view(idx)?;
        }
        self.export()
    }
}

/// Runs the whole pipeline for `config`.
pub fn run(config: RunConfig) -> Result<RunReport, PipelineError> {
    Session::prepare(config)?.run_all()
}

/// Picks up after the checkpoint of view `from`.
pub fn resume(config: RunConfig, from: usize) -> Result<RunReport, PipelineError> {
    let mut s = Session::prepare(config)?;
    for idx in s.resume_from(from)? {
        s.process_view(idx)?;
    }
    s.export()
}

/// Visible protected texels whose pixel is not labeled ALWAYS_KEEP.
pub fn protected_violations(mask: &RegionMask, vis: &TexelVisMap, atlas: &TextureAtlas) -> usize {
    let mut v = 0;
    for e in &vis.entries {
        if atlas.state(e.texel as usize).protected && mask.label(e.pixel as usize) != Region::AlwaysKeep {
            v += 1;
        }
    }
    v
}

/// The photograph as seen by the front camera, for fidelity checks.
pub fn front_render(session: &Session) -> Result<RgbaImage, PipelineError> {
    let idx = session.front_index();
    let r = render_view(session.mesh(), session.camera(idx));
    Ok(color_from_gbuffer(session.mesh(), session.atlas(), &r.gbuffer)
        .map_err(stage("render_color", Some(idx)))?
        .image)
}
