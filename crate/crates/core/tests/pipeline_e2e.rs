mod common;

use ultraman_core::fixtures::{self, FixtureKind};
use ultraman_core::genbackend::{GenError, ReferenceSource};
use ultraman_core::metrics::{self, EvalView, Psnr};
use ultraman_core::pipeline::{self, PipelineError, RunReport, Session, StageError};
use ultraman_core::render::render_color;
use ultraman_core::seams::SeamRule;
use ultraman_core::views::ViewRole;
use ultraman_core::{mesh, TextureAtlas, UvLayout};

use common::{fixture, small};

fn read(path: std::path::PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_writes_every_artifact() {
    let f = fixture(FixtureKind::Sphere, small);
    let report = pipeline::run(f.config.clone()).unwrap();
    let out = f.out();
    for name in ["mesh.obj", "mesh.mtl", "texture.png", "views.json", "report.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let obj = String::from_utf8(read(out.join("mesh.obj"))).unwrap();
    assert!(obj.contains("mtllib mesh.mtl"));
    assert!(obj.lines().any(|l| l.starts_with("vt ")));
    let on_disk: serde_json::Value = serde_json::from_slice(&read(out.join("report.json"))).unwrap();
    assert_eq!(on_disk["views"].as_array().unwrap().len(), 10);
    assert_eq!(report.views.len(), 10);
    let views: serde_json::Value = serde_json::from_slice(&read(out.join("views.json"))).unwrap();
    assert_eq!(views["front_index"], 1);
    assert_eq!(views["cameras"].as_array().unwrap().len(), 10);
}

#[test]
fn views_run_in_the_documented_order() {
    let f = fixture(FixtureKind::Sphere, small);
    let report = pipeline::run(f.config.clone()).unwrap();
    let order: Vec<usize> = report.views.iter().map(|v| v.index).collect();
    assert_eq!(order, vec![1, 0, 2, 3, 4, 5, 6, 7, 8, 9]);
    let az: Vec<f64> = report.views.iter().map(|v| v.azimuth_deg).collect();
    assert_eq!(&az[..8], &[0.0, 180.0, 45.0, 315.0, 90.0, 270.0, 135.0, 225.0]);
    assert_eq!(report.views[8].role, ViewRole::Top);
    assert_eq!(report.views[9].role, ViewRole::Bottom);
    assert!(report.views[0].reference.is_none());
    for v in &report.views[1..] {
        let expected = if v.index <= 5 { ReferenceSource::Front } else { ReferenceSource::Back };
        assert_eq!(v.reference, Some(expected), "view {}", v.index);
        assert!(v.prompt.as_deref().unwrap().ends_with("full body, plain background"));
    }
}

#[test]
fn report_is_internally_consistent() {
    let f = fixture(FixtureKind::Humanoid, small);
    let report: RunReport = pipeline::run(f.config.clone()).unwrap();
    assert!(report.coverage_monotone());
    assert_eq!(report.coverage_after_view.len(), 10);
    assert_eq!(*report.coverage_after_view.last().unwrap(), report.final_coverage);
    assert!(report.protected_texels > 0);
    let pixels = (f.config.render_resolution * f.config.render_resolution) as usize;
    for v in &report.views {
        assert_eq!(v.labels.total(), pixels);
    }
    assert!(report.timings.total_s >= report.timings.views_s);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
}

#[test]
fn reruns_are_bit_identical_and_seeds_matter() {
    let f = fixture(FixtureKind::Humanoid, small);
    let mut texture = Vec::new();
    for (i, seed) in [(0, 0u64), (1, 0), (2, 1)] {
        let mut cfg = f.config.clone();
        cfg.global_seed = seed;
        cfg.output_dir = f.dir.path().join(format!("run{i}"));
        pipeline::run(cfg.clone()).unwrap();
        texture.push((read(cfg.output_dir.join("texture.png")), read(cfg.output_dir.join("mesh.obj"))));
    }
    assert_eq!(texture[0], texture[1]);
    assert_ne!(texture[0].0, texture[2].0);
    assert_eq!(texture[0].1, texture[2].1);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let f = fixture(FixtureKind::Humanoid, small);
    pipeline::run(f.config.clone()).unwrap();
    let full = read(f.out().join("texture.png"));
    for from in [1usize, 0, 4, 7] {
        let report = pipeline::resume(f.config.clone(), from).unwrap();
        assert_eq!(report.resumed_from, Some(from));
        assert_eq!(read(f.out().join("texture.png")), full, "resume from {from}");
    }
}

#[test]
fn resume_needs_an_existing_checkpoint() {
    let f = fixture(FixtureKind::Sphere, small);
    match pipeline::resume(f.config.clone(), 3) {
        Err(PipelineError::Stage { stage, view, .. }) => {
            assert_eq!(stage, "resume");
            assert_eq!(view, Some(3));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rear_view_before_back_view_aborts() {
    let f = fixture(FixtureKind::Sphere, small);
    let mut s = Session::prepare(f.config.clone()).unwrap();
    s.project_front().unwrap();
    for idx in [6, 7, 8, 9] {
        match s.process_view(idx) {
            Err(PipelineError::Stage {
                stage: "select_reference",
                view: Some(v),
                source: StageError::Gen(GenError::MissingBackReference { .. }),
            }) => assert_eq!(v, idx),
            other => panic!("view {idx}: {other:?}"),
        }
    }
    // Front-referenced views still work, and unlock the rear ones.
    s.process_view(2).unwrap();
    assert!(s.process_view(6).is_err());
    s.process_view(0).unwrap();
    s.process_view(6).unwrap();
}

#[test]
fn generated_views_need_the_front_projection_first() {
    let f = fixture(FixtureKind::Sphere, small);
    let mut s = Session::prepare(f.config.clone()).unwrap();
    assert!(matches!(
        s.process_view(0),
        Err(PipelineError::Stage {
            source: StageError::Order(_),
            ..
        })
    ));
    s.project_front().unwrap();
    let front = s.front_index();
    assert!(matches!(
        s.process_view(front),
        Err(PipelineError::Stage {
            source: StageError::Order(_),
            ..
        })
    ));
}

#[test]
fn debug_dumps_cover_each_stage() {
    let f = fixture(FixtureKind::Sphere, |c| {
        small(c);
        c.debug_dumps = true;
    });
    let report = pipeline::run(f.config.clone()).unwrap();
    let dbg = f.out().join("debug");
    for name in ["depth_1.png", "cond_depth_1.png", "similarity_1.png", "mask_1.png"] {
        assert!(dbg.join(name).exists(), "{name}");
    }
    for i in [0usize, 2, 9] {
        for stem in ["mask", "render", "seam_band"] {
            let p = dbg.join(format!("{stem}_{i}.png"));
            assert!(p.exists(), "{}", p.display());
        }
    }
    let banded: Vec<usize> = report.views.iter().filter(|v| v.band_pixels > 0).map(|v| v.index).collect();
    assert!(!banded.is_empty());
    for i in banded {
        assert!(dbg.join(format!("render_smoothed_{i}.png")).exists(), "view {i}");
    }
}

#[test]
fn index_seam_rule_also_completes() {
    let f = fixture(FixtureKind::Sphere, |c| {
        small(c);
        c.seam_rule = SeamRule::Index;
    });
    let report = pipeline::run(f.config.clone()).unwrap();
    assert!(report.final_coverage >= 0.95);
}

#[test]
fn seam_inpainting_through_the_mock_backend() {
    let f = fixture(FixtureKind::Sphere, |c| {
        small(c);
        c.seam_inpaint = true;
    });
    let report = pipeline::run(f.config.clone()).unwrap();
    assert!(report.views.iter().any(|v| v.band_pixels > 0));
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
}

#[test]
fn missing_inputs_are_config_or_stage_errors() {
    let f = fixture(FixtureKind::Sphere, small);
    let mut cfg = f.config.clone();
    cfg.mesh = f.dir.path().join("absent.obj");
    let err = pipeline::run(cfg).err().unwrap();
    assert!(matches!(err, PipelineError::Stage { stage: "load_mesh", .. }), "{err:?}");

    let mut cfg = f.config.clone();
    cfg.update_margin = 1.5;
    assert!(pipeline::run(cfg).err().unwrap().is_config());
}

#[test]
fn final_texture_scores_against_ground_truth() {
    let f = fixture(FixtureKind::Sphere, small);
    pipeline::run(f.config.clone()).unwrap();
    let out = mesh::load_mesh(f.out().join("mesh.obj")).unwrap();
    let texture = image::open(f.out().join("texture.png")).unwrap().to_rgba8();
    let layout = UvLayout::build(&out, texture.width(), texture.height()).unwrap();
    let atlas = TextureAtlas::from_texture(std::sync::Arc::new(layout), texture).unwrap();

    let gt = mesh::naive_unwrap(&fixtures::sphere(), 256);
    let gt_atlas = mesh::bake_vertex_colors(&gt, 256).unwrap();
    let refs: metrics::References = EvalView::ALL
        .iter()
        .map(|&v| {
            let cams = metrics::eval_camera(&gt, v, (128, 128)).unwrap();
            (v, render_color(&gt, &gt_atlas, &cams).unwrap().image)
        })
        .collect();
    let table = metrics::eval_views(&out, &atlas, &refs).unwrap();
    assert_eq!(table.rows.len(), 4);
    for r in &table.rows {
        assert!(matches!(r.psnr, Psnr::Db(d) if d.is_finite() && d > 0.0), "{:?}", r);
        assert!(r.ssim > -1.0 && r.ssim < 1.0);
    }
    // The front view carries the photograph.
    let front = &table.rows[0];
    assert!(front.psnr.db() > 30.0, "{:?}", front);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 5);
}
