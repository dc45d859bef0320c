//! `ultraman`: run the texturing pipeline, inspect prompts, score results,
//! check a generation service, and write synthetic fixtures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use ultraman_core::fixtures::{self, FixtureKind};
use ultraman_core::genbackend::{run_conformance, RetryPolicy};
use ultraman_core::metrics::{self, EvalView, MetricError};
use ultraman_core::pipeline::{self, BackendConfig, PipelineError, RunConfig};
use ultraman_core::prompts::{self, PromptBundle};
use ultraman_core::views::default_view_set;
use ultraman_core::{mesh, TextureAtlas, UvLayout};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "ultraman", version, about = "Progressive multi-view texturing of human meshes")]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sphere,
    Humanoid,
    Dense,
}

impl From<Kind> for FixtureKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Sphere => FixtureKind::Sphere,
            Kind::Humanoid => FixtureKind::Humanoid,
            Kind::Dense => FixtureKind::Dense,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Texture a mesh from a run config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue after the checkpoint written for this view index.
        #[arg(long)]
        resume_from: Option<usize>,
        /// Override the config's backend.
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// Service URL for the remote backend.
        #[arg(long)]
        backend_url: Option<String>,
    },
    /// Prompt tooling.
    Prompts {
        #[command(subcommand)]
        command: PromptsCommand,
    },
    /// Score a textured mesh against reference renders.
    Eval {
        /// Mesh with texture coordinates, e.g. a run's `mesh.obj`.
        #[arg(long)]
        mesh: PathBuf,
        /// Texture image, e.g. a run's `texture.png`.
        #[arg(long)]
        atlas: PathBuf,
        /// Directory holding front.png, back.png, left.png and right.png.
        #[arg(long)]
        refs: PathBuf,
        /// CSV output; a JSON table is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a generation service against the wire protocol.
    Conformance {
        #[arg(long)]
        url: String,
    },
    /// Write a synthetic run directory.
    Fixture {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        render_resolution: Option<u32>,
        #[arg(long)]
        atlas_resolution: Option<u32>,
        /// Also write ground-truth reference renders under `<out>/refs`.
        #[arg(long)]
        refs: bool,
    },
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Print the question set an answers file must cover.
    Questions,
    /// Print the prompt for every view.
    Compose {
        #[arg(long)]
        answers: PathBuf,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn stage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_STAGE,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::config(e.to_string())
        } else {
            Failure::stage(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            resume_from,
            backend,
            backend_url,
        } => run(&config, resume_from, backend, backend_url),
        Command::Prompts { command } => match command {
            PromptsCommand::Questions => {
                println!("{}", serde_json::to_string_pretty(&prompts::questions_json()).expect("json"));
                Ok(())
            }
            PromptsCommand::Compose { answers } => {
                let bundle = PromptBundle::load(&answers).map_err(|e| Failure::config(e.to_string()))?;
                for v in default_view_set(1.0) {
                    println!("{}\t{}", v.index, prompts::compose(&bundle, &v));
                }
                Ok(())
            }
        },
        Command::Eval { mesh, atlas, refs, out } => eval(&mesh, &atlas, &refs, &out),
        Command::Conformance { url } => {
            let report = run_conformance(&url);
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::stage(format!("{} of {} checks failed", report.failures(), report.checks.len())))
            }
        }
        Command::Fixture {
            kind,
            out,
            render_resolution,
            atlas_resolution,
            refs,
        } => fixture(kind.into(), &out, render_resolution, atlas_resolution, refs),
    }
}

fn run(
    config: &Path,
    resume_from: Option<usize>,
    backend: Option<BackendKind>,
    backend_url: Option<String>,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    match backend {
        Some(BackendKind::Mock) => cfg.backend = BackendConfig::Mock,
        Some(BackendKind::Remote) => {
            let retry = match &cfg.backend {
                BackendConfig::Remote { retry, .. } => *retry,
                BackendConfig::Mock => RetryPolicy::default(),
            };
            let base_url = backend_url.clone().or(match &cfg.backend {
                BackendConfig::Remote { base_url, .. } => base_url.clone(),
                BackendConfig::Mock => None,
            });
            cfg.backend = BackendConfig::Remote { base_url, retry };
        }
        None => {}
    }
    if let (Some(url), BackendConfig::Remote { base_url, .. }) = (backend_url, &mut cfg.backend) {
        *base_url = Some(url);
    }
    let out = cfg.output_dir.clone();
    let report = match resume_from {
        Some(from) => pipeline::resume(cfg, from)?,
        None => pipeline::run(cfg)?,
    };
    println!(
        "textured {} faces over {} views: coverage {:.4}, {:.1}s",
        report.faces,
        report.views.len(),
        report.final_coverage,
        report.timings.total_s
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn metric_failure(e: MetricError) -> Failure {
    match e {
        MetricError::MissingReference(_) | MetricError::EmptyReference(_) | MetricError::Io { .. } => {
            Failure::config(e.to_string())
        }
        other => Failure::stage(other.to_string()),
    }
}

fn eval(mesh_path: &Path, atlas_path: &Path, refs: &Path, out: &Path) -> Result<(), Failure> {
    let m = mesh::load_mesh(mesh_path).map_err(|e| Failure::config(e.to_string()))?;
    if m.uvs.is_none() {
        return Err(Failure::config(format!("{} has no texture coordinates", mesh_path.display())));
    }
    let texture = image::open(atlas_path)
        .map_err(|e| Failure::config(format!("{}: {e}", atlas_path.display())))?
        .to_rgba8();
    let layout = UvLayout::build(&m, texture.width(), texture.height()).map_err(|e| Failure::stage(e.to_string()))?;
    let atlas = TextureAtlas::from_texture(Arc::new(layout), texture).map_err(|e| Failure::stage(e.to_string()))?;
    let references = metrics::load_references(refs).map_err(metric_failure)?;
    let table = metrics::eval_views(&m, &atlas, &references).map_err(metric_failure)?;
    let write = |path: &Path, body: &[u8]| {
        std::fs::write(path, body).map_err(|e| Failure::stage(format!("{}: {e}", path.display())))
    };
    let csv = table.to_csv();
    write(out, csv.as_bytes())?;
    write(
        &out.with_extension("json"),
        &serde_json::to_vec_pretty(&table).expect("serializable"),
    )?;
    print!("{csv}");
    Ok(())
}

fn fixture(
    kind: FixtureKind,
    out: &Path,
    render_resolution: Option<u32>,
    atlas_resolution: Option<u32>,
    refs: bool,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::default();
    if let Some(r) = render_resolution {
        cfg.render_resolution = r;
    }
    if let Some(a) = atlas_resolution {
        cfg.atlas_resolution = a;
    }
    cfg.validate()?;
    let paths = fixtures::write_fixture(kind, out, &cfg)?;
    if refs {
        let gt = kind.mesh();
        let dir = paths.dir.join("refs");
        std::fs::create_dir_all(&dir).map_err(|e| Failure::stage(format!("{}: {e}", dir.display())))?;
        let size = (cfg.render_resolution, cfg.render_resolution);
        for view in EvalView::ALL {
            let cams = metrics::eval_camera(&gt, view, size).map_err(|e| Failure::stage(e.to_string()))?;
            let path = dir.join(view.file_name());
            fixtures::render_vertex_colors(&gt, &cams)
                .save(&path)
                .map_err(|e| Failure::stage(format!("{}: {e}", path.display())))?;
        }
    }
    println!("{}", paths.config.display());
    Ok(())
}
