//! `prt` — bake transfer datasets, train transfer networks, render scenes,
//! compare images, partition large scenes, and export GLSL evaluators.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prt_core::bake::{bake_dataset, load_dataset, save_dataset, BakeConfig};
use prt_core::error::{Error, Result};
use prt_core::image::{load_radiance_image, tonemap_write};
use prt_core::math::vec3;
use prt_core::metrics::compare_images;
use prt_core::mlp::{load_model, save_model, MlpConfig};
use prt_core::partition::{load_clustered, save_clustered, train_clustered, PartitionGrid};
use prt_core::render::{bake_vertex_transfers, shade, trace_gbuffer, Material, TransferSource};
use prt_core::scene::load_scene;
use prt_core::shader::{emit_shader, EmitOptions};
use prt_core::train::{train, TrainConfig, TrainReport};
use prt_core::triple::{
    default_tau_quadrature, load_tau, save_tau, triple_product_tensor, TripleProductTensor,
};
use prt_core::{Aabb, Surface};

#[derive(Parser)]
#[command(name = "prt", version, about = "Spherical-harmonic radiance transfer toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bake a transfer-vector training set from a scene's surface.
    Bake(BakeArgs),
    /// Fit a transfer network to a baked dataset.
    Train(TrainArgs),
    /// Render a scene with a trained model or a reference transfer source.
    Render(RenderArgs),
    /// Compare two linear images and print a metrics report as JSON.
    Compare(CompareArgs),
    /// Split a dataset over a spatial grid and train one model per cluster.
    Partition(PartitionArgs),
    /// Emit a GLSL evaluator for a trained model.
    ExportShader(ExportShaderArgs),
    /// Precompute the SH triple-product tensor cache.
    Tau(TauArgs),
}

#[derive(Args)]
struct BakeArgs {
    /// Scene description file (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Number of surface points to bake.
    #[arg(long)]
    count: usize,
    /// Occlusion rays per point.
    #[arg(long, default_value_t = 4096)]
    rays: usize,
    /// SH order of the baked transfer vectors.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Marching-cubes resolution used to sample SDF surfaces.
    #[arg(long, default_value_t = 128)]
    grid_res: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (.nprt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Baked dataset (.nprt).
    #[arg(long)]
    dataset: PathBuf,
    /// Hidden layer width.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 8192)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Fraction of the dataset held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model path (.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceKind {
    /// Fresh Monte Carlo transfer bake at every fragment.
    Bruteforce,
    /// Per-vertex baked transfer interpolated over mesh triangles.
    Vertex,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description file (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Trained model; defaults to the scene file's model entry.
    #[arg(long, conflicts_with_all = ["reference", "clustered"])]
    model: Option<PathBuf>,
    /// Clustered model produced by `prt partition`.
    #[arg(long, conflicts_with = "reference")]
    clustered: Option<PathBuf>,
    /// Render a reference transfer source instead of a learnt model.
    #[arg(long, value_enum)]
    reference: Option<ReferenceKind>,
    /// Square output resolution overriding the scene camera.
    #[arg(long)]
    size: Option<usize>,
    /// Occlusion rays per point for reference transfer sources.
    #[arg(long, default_value_t = 4096)]
    rays: usize,
    /// SH order for reference transfer sources.
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Triple-product tensor cache, built on demand when absent or stale.
    #[arg(long)]
    tau_cache: Option<PathBuf>,
    /// Output image: .png or .ppm (tone mapped), .pfm (linear radiance).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    exposure: f32,
    #[arg(long, default_value_t = 2.2)]
    gamma: f32,
}

#[derive(Args)]
struct CompareArgs {
    /// First image (.pfm or .hdr).
    #[arg(long)]
    a: PathBuf,
    /// Second image (.pfm or .hdr).
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    /// Baked dataset (.nprt).
    #[arg(long)]
    dataset: PathBuf,
    /// Grid dimensions as NXxNYxNZ, e.g. 3x2x2.
    #[arg(long, value_parser = parse_grid_dims)]
    grid: [usize; 3],
    /// Cell overlap as a fraction of the cell extent, in [0, 0.5).
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Variance threshold under which adjacent cells merge.
    #[arg(long)]
    theta: f64,
    /// Stop merging at this many clusters.
    #[arg(long, default_value_t = 1)]
    min_clusters: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 8192)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output clustered model path (.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportShaderArgs {
    /// Trained model (.json).
    #[arg(long)]
    model: PathBuf,
    /// Output GLSL fragment source.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 330)]
    glsl_version: u32,
}

#[derive(Args)]
struct TauArgs {
    /// SH order of the tensor.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Output cache path (.tpt).
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected NXxNYxNZ, got '{s}'"));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p.parse().map_err(|_| format!("bad grid dimension '{p}'"))?;
    }
    Ok(dims)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful displays, not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Bake(a) => run_bake(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Render(a) => run_render(a),
        Cmd::Compare(a) => run_compare(a),
        Cmd::Partition(a) => run_partition(a),
        Cmd::ExportShader(a) => run_export_shader(a),
        Cmd::Tau(a) => run_tau(a),
    }
}

fn run_bake(args: BakeArgs) -> Result<()> {
    let (cfg, base) = load_scene(&args.scene)?;
    let surface = cfg.load_surface(&base)?;
    let scene_id = args
        .scene
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    let bake_cfg = BakeConfig {
        n_rays: args.rays,
        order: args.order,
        seed: args.seed,
        mc_resolution: args.grid_res,
        ..BakeConfig::default()
    };
    let (dataset, stats) = bake_dataset(&surface, &scene_id, args.count, &bake_cfg)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "baked {} of {} requested points ({} discarded) -> {}",
        stats.baked,
        stats.requested,
        stats.discarded,
        args.out.display()
    );
    Ok(())
}

fn final_loss_line(report: &TrainReport) -> String {
    match report.epochs.last() {
        Some(e) => match e.val_l1 {
            Some(v) => format!("final train L1 {:.6}, val L1 {:.6}", e.train_l1, v),
            None => format!("final train L1 {:.6}", e.train_l1),
        },
        None => "no epochs run".to_string(),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let mlp_cfg = MlpConfig { width: args.width, depth: args.depth, ..MlpConfig::default() };
    let train_cfg = TrainConfig {
        batch_size: args.batch,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        val_fraction: args.val_fraction,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let (model, report) = train(&dataset, &mlp_cfg, &train_cfg)?;
    save_model(&model, &args.out)?;
    println!(
        "trained on {} points ({} held out): {} -> {}",
        report.train_count,
        report.val_count,
        final_loss_line(&report),
        args.out.display()
    );
    Ok(())
}

/// Load the tensor cache when it matches the requested order, otherwise
/// build the tensor (and refresh the cache if a path was given).
fn obtain_tau(order: usize, cache: Option<&Path>) -> Result<TripleProductTensor> {
    if let Some(path) = cache {
        if path.exists() {
            let tau = load_tau(path)?;
            if tau.order == order {
                return Ok(tau);
            }
            eprintln!(
                "tau cache {} holds order {}, rebuilding at order {order}",
                path.display(),
                tau.order
            );
        }
    }
    let tau = triple_product_tensor(order, default_tau_quadrature(order), 1e-6)?;
    if let Some(path) = cache {
        save_tau(&tau, path)?;
    }
    Ok(tau)
}

fn run_render(args: RenderArgs) -> Result<()> {
    let (cfg, base) = load_scene(&args.scene)?;
    let surface = cfg.load_surface(&base)?;
    let mut camera = cfg.camera();
    if let Some(size) = args.size {
        camera.width = size;
        camera.height = size;
    }
    let material = cfg.material()?;
    let gb = trace_gbuffer(&surface, &camera)?;

    let model_storage;
    let clustered_storage;
    let vertex_storage;
    let source = if let Some(kind) = args.reference {
        match kind {
            ReferenceKind::Bruteforce => TransferSource::BruteForce {
                surface: &surface,
                n_rays: args.rays,
                seed: args.seed,
                order: args.order,
            },
            ReferenceKind::Vertex => {
                let Surface::Mesh { mesh, .. } = &surface else {
                    return Err(Error::input(
                        "vertex-baked reference needs a mesh scene (SDF surfaces have no vertices)",
                    ));
                };
                vertex_storage =
                    bake_vertex_transfers(&surface, mesh, args.rays, args.order, args.seed)?;
                TransferSource::VertexBaked { mesh, transfers: &vertex_storage }
            }
        }
    } else if let Some(path) = &args.clustered {
        clustered_storage = load_clustered(path)?;
        TransferSource::Clustered(&clustered_storage)
    } else {
        let path = match &args.model {
            Some(p) => p.clone(),
            None => cfg.model_path(&base).ok_or_else(|| {
                Error::input(
                    "no transfer source: pass --model/--clustered/--reference or set a model in the scene file",
                )
            })?,
        };
        model_storage = load_model(&path)?;
        TransferSource::Mlp(&model_storage)
    };

    let light = cfg.build_light(&base, source.order())?;
    let tau = match material {
        Material::GlossyPhong { .. } => {
            Some(obtain_tau(source.order(), args.tau_cache.as_deref())?)
        }
        Material::Diffuse { .. } => None,
    };
    let img = shade(&gb, &source, &light, &material, tau.as_ref())?;
    tonemap_write(&img, &args.out, args.exposure, args.gamma)?;
    println!(
        "rendered {}x{} ({} surface pixels) -> {}",
        camera.width,
        camera.height,
        gb.hit_count(),
        args.out.display()
    );
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let a = load_radiance_image(&args.a)?;
    let b = load_radiance_image(&args.b)?;
    let report = compare_images(&a, &b)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_partition(args: PartitionArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    // Grid over the dataset's normalization cube: the axis-aligned cube the
    // bake derived from the scene bounds, so every surface point routes.
    let h = dataset.norm.half_extent;
    let aabb = Aabb::new(
        dataset.norm.center - vec3(h, h, h),
        dataset.norm.center + vec3(h, h, h),
    );
    let grid = PartitionGrid::new(aabb, args.grid, args.delta)?;
    let mlp_cfg = MlpConfig { width: args.width, depth: args.depth, ..MlpConfig::default() };
    let train_cfg = TrainConfig {
        batch_size: args.batch,
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        val_fraction: args.val_fraction,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let out = train_clustered(
        &dataset,
        &grid,
        args.theta,
        args.min_clusters,
        &mlp_cfg,
        &train_cfg,
    )?;
    save_clustered(&out.model, &args.out)?;
    println!(
        "{} cells -> {} clusters -> {}",
        grid.n_cells(),
        out.model.models.len(),
        args.out.display()
    );
    for (i, report) in out.reports.iter().enumerate() {
        println!(
            "  cluster {i}: {} train / {} val points, {}",
            report.train_count,
            report.val_count,
            final_loss_line(report)
        );
    }
    Ok(())
}

fn run_export_shader(args: ExportShaderArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let text = emit_shader(&model, &EmitOptions { glsl_version: args.glsl_version })?;
    std::fs::write(&args.out, &text).map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {} ({} bytes)", args.out.display(), text.len());
    Ok(())
}

fn run_tau(args: TauArgs) -> Result<()> {
    let tau = triple_product_tensor(args.order, default_tau_quadrature(args.order), 1e-6)?;
    save_tau(&tau, &args.out)?;
    println!(
        "order {} tensor, {} canonical entries -> {}",
        args.order,
        tau.n_entries(),
        args.out.display()
    );
    Ok(())
}
