//! Command-line surface for the vehicle insertion pipeline. Every subcommand
//! wraps one library operation with file I/O; `pipeline` runs the whole chain
//! from a config file.
//!
//! Exit codes: 0 success, 1 stage/computation failure, 2 usage or validation
//! errors (bad flags, unreadable or malformed inputs).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carforge::assets::{filter_assets, load_embeddings, load_library, read_mesh};
use carforge::error::{Error, Result};
use carforge::image_io;
use carforge::img::{ImageGray, ImageRgb};
use carforge::lighting::{
    compose_envmap, ldr_to_hdr_sky, read_envmap, read_fisheye, saturation_fraction,
    stitch_panorama, write_envmap, SkyModelParams,
};
use carforge::matgraph::{
    builtin_prior_by_name, graph_to_string, read_graph, write_graph, MaterialGraph, PRIOR_NAMES,
};
use carforge::matopt::{gradient_check, optimize_materials, LossWeights, OptimizeConfig};
use carforge::math::{vec3, Rigid, Vec3};
use carforge::pipeline::{load_config, run_pipeline, CameraSpec, PoseSpec};
use carforge::render::{
    composite, rasterize, render_shadow_plane, sample_textures, shade, CameraModel,
    EnvironmentMap, RenderBuffers,
};
use carforge::retrieval::{
    assign_car_body, builtin_features, classify_materials, read_feature_map, read_mask,
    retrieve_cad, retrieve_material_prior, ClassifyOptions, ComponentLabel, FeatureMap,
    MaterialIndexMap, PartAssignment, SegmentationMask,
};
use carforge::TextureSet;

#[derive(Parser)]
#[command(name = "carforge", about = "Retrieval-driven vehicle insertion", version)]
struct Cli {
    /// Size of the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank library assets against a query embedding.
    Retrieve(RetrieveArgs),
    /// Pick the candidate feature map closest to a reference.
    MatchPose(MatchPoseArgs),
    /// Label mesh material indices from segmentation masks.
    Assign(AssignArgs),
    /// Fit material graph parameters against a reference photo.
    Optimize(OptimizeArgs),
    /// Stitch a fisheye pair into an HDR environment map.
    Envmap(EnvmapArgs),
    /// Render a posed mesh with material graphs into an RGBA image.
    Render(RenderArgs),
    /// Render and composite a posed mesh over a background photo.
    Insert(InsertArgs),
    /// Run the full pipeline from a config file.
    Pipeline(PipelineArgs),
    /// Verify analytic material gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the built-in material prior graphs as JSON files.
    ExportPriors(ExportPriorsArgs),
}

#[derive(Args)]
struct RetrieveArgs {
    /// Query embedding binary (little-endian f32).
    #[arg(long)]
    query: PathBuf,
    /// Embedding index sidecar naming the vectors in the binary.
    #[arg(long)]
    index: PathBuf,
    /// CAD library root (contains manifest.json).
    #[arg(long)]
    library: PathBuf,
    /// Which embedding in the binary to use (default: the only/first one).
    #[arg(long)]
    id: Option<String>,
    /// How many ranked ids to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Rank the whole library instead of only quality-filtered assets.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct MatchPoseArgs {
    /// Reference feature map (.fmap) or image (features computed on the fly).
    #[arg(long)]
    reference: PathBuf,
    /// Candidate feature maps or images, in grid order.
    #[arg(required = true)]
    candidates: Vec<PathBuf>,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Camera spec JSON (intrinsics + pose).
    #[arg(long)]
    camera: PathBuf,
    /// Model pose JSON (default: identity).
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Component mask PNGs (label/confidence in the sidecar JSON).
    #[arg(long = "mask", required = true)]
    masks: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Accept an index when it clears the threshold in any view.
    #[arg(long)]
    union_views: bool,
    /// Keep only masks containing this pixel, e.g. `--point 120,80`.
    #[arg(long)]
    point: Option<String>,
    /// Output path for the assignment JSON (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Part assignment JSON produced by `assign`.
    #[arg(long)]
    assignment: PathBuf,
    /// Reference photo (PNG).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long = "mask", required = true)]
    masks: Vec<PathBuf>,
    /// Environment map (.pfm with sidecar JSON).
    #[arg(long)]
    env: PathBuf,
    /// Output directory for fitted graphs and the loss report.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    texture_size: usize,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    /// Start from the unpainted body prior.
    #[arg(long)]
    unpainted: bool,
    #[arg(long, default_value_t = 0.1)]
    w_stat: f64,
    #[arg(long, default_value_t = 1.0)]
    w_vgg: f64,
    #[arg(long, default_value_t = 1.0)]
    w_rgb: f64,
}

#[derive(Args)]
struct EnvmapArgs {
    /// Left fisheye capture (PNG with sidecar JSON).
    #[arg(long)]
    left: PathBuf,
    /// Right fisheye capture.
    #[arg(long)]
    right: PathBuf,
    /// Output environment map (.pfm).
    #[arg(long)]
    out: PathBuf,
    /// Panorama height; the map is 2x this wide.
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 2.2)]
    gamma: f64,
    #[arg(long, default_value_t = 99.5)]
    sun_percentile: f64,
    #[arg(long, default_value_t = 50.0)]
    sun_boost: f64,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output RGBA PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InsertArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Background photo matching the camera resolution.
    #[arg(long)]
    background: PathBuf,
    /// Output composite PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    exposure: f64,
    #[arg(long, default_value_t = 2.2)]
    gamma: f64,
    /// Skip the ground shadow pass.
    #[arg(long)]
    no_shadow: bool,
}

/// Mesh + camera + materials + lighting shared by `render` and `insert`.
#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Material graph JSON, either `PATH` (all materials) or `INDEX=PATH`.
    /// Unmapped mesh materials fall back to the first graph given.
    #[arg(long = "graph", required = true)]
    graphs: Vec<String>,
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 64)]
    texture_size: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config JSON; relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Prior name (window|wheel|body_painted|body_unpainted) or a graph JSON
    /// path. Default: every built-in prior.
    #[arg(long = "graph")]
    graphs: Vec<String>,
    #[arg(long, default_value_t = 8)]
    texture_size: usize,
    #[arg(long, default_value_t = 16)]
    image_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Args)]
struct ExportPriorsArgs {
    /// Output directory; one `<name>.json` per prior.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        if let Err(e) = pool {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::MatchPose(a) => cmd_match_pose(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Envmap(a) => cmd_envmap(a),
        Command::Render(a) => cmd_render(a),
        Command::Insert(a) => cmd_insert(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportPriors(a) => cmd_export_priors(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Usage/validation problems exit 2, everything that failed mid-computation
/// exits 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Invalid(_) => 2,
        _ => 1,
    }
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<u8> {
    let embeddings = load_embeddings(&a.query, &a.index)?;
    let query = match &a.id {
        Some(id) => embeddings
            .get(id)
            .ok_or_else(|| Error::Invalid(format!("no embedding named `{id}` in the index")))?,
        None => embeddings
            .values()
            .next()
            .ok_or_else(|| Error::Empty("query index names no embeddings".into()))?,
    };
    let library = load_library(&a.library)?;
    let library = if a.no_filter { library } else { filter_assets(&library) };
    for (id, score) in retrieve_cad(query, &library, a.top)? {
        println!("{id} {score:.6}");
    }
    Ok(0)
}

/// Feature maps load as-is; images get features computed on the fly.
fn load_features(path: &Path) -> Result<FeatureMap> {
    if path.extension().is_some_and(|e| e == "fmap") {
        read_feature_map(path)
    } else {
        Ok(builtin_features(&image_io::read_png(path)?))
    }
}

fn cmd_match_pose(a: MatchPoseArgs) -> Result<u8> {
    let reference = load_features(&a.reference)?;
    let candidates = a
        .candidates
        .iter()
        .map(|p| load_features(p))
        .collect::<Result<Vec<_>>>()?;
    let view = carforge::retrieval::match_pose(&reference, &candidates)?;
    println!("{view} {}", a.candidates[view].display());
    Ok(0)
}

fn read_pose(path: Option<&PathBuf>) -> Result<Rigid> {
    match path {
        None => Ok(Rigid::IDENTITY),
        Some(p) => Ok(read_json::<PoseSpec>(p)?.to_rigid()),
    }
}

fn read_camera(path: &Path) -> Result<CameraModel> {
    let camera = read_json::<CameraSpec>(path)?.to_camera();
    camera.validate()?;
    Ok(camera)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, "json", e.to_string()))
}

fn index_map_of(buffers: &RenderBuffers, view_index: usize) -> MaterialIndexMap {
    let mut map = MaterialIndexMap::new(buffers.width, buffers.height, view_index);
    for (i, &cov) in buffers.coverage.iter().enumerate() {
        if cov {
            map.indices[i] = buffers.material[i];
        }
    }
    map
}

fn read_masks(paths: &[PathBuf], camera: &CameraModel) -> Result<Vec<SegmentationMask>> {
    let masks = paths.iter().map(|p| read_mask(p)).collect::<Result<Vec<_>>>()?;
    for mask in &masks {
        if mask.width != camera.width || mask.height != camera.height {
            return Err(Error::Dimension(format!(
                "mask `{}` is {}x{} but the camera is {}x{}",
                mask.label, mask.width, mask.height, camera.width, camera.height
            )));
        }
    }
    Ok(masks)
}

fn cmd_assign(a: AssignArgs) -> Result<u8> {
    let mesh = read_mesh(&a.mesh)?;
    let camera = read_camera(&a.camera)?;
    let pose = read_pose(a.pose.as_ref())?;
    let mut masks = read_masks(&a.masks, &camera)?;
    if let Some(point) = &a.point {
        let (x, y) = parse_point(point)?;
        if x >= camera.width || y >= camera.height {
            return Err(Error::Invalid(format!(
                "point {x},{y} outside the {}x{} image",
                camera.width, camera.height
            )));
        }
        masks.retain(|m| m.get(x, y));
        if masks.is_empty() {
            return Err(Error::Empty(format!("no mask contains the point {x},{y}")));
        }
    }
    let buffers = rasterize(&mesh, &pose, &camera)?;
    let index_map = index_map_of(&buffers, masks[0].view_index);
    let options = ClassifyOptions {
        union_views: a.union_views,
        ..ClassifyOptions::default()
    };
    let assignment = classify_materials(std::slice::from_ref(&index_map), &masks, a.iou, options)?;
    let assignment = assign_car_body(&assignment, &index_map);
    let text = serde_json::to_string_pretty(&assignment)
        .map_err(|e| Error::parse(Path::new("assignment"), "json", e.to_string()))?;
    match &a.out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?,
        None => println!("{text}"),
    }
    Ok(0)
}

fn parse_point(text: &str) -> Result<(usize, usize)> {
    let parse = || -> Option<(usize, usize)> {
        let (x, y) = text.split_once(',')?;
        Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
    };
    parse().ok_or_else(|| Error::Invalid(format!("`{text}` is not a pixel like `120,80`")))
}

fn cmd_optimize(a: OptimizeArgs) -> Result<u8> {
    let mesh = read_mesh(&a.mesh)?;
    let camera = read_camera(&a.camera)?;
    let pose = read_pose(a.pose.as_ref())?;
    let assignment: PartAssignment = read_json(&a.assignment)?;
    let reference = image_io::read_png(&a.reference)?;
    let masks = read_masks(&a.masks, &camera)?;
    let env = read_envmap(&a.env)?;
    let weights = LossWeights {
        stat: a.w_stat,
        vgg: a.w_vgg,
        rgb: a.w_rgb,
    };
    let config = OptimizeConfig {
        epochs: a.epochs,
        step: a.step,
        texture_size: a.texture_size,
        ..OptimizeConfig::default()
    };
    let mut priors: BTreeMap<ComponentLabel, MaterialGraph> = BTreeMap::new();
    for label in [
        ComponentLabel::Body,
        ComponentLabel::Windows,
        ComponentLabel::Wheels,
    ] {
        if !assignment.indices_with(label).is_empty() {
            priors.insert(label, retrieve_material_prior(label.name(), !a.unpainted)?);
        }
    }
    if priors.is_empty() {
        return Err(Error::Empty(
            "the assignment labels no component; nothing to optimize".into(),
        ));
    }
    let (graphs, report) = optimize_materials(
        &mesh, &pose, &camera, &assignment, &priors, &reference, &masks, &env, &weights, &config,
    )?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (label, graph) in &graphs {
        write_graph(&a.out.join(format!("graph_{}.json", label.name())), graph)?;
    }
    let losses_path = a.out.join("losses.json");
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::parse(&losses_path, "json", e.to_string()))?;
    std::fs::write(&losses_path, text + "\n").map_err(|e| Error::io(&losses_path, e))?;
    if let Some(last) = report.epochs.last() {
        println!("epochs {} final_total {:.6}", report.epochs.len(), last.total);
    }
    Ok(0)
}

fn cmd_envmap(a: EnvmapArgs) -> Result<u8> {
    let left = read_fisheye(&a.left)?;
    let right = read_fisheye(&a.right)?;
    let pano = stitch_panorama(&left, &right, a.height)?;
    let params = SkyModelParams {
        gamma: a.gamma,
        sun_percentile: a.sun_percentile,
        sun_boost: a.sun_boost,
        ..SkyModelParams::default()
    };
    let sky = ldr_to_hdr_sky(&pano, &params)?;
    let (env, warnings) = compose_envmap(&sky, &pano, None, &params)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    write_envmap(&a.out, &env)?;
    println!("saturation {:.6}", saturation_fraction(&pano, 0.99));
    Ok(0)
}

/// Shared render path: rasterize the posed mesh, evaluate and bind the
/// material graphs, shade against the environment.
fn render_scene(
    a: &SceneArgs,
) -> Result<(carforge::TriangleMesh, Rigid, CameraModel, EnvironmentMap, ImageRgb, Vec<f64>)> {
    let mesh = read_mesh(&a.mesh)?;
    let camera = read_camera(&a.camera)?;
    let pose = read_pose(a.pose.as_ref())?;
    let env = read_envmap(&a.env)?;
    let mut by_index: BTreeMap<u32, MaterialGraph> = BTreeMap::new();
    let mut default = None;
    for spec in &a.graphs {
        match spec.split_once('=') {
            Some((idx, path)) => {
                let idx: u32 = idx.trim().parse().map_err(|_| {
                    Error::Invalid(format!("`{spec}` is not `INDEX=PATH` or `PATH`"))
                })?;
                by_index.insert(idx, read_graph(Path::new(path))?);
            }
            None => {
                let graph = read_graph(Path::new(spec))?;
                default.get_or_insert(graph);
            }
        }
    }
    let default = default.or_else(|| by_index.values().next().cloned());
    let mut textures: BTreeMap<u32, TextureSet> = BTreeMap::new();
    for idx in mesh.material_indices() {
        let graph = by_index.get(&idx).or(default.as_ref()).ok_or_else(|| {
            Error::Invalid(format!("no graph mapped for material index {idx}"))
        })?;
        let (tex, _) = graph.evaluate(a.texture_size, a.texture_size)?;
        textures.insert(idx, tex);
    }
    let buffers = rasterize(&mesh, &pose, &camera)?;
    let (grid, _) = sample_textures(&buffers, &textures)?;
    let (image, alpha) = shade(&grid, &env, &camera)?;
    Ok((mesh, pose, camera, env, image, alpha))
}

fn cmd_render(a: RenderArgs) -> Result<u8> {
    let (_, _, camera, _, image, alpha) = render_scene(&a.scene)?;
    let mut alpha_img = ImageGray::new(camera.width, camera.height);
    alpha_img.data.copy_from_slice(&alpha);
    image_io::write_png_rgba(&a.out, &image, &alpha_img)?;
    Ok(0)
}

fn cmd_insert(a: InsertArgs) -> Result<u8> {
    let (mesh, pose, camera, env, foreground, alpha) = render_scene(&a.scene)?;
    let background = image_io::read_png(&a.background)?;
    if background.width != camera.width || background.height != camera.height {
        return Err(Error::Dimension(format!(
            "background {}x{} vs camera {}x{}",
            background.width, background.height, camera.width, camera.height
        )));
    }
    let shadow = if a.no_shadow {
        let mut s = ImageGray::new(camera.width, camera.height);
        s.data.fill(1.0);
        s
    } else {
        render_shadow_plane(
            &mesh,
            &pose,
            ground_point(&mesh, &pose),
            vec3(0.0, 0.0, 1.0),
            &env.downsampled(16),
            &camera,
        )?
    };
    let out = composite(&foreground, &alpha, &shadow, &background, a.exposure, a.gamma)?;
    image_io::write_png(&a.out, &out)?;
    Ok(0)
}

/// Shadow plane anchor: the lowest point of the posed mesh.
fn ground_point(mesh: &carforge::TriangleMesh, pose: &Rigid) -> Vec3 {
    let min_z = mesh
        .vertices
        .iter()
        .map(|&v| pose.apply(v).z)
        .fold(f64::INFINITY, f64::min);
    vec3(pose.translation.x, pose.translation.y, min_z)
}

fn cmd_pipeline(a: PipelineArgs) -> Result<u8> {
    let config = load_config(&a.config)?;
    let manifest = run_pipeline(&config)?;
    println!(
        "asset {} frames {}",
        manifest.chosen_asset.as_deref().unwrap_or("-"),
        manifest.frames.len()
    );
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<u8> {
    let targets: Vec<String> = if a.graphs.is_empty() {
        PRIOR_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.graphs.clone()
    };
    let mut failed = false;
    for target in &targets {
        let graph = match builtin_prior_by_name(target) {
            Some(g) => g,
            None => read_graph(Path::new(target))?,
        };
        let report = gradient_check(&graph, a.texture_size, a.image_size)?;
        let ok = report.max_rel_error <= a.tolerance;
        failed |= !ok;
        println!(
            "{target} max_rel_error {:.3e} params {} {}",
            report.max_rel_error,
            report.params_checked,
            if ok { "ok" } else { "FAIL" }
        );
    }
    Ok(if failed { 1 } else { 0 })
}

fn cmd_export_priors(a: ExportPriorsArgs) -> Result<u8> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for name in PRIOR_NAMES {
        let graph = builtin_prior_by_name(name).expect("catalog name");
        let path = a.out.join(format!("{name}.json"));
        std::fs::write(&path, graph_to_string(&graph)).map_err(|e| Error::io(&path, e))?;
        println!("{}", path.display());
    }
    Ok(0)
}
