use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cylsplat::config::RunConfig;
use cylsplat::coordsys::run_benchmark;
use cylsplat::metrics::{evaluate, ws_psnr_masked, MetricReport};
use cylsplat::panorama::Panorama;
use cylsplat::pipeline::{self, files, PipelineInputs};
use cylsplat::ply::{read_ply, write_ply, PlyOptions};
use cylsplat::raster::{render_cubemap, render_equirect, with_threads};
use cylsplat::retrieval::colorize_cloud;
use cylsplat::scene::load_poses;
use cylsplat::triplane::VolumeParams;

/// Panoramic Gaussian splatting toolkit: cylindrical triplanes, color
/// retrieval, equirectangular rendering and panoramic metrics.
#[derive(Parser)]
#[command(name = "cylsplat", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON). Unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of every stochastic element; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores; overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Panorama width; the height is half of it.
    #[arg(long, global = true)]
    width: Option<usize>,
}

#[derive(Args)]
struct RenderFlags {
    /// Background color as r,g,b in [0, 1].
    #[arg(long = "render-background", value_delimiter = ',', num_args = 3)]
    background: Option<Vec<f32>>,
    #[arg(long = "render-tile-size")]
    tile_size: Option<usize>,
    /// Latitude in degrees beyond which the projection Jacobian is clamped.
    #[arg(long = "render-pole-clamp")]
    pole_clamp: Option<f64>,
    /// Cubemap face edge in pixels, 0 = automatic.
    #[arg(long = "render-face-size")]
    face_size: Option<usize>,
}

#[derive(Args)]
struct PruneFlags {
    #[arg(long = "prune-deviation")]
    deviation: Option<f64>,
    #[arg(long = "prune-factor")]
    factor: Option<f64>,
    #[arg(long = "prune-floor")]
    floor: Option<f64>,
    /// Skip the pruning stage.
    #[arg(long = "prune-disable")]
    disable: bool,
}

#[derive(Args)]
struct RetrievalFlags {
    /// Visibility softmax temperature, meters.
    #[arg(long = "retrieval-temperature")]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a PLY cloud directly to an equirectangular panorama.
    Render(RenderCmd),
    /// Render a PLY cloud through six cubemap faces.
    RenderCubemap(RenderCmd),
    /// Score a render against ground truth.
    Metrics(MetricsCmd),
    /// Build the initial triplane of every camera of a scene directory.
    TriplaneInit(InitCmd),
    /// Run the cross-plane and tri-to-image attention layers.
    TriplaneAttend(AttendCmd),
    /// Decode triplanes into volume Gaussians.
    TriplaneDecode(DecodeCmd),
    /// Assign colors to a cloud from the source views.
    RetrieveRgb(RetrieveCmd),
    /// Depth-guided pruning against the source view depth maps.
    Prune(PruneCmd),
    /// Cartesian vs spherical vs cylindrical grid benchmark.
    BenchCoords(BenchCmd),
    /// Generate the synthetic room scene.
    GenScene(GenCmd),
    /// Full volume-branch pipeline and final render.
    Pipeline(PipelineCmd),
}

#[derive(Args)]
struct RenderCmd {
    #[arg(long)]
    cloud: PathBuf,
    /// Poses JSON.
    #[arg(long)]
    pose: PathBuf,
    /// Which pose of the file to render from.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output prefix; writes <out>.png, <out>.exr and <out>_depth.exr.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Args)]
struct MetricsCmd {
    /// Rendered RGB (PNG or EXR).
    #[arg(long)]
    render: PathBuf,
    /// Ground truth RGB (PNG or EXR).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    render_depth: Option<PathBuf>,
    #[arg(long)]
    gt_depth: Option<PathBuf>,
    /// PNG mask; adds WS-PSNR over its bright pixels.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "render")]
    name: String,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct InitCmd {
    /// Scene directory written by gen-scene.
    #[arg(long)]
    scene: PathBuf,
    /// Volume weights; seeded weights are generated and saved when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttendCmd {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Input triplanes, one per camera in order.
    #[arg(long, num_args = 1.., required = true)]
    grids: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeCmd {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    grids: Vec<PathBuf>,
    /// Output PLY.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveCmd {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    retrieval: RetrievalFlags,
}

#[derive(Args)]
struct PruneCmd {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prune: PruneFlags,
}

#[derive(Args)]
struct BenchCmd {
    /// Output directory for CSV tables, JSON and coverage PNGs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenCmd {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineCmd {
    /// Scene directory; the scene is generated from the config when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write every intermediate cloud and grid.
    #[arg(long)]
    stages: bool,
    #[command(flatten)]
    render: RenderFlags,
    #[command(flatten)]
    prune: PruneFlags,
    #[command(flatten)]
    retrieval: RetrievalFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<cylsplat::Error>().map(|e| e.kind()).unwrap_or("cli");
            let report = json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(w) = g.width {
        cfg.width = w;
        cfg.height = w / 2;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_render(cfg: &mut RunConfig, f: &RenderFlags) -> anyhow::Result<()> {
    if let Some(b) = &f.background {
        cfg.render.background = [b[0], b[1], b[2]];
    }
    if let Some(t) = f.tile_size {
        cfg.render.tile_size = t;
    }
    if let Some(p) = f.pole_clamp {
        cfg.render.pole_clamp_deg = p;
    }
    if let Some(n) = f.face_size {
        cfg.render.cube_face_size = n;
    }
    cfg.render.threads = cfg.threads;
    cfg.render.validate()?;
    Ok(())
}

fn apply_prune(cfg: &mut RunConfig, f: &PruneFlags) -> anyhow::Result<()> {
    let o = &mut cfg.prune.options;
    if let Some(v) = f.deviation {
        o.deviation_threshold = v;
    }
    if let Some(v) = f.factor {
        o.opacity_factor = v;
    }
    if let Some(v) = f.floor {
        o.opacity_floor = v;
    }
    if f.disable {
        cfg.prune.enabled = false;
    }
    o.validate()?;
    Ok(())
}

fn apply_retrieval(cfg: &mut RunConfig, f: &RetrievalFlags) -> anyhow::Result<()> {
    if let Some(t) = f.temperature {
        cfg.retrieval.temperature = t;
    }
    cfg.retrieval.validate()?;
    Ok(())
}

fn paths(p: &[PathBuf]) -> Value {
    Value::from(p.iter().map(|x| x.display().to_string()).collect::<Vec<_>>())
}

fn load_params(path: &Path, cfg: &RunConfig) -> anyhow::Result<VolumeParams> {
    VolumeParams::load(path, &cfg.triplane, cfg.param_shapes()).with_context(|| format!("params {}", path.display()))
}

fn save_pano(pano: &Panorama, prefix: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(d) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    let stem = prefix.display().to_string();
    let (png, exr, depth) = (
        PathBuf::from(format!("{stem}.png")),
        PathBuf::from(format!("{stem}.exr")),
        PathBuf::from(format!("{stem}_depth.exr")),
    );
    pano.save_png(&png)?;
    pano.save_rgb_exr(&exr)?;
    pano.save_depth_exr(&depth)?;
    Ok(vec![png, exr, depth])
}

fn run(cli: Cli) -> anyhow::Result<Value> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Render(c) => render(&mut cfg, c, false),
        Command::RenderCubemap(c) => render(&mut cfg, c, true),
        Command::Metrics(c) => metrics(c),
        Command::TriplaneInit(c) => with_threads(cfg.threads, || triplane_init(&cfg, c)),
        Command::TriplaneAttend(c) => with_threads(cfg.threads, || triplane_attend(&cfg, c)),
        Command::TriplaneDecode(c) => with_threads(cfg.threads, || triplane_decode(&cfg, c)),
        Command::RetrieveRgb(c) => {
            apply_retrieval(&mut cfg, &c.retrieval)?;
            with_threads(cfg.threads, || retrieve(&cfg, c))
        }
        Command::Prune(c) => {
            apply_prune(&mut cfg, &c.prune)?;
            with_threads(cfg.threads, || prune(&cfg, c))
        }
        Command::BenchCoords(c) => with_threads(cfg.threads, || bench(&cfg, c)),
        Command::GenScene(c) => {
            let scene = pipeline::build_scene(&cfg)?;
            let written = pipeline::write_scene(&scene, &c.out)?;
            Ok(json!({ "outputs": paths(&written) }))
        }
        Command::Pipeline(c) => {
            apply_render(&mut cfg, &c.render)?;
            apply_prune(&mut cfg, &c.prune)?;
            apply_retrieval(&mut cfg, &c.retrieval)?;
            run_pipeline_cmd(&cfg, c)
        }
    }
}

fn render(cfg: &mut RunConfig, c: RenderCmd, cubemap: bool) -> anyhow::Result<Value> {
    apply_render(cfg, &c.render)?;
    let cloud = read_ply(&c.cloud).with_context(|| format!("cloud {}", c.cloud.display()))?;
    let poses = load_poses(&c.pose).with_context(|| format!("poses {}", c.pose.display()))?;
    let pose = poses
        .get(c.index)
        .ok_or_else(|| anyhow!("pose index {} out of range ({} poses)", c.index, poses.len()))?;
    let dims = cfg.dims()?;
    let start = std::time::Instant::now();
    let pano = if cubemap {
        render_cubemap(&cloud, pose, dims, &cfg.render)?
    } else {
        render_equirect(&cloud, pose, dims, &cfg.render)?
    };
    let seconds = start.elapsed().as_secs_f64();
    let written = save_pano(&pano, &c.out)?;
    Ok(json!({ "outputs": paths(&written), "gaussians": cloud.len(), "seconds": seconds }))
}

fn load_with_depth(rgb: &Path, depth: Option<&PathBuf>) -> anyhow::Result<Panorama> {
    let mut p = Panorama::load_rgb(rgb)?;
    if let Some(d) = depth {
        let d = Panorama::load_depth_exr(d)?;
        p.check_same_dims(&d)?;
        p.depth = d.depth;
    }
    Ok(p)
}

fn metrics(c: MetricsCmd) -> anyhow::Result<Value> {
    let render = load_with_depth(&c.render, c.render_depth.as_ref()).with_context(|| format!("render {}", c.render.display()))?;
    let gt = load_with_depth(&c.gt, c.gt_depth.as_ref()).with_context(|| format!("gt {}", c.gt.display()))?;
    let report = evaluate(&c.name, &render, &gt)?;
    let mut v = serde_json::to_value(&report)?;
    if let Some(m) = &c.mask {
        let mask = pipeline::load_mask(m)?;
        if mask.len() != gt.rgb.len() {
            bail!("mask has {} pixels, images have {}", mask.len(), gt.rgb.len());
        }
        v["ws_psnr_masked"] = json!(ws_psnr_masked(&render, &gt, &mask)?);
    }
    let mut written = Vec::new();
    if let Some(p) = &c.json {
        fs::write(p, serde_json::to_string_pretty(&v)?)?;
        written.push(p.clone());
    }
    if let Some(p) = &c.csv {
        fs::write(p, format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()))?;
        written.push(p.clone());
    }
    Ok(json!({ "report": v, "outputs": paths(&written) }))
}

fn triplane_init(cfg: &RunConfig, c: InitCmd) -> anyhow::Result<Value> {
    let inputs = pipeline::load_inputs(&c.scene).with_context(|| format!("scene {}", c.scene.display()))?;
    fs::create_dir_all(&c.out)?;
    let mut written = Vec::new();
    let params = match &c.params {
        Some(p) => load_params(p, cfg)?,
        None => {
            let p = pipeline::seeded_params(cfg)?;
            let path = c.out.join("params.bin");
            p.save(&path)?;
            written.push(path);
            p
        }
    };
    for (i, g) in pipeline::init_grids(cfg, &params, &inputs)?.iter().enumerate() {
        let path = c.out.join(files::grid(i));
        pipeline::save_grid(g, &path)?;
        written.push(path);
    }
    Ok(json!({ "outputs": paths(&written) }))
}

fn load_grids(cfg: &RunConfig, grids: &[PathBuf]) -> anyhow::Result<Vec<cylsplat::triplane::TriplaneGrid>> {
    grids
        .iter()
        .map(|p| pipeline::load_grid(p, &cfg.triplane).with_context(|| format!("grid {}", p.display())))
        .collect()
}

fn triplane_attend(cfg: &RunConfig, c: AttendCmd) -> anyhow::Result<Value> {
    let inputs = pipeline::load_inputs(&c.scene).with_context(|| format!("scene {}", c.scene.display()))?;
    let params = load_params(&c.params, cfg)?;
    let poses = pipeline::source_poses(&inputs);
    fs::create_dir_all(&c.out)?;
    let mut written = Vec::new();
    for (i, g) in load_grids(cfg, &c.grids)?.iter().enumerate() {
        let out = pipeline::attend(g, &params, &inputs.feature_maps, &poses)?;
        let path = c.out.join(files::grid(i));
        pipeline::save_grid(&out, &path)?;
        written.push(path);
    }
    Ok(json!({ "outputs": paths(&written) }))
}

fn triplane_decode(cfg: &RunConfig, c: DecodeCmd) -> anyhow::Result<Value> {
    let params = load_params(&c.params, cfg)?;
    let cloud = pipeline::decode_all(&load_grids(cfg, &c.grids)?, &params)?;
    write_ply(&cloud, &c.out, PlyOptions::default())?;
    Ok(json!({ "outputs": paths(&[c.out]), "gaussians": cloud.len() }))
}

fn retrieve(cfg: &RunConfig, c: RetrieveCmd) -> anyhow::Result<Value> {
    let inputs = pipeline::load_inputs(&c.scene).with_context(|| format!("scene {}", c.scene.display()))?;
    let cloud = read_ply(&c.cloud).with_context(|| format!("cloud {}", c.cloud.display()))?;
    let (colored, occluded) = colorize_cloud(&cloud, &inputs.views, &cfg.retrieval)?;
    write_ply(&colored, &c.out, PlyOptions::default())?;
    Ok(json!({ "outputs": paths(&[c.out]), "gaussians": colored.len(), "occluded": occluded }))
}

fn prune(cfg: &RunConfig, c: PruneCmd) -> anyhow::Result<Value> {
    let inputs = pipeline::load_inputs(&c.scene).with_context(|| format!("scene {}", c.scene.display()))?;
    let cloud = read_ply(&c.cloud).with_context(|| format!("cloud {}", c.cloud.display()))?;
    let pruned = pipeline::prune_stage(cfg, &cloud, &inputs)?;
    write_ply(&pruned, &c.out, PlyOptions::default())?;
    Ok(json!({ "outputs": paths(&[c.out]), "before": cloud.len(), "after": pruned.len() }))
}

fn bench(cfg: &RunConfig, c: BenchCmd) -> anyhow::Result<Value> {
    let (points, oriented) = pipeline::bench_points(cfg)?;
    let results = run_benchmark(&cfg.bench.spec()?, &points, &oriented)?;
    fs::create_dir_all(&c.out)?;
    let mut written = Vec::new();
    let mut table = String::from("system,res_0,res_1,res_2,plane_cells,in_bounds,collision_fraction,alignment\n");
    let mut coverage = String::from("system,shell,coverage\n");
    for (r, maps) in &results {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.system.name(),
            r.res[0],
            r.res[1],
            r.res[2],
            r.plane_cells,
            r.in_bounds,
            r.collision_fraction,
            r.alignment
        ));
        for ((shell, cov), map) in r.coverage.iter().zip(maps) {
            coverage.push_str(&format!("{},{shell},{cov}\n", r.system.name()));
            let p = c.out.join(format!("coverage_{}_{shell:03}.png", r.system.name()));
            map.to_panorama().save_png(&p)?;
            written.push(p);
        }
    }
    let reports: Vec<_> = results.iter().map(|(r, _)| r).collect();
    for (name, body) in [
        ("systems.csv", table),
        ("coverage.csv", coverage),
        ("bench.json", serde_json::to_string_pretty(&reports)?),
    ] {
        let p = c.out.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(json!({ "outputs": paths(&written) }))
}

fn run_pipeline_cmd(cfg: &RunConfig, c: PipelineCmd) -> anyhow::Result<Value> {
    let (inputs, gt, mask): (PipelineInputs, Panorama, Vec<bool>) = match &c.scene {
        Some(dir) => {
            let inputs = pipeline::load_inputs(dir).with_context(|| format!("scene {}", dir.display()))?;
            let gt = load_with_depth(&dir.join(files::TARGET_RGB), Some(&dir.join(files::TARGET_DEPTH)))?;
            (inputs, gt, pipeline::load_mask(&dir.join(files::MASK))?)
        }
        None => {
            let scene = pipeline::build_scene(cfg)?;
            (scene.inputs()?, scene.target_gt.panorama.clone(), scene.mask.clone())
        }
    };
    let params = pipeline::seeded_params(cfg)?;
    let out = pipeline::run_pipeline(cfg, &params, &inputs)?;
    fs::create_dir_all(&c.out)?;
    let mut written = if c.stages {
        pipeline::write_outputs(&out, &c.out)?
    } else {
        let mut w = save_pano(&out.render, &c.out.join("render"))?;
        w.extend(save_pano(&out.baseline, &c.out.join("baseline"))?);
        w
    };
    let mut report = json!({
        "render": evaluate("render", &out.render, &gt)?,
        "baseline": evaluate("baseline", &out.baseline, &gt)?,
        "params": params.provenance,
    });
    if mask.iter().any(|m| *m) {
        report["completion"] = serde_json::to_value(pipeline::completion_report(&out, &gt, &mask)?)?;
    }
    let p = c.out.join("report.json");
    fs::write(&p, serde_json::to_string_pretty(&report)?)?;
    written.push(p);
    Ok(json!({ "outputs": paths(&written), "report": report }))
}
