mod config;
mod error;
mod report;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bbs3d::bnb::{search_space, SearchConfig};
use bbs3d::cloud::{load_cloud, save_xyz, CloudFormat, PointCloud};
use bbs3d::harness::{
    downsample_scan, gen_scene, localize, oracle_search, run_benchmark, standard_configs, Scene,
    SceneParams, DEFAULT_LEAF_LIMIT,
};
use bbs3d::voxelmap::{level_resolution, MultiResVoxelMap, MAP_MAGIC};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{RunConfig, SearchArgs};
use error::{CliError, EXIT_CONFIG, EXIT_NO_MATCH, EXIT_OK};
use report::{render_breakdown, LocalizeOut, PoseOut};

#[derive(Debug, Parser)]
#[command(
    name = "bbs3d",
    version,
    about = "Global 3D LiDAR localization by branch-and-bound scan matching"
)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the multi-resolution voxel map of a point cloud.
    BuildMap(BuildMapArgs),
    /// Localize a scan against a map; prints the result as JSON.
    Localize(LocalizeArgs),
    /// Score every leaf of the search space exhaustively.
    Oracle(OracleArgs),
    /// Generate a synthetic scene with ground truth.
    GenScene(GenSceneArgs),
    /// Run configurations (a) to (i) over generated scenes.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct BuildMapArgs {
    /// Map point cloud (PLY, PCD or XYZ).
    #[arg(long)]
    map: PathBuf,
    /// Output map file.
    #[arg(long)]
    out: PathBuf,
    /// Largest acceptable hash probe-overflow rate.
    #[arg(long)]
    collision_target: Option<f64>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    /// Map point cloud or map file written by build-map.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Scan point cloud in the sensor frame.
    #[arg(long)]
    scan: Option<PathBuf>,
    /// Also write the JSON result to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    scan: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Refuse leaf grids larger than this.
    #[arg(long, default_value_t = DEFAULT_LEAF_LIMIT)]
    limit: u64,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args)]
struct GenSceneArgs {
    /// Output directory for map.xyz, scan.xyz and scene.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with scene parameters; missing keys keep their defaults.
    #[arg(long)]
    scene_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Number of scenes, seeded consecutively from --seed.
    #[arg(long, default_value_t = 20)]
    scenes: u64,
    /// Comma-separated configuration ids.
    #[arg(long, default_value = "a,b,c,d,e,f,g,h,i")]
    configs: String,
    #[arg(long)]
    multi_workers: Option<usize>,
    /// Workers standing in for the accelerator rows.
    #[arg(long)]
    substitute_workers: Option<usize>,
    #[arg(long)]
    scene_config: Option<PathBuf>,
    /// JSON-lines report, one row per scene and configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("bbs3d: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::BuildMap(a) => cmd_build_map(a, cli),
        Command::Localize(a) => cmd_localize(a, cli),
        Command::Oracle(a) => cmd_oracle(a, cli),
        Command::GenScene(a) => cmd_gen_scene(a, cli),
        Command::Benchmark(a) => cmd_benchmark(a, cli),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn load_points(path: &Path) -> Result<PointCloud, CliError> {
    let loaded = load_cloud(path, CloudFormat::Auto)?;
    if loaded.dropped > 0 {
        log::warn!(
            "{}: dropped {} non-finite points",
            path.display(),
            loaded.dropped
        );
    }
    Ok(loaded.cloud)
}

fn is_map_file(path: &Path) -> Result<bool, CliError> {
    let mut head = [0u8; 6];
    let mut f =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let n = f
        .read(&mut head)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(n == head.len() && &head == MAP_MAGIC)
}

/// Loads a map file or builds a map from a cloud. A map file's resolution
/// and level count replace the configured ones. Returns the map and the
/// time spent creating it.
fn obtain_map(path: &Path, cfg: &mut RunConfig) -> Result<(MultiResVoxelMap, f64), CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("file not found: {}", path.display())));
    }
    let start = Instant::now();
    if is_map_file(path)? {
        let params = cfg.map_params();
        let map = MultiResVoxelMap::load(path, params.collision_target, params.max_buckets)?;
        if map.resolution() != cfg.search.r || map.max_level() != cfg.search.l_max {
            log::info!(
                "using r = {}, l_max = {} from {}",
                map.resolution(),
                map.max_level(),
                path.display()
            );
            cfg.search.r = map.resolution();
            cfg.search.l_max = map.max_level();
        }
        Ok((map, start.elapsed().as_secs_f64() * 1e3))
    } else {
        let cloud = load_points(path)?;
        let map = MultiResVoxelMap::build(&cloud, &cfg.map_params())?;
        Ok((map, start.elapsed().as_secs_f64() * 1e3))
    }
}

fn required(
    opt: &Option<PathBuf>,
    from_cfg: &Option<PathBuf>,
    flag: &str,
) -> Result<PathBuf, CliError> {
    opt.clone()
        .or_else(|| from_cfg.clone())
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

#[derive(Serialize)]
struct LevelOut {
    level: u32,
    resolution: f64,
    voxels: usize,
    buckets: usize,
    collision_rate: f64,
    primary_collision_rate: f64,
}

#[derive(Serialize)]
struct BuildMapOut {
    out: PathBuf,
    level_count: usize,
    create_voxel_maps_ms: f64,
    levels: Vec<LevelOut>,
}

fn cmd_build_map(a: &BuildMapArgs, cli: &Cli) -> Result<u8, CliError> {
    let mut cfg = a.search.resolve(cli.verbose)?;
    if let Some(t) = a.collision_target {
        cfg.collision_target = t;
        cfg.validate()?;
    }
    let cloud = load_points(&a.map)?;
    let start = Instant::now();
    let map = MultiResVoxelMap::build(&cloud, &cfg.map_params())?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    map.save(&a.out)?;
    let out = BuildMapOut {
        out: a.out.clone(),
        level_count: map.levels().len(),
        create_voxel_maps_ms: ms,
        levels: map
            .levels()
            .iter()
            .map(|l| LevelOut {
                level: l.level(),
                resolution: level_resolution(cfg.search.r, l.level()),
                voxels: l.occupied_count(),
                buckets: l.bucket_count(),
                collision_rate: l.collision_rate(),
                primary_collision_rate: l.primary_collision_rate(),
            })
            .collect(),
    };
    if cli.json {
        println!("{}", to_json(&out));
    } else {
        println!("levels: {}", out.level_count);
        for l in &out.levels {
            println!(
                "  level {} ({} m): {} voxels in {} buckets, overflow {:.4} %",
                l.level,
                l.resolution,
                l.voxels,
                l.buckets,
                100.0 * l.collision_rate
            );
        }
        println!("Create voxel maps: {ms:.1} ms -> {}", a.out.display());
    }
    Ok(EXIT_OK)
}

fn cmd_localize(a: &LocalizeArgs, cli: &Cli) -> Result<u8, CliError> {
    let mut cfg = a.search.resolve(cli.verbose)?;
    let map_path = required(&a.map, &cfg.map, "map")?;
    let scan_path = required(&a.scan, &cfg.scan, "scan")?;
    cfg.map = Some(map_path.clone());
    cfg.scan = Some(scan_path.clone());
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    let (map, map_ms) = obtain_map(&map_path, &mut cfg)?;
    let scan = load_points(&scan_path)?;
    let (mut result, _) = localize(&map, &scan, &cfg.search, cfg.downsample_target)?;
    result.stats.create_voxel_maps_ms = map_ms;
    let text = to_json(&LocalizeOut::new(&result, &cfg));
    println!("{text}");
    if let Some(out) = &cfg.out {
        write_file(out, &text)?;
    }
    if !cli.json {
        eprint!("{}", render_breakdown(&result.stats.breakdown()));
    }
    Ok(if result.matched {
        EXIT_OK
    } else {
        EXIT_NO_MATCH
    })
}

#[derive(Serialize)]
struct OracleOut<'a> {
    score: u32,
    matched: bool,
    score_threshold: u32,
    num_points: usize,
    leaves: u64,
    argmax_count: u64,
    pose: Option<PoseOut>,
    elapsed_ms: f64,
    config: &'a RunConfig,
}

fn cmd_oracle(a: &OracleArgs, cli: &Cli) -> Result<u8, CliError> {
    let mut cfg = a.search.resolve(cli.verbose)?;
    let map_path = required(&a.map, &cfg.map, "map")?;
    let scan_path = required(&a.scan, &cfg.scan, "scan")?;
    cfg.map = Some(map_path.clone());
    cfg.scan = Some(scan_path.clone());
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    let (map, _) = obtain_map(&map_path, &mut cfg)?;
    let raw = load_points(&scan_path)?;
    let scan = match cfg.downsample_target {
        Some(t) => downsample_scan(&raw, t)?.0,
        None => raw,
    };
    let (grids, range) = search_space(&map, &scan, &cfg.search)?;
    let threshold = cfg.search.score_threshold(scan.len());
    let start = Instant::now();
    let result = oracle_search(&map, &scan.points, &grids, &range, threshold, a.limit)?;
    let out = OracleOut {
        score: result.best_score,
        matched: result.best_score >= threshold,
        score_threshold: threshold,
        num_points: scan.len(),
        leaves: result.leaves,
        argmax_count: result.argmax_count,
        pose: result
            .best_pose(&grids, cfg.search.r)
            .map(|p| PoseOut::new(&p)),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        config: &cfg,
    };
    let text = to_json(&out);
    println!("{text}");
    if let Some(path) = &cfg.out {
        write_file(path, &text)?;
    }
    Ok(if out.matched { EXIT_OK } else { EXIT_NO_MATCH })
}

fn scene_params(path: &Option<PathBuf>) -> Result<SceneParams, CliError> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(SceneParams::default()),
    }
}

#[derive(Serialize)]
struct SceneOut<'a> {
    seed: u64,
    gt_pose: PoseOut,
    feasible_fraction: f64,
    map_points: usize,
    scan_points: usize,
    params: &'a SceneParams,
}

fn cmd_gen_scene(a: &GenSceneArgs, cli: &Cli) -> Result<u8, CliError> {
    let params = scene_params(&a.scene_config)?;
    let scene = gen_scene(&params, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    save_xyz(&scene.map_cloud, a.out.join("map.xyz"))?;
    save_xyz(&scene.scan_cloud, a.out.join("scan.xyz"))?;
    let meta = SceneOut {
        seed: a.seed,
        gt_pose: PoseOut::new(&scene.gt_pose),
        feasible_fraction: scene.feasible_fraction,
        map_points: scene.map_cloud.len(),
        scan_points: scene.scan_cloud.len(),
        params: &params,
    };
    let text = to_json(&meta);
    write_file(&a.out.join("scene.json"), &text)?;
    if cli.json {
        println!("{text}");
    } else {
        let p = &scene.gt_pose;
        println!(
            "scene {}: {} map points, {} scan points, gt ({:.3}, {:.3}, {:.3}) rpy ({:.4}, {:.4}, {:.4}) -> {}",
            a.seed,
            meta.map_points,
            meta.scan_points,
            p.x,
            p.y,
            p.z,
            p.roll,
            p.pitch,
            p.yaw,
            a.out.display()
        );
    }
    Ok(EXIT_OK)
}

fn cmd_benchmark(a: &BenchmarkArgs, cli: &Cli) -> Result<u8, CliError> {
    let mut cfg = a.search.resolve(cli.verbose)?;
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    let params = scene_params(&a.scene_config)?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let multi = a.multi_workers.unwrap_or(cores.max(2));
    let substitute = a.substitute_workers.unwrap_or(multi);
    let wanted: Vec<&str> = a
        .configs
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let all = standard_configs(multi, substitute);
    if let Some(bad) = wanted.iter().find(|w| !all.iter().any(|c| c.id == **w)) {
        return Err(CliError::Config(format!(
            "unknown configuration '{bad}', expected a to i"
        )));
    }
    let configs: Vec<_> = all
        .into_iter()
        .filter(|c| wanted.contains(&c.id.as_str()))
        .collect();
    if configs.is_empty() || a.scenes == 0 {
        return Err(CliError::Config(
            "benchmark needs at least one scene and one configuration".into(),
        ));
    }
    let scenes: Vec<Scene> = (cfg.seed..cfg.seed + a.scenes)
        .map(|seed| gen_scene(&params, seed))
        .collect::<Result<_, _>>()?;
    let base: SearchConfig = cfg.search.clone();
    let report = run_benchmark(&scenes, &configs, &base, cfg.downsample_target)?;
    let lines = report.to_json_lines();
    if let Some(out) = &cfg.out {
        write_file(out, &lines)?;
    }
    if cli.json {
        print!("{lines}");
    } else {
        print!("{}", report.render_table());
    }
    Ok(EXIT_OK)
}
