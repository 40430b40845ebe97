use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use teleop_core::frames::FrameId;
use teleop_core::perception::{
    cluster_aabbs, crop_workspace, euclidean_clusters, remove_large_planes_with, voxel_downsample, Pipeline,
    PointCloud,
};
use teleop_core::simworld::World;
use teleop_server::config::ServerConfig;
use teleop_server::engine::{Engine, Mode};
use teleop_server::{load_world, net, script};

const EXIT_FAILED: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_BIND: u8 = 3;

#[derive(Parser)]
#[command(name = "teleop-server", version, about = "Simulated arm teleoperation server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation and serve clients over TCP and web sockets.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        ws_port: Option<u16>,
        /// Overrides the scene's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run this operator script headless instead of serving.
        #[arg(long, value_name = "FILE")]
        headless_script: Option<PathBuf>,
    },
    /// Run an operator script headless and print the report.
    RunScript {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Simulated seconds after which the run is cut off.
        #[arg(long, default_value_t = 60.0)]
        max_time: f64,
    },
    /// Run perception stages on a point-cloud file (points in the base frame).
    Pcl {
        stage: Stage,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Crop,
    RemovePlanes,
    Downsample,
    Cluster,
    All,
}

fn init_logging(default: &str) {
    let start = Instant::now();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format(move |buf, rec| {
            let t = start.elapsed().as_secs_f64();
            writeln!(buf, "{t:12.6} {:5} {}: {}", rec.level(), rec.target(), rec.args())
        })
        .init();
}

fn bad_input(what: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {what}");
    ExitCode::from(EXIT_BAD_INPUT)
}

fn load_config(path: Option<&Path>) -> Result<ServerConfig, ExitCode> {
    match path {
        Some(p) => ServerConfig::load(p).map_err(|e| bad_input(format!("bad config: {e}"))),
        None => Ok(ServerConfig::default()),
    }
}

fn load_scene(scene: &Path, config: &ServerConfig, seed: Option<u64>) -> Result<World, ExitCode> {
    if !scene.is_file() {
        return Err(bad_input(format!("scene file not found: {}", scene.display())));
    }
    let mut world = load_world(scene, config).map_err(|e| bad_input(format!("bad scene: {e}")))?;
    if let Some(s) = seed {
        world.reseed(s);
    }
    Ok(world)
}

fn run_script(
    script_path: &Path,
    scene: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    report: Option<&Path>,
    max_time: f64,
) -> ExitCode {
    let config = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let text = match std::fs::read_to_string(script_path) {
        Ok(t) => t,
        Err(e) => return bad_input(format!("{}: {e}", script_path.display())),
    };
    let steps = match script::parse(&text) {
        Ok(s) => s,
        Err(e) => return bad_input(format!("{}: {e}", script_path.display())),
    };
    let world = match load_scene(scene, &config, seed) {
        Ok(w) => w,
        Err(code) => return code,
    };
    if !(max_time.is_finite() && max_time > 0.0) {
        return bad_input("--max-time must be positive");
    }
    let opts = script::RunOptions {
        seed: world.seed,
        max_time,
    };
    let mut engine = Engine::new(world, config, Mode::Lockstep);
    let name = script_path.file_name().map_or_else(|| script_path.display().to_string(), |n| n.to_string_lossy().into());
    let rep = script::run(&mut engine, &name, &steps, &opts);
    let text = rep.render();
    print!("{text}");
    if let Some(p) = report {
        if let Err(e) = std::fs::write(p, &text) {
            eprintln!("error: {}: {e}", p.display());
            return ExitCode::from(EXIT_FAILED);
        }
    }
    if rep.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn serve(
    scene: &Path,
    config: Option<&Path>,
    port: Option<u16>,
    ws_port: Option<u16>,
    seed: Option<u64>,
) -> ExitCode {
    let mut config = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(p) = port {
        config.net.port = p;
    }
    if let Some(p) = ws_port {
        config.net.ws_port = p;
    }
    let world = match load_scene(scene, &config, seed) {
        Ok(w) => w,
        Err(code) => return code,
    };
    let net_cfg = config.net.clone();
    let listeners = match net::Listeners::bind(&net_cfg.bind, net_cfg.port, net_cfg.ws_port) {
        Ok(l) => l,
        Err(e) => {
            error!("cannot bind {} ports {} and {}: {e}", net_cfg.bind, net_cfg.port, net_cfg.ws_port);
            eprintln!("error: cannot bind {} ports {} and {}: {e}", net_cfg.bind, net_cfg.port, net_cfg.ws_port);
            return ExitCode::from(EXIT_BIND);
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)) {
            error!("cannot install signal handler: {e}");
        }
    }
    if let (Ok(t), Ok(w)) = (listeners.tcp_addr(), listeners.ws_addr()) {
        info!("serving {} on tcp {t} and ws {w}", scene.display());
    }
    let engine = Engine::new(world, config, Mode::Realtime);
    let engine = net::serve(listeners, engine, stop);
    info!("stopped after {:.2} s simulated", engine.now() as f64 * 1e-9);
    ExitCode::SUCCESS
}

fn pcl(stage: Stage, input: &Path, out: &Path, config: Option<&Path>, seed: u64) -> ExitCode {
    let config = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let cloud = match std::fs::read(input)
        .map_err(|e| e.to_string())
        .and_then(|b| PointCloud::from_pcb_bytes(&b, FrameId::Base).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => return bad_input(format!("{}: {e}", input.display())),
    };
    let p = &config.perception;
    let result = match stage {
        Stage::Crop => crop_workspace(&cloud, &p.workspace),
        Stage::RemovePlanes => {
            let (rest, planes) = remove_large_planes_with(&cloud, &p.plane_removal(), seed);
            for pl in &planes {
                println!("plane n=({:.6}, {:.6}, {:.6}) d={:.6}", pl.normal.x, pl.normal.y, pl.normal.z, pl.d);
            }
            rest
        }
        Stage::Downsample => voxel_downsample(&cloud, p.point_budget),
        Stage::Cluster => {
            let clusters = euclidean_clusters(&cloud, p.cluster_radius, p.min_cluster_points);
            print_boxes(&cluster_aabbs(&cloud, &clusters));
            let members: Vec<usize> = clusters.iter().flat_map(|c| c.indices.iter().copied()).collect();
            cloud.select(&members)
        }
        Stage::All => {
            let mut cfg = p.clone();
            cfg.enable_bounding_boxes = true;
            let o = Pipeline::new(cfg).process(&cloud, &nalgebra::Isometry3::identity(), seed);
            print_boxes(&o.boxes);
            o.cloud
        }
    };
    if let Err(e) = std::fs::write(out, result.to_pcb_bytes()) {
        eprintln!("error: {}: {e}", out.display());
        return ExitCode::from(EXIT_FAILED);
    }
    println!("{} points in, {} points out", cloud.len(), result.len());
    ExitCode::SUCCESS
}

fn print_boxes(boxes: &[teleop_core::perception::Aabb]) {
    for b in boxes {
        println!(
            "box min=({:.4}, {:.4}, {:.4}) max=({:.4}, {:.4}, {:.4})",
            b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve {
            scene,
            config,
            port,
            ws_port,
            seed,
            headless_script,
        } => {
            if let Some(s) = headless_script {
                init_logging("warn");
                return run_script(&s, &scene, config.as_deref(), seed, None, 60.0);
            }
            init_logging("info");
            serve(&scene, config.as_deref(), port, ws_port, seed)
        }
        Command::RunScript {
            script,
            scene,
            config,
            seed,
            report,
            max_time,
        } => {
            init_logging("warn");
            run_script(&script, &scene, config.as_deref(), seed, report.as_deref(), max_time)
        }
        Command::Pcl {
            stage,
            input,
            out,
            config,
            seed,
        } => {
            init_logging("warn");
            pcl(stage, &input, &out, config.as_deref(), seed)
        }
    }
}
