use clap::{Args, Parser, Subcommand};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use voxmap::geom::Pose;
use voxmap::pipeline::bench::{aggregate_timings, query_scaling};
use voxmap::pipeline::config::RunConfig;
use voxmap::pipeline::eval::evaluate;
use voxmap::pipeline::{io, run_scans, run_scans_with_odometry, simulate_scans};
use voxmap::simulator::{make_trajectory, Scene, ScanPattern, TrajectoryKind};
use voxmap::uncertainty::RawPoint;

/// Probabilistic adaptive voxel mapping LiDAR odometry.
#[derive(Parser)]
#[command(name = "voxmap", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Box<dyn Error>> {
        Ok(match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Register a directory of scans and write the estimated trajectory.
    Run {
        /// Directory of scan files, processed in lexicographic order.
        #[arg(long)]
        scans: PathBuf,
        /// Output trajectory (KITTI 12-number lines, config echoed as '#' headers).
        #[arg(long)]
        output: PathBuf,
        /// Optional per-frame diagnostics file.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate a synthetic scan sequence with ground truth.
    Simulate {
        /// Built-in scene (wall, room, corridor, forest) or a scene file path.
        #[arg(long, default_value = "corridor")]
        scene: String,
        /// Trajectory kind: static, corridor, loop, rotation.
        #[arg(long, default_value = "corridor")]
        trajectory: String,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        /// Output directory for scans, ground truth, and the scene file.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compare an estimated trajectory against a reference.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Time the pipeline stages and the map query scaling.
    Bench {
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Register scans and dump the resulting plane map as text.
    MapDump {
        #[arg(long)]
        scans: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn sorted_scan_files(dir: &Path) -> Result<Vec<PathBuf>, Box<dyn Error>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read scan directory {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(format!("no scan files in {}", dir.display()).into());
    }
    Ok(files)
}

fn load_scan_sequence(dir: &Path) -> Result<Vec<Vec<RawPoint>>, Box<dyn Error>> {
    let mut scans = Vec::new();
    for path in sorted_scan_files(dir)? {
        let points = io::load_scan(&path, io::ScanFormat::from_path(&path))?;
        // Returns at (or numerically near) the origin carry no bearing.
        let raw: Vec<RawPoint> = points
            .iter()
            .filter_map(RawPoint::from_cartesian)
            .collect();
        scans.push(raw);
    }
    Ok(scans)
}

fn parse_scene(spec: &str) -> Result<Scene, Box<dyn Error>> {
    Ok(match spec {
        "wall" => Scene::single_wall(),
        "room" => Scene::room(),
        "corridor" => Scene::corridor_with_boxes(40.0),
        "forest" => Scene::sparse_forest(25.0, 40, 1),
        path => Scene::from_text(&std::fs::read_to_string(path).map_err(|e| {
            format!("scene {spec:?} is not a builtin and could not be read as a file: {e}")
        })?)?,
    })
}

fn parse_trajectory(spec: &str, frames: usize) -> Result<Vec<Pose>, Box<dyn Error>> {
    let kind = match spec {
        "static" => TrajectoryKind::Static,
        "corridor" => TrajectoryKind::Corridor { step: 0.5 },
        "loop" => TrajectoryKind::Loop { radius: 2.5 },
        "rotation" => TrajectoryKind::Rotation {
            step: 2f64.to_radians(),
        },
        other => return Err(format!("unknown trajectory kind {other:?}").into()),
    };
    // Lift the sensor off the ground plane the builtin scenes put at z = 0.
    let mut poses = make_trajectory(kind, frames);
    for pose in &mut poses {
        pose.translation.z += 1.2;
    }
    Ok(poses)
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Run {
            scans,
            output,
            diagnostics,
            config,
        } => {
            let cfg = config.load()?;
            let sequence = load_scan_sequence(&scans)?;
            let result = run_scans(&sequence, &cfg);
            io::write_trajectory(&output, &result.poses, Some(&cfg.to_toml_string()))?;
            if let Some(diag) = diagnostics {
                io::write_diagnostics(&diag, &result.summaries)?;
            }
            let flagged = result.summaries.iter().filter(|s| s.flagged).count();
            println!(
                "registered {} frames ({} flagged degenerate), trajectory written to {}",
                result.poses.len(),
                flagged,
                output.display()
            );
        }
        Command::Simulate {
            scene,
            trajectory,
            frames,
            output,
            config,
        } => {
            let cfg = config.load()?;
            let scene = parse_scene(&scene)?;
            let poses = parse_trajectory(&trajectory, frames)?;
            let pattern = ScanPattern::SphericalGrid {
                azimuth_steps: 360,
                elevation_steps: 32,
                elevation_span: 0.9,
            };
            std::fs::create_dir_all(&output)?;
            let scan_dir = output.join("scans");
            std::fs::create_dir_all(&scan_dir)?;
            let scans = simulate_scans(&scene, &poses, &pattern, &cfg);
            for (i, scan) in scans.iter().enumerate() {
                let pts: Vec<_> = scan.points.iter().map(|p| p.raw.position()).collect();
                io::save_xyz(&scan_dir.join(format!("{i:06}.txt")), &pts)?;
            }
            io::write_trajectory(&output.join("groundtruth.txt"), &poses, None)?;
            std::fs::write(output.join("scene.txt"), scene.to_text())?;
            std::fs::write(output.join("config.toml"), cfg.to_toml_string())?;
            println!(
                "wrote {} scans to {} (+ groundtruth.txt, scene.txt, config.toml)",
                scans.len(),
                scan_dir.display()
            );
        }
        Command::Eval {
            estimate,
            reference,
        } => {
            let est = io::read_trajectory(&estimate)?;
            let reference = io::read_trajectory(&reference)?;
            let report = evaluate(&est, &reference)?;
            println!(
                "rmse={:.4} m  mean={:.4} m  max={:.4} m  loop_drift={:.4} m  (aligned on first {} poses)",
                report.rmse, report.mean_error, report.max_error, report.loop_drift, report.aligned_poses
            );
        }
        Command::Bench { frames, config } => {
            let cfg = config.load()?;
            let scene = Scene::corridor_with_boxes(frames as f64 * 0.5 + 10.0);
            let poses = make_trajectory(TrajectoryKind::Corridor { step: 0.5 }, frames);
            let pattern = ScanPattern::SphericalGrid {
                azimuth_steps: 360,
                elevation_steps: 32,
                elevation_span: 0.9,
            };
            let scans: Vec<Vec<RawPoint>> = simulate_scans(&scene, &poses, &pattern, &cfg)
                .iter()
                .map(|s| s.raw_points())
                .collect();
            let result = run_scans(&scans, &cfg);
            let t = aggregate_timings(&result.summaries);
            println!(
                "frames={}  match={:.2} ms  update={:.2} ms  insert={:.2} ms  total={:.2} ms/frame",
                t.frames, t.match_ms_mean, t.update_ms_mean, t.insert_ms_mean, t.total_ms_mean
            );
            println!("query scaling (hash-indexed roots):");
            for p in query_scaling(&[4, 12, 40], 20_000, &cfg.map_config()) {
                println!(
                    "  roots={:>5}  planes={:>6}  {:.0} ns/query",
                    p.roots, p.planes, p.ns_per_query
                );
            }
        }
        Command::MapDump {
            scans,
            output,
            config,
        } => {
            let cfg = config.load()?;
            let sequence = load_scan_sequence(&scans)?;
            let (_, odometry) = run_scans_with_odometry(&sequence, &cfg);
            match output {
                Some(path) => {
                    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    odometry.map().dump(&mut file)?;
                    println!(
                        "dumped {} planes to {}",
                        odometry.map().stats().total_planes,
                        path.display()
                    );
                }
                None => {
                    let stdout = std::io::stdout();
                    odometry.map().dump(&mut stdout.lock())?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
