use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use objreloc::detection::{load_detections, save_detections, FrameDetections};
use objreloc::error::{Error, Result};
use objreloc::object_map::ObjectMap;
use objreloc::oracle;
use objreloc::pipeline::{
    build_map, evaluate, relocalise_traced, run_benchmark, simulate_run, BenchConfig, PoseChoice, REPORT_THRESHOLDS,
};
use objreloc::registration::SurfaceModel;
use objreloc::scene::Scene;

/// Object-map construction and object-level relocalisation on synthetic
/// RGB-D scenes.
#[derive(Parser)]
#[command(name = "objreloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene, its map construction key frames and lost frames.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Which run of the config to simulate.
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Output directory for scene.json, keyframes.jsonl and lost.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse key-frame detections into a map and render the surface model.
    BuildMap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        /// Key frames with poses, one JSON record per line.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        surface: PathBuf,
    },
    /// Relocalise every frame of a detection file against a map.
    Relocalise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        surface: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Results JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the matcher's adjacency matrices and scores here.
        #[arg(long)]
        dump_adjacency: Option<PathBuf>,
    },
    /// Run a benchmark config and print its table.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the brute-force verification suites.
    Oracle {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Benchmark config JSON; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// IoU threshold for associating detections with map objects.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Significance level of the 3-dof configuration gate.
    #[arg(long, allow_hyphen_values = true)]
    chi2_alpha: Option<f64>,
    /// RANSAC inlier threshold, metres.
    #[arg(long, allow_hyphen_values = true)]
    inlier_thresh: Option<f64>,
    /// ICP depth term weight.
    #[arg(long, allow_hyphen_values = true)]
    w1: Option<f64>,
    /// ICP centroid term weight.
    #[arg(long, allow_hyphen_values = true)]
    w2: Option<f64>,
    /// Report the AO pose without ICP refinement.
    #[arg(long)]
    ablate_icp: bool,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                BenchConfig::from_json(&text)?
            }
            None => BenchConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.tau {
            cfg.fusion.tau = v;
        }
        if let Some(v) = self.chi2_alpha {
            cfg.chi2_alpha = Some(v);
        }
        if let Some(v) = self.inlier_thresh {
            cfg.reloc.ransac.inlier_threshold = v;
        }
        if let Some(v) = self.w1 {
            cfg.reloc.icp.w1 = v;
        }
        if let Some(v) = self.w2 {
            cfg.reloc.icp.w2 = v;
        }
        if self.ablate_icp {
            cfg.reloc.ablate_icp = true;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))
}

fn simulate(cfg: &BenchConfig, run: usize, out: &Path) -> Result<()> {
    if run >= cfg.runs {
        return Err(Error::Config {
            path: "run".into(),
            message: format!("config has {} runs, asked for run {run}", cfg.runs),
        });
    }
    let data = simulate_run(cfg, run)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let scene = serde_json::to_string_pretty(&data.scene).map_err(|e| Error::Invariant(e.to_string()))?;
    write(&out.join("scene.json"), &scene)?;
    save_detections(&data.keyframes, &out.join("keyframes.jsonl"))?;
    let lost: Vec<FrameDetections> = data.rs_frames.into_iter().map(|(_, f)| f).collect();
    save_detections(&lost, &out.join("lost.jsonl"))?;
    eprintln!(
        "run {run} (seed {}): {} objects, {} key frames, {} lost frames -> {}",
        data.seed,
        data.scene.objects.len(),
        data.keyframes.len(),
        lost.len(),
        out.display()
    );
    Ok(())
}

fn build(cfg: &BenchConfig, scene: &Path, detections: &Path, map_out: &Path, surface_out: &Path) -> Result<()> {
    let text = fs::read_to_string(scene).map_err(|e| io_err(scene, e))?;
    let scene: Scene = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: scene.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let frames = load_detections(detections)?;
    let (map, surface) = build_map(&frames, &scene, &cfg.fusion, &cfg.sensor, cfg.voxel_size)?;
    map.save(map_out)?;
    surface.save(surface_out)?;
    eprintln!(
        "{} key frames -> {} objects, {} surface points",
        frames.len(),
        map.len(),
        surface.len()
    );
    Ok(())
}

fn reloc(
    cfg: &BenchConfig,
    map: &Path,
    surface: &Path,
    detections: &Path,
    out: Option<&Path>,
    dump_adjacency: Option<&Path>,
) -> Result<()> {
    let map = ObjectMap::load(map)?;
    let surface = SurfaceModel::load(surface)?;
    let frames = load_detections(detections)?;
    let mut gt = BTreeMap::new();
    let lost: Vec<_> = frames
        .into_iter()
        .map(|f| {
            let (lost, pose) = f.into_lost();
            if let Some(p) = pose {
                gt.insert(lost.frame_id, p);
            }
            lost
        })
        .collect();

    let traced = pool(cfg.threads)?.install(|| {
        lost.par_iter()
            .map(|f| relocalise_traced(f, &map, &surface, &cfg.reloc))
            .collect::<Result<Vec<_>>>()
    })?;

    if let Some(path) = dump_adjacency {
        let dump: Vec<_> = lost
            .iter()
            .zip(&traced)
            .map(|(f, (_, m))| {
                let n = m.adjacency.candidates.len();
                let rows: Vec<Vec<f64>> = (0..n).map(|i| m.adjacency.matrix.row(i).iter().copied().collect()).collect();
                json!({
                    "frame_id": f.frame_id,
                    "candidates": m.adjacency.candidates,
                    "adjacency": rows,
                    "scores": m.eigen.vector.as_slice(),
                    "eigenvalue": m.eigen.eigenvalue,
                    "degenerate": m.eigen.degenerate,
                    "selected": m.selected.indices,
                })
            })
            .collect();
        write(path, &serde_json::to_string_pretty(&dump).map_err(|e| Error::Invariant(e.to_string()))?)?;
    }

    let results: Vec<_> = traced.into_iter().map(|(r, _)| r).collect();
    // frames without ground truth can be relocalised but not scored
    let evaluation = if !gt.is_empty() && gt.len() == results.len() {
        Some(evaluate(&results, &gt, &REPORT_THRESHOLDS, PoseChoice::Final)?)
    } else {
        None
    };
    let succeeded = results.iter().filter(|r| r.status.is_success()).count();
    let doc = json!({ "results": results, "evaluation": evaluation });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Invariant(e.to_string()))?;
    match out {
        Some(path) => write(path, &text)?,
        None => println!("{text}"),
    }
    eprintln!("{succeeded}/{} frames relocalised", results.len());
    if let Some(ev) = evaluation {
        for r in &ev.success_rate_at {
            eprintln!("  {:.0}cm/{:.0}deg: {:.4}", r.trans_m * 100.0, r.rot_deg, r.rate);
        }
    }
    Ok(())
}

fn bench(cfg: &BenchConfig, out: Option<&Path>) -> Result<()> {
    let report = run_benchmark(cfg)?;
    if let Some(path) = out {
        write(path, &report.to_json())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn oracles(seed: u64) -> Result<()> {
    let suites = oracle::run_all(seed);
    println!("{:<12} {:>7} {:>7} {:>12} {:>12}  detail", "suite", "cases", "passed", "worst", "tolerance");
    for s in &suites {
        println!(
            "{:<12} {:>7} {:>7} {:>12.3e} {:>12.3e}  {}",
            s.name, s.cases, s.passed, s.worst, s.tolerance, s.detail
        );
    }
    let failed: Vec<_> = suites.iter().filter(|s| !s.ok()).map(|s| s.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("oracle suites failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { cfg, run, out } => simulate(&cfg.load()?, run, &out),
        Command::BuildMap {
            cfg,
            scene,
            detections,
            map,
            surface,
        } => build(&cfg.load()?, &scene, &detections, &map, &surface),
        Command::Relocalise {
            cfg,
            map,
            surface,
            detections,
            out,
            dump_adjacency,
        } => reloc(
            &cfg.load()?,
            &map,
            &surface,
            &detections,
            out.as_deref(),
            dump_adjacency.as_deref(),
        ),
        Command::Bench { cfg, out } => bench(&cfg.load()?, out.as_deref()),
        Command::Oracle { seed } => oracles(seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
