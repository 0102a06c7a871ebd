use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use orthosplat::field::GaussianField;
use orthosplat::pipeline::{self, RunConfig};
use orthosplat::render::{OrthoViewBox, RasterConfig, UpAxis};
use orthosplat::scene::SparsePoint;
use orthosplat::synthetic::DeskConfig;
use orthosplat::tdom::{self, RunMetrics};
use orthosplat::trainer::TrainConfig;
use orthosplat::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "orthosplat", version, about = "Incremental true orthophotos from Gaussian splatting")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ORTHOSPLAT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream a reconstruction and write one orthophoto per frame.
    Run {
        /// Directory with cameras.txt, images.txt and points3D.txt.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Replay order, one image name per line.
        #[arg(long)]
        order: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        init_frames: usize,
        #[arg(long, default_value_t = 2000)]
        init_iters: usize,
        #[arg(long, default_value_t = 200)]
        per_frame_iters: usize,
        /// LoG discrepancy threshold.
        #[arg(long, default_value_t = 0.1)]
        gm: f64,
        /// Samples per triangle.
        #[arg(long, default_value_t = 16)]
        ht: usize,
        /// Scene units per output pixel, or AUTO for 1024 px across.
        #[arg(long, default_value = "AUTO", value_parser = parse_gsd)]
        gsd: Gsd,
        #[arg(long, default_value = "z", value_parser = parse_up)]
        up_axis: UpAxis,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        prune: OnOff,
        #[arg(long, default_value_t = 50_000)]
        seed_cap: usize,
    },
    /// Render an orthophoto from a saved field.
    RenderTdom {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "AUTO", value_parser = parse_gsd)]
        gsd: Gsd,
        /// l,r,b,t,zn,zf; derived from the Gaussian means when omitted.
        #[arg(long, value_parser = parse_box)]
        r#box: Option<[f64; 6]>,
        /// Output path; `.png` and `.pgw` are written next to each other.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize the metrics of a finished run.
    Metrics {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in synthetic test scene.
    SynthScene {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug)]
struct Gsd(Option<f64>);

fn parse_gsd(s: &str) -> std::result::Result<Gsd, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Gsd(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(Gsd(Some(v))),
        _ => Err(format!("expected a positive number or AUTO, got `{s}`")),
    }
}

fn parse_up(s: &str) -> std::result::Result<UpAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_box(s: &str) -> std::result::Result<[f64; 6], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected six comma-separated values".to_string())
}

fn render_checkpoint(checkpoint: &Path, gsd: Gsd, bx: Option<[f64; 6]>, out: &Path) -> Result<()> {
    let field = GaussianField::load_checkpoint(checkpoint)?;
    let vb = match bx {
        Some([l, r, b, t, z_n, z_f]) => OrthoViewBox {
            l,
            r,
            b,
            t,
            z_n,
            z_f,
            up: UpAxis::Z,
        },
        None => {
            let cloud: Vec<SparsePoint> = field
                .gaussians
                .iter()
                .map(|g| SparsePoint {
                    point3d_id: 0,
                    position: g.mean,
                    color: g.color,
                    error: 0.0,
                    track: Vec::new(),
                })
                .collect();
            tdom::derive_view_box(&cloud, tdom::DEFAULT_MARGIN, UpAxis::Z)?
        }
    };
    vb.validate()?;
    let gsd = gsd.0.unwrap_or_else(|| tdom::auto_gsd(&vb));
    let raster = tdom::render_tdom(&field, &vb, gsd, &RasterConfig::default())?;
    let (png, pgw) = tdom::write_geo_outputs(&raster, &out.with_extension(""))?;
    println!("wrote {} and {}", png.display(), pgw.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Run {
            scene,
            images,
            order,
            init_frames,
            init_iters,
            per_frame_iters,
            gm,
            ht,
            gsd,
            up_axis,
            seed,
            out,
            prune,
            seed_cap,
        } => {
            let train = TrainConfig {
                init_frames,
                init_iters,
                per_frame_iters,
                gm,
                h_t: ht,
                seed,
                seed_cap,
                prune: matches!(prune, OnOff::On),
                ..TrainConfig::default()
            };
            let cfg = RunConfig {
                train,
                gsd: gsd.0,
                up: up_axis,
                ..RunConfig::default()
            };
            let stream = pipeline::open_stream(&scene, &images, order.as_deref())?;
            let summary = pipeline::run(stream, cfg, &out)?;
            print!("{}", RunMetrics::from_reports(&summary.reports).table());
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::RenderTdom {
            checkpoint,
            gsd,
            r#box,
            out,
        } => render_checkpoint(&checkpoint, gsd, r#box, &out)?,
        Command::Metrics { out } => {
            let m = RunMetrics::load_jsonl(&out.join(pipeline::METRICS_FILE))?;
            print!("{}", m.table());
        }
        Command::SynthScene { out } => {
            DeskConfig::default().generate().write(&out)?;
            println!("wrote {}/sparse and {}/images", out.display(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
