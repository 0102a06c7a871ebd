//! End-to-end streaming run: initial fit, per-frame updates and TDOM output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::render::{OrthoViewBox, UpAxis};
use crate::scene::{FrameEvent, SceneStream, SparseScene};
use crate::tdom::{auto_gsd, derive_view_box, render_tdom, union_box, write_geo_outputs, TdomRaster, DEFAULT_MARGIN};
use crate::trainer::{TrainConfig, Trainer, UpdateReport};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "final.ply";

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `None` picks [`auto_gsd`] for each frame's box.
    pub gsd: Option<f64>,
    pub up: UpAxis,
    pub margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            gsd: None,
            up: UpAxis::Z,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Output of one streamed frame.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub report: UpdateReport,
    pub view_box: OrthoViewBox,
    pub tdom: TdomRaster,
}

/// Streaming engine. Call [`Engine::initialize`] once, then [`Engine::step`]
/// until it returns `None`.
pub struct Engine {
    stream: SceneStream,
    cfg: RunConfig,
    trainer: Option<Trainer>,
    view_box: Option<OrthoViewBox>,
}

impl Engine {
    pub fn new(stream: SceneStream, cfg: RunConfig) -> Result<Self> {
        cfg.train.validate()?;
        if let Some(g) = cfg.gsd {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gsd must be positive, got {g}")));
            }
        }
        Ok(Engine {
            stream,
            cfg,
            trainer: None,
            view_box: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn field(&self) -> Option<&GaussianField> {
        self.trainer.as_ref().map(|t| &t.field)
    }

    pub fn trainer(&self) -> Option<&Trainer> {
        self.trainer.as_ref()
    }

    pub fn view_box(&self) -> Option<&OrthoViewBox> {
        self.view_box.as_ref()
    }

    fn grow_box(&mut self, event: &FrameEvent) -> Result<OrthoViewBox> {
        let fresh = derive_view_box(&event.cloud_snapshot, self.cfg.margin, self.cfg.up)?;
        let vb = match &self.view_box {
            Some(prev) => union_box(prev, &fresh),
            None => fresh,
        };
        self.view_box = Some(vb);
        Ok(vb)
    }

    /// Consumes the first frames, seeds the field from their cloud and runs
    /// the initial fit. Returns the per-step losses.
    pub fn initialize(&mut self) -> Result<Vec<f64>> {
        if self.trainer.is_some() {
            return Err(Error::Config("engine already initialized".into()));
        }
        let mut events = Vec::new();
        while events.len() < self.cfg.train.init_frames {
            match self.stream.replay_next()? {
                Some(e) => events.push(e),
                None => break,
            }
        }
        let last = events.last().ok_or(Error::EmptyCloud)?;
        self.grow_box(last)?;
        let field = GaussianField::init_from_cloud(&last.cloud_snapshot, last.frame_index as u32)?;
        let mut trainer = Trainer::new(field, self.cfg.train.clone());
        for e in &events {
            let (_, mask) = trainer.key_region(e);
            trainer.register(e, mask);
        }
        let started = Instant::now();
        let losses = trainer.initial_fit(self.cfg.train.init_iters);
        info!(
            "initial fit: {} frames, {} Gaussians, {} iterations in {:.1}s",
            events.len(),
            trainer.field.len(),
            self.cfg.train.init_iters,
            started.elapsed().as_secs_f64()
        );
        self.trainer = Some(trainer);
        Ok(losses)
    }

    /// Processes the next frame: update, then render the TDOM.
    pub fn step(&mut self) -> Result<Option<FrameOutput>> {
        if self.trainer.is_none() {
            return Err(Error::Config("engine not initialized".into()));
        }
        let Some(event) = self.stream.replay_next()? else {
            return Ok(None);
        };
        let started = Instant::now();
        let trainer = self.trainer.as_mut().expect("initialized");
        let (mut report, _) = trainer.per_frame_update(&event)?;
        let vb = self.grow_box(&event)?;
        let gsd = self.cfg.gsd.unwrap_or_else(|| auto_gsd(&vb));
        let trainer = self.trainer.as_ref().expect("initialized");
        let tdom = render_tdom(&trainer.field, &vb, gsd, &trainer.cfg.raster)?;
        report.adopt_seconds = started.elapsed().as_secs_f64();
        info!(
            "frame {}: +{} seeds, {} Gaussians, PSNR {:?} -> {:?}, {:.2}s",
            report.frame, report.seeds_added, report.field_size, report.psnr_before, report.psnr_new_view, report.adopt_seconds
        );
        Ok(Some(FrameOutput {
            report,
            view_box: vb,
            tdom,
        }))
    }
}

/// Paths produced by [`run`].
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub tdoms: Vec<PathBuf>,
    pub reports: Vec<UpdateReport>,
    pub view_boxes: Vec<OrthoViewBox>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// Opens the scene and replays it, in `order` if given.
pub fn open_stream(scene_dir: &Path, images_dir: &Path, order: Option<&Path>) -> Result<SceneStream> {
    let scene = SparseScene::load(scene_dir)?;
    match order {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SceneStream::with_manifest(scene, images_dir, &text)
        }
        None => Ok(SceneStream::new(scene, images_dir)),
    }
}

/// Full run writing `tdom_XXXX.{png,pgw}`, `metrics.jsonl` and `final.ply`
/// into `out`.
pub fn run(stream: SceneStream, cfg: RunConfig, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics = out.join(METRICS_FILE);
    let mut writer = BufWriter::new(File::create(&metrics).map_err(|e| Error::io(&metrics, e))?);
    let mut engine = Engine::new(stream, cfg)?;
    engine.initialize()?;
    let mut summary = RunSummary {
        metrics: metrics.clone(),
        ..Default::default()
    };
    while let Some(frame) = engine.step()? {
        let stem = out.join(format!("tdom_{:04}", frame.report.frame));
        let (png, _) = write_geo_outputs(&frame.tdom, &stem)?;
        let line = serde_json::to_string(&frame.report).map_err(|e| Error::io(&metrics, std::io::Error::other(e)))?;
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(&metrics, e))?;
        summary.tdoms.push(png);
        summary.reports.push(frame.report);
        summary.view_boxes.push(frame.view_box);
    }
    let checkpoint = out.join(CHECKPOINT_FILE);
    engine.field().expect("initialized").save_checkpoint(&checkpoint)?;
    summary.checkpoint = checkpoint;
    Ok(summary)
}
