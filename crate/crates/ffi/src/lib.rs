//! C ABI over the orthosplat engine.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`OsStatus`]; on failure a description is available from
//! [`os_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use orthosplat::field::GaussianField;
use orthosplat::pipeline::{self, Engine, RunConfig};
use orthosplat::render::{OrthoViewBox, RasterConfig, UpAxis};
use orthosplat::tdom::{self, TdomRaster};
use orthosplat::trainer::TrainConfig;
use orthosplat::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    /// `os_engine_step`: the stream has no more frames.
    Done = 1,
    NullArgument = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    EmptyCloud = 6,
    InvalidViewBox = 7,
    Checkpoint = 8,
    Config = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OsUpAxis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl From<OsUpAxis> for UpAxis {
    fn from(a: OsUpAxis) -> Self {
        match a {
            OsUpAxis::X => UpAxis::X,
            OsUpAxis::Y => UpAxis::Y,
            OsUpAxis::Z => UpAxis::Z,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OsViewBox {
    pub l: f64,
    pub r: f64,
    pub b: f64,
    pub t: f64,
    pub z_n: f64,
    pub z_f: f64,
    pub up: OsUpAxis,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OsRunConfig {
    pub init_frames: u32,
    pub init_iters: u32,
    pub per_frame_iters: u32,
    pub gm: f64,
    pub h_t: u32,
    /// Scene units per TDOM pixel; zero or negative selects automatic.
    pub gsd: f64,
    pub up: OsUpAxis,
    pub seed: u64,
    pub prune: bool,
    pub seed_cap: u32,
}

/// Outcome of one streamed frame. `psnr_new_view` is NaN when the frame
/// had no key region.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OsFrameReport {
    pub frame: u32,
    pub seeds_added: u64,
    pub field_size: u64,
    pub iters: u32,
    pub adopt_seconds: f64,
    pub psnr_new_view: f64,
}

pub struct OsField(GaussianField);

pub struct OsRaster(TdomRaster);

pub struct OsEngine(Engine);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> OsStatus {
    match e {
        Error::Parse { .. } | Error::UnsupportedModel(_) => OsStatus::Parse,
        Error::Stream { .. } | Error::Io { .. } => OsStatus::Io,
        Error::EmptyCloud => OsStatus::EmptyCloud,
        Error::InvalidViewBox(_) => OsStatus::InvalidViewBox,
        Error::Checkpoint { .. } => OsStatus::Checkpoint,
        Error::Config(_) => OsStatus::Config,
        Error::DegenerateTriangle(_) | Error::DimensionMismatch(_) => OsStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<OsStatus, (OsStatus, String)>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            OsStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (OsStatus, String)>;
}

impl<T> IntoFfi<T> for orthosplat::Result<T> {
    fn ffi(self) -> Result<T, (OsStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (OsStatus, String) {
    (OsStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (OsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (OsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn os_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn os_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// field

/// Loads a checkpoint written by `os_field_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn os_field_load(path: *const c_char, out: *mut *mut OsField) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let field = GaussianField::load_checkpoint(&path).ffi()?;
        *out = Box::into_raw(Box::new(OsField(field)));
        Ok(OsStatus::Ok)
    })
}

/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn os_field_save(field: *const OsField, path: *const c_char) -> OsStatus {
    guard(|| {
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let path = path_arg(path, "path")?;
        field.0.save_checkpoint(&path).ffi()?;
        Ok(OsStatus::Ok)
    })
}

/// Number of Gaussians, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_field_len(field: *const OsField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// # Safety
/// `field` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn os_field_free(field: *mut OsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Renders an orthophoto of `field` over `view_box` at `gsd` scene units
/// per pixel.
///
/// # Safety
/// `field` must be a live handle; `view_box` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn os_render_tdom(
    field: *const OsField,
    view_box: *const OsViewBox,
    gsd: f64,
    out: *mut *mut OsRaster,
) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let b = view_box.as_ref().ok_or_else(|| null("view_box"))?;
        let vb = OrthoViewBox {
            l: b.l,
            r: b.r,
            b: b.b,
            t: b.t,
            z_n: b.z_n,
            z_f: b.z_f,
            up: b.up.into(),
        };
        let raster = tdom::render_tdom(&field.0, &vb, gsd, &RasterConfig::default()).ffi()?;
        *out = Box::into_raw(Box::new(OsRaster(raster)));
        Ok(OsStatus::Ok)
    })
}

// ---------------------------------------------------------------------------
// raster

/// # Safety
/// `raster` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_raster_width(raster: *const OsRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.width())
}

/// # Safety
/// `raster` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_raster_height(raster: *const OsRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.height())
}

/// Writes gsd and the world position of the upper-left pixel center.
///
/// # Safety
/// `raster` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn os_raster_georef(
    raster: *const OsRaster,
    gsd: *mut f64,
    origin_x: *mut f64,
    origin_y: *mut f64,
) -> OsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if gsd.is_null() || origin_x.is_null() || origin_y.is_null() {
            return Err(null("output pointer"));
        }
        *gsd = r.0.gsd;
        *origin_x = r.0.origin[0];
        *origin_y = r.0.origin[1];
        Ok(OsStatus::Ok)
    })
}

/// Copies the raster as 8-bit RGBA rows into `buf` of `len` bytes, which
/// must hold `width * height * 4`.
///
/// # Safety
/// `raster` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn os_raster_copy_rgba(raster: *const OsRaster, buf: *mut u8, len: usize) -> OsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = r.0.width() * r.0.height() * 4;
        if len < need {
            return Err((OsStatus::BufferTooSmall, format!("need {need} bytes, got {len}")));
        }
        let rgba = r.0.to_rgba8();
        ptr::copy_nonoverlapping(rgba.as_raw().as_ptr(), buf, need);
        Ok(OsStatus::Ok)
    })
}

/// Writes `<stem>.png` and `<stem>.pgw`.
///
/// # Safety
/// `raster` must be a live handle and `stem` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn os_raster_write(raster: *const OsRaster, stem: *const c_char) -> OsStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        let stem = path_arg(stem, "stem")?;
        tdom::write_geo_outputs(&r.0, &stem).ffi()?;
        Ok(OsStatus::Ok)
    })
}

/// # Safety
/// `raster` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn os_raster_free(raster: *mut OsRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

// ---------------------------------------------------------------------------
// engine

/// Fills `cfg` with the default run configuration.
///
/// # Safety
/// `cfg` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn os_run_config_default(cfg: *mut OsRunConfig) -> OsStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("cfg is null");
        return OsStatus::NullArgument;
    };
    let t = TrainConfig::default();
    *cfg = OsRunConfig {
        init_frames: t.init_frames as u32,
        init_iters: t.init_iters as u32,
        per_frame_iters: t.per_frame_iters as u32,
        gm: t.gm,
        h_t: t.h_t as u32,
        gsd: 0.0,
        up: OsUpAxis::Z,
        seed: t.seed,
        prune: t.prune,
        seed_cap: t.seed_cap as u32,
    };
    OsStatus::Ok
}

/// Opens a scene for streaming. `order` may be null for ascending image ids.
///
/// # Safety
/// String arguments must be NUL-terminated; `cfg` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn os_engine_new(
    scene_dir: *const c_char,
    images_dir: *const c_char,
    order: *const c_char,
    cfg: *const OsRunConfig,
    out: *mut *mut OsEngine,
) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let scene = path_arg(scene_dir, "scene_dir")?;
        let images = path_arg(images_dir, "images_dir")?;
        let order = if order.is_null() {
            None
        } else {
            Some(path_arg(order, "order")?)
        };
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let run = RunConfig {
            train: TrainConfig {
                init_frames: c.init_frames as usize,
                init_iters: c.init_iters as usize,
                per_frame_iters: c.per_frame_iters as usize,
                gm: c.gm,
                h_t: c.h_t as usize,
                seed: c.seed,
                prune: c.prune,
                seed_cap: c.seed_cap as usize,
                ..TrainConfig::default()
            },
            gsd: (c.gsd > 0.0).then_some(c.gsd),
            up: c.up.into(),
            ..RunConfig::default()
        };
        let stream = pipeline::open_stream(&scene, &images, order.as_deref()).ffi()?;
        let engine = Engine::new(stream, run).ffi()?;
        *out = Box::into_raw(Box::new(OsEngine(engine)));
        Ok(OsStatus::Ok)
    })
}

/// Consumes the first frames and runs the initial fit.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_engine_initialize(engine: *mut OsEngine) -> OsStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        e.0.initialize().ffi()?;
        Ok(OsStatus::Ok)
    })
}

/// Processes one frame. On `Ok`, fills `report` and, if `raster` is not
/// null, stores a new TDOM handle the caller must free. Returns `Done` when
/// the stream is exhausted.
///
/// # Safety
/// `engine` must be a live handle; `report` a valid pointer; `raster` null
/// or valid.
#[no_mangle]
pub unsafe extern "C" fn os_engine_step(
    engine: *mut OsEngine,
    report: *mut OsFrameReport,
    raster: *mut *mut OsRaster,
) -> OsStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        let report = report.as_mut().ok_or_else(|| null("report"))?;
        if !raster.is_null() {
            *raster = ptr::null_mut();
        }
        let Some(frame) = e.0.step().ffi()? else {
            return Ok(OsStatus::Done);
        };
        let r = &frame.report;
        *report = OsFrameReport {
            frame: r.frame as u32,
            seeds_added: r.seeds_added as u64,
            field_size: r.field_size as u64,
            iters: r.iters as u32,
            adopt_seconds: r.adopt_seconds,
            psnr_new_view: r.psnr_new_view.unwrap_or(f64::NAN),
        };
        if !raster.is_null() {
            *raster = Box::into_raw(Box::new(OsRaster(frame.tdom)));
        }
        Ok(OsStatus::Ok)
    })
}

/// Copies the engine's current field into a new handle.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn os_engine_field(engine: *const OsEngine, out: *mut *mut OsField) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let field = e
            .0
            .field()
            .ok_or_else(|| (OsStatus::Config, "engine not initialized".to_string()))?;
        *out = Box::into_raw(Box::new(OsField(field.clone())));
        Ok(OsStatus::Ok)
    })
}

/// # Safety
/// `engine` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn os_engine_free(engine: *mut OsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}
