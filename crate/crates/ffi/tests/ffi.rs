use std::ffi::{CStr, CString};
use std::ptr;

use orthosplat::synthetic::DeskConfig;
use orthosplat_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(os_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(os_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        let mut field = ptr::null_mut();
        assert_eq!(os_field_load(ptr::null(), &mut field), OsStatus::NullArgument);
        assert!(field.is_null());
        assert!(last_error().contains("path"));
        assert_eq!(os_field_len(ptr::null()), 0);
        os_field_free(ptr::null_mut());
        os_raster_free(ptr::null_mut());
        os_engine_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_reports_io() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("missing.ply"));
    let mut field = ptr::null_mut();
    let status = unsafe { os_field_load(path.as_ptr(), &mut field) };
    assert_eq!(status, OsStatus::Io);
    assert!(last_error().contains("missing.ply"));
}

#[test]
fn stream_render_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    DeskConfig::default().generate().write(dir.path()).unwrap();
    let scene = cstr(&dir.path().join("sparse"));
    let images = cstr(&dir.path().join("images"));
    unsafe {
        let mut cfg = std::mem::zeroed::<OsRunConfig>();
        assert_eq!(os_run_config_default(&mut cfg), OsStatus::Ok);
        assert_eq!(cfg.init_iters, 2000);
        cfg.init_iters = 5;
        cfg.per_frame_iters = 2;
        cfg.gsd = 0.05;

        let mut engine = ptr::null_mut();
        let status = os_engine_new(scene.as_ptr(), images.as_ptr(), ptr::null(), &cfg, &mut engine);
        assert_eq!(status, OsStatus::Ok, "{}", last_error());
        assert_eq!(os_engine_initialize(engine), OsStatus::Ok);

        let mut frames = 0;
        let mut report = std::mem::zeroed::<OsFrameReport>();
        loop {
            let mut raster = ptr::null_mut();
            match os_engine_step(engine, &mut report, &mut raster) {
                OsStatus::Ok => {}
                OsStatus::Done => break,
                s => panic!("{s:?}: {}", last_error()),
            }
            assert_eq!(report.frame, 3 + frames);
            let (w, h) = (os_raster_width(raster), os_raster_height(raster));
            assert!(w > 0 && h > 0);
            let mut buf = vec![0u8; w * h * 4];
            assert_eq!(os_raster_copy_rgba(raster, buf.as_mut_ptr(), buf.len() - 1), OsStatus::BufferTooSmall);
            assert_eq!(os_raster_copy_rgba(raster, buf.as_mut_ptr(), buf.len()), OsStatus::Ok);
            let (mut gsd, mut ox, mut oy) = (0.0, 0.0, 0.0);
            assert_eq!(os_raster_georef(raster, &mut gsd, &mut ox, &mut oy), OsStatus::Ok);
            assert_eq!(gsd, 0.05);
            os_raster_free(raster);
            frames += 1;
        }
        assert_eq!(frames, 6);

        let mut field = ptr::null_mut();
        assert_eq!(os_engine_field(engine, &mut field), OsStatus::Ok);
        let n = os_field_len(field);
        assert_eq!(n as u64, report.field_size);
        let ckpt = cstr(&dir.path().join("field.ply"));
        assert_eq!(os_field_save(field, ckpt.as_ptr()), OsStatus::Ok);
        os_field_free(field);
        os_engine_free(engine);

        let mut reloaded = ptr::null_mut();
        assert_eq!(os_field_load(ckpt.as_ptr(), &mut reloaded), OsStatus::Ok);
        assert_eq!(os_field_len(reloaded), n);

        let bad = OsViewBox {
            l: 1.0,
            r: 0.0,
            b: 0.0,
            t: 1.0,
            z_n: 0.0,
            z_f: 1.0,
            up: OsUpAxis::Z,
        };
        let mut raster = ptr::null_mut();
        assert_eq!(os_render_tdom(reloaded, &bad, 0.1, &mut raster), OsStatus::InvalidViewBox);
        assert!(raster.is_null());

        let vb = OsViewBox {
            l: -1.0,
            r: 1.0,
            b: -1.0,
            t: 1.0,
            z_n: -0.5,
            z_f: 1.0,
            up: OsUpAxis::Z,
        };
        assert_eq!(os_render_tdom(reloaded, &vb, 0.1, &mut raster), OsStatus::Ok);
        assert_eq!((os_raster_width(raster), os_raster_height(raster)), (20, 20));
        let stem = cstr(&dir.path().join("ortho"));
        assert_eq!(os_raster_write(raster, stem.as_ptr()), OsStatus::Ok);
        assert!(dir.path().join("ortho.png").exists() && dir.path().join("ortho.pgw").exists());
        os_raster_free(raster);
        os_field_free(reloaded);
    }
}
