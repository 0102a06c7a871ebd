//! Orthophoto products: view-box policy, rendering and georeferenced output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::raster::{quantize, GrayImage, RgbImage};
use crate::render::{render, OrthoViewBox, RasterConfig, UpAxis, View};
use crate::scene::SparsePoint;
use crate::trainer::UpdateReport;

pub const DEFAULT_MARGIN: f64 = 0.02;
/// Smallest extent of any view-box axis, scene units.
pub const MIN_EXTENT: f64 = 1.0;
/// Output width used by the automatic GSD.
pub const AUTO_GSD_PIXELS: f64 = 1024.0;

/// Georeferenced nadir render.
#[derive(Clone, Debug, PartialEq)]
pub struct TdomRaster {
    pub pixels: RgbImage,
    /// Coverage per pixel; zero where no Gaussian landed.
    pub alpha: GrayImage,
    /// Scene units per pixel.
    pub gsd: f64,
    /// World (east, north) of the upper-left pixel center.
    pub origin: [f64; 2],
    pub up: UpAxis,
}

impl TdomRaster {
    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    /// World (east, north) of a pixel center.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> [f64; 2] {
        [self.origin[0] + col * self.gsd, self.origin[1] - row * self.gsd]
    }

    pub fn to_rgba8(&self) -> image::RgbaImage {
        let mut out = image::RgbaImage::new(self.width() as u32, self.height() as u32);
        for (i, px) in out.pixels_mut().enumerate() {
            let c = self.pixels.data[i];
            *px = image::Rgba([quantize(c[0]), quantize(c[1]), quantize(c[2]), quantize(self.alpha.data[i])]);
        }
        out
    }
}

fn padded(lo: f64, hi: f64, margin: f64) -> (f64, f64) {
    let pad = (hi - lo) * margin;
    let (lo, hi) = (lo - pad, hi + pad);
    if hi - lo < MIN_EXTENT {
        let mid = 0.5 * (lo + hi);
        (mid - 0.5 * MIN_EXTENT, mid + 0.5 * MIN_EXTENT)
    } else {
        (lo, hi)
    }
}

/// Axis-aligned bounds of the cloud in (east, north, up), each widened by
/// `margin` of its extent and floored at [`MIN_EXTENT`].
pub fn derive_view_box(cloud: &[SparsePoint], margin: f64, up: UpAxis) -> Result<OrthoViewBox> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud {
        let q = up.to_local(&p.position);
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    let (l, r) = padded(lo[0], hi[0], margin);
    let (b, t) = padded(lo[1], hi[1], margin);
    let (z_n, z_f) = padded(lo[2], hi[2], margin);
    let vb = OrthoViewBox {
        l,
        r,
        b,
        t,
        z_n,
        z_f,
        up,
    };
    vb.validate()?;
    Ok(vb)
}

/// Smallest box containing both.
pub fn union_box(a: &OrthoViewBox, b: &OrthoViewBox) -> OrthoViewBox {
    OrthoViewBox {
        l: a.l.min(b.l),
        r: a.r.max(b.r),
        b: a.b.min(b.b),
        t: a.t.max(b.t),
        z_n: a.z_n.min(b.z_n),
        z_f: a.z_f.max(b.z_f),
        up: a.up,
    }
}

pub fn auto_gsd(vb: &OrthoViewBox) -> f64 {
    (vb.r - vb.l) / AUTO_GSD_PIXELS
}

/// Raster size for a box at `gsd`.
pub fn raster_dims(vb: &OrthoViewBox, gsd: f64) -> (usize, usize) {
    // guard against 1023.9999999 style round-up
    let n = |extent: f64| ((extent / gsd) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (n(vb.r - vb.l), n(vb.t - vb.b))
}

/// Orthographic render of `field` over `vb` at `gsd`, white where empty.
/// The raster is anchored at the box's upper-left corner; its right and
/// bottom edges extend the box to whole pixels.
pub fn render_tdom(field: &GaussianField, vb: &OrthoViewBox, gsd: f64, cfg: &RasterConfig) -> Result<TdomRaster> {
    vb.validate()?;
    if !(gsd > 0.0) || !gsd.is_finite() {
        return Err(Error::Config(format!("gsd must be positive, got {gsd}")));
    }
    let (w, h) = raster_dims(vb, gsd);
    let snapped = OrthoViewBox {
        r: vb.l + w as f64 * gsd,
        b: vb.t - h as f64 * gsd,
        ..*vb
    };
    let view = View::Ortho {
        view_box: snapped,
        width: w,
        height: h,
    };
    let (out, _) = render(field, &view, [1.0; 3], cfg);
    Ok(TdomRaster {
        pixels: out.color,
        alpha: out.alpha,
        gsd,
        origin: [vb.l + 0.5 * gsd, vb.t - 0.5 * gsd],
        up: vb.up,
    })
}

/// Six-line ESRI world file body.
pub fn world_file(gsd: f64, origin: [f64; 2]) -> String {
    let mut s = String::new();
    for v in [gsd, 0.0, 0.0, -gsd, origin[0], origin[1]] {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

/// Parses a world file into its six coefficients.
pub fn parse_world_file(text: &str) -> Result<[f64; 6]> {
    let vals: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| l.parse().map_err(|_| Error::parse("world file", i + 1, format!("bad number `{l}`"))))
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| Error::parse("world file", v.len(), "expected 6 lines"))
}

/// Writes `<stem>.png` (RGBA) and `<stem>.pgw`.
pub fn write_geo_outputs(raster: &TdomRaster, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let png = stem.with_extension("png");
    let pgw = stem.with_extension("pgw");
    raster
        .to_rgba8()
        .save_with_format(&png, image::ImageFormat::Png)
        .map_err(|e| Error::io(&png, std::io::Error::other(e)))?;
    fs::write(&pgw, world_file(raster.gsd, raster.origin)).map_err(|e| Error::io(&pgw, e))?;
    Ok((png, pgw))
}

/// Per-run timing and growth summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub adopt_seconds: Vec<f64>,
    pub field_sizes: Vec<usize>,
    pub psnr: Vec<Option<f64>>,
}

impl RunMetrics {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a UpdateReport>) -> Self {
        let mut m = RunMetrics::default();
        for r in reports {
            m.adopt_seconds.push(r.adopt_seconds);
            m.field_sizes.push(r.field_size);
            m.psnr.push(r.psnr_new_view);
        }
        m
    }

    /// Reads a JSON-lines metrics file.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let reports = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<UpdateReport>(l)
                    .map_err(|e| Error::parse("metrics.jsonl", i + 1, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_reports(&reports))
    }

    pub fn frames(&self) -> usize {
        self.adopt_seconds.len()
    }

    pub fn mean_adopt(&self) -> Option<f64> {
        (self.frames() > 0).then(|| self.adopt_seconds.iter().sum::<f64>() / self.frames() as f64)
    }

    /// Frames per second of update time.
    pub fn fps(&self) -> Option<f64> {
        let total: f64 = self.adopt_seconds.iter().sum();
        (self.frames() > 0 && total > 0.0).then(|| self.frames() as f64 / total)
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:>8}  {:>14}  {:>8}", "frames", "mean Ad-opt s", "FPS");
        let _ = writeln!(s, "{:>8}  {:>14}  {:>8}", self.frames(), fmt(self.mean_adopt()), fmt(self.fps()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Gaussian;

    fn pt(p: [f64; 3]) -> SparsePoint {
        SparsePoint {
            point3d_id: 0,
            position: p,
            color: [0.0; 3],
            error: 0.0,
            track: vec![],
        }
    }

    #[test]
    fn margin_arithmetic() {
        let vb = derive_view_box(&[pt([0.0, 0.0, 0.0]), pt([100.0, 50.0, 10.0])], 0.02, UpAxis::Z).unwrap();
        assert!((vb.l + 2.0).abs() < 1e-12 && (vb.r - 102.0).abs() < 1e-12);
        assert!((vb.b + 1.0).abs() < 1e-12 && (vb.t - 51.0).abs() < 1e-12);
        assert!((vb.z_n + 0.2).abs() < 1e-12 && (vb.z_f - 10.2).abs() < 1e-12);
    }

    #[test]
    fn single_point_box() {
        let vb = derive_view_box(&[pt([3.0, 4.0, 5.0])], 0.02, UpAxis::Z).unwrap();
        assert_eq!((vb.r - vb.l, vb.t - vb.b, vb.z_f - vb.z_n), (1.0, 1.0, 1.0));
        assert!(matches!(derive_view_box(&[], 0.02, UpAxis::Z), Err(Error::EmptyCloud)));
    }

    #[test]
    fn world_file_fields() {
        let text = world_file(0.1, [12.5, 88.0]);
        assert_eq!(text, "0.1\n0.0\n0.0\n-0.1\n12.5\n88.0\n");
        assert_eq!(parse_world_file(&text).unwrap(), [0.1, 0.0, 0.0, -0.1, 12.5, 88.0]);
        assert!(parse_world_file("1\n2\n").is_err());
    }

    #[test]
    fn empty_field_is_white() {
        let vb = OrthoViewBox {
            l: 0.0,
            r: 1.0,
            b: 0.0,
            t: 1.0,
            z_n: -1.0,
            z_f: 1.0,
            up: UpAxis::Z,
        };
        let r = render_tdom(&GaussianField::empty(1.0), &vb, 0.1, &RasterConfig::default()).unwrap();
        assert_eq!((r.width(), r.height()), (10, 10));
        assert!(r.pixels.data.iter().all(|p| *p == [1.0; 3]));
        assert!(r.alpha.data.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn red_blob_at_center() {
        let vb = OrthoViewBox {
            l: -1.0,
            r: 1.0,
            b: -1.0,
            t: 1.0,
            z_n: -1.0,
            z_f: 1.0,
            up: UpAxis::Z,
        };
        let mut field = GaussianField::empty(1.0);
        let mut g = Gaussian::isotropic([0.0; 3], 0.1, [1.0, 0.0, 0.0], 0);
        g.opacity_logit = 4.0;
        field.push(g);
        let r = render_tdom(&field, &vb, 2.0 / 64.0, &RasterConfig::default()).unwrap();
        // the four pixels around (32, 32) are the reddest
        let redness = |x: usize, y: usize| {
            let c = r.pixels.get(x, y);
            c[0] - c[1]
        };
        let best = redness(31, 31);
        for (x, y) in [(31, 32), (32, 31), (32, 32)] {
            assert!((redness(x, y) - best).abs() < 1e-12);
        }
        for y in 0..64 {
            for x in 0..64 {
                assert!(redness(x, y) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn georeference_corners() {
        let vb = OrthoViewBox {
            l: 10.0,
            r: 13.05,
            b: 80.0,
            t: 88.0,
            z_n: 0.0,
            z_f: 1.0,
            up: UpAxis::Z,
        };
        let r = render_tdom(&GaussianField::empty(1.0), &vb, 0.1, &RasterConfig::default()).unwrap();
        assert_eq!((r.width(), r.height()), (31, 80));
        let ul = r.pixel_to_world(-0.5, -0.5);
        let lr = r.pixel_to_world(r.width() as f64 - 0.5, r.height() as f64 - 0.5);
        assert!((ul[0] - vb.l).abs() < 1e-9 && (ul[1] - vb.t).abs() < 1e-9);
        assert!((lr[0] - vb.r).abs() <= 0.1 && (lr[1] - vb.b).abs() <= 0.1);
    }

    #[test]
    fn metrics_summary() {
        let mut m = RunMetrics::default();
        assert_eq!(m.fps(), None);
        m.adopt_seconds = vec![1.0, 3.0];
        assert_eq!(m.fps(), Some(0.5));
        assert_eq!(m.mean_adopt(), Some(2.0));
    }
}
