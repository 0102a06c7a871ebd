use std::collections::BTreeMap;

use nalgebra::Matrix3;
use proptest::prelude::*;

use orthosplat::discrepancy::{discrepancy_map, log_filter, LogConfig};
use orthosplat::field::{logit, sigmoid, Gaussian, GaussianField};
use orthosplat::key_region::{barycentric, rasterize_mask, MeshVertex, TriangleMesh2D};
use orthosplat::raster::{GrayImage, Mask, RgbImage};
use orthosplat::render::{ortho_cov, render, OrthoViewBox, RasterConfig, UpAxis, View};
use orthosplat::scene::{parse_points3d, write_points3d, SparsePoint, TrackEntry};

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn gray(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0..1.0f64, w * h).prop_map(move |data| GrayImage {
        width: w,
        height: h,
        data,
    })
}

fn gaussian() -> impl Strategy<Value = Gaussian> {
    (
        prop::array::uniform3(-0.9..0.9f64),
        prop::array::uniform3(-4.0..-1.0f64),
        prop::array::uniform4(-1.0..1.0f64),
        -4.0..4.0f64,
        prop::array::uniform3(0.0..1.0f64),
    )
        .prop_filter("non-zero quaternion", |(_, _, q, _, _)| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|(mean, log_scale, q, o, color)| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut g = Gaussian::isotropic(mean, 1.0, color, 0);
            g.log_scale = log_scale;
            g.rotation = q.map(|v| v / n);
            g.opacity_logit = o;
            g
        })
}

fn unit_box() -> OrthoViewBox {
    OrthoViewBox {
        l: -1.0,
        r: 1.0,
        b: -1.0,
        t: 1.0,
        z_n: -1.0,
        z_f: 1.0,
        up: UpAxis::Z,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn barycentric_recovers_weights(
        a in [coord(), coord()], b in [coord(), coord()], c in [coord(), coord()],
        raw in prop::array::uniform3(0.01..1.0f64),
    ) {
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        prop_assume!(area.abs() > 1.0);
        let s = raw.iter().sum::<f64>();
        let w = raw.map(|v| v / s);
        let p = [0, 1].map(|k| w[0] * a[k] + w[1] * b[k] + w[2] * c[k]);
        let got = barycentric(p, a, b, c).unwrap();
        prop_assert!((got.l1 + got.l2 + got.l3 - 1.0).abs() < 1e-12);
        prop_assert!(got.is_inside());
        for (x, y) in got.as_array().iter().zip(&w) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn log_is_linear(a in gray(12, 9), b in gray(12, 9), s in -3.0..3.0f64, t in -3.0..3.0f64) {
        let cfg = LogConfig::default();
        let mix = GrayImage {
            width: 12,
            height: 9,
            data: a.data.iter().zip(&b.data).map(|(x, y)| s * x + t * y).collect(),
        };
        let (fa, fb, fm) = (log_filter(&a, &cfg), log_filter(&b, &cfg), log_filter(&mix, &cfg));
        for i in 0..fm.data.len() {
            prop_assert!((fm.data[i] - (s * fa.data[i] + t * fb.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn region_shrinks_with_threshold(
        a in gray(10, 10), b in gray(10, 10),
        bits in prop::collection::vec(any::<bool>(), 100),
        lo in 0.01..0.5f64, extra in 0.0..0.5f64,
    ) {
        let rgb = |g: &GrayImage| RgbImage { width: 10, height: 10, data: g.data.iter().map(|&v| [v; 3]).collect() };
        let mask = Mask { width: 10, height: 10, bits };
        let cfg = LogConfig::default();
        let r_lo = discrepancy_map(&rgb(&a), &rgb(&b), &mask, lo, &cfg).unwrap().region;
        let r_hi = discrepancy_map(&rgb(&a), &rgb(&b), &mask, lo + extra, &cfg).unwrap().region;
        prop_assert!(r_hi.is_subset_of(&r_lo));
        prop_assert!(r_lo.is_subset_of(&mask));
    }

    #[test]
    fn covariance_is_spd(g in gaussian()) {
        let eig = g.covariance().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= 1e-14);
    }

    #[test]
    fn opacity_stays_open(x in -700.0..700.0f64) {
        let o = sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&o));
        if x.abs() < 20.0 {
            prop_assert!(o > 0.0 && o < 1.0);
            prop_assert!((logit(o) - x).abs() < 1e-6);
        }
    }

    #[test]
    fn ortho_cov_ignores_vertical_spread(
        xx in 0.01..4.0f64, yy in 0.01..4.0f64, rho in -0.9..0.9f64, zz in 0.01..100.0f64, k in 1.0..1e4f64,
    ) {
        let xy = rho * (xx * yy).sqrt();
        let cov = Matrix3::new(xx, xy, 0.0, xy, yy, 0.0, 0.0, 0.0, zz);
        let mut tall = cov;
        tall[(2, 2)] *= k;
        let a = ortho_cov(&cov, &unit_box(), 33, 17, 0.3);
        prop_assert_eq!(a, ortho_cov(&tall, &unit_box(), 33, 17, 0.3));
        prop_assert_eq!(a[(0, 1)], a[(1, 0)]);
    }

    #[test]
    fn adding_a_splat_never_lowers_alpha(gs in prop::collection::vec(gaussian(), 1..6), extra in gaussian()) {
        let view = View::Ortho { view_box: unit_box(), width: 16, height: 16 };
        let cfg = RasterConfig::default();
        let mut field = GaussianField::empty(2.0);
        for g in gs {
            field.push(g);
        }
        let (before, _) = render(&field, &view, [0.0; 3], &cfg);
        field.push(extra);
        let (after, _) = render(&field, &view, [0.0; 3], &cfg);
        for (b, a) in before.alpha.data.iter().zip(&after.alpha.data) {
            prop_assert!(*a <= 1.0);
            // early termination may stop a pixel just short of the new splat
            prop_assert!(*a >= *b - cfg.transmittance_min);
        }
    }

    #[test]
    fn mask_stays_inside_the_hull(pts in prop::collection::vec([0.0..24.0f64, 0.0..24.0f64], 3..12)) {
        let vertices: Vec<MeshVertex> = pts
            .iter()
            .map(|&[x, y]| MeshVertex { pixel: [x, y], position: [x, y, 0.0], color: [0.0; 3], depth: 1.0 })
            .collect();
        let triangles = orthosplat::delaunay::delaunay(&pts);
        let mesh = TriangleMesh2D { vertices, triangles };
        let mask = rasterize_mask(&mesh, 24, 24);
        for y in 0..24 {
            for x in 0..24 {
                if !mask.get(x, y) {
                    continue;
                }
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let inside = (0..mesh.triangles.len()).any(|t| {
                    let [a, b, c] = mesh.corners(t);
                    barycentric(p, a, b, c).map(|w| w.as_array().iter().all(|&v| v >= -1e-9)).unwrap_or(false)
                });
                prop_assert!(inside, "pixel ({x}, {y}) outside every triangle");
            }
        }
    }

    #[test]
    fn points_round_trip_through_text(
        raw in prop::collection::vec(
            (prop::array::uniform3(-1e3..1e3f64), prop::array::uniform3(any::<u8>()), 0.0..5.0f64, 1u32..20, 0u32..500),
            1..20,
        ),
    ) {
        let points: BTreeMap<u64, SparsePoint> = raw
            .into_iter()
            .enumerate()
            .map(|(i, (position, rgb, error, image_id, idx))| {
                let id = 1 + 3 * i as u64;
                let p = SparsePoint {
                    point3d_id: id,
                    position,
                    color: rgb.map(|c| c as f64 / 255.0),
                    error,
                    track: vec![TrackEntry { image_id, point2d_idx: idx }],
                };
                (id, p)
            })
            .collect();
        let parsed = parse_points3d(&write_points3d(&points)).unwrap();
        prop_assert_eq!(parsed.skipped_empty_tracks, 0);
        prop_assert_eq!(parsed.points, points);
    }
}
