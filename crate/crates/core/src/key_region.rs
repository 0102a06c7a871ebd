//! Key-region masking and barycentric seed sampling.
//!
//! Visible reprojections of the sparse cloud are Delaunay-triangulated in
//! the image plane. The union of the surviving triangles is the key region:
//! the only pixels that take part in optimization. The same triangles carry
//! 3D vertex positions and colors, so any pixel inside a triangle can be
//! lifted to a 3D point and a color by barycentric interpolation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delaunay::delaunay;
use crate::error::{Error, Result};
use crate::geometry::ProjectedPoint;
use crate::raster::{Mask, Rgb, RgbImage};
use crate::scene::SparsePoint;

pub type KeyRegionMask = Mask;

/// Triangles below this 2D area (px²) are treated as degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;
/// Boundary tolerance for inside tests on barycentric weights.
pub const INSIDE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshVertex {
    pub pixel: [f64; 2],
    pub position: [f64; 3],
    pub color: Rgb,
    /// Camera-space depth of `position` in the frame the mesh was built for.
    pub depth: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh2D {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh2D {
    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|i| self.vertices[i].pixel)
    }

    pub fn area(&self, t: usize) -> f64 {
        triangle_area(self.corners(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshConfig {
    /// Longest allowed edge as a fraction of the image diagonal.
    pub max_edge_fraction: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            max_edge_fraction: 0.25,
        }
    }
}

pub fn triangle_area(p: [[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs()
}

/// Triangulates visible reprojections and drops degenerate and overlong triangles.
///
/// `points` must contain every id referenced by `projections` (sorted by id,
/// as in a frame's cloud snapshot).
pub fn build_mesh(
    projections: &[ProjectedPoint],
    points: &[SparsePoint],
    width: usize,
    height: usize,
    cfg: &MeshConfig,
) -> TriangleMesh2D {
    let vertices: Vec<MeshVertex> = projections
        .iter()
        .filter_map(|pp| {
            let idx = points
                .binary_search_by_key(&pp.point3d_id, |p| p.point3d_id)
                .ok()?;
            let sp = &points[idx];
            Some(MeshVertex {
                pixel: pp.pixel,
                position: sp.position,
                color: sp.color,
                depth: pp.depth,
            })
        })
        .collect();
    let pixels: Vec<[f64; 2]> = vertices.iter().map(|v| v.pixel).collect();
    let diag = ((width * width + height * height) as f64).sqrt();
    let max_edge = cfg.max_edge_fraction * diag;
    let triangles = delaunay(&pixels)
        .into_iter()
        .filter(|t| {
            let p = t.map(|i| pixels[i]);
            let long = (0..3).any(|k| {
                let a = p[k];
                let b = p[(k + 1) % 3];
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() > max_edge
            });
            triangle_area(p) >= MIN_TRIANGLE_AREA && !long
        })
        .collect();
    TriangleMesh2D {
        vertices,
        triangles,
    }
}

/// Barycentric weights of a point relative to a triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarycentricWeights {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl BarycentricWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn is_inside(&self) -> bool {
        self.as_array().iter().all(|&l| l >= -INSIDE_EPS)
    }

    pub fn is_strictly_inside(&self) -> bool {
        self.as_array().iter().all(|&l| l > 0.0 && l < 1.0)
    }
}

pub fn barycentric(s: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2]) -> Result<BarycentricWeights> {
    let [x1, y1] = p1;
    let [x2, y2] = p2;
    let [x3, y3] = p3;
    let [xs, ys] = s;
    let den = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
    if 0.5 * den.abs() < MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateTriangle(0.5 * den.abs()));
    }
    let l1 = ((y2 - y3) * (xs - x3) + (x3 - x2) * (ys - y3)) / den;
    let l2 = ((y3 - y1) * (xs - x3) + (x1 - x3) * (ys - y3)) / den;
    Ok(BarycentricWeights {
        l1,
        l2,
        l3: 1.0 - l1 - l2,
    })
}

pub fn lift_to_3d(w: &BarycentricWeights, p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|k| w.l1 * p1[k] + w.l2 * p2[k] + w.l3 * p3[k])
}

pub fn interp_color(w: &BarycentricWeights, c1: Rgb, c2: Rgb, c3: Rgb) -> Rgb {
    std::array::from_fn(|k| (w.l1 * c1[k] + w.l2 * c2[k] + w.l3 * c3[k]).clamp(0.0, 1.0))
}

/// Key for the per-triangle sample sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleKey {
    pub seed: u64,
    pub frame: u32,
    pub triangle: u32,
}

impl SampleKey {
    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.frame as u64) << 32) | self.triangle as u64);
        rng
    }
}

/// Draws `count` points uniformly distributed over the triangle's interior.
///
/// Uniform pairs `(r1, r2)` are warped to barycentric weights
/// `(1 − √r1, √r1 (1 − r2), √r1 r2)`.
pub fn sample_triangle(tri: [[f64; 2]; 3], count: usize, key: SampleKey) -> Vec<[f64; 2]> {
    if triangle_area(tri) < MIN_TRIANGLE_AREA {
        return Vec::new();
    }
    let mut rng = key.rng();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        if r1 <= 0.0 || r2 <= 0.0 {
            continue;
        }
        let s = r1.sqrt();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let p = [
            w[0] * tri[0][0] + w[1] * tri[1][0] + w[2] * tri[2][0],
            w[0] * tri[0][1] + w[1] * tri[1][1] + w[2] * tri[2][1],
        ];
        // rounding can push points that hug an edge onto it
        match barycentric(p, tri[0], tri[1], tri[2]) {
            Ok(b) if b.is_strictly_inside() => out.push(p),
            _ => continue,
        }
    }
    out
}

/// A sampled pixel lifted into the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledSeed {
    pub pixel: [f64; 2],
    pub weights: BarycentricWeights,
    pub position: [f64; 3],
    pub color: Rgb,
    pub triangle: usize,
    /// Mean distance between neighbouring samples in this triangle, px.
    pub spacing_px: f64,
    /// Scene units covered by one pixel at the seed's depth.
    pub units_per_px: f64,
}

/// Lifts one sample of triangle `t` using barycentric interpolation of the
/// vertex positions, colors and depths.
pub fn lift_sample(mesh: &TriangleMesh2D, t: usize, pixel: [f64; 2], h_t: usize, focal: f64) -> Result<SampledSeed> {
    let [a, b, c] = mesh.triangles[t].map(|i| &mesh.vertices[i]);
    let w = barycentric(pixel, a.pixel, b.pixel, c.pixel)?;
    let depth = w.l1 * a.depth + w.l2 * b.depth + w.l3 * c.depth;
    Ok(SampledSeed {
        pixel,
        weights: w,
        position: lift_to_3d(&w, a.position, b.position, c.position),
        color: interp_color(&w, a.color, b.color, c.color),
        triangle: t,
        spacing_px: (mesh.area(t) / h_t as f64).sqrt(),
        units_per_px: depth / focal,
    })
}

/// Marks every pixel whose center lies inside or on a mesh triangle.
pub fn rasterize_mask(mesh: &TriangleMesh2D, width: usize, height: usize) -> KeyRegionMask {
    let mut mask = Mask::empty(width, height);
    for t in 0..mesh.triangles.len() {
        let p = mesh.corners(t);
        let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = ((xmin - 0.5).floor().max(0.0)) as usize;
        let y0 = ((ymin - 0.5).floor().max(0.0)) as usize;
        let x1 = ((xmax - 0.5).ceil().max(-1.0) as i64).min(width as i64 - 1);
        let y1 = ((ymax - 0.5).ceil().max(-1.0) as i64).min(height as i64 - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let idx = y * width + x;
                if mask.bits[idx] {
                    continue;
                }
                let s = [x as f64 + 0.5, y as f64 + 0.5];
                if let Ok(w) = barycentric(s, p[0], p[1], p[2]) {
                    if w.is_inside() {
                        mask.bits[idx] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Debug overlay: the image with the key region tinted and mesh vertices marked.
pub fn save_overlay(image: &RgbImage, mesh: &TriangleMesh2D, mask: &KeyRegionMask, path: &Path) -> Result<()> {
    let mut out = image.clone();
    for (px, &m) in out.data.iter_mut().zip(&mask.bits) {
        if !m {
            *px = px.map(|c| c * 0.35);
        }
    }
    for v in &mesh.vertices {
        let (x, y) = (v.pixel[0] as usize, v.pixel[1] as usize);
        if x < out.width && y < out.height {
            out.set(x, y, [1.0, 0.0, 1.0]);
        }
    }
    out.save_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barycentric_examples() {
        let (p1, p2, p3) = ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let w = barycentric(p1, p1, p2, p3).unwrap();
        assert_eq!(w.as_array(), [1.0, 0.0, 0.0]);
        let w = barycentric([1.0 / 3.0, 1.0 / 3.0], p1, p2, p3).unwrap();
        for l in w.as_array() {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        // solve s = Σ λi pi with Σ λi = 1 by hand: λ2 = 0.5, λ3 = 0.25
        let w = barycentric([0.5, 0.25], p1, p2, p3).unwrap();
        assert_eq!(w.as_array(), [0.25, 0.5, 0.25]);
        assert!(matches!(
            barycentric([0.0, 0.0], p1, [1.0, 1.0], [2.0, 2.0]),
            Err(Error::DegenerateTriangle(_))
        ));
    }

    #[test]
    fn lift_and_color_examples() {
        let one = BarycentricWeights { l1: 1.0, l2: 0.0, l3: 0.0 };
        assert_eq!(lift_to_3d(&one, [1.0, 2.0, 3.0], [9.0; 3], [7.0; 3]), [1.0, 2.0, 3.0]);
        let third = BarycentricWeights { l1: 1.0 / 3.0, l2: 1.0 / 3.0, l3: 1.0 / 3.0 };
        let p = lift_to_3d(&third, [0.0; 3], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2] == 0.0);
        let w = BarycentricWeights { l1: 0.25, l2: 0.5, l3: 0.25 };
        assert_eq!(lift_to_3d(&w, [0.0; 3], [4.0, 0.0, 0.0], [0.0, 0.0, 8.0]), [2.0, 0.0, 2.0]);
        assert_eq!(
            interp_color(&w, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            [0.25, 0.5, 0.25]
        );
        assert_eq!(interp_color(&third, [0.3; 3], [0.3; 3], [0.3; 3]).map(|c| (c * 1e9).round()), [0.3e9; 3]);
        assert_eq!(interp_color(&one, [0.1, 0.2, 0.3], [1.0; 3], [1.0; 3]), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn sampler_count_and_interior() {
        let tri = [[0.0, 0.0], [10.0, 0.0], [3.0, 7.0]];
        let key = SampleKey { seed: 1, frame: 2, triangle: 3 };
        assert_eq!(sample_triangle(tri, 1, key).len(), 1);
        let pts = sample_triangle(tri, 500, key);
        assert_eq!(pts.len(), 500);
        for p in &pts {
            assert!(barycentric(*p, tri[0], tri[1], tri[2]).unwrap().is_strictly_inside());
        }
        assert_eq!(pts, sample_triangle(tri, 500, key));
        assert_ne!(pts, sample_triangle(tri, 500, SampleKey { triangle: 4, ..key }));
        assert!(sample_triangle([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 5, key).is_empty());
    }

    #[test]
    fn sampler_is_uniform_over_congruent_subtriangles() {
        let (a, b, c) = ([0.0, 0.0], [8.0, 0.0], [2.0, 6.0]);
        let mid = |p: [f64; 2], q: [f64; 2]| [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        let subs = [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]];
        let pts = sample_triangle([a, b, c], 10_000, SampleKey { seed: 7, frame: 0, triangle: 0 });
        let mut counts = [0usize; 4];
        for p in &pts {
            let k = subs
                .iter()
                .position(|t| barycentric(*p, t[0], t[1], t[2]).unwrap().is_inside())
                .unwrap();
            counts[k] += 1;
        }
        // 5 sigma of Binomial(10^4, 1/4) is ~217; the contract is 150
        for n in counts {
            assert!((2350..=2650).contains(&n), "{counts:?}");
        }
    }

    fn mesh_of(pixels: &[[f64; 2]]) -> TriangleMesh2D {
        TriangleMesh2D {
            vertices: pixels
                .iter()
                .map(|&pixel| MeshVertex {
                    pixel,
                    position: [0.0; 3],
                    color: [0.0; 3],
                    depth: 1.0,
                })
                .collect(),
            triangles: delaunay(pixels),
        }
    }

    #[test]
    fn mask_examples() {
        assert!(rasterize_mask(&TriangleMesh2D::default(), 10, 10).is_empty());
        let full = mesh_of(&[[-1.0, -1.0], [30.0, -1.0], [-1.0, 30.0]]);
        assert_eq!(rasterize_mask(&full, 10, 10).count(), 100);
    }

    #[test]
    fn square_mask_matches_brute_force() {
        let sq = mesh_of(&[[20.0, 20.0], [70.0, 20.0], [70.0, 70.0], [20.0, 70.0]]);
        let mask = rasterize_mask(&sq, 100, 100);
        let mut expected = 0;
        for y in 0..100 {
            for x in 0..100 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if (20.0..=70.0).contains(&cx) && (20.0..=70.0).contains(&cy) {
                    expected += 1;
                }
            }
        }
        assert_eq!(mask.count(), expected);
        assert_eq!(expected, 50 * 50);
    }
}
