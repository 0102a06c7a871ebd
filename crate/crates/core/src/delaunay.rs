//! Incremental Bowyer–Watson Delaunay triangulation on exact predicates.
//!
//! Orientation and in-circle tests go through adaptive-precision predicates,
//! so gridded inputs with many cocircular quadruples triangulate without
//! inconsistencies. Cocircular ties are resolved afterwards: of the two
//! possible diagonals of a cocircular quad, the one touching the lowest
//! vertex index is kept.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

#[inline]
fn c(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

pub fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    orient2d(c(a), c(b), c(p))
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`.
pub fn in_circle(a: [f64; 2], b: [f64; 2], cc: [f64; 2], d: [f64; 2]) -> f64 {
    incircle(c(a), c(b), c(cc), c(d))
}

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    // float circumcircle used only as a conservative prefilter
    center: [f64; 2],
    r2: f64,
    alive: bool,
}

fn circumcircle(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> ([f64; 2], f64) {
    let bx = b[0] - a[0];
    let by = b[1] - a[1];
    let cx = p[0] - a[0];
    let cy = p[1] - a[1];
    let d = 2.0 * (bx * cy - by * cx);
    if d == 0.0 || !d.is_finite() {
        return ([0.0, 0.0], f64::INFINITY);
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let r2 = ux * ux + uy * uy;
    let ex = p[0] - b[0];
    let ey = p[1] - b[1];
    let longest = b2.max(c2).max(ex * ex + ey * ey);
    if r2 > 1e6 * longest {
        // sliver: float circumcenter is unreliable, always test exactly
        return ([0.0, 0.0], f64::INFINITY);
    }
    ([a[0] + ux, a[1] + uy], r2)
}

/// Triangulates `points`, returning counter-clockwise vertex index triples
/// (smallest index first, sorted). Fewer than three points, or all points
/// collinear, yield an empty triangulation.
pub fn delaunay(points: &[[f64; 2]]) -> Vec<[usize; 3]> {
    let n = points.len();
    if n < 3 || points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Vec::new();
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let mid = [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5];
    let k = span * 1e6;
    let mut verts: Vec<[f64; 2]> = points.to_vec();
    verts.push([mid[0] - 2.0 * k, mid[1] - k]);
    verts.push([mid[0] + 2.0 * k, mid[1] - k]);
    verts.push([mid[0], mid[1] + 2.0 * k]);

    let make = |verts: &[[f64; 2]], v: [usize; 3]| {
        let (center, r2) = circumcircle(verts[v[0]], verts[v[1]], verts[v[2]]);
        Tri {
            v,
            center,
            r2,
            alive: true,
        }
    };

    let mut tris = vec![make(&verts, [n, n + 1, n + 2])];
    let mut bad: Vec<usize> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let mut boundary: Vec<(usize, usize)> = Vec::new();

    for pi in 0..n {
        let p = verts[pi];
        bad.clear();
        for (ti, t) in tris.iter().enumerate() {
            if !t.alive {
                continue;
            }
            let dx = p[0] - t.center[0];
            let dy = p[1] - t.center[1];
            let d2 = dx * dx + dy * dy;
            // reject only when clearly outside; borderline cases go exact
            if t.r2.is_finite() && d2 > t.r2 * (1.0 + 1e-6) + 1e-9 {
                continue;
            }
            if in_circle(verts[t.v[0]], verts[t.v[1]], verts[t.v[2]], p) > 0.0 {
                bad.push(ti);
            }
        }
        if bad.is_empty() {
            // coincides with an existing vertex
            continue;
        }
        edges.clear();
        for &ti in &bad {
            let v = tris[ti].v;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        boundary.clear();
        for &ti in &bad {
            let v = tris[ti].v;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                if edges[&(e.0.min(e.1), e.0.max(e.1))] == 1 {
                    boundary.push(e);
                }
            }
            tris[ti].alive = false;
        }
        for &(a, b) in &boundary {
            tris.push(make(&verts, [a, b, pi]));
        }
        if tris.len() > 4 * n + 64 && tris.iter().filter(|t| !t.alive).count() * 2 > tris.len() {
            tris.retain(|t| t.alive);
        }
    }

    let mut out: Vec<[usize; 3]> = tris
        .iter()
        .filter(|t| t.alive && t.v.iter().all(|&i| i < n))
        .map(|t| t.v)
        .collect();
    resolve_cocircular(points, &mut out);
    for t in out.iter_mut() {
        *t = canonical(*t);
    }
    out.sort_unstable();
    out
}

fn canonical(t: [usize; 3]) -> [usize; 3] {
    let m = (0..3).min_by_key(|&i| t[i]).unwrap();
    [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
}

/// Flips diagonals of cocircular quads so that the kept diagonal touches the
/// quad's lowest vertex index.
fn resolve_cocircular(points: &[[f64; 2]], tris: &mut [[usize; 3]]) {
    for _round in 0..(tris.len() + 8) {
        let mut edge_map: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (ti, t) in tris.iter().enumerate() {
            for k in 0..3 {
                let (a, b, opp) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                edge_map.entry((a.min(b), a.max(b))).or_default().push((ti, opp));
            }
        }
        let mut keys: Vec<_> = edge_map.keys().copied().collect();
        keys.sort_unstable();
        let mut touched = vec![false; tris.len()];
        let mut flipped = false;
        for key in keys {
            let sides = &edge_map[&key];
            if sides.len() != 2 {
                continue;
            }
            let (t1, cv) = sides[0];
            let (t2, dv) = sides[1];
            if touched[t1] || touched[t2] {
                continue;
            }
            let (a, b) = key;
            let lowest = a.min(b).min(cv).min(dv);
            if lowest == a || lowest == b {
                continue;
            }
            // orient the edge as it appears in t1
            let tr = tris[t1];
            let k = (0..3).find(|&k| tr[(k + 2) % 3] == cv).unwrap();
            let (ea, eb) = (tr[k], tr[(k + 1) % 3]);
            if in_circle(points[ea], points[eb], points[cv], points[dv]) != 0.0 {
                continue;
            }
            // quad ccw: ea, dv, eb, cv
            if orient(points[cv], points[ea], points[dv]) <= 0.0
                || orient(points[dv], points[eb], points[cv]) <= 0.0
            {
                continue;
            }
            tris[t1] = [ea, dv, cv];
            tris[t2] = [dv, eb, cv];
            touched[t1] = true;
            touched[t2] = true;
            flipped = true;
        }
        if !flipped {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_degenerate() {
        assert_eq!(delaunay(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).len(), 1);
        assert!(delaunay(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_empty());
        assert!(delaunay(&[[0.0, 0.0], [1.0, 1.0]]).is_empty());
        assert!(delaunay(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).is_empty());
    }

    #[test]
    fn square_prefers_lowest_index_diagonal() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let t = delaunay(&sq);
        assert_eq!(t.len(), 2);
        // both triangles contain vertex 0, so the diagonal is 0-2
        assert!(t.iter().all(|tri| tri.contains(&0)));
        let sq2 = [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let t2 = delaunay(&sq2);
        assert!(t2.iter().all(|tri| tri.contains(&0)));
    }

    #[test]
    fn duplicates_are_ignored() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let t = delaunay(&pts);
        assert_eq!(t.len(), 1);
        assert!(!t[0].contains(&3));
    }

    #[test]
    fn output_is_ccw() {
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|i| {
                let a = i as f64 * 2.399;
                [a.cos() * (i as f64).sqrt(), a.sin() * (i as f64).sqrt()]
            })
            .collect();
        for t in delaunay(&pts) {
            assert!(orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0);
        }
    }
}
