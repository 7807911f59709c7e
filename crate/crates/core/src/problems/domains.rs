//! Point-cloud generators for the benchmark domains.
//!
//! Unstructured domains are filled with a jittered lattice of spacing `h`;
//! lattice points closer than `h/2` to the boundary are dropped and the
//! boundary itself is sampled at arc-length spacing close to `h`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::PointCloud;

/// A point cloud plus the normalized arc-length position of boundary nodes
/// along their closed curve (`NaN` for interior and open-edge nodes).
#[derive(Clone, Debug)]
pub struct Domain {
    pub cloud: PointCloud,
    pub xi: Vec<f64>,
}

struct Builder {
    pts: Vec<[f64; 2]>,
    seg: Vec<i64>,
    xi: Vec<f64>,
}

impl Builder {
    fn new() -> Self {
        Self {
            pts: Vec::new(),
            seg: Vec::new(),
            xi: Vec::new(),
        }
    }

    fn push(&mut self, p: [f64; 2], seg: i64, xi: f64) {
        self.pts.push(p);
        self.seg.push(seg);
        self.xi.push(xi);
    }

    /// Jittered lattice over `[lo, hi]²`, keeping points inside and at least
    /// `h/2` away from every boundary point added so far.
    fn fill(&mut self, lo: [f64; 2], hi: [f64; 2], h: f64, inside: impl Fn([f64; 2]) -> bool, rng: &mut ChaCha8Rng) {
        let nb = self.pts.len();
        let bpts: Vec<[f64; 2]> = self.pts.clone();
        let nx = ((hi[0] - lo[0]) / h).ceil() as usize;
        let ny = ((hi[1] - lo[1]) / h).ceil() as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = [
                    lo[0] + i as f64 * h + 0.25 * h * rng.gen_range(-1.0..1.0),
                    lo[1] + j as f64 * h + 0.25 * h * rng.gen_range(-1.0..1.0),
                ];
                if !inside(p) {
                    continue;
                }
                let near = bpts[..nb]
                    .iter()
                    .any(|b| (b[0] - p[0]).powi(2) + (b[1] - p[1]).powi(2) < 0.25 * h * h);
                if !near {
                    self.push(p, -1, f64::NAN);
                }
            }
        }
    }

    fn finish(self) -> Domain {
        let n = self.pts.len();
        let coords = Array2::from_shape_fn((n, 2), |(i, j)| self.pts[i][j]);
        let mut cloud = PointCloud::interior(coords);
        for (i, &s) in self.seg.iter().enumerate() {
            cloud.segment_id[i] = s;
            cloud.boundary_mask[i] = s >= 0;
        }
        Domain { cloud, xi: self.xi }
    }
}

/// `n × n` lattice on `[lo, hi]²`, node `i·n + j` at `(x_i, y_j)`. Boundary
/// segments: 0 bottom, 1 right, 2 top, 3 left (left/right own the corners).
pub fn square_grid(n: usize, lo: f64, hi: f64) -> PointCloud {
    let h = (hi - lo) / (n - 1) as f64;
    let coords = Array2::from_shape_fn((n * n, 2), |(k, d)| lo + h * if d == 0 { k / n } else { k % n } as f64);
    let mut cloud = PointCloud::interior(coords);
    for k in 0..n * n {
        let (i, j) = (k / n, k % n);
        let seg = if i == 0 {
            3
        } else if i == n - 1 {
            1
        } else if j == 0 {
            0
        } else if j == n - 1 {
            2
        } else {
            -1
        };
        cloud.segment_id[k] = seg;
        cloud.boundary_mask[k] = seg >= 0;
    }
    cloud
}

/// `n` equispaced nodes on the circle `[0, length)`.
pub fn periodic_line(n: usize, length: f64) -> PointCloud {
    let h = length / n as f64;
    PointCloud::periodic(Array2::from_shape_fn((n, 1), |(i, _)| i as f64 * h), vec![length])
}

/// `n × n` nodes on the torus `[0, 1)²`, node `i·n + j` at `(i/n, j/n)`.
pub fn periodic_square(n: usize) -> PointCloud {
    let h = 1.0 / n as f64;
    let coords = Array2::from_shape_fn((n * n, 2), |(k, d)| h * if d == 0 { k / n } else { k % n } as f64);
    PointCloud::periodic(coords, vec![1.0, 1.0])
}

/// Points at equal arc-length spacing (about `h`) along a closed curve
/// `c(t)`, `t ∈ [0, 1)`, returned with their normalized arc length.
fn sample_closed_curve(c: impl Fn(f64) -> [f64; 2], h: f64) -> Vec<([f64; 2], f64)> {
    let fine = 8192;
    let pts: Vec<[f64; 2]> = (0..=fine).map(|i| c(i as f64 / fine as f64)).collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let m = ((total / h).round() as usize).max(3);
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    for q in 0..m {
        let s = total * q as f64 / m as f64;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let f = (s - cum[seg]) / (cum[seg + 1] - cum[seg]);
        let t = (seg as f64 + f) / fine as f64;
        out.push((c(t), s / total));
    }
    out
}

/// Star outline `r(θ) = r0 (1 + 0.35 cos 5θ)`.
pub fn star_radius(theta: f64, r0: f64) -> f64 {
    r0 * (1.0 + 0.35 * (5.0 * theta).cos())
}

pub const STAR_HOLE_FRACTION: f64 = 0.25;

/// Five-pointed star with a central circular hole. Segments: 0 hole
/// (inner boundary), 1 outer outline.
pub fn star_domain(h: f64, rng: &mut ChaCha8Rng) -> Domain {
    let r0 = 1.0;
    let rh = STAR_HOLE_FRACTION * r0;
    let mut b = Builder::new();
    for (p, xi) in sample_closed_curve(|t| [rh * (2.0 * PI * t).cos(), rh * (2.0 * PI * t).sin()], h) {
        b.push(p, 0, xi);
    }
    let outline = |t: f64| {
        let th = 2.0 * PI * t;
        let r = star_radius(th, r0);
        [r * th.cos(), r * th.sin()]
    };
    for (p, xi) in sample_closed_curve(outline, h) {
        b.push(p, 1, xi);
    }
    let rmax = 1.35 * r0;
    b.fill(
        [-rmax, -rmax],
        [rmax, rmax],
        h,
        |p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            r > rh && r < star_radius(p[1].atan2(p[0]), r0)
        },
        rng,
    );
    b.finish()
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Polygon with straight edges; edge `i` runs from vertex `i` to `i + 1` and
/// is segment `i`.
pub fn polygon_domain(vertices: &[[f64; 2]], h: f64, rng: &mut ChaCha8Rng) -> Domain {
    let n = vertices.len();
    let lens: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .collect();
    let perimeter: f64 = lens.iter().sum();
    let mut b = Builder::new();
    let mut s0 = 0.0;
    for i in 0..n {
        let (a, c) = (vertices[i], vertices[(i + 1) % n]);
        let m = ((lens[i] / h).round() as usize).max(1);
        for q in 0..m {
            let f = q as f64 / m as f64;
            b.push(
                [a[0] + f * (c[0] - a[0]), a[1] + f * (c[1] - a[1])],
                i as i64,
                (s0 + f * lens[i]) / perimeter,
            );
        }
        s0 += lens[i];
    }
    let lo = [0, 1].map(|d| vertices.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1].map(|d| vertices.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max));
    b.fill(lo, hi, h, |p| point_in_polygon(p, vertices), rng);
    b.finish()
}

pub const PLATE_HALF_WIDTH: f64 = 10.0;

/// A circular hole `(cx, cy, r)`.
pub type Hole = [f64; 3];

/// Square plate `[−10, 10]²` with circular holes. Segments: 0 left, 1 right
/// (both own their corners), `2 + i` hole `i`, then bottom and top
/// (`2 + holes`, `3 + holes`).
pub fn plate_domain(holes: &[Hole], h: f64, rng: &mut ChaCha8Rng) -> Domain {
    let w = PLATE_HALF_WIDTH;
    let nh = holes.len() as i64;
    let m = ((2.0 * w / h).round() as usize).max(2);
    let step = 2.0 * w / m as f64;
    let mut b = Builder::new();
    for q in 0..=m {
        let y = -w + q as f64 * step;
        b.push([-w, y], 0, f64::NAN);
        b.push([w, y], 1, f64::NAN);
    }
    for (i, &[cx, cy, r]) in holes.iter().enumerate() {
        for (p, xi) in sample_closed_curve(|t| [cx + r * (2.0 * PI * t).cos(), cy + r * (2.0 * PI * t).sin()], h) {
            b.push(p, 2 + i as i64, xi);
        }
    }
    for q in 1..m {
        let x = -w + q as f64 * step;
        b.push([x, -w], 2 + nh, f64::NAN);
        b.push([x, w], 3 + nh, f64::NAN);
    }
    let inside = |p: [f64; 2]| {
        p[0].abs() < w
            && p[1].abs() < w
            && holes
                .iter()
                .all(|&[cx, cy, r]| (p[0] - cx).powi(2) + (p[1] - cy).powi(2) > r * r)
    };
    b.fill([-w, -w], [w, w], h, inside, rng);
    b.finish()
}

/// Segment-intersection test for two closed segments in general position.
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// No two non-adjacent edges cross.
pub fn is_simple_polygon(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}
