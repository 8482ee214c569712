//! Thin-plate-spline geometry: control points, the spline solve, sampling
//! grids and the bilinear sampler.
//!
//! All coordinates live in normalized image space, x and y in [-1, 1], with
//! -1 at the first pixel center and +1 at the last one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Ordered 2-D points, stored as `[x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    points: Vec<[f64; 2]>,
}

impl ControlPoints {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !p.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidInput(format!(
                "control point {p:?} outside [-1, 1]^2"
            )));
        }
        Ok(Self { points })
    }

    /// Points outside the unit box are accepted (used for query targets).
    pub fn unchecked(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    /// Two horizontal rows at y = -0.8 (top) and y = +0.8 (bottom), each with
    /// `count / 2` points spread over x in [-0.9, 0.9].
    pub fn fiducial(count: usize) -> Result<Self> {
        if count < 4 || count % 2 != 0 {
            return Err(Error::Config(format!(
                "control point count must be even and >= 4, got {count}"
            )));
        }
        let per_row = count / 2;
        let mut points = Vec::with_capacity(count);
        for y in [-0.8, 0.8] {
            for i in 0..per_row {
                let x = -0.9 + 1.8 * i as f64 / (per_row - 1) as f64;
                points.push([x, y]);
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Radial kernel `U(r) = r^2 log r^2`, with `U(0) = 0`.
#[inline]
pub fn tps_kernel(dx: f64, dy: f64) -> f64 {
    let r2 = dx * dx + dy * dy;
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsTransform {
    /// Row d holds `[constant, x, y]` coefficients of output coordinate d.
    pub affine: [[f64; 3]; 2],
    pub weights: Vec<[f64; 2]>,
    pub source: ControlPoints,
}

impl TpsTransform {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let a = &self.affine[d];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (w, s) in self.weights.iter().zip(self.source.points()) {
            let u = tps_kernel(p[0] - s[0], p[1] - s[1]);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }
}

/// The spline system anchored at fixed source points, inverted once so that
/// solves and grids are linear maps of the target points.
#[derive(Debug, Clone)]
pub struct TpsSystem {
    source: ControlPoints,
    /// (n + 3) x (n + 3) inverse of the augmented kernel matrix.
    inverse: DMatrix<f64>,
}

impl TpsSystem {
    pub fn new(source: &ControlPoints) -> Result<Self> {
        let n = source.len();
        if n < 3 {
            return Err(Error::Degenerate(format!(
                "thin-plate spline needs at least 3 control points, got {n}"
            )));
        }
        let pts = source.points();
        let m = n + 3;
        let mut l = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                l[(i, j)] = tps_kernel(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
            }
            let row = [1.0, pts[i][0], pts[i][1]];
            for (k, v) in row.into_iter().enumerate() {
                l[(i, n + k)] = v;
                l[(n + k, i)] = v;
            }
        }
        let sv = l.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > 1e-10 * max) {
            return Err(Error::Degenerate(format!(
                "spline system is singular (condition {:.3e}); source points are duplicated or collinear",
                max / min
            )));
        }
        let inverse = l.try_inverse().ok_or_else(|| {
            Error::Degenerate("spline system could not be inverted".into())
        })?;
        Ok(Self {
            source: source.clone(),
            inverse,
        })
    }

    pub fn source(&self) -> &ControlPoints {
        &self.source
    }

    pub fn solve(&self, target: &ControlPoints) -> Result<TpsTransform> {
        let n = self.source.len();
        if target.len() != n {
            return Err(Error::shape("tps target points", n, target.len()));
        }
        let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
        for (i, p) in target.points().iter().enumerate() {
            rhs[(i, 0)] = p[0];
            rhs[(i, 1)] = p[1];
        }
        let sol = &self.inverse * rhs;
        let weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
        let mut affine = [[0.0; 3]; 2];
        for (d, row) in affine.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = sol[(n + k, d)];
            }
        }
        Ok(TpsTransform {
            affine,
            weights,
            source: self.source.clone(),
        })
    }

    /// Row-major `(out_h * out_w) x n` matrix G with `grid = G * target`.
    pub fn grid_operator(&self, out_h: usize, out_w: usize) -> Vec<f64> {
        let n = self.source.len();
        let src = self.source.points();
        let lattice = uniform_lattice(out_h, out_w);
        let mut out = vec![0.0; lattice.len() * n];
        let mut basis = DVector::<f64>::zeros(n + 3);
        for (r, g) in lattice.iter().enumerate() {
            for (j, s) in src.iter().enumerate() {
                basis[j] = tps_kernel(g[0] - s[0], g[1] - s[1]);
            }
            basis[n] = 1.0;
            basis[n + 1] = g[0];
            basis[n + 2] = g[1];
            for c in 0..n {
                let mut acc = 0.0;
                for k in 0..n + 3 {
                    acc += basis[k] * self.inverse[(k, c)];
                }
                out[r * n + c] = acc;
            }
        }
        out
    }
}

/// Solves the spline mapping each source point onto its target.
pub fn solve_tps(source: &ControlPoints, target: &ControlPoints) -> Result<TpsTransform> {
    if source.len() != target.len() {
        return Err(Error::shape("tps point counts", source.len(), target.len()));
    }
    TpsSystem::new(source)?.solve(target)
}

fn axis(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
    }
}

/// Uniform lattice over the output rectangle, row-major, as `[x, y]`.
/// A single-sample axis sits at the center (0).
pub fn uniform_lattice(out_h: usize, out_w: usize) -> Vec<[f64; 2]> {
    let xs = axis(out_w);
    let ys = axis(out_h);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub height: usize,
    pub width: usize,
    /// Row-major source coordinates `[x, y]`.
    pub coords: Vec<[f64; 2]>,
}

impl SamplingGrid {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            coords: uniform_lattice(height, width),
        }
    }
}

pub fn generate_grid(transform: &TpsTransform, out_h: usize, out_w: usize) -> Result<SamplingGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidInput(format!(
            "grid size must be positive, got {out_h}x{out_w}"
        )));
    }
    Ok(SamplingGrid {
        height: out_h,
        width: out_w,
        coords: uniform_lattice(out_h, out_w)
            .into_iter()
            .map(|g| transform.apply(g))
            .collect(),
    })
}

/// Corner indices and weights of the bilinear tap at normalized `(x, y)`,
/// clamped to the image border. Weights are ordered (y0,x0), (y0,x1),
/// (y1,x0), (y1,x1).
pub fn bilinear_taps(x: f64, y: f64, height: usize, width: usize) -> ([usize; 4], [f64; 4]) {
    let (x0, x1, fx) = axis_tap(x, width);
    let (y0, y1, fy) = axis_tap(y, height);
    (
        [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ],
    )
}

fn axis_tap(v: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let max = (n - 1) as f64;
    let p = ((v + 1.0) * 0.5 * max).clamp(0.0, max);
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

/// Bilinear resampling of `image` at the grid coordinates.
pub fn sample_bilinear(image: &Image, grid: &SamplingGrid) -> Image {
    let data = grid
        .coords
        .iter()
        .map(|c| {
            let (idx, w) = bilinear_taps(c[0], c[1], image.height, image.width);
            idx.iter()
                .zip(w)
                .map(|(&i, w)| image.data[i] as f64 * w)
                .sum::<f64>() as f32
        })
        .collect();
    Image {
        height: grid.height,
        width: grid.width,
        data,
    }
}
