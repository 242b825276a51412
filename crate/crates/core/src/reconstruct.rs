//! Densely defined fields from scattered observations: nearest neighbour,
//! piecewise linear on a Delaunay triangulation, and Gaussian radial basis
//! functions.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use robust::{incircle, orient2d, Coord};

use crate::assimilate::Observations;
use crate::error::{Error, Result};
use crate::fem::{Field, FunctionSpace};
use crate::mesh::Point;
use crate::par;

/// RBF systems whose Cholesky factor implies a condition number above this
/// are rejected.
pub const RBF_MAX_CONDITION: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReconstructionMethod {
    Nearest,
    /// Barycentric interpolation on the Delaunay triangulation; `fill`
    /// outside the convex hull.
    Linear { fill: f64 },
    /// `Σ_j c_j exp(−(ε r_j)²)`. `None` picks ε = 1 / median nearest
    /// neighbour spacing.
    GaussianRbf { epsilon: Option<f64> },
}

impl ReconstructionMethod {
    pub fn linear() -> Self {
        Self::Linear { fill: 0.0 }
    }

    pub fn rbf() -> Self {
        Self::GaussianRbf { epsilon: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Linear { .. } => "linear",
            Self::GaussianRbf { .. } => "rbf",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "nearest" => Some(Self::Nearest),
            "linear" => Some(Self::linear()),
            "rbf" | "gaussian-rbf" => Some(Self::rbf()),
            _ => None,
        }
    }
}

/// Values at every dof coordinate of `space`.
pub fn reconstruct(obs: &Observations, space: &Arc<FunctionSpace>, method: &ReconstructionMethod) -> Result<Field> {
    let pts = obs.vertex_only_mesh().points();
    let vals = obs.values();
    let coords = space.dof_coords();
    let out = match *method {
        ReconstructionMethod::Nearest => {
            if pts.is_empty() {
                return Err(Error::Reconstruction("nearest needs at least one observation".into()));
            }
            par::map_slice(coords, |&x| vals[nearest_index(pts, x)])
        }
        ReconstructionMethod::Linear { fill } => {
            let tri = Delaunay::new(pts)?;
            par::map_slice(coords, |&x| tri.interpolate(x, vals).unwrap_or(fill))
        }
        ReconstructionMethod::GaussianRbf { epsilon } => {
            let rbf = Rbf::fit(pts, vals, epsilon)?;
            par::map_slice(coords, |&x| rbf.evaluate(x))
        }
    };
    Field::new(space.clone(), out)
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lowest index among the closest points.
fn nearest_index(pts: &[Point], x: Point) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, &p) in pts.iter().enumerate() {
        let d = dist2(p, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn check_distinct(pts: &[Point]) -> Result<()> {
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a].partial_cmp(&pts[b]).expect("finite coordinates"));
    for w in order.windows(2) {
        if pts[w[0]] == pts[w[1]] {
            let (i, j) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(Error::Reconstruction(format!("observations {} and {} share a location", i, j)));
        }
    }
    Ok(())
}

/// Median over points of the distance to the nearest other point.
pub fn median_spacing(pts: &[Point]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = par::map_range(pts.len(), |i| {
        pts.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &q)| dist2(pts[i], q))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    });
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

fn coord(p: Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Delaunay triangulation of a point set by incremental Bowyer–Watson with
/// exact predicates. Triangles are counter-clockwise.
#[derive(Clone, Debug)]
pub struct Delaunay {
    points: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

impl Delaunay {
    pub fn new(points: &[Point]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Reconstruction("linear interpolation needs at least three observations".into()));
        }
        check_distinct(points)?;
        let p0 = points[0];
        let p1 = points[1];
        if points[2..].iter().all(|&p| orient2d(coord(p0), coord(p1), coord(p)) == 0.0) {
            return Err(Error::Reconstruction("all observation sites are collinear".into()));
        }

        let n = points.len();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let r = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE) * 1e4;
        let mut all = points.to_vec();
        all.push([c[0] - 2.0 * r, c[1] - r]);
        all.push([c[0] + 2.0 * r, c[1] - r]);
        all.push([c[0], c[1] + 2.0 * r]);
        let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

        for i in 0..n {
            let p = coord(all[i]);
            let (bad, good): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris.into_iter().partition(|t| {
                incircle(coord(all[t[0]]), coord(all[t[1]]), coord(all[t[2]]), p) > 0.0
            });
            let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
            let mut order = Vec::new();
            for t in &bad {
                for k in 0..3 {
                    let e = (t[k], t[(k + 1) % 3]);
                    order.push(e);
                    *edges.entry(e).or_insert(0) += 1;
                }
            }
            tris = good;
            for (a, b) in order {
                if !edges.contains_key(&(b, a)) {
                    tris.push([a, b, i]);
                }
            }
        }
        tris.retain(|t| t.iter().all(|&v| v < n));
        if tris.is_empty() {
            return Err(Error::Reconstruction("triangulation is empty".into()));
        }
        Ok(Self { points: points.to_vec(), triangles: tris })
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Containing triangle (lowest index) and barycentric weights.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let q = coord(x);
        for (ti, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|v| coord(self.points[v]));
            let w0 = orient2d(b, c, q);
            let w1 = orient2d(c, a, q);
            let w2 = orient2d(a, b, q);
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                let s = w0 + w1 + w2;
                return Some((ti, [w0 / s, w1 / s, w2 / s]));
            }
        }
        None
    }

    pub fn interpolate(&self, x: Point, values: &[f64]) -> Option<f64> {
        let (ti, w) = self.locate(x)?;
        let t = self.triangles[ti];
        Some(w[0] * values[t[0]] + w[1] * values[t[1]] + w[2] * values[t[2]])
    }
}

/// Fitted Gaussian RBF interpolant.
#[derive(Clone, Debug)]
pub struct Rbf {
    centers: Vec<Point>,
    weights: Vec<f64>,
    epsilon: f64,
    condition: f64,
}

impl Rbf {
    pub fn fit(points: &[Point], values: &[f64], epsilon: Option<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Reconstruction("rbf needs at least one observation".into()));
        }
        check_distinct(points)?;
        let eps = match epsilon {
            Some(e) if e > 0.0 => e,
            Some(e) => return Err(Error::InvalidArgument(format!("rbf shape parameter must be positive, got {}", e))),
            None if points.len() == 1 => 1.0,
            None => 1.0 / median_spacing(points),
        };
        let n = points.len();
        let e2 = eps * eps;
        let rows = par::map_range(n, |i| (0..n).map(|j| (-e2 * dist2(points[i], points[j])).exp()).collect::<Vec<_>>());
        let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let chol = a.cholesky().ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
        let diag = chol.l_dirty().diagonal();
        let (lmin, lmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = (lmax / lmin).powi(2);
        if !(condition <= RBF_MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let weights = chol.solve(&DVector::from_column_slice(values));
        Ok(Self { centers: points.to_vec(), weights: weights.as_slice().to_vec(), epsilon: eps, condition })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Lower bound on the 2-norm condition number of the kernel matrix,
    /// from the spread of the Cholesky diagonal.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn evaluate(&self, x: Point) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        self.centers.iter().zip(&self.weights).map(|(&c, w)| w * (-e2 * dist2(c, x)).exp()).sum()
    }
}
