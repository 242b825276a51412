//! Vertex-only meshes: point clouds immersed in a parent triangle mesh.
//!
//! Each point is a zero-dimensional cell carrying one P0DG value, so
//! integrating a P0DG field over the vertex-only mesh is an unweighted sum
//! of its values.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{in_reference_triangle, Point, TriangleMesh, CONTAINMENT_TOL};
use crate::par;

/// Uniform background grid of cell lists over the mesh bounding box.
///
/// Each cell is registered in every bin its (slightly padded) bounding box
/// touches; candidate lists are stored in ascending cell order so the first
/// containing candidate is the lowest-index containing cell.
#[derive(Clone, Debug)]
pub struct CellGrid {
    origin: Point,
    bin: [f64; 2],
    nbins: [usize; 2],
    pad: f64,
    offsets: Vec<usize>,
    cells: Vec<usize>,
}

impl CellGrid {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let origin = mesh.origin();
        let extent = mesh.extent();
        let h = mesh.mean_spacing().max(f64::MIN_POSITIVE);
        let nbins = [
            ((extent[0] / h).ceil() as usize).clamp(1, 4096),
            ((extent[1] / h).ceil() as usize).clamp(1, 4096),
        ];
        let bin = [
            (extent[0] / nbins[0] as f64).max(f64::MIN_POSITIVE),
            (extent[1] / nbins[1] as f64).max(f64::MIN_POSITIVE),
        ];
        let pad = 1e-9 * extent[0].max(extent[1]).max(1.0);
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); nbins[0] * nbins[1]];
        let mut grid = Self { origin, bin, nbins, pad, offsets: Vec::new(), cells: Vec::new() };
        for c in 0..mesh.num_cells() {
            let v = mesh.cell_vertices(c);
            let lo = [v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
            let hi = [
                v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
                v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
            ];
            let (i0, j0) = grid.bin_of([lo[0] - pad, lo[1] - pad]);
            let (i1, j1) = grid.bin_of([hi[0] + pad, hi[1] + pad]);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    lists[j * nbins[0] + i].push(c);
                }
            }
        }
        grid.offsets.push(0);
        for l in lists {
            grid.cells.extend(l);
            grid.offsets.push(grid.cells.len());
        }
        grid
    }

    fn bin_of(&self, x: Point) -> (usize, usize) {
        let fx = ((x[0] - self.origin[0]) / self.bin[0]).floor();
        let fy = ((x[1] - self.origin[1]) / self.bin[1]).floor();
        let i = (fx.max(0.0) as usize).min(self.nbins[0] - 1);
        let j = (fy.max(0.0) as usize).min(self.nbins[1] - 1);
        (i, j)
    }

    pub fn locate(&self, mesh: &TriangleMesh, x: Point) -> Option<(usize, Point)> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return None;
        }
        let lo = [self.origin[0] - self.pad, self.origin[1] - self.pad];
        let hi = [
            self.origin[0] + self.bin[0] * self.nbins[0] as f64 + self.pad,
            self.origin[1] + self.bin[1] * self.nbins[1] as f64 + self.pad,
        ];
        if x[0] < lo[0] || x[1] < lo[1] || x[0] > hi[0] || x[1] > hi[1] {
            return None;
        }
        let (i, j) = self.bin_of(x);
        let b = j * self.nbins[0] + i;
        self.cells[self.offsets[b]..self.offsets[b + 1]].iter().find_map(|&c| {
            let xi = mesh.geometry(c).ok()?.to_reference(x).ok()?;
            in_reference_triangle(xi, CONTAINMENT_TOL).then_some((c, xi))
        })
    }
}

/// Locate `x` in `mesh`, returning the lowest-index containing cell and the
/// reference coordinates of `x` in it.
pub fn locate_point(mesh: &TriangleMesh, x: Point) -> Result<(usize, Point)> {
    mesh.locate(x).ok_or_else(|| Error::PointsOutsideDomain(vec![(0, x)]))
}

/// Exhaustive scan over all cells; the reference answer for [`locate_point`].
pub fn locate_point_brute_force(mesh: &TriangleMesh, x: Point) -> Option<(usize, Point)> {
    (0..mesh.num_cells()).find_map(|c| {
        let xi = mesh.geometry(c).ok()?.to_reference(x).ok()?;
        in_reference_triangle(xi, CONTAINMENT_TOL).then_some((c, xi))
    })
}

/// A mesh of disconnected vertices immersed in a parent mesh.
#[derive(Clone, Debug)]
pub struct VertexOnlyMesh {
    parent: Arc<TriangleMesh>,
    points: Vec<Point>,
    parent_cell: Vec<usize>,
    ref_coords: Vec<Point>,
}

impl VertexOnlyMesh {
    pub fn parent(&self) -> &Arc<TriangleMesh> {
        &self.parent
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn parent_cells(&self) -> &[usize] {
        &self.parent_cell
    }

    pub fn reference_coords(&self) -> &[Point] {
        &self.ref_coords
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-mesh made of the listed points, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<VertexOnlyMesh> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(VertexOnlyMesh {
            parent: self.parent.clone(),
            points: indices.iter().map(|&i| self.points[i]).collect(),
            parent_cell: indices.iter().map(|&i| self.parent_cell[i]).collect(),
            ref_coords: indices.iter().map(|&i| self.ref_coords[i]).collect(),
        })
    }
}

/// Locate every point; duplicates are kept as distinct vertices and point
/// order is preserved. All out-of-domain points are reported together.
pub fn build_vertex_only_mesh(parent: Arc<TriangleMesh>, points: Vec<Point>) -> Result<VertexOnlyMesh> {
    let located = par::map_slice(&points, |&x| parent.locate(x));
    let missing: Vec<(usize, Point)> = located
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_none())
        .map(|(i, _)| (i, points[i]))
        .collect();
    if !missing.is_empty() {
        return Err(Error::PointsOutsideDomain(missing));
    }
    let (parent_cell, ref_coords) = located.into_iter().map(|l| l.expect("checked above")).unzip();
    Ok(VertexOnlyMesh { parent, points, parent_cell, ref_coords })
}

/// One value per vertex of a vertex-only mesh.
#[derive(Clone, Debug)]
pub struct P0DGField {
    mesh: Arc<VertexOnlyMesh>,
    values: Vec<f64>,
}

impl P0DGField {
    pub fn new(mesh: Arc<VertexOnlyMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::DimensionMismatch { expected: mesh.len(), got: values.len() });
        }
        Ok(Self { mesh, values })
    }

    pub fn mesh(&self) -> &Arc<VertexOnlyMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Pointwise map, e.g. squared residuals.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> P0DGField {
        let values = self.values.iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        P0DGField { mesh: self.mesh.clone(), values }
    }
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `∫_{Ω_v} y dx = Σ_i y(X_i)`: vertex cells carry no quadrature weight.
pub fn integrate_p0dg(field: &P0DGField) -> f64 {
    compensated_sum(&field.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rectangle_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Arc<TriangleMesh> {
        Arc::new(build_rectangle_mesh(n, n, 1.0, 1.0).unwrap())
    }

    #[test]
    fn locate_interior_point() {
        let m = unit(4);
        let (c, xi) = locate_point(&m, [0.5, 0.5]).unwrap();
        let b = crate::mesh::barycentric(xi);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.iter().all(|&v| v >= -1e-12));
        assert!(c < m.num_cells());
    }

    #[test]
    fn outside_point_reported() {
        let m = unit(4);
        match locate_point(&m, [1.5, 0.5]) {
            Err(Error::PointsOutsideDomain(v)) => assert_eq!(v[0].1, [1.5, 0.5]),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn shared_vertex_takes_lowest_cell() {
        let m = unit(4);
        // interior vertex (0.5, 0.5) with the structured diagonal touches 6 cells
        let x = [0.5, 0.5];
        let owners: Vec<usize> = (0..m.num_cells())
            .filter(|&c| {
                let xi = m.geometry(c).unwrap().to_reference(x).unwrap();
                in_reference_triangle(xi, CONTAINMENT_TOL)
            })
            .collect();
        assert_eq!(owners.len(), 6);
        assert_eq!(locate_point(&m, x).unwrap().0, owners[0]);
        assert_eq!(locate_point_brute_force(&m, x).unwrap().0, owners[0]);
    }

    #[test]
    fn grid_agrees_with_brute_force() {
        let m = Arc::new(build_rectangle_mesh(7, 5, 2.0, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            // snap some points to grid lines to exercise ties
            let mut x: Point = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0)];
            if rng.gen_bool(0.3) {
                x[0] = (x[0] * 3.5).round() / 3.5;
            }
            if rng.gen_bool(0.3) {
                x[1] = (x[1] * 5.0).round() / 5.0;
            }
            let a = m.locate(x).map(|l| l.0);
            let b = locate_point_brute_force(&m, x).map(|l| l.0);
            assert_eq!(a, b, "{:?}", x);
        }
    }

    #[test]
    fn build_and_round_trip() {
        let m = unit(16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point> = (0..4096).map(|_| [rng.gen(), rng.gen()]).collect();
        let v = build_vertex_only_mesh(m.clone(), pts.clone()).unwrap();
        assert_eq!(v.points(), &pts[..]);
        for i in 0..v.len() {
            let y = m.geometry(v.parent_cells()[i]).unwrap().to_physical(v.reference_coords()[i]);
            assert!((y[0] - pts[i][0]).abs() < 1e-10 && (y[1] - pts[i][1]).abs() < 1e-10);
            assert!(in_reference_triangle(v.reference_coords()[i], CONTAINMENT_TOL));
        }
    }

    #[test]
    fn empty_and_duplicates() {
        let m = unit(2);
        let v = Arc::new(build_vertex_only_mesh(m.clone(), vec![]).unwrap());
        assert!(v.is_empty());
        assert_eq!(integrate_p0dg(&P0DGField::new(v, vec![]).unwrap()), 0.0);
        let d = build_vertex_only_mesh(m, vec![[0.3, 0.3], [0.3, 0.3]]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.parent_cells()[0], d.parent_cells()[1]);
    }

    #[test]
    fn aggregate_outside_error() {
        let m = unit(2);
        match build_vertex_only_mesh(m, vec![[0.5, 0.5], [2.0, 0.0], [0.1, 0.1], [-1.0, 0.5]]) {
            Err(Error::PointsOutsideDomain(v)) => {
                assert_eq!(v.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 3]);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn integrate_plain_sum() {
        let m = unit(2);
        let v = Arc::new(build_vertex_only_mesh(m, vec![[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]).unwrap());
        let f = P0DGField::new(v.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(integrate_p0dg(&f), 6.0);
        assert!(P0DGField::new(v, vec![1.0]).is_err());
    }

    #[test]
    fn compensated_sum_is_accurate() {
        assert_eq!(compensated_sum(&[1.0, 1e100, 1.0, -1e100]), 2.0);
    }
}
