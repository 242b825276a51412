//! Triangulations of rectangles and the affine reference-to-physical maps.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::vom::CellGrid;

pub type Point = [f64; 2];

/// Barycentric containment tolerance.
pub const CONTAINMENT_TOL: f64 = 1e-12;

/// Affine map from the reference triangle {(0,0),(1,0),(0,1)} onto a cell.
///
/// `x = jacobian · ξ + origin`, with `jacobian` stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    pub cell: usize,
    pub jacobian: [[f64; 2]; 2],
    pub origin: Point,
    pub det: f64,
}

impl CellGeometry {
    pub fn new(cell: usize, v: [Point; 3]) -> Self {
        let jacobian = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        Self { cell, jacobian, origin: v[0], det }
    }

    pub fn to_physical(&self, xi: Point) -> Point {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.origin[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: Point) -> Result<Point> {
        if self.det.abs() <= f64::MIN_POSITIVE {
            return Err(Error::DegenerateCell { cell: self.cell, det: self.det });
        }
        let j = &self.jacobian;
        let dx = x[0] - self.origin[0];
        let dy = x[1] - self.origin[1];
        Ok([
            (j[1][1] * dx - j[0][1] * dy) / self.det,
            (-j[1][0] * dx + j[0][0] * dy) / self.det,
        ])
    }

    /// Inverse transpose of the jacobian, used to push reference gradients
    /// forward: ∇φ = J^{-T} ∇̂φ.
    pub fn inverse_transpose(&self) -> [[f64; 2]; 2] {
        let j = &self.jacobian;
        let d = self.det;
        [[j[1][1] / d, -j[1][0] / d], [-j[0][1] / d, j[0][0] / d]]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }
}

/// Barycentric coordinates (1 − ξ − η, ξ, η) of a reference point.
pub fn barycentric(xi: Point) -> [f64; 3] {
    [1.0 - xi[0] - xi[1], xi[0], xi[1]]
}

pub fn in_reference_triangle(xi: Point, tol: f64) -> bool {
    barycentric(xi).iter().all(|&b| b >= -tol)
}

/// A conforming triangulation of an axis-aligned rectangle.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    extent: [f64; 2],
    geometry: Vec<CellGeometry>,
    grid: OnceLock<CellGrid>,
}

impl TriangleMesh {
    /// General constructor. Cells must be counter-clockwise; boundary edges
    /// are found as edges owned by exactly one cell.
    pub fn new(vertices: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        let mut geometry = Vec::with_capacity(cells.len());
        let mut edge_count: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                if v >= nv {
                    return Err(Error::IndexOutOfRange { index: v, len: nv });
                }
            }
            let g = CellGeometry::new(c, [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]]);
            if !(g.det > 0.0) {
                return Err(Error::DegenerateCell { cell: c, det: g.det });
            }
            geometry.push(g);
            for k in 0..3 {
                let (a, b) = (cell[k], cell[(k + 1) % 3]);
                *edge_count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        if let Some((e, n)) = edge_count.iter().find(|(_, &n)| n > 2) {
            return Err(Error::InvalidArgument(format!("edge {:?} shared by {} cells", e, n)));
        }
        let boundary_edges = edge_count.into_iter().filter(|&(_, n)| n == 1).map(|(e, _)| e).collect();

        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let extent = if nv == 0 { [0.0, 0.0] } else { [hi[0] - lo[0], hi[1] - lo[1]] };
        Ok(Self { vertices, cells, boundary_edges, extent, geometry, grid: OnceLock::new() })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn geometry(&self, cell: usize) -> Result<&CellGeometry> {
        self.geometry
            .get(cell)
            .ok_or(Error::IndexOutOfRange { index: cell, len: self.cells.len() })
    }

    pub fn cell_vertices(&self, cell: usize) -> [Point; 3] {
        let c = self.cells[cell];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        self.geometry[cell].area()
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(CellGeometry::area).sum()
    }

    /// Sorted list of vertices on the boundary.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.boundary_edges.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Lower-left corner of the bounding box.
    pub fn origin(&self) -> Point {
        self.vertices.iter().fold([f64::INFINITY; 2], |acc, v| [acc[0].min(v[0]), acc[1].min(v[1])])
    }

    /// Background grid for point location, built on first use.
    pub fn grid(&self) -> &CellGrid {
        self.grid.get_or_init(|| CellGrid::new(self))
    }

    /// Containing cell and reference coordinates of `x`; on shared edges and
    /// vertices the lowest containing cell index wins.
    pub fn locate(&self, x: Point) -> Option<(usize, Point)> {
        self.grid().locate(self, x)
    }

    /// Typical edge length, sqrt of the mean cell area times two.
    pub fn mean_spacing(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        (2.0 * self.total_area() / self.cells.len() as f64).sqrt()
    }
}

/// Structured triangulation of [0, lx] × [0, ly] with every grid square cut
/// along its lower-left to upper-right diagonal.
pub fn build_rectangle_mesh(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<TriangleMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!("cell counts must be positive, got {}x{}", nx, ny)));
    }
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(Error::InvalidArgument(format!("extent must be positive, got {}x{}", lx, ly)));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // exact end coordinates so boundary tests can compare with ==
        let y = if j == ny { ly } else { ly * j as f64 / ny as f64 };
        for i in 0..=nx {
            let x = if i == nx { lx } else { lx * i as f64 / nx as f64 };
            vertices.push([x, y]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    let mut mesh = TriangleMesh::new(vertices, cells)?;
    mesh.extent = [lx, ly];
    Ok(mesh)
}

pub fn reference_to_physical(mesh: &TriangleMesh, cell: usize, xi: Point) -> Result<Point> {
    Ok(mesh.geometry(cell)?.to_physical(xi))
}

pub fn physical_to_reference(mesh: &TriangleMesh, cell: usize, x: Point) -> Result<Point> {
    mesh.geometry(cell)?.to_reference(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn large_mesh_counts() {
        let m = build_rectangle_mesh(32, 32, 1.0, 1.0).unwrap();
        assert_eq!(m.num_cells(), 2048);
        assert_eq!(m.num_vertices(), 33 * 33);
    }

    #[test]
    fn smallest_mesh() {
        let m = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn area_additivity_and_orientation() {
        let m = build_rectangle_mesh(2, 3, 2.0, 3.0).unwrap();
        assert_eq!(m.num_cells(), 12);
        assert!((m.total_area() - 6.0).abs() < 1e-12 * 6.0);
        assert!((0..m.num_cells()).all(|c| m.cell_area(c) > 0.0));
    }

    #[test]
    fn edge_ownership() {
        let m = build_rectangle_mesh(4, 3, 1.0, 1.0).unwrap();
        let mut count = BTreeMap::new();
        for c in m.cells() {
            for k in 0..3 {
                let (a, b) = (c[k], c[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        for (e, n) in count {
            let on_boundary = m.boundary_edges().contains(&e);
            assert_eq!(n, if on_boundary { 1 } else { 2 });
        }
        assert_eq!(m.boundary_edges().len(), 2 * (4 + 3));
    }

    #[test]
    fn invalid_arguments() {
        assert!(build_rectangle_mesh(0, 1, 1.0, 1.0).is_err());
        assert!(build_rectangle_mesh(1, 1, -1.0, 1.0).is_err());
        assert!(build_rectangle_mesh(1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn reference_anchors() {
        let m = build_rectangle_mesh(3, 2, 1.5, 1.0).unwrap();
        for c in 0..m.num_cells() {
            let v = m.cell_vertices(c);
            assert_eq!(reference_to_physical(&m, c, [0.0, 0.0]).unwrap(), v[0]);
            let cen = [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0];
            let p = reference_to_physical(&m, c, [1.0 / 3.0, 1.0 / 3.0]).unwrap();
            assert!((p[0] - cen[0]).abs() < 1e-14 && (p[1] - cen[1]).abs() < 1e-14);
            let r = physical_to_reference(&m, c, cen).unwrap();
            assert!((r[0] - 1.0 / 3.0).abs() < 1e-12 && (r[1] - 1.0 / 3.0).abs() < 1e-12);
            let expect = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
            for k in 0..3 {
                let r = physical_to_reference(&m, c, v[k]).unwrap();
                assert!((r[0] - expect[k][0]).abs() < 1e-12 && (r[1] - expect[k][1]).abs() < 1e-12);
            }
        }
        assert!(reference_to_physical(&m, 99, [0.0, 0.0]).is_err());
    }

    #[test]
    fn round_trip_random_points() {
        let m = build_rectangle_mesh(7, 5, 3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let c = rng.gen_range(0..m.num_cells());
            let a: f64 = rng.gen();
            let b: f64 = rng.gen::<f64>() * (1.0 - a);
            let x = reference_to_physical(&m, c, [a, b]).unwrap();
            let r = physical_to_reference(&m, c, x).unwrap();
            assert!((r[0] - a).abs() < 1e-12 && (r[1] - b).abs() < 1e-12);
            let y = reference_to_physical(&m, c, r).unwrap();
            assert!((y[0] - x[0]).abs() < 1e-12 && (y[1] - x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_point_has_negative_barycentric() {
        let m = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        // cell 0 is the lower-right triangle
        let r = physical_to_reference(&m, 0, [0.1, 0.9]).unwrap();
        assert!(!in_reference_triangle(r, CONTAINMENT_TOL));
    }

    #[test]
    fn degenerate_cell_rejected() {
        let bad = TriangleMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]);
        assert!(matches!(bad, Err(Error::DegenerateCell { .. })));
        let g = CellGeometry::new(0, [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert!(g.to_reference([0.5, 0.5]).is_err());
    }
}
