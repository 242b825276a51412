//! Lagrange elements, function spaces and sparse assembly.
//!
//! A field is `u(x) = Σ_i w_i φ_i(x)`: the space owns the basis bookkeeping
//! (dofmap, dof coordinates) and a [`Field`] owns only the weights `w_i`.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{dot, spmv, CsrMatrix};
use crate::mesh::{Point, TriangleMesh};
use crate::par;

/// Finite element families supported on the reference cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    LagrangeP1Triangle,
    LagrangeP2Triangle,
    /// The single constant basis function on a vertex cell.
    DG0Vertex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReferenceElement {
    pub family: Family,
}

pub const P1: ReferenceElement = ReferenceElement { family: Family::LagrangeP1Triangle };
pub const P2: ReferenceElement = ReferenceElement { family: Family::LagrangeP2Triangle };
pub const DG0_VERTEX: ReferenceElement = ReferenceElement { family: Family::DG0Vertex };

/// Edges of the reference triangle in P2 node order (nodes 3, 4, 5).
const P2_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

impl ReferenceElement {
    /// Number of local basis functions.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::LagrangeP1Triangle => 3,
            Family::LagrangeP2Triangle => 6,
            Family::DG0Vertex => 1,
        }
    }

    pub fn degree(&self) -> usize {
        match self.family {
            Family::LagrangeP1Triangle => 1,
            Family::LagrangeP2Triangle => 2,
            Family::DG0Vertex => 0,
        }
    }

    /// Reference coordinates of the nodes; the dual basis is point
    /// evaluation at each of them.
    pub fn nodes(&self) -> Vec<Point> {
        match self.family {
            Family::LagrangeP1Triangle => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            Family::LagrangeP2Triangle => vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.5, 0.0],
                [0.5, 0.5],
                [0.0, 0.5],
            ],
            Family::DG0Vertex => vec![[0.0, 0.0]],
        }
    }

    /// Basis values and reference gradients at `xi`, written into the
    /// provided buffers (length `dim()`).
    pub fn tabulate_into(&self, xi: Point, values: &mut [f64], grads: &mut [[f64; 2]]) {
        let lam = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
        const DLAM: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        match self.family {
            Family::LagrangeP1Triangle => {
                values[..3].copy_from_slice(&lam);
                grads[..3].copy_from_slice(&DLAM);
            }
            Family::LagrangeP2Triangle => {
                for i in 0..3 {
                    values[i] = lam[i] * (2.0 * lam[i] - 1.0);
                    let s = 4.0 * lam[i] - 1.0;
                    grads[i] = [s * DLAM[i][0], s * DLAM[i][1]];
                }
                for (e, &[a, b]) in P2_EDGES.iter().enumerate() {
                    values[3 + e] = 4.0 * lam[a] * lam[b];
                    grads[3 + e] = [
                        4.0 * (lam[b] * DLAM[a][0] + lam[a] * DLAM[b][0]),
                        4.0 * (lam[b] * DLAM[a][1] + lam[a] * DLAM[b][1]),
                    ];
                }
            }
            Family::DG0Vertex => {
                values[0] = 1.0;
                grads[0] = [0.0, 0.0];
            }
        }
    }

    pub fn tabulate(&self, xi: Point) -> (Vec<f64>, Vec<[f64; 2]>) {
        let k = self.dim();
        let mut v = vec![0.0; k];
        let mut g = vec![[0.0; 2]; k];
        self.tabulate_into(xi, &mut v, &mut g);
        (v, g)
    }
}

/// Free-function form of [`ReferenceElement::tabulate`].
pub fn tabulate_basis(element: &ReferenceElement, xi: Point) -> (Vec<f64>, Vec<[f64; 2]>) {
    element.tabulate(xi)
}

/// Quadrature on the reference triangle (area 1/2).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Symmetric six-point rule exact for polynomials of degree 4.
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_964_886_32;
        const B: f64 = 0.091_576_213_509_770_743_46;
        const WA: f64 = 0.223_381_589_678_011_465_70 * 0.5;
        const WB: f64 = 0.109_951_743_655_321_867_64 * 0.5;
        Self {
            points: vec![
                [A, A],
                [1.0 - 2.0 * A, A],
                [A, 1.0 - 2.0 * A],
                [B, B],
                [1.0 - 2.0 * B, B],
                [B, 1.0 - 2.0 * B],
            ],
            weights: vec![WA, WA, WA, WB, WB, WB],
            degree: 4,
        }
    }
}

/// Basis tabulated once at the quadrature points of the reference cell.
#[derive(Clone, Debug)]
struct RefTabulation {
    rule: QuadratureRule,
    k: usize,
    values: Vec<f64>,       // [qp * k + a]
    grads: Vec<[f64; 2]>,   // [qp * k + a]
}

impl RefTabulation {
    fn new(element: ReferenceElement, rule: QuadratureRule) -> Self {
        let k = element.dim();
        let nq = rule.points.len();
        let mut values = vec![0.0; nq * k];
        let mut grads = vec![[0.0; 2]; nq * k];
        for (q, &xi) in rule.points.iter().enumerate() {
            element.tabulate_into(xi, &mut values[q * k..(q + 1) * k], &mut grads[q * k..(q + 1) * k]);
        }
        Self { rule, k, values, grads }
    }
}

/// Sparsity pattern of the space's bilinear forms plus, per cell, the CSR
/// storage positions of its k×k local block.
#[derive(Debug)]
struct AssemblyPattern {
    matrix: CsrMatrix,
    scatter: Vec<usize>, // [cell * k * k + a * k + b]
}

/// A continuous Lagrange space on a triangle mesh.
#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<TriangleMesh>,
    element: ReferenceElement,
    cell_dofs: Vec<usize>,
    ndofs: usize,
    dof_coords: Vec<Point>,
    tab: RefTabulation,
    pattern: AssemblyPattern,
    mass: OnceLock<CsrMatrix>,
    unit_stiffness: OnceLock<CsrMatrix>,
}

impl FunctionSpace {
    /// Dofs are numbered vertices first (mesh order), then edge midpoints
    /// in lexicographic order of their sorted endpoint pair.
    pub fn new(mesh: Arc<TriangleMesh>, element: ReferenceElement) -> Result<Arc<Self>> {
        let k = element.dim();
        let nv = mesh.num_vertices();
        let (cell_dofs, ndofs, dof_coords) = match element.family {
            Family::LagrangeP1Triangle => {
                let dofs = mesh.cells().iter().flat_map(|c| c.iter().copied()).collect();
                (dofs, nv, mesh.vertices().to_vec())
            }
            Family::LagrangeP2Triangle => {
                let mut edges: BTreeMap<[usize; 2], usize> = BTreeMap::new();
                for c in mesh.cells() {
                    for &[a, b] in &P2_EDGES {
                        edges.insert([c[a].min(c[b]), c[a].max(c[b])], 0);
                    }
                }
                let mut coords = mesh.vertices().to_vec();
                for (rank, (e, slot)) in edges.iter_mut().enumerate() {
                    *slot = nv + rank;
                    let (p, q) = (mesh.vertices()[e[0]], mesh.vertices()[e[1]]);
                    coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                }
                let mut dofs = Vec::with_capacity(mesh.num_cells() * 6);
                for c in mesh.cells() {
                    dofs.extend_from_slice(c);
                    for &[a, b] in &P2_EDGES {
                        dofs.push(edges[&[c[a].min(c[b]), c[a].max(c[b])]]);
                    }
                }
                (dofs, nv + edges.len(), coords)
            }
            Family::DG0Vertex => {
                return Err(Error::InvalidArgument(
                    "vertex DG0 fields live on a vertex-only mesh, not a triangle mesh".into(),
                ))
            }
        };

        let pattern = build_pattern(&cell_dofs, k, ndofs);
        Ok(Arc::new(Self {
            mesh,
            element,
            cell_dofs,
            ndofs,
            dof_coords,
            tab: RefTabulation::new(element, QuadratureRule::degree4()),
            pattern,
            mass: OnceLock::new(),
            unit_stiffness: OnceLock::new(),
        }))
    }

    pub fn mesh(&self) -> &Arc<TriangleMesh> {
        &self.mesh
    }

    pub fn element(&self) -> ReferenceElement {
        self.element
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    pub fn dofs_per_cell(&self) -> usize {
        self.element.dim()
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let k = self.element.dim();
        &self.cell_dofs[cell * k..(cell + 1) * k]
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    /// Dofs whose coordinates satisfy `pred`.
    pub fn dofs_where(&self, pred: impl Fn(Point) -> bool) -> Vec<usize> {
        (0..self.ndofs).filter(|&i| pred(self.dof_coords[i])).collect()
    }

    /// Dofs lying on boundary edges of the mesh (vertices and, for P2, edge
    /// midpoints), sorted.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        let mut on: Vec<bool> = vec![false; self.ndofs];
        let boundary: std::collections::BTreeSet<[usize; 2]> =
            self.mesh.boundary_edges().iter().copied().collect();
        let k = self.element.dim();
        for (c, cell) in self.mesh.cells().iter().enumerate() {
            let dofs = self.cell_dofs(c);
            for (e, &[a, b]) in P2_EDGES.iter().enumerate() {
                let key = [cell[a].min(cell[b]), cell[a].max(cell[b])];
                if boundary.contains(&key) {
                    on[dofs[a]] = true;
                    on[dofs[b]] = true;
                    if k == 6 {
                        on[dofs[3 + e]] = true;
                    }
                }
            }
        }
        (0..self.ndofs).filter(|&i| on[i]).collect()
    }

    /// Cached mass matrix.
    pub fn mass_matrix(&self) -> &CsrMatrix {
        self.mass.get_or_init(|| assemble_mass(self))
    }

    /// Cached stiffness matrix with unit coefficient.
    pub fn unit_stiffness(&self) -> &CsrMatrix {
        self.unit_stiffness.get_or_init(|| {
            assemble_weighted_stiffness(self, &Coefficient::Constant(1.0)).expect("unit coefficient is positive")
        })
    }

    /// Empty matrix with the space's sparsity pattern.
    pub fn pattern_matrix(&self) -> CsrMatrix {
        self.pattern.matrix.clone()
    }

    /// Evaluate `Σ_j w_j φ_j` at reference point `xi` of `cell`.
    pub fn evaluate_in_cell(&self, coeffs: &[f64], cell: usize, xi: Point) -> f64 {
        let k = self.element.dim();
        let mut vals = [0.0; 6];
        let mut grads = [[0.0; 2]; 6];
        self.element.tabulate_into(xi, &mut vals[..k], &mut grads[..k]);
        self.cell_dofs(cell).iter().zip(&vals[..k]).map(|(&d, v)| coeffs[d] * v).sum()
    }

}

fn build_pattern(cell_dofs: &[usize], k: usize, ndofs: usize) -> AssemblyPattern {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ndofs];
    for cell in cell_dofs.chunks(k) {
        for &a in cell {
            rows[a].extend_from_slice(cell);
        }
    }
    let mut offsets = Vec::with_capacity(ndofs + 1);
    let mut cols = Vec::new();
    offsets.push(0);
    for row in rows.iter_mut() {
        row.sort_unstable();
        row.dedup();
        cols.extend_from_slice(row);
        offsets.push(cols.len());
    }
    let matrix = CsrMatrix::from_pattern(ndofs, ndofs, offsets, cols);
    let mut scatter = Vec::with_capacity(cell_dofs.len() * k);
    for cell in cell_dofs.chunks(k) {
        for &a in cell {
            for &b in cell {
                scatter.push(matrix.position(a, b).expect("pattern covers every cell block"));
            }
        }
    }
    AssemblyPattern { matrix, scatter }
}

/// A finite element field: coefficients with respect to a space's basis.
#[derive(Clone, Debug)]
pub struct Field {
    space: Arc<FunctionSpace>,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn new(space: Arc<FunctionSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndofs() {
            return Err(Error::DimensionMismatch { expected: space.ndofs(), got: coeffs.len() });
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.ndofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn constant(space: Arc<FunctionSpace>, c: f64) -> Self {
        let n = space.ndofs();
        Self { space, coeffs: vec![c; n] }
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn same_space(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.space, &other.space)
    }

    pub fn evaluate_in_cell(&self, cell: usize, xi: Point) -> f64 {
        self.space.evaluate_in_cell(&self.coeffs, cell, xi)
    }

    /// Point evaluation by locating `x` in the parent mesh.
    pub fn evaluate(&self, x: Point) -> Result<f64> {
        let (cell, xi) = self.space.mesh().locate(x).ok_or_else(|| Error::PointsOutsideDomain(vec![(0, x)]))?;
        Ok(self.evaluate_in_cell(cell, xi))
    }

    /// Values at the vertices of the mesh (the first `nv` dofs for Lagrange
    /// spaces of degree ≥ 1).
    pub fn vertex_values(&self) -> &[f64] {
        &self.coeffs[..self.space.mesh().num_vertices()]
    }

    /// `a·self + b·other`
    pub fn axpby(&self, a: f64, b: f64, other: &Field) -> Result<Field> {
        if !self.same_space(other) {
            return Err(Error::MeshMismatch);
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect();
        Ok(Field { space: self.space.clone(), coeffs })
    }
}

/// Nodal interpolation: `w_i = g(dof coordinate i)`.
pub fn interpolate_callable(space: &Arc<FunctionSpace>, g: impl Fn(Point) -> f64 + Sync + Send) -> Field {
    let coords = space.dof_coords();
    let coeffs = par::map_slice(coords, |&x| g(x));
    Field { space: space.clone(), coeffs }
}

/// Coefficient of a bilinear or linear form, evaluated at quadrature points.
pub enum Coefficient<'a> {
    Constant(f64),
    Function(&'a (dyn Fn(Point) -> f64 + Sync)),
    Field(&'a Field),
    /// `map(field(x))`, e.g. `k0 · exp(q(x))`.
    MappedField(&'a Field, &'a (dyn Fn(f64) -> f64 + Sync)),
}

impl Coefficient<'_> {
    fn check_space(&self, space: &FunctionSpace) -> Result<()> {
        match self {
            Coefficient::Field(f) | Coefficient::MappedField(f, _) => {
                if !Arc::ptr_eq(f.space().mesh(), space.mesh()) {
                    return Err(Error::MeshMismatch);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn at(&self, cell: usize, xi: Point, x: Point) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function(f) => f(x),
            Coefficient::Field(f) => f.evaluate_in_cell(cell, xi),
            Coefficient::MappedField(f, map) => map(f.evaluate_in_cell(cell, xi)),
        }
    }
}

/// Per-cell kernel producing a local block; assembled in parallel then
/// scattered in cell order.
fn assemble_with<F>(space: &FunctionSpace, local: F) -> Result<CsrMatrix>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let k = space.dofs_per_cell();
    let blocks: Vec<Result<Vec<f64>>> = par::map_range(space.mesh().num_cells(), |c| {
        let mut block = vec![0.0; k * k];
        local(c, &mut block)?;
        Ok(block)
    });
    let mut m = space.pattern_matrix();
    let vals = m.values_mut();
    for (c, block) in blocks.into_iter().enumerate() {
        let block = block?;
        let pos = &space.pattern.scatter[c * k * k..(c + 1) * k * k];
        for (p, v) in pos.iter().zip(block) {
            vals[*p] += v;
        }
    }
    Ok(m)
}

/// `A_ij = ∫ k ∇φ_i · ∇φ_j dx`.
pub fn assemble_weighted_stiffness(space: &FunctionSpace, k: &Coefficient) -> Result<CsrMatrix> {
    k.check_space(space)?;
    let tab = &space.tab;
    let nb = tab.k;
    assemble_with(space, |c, block| {
        let g = space.mesh().geometry(c)?;
        let jit = g.inverse_transpose();
        for (q, (&xi, &w)) in tab.rule.points.iter().zip(&tab.rule.weights).enumerate() {
            let x = g.to_physical(xi);
            let kq = k.at(c, xi, x);
            if !(kq > 0.0) {
                return Err(Error::NonPositiveCoefficient { cell: c, value: kq });
            }
            let scale = w * g.det.abs() * kq;
            let mut grad = [[0.0; 2]; 6];
            for a in 0..nb {
                let r = tab.grads[q * nb + a];
                grad[a] = [jit[0][0] * r[0] + jit[0][1] * r[1], jit[1][0] * r[0] + jit[1][1] * r[1]];
            }
            for a in 0..nb {
                for b in 0..nb {
                    block[a * nb + b] += scale * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                }
            }
        }
        Ok(())
    })
}

/// Stiffness with one non-negative weight per cell, `Σ_c w_c ∫_c ∇φ_i·∇φ_j`.
/// Zero weights drop a cell, which is how zone-restricted operators are built.
pub fn assemble_cellwise_stiffness(space: &FunctionSpace, weights: &[f64]) -> Result<CsrMatrix> {
    let nc = space.mesh().num_cells();
    if weights.len() != nc {
        return Err(Error::DimensionMismatch { expected: nc, got: weights.len() });
    }
    if let Some((c, &w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::NonPositiveCoefficient { cell: c, value: w });
    }
    let tab = &space.tab;
    let nb = tab.k;
    assemble_with(space, |c, block| {
        if weights[c] == 0.0 {
            return Ok(());
        }
        let g = space.mesh().geometry(c)?;
        let jit = g.inverse_transpose();
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let scale = w * g.det.abs() * weights[c];
            let mut grad = [[0.0; 2]; 6];
            for a in 0..nb {
                let r = tab.grads[q * nb + a];
                grad[a] = [jit[0][0] * r[0] + jit[0][1] * r[1], jit[1][0] * r[0] + jit[1][1] * r[1]];
            }
            for a in 0..nb {
                for b in 0..nb {
                    block[a * nb + b] += scale * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                }
            }
        }
        Ok(())
    })
}

/// `M_ij = ∫ φ_i φ_j dx`.
pub fn assemble_mass(space: &FunctionSpace) -> CsrMatrix {
    let tab = &space.tab;
    let nb = tab.k;
    assemble_with(space, |c, block| {
        let det = space.mesh().geometry(c)?.det.abs();
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let phi = &tab.values[q * nb..(q + 1) * nb];
            for a in 0..nb {
                for b in 0..nb {
                    block[a * nb + b] += w * det * phi[a] * phi[b];
                }
            }
        }
        Ok(())
    })
    .expect("mass assembly has no failure modes on a valid mesh")
}

/// `b_i = ∫ f φ_i dx` by quadrature.
pub fn assemble_load(space: &FunctionSpace, f: &Coefficient) -> Result<Vec<f64>> {
    f.check_space(space)?;
    let tab = &space.tab;
    let nb = tab.k;
    let locals: Vec<Result<[f64; 6]>> = par::map_range(space.mesh().num_cells(), |c| {
        let g = space.mesh().geometry(c)?;
        let mut local = [0.0; 6];
        for (q, (&xi, &w)) in tab.rule.points.iter().zip(&tab.rule.weights).enumerate() {
            let fq = f.at(c, xi, g.to_physical(xi)) * w * g.det.abs();
            for a in 0..nb {
                local[a] += fq * tab.values[q * nb + a];
            }
        }
        Ok(local)
    });
    let mut b = vec![0.0; space.ndofs()];
    for (c, local) in locals.into_iter().enumerate() {
        let local = local?;
        for (a, &d) in space.cell_dofs(c).iter().enumerate() {
            b[d] += local[a];
        }
    }
    Ok(b)
}

/// Gradient-weighted cell integrals `g_j = ∫ w(x) φ_j ∇a·∇b dx` where
/// `w = map(field)`, used for derivatives of `∫ k ∇u·∇λ` with respect to the
/// coefficients of `k`'s underlying field.
pub(crate) fn assemble_coefficient_sensitivity(
    space: &FunctionSpace,
    field: &Field,
    map: &(dyn Fn(f64) -> f64 + Sync),
    a: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let tab = &space.tab;
    let nb = tab.k;
    let locals: Vec<[f64; 6]> = par::map_range(space.mesh().num_cells(), |c| {
        let g = space.mesh().geometry(c).expect("cell index in range");
        let jit = g.inverse_transpose();
        let dofs = space.cell_dofs(c);
        let mut local = [0.0; 6];
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let phi = &tab.values[q * nb..(q + 1) * nb];
            let mut ga = [0.0; 2];
            let mut gb = [0.0; 2];
            let mut fq = 0.0;
            for s in 0..nb {
                let r = tab.grads[q * nb + s];
                let gp = [jit[0][0] * r[0] + jit[0][1] * r[1], jit[1][0] * r[0] + jit[1][1] * r[1]];
                let (ca, cb) = (a[dofs[s]], b[dofs[s]]);
                ga[0] += ca * gp[0];
                ga[1] += ca * gp[1];
                gb[0] += cb * gp[0];
                gb[1] += cb * gp[1];
                fq += field.coeffs[dofs[s]] * phi[s];
            }
            let scale = w * g.det.abs() * map(fq) * (ga[0] * gb[0] + ga[1] * gb[1]);
            for s in 0..nb {
                local[s] += scale * phi[s];
            }
        }
        local
    });
    let mut out = vec![0.0; space.ndofs()];
    for (c, local) in locals.iter().enumerate() {
        for (s, &d) in space.cell_dofs(c).iter().enumerate() {
            out[d] += local[s];
        }
    }
    out
}

/// Symmetric elimination of prescribed dofs.
///
/// Constrained rows and columns are zeroed, the diagonal set to 1 and the
/// right-hand side of the constrained row set to its prescribed value; the
/// column contributions are moved to the right-hand side of the free rows.
pub fn apply_dirichlet_values(a: &CsrMatrix, b: &[f64], constraints: &[(usize, f64)]) -> Result<(CsrMatrix, Vec<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &(d, v) in constraints {
        if d >= n {
            return Err(Error::IndexOutOfRange { index: d, len: n });
        }
        fixed[d] = Some(v);
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let offsets = a.offsets().to_vec();
    let cols = a.col_indices().to_vec();
    let vals = m.values_mut();
    for r in 0..n {
        if let Some(g) = fixed[r] {
            let mut has_diag = false;
            for k in offsets[r]..offsets[r + 1] {
                if cols[k] == r {
                    vals[k] = 1.0;
                    has_diag = true;
                } else {
                    vals[k] = 0.0;
                }
            }
            if !has_diag {
                return Err(Error::InvalidArgument(format!("row {} has no diagonal entry", r)));
            }
            rhs[r] = g;
        } else {
            for k in offsets[r]..offsets[r + 1] {
                if let Some(g) = fixed[cols[k]] {
                    rhs[r] -= vals[k] * g;
                    vals[k] = 0.0;
                }
            }
        }
    }
    Ok((m, rhs))
}

/// Constrain every dof in `dofs` to the same `value`.
pub fn apply_dirichlet(a: &CsrMatrix, b: &[f64], dofs: &[usize], value: f64) -> Result<(CsrMatrix, Vec<f64>)> {
    let c: Vec<(usize, f64)> = dofs.iter().map(|&d| (d, value)).collect();
    apply_dirichlet_values(a, b, &c)
}

/// `sqrt(wᵀ M w)`
pub fn norm_l2(field: &Field) -> f64 {
    let m = field.space().mass_matrix();
    let mw = spmv(m, field.coeffs()).expect("field length matches its space");
    dot(field.coeffs(), &mw).max(0.0).sqrt()
}

/// `sqrt(wᵀ A₁ w)` with the unit-coefficient stiffness.
pub fn norm_h1_semi(field: &Field) -> f64 {
    let a = field.space().unit_stiffness();
    let aw = spmv(a, field.coeffs()).expect("field length matches its space");
    dot(field.coeffs(), &aw).max(0.0).sqrt()
}

/// `‖u_h − u_exact‖_{L²}` by quadrature against a pointwise function.
pub fn error_l2(field: &Field, exact: impl Fn(Point) -> f64 + Sync) -> f64 {
    let space = field.space();
    let tab = &space.tab;
    let parts = par::map_range(space.mesh().num_cells(), |c| {
        let g = space.mesh().geometry(c).expect("cell index in range");
        let mut s = 0.0;
        for (&xi, &w) in tab.rule.points.iter().zip(&tab.rule.weights) {
            let e = field.evaluate_in_cell(c, xi) - exact(g.to_physical(xi));
            s += w * g.det.abs() * e * e;
        }
        s
    });
    parts.iter().sum::<f64>().sqrt()
}
