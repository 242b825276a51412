//! Point evaluation as a linear interpolation operator onto P0DG.
//!
//! Row `i` of the operator holds the parent basis functions of the cell
//! containing `X_i`, tabulated at the point's reference coordinates. Applying
//! the matrix evaluates `u(X_i)` exactly; its transpose is the adjoint used
//! for gradients and for point (delta) loads.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{Field, FunctionSpace};
use crate::linalg::{spmv, spmv_transpose, CsrMatrix};
use crate::par;
use crate::vom::{P0DGField, VertexOnlyMesh};

#[derive(Clone, Debug)]
pub struct PointInterpolator {
    matrix: CsrMatrix,
    space: Arc<FunctionSpace>,
    vom: Arc<VertexOnlyMesh>,
}

impl PointInterpolator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn vertex_only_mesh(&self) -> &Arc<VertexOnlyMesh> {
        &self.vom
    }

    pub fn npoints(&self) -> usize {
        self.matrix.nrows()
    }

    /// `I w` on raw coefficients.
    pub fn apply_coeffs(&self, w: &[f64]) -> Result<Vec<f64>> {
        spmv(&self.matrix, w)
    }

    /// `Iᵀ y` on raw point values.
    pub fn apply_adjoint_values(&self, y: &[f64]) -> Result<Vec<f64>> {
        spmv_transpose(&self.matrix, y)
    }
}

pub fn build_point_interpolator(space: &Arc<FunctionSpace>, vom: &Arc<VertexOnlyMesh>) -> Result<PointInterpolator> {
    if !Arc::ptr_eq(space.mesh(), vom.parent()) {
        return Err(Error::MeshMismatch);
    }
    let element = space.element();
    let k = element.dim();
    let rows: Vec<Vec<(usize, f64)>> = par::map_range(vom.len(), |i| {
        let cell = vom.parent_cells()[i];
        let (vals, _) = element.tabulate(vom.reference_coords()[i]);
        space.cell_dofs(cell).iter().copied().zip(vals).collect()
    });
    let mut trip = Vec::with_capacity(vom.len() * k);
    for (i, row) in rows.into_iter().enumerate() {
        trip.extend(row.into_iter().map(|(d, v)| (i, d, v)));
    }
    let matrix = CsrMatrix::from_triplets(vom.len(), space.ndofs(), &trip)?;
    Ok(PointInterpolator { matrix, space: space.clone(), vom: vom.clone() })
}

/// `u_v = I(u)`: the values of `u` at the vertex-only mesh points.
pub fn apply(interp: &PointInterpolator, u: &Field) -> Result<P0DGField> {
    if !Arc::ptr_eq(u.space(), &interp.space) {
        return Err(Error::MeshMismatch);
    }
    P0DGField::new(interp.vom.clone(), interp.apply_coeffs(u.coeffs())?)
}

/// `Iᵀ y`, a vector in the parent dof space.
pub fn apply_adjoint(interp: &PointInterpolator, y: &[f64]) -> Result<Vec<f64>> {
    interp.apply_adjoint_values(y)
}

/// Right-hand side of point forcing `Σ_i w_i δ(x − X_i)`: `b = Iᵀ w`.
pub fn delta_load(space: &Arc<FunctionSpace>, vom: &Arc<VertexOnlyMesh>, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != vom.len() {
        return Err(Error::DimensionMismatch { expected: vom.len(), got: weights.len() });
    }
    let interp = build_point_interpolator(space, vom)?;
    apply_adjoint(&interp, weights)
}
