//! Compressed-row sparse matrices and a Jacobi-preconditioned conjugate
//! gradient solver.

use std::io::Write;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
///
/// Column indices within each row are sorted and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows {
                return Err(Error::IndexOutOfRange { index: r, len: nrows });
            }
            if c >= ncols {
                return Err(Error::IndexOutOfRange { index: c, len: ncols });
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut staged = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            staged[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut offsets = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        offsets.push(0);
        for r in 0..nrows {
            let row = &mut staged[counts[r]..counts[r + 1]];
            // stable sort keeps duplicate summation order deterministic
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            offsets.push(cols.len());
        }
        Ok(Self { nrows, ncols, offsets, cols, values })
    }

    /// Structure-only constructor; `cols` rows must already be sorted and unique.
    pub fn from_pattern(nrows: usize, ncols: usize, offsets: Vec<usize>, cols: Vec<usize>) -> Self {
        debug_assert_eq!(offsets.len(), nrows + 1);
        let nnz = cols.len();
        Self { nrows, ncols, offsets, cols, values: vec![0.0; nnz] }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterate over `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[r]..self.offsets[r + 1];
        self.cols[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    /// Storage position of entry (r, c), if structurally present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let start = self.offsets[r];
        self.cols[start..self.offsets[r + 1]]
            .binary_search(&c)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self + s * other` for matrices sharing one sparsity pattern.
    pub fn add_scaled_same_pattern(&self, s: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.offsets != other.offsets || self.cols != other.cols {
            return Err(Error::InvalidArgument("sparsity patterns differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trip.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &trip).expect("transpose indices are in range")
    }

    /// Maximum absolute entry of `self - self^T`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let vt = if c < self.nrows { self.get(c, r) } else { 0.0 };
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.asymmetry() <= tol
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    /// Write in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

/// y = A x
pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; a.nrows];
    spmv_into(a, x, &mut y)?;
    Ok(y)
}

pub fn spmv_into(a: &CsrMatrix, x: &[f64], y: &mut [f64]) -> Result<()> {
    if x.len() != a.ncols {
        return Err(Error::DimensionMismatch { expected: a.ncols, got: x.len() });
    }
    if y.len() != a.nrows {
        return Err(Error::DimensionMismatch { expected: a.nrows, got: y.len() });
    }
    for (r, yr) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in a.offsets[r]..a.offsets[r + 1] {
            s += a.values[k] * x[a.cols[k]];
        }
        *yr = s;
    }
    Ok(())
}

/// y = A^T x
pub fn spmv_transpose(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.nrows {
        return Err(Error::DimensionMismatch { expected: a.nrows, got: x.len() });
    }
    let mut y = vec![0.0; a.ncols];
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        for k in a.offsets[r]..a.offsets[r + 1] {
            y[a.cols[k]] += a.values[k] * xr;
        }
    }
    Ok(y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target ‖Ax − b‖ / ‖b‖.
    pub tol: f64,
    /// `None` means 10 × n.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

/// Jacobi-preconditioned conjugate gradient from a zero initial guess.
///
/// Returns the iterate together with a report; callers decide whether a
/// non-converged report is fatal (see [`cg_solve_checked`]).
pub fn cg_solve(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(Error::InvalidArgument(format!("cg needs a square matrix, got {}x{}", n, a.ncols)));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("right-hand side is not finite".into()));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, converged: true }));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;

    for it in 0..max_iter {
        spmv_into(a, &p, &mut ap)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Indefinite { iteration: it, curvature: pap });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= opts.tol {
            return Ok((x, SolveReport { iterations: it + 1, relative_residual: rel, converged: true }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, SolveReport { iterations: max_iter, relative_residual: rel, converged: false }))
}

/// As [`cg_solve`], but a non-converged solve is an error.
pub fn cg_solve_checked(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
    let (x, report) = cg_solve(a, b, opts)?;
    if !report.converged {
        return Err(Error::NotConverged(report));
    }
    Ok(x)
}
