//! Forward models: steady diffusion with log-conductivity control, and
//! transient confined groundwater flow with zonal transmissivity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    apply_dirichlet_values, assemble_cellwise_stiffness, assemble_load, assemble_weighted_stiffness, Coefficient,
    Field, FunctionSpace, P1, P2,
};
use crate::linalg::{cg_solve, dot, spmv, CgOptions, CsrMatrix};
use crate::mesh::{build_rectangle_mesh, Point, TriangleMesh};
use crate::pointeval::{build_point_interpolator, PointInterpolator};
use crate::vom::{build_vertex_only_mesh, VertexOnlyMesh};

fn solve_or_report(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
    let (x, report) = cg_solve(a, b, opts)?;
    if !report.converged {
        return Err(Error::NotConverged(report));
    }
    Ok(x)
}

/// Homogeneous Dirichlet system reused across right-hand sides: the matrix
/// after symmetric elimination and the constrained dofs to zero in `b`.
#[derive(Clone, Debug)]
pub(crate) struct ConstrainedSystem {
    pub matrix: CsrMatrix,
    constrained: Vec<bool>,
    lift: Vec<f64>,
}

impl ConstrainedSystem {
    pub fn new(a: &CsrMatrix, constraints: &[(usize, f64)]) -> Result<Self> {
        let (matrix, lift) = apply_dirichlet_values(a, &vec![0.0; a.nrows()], constraints)?;
        let mut constrained = vec![false; a.nrows()];
        for &(d, _) in constraints {
            constrained[d] = true;
        }
        Ok(Self { matrix, constrained, lift })
    }

    /// Right-hand side for load `b` with the prescribed boundary values.
    pub fn rhs(&self, b: &[f64]) -> Vec<f64> {
        b.iter()
            .zip(&self.constrained)
            .zip(&self.lift)
            .map(|((&v, &c), &l)| if c { l } else { v + l })
            .collect()
    }

    /// Right-hand side for load `b` with homogeneous boundary values.
    pub fn rhs_homogeneous(&self, b: &[f64]) -> Vec<f64> {
        b.iter().zip(&self.constrained).map(|(&v, &c)| if c { 0.0 } else { v }).collect()
    }
}

/// `−∇·(k ∇u) = f` on a rectangle with `u = 0` on the boundary and
/// `k = k0·exp(q)`.
#[derive(Clone, Debug)]
pub struct ConductivityProblem {
    space: Arc<FunctionSpace>,
    k0: f64,
    load: Vec<f64>,
    boundary: Vec<usize>,
    pub cg: CgOptions,
}

impl ConductivityProblem {
    /// P2 state and control on an `n × n` unit square with `f ≡ 1`, `k0 = 0.5`.
    pub fn unit_square(n: usize) -> Result<Self> {
        let mesh = Arc::new(build_rectangle_mesh(n, n, 1.0, 1.0)?);
        let space = FunctionSpace::new(mesh, P2)?;
        Self::new(space, 0.5, &Coefficient::Constant(1.0))
    }

    pub fn new(space: Arc<FunctionSpace>, k0: f64, forcing: &Coefficient) -> Result<Self> {
        if !(k0 > 0.0) {
            return Err(Error::InvalidArgument(format!("k0 must be positive, got {}", k0)));
        }
        let load = assemble_load(&space, forcing)?;
        let boundary = space.boundary_dofs();
        Ok(Self { space, k0, load, boundary, cg: CgOptions::default() })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary
    }

    /// Unconstrained `A(q)` with `k = k0·exp(q)` evaluated at quadrature points.
    pub fn stiffness(&self, q: &Field) -> Result<CsrMatrix> {
        if !Arc::ptr_eq(q.space(), &self.space) {
            return Err(Error::MeshMismatch);
        }
        if q.coeffs().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control field is not finite".into()));
        }
        let k0 = self.k0;
        let map = move |v: f64| k0 * v.exp();
        assemble_weighted_stiffness(&self.space, &Coefficient::MappedField(q, &map))
    }

    pub(crate) fn constrained(&self, q: &Field) -> Result<ConstrainedSystem> {
        let a = self.stiffness(q)?;
        let bc: Vec<(usize, f64)> = self.boundary.iter().map(|&d| (d, 0.0)).collect();
        ConstrainedSystem::new(&a, &bc)
    }

    /// Solve `A(q) u = b` with `u = 0` on the boundary.
    pub fn solve(&self, q: &Field) -> Result<Field> {
        let sys = self.constrained(q)?;
        let u = solve_or_report(&sys.matrix, &sys.rhs(&self.load), self.cg)?;
        Field::new(self.space.clone(), u)
    }

    pub(crate) fn solve_system(&self, sys: &ConstrainedSystem, b: &[f64]) -> Result<Vec<f64>> {
        solve_or_report(&sys.matrix, &sys.rhs_homogeneous(b), self.cg)
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }
}

pub fn solve_conductivity(problem: &ConductivityProblem, q: &Field) -> Result<Field> {
    problem.solve(q)
}

/// Scenario parameters of the synthetic aquifer (lengths in m, time in days).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AquiferConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub storativity: f64,
    /// Zonal transmissivity (m²/day) of the three vertical strips, left to right.
    pub transmissivity: [f64; 3],
    /// Extraction rate (m³/day) at the pumping well.
    pub pumping_rate: f64,
    pub pumping_well: Point,
    /// Pumping ramps linearly from zero over this many days (0 = step).
    pub pump_ramp: f64,
    pub initial_head: f64,
    pub boundary_head: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for AquiferConfig {
    fn default() -> Self {
        Self {
            nx: 30,
            ny: 15,
            lx: 1000.0,
            ly: 500.0,
            storativity: 1e-4,
            transmissivity: [50.0, 150.0, 300.0],
            pumping_rate: 2000.0,
            pumping_well: [800.0, 250.0],
            pump_ramp: 0.0,
            initial_head: 100.0,
            boundary_head: 100.0,
            dt: 0.5,
            horizon: 10.0,
        }
    }
}

/// Transient Dupuit flow `S ∂φ/∂t − ∇·(T ∇φ) = q` discretized with P1
/// elements and backward Euler, fixed head on the left edge and no flow
/// elsewhere.
#[derive(Clone, Debug)]
pub struct AquiferProblem {
    config: AquiferConfig,
    space: Arc<FunctionSpace>,
    zone_of_cell: Vec<usize>,
    zone_stiffness: [CsrMatrix; 3],
    wells: Arc<VertexOnlyMesh>,
    well_load: Vec<f64>,
    left: Vec<usize>,
    nsteps: usize,
    pub cg: CgOptions,
}

/// Sampled head fields.
#[derive(Clone, Debug)]
pub struct HeadHistory {
    pub times: Vec<f64>,
    pub heads: Vec<Field>,
}

impl AquiferProblem {
    pub fn new(config: AquiferConfig) -> Result<Self> {
        if !(config.storativity > 0.0) {
            return Err(Error::InvalidArgument("storativity must be positive".into()));
        }
        if config.transmissivity.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("transmissivities must be positive".into()));
        }
        if !(config.dt > 0.0 && config.horizon > 0.0) {
            return Err(Error::InvalidArgument("time step and horizon must be positive".into()));
        }
        let nsteps = (config.horizon / config.dt).round() as usize;
        if nsteps == 0 || ((nsteps as f64) * config.dt - config.horizon).abs() > 1e-9 * config.horizon {
            return Err(Error::InvalidArgument(format!(
                "horizon {} is not a whole number of steps of {}",
                config.horizon, config.dt
            )));
        }
        let mesh = Arc::new(build_rectangle_mesh(config.nx, config.ny, config.lx, config.ly)?);
        let space = FunctionSpace::new(mesh.clone(), P1)?;
        let zone_of_cell = zone_map(&mesh, config.lx);
        let zone_stiffness = [0, 1, 2].map(|z| {
            let w: Vec<f64> = zone_of_cell.iter().map(|&c| if c == z { 1.0 } else { 0.0 }).collect();
            assemble_cellwise_stiffness(&space, &w)
        });
        let [a0, a1, a2] = zone_stiffness;
        let zone_stiffness = [a0?, a1?, a2?];
        let wells = Arc::new(build_vertex_only_mesh(mesh, vec![config.pumping_well])?);
        let well_load = crate::pointeval::delta_load(&space, &wells, &[-config.pumping_rate])?;
        let left = space.dofs_where(|x| x[0] == 0.0);
        Ok(Self { config, space, zone_of_cell, zone_stiffness, wells, well_load, left, nsteps, cg: CgOptions::default() })
    }

    pub fn config(&self) -> &AquiferConfig {
        &self.config
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn zone_of_cell(&self) -> &[usize] {
        &self.zone_of_cell
    }

    pub fn zone_of_point(&self, x: Point) -> usize {
        zone_of_x(x[0], self.config.lx)
    }

    pub fn pumping_wells(&self) -> &Arc<VertexOnlyMesh> {
        &self.wells
    }

    pub fn nsteps(&self) -> usize {
        self.nsteps
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nsteps).map(|n| n as f64 * self.config.dt).collect()
    }

    fn pump_factor(&self, t: f64) -> f64 {
        if self.config.pump_ramp > 0.0 {
            (t / self.config.pump_ramp).min(1.0)
        } else {
            1.0
        }
    }

    /// `A(T) = Σ_z T_z A_z`
    pub fn stiffness(&self, t: &[f64; 3]) -> CsrMatrix {
        let mut a = self.zone_stiffness[0].clone();
        a.scale(t[0]);
        for z in 1..3 {
            a = a.add_scaled_same_pattern(t[z], &self.zone_stiffness[z]).expect("zone operators share one pattern");
        }
        a
    }

    pub fn zone_stiffness(&self, z: usize) -> &CsrMatrix {
        &self.zone_stiffness[z]
    }

    /// `S/Δt M + A(T)`, unconstrained.
    pub fn step_matrix(&self, t: &[f64; 3]) -> CsrMatrix {
        let s_dt = self.config.storativity / self.config.dt;
        self.stiffness(t)
            .add_scaled_same_pattern(s_dt, self.space.mass_matrix())
            .expect("mass and stiffness share one pattern")
    }

    fn step_system(&self, t: &[f64; 3]) -> Result<ConstrainedSystem> {
        let bc: Vec<(usize, f64)> = self.left.iter().map(|&d| (d, self.config.boundary_head)).collect();
        ConstrainedSystem::new(&self.step_matrix(t), &bc)
    }

    fn storage_load(&self, phi: &[f64]) -> Vec<f64> {
        let s_dt = self.config.storativity / self.config.dt;
        let mut b = spmv(self.space.mass_matrix(), phi).expect("head length matches space");
        b.iter_mut().for_each(|v| *v *= s_dt);
        b
    }

    /// Implicit Euler run with the given zonal transmissivities.
    pub fn simulate(&self, t: &[f64; 3]) -> Result<HeadHistory> {
        Ok(self.simulate_with_sensitivities(t, false)?.0)
    }

    /// Head history plus, when requested, `∂φⁿ/∂T_z` for every step and zone
    /// (`sens[z][n]`), from the tangent-linear recursion
    /// `K sⁿ⁺¹ = S/Δt M sⁿ − A_z φⁿ⁺¹` with `s = 0` on the fixed-head edge.
    pub fn simulate_with_sensitivities(
        &self,
        t: &[f64; 3],
        sensitivities: bool,
    ) -> Result<(HeadHistory, Vec<Vec<Vec<f64>>>)> {
        if t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("transmissivities must be positive, got {:?}", t)));
        }
        let sys = self.step_system(t)?;
        let n = self.space.ndofs();
        let mut phi = vec![self.config.initial_head; n];
        let times = self.times();
        let mut heads = vec![Field::new(self.space.clone(), phi.clone())?];
        let mut sens: Vec<Vec<Vec<f64>>> = if sensitivities { vec![vec![vec![0.0; n]]; 3] } else { Vec::new() };

        for step in 1..=self.nsteps {
            let mut b = self.storage_load(&phi);
            let f = self.pump_factor(times[step]);
            for (bi, w) in b.iter_mut().zip(&self.well_load) {
                *bi += f * w;
            }
            phi = solve_or_report(&sys.matrix, &sys.rhs(&b), self.cg)?;
            if sensitivities {
                for z in 0..3 {
                    let mut rhs = self.storage_load(&sens[z][step - 1]);
                    let az = spmv(&self.zone_stiffness[z], &phi)?;
                    for (r, a) in rhs.iter_mut().zip(&az) {
                        *r -= a;
                    }
                    let s = solve_or_report(&sys.matrix, &sys.rhs_homogeneous(&rhs), self.cg)?;
                    sens[z].push(s);
                }
            }
            heads.push(Field::new(self.space.clone(), phi.clone())?);
        }
        Ok((HeadHistory { times, heads }, sens))
    }

    /// Water budget of step `n-1 → n`.
    pub fn step_budget(&self, t: &[f64; 3], history: &HeadHistory, step: usize) -> Result<StepBudget> {
        if step == 0 || step >= history.heads.len() {
            return Err(Error::IndexOutOfRange { index: step, len: history.heads.len() });
        }
        let prev = history.heads[step - 1].coeffs();
        let next = history.heads[step].coeffs();
        let m = self.space.mass_matrix();
        let ones = vec![1.0; next.len()];
        let dphi: Vec<f64> = next.iter().zip(prev).map(|(a, b)| a - b).collect();
        let storage_rate = self.config.storativity * dot(&ones, &spmv(m, &dphi)?) / self.config.dt;

        // residual of the unconstrained equations on the fixed-head rows is
        // the water entering through that edge
        let k = self.step_matrix(t);
        let kphi = spmv(&k, next)?;
        let b = self.storage_load(prev);
        let f = self.pump_factor(history.times[step]);
        let inflow: f64 = self.left.iter().map(|&d| kphi[d] - b[d] - f * self.well_load[d]).sum();
        Ok(StepBudget {
            storage_rate,
            boundary_outflow: -inflow,
            pumping: f * self.config.pumping_rate,
        })
    }

    pub fn interpolator(&self, wells: &Arc<VertexOnlyMesh>) -> Result<PointInterpolator> {
        build_point_interpolator(&self.space, wells)
    }
}

/// Terms of `S d/dt ∫φ + boundary outflow + pumping = 0`.
#[derive(Clone, Copy, Debug)]
pub struct StepBudget {
    pub storage_rate: f64,
    pub boundary_outflow: f64,
    pub pumping: f64,
}

impl StepBudget {
    pub fn imbalance(&self) -> f64 {
        self.storage_rate + self.boundary_outflow + self.pumping
    }
}

fn zone_of_x(x: f64, lx: f64) -> usize {
    ((3.0 * x / lx).floor().max(0.0) as usize).min(2)
}

fn zone_map(mesh: &TriangleMesh, lx: f64) -> Vec<usize> {
    (0..mesh.num_cells())
        .map(|c| {
            let v = mesh.cell_vertices(c);
            zone_of_x((v[0][0] + v[1][0] + v[2][0]) / 3.0, lx)
        })
        .collect()
}

pub fn solve_groundwater(problem: &AquiferProblem) -> Result<HeadHistory> {
    problem.simulate(&problem.config.transmissivity)
}
