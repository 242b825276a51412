//! Misfit and regularisation functionals, discrete-adjoint gradients,
//! gradient checks and a limited-memory quasi-Newton minimizer.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{assemble_coefficient_sensitivity, Field};
use crate::forward::{AquiferProblem, ConductivityProblem};
use crate::linalg::{dot, norm2, spmv};
use crate::pointeval::{apply, build_point_interpolator, PointInterpolator};
use crate::vom::{integrate_p0dg, P0DGField, VertexOnlyMesh};

/// Point observations `u_obs^i` at `X_i` with standard deviations `σ_i`.
#[derive(Clone, Debug)]
pub struct Observations {
    vom: Arc<VertexOnlyMesh>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Observations {
    pub fn new(vom: Arc<VertexOnlyMesh>, values: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if values.len() != vom.len() {
            return Err(Error::DimensionMismatch { expected: vom.len(), got: values.len() });
        }
        if sigmas.len() != vom.len() {
            return Err(Error::DimensionMismatch { expected: vom.len(), got: sigmas.len() });
        }
        Ok(Self { vom, values, sigmas })
    }

    pub fn vertex_only_mesh(&self) -> &Arc<VertexOnlyMesh> {
        &self.vom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Observations> {
        let vom = Arc::new(self.vom.subset(indices)?);
        Ok(Observations {
            vom,
            values: indices.iter().map(|&i| self.values[i]).collect(),
            sigmas: indices.iter().map(|&i| self.sigmas[i]).collect(),
        })
    }

    fn check_sigmas(&self) -> Result<()> {
        match self.sigmas.iter().position(|&s| !(s > 0.0)) {
            Some(i) => Err(Error::InvalidArgument(format!("sigma[{}] = {} is not positive", i, self.sigmas[i]))),
            None => Ok(()),
        }
    }
}

/// Which model-data misfit a functional uses.
#[derive(Clone, Debug, PartialEq)]
pub enum MisfitKind {
    /// Sum over observation points of squared residuals.
    Point,
    /// `∫ (u_rec − u)²` against a reconstructed field.
    Field(crate::reconstruct::ReconstructionMethod),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSpec {
    pub misfit: MisfitKind,
    pub alpha: f64,
    /// σ-weighted point misfit `Σ r²/(2σ²)` paired with `α²/2 ∫|∇q|²`.
    pub weighted: bool,
}

impl FunctionalSpec {
    pub fn point(alpha: f64) -> Self {
        Self { misfit: MisfitKind::Point, alpha, weighted: false }
    }

    pub fn weighted_point(alpha: f64) -> Self {
        Self { misfit: MisfitKind::Point, alpha, weighted: true }
    }

    fn regularisation_scale(&self) -> f64 {
        if self.weighted {
            0.5
        } else {
            1.0
        }
    }
}

/// `Σ_i (u_obs^i − u(X_i))²`, or `Σ_i |u(X_i) − u_obs^i|² / (2σ_i²)` when
/// weighted, computed as the integral of a P0DG field over the vertex-only
/// mesh.
pub fn misfit_point(u: &Field, obs: &Observations, interp: &PointInterpolator, weighted: bool) -> Result<f64> {
    if interp.npoints() != obs.len() {
        return Err(Error::DimensionMismatch { expected: interp.npoints(), got: obs.len() });
    }
    if weighted {
        obs.check_sigmas()?;
    }
    let uv = apply(interp, u)?;
    let sq: P0DGField = uv.map(|i, v| {
        let r = obs.values[i] - v;
        if weighted {
            r * r / (2.0 * obs.sigmas[i] * obs.sigmas[i])
        } else {
            r * r
        }
    });
    Ok(integrate_p0dg(&sq))
}

/// `(w_rec − w)ᵀ M (w_rec − w)`
pub fn misfit_field(u: &Field, u_rec: &Field) -> Result<f64> {
    let d = u_rec.axpby(1.0, -1.0, u)?;
    let md = spmv(u.space().mass_matrix(), d.coeffs())?;
    Ok(dot(d.coeffs(), &md))
}

/// `α² ∫ |∇q|² dx = α² qᵀ A₁ q`
pub fn regularisation(q: &Field, alpha: f64) -> f64 {
    let aq = spmv(q.space().unit_stiffness(), q.coeffs()).expect("field length matches its space");
    alpha * alpha * dot(q.coeffs(), &aq)
}

/// Functional value with its gradient in control space.
#[derive(Clone, Debug, Default)]
pub struct GradientReport {
    pub value: f64,
    pub misfit: f64,
    pub regularisation: f64,
    pub gradient: Vec<f64>,
    /// Filled in by [`taylor_test`] when a check was run.
    pub taylor_rates: Vec<f64>,
}

enum Target {
    Points { obs: Observations, interp: PointInterpolator },
    Field(Field),
}

/// Reduced functional `q ↦ J(u(q), q)` for the conductivity problem.
pub struct ConductivityFunctional<'a> {
    problem: &'a ConductivityProblem,
    target: Target,
    alpha: f64,
    weighted: bool,
    reg_scale: f64,
}

/// Values of the parts of a functional at one control.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub misfit: f64,
    pub regularisation: f64,
    pub state: Field,
}

impl Evaluation {
    pub fn total(&self) -> f64 {
        self.misfit + self.regularisation
    }
}

impl<'a> ConductivityFunctional<'a> {
    /// Point misfit against `obs`.
    pub fn point(problem: &'a ConductivityProblem, obs: &Observations, alpha: f64, weighted: bool) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {}", alpha)));
        }
        if weighted {
            obs.check_sigmas()?;
        }
        let interp = build_point_interpolator(problem.space(), obs.vertex_only_mesh())?;
        let spec = if weighted { FunctionalSpec::weighted_point(alpha) } else { FunctionalSpec::point(alpha) };
        Ok(Self {
            problem,
            target: Target::Points { obs: obs.clone(), interp },
            alpha,
            weighted,
            reg_scale: spec.regularisation_scale(),
        })
    }

    /// Field misfit against a reconstructed field `u_rec`, which does not
    /// depend on the control.
    pub fn field(problem: &'a ConductivityProblem, u_rec: Field, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {}", alpha)));
        }
        if !Arc::ptr_eq(u_rec.space(), problem.space()) {
            return Err(Error::MeshMismatch);
        }
        Ok(Self { problem, target: Target::Field(u_rec), alpha, weighted: false, reg_scale: 1.0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn control(&self, q: &[f64]) -> Result<Field> {
        Field::new(self.problem.space().clone(), q.to_vec())
    }

    fn misfit_of(&self, u: &Field) -> Result<f64> {
        match &self.target {
            Target::Points { obs, interp } => misfit_point(u, obs, interp, self.weighted),
            Target::Field(rec) => misfit_field(u, rec),
        }
    }

    /// `∂J_misfit/∂u`
    fn misfit_state_gradient(&self, u: &Field) -> Result<Vec<f64>> {
        match &self.target {
            Target::Points { obs, interp } => {
                let uv = interp.apply_coeffs(u.coeffs())?;
                let w: Vec<f64> = uv
                    .iter()
                    .zip(&obs.values)
                    .zip(&obs.sigmas)
                    .map(|((m, o), s)| if self.weighted { (m - o) / (s * s) } else { 2.0 * (m - o) })
                    .collect();
                interp.apply_adjoint_values(&w)
            }
            Target::Field(rec) => {
                let d: Vec<f64> = u.coeffs().iter().zip(rec.coeffs()).map(|(a, b)| 2.0 * (a - b)).collect();
                spmv(u.space().mass_matrix(), &d)
            }
        }
    }

    pub fn evaluate(&self, q: &[f64]) -> Result<Evaluation> {
        let qf = self.control(q)?;
        let state = self.problem.solve(&qf)?;
        Ok(Evaluation {
            misfit: self.misfit_of(&state)?,
            regularisation: self.reg_scale * regularisation(&qf, self.alpha),
            state,
        })
    }

    pub fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(self.evaluate(q)?.total())
    }

    /// Discrete adjoint gradient: solve `A(q) μ = ∂J/∂u` (μ = 0 on the
    /// boundary), then `dJ/dq_j = −∫ k φ_j ∇μ·∇u + 2 s α² (A₁ q)_j`.
    pub fn gradient(&self, q: &[f64]) -> Result<GradientReport> {
        let qf = self.control(q)?;
        let sys = self.problem.constrained(&qf)?;
        let u = self.problem.solve_system(&sys, self.problem.load())?;
        let u = Field::new(self.problem.space().clone(), u)?;
        let misfit = self.misfit_of(&u)?;
        let dj_du = self.misfit_state_gradient(&u)?;
        let mu = self.problem.solve_system(&sys, &dj_du)?;
        let k0 = self.problem.k0();
        let map = move |v: f64| k0 * v.exp();
        let sens = assemble_coefficient_sensitivity(self.problem.space(), &qf, &map, &mu, u.coeffs());
        let a1q = spmv(qf.space().unit_stiffness(), q)?;
        let s = self.reg_scale * self.alpha * self.alpha;
        let gradient = sens.iter().zip(&a1q).map(|(g, r)| -g + 2.0 * s * r).collect();
        let regularisation = s * dot(q, &a1q);
        Ok(GradientReport { value: misfit + regularisation, misfit, regularisation, gradient, taylor_rates: Vec::new() })
    }
}

/// Gradient of the conductivity functional described by `spec` at `q`.
///
/// Field misfits reconstruct `u_rec` from `obs` first; the reconstruction is
/// independent of `q`.
pub fn gradient_conductivity(
    problem: &ConductivityProblem,
    q: &Field,
    spec: &FunctionalSpec,
    obs: &Observations,
) -> Result<GradientReport> {
    let functional = match &spec.misfit {
        MisfitKind::Point => ConductivityFunctional::point(problem, obs, spec.alpha, spec.weighted)?,
        MisfitKind::Field(method) => {
            let rec = crate::reconstruct::reconstruct(obs, problem.space(), method)?;
            ConductivityFunctional::field(problem, rec, spec.alpha)?
        }
    };
    functional.gradient(q.coeffs())
}

/// Head observations at fixed wells, sampled at a subset of time steps.
#[derive(Clone, Debug)]
pub struct ObservationSeries {
    pub wells: Arc<VertexOnlyMesh>,
    /// Time-step indices (into the head history) of each sample.
    pub steps: Vec<usize>,
    /// `values[k][i]`: head at well `i` at `steps[k]`.
    pub values: Vec<Vec<f64>>,
    pub sigma: f64,
}

/// σ-weighted time-summed point misfit of the aquifer model as a function
/// of the three zonal transmissivities.
pub struct GroundwaterFunctional<'a> {
    problem: &'a AquiferProblem,
    series: &'a ObservationSeries,
    interp: PointInterpolator,
}

impl<'a> GroundwaterFunctional<'a> {
    pub fn new(problem: &'a AquiferProblem, series: &'a ObservationSeries) -> Result<Self> {
        if !(series.sigma > 0.0) {
            return Err(Error::InvalidArgument("observation sigma must be positive".into()));
        }
        if series.steps.len() != series.values.len() {
            return Err(Error::DimensionMismatch { expected: series.steps.len(), got: series.values.len() });
        }
        if let Some(&s) = series.steps.iter().find(|&&s| s > problem.nsteps()) {
            return Err(Error::IndexOutOfRange { index: s, len: problem.nsteps() + 1 });
        }
        for v in &series.values {
            if v.len() != series.wells.len() {
                return Err(Error::DimensionMismatch { expected: series.wells.len(), got: v.len() });
            }
        }
        let interp = problem.interpolator(&series.wells)?;
        Ok(Self { problem, series, interp })
    }

    fn residuals(&self, heads: &[Field]) -> Result<Vec<Vec<f64>>> {
        self.series
            .steps
            .iter()
            .zip(&self.series.values)
            .map(|(&k, obs)| {
                let m = self.interp.apply_coeffs(heads[k].coeffs())?;
                Ok(m.iter().zip(obs).map(|(a, b)| a - b).collect())
            })
            .collect()
    }

    fn sum_weighted(&self, res: &[Vec<f64>]) -> f64 {
        let s2 = 2.0 * self.series.sigma * self.series.sigma;
        let flat: Vec<f64> = res.iter().flatten().map(|r| r * r / s2).collect();
        crate::vom::compensated_sum(&flat)
    }

    pub fn value(&self, t: &[f64; 3]) -> Result<f64> {
        let h = self.problem.simulate(t)?;
        Ok(self.sum_weighted(&self.residuals(&h.heads)?))
    }

    /// Value and `∂J/∂T_z` from forward sensitivities.
    pub fn value_and_gradient(&self, t: &[f64; 3]) -> Result<(f64, [f64; 3])> {
        let (h, sens) = self.problem.simulate_with_sensitivities(t, true)?;
        let res = self.residuals(&h.heads)?;
        let s2 = self.series.sigma * self.series.sigma;
        let mut g = [0.0; 3];
        for z in 0..3 {
            for (k, r) in self.series.steps.iter().zip(&res) {
                let ds = self.interp.apply_coeffs(&sens[z][*k])?;
                g[z] += r.iter().zip(&ds).map(|(a, b)| a * b / s2).sum::<f64>();
            }
        }
        Ok((self.sum_weighted(&res), g))
    }
}

pub fn gradient_groundwater(problem: &AquiferProblem, series: &ObservationSeries, t: &[f64; 3]) -> Result<[f64; 3]> {
    Ok(GroundwaterFunctional::new(problem, series)?.value_and_gradient(t)?.1)
}

/// Remainders `|J(x + hδ) − J(x) − h⟨g, δ⟩|` and observed convergence rates
/// between consecutive step sizes.
#[derive(Clone, Debug)]
pub struct TaylorResult {
    pub steps: Vec<f64>,
    pub remainders: Vec<f64>,
    pub rates: Vec<f64>,
}

impl TaylorResult {
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn taylor_test(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    gradient: &[f64],
    direction: &[f64],
    steps: &[f64],
) -> Result<TaylorResult> {
    if gradient.len() != x.len() || direction.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: direction.len() });
    }
    let f0 = f(x)?;
    let slope = dot(gradient, direction);
    let mut remainders = Vec::with_capacity(steps.len());
    for &h in steps {
        let xh: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + h * d).collect();
        remainders.push((f(&xh)? - f0 - h * slope).abs());
    }
    let rates = remainders
        .windows(2)
        .zip(steps.windows(2))
        .map(|(r, h)| (r[0] / r[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    Ok(TaylorResult { steps: steps.to_vec(), remainders, rates })
}

/// `(J(x + hδ) − J(x − hδ)) / 2h`
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], direction: &[f64], h: f64) -> Result<f64> {
    let xp: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + h * d).collect();
    let xm: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a - h * d).collect();
    Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
}

#[derive(Clone, Copy, Debug)]
pub struct MinimizeOptions {
    pub memory: usize,
    /// Stop when ‖g‖ ≤ gtol · ‖g₀‖.
    pub gtol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { memory: 10, gtol: 1e-8, max_iter: 200, max_backtracks: 50, c1: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
}

/// Best iterate reached before the line search gave up.
#[derive(Clone, Debug)]
pub struct Stagnated {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
}

/// Write a convergence trace as CSV.
pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceEntry], mut w: W) -> Result<()> {
    writeln!(w, "iteration,value,grad_norm,step")?;
    for t in trace {
        writeln!(w, "{},{},{},{}", t.iteration, t.value, t.grad_norm, t.step)?;
    }
    Ok(())
}

/// L-BFGS with Armijo backtracking.
///
/// `fg` returns the value and gradient. Accepted iterates have
/// non-increasing values. If backtracking fails along the quasi-Newton
/// direction the memory is dropped and steepest descent is tried once
/// before reporting [`Error::Stagnation`].
pub fn minimize<F>(mut fg: F, x0: &[f64], opts: &MinimizeOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    if !f.is_finite() {
        return Err(Error::InvalidArgument("objective is not finite at the initial point".into()));
    }
    let g0 = norm2(&g);
    let mut trace = vec![TraceEntry { iteration: 0, value: f, grad_norm: g0, step: 0.0 }];
    if g0 == 0.0 {
        return Ok(Minimum { x, value: f, trace, termination: Termination::GradientTolerance });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for iter in 1..=opts.max_iter {
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                s_hist.clear();
                y_hist.clear();
            }
            let d = lbfgs_direction(&g, &s_hist, &y_hist);
            let mut slope = dot(&g, &d);
            let d = if slope < 0.0 {
                d
            } else {
                slope = -dot(&g, &g);
                g.iter().map(|v| -v).collect()
            };
            let mut step = if s_hist.is_empty() { (1.0 / norm2(&d)).min(1.0) } else { 1.0 };
            for _ in 0..opts.max_backtracks {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                match fg(&xt) {
                    Ok((ft, gt)) if ft.is_finite() && ft <= f + opts.c1 * step * slope => {
                        accepted = Some((xt, ft, gt, step));
                        break;
                    }
                    // a failed forward solve is treated as a rejected trial
                    Ok(_) | Err(Error::NotConverged(_)) | Err(Error::Indefinite { .. }) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            if accepted.is_some() || s_hist.is_empty() {
                break;
            }
        }
        let Some((xn, fn_, gn, step)) = accepted else {
            return Err(Error::Stagnation(Box::new(Stagnated { x, value: f, trace })));
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm2(&s) * norm2(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = xn;
        f = fn_;
        g = gn;
        let gn_norm = norm2(&g);
        trace.push(TraceEntry { iteration: iter, value: f, grad_norm: gn_norm, step });
        if gn_norm <= opts.gtol * g0 {
            return Ok(Minimum { x, value: f, trace, termination: Termination::GradientTolerance });
        }
    }
    Ok(Minimum { x, value: f, trace, termination: Termination::MaxIterations })
}

/// Two-loop recursion for `−H g`.
fn lbfgs_direction(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let m = s_hist.len();
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; m];
    let rhos: Vec<f64> = (0..m).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
    for i in (0..m).rev() {
        alphas[i] = rhos[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    let gamma = if m > 0 { dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]) } else { 1.0 };
    q.iter_mut().for_each(|v| *v *= gamma);
    for i in 0..m {
        let beta = rhos[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
