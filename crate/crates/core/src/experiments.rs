//! Study drivers: posterior consistency, L-curves, cross-validation and
//! the groundwater ensemble. Every table is a pure function of the config.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assimilate::{
    minimize, ConductivityFunctional, GroundwaterFunctional, MinimizeOptions, Minimum, ObservationSeries, Observations,
    Termination, TraceEntry,
};
use crate::error::{Error, Result};
use crate::fem::{interpolate_callable, norm_h1_semi, norm_l2, Field};
use crate::forward::{AquiferConfig, AquiferProblem, ConductivityProblem};
use crate::mesh::Point;
use crate::par;
use crate::pointeval::build_point_interpolator;
use crate::reconstruct::{reconstruct, ReconstructionMethod};
use crate::vom::build_vertex_only_mesh;

/// All tunables of the studies. Every key has a default, so a config file
/// only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Cells per side of the unit-square conductivity mesh.
    pub mesh_n: usize,
    pub n_list: Vec<usize>,
    pub alpha: f64,
    /// Observation noise as a fraction of `max u_true`.
    pub noise_relative: f64,
    /// Any of `point`, `nearest`, `linear`, `rbf`.
    pub methods: Vec<String>,
    pub lcurve_n: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_count: usize,
    pub xval_n: usize,
    /// α range of the cross-validation sweep. The σ-weighted misfit is
    /// larger than the plain one by `1/(2σ²)`, so its useful α is larger.
    pub xval_alpha_min: f64,
    pub xval_alpha_max: f64,
    /// Fraction of the observations used for training.
    pub train_fraction: f64,
    pub max_iter: usize,
    pub gtol: f64,
    pub ensemble_size: usize,
    pub hydro_nx: usize,
    pub hydro_ny: usize,
    /// Head measurement noise (m).
    pub hydro_noise: f64,
    pub wells_per_zone_a: usize,
    /// Days between measurements in scenario A.
    pub interval_a: f64,
    pub wells_per_zone_b: usize,
    pub interval_b: f64,
    pub horizon: f64,
    pub true_transmissivity: [f64; 3],
    pub initial_transmissivity: [f64; 3],
    pub storativity: f64,
    pub pumping_rate: f64,
    /// Mesh and observation count of the gradient checks.
    pub taylor_mesh_n: usize,
    pub taylor_n: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mesh_n: 32,
            n_list: vec![64, 256, 1024, 4096],
            alpha: 0.02,
            noise_relative: 0.01,
            methods: ["point", "nearest", "linear", "rbf"].map(String::from).to_vec(),
            lcurve_n: 256,
            alpha_min: 1e-4,
            alpha_max: 1.0,
            alpha_count: 13,
            xval_n: 4096,
            xval_alpha_min: 1e-2,
            xval_alpha_max: 1e2,
            train_fraction: 0.05,
            max_iter: 200,
            gtol: 1e-8,
            ensemble_size: 30,
            hydro_nx: 30,
            hydro_ny: 15,
            hydro_noise: 0.01,
            wells_per_zone_a: 6,
            interval_a: 0.5,
            wells_per_zone_b: 2,
            interval_b: 0.125,
            horizon: 10.0,
            true_transmissivity: [50.0, 150.0, 300.0],
            initial_transmissivity: [100.0, 100.0, 100.0],
            storativity: 1e-4,
            pumping_rate: 2000.0,
            taylor_mesh_n: 8,
            taylor_n: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.mesh_n == 0 || self.taylor_mesh_n == 0 || self.hydro_nx == 0 || self.hydro_ny == 0 {
            return bad("mesh resolutions must be positive");
        }
        if self.n_list.iter().any(|&n| n == 0) || self.lcurve_n == 0 || self.xval_n == 0 {
            return bad("observation counts must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        let range_ok = |lo: f64, hi: f64| lo > 0.0 && hi >= lo;
        if !(self.alpha >= 0.0)
            || !range_ok(self.alpha_min, self.alpha_max)
            || !range_ok(self.xval_alpha_min, self.xval_alpha_max)
            || self.alpha_count == 0
        {
            return bad("alpha settings must be positive with alpha_min <= alpha_max");
        }
        if !(self.noise_relative >= 0.0 && self.hydro_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        for m in &self.methods {
            if m != "point" && ReconstructionMethod::from_name(m).is_none() {
                return Err(Error::InvalidArgument(format!("unknown method '{}'", m)));
            }
        }
        if self.wells_per_zone_a == 0 || self.wells_per_zone_b == 0 {
            return bad("each scenario needs at least one well per zone");
        }
        Ok(())
    }

    /// Geometric α sweep from `alpha_min` to `alpha_max`.
    pub fn alpha_sweep(&self) -> Vec<f64> {
        geometric(self.alpha_min, self.alpha_max, self.alpha_count)
    }

    pub fn xval_alpha_sweep(&self) -> Vec<f64> {
        geometric(self.xval_alpha_min, self.xval_alpha_max, self.alpha_count)
    }

    fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions { max_iter: self.max_iter, gtol: self.gtol, ..Default::default() }
    }
}

fn geometric(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let m = (count - 1) as f64;
    (0..count).map(|i| (a + (b - a) * i as f64 / m).exp()).collect()
}

/// One entry of a [`ResultTable`].
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{}", v),
            Cell::Num(v) => write!(f, "{}", v),
            Cell::Text(s) if s.contains([',', '"', '\n']) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Written as leading `# key=value` lines.
    pub metadata: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column (non-numbers become NaN).
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows
            .iter()
            .map(|r| match &r[c] {
                Cell::Num(v) => *v,
                Cell::Int(v) => *v as f64,
                Cell::Text(_) => f64::NAN,
            })
            .collect()
    }

    pub fn texts(&self, name: &str) -> Vec<String> {
        let Some(c) = self.column(name) else { return Vec::new() };
        self.rows.iter().map(|r| r[c].to_string()).collect()
    }

    /// Rows whose `name` column displays as `value`.
    pub fn filter(&self, name: &str, value: &str) -> ResultTable {
        let c = self.column(name).expect("column exists");
        ResultTable {
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r[c].to_string() == value).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {}={}", k, v)?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf8")
    }
}

/// Seed for job `index` of stream `stream`, decorrelated from `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

/// Standard normal sample via Box–Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Synthetic truth for the conductivity problem.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub problem: ConductivityProblem,
    pub q: Field,
    pub u: Field,
}

/// `q_true` is a sum of six of the nine modes `sin(aπx) sin(bπy)`,
/// `a, b ∈ {1,2,3}`, with uniform random coefficients, scaled so that the
/// largest nodal magnitude is one; `u_true` solves the forward problem.
pub fn make_ground_truth(mesh_n: usize, seed: u64) -> Result<GroundTruth> {
    let mut problem = ConductivityProblem::unit_square(mesh_n)?;
    problem.cg.tol = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let mut modes: Vec<(f64, f64)> = (1..=3).flat_map(|a| (1..=3).map(move |b| (a as f64, b as f64))).collect();
    modes.shuffle(&mut rng);
    modes.truncate(6);
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let pi = std::f64::consts::PI;
    let raw = interpolate_callable(problem.space(), |x| {
        modes.iter().zip(&coeffs).map(|(&(a, b), c)| c * (a * pi * x[0]).sin() * (b * pi * x[1]).sin()).sum()
    });
    let peak = raw.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let q = Field::new(problem.space().clone(), raw.coeffs().iter().map(|v| v / peak).collect())?;
    let u = problem.solve(&q)?;
    Ok(GroundTruth { problem, q, u })
}

/// `n` uniform locations in the open domain of `u_true`'s mesh with values
/// `u_true(X_i) + η_i`, `η_i ~ N(0, σ²)`.
pub fn sample_observations(u_true: &Field, n: usize, sigma: f64, seed: u64) -> Result<Observations> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one observation".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {}", sigma)));
    }
    let mesh = u_true.space().mesh().clone();
    let lo = mesh.origin();
    let ext = mesh.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut open = |lo: f64, hi: f64| loop {
        let t: f64 = rng.gen();
        if t > 0.0 {
            break lo + (hi - lo) * t;
        }
    };
    let pts: Vec<Point> = (0..n).map(|_| [open(lo[0], lo[0] + ext[0]), open(lo[1], lo[1] + ext[1])]).collect();
    let vom = Arc::new(build_vertex_only_mesh(mesh, pts)?);
    let exact = build_point_interpolator(u_true.space(), &vom)?.apply_coeffs(u_true.coeffs())?;
    let values = exact.into_iter().map(|v| v + sigma * standard_normal(&mut rng)).collect();
    Observations::new(vom, values, vec![sigma; n])
}

/// How an optimization ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Converged,
    MaxIterations,
    Stagnated,
    Failed(String),
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Converged => "converged".into(),
            Outcome::MaxIterations => "max_iter".into(),
            Outcome::Stagnated => "stagnated".into(),
            Outcome::Failed(m) => format!("failed: {}", m),
        }
    }

    /// Whether the run produced an estimate worth reporting.
    pub fn has_estimate(&self) -> bool {
        !matches!(self, Outcome::Failed(_))
    }
}

/// Run the minimizer, turning stagnation into a best-iterate result.
pub fn run_minimizer<F>(fg: F, x0: &[f64], opts: &MinimizeOptions) -> (Option<Minimum>, Outcome)
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    match minimize(fg, x0, opts) {
        Ok(m) => {
            let o = if m.termination == Termination::GradientTolerance { Outcome::Converged } else { Outcome::MaxIterations };
            (Some(m), o)
        }
        Err(Error::Stagnation(s)) => {
            let s = *s;
            (Some(Minimum { x: s.x, value: s.value, trace: s.trace, termination: Termination::MaxIterations }), Outcome::Stagnated)
        }
        Err(e) => (None, Outcome::Failed(e.to_string())),
    }
}

/// Result of one conductivity inversion.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub method: String,
    pub outcome: Outcome,
    pub q: Option<Field>,
    /// Reconstructed field for field-misfit methods.
    pub u_rec: Option<Field>,
    pub misfit: f64,
    pub regularisation: f64,
    pub trace: Vec<TraceEntry>,
}

/// Minimize the chosen functional from `q = 0`.
///
/// `method` is `point`, `weighted` (σ-weighted point misfit), or a
/// reconstruction method name for the field misfit.
pub fn invert_conductivity(
    problem: &ConductivityProblem,
    obs: &Observations,
    method: &str,
    alpha: f64,
    opts: &MinimizeOptions,
) -> Inversion {
    let mut inv = Inversion {
        method: method.to_string(),
        outcome: Outcome::Failed(String::new()),
        q: None,
        u_rec: None,
        misfit: f64::NAN,
        regularisation: f64::NAN,
        trace: Vec::new(),
    };
    let functional = match method {
        "point" => ConductivityFunctional::point(problem, obs, alpha, false),
        "weighted" => ConductivityFunctional::point(problem, obs, alpha, true),
        other => match ReconstructionMethod::from_name(other) {
            Some(m) => reconstruct(obs, problem.space(), &m).and_then(|rec| {
                inv.u_rec = Some(rec.clone());
                ConductivityFunctional::field(problem, rec, alpha)
            }),
            None => Err(Error::InvalidArgument(format!("unknown method '{}'", other))),
        },
    };
    let functional = match functional {
        Ok(f) => f,
        Err(e) => {
            inv.outcome = Outcome::Failed(e.to_string());
            return inv;
        }
    };
    let x0 = vec![0.0; problem.space().ndofs()];
    let (min, outcome) = run_minimizer(
        |q| {
            let r = functional.gradient(q)?;
            Ok((r.value, r.gradient))
        },
        &x0,
        opts,
    );
    inv.outcome = outcome;
    if let Some(m) = min {
        match functional.evaluate(&m.x) {
            Ok(ev) => {
                inv.misfit = ev.misfit;
                inv.regularisation = ev.regularisation;
            }
            Err(e) => inv.outcome = Outcome::Failed(e.to_string()),
        }
        inv.q = Field::new(problem.space().clone(), m.x).ok();
        inv.trace = m.trace;
    }
    inv
}

fn l2_distance(a: &Field, b: &Field) -> f64 {
    a.axpby(1.0, -1.0, b).map(|d| norm_l2(&d)).unwrap_or(f64::NAN)
}

/// Table plus the fields and traces worth exporting.
#[derive(Clone, Debug, Default)]
pub struct StudyOutput {
    pub table: ResultTable,
    pub fields: Vec<(String, Field)>,
    pub traces: Vec<(String, Vec<TraceEntry>)>,
}

fn observation_sigma(truth: &GroundTruth, relative: f64) -> f64 {
    relative * truth.u.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Estimation error `‖q_est − q_true‖` for every `N` and method.
/// Observations for a given `N` are shared by all methods.
pub fn run_posterior_consistency(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let truth = make_ground_truth(cfg.mesh_n, cfg.seed)?;
    let sigma = observation_sigma(&truth, cfg.noise_relative);
    let observations: Vec<Observations> = cfg
        .n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| sample_observations(&truth.u, n, sigma, derive_seed(cfg.seed, 1, k as u64)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, &str)> =
        (0..cfg.n_list.len()).flat_map(|k| cfg.methods.iter().map(move |m| (k, m.as_str()))).collect();
    let opts = cfg.minimize_options();
    let results =
        par::map_slice(&jobs, |&(k, m)| invert_conductivity(&truth.problem, &observations[k], m, cfg.alpha, &opts));

    let mut table = ResultTable::new(&[
        "n", "method", "status", "iterations", "l2_error", "misfit", "regularisation", "sigma",
    ]);
    let mut out = StudyOutput::default();
    out.fields.push(("q_true".into(), truth.q.clone()));
    out.fields.push(("u_true".into(), truth.u.clone()));
    let last = cfg.n_list.len() - 1;
    for (&(k, m), inv) in jobs.iter().zip(&results) {
        let err = inv.q.as_ref().map_or(f64::NAN, |q| l2_distance(q, &truth.q));
        table.push(vec![
            cfg.n_list[k].into(),
            m.into(),
            inv.outcome.label().into(),
            inv.trace.len().saturating_sub(1).into(),
            err.into(),
            inv.misfit.into(),
            inv.regularisation.into(),
            sigma.into(),
        ]);
        out.traces.push((format!("{}_{}", m, cfg.n_list[k]), inv.trace.clone()));
        if k == last {
            if let Some(q) = &inv.q {
                out.fields.push((format!("q_est_{}", m), q.clone()));
                if let Ok(d) = q.axpby(1.0, -1.0, &truth.q) {
                    out.fields.push((format!("q_error_{}", m), d));
                }
            }
            if let Some(u) = &inv.u_rec {
                out.fields.push((format!("u_rec_{}", m), u.clone()));
            }
        }
    }
    table.metadata.push(("seed".into(), cfg.seed.to_string()));
    out.table = table;
    Ok(out)
}

/// Misfit and `∫|∇q|²` at the optimum for each α of the sweep.
pub fn run_lcurve(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let truth = make_ground_truth(cfg.mesh_n, cfg.seed)?;
    let sigma = observation_sigma(&truth, cfg.noise_relative);
    let obs = sample_observations(&truth.u, cfg.lcurve_n, sigma, derive_seed(cfg.seed, 2, 0))?;
    let alphas = cfg.alpha_sweep();
    let jobs: Vec<(usize, &str)> =
        cfg.methods.iter().flat_map(|m| (0..alphas.len()).map(move |i| (i, m.as_str()))).collect();
    let opts = cfg.minimize_options();
    let results = par::map_slice(&jobs, |&(i, m)| invert_conductivity(&truth.problem, &obs, m, alphas[i], &opts));

    let mut table = ResultTable::new(&[
        "method", "alpha", "status", "iterations", "misfit", "regularisation", "gradient_seminorm", "l2_error",
    ]);
    let mut out = StudyOutput::default();
    for (&(i, m), inv) in jobs.iter().zip(&results) {
        let semi = inv.q.as_ref().map_or(f64::NAN, |q| norm_h1_semi(q).powi(2));
        let err = inv.q.as_ref().map_or(f64::NAN, |q| l2_distance(q, &truth.q));
        table.push(vec![
            m.into(),
            alphas[i].into(),
            inv.outcome.label().into(),
            inv.trace.len().saturating_sub(1).into(),
            inv.misfit.into(),
            inv.regularisation.into(),
            semi.into(),
            err.into(),
        ]);
        out.traces.push((format!("{}_alpha{}", m, i), inv.trace.clone()));
    }
    table.metadata.push(("seed".into(), cfg.seed.to_string()));
    out.table = table;
    Ok(out)
}

/// Held-out misfit `E′ = Σ_{k∉I} r_k²/(2σ_k²)` of the estimate trained on `I`.
pub fn heldout_misfit(problem: &ConductivityProblem, q: &Field, heldout: &Observations) -> Result<f64> {
    let u = problem.solve(q)?;
    let interp = build_point_interpolator(problem.space(), heldout.vertex_only_mesh())?;
    crate::assimilate::misfit_point(&u, heldout, &interp, true)
}

/// Split `0..n` into a training set of `round(f·n)` indices (at least one)
/// and the rest, both sorted.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..k].to_vec();
    let mut held = idx[k..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Cross-validation over the α sweep with the σ-weighted functional.
/// The `normalized` column is `2E′/n_heldout`, close to one when σ is
/// correctly specified and the estimate is good.
pub fn run_crossvalidation(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let truth = make_ground_truth(cfg.mesh_n, cfg.seed)?;
    let sigma = observation_sigma(&truth, cfg.noise_relative);
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("cross-validation needs positive noise".into()));
    }
    let all = sample_observations(&truth.u, cfg.xval_n, sigma, derive_seed(cfg.seed, 3, 0))?;
    let (train_idx, held_idx) = split_indices(all.len(), cfg.train_fraction, derive_seed(cfg.seed, 3, 1));
    let train = all.subset(&train_idx)?;
    let held = all.subset(&held_idx)?;
    let alphas = cfg.xval_alpha_sweep();
    let opts = cfg.minimize_options();
    let results = par::map_range(alphas.len(), |i| {
        let inv = invert_conductivity(&truth.problem, &train, "weighted", alphas[i], &opts);
        let e = match &inv.q {
            Some(q) => heldout_misfit(&truth.problem, q, &held).unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        (inv, e)
    });

    let best = results
        .iter()
        .enumerate()
        .filter(|(_, (_, e))| e.is_finite())
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, _)| i);
    let mut table = ResultTable::new(&[
        "alpha", "status", "iterations", "train_misfit", "heldout_misfit", "normalized", "l2_error", "best",
    ]);
    let mut out = StudyOutput::default();
    for (i, (inv, e)) in results.iter().enumerate() {
        let err = inv.q.as_ref().map_or(f64::NAN, |q| l2_distance(q, &truth.q));
        table.push(vec![
            alphas[i].into(),
            inv.outcome.label().into(),
            inv.trace.len().saturating_sub(1).into(),
            inv.misfit.into(),
            (*e).into(),
            (2.0 * e / held.len() as f64).into(),
            err.into(),
            usize::from(best == Some(i)).into(),
        ]);
        out.traces.push((format!("xval_alpha{}", i), inv.trace.clone()));
        if best == Some(i) {
            if let Some(q) = &inv.q {
                out.fields.push(("q_est_best".into(), q.clone()));
            }
        }
    }
    table.metadata.push(("seed".into(), cfg.seed.to_string()));
    table.metadata.push(("n_train".into(), train.len().to_string()));
    table.metadata.push(("n_heldout".into(), held.len().to_string()));
    out.table = table;
    Ok(out)
}

/// Observation-well layout of one groundwater scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub wells_per_zone: usize,
    /// Time step, equal to the measurement interval.
    pub interval: f64,
}

impl ExperimentConfig {
    pub fn scenarios(&self) -> [Scenario; 2] {
        [
            Scenario { name: "A".into(), wells_per_zone: self.wells_per_zone_a, interval: self.interval_a },
            Scenario { name: "B".into(), wells_per_zone: self.wells_per_zone_b, interval: self.interval_b },
        ]
    }

    pub fn aquifer(&self, dt: f64) -> AquiferConfig {
        AquiferConfig {
            nx: self.hydro_nx,
            ny: self.hydro_ny,
            storativity: self.storativity,
            transmissivity: self.true_transmissivity,
            pumping_rate: self.pumping_rate,
            dt,
            horizon: self.horizon,
            ..Default::default()
        }
    }
}

/// `per_zone` wells in each of the three strips: one per cell of a
/// near-square sub-grid of the strip, jittered within the middle half of
/// its cell.
pub fn place_wells(cfg: &AquiferConfig, per_zone: usize, seed: u64) -> Vec<Point> {
    let zone_w = cfg.lx / 3.0;
    let cols = ((per_zone as f64 * zone_w / cfg.ly).sqrt().round() as usize).clamp(1, per_zone);
    let rows = per_zone.div_ceil(cols);
    let (dx, dy) = (zone_w / cols as f64, cfg.ly / rows as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wells = Vec::with_capacity(3 * per_zone);
    for z in 0..3 {
        for k in 0..per_zone {
            let (i, j) = (k % cols, k / cols);
            let jx: f64 = rng.gen_range(-0.25..0.25);
            let jy: f64 = rng.gen_range(-0.25..0.25);
            wells.push([z as f64 * zone_w + (i as f64 + 0.5 + jx) * dx, (j as f64 + 0.5 + jy) * dy]);
        }
    }
    wells
}

/// One synthetic inversion for zonal transmissivity.
#[derive(Clone, Debug)]
pub struct HydrologyFit {
    pub transmissivity: [f64; 3],
    pub outcome: Outcome,
    pub misfit: f64,
    pub trace: Vec<TraceEntry>,
}

/// Truth run of `problem`, noisy samples at `wells` every step, then a
/// minimization of the σ-weighted misfit over `log T` from `initial`.
pub fn hydrology_replicate(
    problem: &AquiferProblem,
    wells: &[Point],
    noise: f64,
    initial: [f64; 3],
    seed: u64,
    opts: &MinimizeOptions,
) -> Result<HydrologyFit> {
    let vom = Arc::new(build_vertex_only_mesh(problem.space().mesh().clone(), wells.to_vec())?);
    let truth = problem.simulate(&problem.config().transmissivity)?;
    let interp = problem.interpolator(&vom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps: Vec<usize> = (1..=problem.nsteps()).collect();
    let mut values = Vec::with_capacity(steps.len());
    for &k in &steps {
        let exact = interp.apply_coeffs(truth.heads[k].coeffs())?;
        values.push(exact.into_iter().map(|v| v + noise * standard_normal(&mut rng)).collect::<Vec<_>>());
    }
    // the weighting needs a positive σ even for noise-free data
    let sigma = if noise > 0.0 { noise } else { 0.01 };
    let series = ObservationSeries { wells: vom, steps, values, sigma };
    let functional = GroundwaterFunctional::new(problem, &series)?;
    let x0 = initial.map(f64::ln);
    let (min, outcome) = run_minimizer(
        |x| {
            let t = [x[0].exp(), x[1].exp(), x[2].exp()];
            let (v, g) = functional.value_and_gradient(&t)?;
            Ok((v, (0..3).map(|z| g[z] * t[z]).collect()))
        },
        &x0,
        opts,
    );
    match min {
        Some(m) => Ok(HydrologyFit {
            transmissivity: [m.x[0].exp(), m.x[1].exp(), m.x[2].exp()],
            outcome,
            misfit: m.value,
            trace: m.trace,
        }),
        None => Err(Error::InvalidArgument(outcome.label())),
    }
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Ensemble of noisy inversions for both scenarios. Per-replicate rows are
/// followed by per-zone summary rows (`replicate` = `mean` / `std`).
pub fn run_hydrology_ensemble(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let scenarios = cfg.scenarios();
    let mut problems = Vec::new();
    let mut layouts = Vec::new();
    for (s, sc) in scenarios.iter().enumerate() {
        let mut p = AquiferProblem::new(cfg.aquifer(sc.interval))?;
        p.cg.tol = 1e-12;
        layouts.push(place_wells(p.config(), sc.wells_per_zone, derive_seed(cfg.seed, 4, s as u64)));
        problems.push(p);
    }
    let opts = cfg.minimize_options();
    let jobs: Vec<(usize, usize)> = (0..2).flat_map(|s| (0..cfg.ensemble_size).map(move |r| (s, r))).collect();
    let fits = par::map_slice(&jobs, |&(s, r)| {
        hydrology_replicate(
            &problems[s],
            &layouts[s],
            cfg.hydro_noise,
            cfg.initial_transmissivity,
            derive_seed(cfg.seed, 5 + s as u64, r as u64),
            &opts,
        )
    });

    let mut table = ResultTable::new(&["scenario", "replicate", "status", "t0", "t1", "t2", "misfit"]);
    let mut out = StudyOutput::default();
    for (s, sc) in scenarios.iter().enumerate() {
        let mut ok: Vec<[f64; 3]> = Vec::new();
        let mut failed = 0usize;
        for (&(js, r), fit) in jobs.iter().zip(&fits) {
            if js != s {
                continue;
            }
            match fit {
                Ok(f) => {
                    ok.push(f.transmissivity);
                    let [t0, t1, t2] = f.transmissivity;
                    table.push(vec![
                        sc.name.as_str().into(),
                        r.into(),
                        f.outcome.label().into(),
                        t0.into(),
                        t1.into(),
                        t2.into(),
                        f.misfit.into(),
                    ]);
                    out.traces.push((format!("hydrology_{}_{}", sc.name, r), f.trace.clone()));
                }
                Err(e) => {
                    failed += 1;
                    let nan = Cell::Num(f64::NAN);
                    table.push(vec![
                        sc.name.as_str().into(),
                        r.into(),
                        format!("failed: {}", e).into(),
                        nan.clone(),
                        nan.clone(),
                        nan.clone(),
                        nan,
                    ]);
                }
            }
        }
        let stats: Vec<(f64, f64)> =
            (0..3).map(|z| mean_std(&ok.iter().map(|t| t[z]).collect::<Vec<_>>())).collect();
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let v: Vec<f64> = stats.iter().map(|s| if pick == 0 { s.0 } else { s.1 }).collect();
            table.push(vec![
                sc.name.as_str().into(),
                label.into(),
                format!("{} ok, {} failed", ok.len(), failed).into(),
                v[0].into(),
                v[1].into(),
                v[2].into(),
                Cell::Num(f64::NAN),
            ]);
        }
        let wells = layouts[s].iter().map(|w| format!("{}:{}", w[0], w[1])).collect::<Vec<_>>().join(" ");
        table.metadata.push((format!("wells_{}", sc.name), wells));
    }
    table.metadata.push(("seed".into(), cfg.seed.to_string()));
    out.table = table;
    Ok(out)
}

/// Taylor remainder rates and central-difference agreement of every
/// gradient: the point misfit, the field misfit for each reconstruction
/// method, the σ-weighted misfit and the groundwater misfit.
pub fn run_taylor_suite(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let mut truth = make_ground_truth(cfg.taylor_mesh_n, cfg.seed)?;
    truth.problem.cg.tol = 1e-13;
    let sigma = observation_sigma(&truth, cfg.noise_relative.max(1e-3));
    let obs = sample_observations(&truth.u, cfg.taylor_n, sigma, derive_seed(cfg.seed, 6, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 6, 1));
    let n = truth.problem.space().ndofs();
    let q0: Vec<f64> = truth.q.coeffs().iter().map(|v| 0.5 * v + rng.gen_range(-0.1..0.1)).collect();
    let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let steps = [1e-2, 1e-3, 1e-4];

    let mut table = ResultTable::new(&["functional", "min_rate", "rates", "fd_relative_error"]);
    let mut record = |name: &str, t: crate::assimilate::TaylorResult, fd: f64, an: f64| {
        let rates = t.rates.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ");
        table.push(vec![name.into(), t.min_rate().into(), rates.into(), ((fd - an).abs() / an.abs()).into()]);
    };

    let mut names: Vec<String> = vec!["point".into(), "weighted".into()];
    names.extend(["nearest", "linear", "rbf"].map(String::from));
    for name in &names {
        let functional = match name.as_str() {
            "point" => ConductivityFunctional::point(&truth.problem, &obs, cfg.alpha, false)?,
            "weighted" => ConductivityFunctional::point(&truth.problem, &obs, cfg.alpha, true)?,
            m => {
                let method = ReconstructionMethod::from_name(m).expect("known method");
                let rec = reconstruct(&obs, truth.problem.space(), &method)?;
                ConductivityFunctional::field(&truth.problem, rec, cfg.alpha)?
            }
        };
        let g = functional.gradient(&q0)?.gradient;
        let t = crate::assimilate::taylor_test(|x| functional.value(x), &q0, &g, &dir, &steps)?;
        let fd = crate::assimilate::central_difference(|x| functional.value(x), &q0, &dir, 1e-4)?;
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let label = if name == "point" || name == "weighted" { name.clone() } else { format!("field_{}", name) };
        record(&label, t, fd, an);
    }

    let mut aq = cfg.aquifer(cfg.interval_a);
    aq.nx = aq.nx.min(15);
    aq.ny = aq.ny.min(8);
    aq.horizon = (4.0 * cfg.interval_a).min(cfg.horizon);
    let mut p = AquiferProblem::new(aq)?;
    p.cg.tol = 1e-13;
    let wells = Arc::new(build_vertex_only_mesh(
        p.space().mesh().clone(),
        place_wells(p.config(), cfg.wells_per_zone_b, derive_seed(cfg.seed, 6, 2)),
    )?);
    let truth_h = p.simulate(&cfg.true_transmissivity)?;
    let interp = p.interpolator(&wells)?;
    let steps_idx: Vec<usize> = (1..=p.nsteps()).collect();
    let values = steps_idx
        .iter()
        .map(|&k| {
            let v = interp.apply_coeffs(truth_h.heads[k].coeffs())?;
            Ok(v.into_iter().map(|x| x + cfg.hydro_noise.max(1e-3) * standard_normal(&mut rng)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let series = ObservationSeries { wells, steps: steps_idx, values, sigma: cfg.hydro_noise.max(1e-3) };
    let gw = GroundwaterFunctional::new(&p, &series)?;
    let t0 = cfg.initial_transmissivity;
    let (_, g) = gw.value_and_gradient(&t0)?;
    let d: Vec<f64> = t0.iter().map(|t| t * rng.gen_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| gw.value(&[x[0], x[1], x[2]]);
    let t = crate::assimilate::taylor_test(f, &t0, &g, &d, &steps)?;
    let fd = crate::assimilate::central_difference(f, &t0, &d, 1e-4)?;
    let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    record("groundwater", t, fd, an);
    table.metadata.push(("seed".into(), cfg.seed.to_string()));
    Ok(table)
}

/// Per-zone `(mean, std)` of one scenario from an ensemble table.
pub fn ensemble_summary(table: &ResultTable, scenario: &str) -> Option<([f64; 3], [f64; 3])> {
    let rows = table.filter("scenario", scenario);
    let reps = rows.texts("replicate");
    let t: Vec<Vec<f64>> = ["t0", "t1", "t2"].iter().map(|c| rows.numbers(c)).collect();
    let find = |label: &str| reps.iter().position(|r| r == label);
    let (m, s) = (find("mean")?, find("std")?);
    Some(([t[0][m], t[1][m], t[2][m]], [t[0][s], t[1][s], t[2][s]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_properties() {
        let a = make_ground_truth(8, 3).unwrap();
        let b = make_ground_truth(8, 3).unwrap();
        assert_eq!(a.q.coeffs(), b.q.coeffs());
        assert_eq!(a.u.coeffs(), b.u.coeffs());
        let peak = a.q.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-15);
        let boundary = a.problem.boundary_dofs().to_vec();
        for (d, v) in a.u.coeffs().iter().enumerate() {
            if !boundary.contains(&d) {
                assert!(*v > 0.0);
            }
        }
        assert_ne!(make_ground_truth(8, 4).unwrap().q.coeffs(), a.q.coeffs());
    }

    #[test]
    fn noise_free_and_noisy_sampling() {
        let t = make_ground_truth(6, 1).unwrap();
        let o = sample_observations(&t.u, 20, 0.0, 9).unwrap();
        for (p, v) in o.vertex_only_mesh().points().iter().zip(o.values()) {
            assert!((t.u.evaluate(*p).unwrap() - v).abs() < 1e-14);
            assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0);
        }
        let again = sample_observations(&t.u, 20, 0.0, 9).unwrap();
        assert_eq!(o.values(), again.values());
        assert!(sample_observations(&t.u, 0, 0.1, 9).is_err());
    }

    #[test]
    fn box_muller_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 32768;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let (m, s) = mean_std(&xs);
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((s - 1.0).abs() < 0.02);
    }

    #[test]
    fn split_sizes() {
        let (tr, he) = split_indices(100, 0.05, 1);
        assert_eq!(tr.len(), 5);
        assert_eq!(he.len(), 95);
        let mut all = [tr, he].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn heldout_equals_training_misfit_on_same_set() {
        let t = make_ground_truth(6, 2).unwrap();
        let o = sample_observations(&t.u, 30, 1e-3, 5).unwrap();
        let q = Field::zeros(t.problem.space().clone());
        let f = ConductivityFunctional::point(&t.problem, &o, 0.0, true).unwrap();
        let e = f.evaluate(q.coeffs()).unwrap().misfit;
        assert!((heldout_misfit(&t.problem, &q, &o).unwrap() - e).abs() <= 1e-12 * e);
    }

    #[test]
    fn wells_per_zone() {
        let cfg = AquiferConfig::default();
        for per in [1, 2, 6] {
            let w = place_wells(&cfg, per, 3);
            assert_eq!(w.len(), 3 * per);
            for (k, p) in w.iter().enumerate() {
                assert_eq!(((3.0 * p[0] / cfg.lx).floor() as usize), k / per);
                assert!(p[1] > 0.0 && p[1] < cfg.ly);
            }
        }
        assert_eq!(place_wells(&cfg, 6, 3), place_wells(&cfg, 6, 3));
    }

    #[test]
    fn zero_noise_hydrology_recovers_truth() {
        let cfg = ExperimentConfig { hydro_nx: 12, hydro_ny: 6, horizon: 4.0, ..Default::default() };
        let mut p = AquiferProblem::new(cfg.aquifer(0.5)).unwrap();
        p.cg.tol = 1e-12;
        let wells = place_wells(p.config(), 2, 1);
        let fit = hydrology_replicate(&p, &wells, 0.0, [100.0; 3], 0, &cfg.minimize_options()).unwrap();
        for (a, b) in fit.transmissivity.iter().zip(&cfg.true_transmissivity) {
            assert!((a - b).abs() / b < 1e-3, "{:?} {:?}", fit.transmissivity, fit.outcome);
        }
    }

    #[test]
    fn small_posterior_consistency_is_deterministic_across_jobs() {
        let cfg = ExperimentConfig {
            mesh_n: 4,
            n_list: vec![16, 32],
            methods: vec!["point".into(), "nearest".into()],
            max_iter: 15,
            ..Default::default()
        };
        let a = par::with_jobs(Some(1), || run_posterior_consistency(&cfg)).unwrap();
        let b = par::with_jobs(Some(3), || run_posterior_consistency(&cfg)).unwrap();
        assert_eq!(a.table.to_csv_string(), b.table.to_csv_string());
        assert_eq!(a.table.rows.len(), 4);
    }

    #[test]
    fn csv_format() {
        let mut t = ResultTable::new(&["a", "b"]);
        t.push(vec![0.1.into(), "x,y".into()]);
        t.push(vec![3usize.into(), Cell::Num(f64::NAN)]);
        t.metadata.push(("seed".into(), "7".into()));
        assert_eq!(t.to_csv_string(), "# seed=7\na,b\n0.1,\"x,y\"\n3,NaN\n");
        assert_eq!(t.numbers("a"), vec![0.1, 3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig { train_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { methods: vec!["cubic".into()], ..Default::default() };
        assert!(bad.validate().is_err());
        let sweep = ExperimentConfig::default().alpha_sweep();
        assert_eq!(sweep.len(), 13);
        assert!((sweep[0] - 1e-4).abs() < 1e-18 && (sweep[12] - 1.0).abs() < 1e-12);
    }
}
