//! `pointassim`: run the assimilation studies from a config file and write
//! tables, fields and a manifest into an output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pointassim::experiments::{
    derive_seed, place_wells, run_crossvalidation, run_hydrology_ensemble, run_lcurve, run_posterior_consistency,
    run_taylor_suite, ExperimentConfig, ResultTable, StudyOutput,
};
use pointassim::forward::AquiferProblem;
use pointassim::io::{read_points_csv, write_coefficients_csv, write_head_history_csv, write_vtk};
use pointassim::mesh::build_rectangle_mesh;
use pointassim::vom::build_vertex_only_mesh;
use pointassim::{assimilate::write_trace_csv, par};

#[derive(Parser, Debug)]
#[command(name = "pointassim", version, about = "Point data assimilation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file (flat keys; unknown keys are rejected)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
enum Command {
    /// Estimation error against observation count for each misfit
    Conductivity,
    /// Misfit and regularisation at the optimum over an α sweep
    Lcurve,
    /// Choose α by held-out misfit
    Xval,
    /// Transmissivity ensembles for the two well layouts
    Hydrology,
    /// Gradient checks; exits nonzero if any rate is below 1.9
    TaylorTest,
    /// Locate the points of `points.csv` (set by `--points`) in the mesh
    Locate {
        #[arg(long)]
        points: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Conductivity => "conductivity",
            Command::Lcurve => "lcurve",
            Command::Xval => "xval",
            Command::Hydrology => "hydrology",
            Command::TaylorTest => "taylor-test",
            Command::Locate { .. } => "locate",
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorRecord {
    status: &'static str,
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    line: Option<usize>,
}

impl CliError {
    fn config(message: String, line: Option<usize>) -> Self {
        Self { kind: "config", message, line }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self { kind: "run", message: format!("{:#}", e), line: None }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    jobs: Option<usize>,
    config_hash: String,
    config: &'a ExperimentConfig,
    versions: Versions,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct Versions {
    pointassim: &'static str,
    cli: &'static str,
    parallel: bool,
}

fn load_config(path: Option<&Path>, required: bool) -> Result<ExperimentConfig, CliError> {
    let Some(path) = path else {
        return if required {
            Err(CliError::config("this command needs --config".into(), None))
        } else {
            Ok(ExperimentConfig::default())
        };
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {}", path.display(), e), None))?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        CliError::config(format!("{}: {}", path.display(), e.message()), line)
    })?;
    cfg.validate().map_err(|e| CliError::config(e.to_string(), None))?;
    Ok(cfg)
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = toml::to_string(cfg).expect("config serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{:02x}", b)).collect()
}

/// Collects the files written into the output directory.
struct Outputs {
    root: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn create(&mut self, rel: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.written.push(rel.to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn table(&mut self, rel: &str, table: &ResultTable, hash: &str) -> anyhow::Result<()> {
        let mut t = table.clone();
        t.metadata.push(("config_hash".into(), hash.to_string()));
        let mut w = self.create(rel)?;
        t.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn study(&mut self, name: &str, study: &StudyOutput, hash: &str) -> anyhow::Result<()> {
        self.table(&format!("{}.csv", name), &study.table, hash)?;
        if let Some((_, first)) = study.fields.first() {
            let mesh = first.space().mesh().clone();
            let named: Vec<(&str, &pointassim::fem::Field)> = study
                .fields
                .iter()
                .filter(|(_, f)| Arc::ptr_eq(f.space().mesh(), &mesh))
                .map(|(n, f)| (n.as_str(), f))
                .collect();
            let mut w = self.create(&format!("fields/{}.vtk", name))?;
            write_vtk(&mut w, &mesh, &named)?;
            w.flush()?;
            for (n, f) in &study.fields {
                let mut w = self.create(&format!("fields/{}.csv", n))?;
                write_coefficients_csv(&mut w, f)?;
                w.flush()?;
            }
        }
        for (n, trace) in &study.traces {
            let mut w = self.create(&format!("traces/{}.csv", n))?;
            write_trace_csv(trace, &mut w)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let required = !matches!(cli.command, Command::TaylorTest);
    let mut cfg = load_config(cli.config.as_deref(), required)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let points = match &cli.command {
        Command::Locate { points } => {
            let f = File::open(points)
                .map_err(|e| CliError::config(format!("cannot read {}: {}", points.display(), e), None))?;
            Some(read_points_csv(BufReader::new(f)).map_err(|e| {
                let line = match &e {
                    pointassim::Error::Parse { line, .. } => Some(*line),
                    _ => None,
                };
                CliError::config(format!("{}: {}", points.display(), e), line)
            })?)
        }
        _ => None,
    };
    fs::create_dir_all(&cli.out).map_err(|e| CliError::from(anyhow::Error::from(e)))?;
    let hash = config_hash(&cfg);
    let mut out = Outputs { root: cli.out.clone(), written: Vec::new() };

    let result: anyhow::Result<bool> = par::with_jobs(cli.jobs, || {
        let mut ok = true;
        match &cli.command {
            Command::Conductivity => out.study("posterior_consistency", &run_posterior_consistency(&cfg)?, &hash)?,
            Command::Lcurve => out.study("lcurve", &run_lcurve(&cfg)?, &hash)?,
            Command::Xval => out.study("crossvalidation", &run_crossvalidation(&cfg)?, &hash)?,
            Command::Hydrology => {
                out.study("hydrology", &run_hydrology_ensemble(&cfg)?, &hash)?;
                for (s, sc) in cfg.scenarios().iter().enumerate() {
                    let p = AquiferProblem::new(cfg.aquifer(sc.interval))?;
                    let wells = place_wells(p.config(), sc.wells_per_zone, derive_seed(cfg.seed, 4, s as u64));
                    let vom = Arc::new(build_vertex_only_mesh(p.space().mesh().clone(), wells)?);
                    let history = p.simulate(&cfg.true_transmissivity)?;
                    let mut w = out.create(&format!("heads_{}.csv", sc.name))?;
                    write_head_history_csv(&mut w, &history, &p.interpolator(&vom)?)?;
                    w.flush()?;
                }
            }
            Command::TaylorTest => {
                let table = run_taylor_suite(&cfg)?;
                let functionals = table.texts("functional");
                let rates = table.numbers("min_rate");
                let fd = table.numbers("fd_relative_error");
                for ((name, r), e) in functionals.iter().zip(&rates).zip(&fd) {
                    let pass = *r >= 1.9;
                    ok &= pass;
                    println!("{:<16} min rate {:.4}  fd error {:.2e}  {}", name, r, e, if pass { "ok" } else { "FAIL" });
                }
                out.table("taylor.csv", &table, &hash)?;
            }
            Command::Locate { .. } => {
                let cloud = points.as_ref().expect("points loaded");
                let mesh = Arc::new(build_rectangle_mesh(cfg.mesh_n, cfg.mesh_n, 1.0, 1.0)?);
                let mut w = out.create("located.csv")?;
                writeln!(w, "index,x,y,cell,xi,eta")?;
                for (i, &p) in cloud.points.iter().enumerate() {
                    match mesh.locate(p) {
                        Some((c, xi)) => writeln!(w, "{},{},{},{},{},{}", i, p[0], p[1], c, xi[0], xi[1])?,
                        None => writeln!(w, "{},{},{},-1,NaN,NaN", i, p[0], p[1])?,
                    }
                }
                w.flush()?;
                // whole-set check reports every point outside the domain
                build_vertex_only_mesh(mesh, cloud.points.clone())?;
            }
        }
        Ok(ok)
    });
    let ok = match result {
        Ok(ok) => ok,
        Err(e) => {
            let err = CliError::from(e);
            write_error_file(&cli.out, &err);
            return Err(err);
        }
    };

    let manifest = Manifest {
        command: cli.command.name(),
        seed: cfg.seed,
        jobs: cli.jobs,
        config_hash: hash,
        config: &cfg,
        versions: Versions {
            pointassim: env!("CARGO_PKG_VERSION"),
            cli: env!("CARGO_PKG_VERSION"),
            parallel: cfg!(feature = "parallel"),
        },
        outputs: out.written.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::from(anyhow::Error::from(e)))?;
    fs::write(cli.out.join("manifest.json"), text + "\n").map_err(|e| CliError::from(anyhow::Error::from(e)))?;
    Ok(ok)
}

fn error_json(err: &CliError) -> String {
    serde_json::to_string(&ErrorRecord { status: "error", kind: err.kind, message: err.message.clone(), line: err.line })
        .expect("error record serializes")
}

fn write_error_file(dir: &Path, err: &CliError) {
    let _ = fs::write(dir.join("error.json"), error_json(err) + "\n");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
