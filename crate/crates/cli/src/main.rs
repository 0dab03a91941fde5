//! `zkroa` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error, 3 numerical
//! failure, 4 missing upstream artifact. `ZKROA_WORKERS` sets the worker-thread count.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};
use zkroa::config::RunConfig;
use zkroa::integrate::stopped_trajectory;
use zkroa::io;
use zkroa::pipeline::{files, Pipeline, StageFailure};
use zkroa::{BenchmarkId, Error};

#[derive(Parser)]
#[command(name = "zkroa", version, about = "Region-of-attraction estimation with learned Zubov-Koopman operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write report.json.
    Run(Common),
    /// Dump one stopped trajectory as CSV (t, x_1..x_n, I).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Output file (stdout if absent).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sample, stack, and fit the operator.
    Learn(Common),
    /// Iterate a fitted operator into U_ZK coefficients.
    Iterate(Common),
    /// Extract the region-of-attraction mask from U_ZK.
    PredictRoa(Common),
    /// Train the smooth surrogate on U_ZK.
    Smooth(Common),
    /// Grid Lie-derivative verification on the extracted mask.
    Verify(Common),
    /// Run the desk-scale preset of a benchmark system.
    Benchmark {
        /// cubic1d | vdp-reversed | polynomial | power2m | sys3d | stiff-vdp[:mu] | stiff2
        id: String,
        #[command(flatten)]
        common: Common,
    },
}

/// Configuration sources. Flags override the file, which overrides the system preset.
#[derive(Args, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Benchmark system id.
    #[arg(long)]
    system: Option<String>,
    /// Grid samples per axis, e.g. 1001 or 60x60.
    #[arg(long)]
    samples: Option<String>,
    /// Use this many uniformly random samples instead of a grid.
    #[arg(long)]
    random: Option<i64>,
    #[arg(long)]
    seed: Option<i64>,
    /// Operator time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Samples per trajectory.
    #[arg(long)]
    points: Option<i64>,
    /// cos_gauss_1d | cos_gauss_nd | complex_fourier_nd
    #[arg(long)]
    family: Option<String>,
    /// Frequencies per axis (indices -(N-1)..N-1).
    #[arg(long)]
    freq: Option<i64>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    gauss: Option<f64>,
    #[arg(long)]
    svd_tol: Option<f64>,
    /// Leading eigenpairs to dump into spectrum.csv.
    #[arg(long)]
    spectrum: Option<i64>,
    /// Iteration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Maximum iterations K.
    #[arg(long)]
    max_iter: Option<i64>,
    /// matrix | vector
    #[arg(long)]
    mode: Option<String>,
    /// Mask cells per axis, e.g. 600 or 100x100.
    #[arg(long)]
    resolution: Option<String>,
    /// Superlevel threshold c.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    exclusion_radius: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Enable the smooth surrogate stage.
    #[arg(long, conflicts_with = "no_smooth")]
    smooth: bool,
    /// Disable the smooth surrogate stage.
    #[arg(long)]
    no_smooth: bool,
    #[arg(long)]
    epochs: Option<i64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Any config key, e.g. --set roa.floor=1e-9 (value parsed as TOML).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn put(t: &mut Table, path: &str, v: Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = t;
    for p in parts {
        cur = cur.entry(p).or_insert_with(|| Value::Table(Table::new())).as_table_mut().expect("section");
    }
    cur.insert(last.to_string(), v);
}

fn axes(s: &str) -> Result<Value, Error> {
    let v: Result<Vec<Value>, _> = s.split(['x', 'X', ',']).map(|p| p.trim().parse::<i64>().map(Value::Integer)).collect();
    v.map(Value::Array).map_err(|_| Error::Config(format!("bad per-axis count '{s}' (use e.g. 60x60)")))
}

impl Common {
    fn overlay(&self) -> Result<Table, Error> {
        let mut t = Table::new();
        let f = |v: f64| Value::Float(v);
        let i = |v: i64| Value::Integer(v);
        let s = |v: &String| Value::String(v.clone());
        let mut opt = |path: &str, v: Option<Value>| {
            if let Some(v) = v {
                put(&mut t, path, v);
            }
        };
        opt("system.id", self.system.as_ref().map(s));
        opt("sampling.grid", self.samples.as_deref().map(axes).transpose()?);
        if let Some(n) = self.random {
            opt("sampling.mode", Some(Value::String("random".into())));
            opt("sampling.count", Some(i(n)));
        }
        opt("sampling.seed", self.seed.map(i));
        opt("integration.dt", self.dt.map(f));
        opt("integration.points", self.points.map(i));
        opt("dictionary.family", self.family.as_ref().map(s));
        opt("dictionary.freq_count", self.freq.map(i));
        opt("dictionary.period", self.period.map(f));
        opt("dictionary.gauss_scale", self.gauss.map(f));
        opt("fit.svd_tol", self.svd_tol.map(f));
        opt("fit.spectrum", self.spectrum.map(i));
        opt("iteration.tol", self.tol.map(f));
        opt("iteration.max_iter", self.max_iter.map(i));
        opt("iteration.mode", self.mode.as_ref().map(s));
        opt("roa.resolution", self.resolution.as_deref().map(axes).transpose()?);
        opt("roa.threshold", self.threshold.map(f));
        opt("roa.floor", self.floor.map(f));
        opt("roa.exclusion_radius", self.exclusion_radius.map(f));
        opt("roa.margin", self.margin.map(f));
        opt("smooth.enabled", (self.smooth || self.no_smooth).then_some(Value::Boolean(self.smooth)));
        opt("smooth.epochs", self.epochs.map(i));
        opt("smooth.learning_rate", self.lr.map(f));
        opt("output.dir", self.out.as_ref().map(|p| Value::String(p.display().to_string())));
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            let doc: Table = format!("v = {v}").parse().unwrap_or_else(|_| Table::from_iter([("v".to_string(), Value::String(v.into()))]));
            put(&mut t, k.trim(), doc["v"].clone());
        }
        Ok(t)
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        RunConfig::load(self.config.as_deref(), self.overlay()?)
    }
}

enum Failure {
    Plain(Error),
    Stage(StageFailure),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Plain(e)
    }
}

impl From<StageFailure> for Failure {
    fn from(f: StageFailure) -> Self {
        Failure::Stage(f)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) => 2,
        Error::MissingArtifact(_) => 4,
        e if e.is_numeric() => 3,
        _ => 1,
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Error> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}")?;
    Ok(())
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(c) => {
            let report = zkroa::pipeline::run(c.resolve()?)?;
            print_json(&report)?;
        }
        Command::Benchmark { id, mut common } => {
            let id: BenchmarkId = id.parse()?;
            common.system = Some(id.to_string());
            let report = zkroa::pipeline::run(common.resolve()?)?;
            print_json(&report)?;
        }
        Command::Simulate { common, x0, csv } => {
            let cfg = common.resolve()?;
            let sys = cfg.system_spec::<f64>()?;
            let x: Vec<f64> = x0
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad initial state '{x0}'"))))
                .collect::<Result<_, _>>()?;
            if x.len() != sys.dim() {
                return Err(Error::Config(format!("initial state has {} components, system has {}", x.len(), sys.dim())).into());
            }
            if !sys.region().contains(&x) {
                return Err(Error::Config(format!("initial state {x0} lies outside the region")).into());
            }
            let traj = stopped_trajectory(&sys, &x, cfg.integration.dt, cfg.integration.points)?;
            match csv {
                Some(p) => traj.write_csv(std::io::BufWriter::new(std::fs::File::create(p).map_err(Error::from)?))?,
                None => traj.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Learn(c) => {
            let mut p = Pipeline::new(c.resolve()?)?;
            p.learn()?;
            print_json(&p.report)?;
        }
        Command::Iterate(c) => {
            let mut p = Pipeline::new(c.resolve()?)?;
            let op = io::read_operator(&p.path(files::OPERATOR))?;
            p.report.rank = Some(op.rank);
            p.iterate(&op)?;
            print_json(&p.report)?;
        }
        Command::PredictRoa(c) => {
            let mut p = Pipeline::new(c.resolve()?)?;
            let u = io::read_u(&p.path(files::U))?;
            p.predict_roa(&u)?;
            print_json(&p.report)?;
        }
        Command::Smooth(c) => {
            let mut p = Pipeline::new(c.resolve()?)?;
            let u = io::read_u(&p.path(files::U))?;
            p.smooth(&u)?;
            print_json(&p.report)?;
        }
        Command::Verify(c) => {
            let mut p = Pipeline::new(c.resolve()?)?;
            let u = io::read_u(&p.path(files::U))?;
            let (mask, _) = io::read_mask(&p.dir)?;
            let model_path = p.path(files::MODEL);
            let model = if model_path.exists() { Some(io::read_model(&model_path)?) } else { None };
            if let Some(m) = &model {
                p.report.smooth = Some(zkroa::pipeline::SmoothReport {
                    epochs_run: m.epochs_run,
                    final_mse: m.final_mse,
                    ..Default::default()
                });
            }
            p.verify(&u, model.as_ref(), &mask)?;
            print_json(&p.report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("ZKROA_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Plain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Stage(f)) => {
            eprintln!("error: {f}");
            ExitCode::from(exit_code(&f.error))
        }
    }
}
