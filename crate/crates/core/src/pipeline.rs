//! End-to-end run: sample, stack, fit, iterate, extract, smooth (optional), verify.
//!
//! Each stage writes its artifacts into the output directory as soon as it finishes, so a
//! failing run leaves everything produced so far plus a `report.json` naming the stage.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SamplingMode};
use crate::dictionary::Dictionary;
use crate::edmd::{fit_operator, spectrum, stack_data, OperatorMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::roa::{
    build_u_zk, evaluate_on_grid, extract_from_values, imag_residue, lie_derivative, lie_derivative_v, verification_counts,
    Grid, RoaMask, ScalarField, UApprox,
};
use crate::scalar::fmt_f64;
use crate::smooth::{train, SmoothModel};
use crate::systems::{Region, SystemSpec};

/// Artifact file names inside the output directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const OPERATOR: &str = "operator.txt";
    pub const SPECTRUM: &str = "spectrum.csv";
    pub const U: &str = "u_zk.txt";
    pub const MASK: &str = "mask.csv";
    pub const GRID: &str = "grid.json";
    pub const MODEL: &str = "model.txt";
    pub const FIELD: &str = "field.csv";
    pub const REPORT: &str = "report.json";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Sample,
    Stack,
    Fit,
    Iterate,
    Extract,
    Smooth,
    Verify,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothReport {
    pub training_samples: usize,
    pub epochs_run: usize,
    pub final_mse: f64,
    pub verified_fraction: f64,
    pub eligible_cells: usize,
    pub verified_cells: usize,
}

/// Summary of a run. Every number is recomputable from the artifacts in `files`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub dim: usize,
    pub x_eq: Vec<f64>,
    pub samples: usize,
    pub basis_size: usize,
    pub dictionary: String,
    pub rank: Option<usize>,
    pub fit_residual: Option<f64>,
    pub iteration_mode: String,
    pub iterations: Option<usize>,
    pub final_residual: Option<f64>,
    pub residuals: Vec<f64>,
    pub u_at_equilibrium: Option<f64>,
    pub imag_residue: Option<f64>,
    pub threshold: f64,
    pub volume_fraction: Option<f64>,
    pub volume_fraction_half_threshold: Option<f64>,
    pub volume_fraction_double_threshold: Option<f64>,
    pub roa_extent: Vec<[f64; 2]>,
    pub exclusion_radius: f64,
    pub margin: f64,
    pub verified_fraction: Option<f64>,
    pub eligible_cells: Option<usize>,
    pub verified_cells: Option<usize>,
    pub smooth: Option<SmoothReport>,
    /// `U(x_eq)` within 0.1 of 1 and imaginary residue at most 0.1.
    pub accepted: Option<bool>,
    pub timings: BTreeMap<String, f64>,
    pub files: BTreeMap<String, String>,
    pub error: Option<String>,
    pub failed_stage: Option<Stage>,
}

/// Sample states per the sampling section: an endpoints-inclusive lattice (first axis
/// slowest) or seeded uniform draws.
pub fn sample_states(cfg: &RunConfig, region: &Region<f64>) -> Vec<Vec<f64>> {
    match cfg.sampling.mode {
        SamplingMode::Grid => {
            let axes: Vec<Vec<f64>> = cfg
                .sampling
                .grid
                .iter()
                .enumerate()
                .map(|(d, &n)| {
                    let (lo, hi) = region.bounds()[d];
                    (0..n).map(|j| if j + 1 == n { hi } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 }).collect()
                })
                .collect();
            lattice(&axes)
        }
        SamplingMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed);
            (0..cfg.sampling.count)
                .map(|_| region.bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect())
                .collect()
        }
    }
}

fn lattice(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |&v| [p.as_slice(), &[v]].concat())).collect();
    }
    out
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub sys: SystemSpec<f64>,
    pub dict: Dictionary<f64>,
    pub dir: PathBuf,
    pub report: RunReport,
}

fn at(stage: Stage) -> impl Fn(Error) -> StageFailure {
    move |error| StageFailure { stage, error }
}

impl Pipeline {
    /// Resolves the system and dictionary and creates the output directory.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let sys = cfg.system_spec::<f64>()?;
        let dict = cfg.build_dictionary(&sys)?;
        let dir = cfg.output.dir.clone();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(files::CONFIG), cfg.to_toml_string()?)?;
        let report = RunReport {
            system: sys.name().to_string(),
            dim: sys.dim(),
            x_eq: sys.x_eq().to_vec(),
            basis_size: dict.size(),
            dictionary: dict.descriptor(),
            iteration_mode: cfg.iteration.mode.to_string(),
            threshold: cfg.roa.threshold,
            exclusion_radius: cfg.roa.exclusion_radius,
            margin: cfg.roa.margin,
            files: BTreeMap::from([("config".to_string(), files::CONFIG.to_string())]),
            ..Default::default()
        };
        Ok(Self { cfg, sys, dict, dir, report })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record_file(&mut self, key: &str, name: &str) {
        self.report.files.insert(key.to_string(), name.to_string());
    }

    fn time<R>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<R>) -> std::result::Result<R, StageFailure> {
        let t = Instant::now();
        let r = f(self).map_err(at(stage));
        self.report.timings.insert(stage.to_string(), t.elapsed().as_secs_f64());
        r
    }

    /// Samples, stacks, and fits; writes the operator (and spectrum, if requested).
    pub fn learn(&mut self) -> std::result::Result<OperatorMatrix<f64>, StageFailure> {
        let samples = self.time(Stage::Sample, |p| Ok(sample_states(&p.cfg, p.sys.region())))?;
        self.report.samples = samples.len();
        let data = self.time(Stage::Stack, |p| {
            stack_data(&p.sys, &p.dict, &samples, p.cfg.integration.dt, p.cfg.integration.points)
        })?;
        self.time(Stage::Fit, |p| {
            let op = fit_operator(&data, p.cfg.fit.svd_tol)?;
            io::write_operator(&p.path(files::OPERATOR), &op)?;
            p.record_file("operator", files::OPERATOR);
            p.report.rank = Some(op.rank);
            p.report.fit_residual = Some(op.residual);
            if p.cfg.fit.spectrum > 0 {
                let k = p.cfg.fit.spectrum.min(op.t.rows());
                let pairs = spectrum(&op.t, k, op.horizon)?;
                crate::edmd::spectrum::write_spectrum_csv(&pairs, BufWriter::new(File::create(p.path(files::SPECTRUM))?))?;
                p.record_file("spectrum", files::SPECTRUM);
            }
            Ok(op)
        })
    }

    /// Iterates the operator; writes the coefficient file.
    pub fn iterate(&mut self, op: &OperatorMatrix<f64>) -> std::result::Result<UApprox<f64>, StageFailure> {
        self.time(Stage::Iterate, |p| {
            let dict = if op.dictionary.is_empty() { p.dict.clone() } else { Dictionary::parse_descriptor(&op.dictionary)? };
            let it = &p.cfg.iteration;
            let u = build_u_zk(&op.t, &dict, p.sys.x_eq(), it.tol, it.max_iter, it.mode)?;
            io::write_u(&p.path(files::U), &u)?;
            p.record_file("u", files::U);
            p.report.iterations = Some(u.iterations);
            p.report.final_residual = Some(u.final_residual);
            p.report.residuals = u.residuals.clone();
            p.report.u_at_equilibrium = Some(u.value(p.sys.x_eq()));
            Ok(u)
        })
    }

    /// Evaluates `U_ZK` on the grid and flood-fills; writes `mask.csv` and `grid.json`.
    pub fn predict_roa(&mut self, u: &UApprox<f64>) -> std::result::Result<(RoaMask<f64>, Vec<f64>), StageFailure> {
        self.time(Stage::Extract, |p| {
            let grid = Grid::new(p.sys.region().clone(), p.cfg.roa.resolution.clone())?;
            let values = evaluate_on_grid(u, &grid);
            let c = p.cfg.roa.threshold;
            let mask = extract_from_values(&grid, &values, p.sys.x_eq(), c)?;
            io::write_mask(&p.dir, &mask, &values)?;
            p.record_file("mask", files::MASK);
            p.record_file("grid", files::GRID);
            p.report.volume_fraction = Some(mask.volume_fraction);
            p.report.roa_extent = mask.extent().into_iter().map(|(a, b)| [a, b]).collect();
            p.report.volume_fraction_half_threshold =
                extract_from_values(&grid, &values, p.sys.x_eq(), c / 2.0).ok().map(|m| m.volume_fraction);
            p.report.volume_fraction_double_threshold =
                extract_from_values(&grid, &values, p.sys.x_eq(), c * 2.0).ok().map(|m| m.volume_fraction);
            let imag = imag_residue(u, &grid);
            p.report.imag_residue = Some(imag);
            let u0 = u.value(p.sys.x_eq());
            p.report.accepted = Some((u0 - 1.0).abs() <= 0.1 && imag <= 0.1);
            Ok((mask, values))
        })
    }

    /// Fits the smooth surrogate on cell-centered training points; writes the model file.
    pub fn smooth(&mut self, u: &UApprox<f64>) -> std::result::Result<SmoothModel<f64>, StageFailure> {
        self.time(Stage::Smooth, |p| {
            let grid = Grid::new(p.sys.region().clone(), p.cfg.smooth.grid.clone())?;
            let xs: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.center(i)).collect();
            let ys = evaluate_on_grid(u, &grid);
            let model = train(&xs, &ys, &p.cfg.train_options())?;
            io::write_model(&p.path(files::MODEL), &model)?;
            p.record_file("model", files::MODEL);
            p.report.smooth = Some(SmoothReport {
                training_samples: xs.len(),
                epochs_run: model.epochs_run,
                final_mse: model.final_mse,
                ..Default::default()
            });
            Ok(model)
        })
    }

    /// Grid Lie-derivative checks on the mask; writes `field.csv`.
    pub fn verify(
        &mut self,
        u: &UApprox<f64>,
        model: Option<&SmoothModel<f64>>,
        mask: &RoaMask<f64>,
    ) -> std::result::Result<(), StageFailure> {
        self.time(Stage::Verify, |p| {
            let (r, m) = (p.cfg.roa.exclusion_radius, p.cfg.roa.margin);
            let (eligible, ok) = verification_counts(&p.sys, u, mask, r, m);
            p.report.eligible_cells = Some(eligible);
            p.report.verified_cells = Some(ok);
            p.report.verified_fraction = Some(if eligible == 0 { 0.0 } else { ok as f64 / eligible as f64 });
            if let (Some(model), Some(s)) = (model, p.report.smooth.as_mut()) {
                let (e, o) = verification_counts(&p.sys, model, mask, r, m);
                s.eligible_cells = e;
                s.verified_cells = o;
                s.verified_fraction = if e == 0 { 0.0 } else { o as f64 / e as f64 };
            }
            write_field_csv(&p.path(files::FIELD), &p.sys, u, model, mask, p.cfg.roa.floor)?;
            p.record_file("field", files::FIELD);
            Ok(())
        })
    }

    pub fn write_report(&self) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path(files::REPORT))?);
        serde_json::to_writer_pretty(&mut w, &self.report).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn stages(&mut self) -> std::result::Result<(), StageFailure> {
        let op = self.learn()?;
        let u = self.iterate(&op)?;
        let (mask, _) = self.predict_roa(&u)?;
        let model = if self.cfg.smooth.enabled { Some(self.smooth(&u)?) } else { None };
        self.verify(&u, model.as_ref(), &mask)
    }

    /// Runs every stage and writes `report.json`, also on failure.
    pub fn run_all(mut self) -> std::result::Result<RunReport, StageFailure> {
        self.report.files.insert("report".into(), files::REPORT.into());
        let outcome = self.stages();
        if let Err(f) = &outcome {
            self.report.error = Some(f.error.to_string());
            self.report.failed_stage = Some(f.stage);
        }
        let written = self.write_report();
        outcome?;
        written.map_err(at(Stage::Verify))?;
        Ok(self.report)
    }
}

/// Runs the whole pipeline for `cfg`.
pub fn run(cfg: RunConfig) -> std::result::Result<RunReport, StageFailure> {
    Pipeline::new(cfg).map_err(at(Stage::Setup))?.run_all()
}

/// One row per grid cell: `x_1..x_n,u,u_imag,lie,lie_v,[u_smooth,lie_smooth,]mask`.
pub fn write_field_csv(
    path: &Path,
    sys: &SystemSpec<f64>,
    u: &UApprox<f64>,
    model: Option<&SmoothModel<f64>>,
    mask: &RoaMask<f64>,
    floor: f64,
) -> Result<()> {
    let grid = &mask.grid;
    let n = grid.resolution().len();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.center(i);
            let v = u.complex_value(&x);
            let mut rec: Vec<String> = x.iter().map(|&c| fmt_f64(c)).collect();
            rec.push(fmt_f64(v.re));
            rec.push(fmt_f64(v.im));
            rec.push(fmt_f64(lie_derivative(sys, u, &x)));
            rec.push(fmt_f64(lie_derivative_v(sys, u, &x, floor)));
            if let Some(m) = model {
                rec.push(fmt_f64(m.value(&x)));
                rec.push(fmt_f64(lie_derivative(sys, m, &x)));
            }
            rec.push(u8::from(mask.mask[i]).to_string());
            rec
        })
        .collect();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = (1..=n).map(|d| format!("x_{d}")).collect();
    header.extend(["u", "u_imag", "lie", "lie_v"].map(String::from));
    if model.is_some() {
        header.extend(["u_smooth", "lie_smooth"].map(String::from));
    }
    header.push("mask".into());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}
