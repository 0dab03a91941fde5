//! Run configuration.
//!
//! A run is described by one TOML document with the sections below. Every field has a
//! default taken from the preset of the selected system, so an empty document runs the
//! reduced cubic 1D experiment. Layers are merged key by key: command-line overlay over
//! file over preset.
//!
//! ```toml
//! [system]
//! id = "cubic1d"            # cubic1d | vdp-reversed | polynomial | power2m | sys3d | stiff-vdp | stiff2
//! # region = [[-1.5, 1.5]]  # optional override, one [lo, hi] per axis
//! # eta_divisor = 5.0       # optional, systems with eta = |x|^2 / divisor
//! # mu = 4.0                # optional, stiff-vdp only
//!
//! [integration]
//! dt = 1.0                  # horizon of one operator step
//! points = 1001             # samples per trajectory, RK4 step dt / (points - 1)
//!
//! [sampling]
//! mode = "grid"             # grid: endpoints-inclusive lattice; random: uniform draws
//! grid = [1001]             # points per axis (one value is broadcast to every axis)
//! count = 1000              # random mode only
//! seed = 0
//!
//! [dictionary]
//! family = "cos_gauss_1d"   # cos_gauss_1d | cos_gauss_nd | complex_fourier_nd
//! freq_count = 128          # N: per-axis indices -(N-1)..N-1
//! period = 3.0
//! gauss_scale = 4.0
//!
//! [fit]
//! svd_tol = 1e-12           # relative eigenvalue cut for the Gram pseudoinverse
//! spectrum = 0              # leading eigenpairs to dump (0 skips)
//!
//! [iteration]
//! tol = 1e-2
//! max_iter = 10
//! mode = "matrix"           # matrix | vector
//!
//! [roa]
//! resolution = [600]        # cells per axis
//! threshold = 1e-3          # superlevel c
//! floor = 1e-12             # clamp for -log U
//! exclusion_radius = 0.05   # ball around x_eq left out of verification
//! margin = 0.0              # verification requires L_f U > margin
//!
//! [smooth]
//! enabled = false
//! widths = [15, 15]
//! epochs = 300
//! mse_tol = 1e-8
//! learning_rate = 1e-2
//! momentum = 0.9
//! seed = 0
//! grid = [300]              # training points per axis (cell centers)
//!
//! [output]
//! dir = "out/cubic1d"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryFamily};
use crate::error::{Error, Result};
use crate::roa::IterationMode;
use crate::scalar::Real;
use crate::smooth::TrainOptions;
use crate::systems::{builtin_with, BenchmarkId, SystemOverrides, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub integration: IntegrationSection,
    pub sampling: SamplingSection,
    pub dictionary: DictionarySection,
    pub fit: FitSection,
    pub iteration: IterationSection,
    pub roa: RoaSection,
    pub smooth: SmoothSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_divisor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub dt: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Grid,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub mode: SamplingMode,
    pub grid: Vec<usize>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySection {
    pub family: DictionaryFamily,
    pub freq_count: usize,
    pub period: f64,
    pub gauss_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub svd_tol: f64,
    pub spectrum: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSection {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: IterationMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaSection {
    pub resolution: Vec<usize>,
    pub threshold: f64,
    pub floor: f64,
    pub exclusion_radius: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSection {
    pub enabled: bool,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub mse_tol: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub grid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(BenchmarkId::Cubic1d)
    }
}

impl RunConfig {
    /// Desk-scale settings for each benchmark.
    pub fn preset(id: BenchmarkId) -> Self {
        let dim = id.dim();
        let cos2d = |n| DictionarySection { family: DictionaryFamily::CosGaussNd, freq_count: n, period: 6.0, gauss_scale: 25.0 };
        let fourier = |n| DictionarySection { family: DictionaryFamily::ComplexFourierNd, freq_count: n, period: 12.0, gauss_scale: 1.0 };
        let mut cfg = Self {
            system: SystemSection { id: id.to_string(), region: None, eta_divisor: None, mu: None },
            integration: IntegrationSection { dt: 2.0, points: 1001 },
            sampling: SamplingSection { mode: SamplingMode::Grid, grid: vec![40; dim], count: 1000, seed: 0 },
            dictionary: cos2d(10),
            fit: FitSection { svd_tol: 1e-12, spectrum: 0 },
            iteration: IterationSection { tol: 1e-2, max_iter: 8, mode: IterationMode::Matrix },
            roa: RoaSection { resolution: vec![100; dim], threshold: 1e-3, floor: 1e-12, exclusion_radius: 0.1, margin: 0.0 },
            smooth: SmoothSection {
                enabled: false,
                widths: vec![15, 15],
                epochs: 300,
                mse_tol: 1e-8,
                learning_rate: 1e-2,
                momentum: 0.9,
                seed: 0,
                grid: vec![100; dim],
            },
            output: OutputSection { dir: PathBuf::from("out").join(id.to_string().replace(':', "-")) },
        };
        match id {
            BenchmarkId::Cubic1d => {
                cfg.integration.dt = 1.0;
                cfg.sampling.grid = vec![1001];
                cfg.dictionary =
                    DictionarySection { family: DictionaryFamily::CosGauss1d, freq_count: 128, period: 3.0, gauss_scale: 4.0 };
                cfg.iteration.max_iter = 10;
                cfg.roa.resolution = vec![600];
                cfg.roa.exclusion_radius = 0.05;
                cfg.smooth.grid = vec![300];
            }
            BenchmarkId::VdpReversed => {
                cfg.integration.dt = 1.5;
                cfg.sampling.grid = vec![60, 60];
                cfg.dictionary = cos2d(15);
                cfg.smooth.enabled = true;
            }
            BenchmarkId::Polynomial => {
                cfg.dictionary.period = 12.0;
                cfg.dictionary.gauss_scale = 50.0;
            }
            BenchmarkId::Power2m => cfg.dictionary = fourier(10),
            BenchmarkId::Sys3d => {
                cfg.sampling.grid = vec![15; 3];
                cfg.dictionary = fourier(4);
                cfg.roa.resolution = vec![30; 3];
                cfg.roa.threshold = 0.2;
                cfg.smooth.enabled = true;
                cfg.smooth.widths = vec![100];
                cfg.smooth.grid = vec![20; 3];
            }
            BenchmarkId::StiffVdp { .. } => {
                cfg.integration.dt = 1.0;
                cfg.sampling.grid = vec![60, 60];
                cfg.dictionary = DictionarySection { period: 12.0, ..cos2d(15) };
            }
            BenchmarkId::Stiff2 => {
                cfg.integration.dt = 1.0;
                cfg.dictionary = fourier(10);
            }
        }
        cfg
    }

    /// Parses a TOML document layered over the preset of the system it names.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse().map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        Self::layered(table, toml::Table::new())
    }

    /// Preset, then `file` (if any), then `overlay`.
    pub fn load(file: Option<&Path>, overlay: toml::Table) -> Result<Self> {
        let base = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Self::layered(base, overlay)
    }

    fn layered(file: toml::Table, overlay: toml::Table) -> Result<Self> {
        let id_of = |t: &toml::Table| t.get("system").and_then(|s| s.get("id")).and_then(|v| v.as_str()).map(str::to_owned);
        let id: BenchmarkId = id_of(&overlay).or_else(|| id_of(&file)).unwrap_or_else(|| "cubic1d".into()).parse()?;
        let mut merged = toml::Table::try_from(Self::preset(id)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, file);
        merge(&mut merged, overlay);
        let mut cfg: RunConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.system.id = id.to_string();
        cfg.normalize()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn benchmark_id(&self) -> Result<BenchmarkId> {
        self.system.id.parse()
    }

    pub fn overrides(&self) -> SystemOverrides {
        SystemOverrides { region: self.system.region.clone(), eta_divisor: self.system.eta_divisor, mu: self.system.mu }
    }

    pub fn system_spec<T: Real>(&self) -> Result<SystemSpec<T>> {
        builtin_with(self.benchmark_id()?, &self.overrides())
    }

    /// Dictionary centered at the equilibrium of `sys`.
    pub fn build_dictionary<T: Real>(&self, sys: &SystemSpec<T>) -> Result<Dictionary<T>> {
        let d = &self.dictionary;
        Dictionary::new(d.family, d.freq_count, T::lit(d.period), T::lit(d.gauss_scale), sys.x_eq().to_vec())
    }

    pub fn train_options(&self) -> TrainOptions {
        let s = &self.smooth;
        TrainOptions {
            widths: s.widths.clone(),
            epochs: s.epochs,
            mse_tol: s.mse_tol,
            learning_rate: s.learning_rate,
            momentum: s.momentum,
            seed: s.seed,
        }
    }

    /// Broadcasts single-value per-axis lists and checks ranges.
    fn normalize(&mut self) -> Result<()> {
        let dim = self.system_spec::<f64>()?.dim();
        for (name, v) in [
            ("sampling.grid", &mut self.sampling.grid),
            ("roa.resolution", &mut self.roa.resolution),
            ("smooth.grid", &mut self.smooth.grid),
        ] {
            if v.len() == 1 && dim > 1 {
                *v = vec![v[0]; dim];
            }
            if v.len() != dim {
                return Err(Error::Config(format!("{name} has {} entries for a {dim}-dimensional system", v.len())));
            }
            if v.iter().any(|&n| n == 0) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        if self.sampling.mode == SamplingMode::Grid && self.sampling.grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("sampling.grid needs at least 2 points per axis".into()));
        }
        if self.sampling.mode == SamplingMode::Random && self.sampling.count == 0 {
            return Err(Error::Config("sampling.count must be positive".into()));
        }
        let checks: [(&str, f64); 7] = [
            ("integration.dt", self.integration.dt),
            ("fit.svd_tol", self.fit.svd_tol),
            ("iteration.tol", self.iteration.tol),
            ("roa.threshold", self.roa.threshold),
            ("roa.floor", self.roa.floor),
            ("dictionary.period", self.dictionary.period),
            ("dictionary.gauss_scale", self.dictionary.gauss_scale),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.integration.points < 2 {
            return Err(Error::Config("integration.points must be at least 2".into()));
        }
        if self.iteration.max_iter == 0 {
            return Err(Error::Config("iteration.max_iter must be at least 1".into()));
        }
        if !(self.roa.exclusion_radius >= 0.0) {
            return Err(Error::Config("roa.exclusion_radius must be non-negative".into()));
        }
        if self.dictionary.family == DictionaryFamily::CosGauss1d && dim != 1 {
            return Err(Error::Config(format!("cos_gauss_1d needs a 1-dimensional system, this one has {dim}")));
        }
        Ok(())
    }
}

/// Recursive key-wise merge; tables merge, everything else is replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_cubic_experiment() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.system.id, "cubic1d");
        assert_eq!(c.sampling.grid, vec![1001]);
        assert_eq!(c.dictionary.freq_count, 128);
        assert_eq!(c.integration.dt, 1.0);
        assert_eq!(c.integration.points, 1001);
        assert_eq!(c.iteration.tol, 1e-2);
        assert_eq!(c.iteration.max_iter, 10);
        assert_eq!(c.roa.threshold, 1e-3);
        let sys = c.system_spec::<f64>().unwrap();
        assert_eq!(c.build_dictionary(&sys).unwrap().size(), 255);
    }

    #[test]
    fn system_switch_takes_that_preset() {
        let c = RunConfig::from_toml_str("[system]\nid = \"vdp-reversed\"\n").unwrap();
        assert_eq!(c.sampling.grid, vec![60, 60]);
        assert_eq!(c.integration.dt, 1.5);
        assert_eq!(c.iteration.max_iter, 8);
        let sys = c.system_spec::<f64>().unwrap();
        assert_eq!(c.build_dictionary(&sys).unwrap().size(), 841);
    }

    #[test]
    fn layers_and_broadcast() {
        let mut overlay = toml::Table::new();
        overlay.insert("iteration".into(), toml::Value::Table([("max_iter".to_string(), toml::Value::Integer(3))].into_iter().collect()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[system]\nid = \"polynomial\"\n[sampling]\ngrid = [7]\n[iteration]\nmax_iter = 5\ntol = 0.5\n").unwrap();
        let c = RunConfig::load(Some(&p), overlay).unwrap();
        assert_eq!(c.sampling.grid, vec![7, 7]);
        assert_eq!(c.iteration.max_iter, 3);
        assert_eq!(c.iteration.tol, 0.5);
    }

    #[test]
    fn round_trip_through_toml() {
        for id in ["cubic1d", "vdp-reversed", "sys3d", "stiff-vdp:6", "stiff2", "power2m", "polynomial"] {
            let c = RunConfig::preset(id.parse().unwrap());
            let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, c, "{id}");
        }
    }

    #[test]
    fn family_names_match_the_cli_spelling() {
        for name in ["cos_gauss_1d", "cos_gauss_nd", "complex_fourier_nd"] {
            let doc = format!("[dictionary]\nfamily = \"{name}\"\n");
            let id = if name.ends_with("1d") { "cubic1d" } else { "vdp-reversed" };
            let c = RunConfig::from_toml_str(&format!("[system]\nid = \"{id}\"\n{doc}")).unwrap();
            assert_eq!(c.dictionary.family.to_string(), name);
            assert!(c.to_toml_string().unwrap().contains(name));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "[sampling]\nbogus = 1\n",
            "[system]\nid = \"nope\"\n",
            "[integration]\ndt = -1.0\n",
            "[iteration]\nmax_iter = 0\n",
            "[roa]\nresolution = [10, 10]\n",
            "[system]\nid = \"vdp-reversed\"\n[dictionary]\nfamily = \"cos_gauss_1d\"\n",
            "not toml at all [",
        ] {
            assert!(matches!(RunConfig::from_toml_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn region_override_reaches_the_system() {
        let c = RunConfig::from_toml_str("[system]\nregion = [[-1.2, 1.3]]\n").unwrap();
        let sys = c.system_spec::<f64>().unwrap();
        assert_eq!(sys.region().bounds(), &[(-1.2, 1.3)]);
    }
}
