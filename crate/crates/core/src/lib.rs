//! Region-of-attraction estimation with learned Zubov-Koopman operators.
//!
//! The pipeline simulates short stopped-flow trajectories, fits a matrix representation of
//! the weighted Koopman operator `T_dt h(x) = exp(-int_0^dt eta) h(x(dt))` on an observable
//! dictionary, iterates it to approximate the bounded solution `U` of Zubov's dual equation,
//! and reads the region of attraction off the connected superlevel set of `U` around the
//! equilibrium.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*64` aliases below fix `f64`.

pub mod config;
pub mod dictionary;
pub mod edmd;
pub mod error;
pub mod integrate;
pub mod io;
pub mod pipeline;
pub mod roa;
pub mod scalar;
pub mod smooth;
pub mod systems;

pub use config::RunConfig;
pub use dictionary::{Dictionary, DictionaryFamily};
pub use edmd::{fit_operator, stack_data, CMatrix, DataMatrices, OperatorMatrix};
pub use error::{Error, Result};
pub use pipeline::{run, Pipeline, RunReport, Stage, StageFailure};
pub use integrate::{clip_to_region, evaluate_t_delta, simulate_augmented, stopped_trajectory, ClippedTrajectory};
pub use roa::{build_u_zk, extract_roa, lie_derivative, v_zk, verified_fraction, Grid, IterationMode, RoaMask, ScalarField, UApprox};
pub use scalar::{Complex, Real};
pub use smooth::{train, SmoothModel, TrainOptions};
pub use systems::{builtin, builtin_with, closed_form_u_1d, closed_form_v_1d, BenchmarkId, Region, SystemOverrides, SystemSpec};

pub type SystemSpec64 = SystemSpec<f64>;
pub type Region64 = Region<f64>;
pub type ClippedTrajectory64 = ClippedTrajectory<f64>;
pub type Dictionary64 = Dictionary<f64>;
pub type CMatrix64 = CMatrix<f64>;
pub type DataMatrices64 = DataMatrices<f64>;
pub type OperatorMatrix64 = OperatorMatrix<f64>;
pub type Complex64 = Complex<f64>;
pub type UApprox64 = UApprox<f64>;
pub type Grid64 = Grid<f64>;
pub type RoaMask64 = RoaMask<f64>;
pub type SmoothModel64 = SmoothModel<f64>;
