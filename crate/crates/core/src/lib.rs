//! Spectral-Galerkin simulation of non-autonomous slow-fast stochastic
//! reaction-diffusion systems on an interval, driven by Q-Wiener noise and
//! compensated compound-Poisson jumps.
//!
//! The crate builds the averaged slow equation from ergodic time averages of
//! the frozen fast equation and ships the Monte Carlo machinery used to check
//! that the slow component converges to it as the scale separation grows:
//!
//! * [`spectral`]: Dirichlet sine basis, evolution propagators, θ-norms.
//! * [`coefficients`]: reaction/noise coefficient presets and their
//!   Nemytskii (pointwise composition) operators.
//! * [`noise`]: counter-addressed random streams, Q-Wiener increments, jumps.
//! * [`integrator`]: exponential-Euler stepping of the coupled pair, the
//!   frozen fast equation and the Khasminskii auxiliary process.
//! * [`averaging`]: quasi-stationary sampling, averaged drift, averaged
//!   slow equation.
//! * [`harness`]: convergence study, statistical lemma checks, reports.
//! * [`config`]: strict TOML run configuration.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod coefficients;
pub mod config;
mod error;
pub mod harness;
pub mod integrator;
pub mod noise;
pub mod spectral;
pub mod stats;

pub use averaging::{AveragedDrift, AveragedDriftEstimate, AveragingOptions, MeasureSample};
pub use coefficients::{CoefficientSet, JumpChannel, PresetFamily};
pub use error::{Error, Result};
pub use harness::{ConvergenceReport, VerifySuiteResult};
pub use integrator::{ReplicaStreams, SimConfig, SlowFastSystem, TrajectoryRecord};
pub use noise::{LevyMeasureSpec, NoiseSpec, RandomStream};
pub use spectral::{FieldVector, SpectralBasis, TimeProfile};
