//! Dirichlet sine eigenbasis of the interval `(0, L)`, physical-grid
//! transforms, evolution propagators and fractional-power norms.
//!
//! Functions are represented by their coefficients on the orthonormal
//! eigenfunctions `e_k(ξ) = sqrt(2/L) sin(kπξ/L)`, eigenvalues of `−∂²`
//! `α_k = (kπ/L)²`. Pointwise (Nemytskii) maps are evaluated on a
//! Gauss–Legendre grid and projected back by the same quadrature, so the
//! projection of a product of modes is the exact `L²` projection up to
//! quadrature accuracy rather than a discrete-sine-transform alias.

mod field;
mod profile;
mod propagate;
pub mod quadrature;

pub use field::FieldVector;
pub use profile::{gamma_integral, FieldLaw, GammaLaw, ScalarLaw, TimeProfile, TransportLaw};
pub use propagate::{assemble_drift_matrix, propagate, transport_operator_norm, Propagated, StepPropagator};

use crate::{Error, Result};
use std::f64::consts::PI;

/// Orthonormality tolerance for the discrete Gram matrix of the basis.
const GRAM_TOLERANCE: f64 = 1e-12;

/// `(kπ/L)²`, the `k`-th Dirichlet eigenvalue of `−∂²` on `(0, L)`.
pub fn dirichlet_eigenvalue(k: usize, domain_length: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k", "mode indices start at 1"));
    }
    if !(domain_length > 0.0 && domain_length.is_finite()) {
        return Err(Error::config("length", "domain length must be positive"));
    }
    let w = k as f64 * PI / domain_length;
    Ok(w * w)
}

/// Truncated sine basis together with its quadrature grid.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    domain_length: f64,
    n_modes: usize,
    eigenvalues: Vec<f64>,
    quadrature_points: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `e_k(ξ_j)`, row `j`, column `k`.
    synthesis: Vec<f64>,
    /// `w_j e_k(ξ_j)`, row `k`, column `j`.
    analysis: Vec<f64>,
    /// `e_k'(ξ_j)`, row `j`, column `k`.
    derivative: Vec<f64>,
}

impl SpectralBasis {
    /// Grid size used when none is requested.
    pub fn default_quadrature_points(n_modes: usize) -> usize {
        4 * n_modes + 32
    }

    pub fn new(domain_length: f64, n_modes: usize, quadrature_points: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::config("modes", "need at least one mode"));
        }
        if quadrature_points < 2 * n_modes {
            return Err(Error::config(
                "quadrature_points",
                format!("must be ≥ 2N = {}, got {quadrature_points}", 2 * n_modes),
            ));
        }
        let eigenvalues = (1..=n_modes)
            .map(|k| dirichlet_eigenvalue(k, domain_length))
            .collect::<Result<Vec<_>>>()?;
        let (nodes, weights) = quadrature::gauss_legendre(quadrature_points, 0.0, domain_length);
        let amp = (2.0 / domain_length).sqrt();
        let (q, n) = (quadrature_points, n_modes);
        let mut synthesis = vec![0.0; q * n];
        let mut derivative = vec![0.0; q * n];
        let mut analysis = vec![0.0; n * q];
        for (j, &xi) in nodes.iter().enumerate() {
            for k in 0..n {
                let w = (k + 1) as f64 * PI / domain_length;
                let e = amp * (w * xi).sin();
                synthesis[j * n + k] = e;
                derivative[j * n + k] = amp * w * (w * xi).cos();
                analysis[k * q + j] = weights[j] * e;
            }
        }
        let basis = Self {
            domain_length,
            n_modes,
            eigenvalues,
            quadrature_points,
            nodes,
            weights,
            synthesis,
            analysis,
            derivative,
        };
        let gram_error = basis.gram_error();
        if gram_error > GRAM_TOLERANCE {
            return Err(Error::numerical(
                0.0,
                format!(
                    "quadrature grid of {quadrature_points} points is too coarse for {n_modes} modes \
                     (Gram matrix deviates from identity by {gram_error:.3e})"
                ),
            ));
        }
        Ok(basis)
    }

    pub fn with_default_grid(domain_length: f64, n_modes: usize) -> Result<Self> {
        Self::new(domain_length, n_modes, Self::default_quadrature_points(n_modes))
    }

    fn gram_error(&self) -> f64 {
        let n = self.n_modes;
        let q = self.quadrature_points;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            for l in 0..n {
                let g: f64 = (0..q)
                    .map(|j| self.analysis[k * q + j] * self.synthesis[j * n + l])
                    .sum();
                let target = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn quadrature_points(&self) -> usize {
        self.quadrature_points
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Largest retained eigenvalue `α_N`.
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.n_modes - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `‖e_k‖_∞ = sqrt(2/L)` for every mode.
    pub fn eigenfunction_sup_norm(&self) -> f64 {
        (2.0 / self.domain_length).sqrt()
    }

    /// `e_k(ξ)` for 1-based `k`.
    pub fn eigenfunction(&self, k: usize, xi: f64) -> f64 {
        self.eigenfunction_sup_norm() * (k as f64 * PI * xi / self.domain_length).sin()
    }

    pub fn zeros(&self) -> FieldVector {
        FieldVector::zeros(self.n_modes)
    }

    /// Grid values `Σ_k c_k e_k(ξ_j)`.
    pub fn to_physical(&self, state: &FieldVector) -> Vec<f64> {
        let mut out = vec![0.0; self.quadrature_points];
        self.to_physical_into(state, &mut out);
        out
    }

    pub fn to_physical_into(&self, state: &FieldVector, out: &mut [f64]) {
        let n = self.n_modes;
        debug_assert_eq!(state.len(), n);
        debug_assert_eq!(out.len(), self.quadrature_points);
        let c = state.coeffs();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.synthesis[j * n..(j + 1) * n];
            *o = row.iter().zip(c).map(|(e, c)| e * c).sum();
        }
    }

    /// Quadrature projection of grid values onto the retained modes.
    pub fn to_spectral(&self, values: &[f64]) -> FieldVector {
        debug_assert_eq!(values.len(), self.quadrature_points);
        let q = self.quadrature_points;
        let coeffs = (0..self.n_modes)
            .map(|k| {
                let row = &self.analysis[k * q..(k + 1) * q];
                row.iter().zip(values).map(|(a, v)| a * v).sum()
            })
            .collect();
        FieldVector::from_coeffs(coeffs)
    }

    /// Projects the pointwise function `value(j, ξ_j)` onto the basis.
    pub fn project(&self, mut value: impl FnMut(usize, f64) -> f64) -> FieldVector {
        let q = self.quadrature_points;
        let n = self.n_modes;
        let mut coeffs = vec![0.0; n];
        for (j, &xi) in self.nodes.iter().enumerate() {
            let f = value(j, xi);
            if f == 0.0 {
                continue;
            }
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c += self.analysis[k * q + j] * f;
            }
        }
        FieldVector::from_coeffs(coeffs)
    }

    /// `e_k'(ξ_j)` with `j` the grid index and `k` 0-based.
    pub(crate) fn derivative_at(&self, j: usize, k: usize) -> f64 {
        self.derivative[j * self.n_modes + k]
    }

    pub(crate) fn synthesis_at(&self, j: usize, k: usize) -> f64 {
        self.synthesis[j * self.n_modes + k]
    }
}

/// `‖x‖_θ = sqrt(Σ α_k^{2θ} x_k²)`, `θ ∈ [0, 1)`.
pub fn fractional_norm(state: &FieldVector, basis: &SpectralBasis, theta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::config("theta", format!("must lie in [0, 1), got {theta}")));
    }
    if theta == 0.0 {
        return Ok(state.norm());
    }
    Ok(state
        .coeffs()
        .iter()
        .zip(basis.eigenvalues())
        .map(|(c, a)| a.powf(2.0 * theta) * c * c)
        .sum::<f64>()
        .sqrt())
}
