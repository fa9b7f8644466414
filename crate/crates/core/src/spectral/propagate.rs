use nalgebra::{DMatrix, DVector};

use super::{gamma_integral, FieldVector, SpectralBasis, TimeProfile};
use crate::{Error, Result};

/// Decay exponents beyond this magnitude are flushed to a zero factor.
const EXPONENT_CLAMP: f64 = 700.0;

/// Galerkin matrix of the transport term: `C(t)_{kj} = ⟨l(t,·) e_j', e_k⟩`.
pub fn transport_matrix(basis: &SpectralBasis, profile: &TimeProfile, t: f64) -> Result<DMatrix<f64>> {
    let n = basis.n_modes();
    let mut c = DMatrix::zeros(n, n);
    if !profile.has_transport() {
        return Ok(c);
    }
    for (q, (&xi, &w)) in basis.nodes().iter().zip(basis.weights()).enumerate() {
        let l = profile.ell(t, xi);
        if l == 0.0 {
            continue;
        }
        for k in 0..n {
            let ek = w * l * basis.synthesis_at(q, k);
            for j in 0..n {
                c[(k, j)] += ek * basis.derivative_at(q, j);
            }
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            t,
            "transport matrix quadrature produced a non-finite entry",
        ));
    }
    Ok(c)
}

/// `M(t) = −γ(t)·diag(α) + C(t) − shift·I`.
pub fn assemble_drift_matrix(basis: &SpectralBasis, profile: &TimeProfile, t: f64, shift: f64) -> Result<DMatrix<f64>> {
    let mut m = transport_matrix(basis, profile, t)?;
    let g = profile.gamma(t);
    for (k, a) in basis.eigenvalues().iter().enumerate() {
        m[(k, k)] -= g * a + shift;
    }
    Ok(m)
}

/// `sup_t ‖C(t)‖_op` over `samples` equally spaced times in `[0, horizon]`.
pub fn transport_operator_norm(
    basis: &SpectralBasis,
    profile: &TimeProfile,
    horizon: f64,
    samples: usize,
) -> Result<f64> {
    if !profile.has_transport() {
        return Ok(0.0);
    }
    let count = if profile.is_autonomous() { 1 } else { samples.max(1) };
    let mut sup: f64 = 0.0;
    for i in 0..count {
        let t = if count == 1 {
            0.0
        } else {
            horizon * i as f64 / (count - 1) as f64
        };
        let c = transport_matrix(basis, profile, t)?;
        let s = c.singular_values().max();
        sup = sup.max(s);
    }
    Ok(sup)
}

/// Propagated state plus the number of modes whose factor was flushed to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub state: FieldVector,
    pub clamped: usize,
}

fn decay_factor(exponent: f64, clamped: &mut usize) -> f64 {
    if exponent.abs() > EXPONENT_CLAMP {
        *clamped += 1;
        0.0
    } else {
        (-exponent).exp()
    }
}

/// Applies the evolution operator
/// `exp((γ(s,t) A − shift (t − s)) / ε)` to `state`.
///
/// Without a transport term this acts mode by mode. With transport the
/// generator is frozen at `s` for the first-order part:
/// `exp([−γ(s,t) diag(α) + (t − s)(C(s) − shift)] / ε)`.
pub fn propagate(
    basis: &SpectralBasis,
    profile: &TimeProfile,
    state: &FieldVector,
    s: f64,
    t: f64,
    shift: f64,
    epsilon: f64,
) -> Result<Propagated> {
    if s > t {
        return Err(Error::Contract(format!("propagate needs s ≤ t, got s = {s}, t = {t}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!("propagate needs ε > 0, got {epsilon}")));
    }
    if s == t {
        return Ok(Propagated {
            state: state.clone(),
            clamped: 0,
        });
    }
    let big_gamma = gamma_integral(profile, s, t)?;
    let dt = t - s;
    if !profile.has_transport() {
        let mut clamped = 0;
        let mut out = state.clone();
        for (c, a) in out.coeffs_mut().iter_mut().zip(basis.eigenvalues()) {
            *c *= decay_factor((big_gamma * a + shift * dt) / epsilon, &mut clamped);
        }
        return Ok(Propagated { state: out, clamped });
    }
    let e = matrix_propagator(basis, profile, s, big_gamma, dt, shift, epsilon)?;
    Ok(Propagated {
        state: apply_matrix(&e, state),
        clamped: 0,
    })
}

fn matrix_propagator(
    basis: &SpectralBasis,
    profile: &TimeProfile,
    s: f64,
    big_gamma: f64,
    dt: f64,
    shift: f64,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    let mut omega = transport_matrix(basis, profile, s)? * dt;
    for (k, a) in basis.eigenvalues().iter().enumerate() {
        omega[(k, k)] -= big_gamma * a + shift * dt;
    }
    omega /= epsilon;
    let e = omega.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(s, "matrix exponential overflowed"));
    }
    Ok(e)
}

fn apply_matrix(e: &DMatrix<f64>, state: &FieldVector) -> FieldVector {
    let x = DVector::from_column_slice(state.coeffs());
    FieldVector::from_coeffs((e * x).as_slice().to_vec())
}

/// Propagator for a fixed step `dt`, reusing whatever is time-independent.
#[derive(Debug, Clone)]
pub struct StepPropagator {
    dt: f64,
    shift: f64,
    epsilon: f64,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Diagonal { factors: Vec<f64>, clamped: usize },
    DiagonalVarying,
    Matrix(DMatrix<f64>),
    MatrixVarying,
}

impl StepPropagator {
    pub fn new(basis: &SpectralBasis, profile: &TimeProfile, dt: f64, shift: f64, epsilon: f64) -> Result<Self> {
        if !(dt > 0.0) || !(epsilon > 0.0) {
            return Err(Error::Contract(format!(
                "step propagator needs dt > 0 and ε > 0, got {dt}, {epsilon}"
            )));
        }
        let kind = match (profile.has_transport(), profile.is_autonomous()) {
            (false, true) => {
                let g = gamma_integral(profile, 0.0, dt)?;
                let mut clamped = 0;
                let factors = basis
                    .eigenvalues()
                    .iter()
                    .map(|a| decay_factor((g * a + shift * dt) / epsilon, &mut clamped))
                    .collect();
                Kind::Diagonal { factors, clamped }
            }
            (false, false) => Kind::DiagonalVarying,
            (true, true) => {
                let g = gamma_integral(profile, 0.0, dt)?;
                Kind::Matrix(matrix_propagator(basis, profile, 0.0, g, dt, shift, epsilon)?)
            }
            (true, false) => Kind::MatrixVarying,
        };
        Ok(Self {
            dt,
            shift,
            epsilon,
            kind,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Propagates `state` from `t` to `t + dt` in place; returns the number
    /// of clamped modes.
    pub fn apply(
        &self,
        basis: &SpectralBasis,
        profile: &TimeProfile,
        t: f64,
        state: &mut FieldVector,
    ) -> Result<usize> {
        match &self.kind {
            Kind::Diagonal { factors, clamped } => {
                for (c, f) in state.coeffs_mut().iter_mut().zip(factors) {
                    *c *= f;
                }
                Ok(*clamped)
            }
            Kind::Matrix(e) => {
                *state = apply_matrix(e, state);
                Ok(0)
            }
            Kind::DiagonalVarying | Kind::MatrixVarying => {
                let p = propagate(basis, profile, state, t, t + self.dt, self.shift, self.epsilon)?;
                *state = p.state;
                Ok(p.clamped)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::TransportLaw;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
        // Oracle: scaled Taylor series, squared back.
        let n = m.nrows();
        let norm = m.abs().column_sum().max();
        let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let a = m / 2f64.powi(s);
        let mut result = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..40 {
            term = &term * &a / k as f64;
            result += &term;
        }
        for _ in 0..s {
            result = &result * &result;
        }
        result
    }

    #[test]
    fn pure_laplacian_matrix() {
        let b = SpectralBasis::with_default_grid(PI, 2).unwrap();
        let p = TimeProfile::constant(1.0).unwrap();
        let m = assemble_drift_matrix(&b, &p, 0.0, 0.0).unwrap();
        assert!((m[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((m[(1, 1)] + 4.0).abs() < 1e-14);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn constant_transport_entries() {
        let b = SpectralBasis::with_default_grid(PI, 4).unwrap();
        let p = TimeProfile::constant(1.0)
            .unwrap()
            .with_transport(TransportLaw::Constant(1.0))
            .unwrap();
        let c = transport_matrix(&b, &p, 0.0).unwrap();
        // Oracle: (2/π)·j·∫₀^π cos(jξ) sin(kξ) dξ = (2/π)·j·k(1 − (−1)^{k+j})/(k² − j²).
        for k in 1..=4usize {
            for j in 1..=4usize {
                let (kf, jf) = (k as f64, j as f64);
                let oracle = if k == j {
                    0.0
                } else {
                    let sign = if (k + j) % 2 == 0 { 1.0 } else { -1.0 };
                    2.0 / PI * jf * kf * (1.0 - sign) / (kf * kf - jf * jf)
                };
                assert!((c[(k - 1, j - 1)] - oracle).abs() < 1e-12, "C[{k},{j}]");
            }
        }
        assert!((c[(1, 0)] - 8.0 / (3.0 * PI)).abs() < 1e-12);
        assert!((c[(1, 0)] - 0.8488).abs() < 1e-4);
    }

    #[test]
    fn scalar_decay_examples() {
        let b = SpectralBasis::with_default_grid(PI, 1).unwrap();
        let p = TimeProfile::constant(1.0).unwrap();
        let x = FieldVector::mode(1, 1, 1.0);
        let r = propagate(&b, &p, &x, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!((r.state[0] - (-1f64).exp()).abs() < 1e-15);
        let r = propagate(&b, &p, &x, 0.0, 1.0, 1.0, 0.5).unwrap();
        assert!((r.state[0] - (-4f64).exp()).abs() < 1e-15);
        let r = propagate(&b, &p, &x, 2.0, 2.0, 1.0, 0.5).unwrap();
        assert_eq!(r.state, x);
    }

    #[test]
    fn huge_exponents_are_clamped() {
        let b = SpectralBasis::with_default_grid(PI, 3).unwrap();
        let p = TimeProfile::constant(1.0).unwrap();
        let x = FieldVector::from_coeffs(vec![1.0, 1.0, 1.0]);
        let r = propagate(&b, &p, &x, 0.0, 1.0, 0.0, 1e-3).unwrap();
        assert_eq!(r.clamped, 3);
        assert_eq!(r.state.norm(), 0.0);
    }

    #[test]
    fn pade_exponential_matches_taylor_oracle() {
        let b = SpectralBasis::with_default_grid(2.0, 6).unwrap();
        let p = TimeProfile::constant(0.7)
            .unwrap()
            .with_transport(TransportLaw::Custom(std::sync::Arc::new(|_, xi| 1.0 + 0.5 * xi)))
            .unwrap();
        let m = assemble_drift_matrix(&b, &p, 0.0, 1.5).unwrap() * 0.05;
        let diff = (m.exp() - taylor_exp(&m)).abs().max();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn transport_with_large_shift_contracts() {
        let b = SpectralBasis::with_default_grid(PI, 8).unwrap();
        let p = TimeProfile::constant(1.0)
            .unwrap()
            .with_transport(TransportLaw::Oscillating {
                amplitude: 2.0,
                frequency: 1.3,
            })
            .unwrap();
        let bound = transport_operator_norm(&b, &p, 10.0, 50).unwrap();
        let x = FieldVector::from_coeffs((1..=8).map(|k| 1.0 / k as f64).collect());
        for i in 0..20 {
            let s = 0.5 * i as f64;
            let r = propagate(&b, &p, &x, s, s + 0.3, bound + 0.1, 1.0).unwrap();
            assert!(r.state.norm() <= x.norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn step_propagator_agrees_with_propagate() {
        let b = SpectralBasis::with_default_grid(PI, 5).unwrap();
        let x = FieldVector::from_coeffs(vec![1.0, -0.5, 0.25, 0.1, 0.3]);
        let profiles = [
            TimeProfile::constant(1.3).unwrap(),
            TimeProfile::sinusoidal(2.0, 1.0, 1.0).unwrap(),
            TimeProfile::constant(1.0)
                .unwrap()
                .with_transport(TransportLaw::Constant(0.4))
                .unwrap(),
        ];
        for p in &profiles {
            let sp = StepPropagator::new(&b, p, 0.01, 1.0, 0.2).unwrap();
            let mut y = x.clone();
            sp.apply(&b, p, 0.7, &mut y).unwrap();
            let r = propagate(&b, p, &x, 0.7, 0.71, 1.0, 0.2).unwrap();
            assert!(y.distance(&r.state) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn semigroup_property(
            r in 0.0f64..3.0, a in 0.0f64..1.0, c in 0.0f64..1.0,
            shift in 0.0f64..2.0, eps in 0.05f64..2.0,
        ) {
            let b = SpectralBasis::with_default_grid(PI, 4).unwrap();
            let p = TimeProfile::sinusoidal(2.0, 0.5, 1.7).unwrap();
            let x = FieldVector::from_coeffs(vec![1.0, 2.0, -1.0, 0.5]);
            let s = r + a;
            let t = s + c;
            let two = propagate(&b, &p, &propagate(&b, &p, &x, r, s, shift, eps).unwrap().state, s, t, shift, eps).unwrap();
            let one = propagate(&b, &p, &x, r, t, shift, eps).unwrap();
            prop_assume!(one.clamped == 0 && two.clamped == 0);
            for (u, v) in one.state.coeffs().iter().zip(two.state.coeffs()) {
                let scale = u.abs().max(v.abs());
                prop_assert!((u - v).abs() <= 1e-12 * scale.max(1e-300));
            }
        }
    }
}
