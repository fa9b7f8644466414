use std::fmt;
use std::sync::Arc;

use super::quadrature::integrate_adaptive;
use crate::{Error, Result};

/// Time horizon and resolution on which profile bounds are validated.
const VALIDATION_HORIZON: f64 = 100.0;
const VALIDATION_POINTS: usize = 10_001;

pub type ScalarLaw = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type FieldLaw = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Diffusivity modulation `γ(t)`.
#[derive(Clone)]
pub enum GammaLaw {
    Constant(f64),
    /// `mean + amplitude · sin(frequency · t)`
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        frequency: f64,
    },
    Custom(ScalarLaw),
}

/// Transport coefficient `l(t, ξ)` of the first-order term `l ∂_ξ u`.
#[derive(Clone)]
pub enum TransportLaw {
    Zero,
    Constant(f64),
    /// `amplitude · sin(frequency · t)`, uniform in space.
    Oscillating {
        amplitude: f64,
        frequency: f64,
    },
    Custom(FieldLaw),
}

/// Time dependence of one operator `A_i(t) = γ_i(t) A + L_i(t)`.
#[derive(Clone)]
pub struct TimeProfile {
    gamma: GammaLaw,
    ell: TransportLaw,
    gamma_lower: f64,
    gamma_upper: f64,
    ell_bound: f64,
}

impl fmt::Debug for TimeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeProfile")
            .field("gamma_lower", &self.gamma_lower)
            .field("gamma_upper", &self.gamma_upper)
            .field("ell_bound", &self.ell_bound)
            .field("autonomous", &self.is_autonomous())
            .finish()
    }
}

impl TimeProfile {
    /// Builds a profile and checks `gamma_lower ≤ γ(t) ≤ gamma_upper` and
    /// boundedness of `l` on a dense validation grid.
    pub fn new(gamma: GammaLaw, ell: TransportLaw, gamma_lower: f64, gamma_upper: f64) -> Result<Self> {
        if !(gamma_lower > 0.0 && gamma_lower.is_finite()) {
            return Err(Error::config("gamma_lower", "must be a positive finite real"));
        }
        if !(gamma_upper >= gamma_lower && gamma_upper.is_finite()) {
            return Err(Error::config("gamma_upper", "must be finite and ≥ gamma_lower"));
        }
        let mut profile = Self {
            gamma,
            ell,
            gamma_lower,
            gamma_upper,
            ell_bound: 0.0,
        };
        let slack = 1e-12 * gamma_upper;
        let mut ell_bound: f64 = 0.0;
        for i in 0..VALIDATION_POINTS {
            let t = VALIDATION_HORIZON * i as f64 / (VALIDATION_POINTS - 1) as f64;
            let g = profile.gamma(t);
            if !(g >= gamma_lower - slack && g <= gamma_upper + slack) {
                return Err(Error::config(
                    "gamma",
                    format!("γ({t}) = {g} leaves the declared bounds [{gamma_lower}, {gamma_upper}]"),
                ));
            }
            if profile.has_transport() && i % 100 == 0 {
                for j in 0..=32 {
                    let l = profile.ell(t, j as f64 / 32.0);
                    if !l.is_finite() {
                        return Err(Error::config("ell", format!("l({t}, ·) is not finite")));
                    }
                    ell_bound = ell_bound.max(l.abs());
                }
            }
        }
        profile.ell_bound = ell_bound;
        Ok(profile)
    }

    /// `γ ≡ value`, no transport term.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(GammaLaw::Constant(value), TransportLaw::Zero, value, value)
    }

    /// `γ(t) = mean + amplitude·sin(frequency·t)` with the tight bounds.
    pub fn sinusoidal(mean: f64, amplitude: f64, frequency: f64) -> Result<Self> {
        let a = amplitude.abs();
        Self::new(
            GammaLaw::Sinusoidal {
                mean,
                amplitude,
                frequency,
            },
            TransportLaw::Zero,
            mean - a,
            mean + a,
        )
    }

    pub fn with_transport(self, ell: TransportLaw) -> Result<Self> {
        Self::new(self.gamma, ell, self.gamma_lower, self.gamma_upper)
    }

    pub fn gamma(&self, t: f64) -> f64 {
        match &self.gamma {
            GammaLaw::Constant(c) => *c,
            GammaLaw::Sinusoidal {
                mean,
                amplitude,
                frequency,
            } => mean + amplitude * (frequency * t).sin(),
            GammaLaw::Custom(f) => f(t),
        }
    }

    /// `l(t, ξ)`; `ξ` is in physical units.
    pub fn ell(&self, t: f64, xi: f64) -> f64 {
        match &self.ell {
            TransportLaw::Zero => 0.0,
            TransportLaw::Constant(c) => *c,
            TransportLaw::Oscillating { amplitude, frequency } => amplitude * (frequency * t).sin(),
            TransportLaw::Custom(f) => f(t, xi),
        }
    }

    pub fn gamma_lower(&self) -> f64 {
        self.gamma_lower
    }

    pub fn gamma_upper(&self) -> f64 {
        self.gamma_upper
    }

    /// `sup |l|` over the validation grid.
    pub fn ell_bound(&self) -> f64 {
        self.ell_bound
    }

    pub fn has_transport(&self) -> bool {
        !matches!(self.ell, TransportLaw::Zero)
    }

    pub fn has_constant_gamma(&self) -> bool {
        matches!(self.gamma, GammaLaw::Constant(_))
    }

    /// True when neither `γ` nor `l` depends on time.
    pub fn is_autonomous(&self) -> bool {
        self.has_constant_gamma() && matches!(self.ell, TransportLaw::Zero | TransportLaw::Constant(_))
    }
}

/// `γ(s, t) = ∫_s^t γ(r) dr`.
///
/// Constant profiles are integrated in closed form; all others by adaptive
/// Gauss–Kronrod with absolute tolerance `1e-10 · (t − s) · gamma_upper`.
pub fn gamma_integral(profile: &TimeProfile, s: f64, t: f64) -> Result<f64> {
    if s > t {
        return Err(Error::Contract(format!(
            "gamma_integral needs s ≤ t, got s = {s}, t = {t}"
        )));
    }
    if s == t {
        return Ok(0.0);
    }
    if let GammaLaw::Constant(c) = profile.gamma {
        return Ok(c * (t - s));
    }
    let tol = 1e-10 * (t - s) * profile.gamma_upper;
    integrate_adaptive(&|r| profile.gamma(r), s, t, tol)
}
