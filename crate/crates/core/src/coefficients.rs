//! Reaction and noise coefficients, their Nemytskii lifts, and presets.
//!
//! Pointwise coefficients act on grid values:
//! `B_1(t,x,y)(ξ) = b_1(t, ξ, x(ξ), y(ξ))`,
//! `[F_1(t,x)h](ξ) = f_1(t, ξ, x(ξ)) h(ξ)`, and the jump amplitude field
//! `G_1(t,x,z)(ξ) = g_1(t, ξ, x(ξ), z)` (likewise for the fast channel).
//! A coefficient stored as `None` is identically zero and costs nothing.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::noise::LevyMeasureSpec;
use crate::spectral::{FieldVector, SpectralBasis};
use crate::{Error, Result};

/// `(t, ξ, u, v) → ℝ`; also used for `g_1(t, ξ, u, z)`.
pub type Fn4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, ξ, u) → ℝ`
pub type Fn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `(t, ξ, u, v, z) → ℝ`
pub type Fn5 = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Slow (`ν_1`, `g_1`) or fast (`ν_2/ε`, `g_2`) jump channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpChannel {
    Slow,
    Fast,
}

/// One constant per coefficient.
///
/// For the jump coefficients the constant is per unit mark: the checks use
/// `|g(σ,z) − g(σ',z)| ≤ L_g |σ − σ'| max(1, |z|)` and
/// `|g(σ,z)| ≤ M_g (1 + |σ|) max(1, |z|)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoefficientConstants {
    pub b1: f64,
    pub b2: f64,
    pub f1: f64,
    pub f2: f64,
    pub g1: f64,
    pub g2: f64,
}

/// Time dependence class of a preset.
#[derive(Debug, Clone, PartialEq)]
pub enum Periodicity {
    Constant,
    Periodic(f64),
    AlmostPeriodic(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetFamily {
    pub name: String,
    pub parameters: BTreeMap<String, f64>,
    pub periodicity: Periodicity,
}

/// All reaction and noise coefficients of the slow-fast system.
#[derive(Clone)]
pub struct CoefficientSet {
    pub b1: Option<Fn4>,
    pub b2: Option<Fn4>,
    pub f1: Option<Fn3>,
    pub f2: Option<Fn4>,
    pub g1: Option<Fn4>,
    pub g2: Option<Fn5>,
    /// Dissipativity shift `α` of the fast operator.
    pub alpha: f64,
    pub lipschitz: CoefficientConstants,
    pub growth: CoefficientConstants,
    pub family: PresetFamily,
    /// `b_2` ignores `t` and the fast variable and `b_1` is affine in the
    /// fast variable. With a time-constant fast operator this makes the
    /// averaged drift available in closed form.
    pub affine_mean_field: bool,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("family", &self.family)
            .field("alpha", &self.alpha)
            .field("lipschitz", &self.lipschitz)
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

fn nonfinite(t: f64, what: &str) -> Error {
    Error::numerical(t, format!("{what} produced a non-finite value"))
}

fn checked(v: FieldVector, t: f64, what: &str) -> Result<FieldVector> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(nonfinite(t, what))
    }
}

impl CoefficientSet {
    /// All coefficients zero.
    pub fn zero(alpha: f64) -> Self {
        Self {
            b1: None,
            b2: None,
            f1: None,
            f2: None,
            g1: None,
            g2: None,
            alpha,
            lipschitz: CoefficientConstants::default(),
            growth: CoefficientConstants::default(),
            family: PresetFamily {
                name: "custom".into(),
                parameters: BTreeMap::new(),
                periodicity: Periodicity::Constant,
            },
            affine_mean_field: false,
        }
    }

    // Grid-level evaluations. `u` and `v` are physical grid values.

    pub(crate) fn b1_grid(&self, basis: &SpectralBasis, t: f64, u: &[f64], v: &[f64]) -> Result<FieldVector> {
        match &self.b1 {
            None => Ok(basis.zeros()),
            Some(b) => checked(basis.project(|j, xi| b(t, xi, u[j], v[j])), t, "b1"),
        }
    }

    pub(crate) fn b2_grid(&self, basis: &SpectralBasis, t: f64, u: &[f64], v: &[f64]) -> Result<FieldVector> {
        match &self.b2 {
            None => Ok(basis.zeros()),
            Some(b) => checked(basis.project(|j, xi| b(t, xi, u[j], v[j])), t, "b2"),
        }
    }

    pub(crate) fn f1_grid(&self, basis: &SpectralBasis, t: f64, u: &[f64], h: &[f64]) -> Result<FieldVector> {
        match &self.f1 {
            None => Ok(basis.zeros()),
            Some(f) => checked(basis.project(|j, xi| f(t, xi, u[j]) * h[j]), t, "f1"),
        }
    }

    pub(crate) fn f2_grid(
        &self,
        basis: &SpectralBasis,
        t: f64,
        u: &[f64],
        v: &[f64],
        h: &[f64],
    ) -> Result<FieldVector> {
        match &self.f2 {
            None => Ok(basis.zeros()),
            Some(f) => checked(basis.project(|j, xi| f(t, xi, u[j], v[j]) * h[j]), t, "f2"),
        }
    }

    pub(crate) fn has_jump_coefficient(&self, channel: JumpChannel) -> bool {
        match channel {
            JumpChannel::Slow => self.g1.is_some(),
            JumpChannel::Fast => self.g2.is_some(),
        }
    }

    pub(crate) fn g_grid(
        &self,
        basis: &SpectralBasis,
        channel: JumpChannel,
        t: f64,
        u: &[f64],
        v: &[f64],
        z: f64,
    ) -> Result<FieldVector> {
        let out = match channel {
            JumpChannel::Slow => match &self.g1 {
                None => return Ok(basis.zeros()),
                Some(g) => basis.project(|j, xi| g(t, xi, u[j], z)),
            },
            JumpChannel::Fast => match &self.g2 {
                None => return Ok(basis.zeros()),
                Some(g) => basis.project(|j, xi| g(t, xi, u[j], v[j], z)),
            },
        };
        checked(out, t, "jump coefficient")
    }

    /// `∫_Z G(t, u, v, z) ν(dz)` on grid values.
    pub(crate) fn compensator_grid(
        &self,
        basis: &SpectralBasis,
        levy: &LevyMeasureSpec,
        channel: JumpChannel,
        t: f64,
        u: &[f64],
        v: &[f64],
    ) -> Result<FieldVector> {
        let mut acc = basis.zeros();
        if !self.has_jump_coefficient(channel) {
            return Ok(acc);
        }
        for (z, mass) in levy.quadrature() {
            let g = self.g_grid(basis, channel, t, u, v, z)?;
            acc.axpy(mass, &g);
        }
        Ok(acc)
    }

    /// Runs the statistical Lipschitz and linear-growth spot checks on
    /// `samples` random argument pairs from the box `|σ_i| ≤ radius`,
    /// `t ∈ [0, 50]`, `ξ ∈ [0, L]`, with marks drawn from `marks`.
    pub fn check_constants(
        &self,
        seed: u64,
        samples: usize,
        radius: f64,
        domain_length: f64,
        marks: &[f64],
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let marks: Vec<f64> = if marks.is_empty() {
            vec![0.0, 1.0, -1.0]
        } else {
            marks.to_vec()
        };
        let lip = &self.lipschitz;
        let grow = &self.growth;
        let check = |name: &str, ok: bool, detail: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("lipschitz.{name}"), detail))
            }
        };
        for _ in 0..samples {
            let t = rng.random_range(0.0..50.0);
            let xi = rng.random_range(0.0..domain_length);
            let s: [f64; 2] = [rng.random_range(-radius..radius), rng.random_range(-radius..radius)];
            let p: [f64; 2] = [rng.random_range(-radius..radius), rng.random_range(-radius..radius)];
            let z = marks[rng.random_range(0..marks.len())];
            let zs = z.abs().max(1.0);
            let d2 = ((s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)).sqrt();
            let d1 = (s[0] - p[0]).abs();
            let n2 = (s[0] * s[0] + s[1] * s[1]).sqrt();
            let n1 = s[0].abs();
            let tol = 1e-12;
            if let Some(b) = &self.b1 {
                let (a, c) = (b(t, xi, s[0], s[1]), b(t, xi, p[0], p[1]));
                check(
                    "b1",
                    (a - c).abs() <= 1.05 * lip.b1 * d2 + tol,
                    format!("difference {} exceeds L·|Δσ| = {}", (a - c).abs(), lip.b1 * d2),
                )?;
                check(
                    "b1",
                    a.abs() <= 1.05 * grow.b1 * (1.0 + n2) + tol,
                    format!("|b1| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.b1"))?;
            }
            if let Some(b) = &self.b2 {
                let (a, c) = (b(t, xi, s[0], s[1]), b(t, xi, p[0], p[1]));
                check(
                    "b2",
                    (a - c).abs() <= 1.05 * lip.b2 * d2 + tol,
                    format!("difference {} exceeds L·|Δσ| = {}", (a - c).abs(), lip.b2 * d2),
                )?;
                check(
                    "b2",
                    a.abs() <= 1.05 * grow.b2 * (1.0 + n2) + tol,
                    format!("|b2| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.b2"))?;
            }
            if let Some(f) = &self.f1 {
                let (a, c) = (f(t, xi, s[0]), f(t, xi, p[0]));
                check(
                    "f1",
                    (a - c).abs() <= 1.05 * lip.f1 * d1 + tol,
                    format!("difference {} exceeds L·|Δσ|", (a - c).abs()),
                )?;
                check(
                    "f1",
                    a.abs() <= 1.05 * grow.f1 * (1.0 + n1) + tol,
                    format!("|f1| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.f1"))?;
            }
            if let Some(f) = &self.f2 {
                let (a, c) = (f(t, xi, s[0], s[1]), f(t, xi, p[0], p[1]));
                check(
                    "f2",
                    (a - c).abs() <= 1.05 * lip.f2 * d2 + tol,
                    format!("difference {} exceeds L·|Δσ|", (a - c).abs()),
                )?;
                check(
                    "f2",
                    a.abs() <= 1.05 * grow.f2 * (1.0 + n2) + tol,
                    format!("|f2| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.f2"))?;
            }
            if let Some(g) = &self.g1 {
                let (a, c) = (g(t, xi, s[0], z), g(t, xi, p[0], z));
                check(
                    "g1",
                    (a - c).abs() <= 1.05 * lip.g1 * d1 * zs + tol,
                    format!("difference {} exceeds L·|Δσ|", (a - c).abs()),
                )?;
                check(
                    "g1",
                    a.abs() <= 1.05 * grow.g1 * (1.0 + n1) * zs + tol,
                    format!("|g1| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.g1"))?;
            }
            if let Some(g) = &self.g2 {
                let (a, c) = (g(t, xi, s[0], s[1], z), g(t, xi, p[0], p[1], z));
                check(
                    "g2",
                    (a - c).abs() <= 1.05 * lip.g2 * d2 * zs + tol,
                    format!("difference {} exceeds L·|Δσ|", (a - c).abs()),
                )?;
                check(
                    "g2",
                    a.abs() <= 1.05 * grow.g2 * (1.0 + n2) * zs + tol,
                    format!("|g2| = {} exceeds growth bound", a.abs()),
                )
                .map_err(|e| relabel(e, "growth.g2"))?;
            }
        }
        Ok(())
    }
}

fn relabel(e: Error, key: &str) -> Error {
    match e {
        Error::Config { message, .. } => Error::config(key, message),
        other => other,
    }
}

/// `B_1(t, u, v)` as a field.
pub fn nemytskii_b1(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
) -> Result<FieldVector> {
    cset.b1_grid(basis, t, &basis.to_physical(u), &basis.to_physical(v))
}

/// `B_2(t, u, v)` as a field.
pub fn nemytskii_b2(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
) -> Result<FieldVector> {
    cset.b2_grid(basis, t, &basis.to_physical(u), &basis.to_physical(v))
}

/// `F_1(t, u) h`
pub fn nemytskii_f1(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    t: f64,
    u: &FieldVector,
    h: &FieldVector,
) -> Result<FieldVector> {
    cset.f1_grid(basis, t, &basis.to_physical(u), &basis.to_physical(h))
}

/// `F_2(t, u, v) h`
pub fn nemytskii_f2(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
    h: &FieldVector,
) -> Result<FieldVector> {
    cset.f2_grid(
        basis,
        t,
        &basis.to_physical(u),
        &basis.to_physical(v),
        &basis.to_physical(h),
    )
}

/// Jump amplitude field `G(t, u, v, z)` of the given channel (`v` is
/// ignored on the slow channel).
pub fn jump_field(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    channel: JumpChannel,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
    z: f64,
) -> Result<FieldVector> {
    cset.g_grid(basis, channel, t, &basis.to_physical(u), &basis.to_physical(v), z)
}

/// Compensator integral `∫_Z G(t, u, v, z) ν(dz)`, summed exactly over the
/// discrete marks or the density's quadrature nodes.
pub fn levy_drift_correction(
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    levy: &LevyMeasureSpec,
    channel: JumpChannel,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
) -> Result<FieldVector> {
    cset.compensator_grid(basis, levy, channel, t, &basis.to_physical(u), &basis.to_physical(v))
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 3] = ["linear-ou", "bistable", "almost-periodic-demo"];

struct Params<'a> {
    given: &'a BTreeMap<String, f64>,
    resolved: BTreeMap<String, f64>,
}

impl<'a> Params<'a> {
    fn new(given: &'a BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<Self> {
        for (k, v) in given {
            if !allowed.iter().any(|(name, _)| name == k) {
                let names: Vec<&str> = allowed.iter().map(|(n, _)| *n).collect();
                return Err(Error::config(
                    format!("params.{k}"),
                    format!("unknown parameter; expected one of {}", names.join(", ")),
                ));
            }
            if !v.is_finite() {
                return Err(Error::config(format!("params.{k}"), "must be finite"));
            }
        }
        let resolved = allowed
            .iter()
            .map(|(name, default)| (name.to_string(), given.get(*name).copied().unwrap_or(*default)))
            .collect();
        Ok(Self { given, resolved })
    }

    fn get(&self, name: &str) -> f64 {
        self.resolved[name]
    }

    fn finish(self) -> BTreeMap<String, f64> {
        let _ = self.given;
        self.resolved
    }
}

/// Builds a named coefficient family.
///
/// * `linear-ou`: `b1 = feedback·v + self_drift·u`,
///   `b2 = coupling·(1 + modulation·sin(2πt/period))·u`, `f1 = sigma1`,
///   `f2 = sigma2`, `g1 = c1·z`, `g2 = c2·z`. The averaged drift is known in
///   closed form when `modulation = 0`.
/// * `bistable`: `b1 = v + strength·tanh(sharpness·u)`,
///   `b2 = coupling·u − fast_nonlinearity·sin(v)`, additive noise.
/// * `almost-periodic-demo`: `b1 = v·(1 + ½ sin(√3 t))`,
///   `b2 = amplitude·(sin(t)·u − sin(√2 t)·v/2)`, additive noise.
///
/// Every family takes `alpha`, the fast dissipativity shift.
pub fn preset(name: &str, parameters: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    match name {
        "linear-ou" => linear_ou(parameters),
        "bistable" => bistable(parameters),
        "almost-periodic-demo" => almost_periodic_demo(parameters),
        other => Err(Error::config(
            "preset",
            format!("unknown preset `{other}`; expected one of {}", PRESET_NAMES.join(", ")),
        )),
    }
}

fn additive_noise(cset: &mut CoefficientSet, sigma1: f64, sigma2: f64, c1: f64, c2: f64) {
    if sigma1 != 0.0 {
        cset.f1 = Some(Arc::new(move |_, _, _| sigma1));
    }
    if sigma2 != 0.0 {
        cset.f2 = Some(Arc::new(move |_, _, _, _| sigma2));
    }
    if c1 != 0.0 {
        cset.g1 = Some(Arc::new(move |_, _, _, z| c1 * z));
    }
    if c2 != 0.0 {
        cset.g2 = Some(Arc::new(move |_, _, _, _, z| c2 * z));
    }
    cset.growth.f1 = sigma1.abs();
    cset.growth.f2 = sigma2.abs();
    cset.growth.g1 = c1.abs();
    cset.growth.g2 = c2.abs();
}

const NOISE_DEFAULTS: [(&str, f64); 4] = [("sigma1", 0.1), ("sigma2", 0.2), ("c1", 0.0), ("c2", 0.1)];

fn with_noise_defaults(own: &[(&'static str, f64)]) -> Vec<(&'static str, f64)> {
    own.iter().copied().chain(NOISE_DEFAULTS).collect()
}

fn linear_ou(given: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    let allowed = with_noise_defaults(&[
        ("alpha", 1.0),
        ("feedback", 1.0),
        ("self_drift", 0.0),
        ("coupling", 1.0),
        ("modulation", 0.0),
        ("period", 2.0 * PI),
    ]);
    let p = Params::new(given, &allowed)?;
    let (feedback, self_drift) = (p.get("feedback"), p.get("self_drift"));
    let (coupling, modulation, period) = (p.get("coupling"), p.get("modulation"), p.get("period"));
    if !(period > 0.0) {
        return Err(Error::config("params.period", "must be positive"));
    }
    let mut c = CoefficientSet::zero(p.get("alpha"));
    if feedback != 0.0 || self_drift != 0.0 {
        c.b1 = Some(Arc::new(move |_, _, u, v| feedback * v + self_drift * u));
    }
    if coupling != 0.0 {
        c.b2 = Some(if modulation == 0.0 {
            Arc::new(move |_, _, u, _| coupling * u)
        } else {
            let w = 2.0 * PI / period;
            Arc::new(move |t: f64, _, u, _| coupling * (1.0 + modulation * (w * t).sin()) * u)
        });
    }
    let l_b1 = feedback.hypot(self_drift);
    let l_b2 = coupling.abs() * (1.0 + modulation.abs());
    c.lipschitz.b1 = l_b1;
    c.lipschitz.b2 = l_b2;
    c.growth.b1 = l_b1;
    c.growth.b2 = l_b2;
    additive_noise(&mut c, p.get("sigma1"), p.get("sigma2"), p.get("c1"), p.get("c2"));
    c.affine_mean_field = modulation == 0.0;
    c.family = PresetFamily {
        name: "linear-ou".into(),
        periodicity: if modulation == 0.0 {
            Periodicity::Constant
        } else {
            Periodicity::Periodic(period)
        },
        parameters: p.finish(),
    };
    Ok(c)
}

fn bistable(given: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    let allowed = with_noise_defaults(&[
        ("alpha", 1.5),
        ("strength", 0.5),
        ("sharpness", 2.0),
        ("coupling", 1.0),
        ("fast_nonlinearity", 0.5),
    ]);
    let p = Params::new(given, &allowed)?;
    let (a, k) = (p.get("strength"), p.get("sharpness"));
    let (coupling, nl) = (p.get("coupling"), p.get("fast_nonlinearity"));
    let mut c = CoefficientSet::zero(p.get("alpha"));
    c.b1 = Some(Arc::new(move |_, _, u: f64, v| v + a * (k * u).tanh()));
    c.b2 = Some(Arc::new(move |_, _, u, v: f64| coupling * u - nl * v.sin()));
    c.lipschitz.b1 = (a * k).hypot(1.0);
    c.lipschitz.b2 = coupling.hypot(nl);
    c.growth.b1 = a.abs().max(1.0);
    c.growth.b2 = coupling.abs().max(nl.abs());
    additive_noise(&mut c, p.get("sigma1"), p.get("sigma2"), p.get("c1"), p.get("c2"));
    c.family = PresetFamily {
        name: "bistable".into(),
        periodicity: Periodicity::Constant,
        parameters: p.finish(),
    };
    Ok(c)
}

fn almost_periodic_demo(given: &BTreeMap<String, f64>) -> Result<CoefficientSet> {
    let allowed = with_noise_defaults(&[("alpha", 2.0), ("amplitude", 1.0)]);
    let p = Params::new(given, &allowed)?;
    let amp = p.get("amplitude");
    let sqrt3 = 3f64.sqrt();
    let mut c = CoefficientSet::zero(p.get("alpha"));
    c.b1 = Some(Arc::new(move |t: f64, _, _, v| v * (1.0 + 0.5 * (sqrt3 * t).sin())));
    c.b2 = Some(Arc::new(move |t: f64, _, u, v| {
        amp * (t.sin() * u - (SQRT_2 * t).sin() * v / 2.0)
    }));
    c.lipschitz.b1 = 1.5;
    c.growth.b1 = 1.5;
    c.lipschitz.b2 = amp.abs() * 1.25f64.sqrt();
    c.growth.b2 = c.lipschitz.b2;
    additive_noise(&mut c, p.get("sigma1"), p.get("sigma2"), p.get("c1"), p.get("c2"));
    c.family = PresetFamily {
        name: "almost-periodic-demo".into(),
        periodicity: Periodicity::AlmostPeriodic(vec![1.0, SQRT_2, sqrt3]),
        parameters: p.finish(),
    };
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn basis() -> SpectralBasis {
        SpectralBasis::with_default_grid(PI, 8).unwrap()
    }

    #[test]
    fn b1_identity_in_v() {
        let b = basis();
        let mut c = CoefficientSet::zero(1.0);
        c.b1 = Some(Arc::new(|_, _, _, v| v));
        let u = FieldVector::from_coeffs(vec![0.3, -1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.1]);
        let v = FieldVector::mode(8, 1, 2.0);
        let out = nemytskii_b1(&c, &b, 0.0, &u, &v).unwrap();
        assert!(out.distance(&v) < 1e-13);
    }

    #[test]
    fn zero_coefficients_give_zero_fields() {
        let b = basis();
        let c = CoefficientSet::zero(1.0);
        let u = FieldVector::mode(8, 2, 1.0);
        assert_eq!(nemytskii_b1(&c, &b, 0.0, &u, &u).unwrap().norm(), 0.0);
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 1.0)]).unwrap();
        assert_eq!(
            levy_drift_correction(&c, &b, &levy, JumpChannel::Fast, 0.0, &u, &u)
                .unwrap()
                .norm(),
            0.0
        );
    }

    #[test]
    fn product_nonlinearity_first_coefficient() {
        let b = basis();
        let mut c = CoefficientSet::zero(1.0);
        c.b1 = Some(Arc::new(|_, _, u, v| u * v));
        let e1 = FieldVector::mode(8, 1, 1.0);
        let out = nemytskii_b1(&c, &b, 0.0, &e1, &e1).unwrap();
        // Oracle: 512-point Gauss–Legendre quadrature of e_1 · (2/π) sin².
        let (x, w) = crate::spectral::quadrature::gauss_legendre(512, 0.0, PI);
        let oracle: f64 = x
            .iter()
            .zip(&w)
            .map(|(xi, w)| w * (2.0 / PI).sqrt() * xi.sin() * (2.0 / PI) * xi.sin().powi(2))
            .sum();
        assert!((oracle - (2.0 / PI) * (2.0 / PI).sqrt() * 4.0 / 3.0).abs() < 1e-13);
        assert!((out[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn symmetric_marks_cancel_in_compensator() {
        let b = basis();
        let mut c = CoefficientSet::zero(1.0);
        c.g2 = Some(Arc::new(|_, _, _, v, z| z * v));
        let v = FieldVector::mode(8, 1, 1.0);
        let u = b.zeros();
        let sym = LevyMeasureSpec::discrete(vec![(1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let out = levy_drift_correction(&c, &b, &sym, JumpChannel::Fast, 0.0, &u, &v).unwrap();
        assert!(out.norm() < 1e-14);

        c.g2 = Some(Arc::new(|_, _, _, v, z| 0.3 * z * v));
        let single = LevyMeasureSpec::discrete(vec![(1.0, 2.0)]).unwrap();
        let out = levy_drift_correction(&c, &b, &single, JumpChannel::Fast, 0.0, &u, &v).unwrap();
        assert!(out.distance(&FieldVector::mode(8, 1, 0.6)) < 1e-13);
    }

    #[test]
    fn nan_is_reported_as_numerical_failure() {
        let b = basis();
        let mut c = CoefficientSet::zero(1.0);
        c.b1 = Some(Arc::new(|_, _, _, _| f64::NAN));
        let u = b.zeros();
        assert!(matches!(nemytskii_b1(&c, &b, 3.5, &u, &u), Err(Error::Numerical { time, .. }) if time == 3.5));
    }

    #[test]
    fn linear_ou_preset_constants() {
        let c = preset("linear-ou", &BTreeMap::new()).unwrap();
        assert_eq!(c.lipschitz.b2, 1.0);
        assert!(c.affine_mean_field);
        let quiet = preset("linear-ou", &params(&[("sigma2", 0.0), ("c2", 0.0)])).unwrap();
        assert!(quiet.f2.is_none() && quiet.g2.is_none());
        assert!(preset("linear-ou", &params(&[("bogus", 1.0)])).is_err());
        assert!(matches!(preset("nope", &BTreeMap::new()), Err(Error::Config { key, .. }) if key == "preset"));
    }

    #[test]
    fn almost_periodic_demo_has_no_2pi_period() {
        let c = preset("almost-periodic-demo", &BTreeMap::new()).unwrap();
        let b2 = c.b2.as_ref().unwrap();
        let d = (b2(2.0 * PI, 0.5, 1.0, 1.0) - b2(0.0, 0.5, 1.0, 1.0)).abs();
        assert!(d > 1e-3, "{d}");
    }

    #[test]
    fn periodic_modulation_repeats() {
        let c = preset("linear-ou", &params(&[("modulation", 0.5), ("period", 3.0)])).unwrap();
        assert_eq!(c.family.periodicity, Periodicity::Periodic(3.0));
        let b2 = c.b2.as_ref().unwrap();
        for i in 0..50 {
            let t = 0.37 * i as f64;
            assert!((b2(t + 3.0, 0.1, 0.8, 0.0) - b2(t, 0.1, 0.8, 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn presets_pass_their_declared_constants() {
        for name in PRESET_NAMES {
            let c = preset(name, &BTreeMap::new()).unwrap();
            c.check_constants(7, 1000, 5.0, PI, &[1.0, -1.0, 0.5]).unwrap();
        }
    }

    #[test]
    fn understated_constant_is_caught() {
        let mut c = preset("bistable", &BTreeMap::new()).unwrap();
        c.lipschitz.b1 = 0.1;
        assert!(c.check_constants(7, 1000, 5.0, PI, &[]).is_err());
    }

    #[test]
    fn cubic_nonlinearity_is_grid_independent() {
        let coarse = SpectralBasis::with_default_grid(PI, 8).unwrap();
        let fine = SpectralBasis::new(PI, 8, 4 * coarse.quadrature_points()).unwrap();
        let mut c = CoefficientSet::zero(1.0);
        c.b1 = Some(Arc::new(|_, _, u: f64, v: f64| u * u * u - 0.5 * u * v + v * v + 2.0));
        let u = FieldVector::from_coeffs((1..=8).map(|k| 1.0 / k as f64).collect());
        let v = FieldVector::from_coeffs((1..=8).map(|k| (k as f64).sin()).collect());
        let a = nemytskii_b1(&c, &coarse, 0.0, &u, &v).unwrap();
        let b = nemytskii_b1(&c, &fine, 0.0, &u, &v).unwrap();
        assert!(a.distance(&b) < 1e-10, "{}", a.distance(&b));
    }

    proptest! {
        #[test]
        fn nemytskii_lipschitz_and_growth_transfer(
            x in proptest::collection::vec(-2.0f64..2.0, 8),
            y in proptest::collection::vec(-2.0f64..2.0, 8),
            dx in proptest::collection::vec(-1.0f64..1.0, 8),
            dy in proptest::collection::vec(-1.0f64..1.0, 8),
            t in 0.0f64..20.0,
        ) {
            let b = basis();
            let c = preset("bistable", &BTreeMap::new()).unwrap();
            let x = FieldVector::from_coeffs(x);
            let y = FieldVector::from_coeffs(y);
            let x2 = &x + &FieldVector::from_coeffs(dx);
            let y2 = &y + &FieldVector::from_coeffs(dy);
            let a = nemytskii_b1(&c, &b, t, &x, &y).unwrap();
            let a2 = nemytskii_b1(&c, &b, t, &x2, &y2).unwrap();
            prop_assert!(a.distance(&a2) <= 1.05 * c.lipschitz.b1 * (x.distance(&x2) + y.distance(&y2)) + 1e-12);
            // Constant terms pick up the measure of the domain: ‖1‖ = sqrt(L).
            let vol = PI.sqrt().max(1.0);
            prop_assert!(a.norm() <= 1.05 * c.growth.b1 * (vol + x.norm() + y.norm()));
        }
    }
}
