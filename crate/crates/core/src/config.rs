//! Strict TOML run configuration.
//!
//! Unknown keys are rejected. Every constraint of the owning module is
//! checked while parsing and the first violation is reported with its
//! dotted key path.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::averaging::{AveragedDrift, AveragingOptions};
use crate::coefficients::preset;
use crate::harness::{ConvergenceSetup, VerifyOptions};
use crate::integrator::{integer_ratio, SimConfig, SlowFastSystem};
use crate::noise::{LevyMeasureSpec, NoiseSpec};
use crate::spectral::{FieldVector, SpectralBasis, TimeProfile, TransportLaw};
use crate::{Error, Result};

/// Every accepted key with its constraint, for `--help`.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("seed", "u64 master seed, default 0 (overridden by SLOWFAST_SEED, then --seed)"),
    ("basis.length", "domain length L > 0, default π"),
    ("basis.modes", "number of sine modes N ≥ 1 (required)"),
    ("basis.quadrature_points", "Gauss-Legendre points ≥ 2N, default 4N + 32"),
    ("profiles.{slow,fast}.gamma.law", "\"constant\" (value > 0) or \"sinusoidal\" (mean, amplitude, frequency; mean > |amplitude|); default constant 1"),
    ("profiles.{slow,fast}.ell.law", "\"zero\", \"constant\" (value) or \"oscillating\" (amplitude, frequency); default zero"),
    ("coefficients.preset", "one of linear-ou, bistable, almost-periodic-demo (required)"),
    ("coefficients.alpha", "fast dissipativity shift α ≥ 0; same as params.alpha"),
    ("coefficients.params.<name>", "finite preset parameter; unknown names are rejected"),
    ("noise.{slow,fast}.eigenvalues", "N nonnegative λ_k; alternative to scale/decay"),
    ("noise.{slow,fast}.scale", "λ_k = scale·k^(−decay), scale ≥ 0, default 1"),
    ("noise.{slow,fast}.decay", "decay exponent ≥ 0, default 2"),
    ("noise.{slow,fast}.rho", "trace exponent ρ > 2 or inf, default 4"),
    ("noise.{slow,fast}.beta", "exponent β > 0, default 1"),
    ("levy.{slow,fast}.marks", "list of [z, mass] point masses, mass ≥ 0; default no jumps"),
    ("levy.{slow,fast}.density.law", "\"uniform\" (lower < upper) or \"gaussian\" (mean, sd > 0, cut at ±6 sd)"),
    ("levy.{slow,fast}.density.intensity", "total mass ≥ 0, default 1"),
    ("levy.{slow,fast}.density.nodes", "quadrature nodes ≥ 1, default 64"),
    ("simulation.epsilons", "positive scale separations, default [0.5, 0.1, 0.02]"),
    ("simulation.t_end", "horizon T > 0 with T/dt_slow integer, default 1"),
    ("simulation.dt_slow", "slow step > 0, default 0.01"),
    ("simulation.dt_fast", "fast step ≤ dt_slow with dt_slow/dt_fast integer and dt_fast ≤ 0.2ε/(γ₂⁺α_N + α); default chosen per ε"),
    ("simulation.theta", "regularity index θ ∈ [0, 1), default 0"),
    ("simulation.initial_u", "at most N slow coefficients, zero padded, default e₁"),
    ("simulation.initial_v", "at most N fast coefficients, zero padded, default 0"),
    ("averaging.drift", "\"auto\" (closed form when available), \"estimated\" or \"exact\"; default auto"),
    ("averaging.relax_multiple", "t_avg = multiple·t_relax when t_avg is absent, default 20"),
    ("averaging.t_avg", "averaging window ≥ 10·t_relax"),
    ("averaging.t_burn", "burn-in ≥ 0, default t_relax"),
    ("averaging.dt", "frozen-fast step ≤ 0.2/(γ₂⁺α_N + α)"),
    ("averaging.warm_start", "reuse the previous end state without burn-in, default true"),
    ("averaging.batches", "batch-means windows ≥ 8, default 16"),
    ("averaging.x", "slow state for `average`, zero padded, default initial_u"),
    ("averaging.t0", "start time of the averaging window ≥ 0, default 0"),
    ("khasminskii.kappa", "block constant κ ∈ (0, 1), default 0.5"),
    ("harness.eta", "exceedance level η > 0, default 0.1"),
    ("harness.replicas", "Monte Carlo replicas M ≥ 1, default 200"),
    ("harness.lags", "increment lags, positive multiples of dt_slow ≤ T; default dt_slow·2^j up to T/4"),
    ("harness.samples", "draws per sampler check ≥ 2, default 100000"),
    ("harness.record_wall_time", "write wall times into report CSVs, default false"),
    ("output.dir", "output directory, default \"out\""),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    basis: RawBasis,
    #[serde(default)]
    profiles: RawPair<RawProfile>,
    coefficients: RawCoefficients,
    #[serde(default)]
    noise: RawPair<RawNoise>,
    #[serde(default)]
    levy: RawPair<RawLevy>,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    averaging: RawAveraging,
    #[serde(default)]
    khasminskii: RawKhasminskii,
    #[serde(default)]
    harness: RawHarness,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBasis {
    #[serde(default = "default_length")]
    length: f64,
    modes: usize,
    quadrature_points: Option<usize>,
}

fn default_length() -> f64 {
    PI
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair<T: Default> {
    #[serde(default)]
    slow: T,
    #[serde(default)]
    fast: T,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    gamma: Option<RawGamma>,
    ell: Option<RawEll>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
enum RawGamma {
    Constant { value: f64 },
    Sinusoidal { mean: f64, amplitude: f64, frequency: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
enum RawEll {
    Zero,
    Constant { value: f64 },
    Oscillating { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficients {
    preset: String,
    alpha: Option<f64>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    eigenvalues: Option<Vec<f64>>,
    scale: Option<f64>,
    decay: Option<f64>,
    rho: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevy {
    marks: Option<Vec<[f64; 2]>>,
    density: Option<RawDensity>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
enum RawDensity {
    Uniform {
        lower: f64,
        upper: f64,
        intensity: Option<f64>,
        nodes: Option<usize>,
    },
    Gaussian {
        mean: f64,
        sd: f64,
        intensity: Option<f64>,
        nodes: Option<usize>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    #[serde(default = "default_epsilons")]
    epsilons: Vec<f64>,
    #[serde(default = "one")]
    t_end: f64,
    #[serde(default = "default_dt_slow")]
    dt_slow: f64,
    dt_fast: Option<f64>,
    #[serde(default)]
    theta: f64,
    initial_u: Option<Vec<f64>>,
    #[serde(default)]
    initial_v: Vec<f64>,
}

impl Default for RawSimulation {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            t_end: 1.0,
            dt_slow: default_dt_slow(),
            dt_fast: None,
            theta: 0.0,
            initial_u: None,
            initial_v: Vec::new(),
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![0.5, 0.1, 0.02]
}

fn one() -> f64 {
    1.0
}

fn default_dt_slow() -> f64 {
    0.01
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftChoice {
    #[default]
    Auto,
    Estimated,
    Exact,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAveraging {
    #[serde(default)]
    drift: DriftChoice,
    relax_multiple: Option<f64>,
    t_avg: Option<f64>,
    t_burn: Option<f64>,
    dt: Option<f64>,
    warm_start: Option<bool>,
    batches: Option<usize>,
    x: Option<Vec<f64>>,
    #[serde(default)]
    t0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKhasminskii {
    #[serde(default = "half")]
    kappa: f64,
}

impl Default for RawKhasminskii {
    fn default() -> Self {
        Self { kappa: 0.5 }
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHarness {
    #[serde(default = "default_eta")]
    eta: f64,
    #[serde(default = "default_replicas")]
    replicas: usize,
    #[serde(default)]
    lags: Vec<f64>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    record_wall_time: bool,
}

impl Default for RawHarness {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            replicas: default_replicas(),
            lags: Vec::new(),
            samples: default_samples(),
            record_wall_time: false,
        }
    }
}

fn default_eta() -> f64 {
    0.1
}

fn default_replicas() -> usize {
    200
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default = "default_dir")]
    dir: PathBuf,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub system: SlowFastSystem,
    pub epsilons: Vec<f64>,
    pub t_end: f64,
    pub dt_slow: f64,
    pub dt_fast: Option<f64>,
    pub theta: f64,
    pub initial_u: FieldVector,
    pub initial_v: FieldVector,
    pub drift_choice: DriftChoice,
    pub averaging: AveragingOptions,
    pub average_x: FieldVector,
    pub average_t0: f64,
    pub kappa: f64,
    pub eta: f64,
    pub replicas: usize,
    pub lags: Vec<f64>,
    pub samples: usize,
    pub record_wall_time: bool,
    pub output_dir: PathBuf,
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text)
}

fn padded(key: &str, values: &[f64], n: usize) -> Result<FieldVector> {
    if values.len() > n {
        return Err(Error::config(
            key,
            format!("has {} entries but the basis has {n} modes", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "entries must be finite"));
    }
    let mut c = values.to_vec();
    c.resize(n, 0.0);
    Ok(FieldVector::from_coeffs(c))
}

fn build_profile(raw: &RawProfile, key: &str) -> Result<TimeProfile> {
    let profile = match raw.gamma {
        None => TimeProfile::constant(1.0),
        Some(RawGamma::Constant { value }) => TimeProfile::constant(value),
        Some(RawGamma::Sinusoidal {
            mean,
            amplitude,
            frequency,
        }) => {
            if !(frequency.is_finite()) {
                return Err(Error::config(format!("{key}.gamma.frequency"), "must be finite"));
            }
            TimeProfile::sinusoidal(mean, amplitude, frequency)
        }
    }
    .map_err(|e| e.within(key))?;
    let ell = match raw.ell {
        None | Some(RawEll::Zero) => return Ok(profile),
        Some(RawEll::Constant { value }) => TransportLaw::Constant(value),
        Some(RawEll::Oscillating { amplitude, frequency }) => TransportLaw::Oscillating { amplitude, frequency },
    };
    profile.with_transport(ell).map_err(|e| e.within(key))
}

fn build_noise(raw: &RawNoise, n: usize, key: &str) -> Result<NoiseSpec> {
    let rho = raw.rho.unwrap_or(4.0);
    let beta = raw.beta.unwrap_or(1.0);
    let spec = match &raw.eigenvalues {
        Some(ev) => {
            if raw.scale.is_some() || raw.decay.is_some() {
                return Err(Error::config(
                    format!("{key}.eigenvalues"),
                    "give either eigenvalues or scale/decay",
                ));
            }
            if ev.len() != n {
                return Err(Error::config(
                    format!("{key}.eigenvalues"),
                    format!("has {} entries but the basis has {n} modes", ev.len()),
                ));
            }
            NoiseSpec::new(ev.clone(), rho, beta)
        }
        None => {
            let scale = raw.scale.unwrap_or(1.0);
            let decay = raw.decay.unwrap_or(2.0);
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::config(format!("{key}.scale"), "must be finite and nonnegative"));
            }
            if !(decay >= 0.0 && decay.is_finite()) {
                return Err(Error::config(format!("{key}.decay"), "must be finite and nonnegative"));
            }
            NoiseSpec::power_law(n, scale, decay, rho, beta)
        }
    };
    spec.map_err(|e| e.within(key))
}

fn build_levy(raw: &RawLevy, key: &str) -> Result<LevyMeasureSpec> {
    match (&raw.marks, &raw.density) {
        (Some(_), Some(_)) => Err(Error::config(key, "give either marks or density")),
        (None, None) => Ok(LevyMeasureSpec::none()),
        (Some(m), None) => {
            LevyMeasureSpec::discrete(m.iter().map(|[z, w]| (*z, *w)).collect()).map_err(|e| e.within(key))
        }
        (None, Some(d)) => {
            let key = format!("{key}.density");
            let (intensity, nodes) = match *d {
                RawDensity::Uniform { intensity, nodes, .. } | RawDensity::Gaussian { intensity, nodes, .. } => {
                    (intensity.unwrap_or(1.0), nodes.unwrap_or(64))
                }
            };
            if !(intensity >= 0.0 && intensity.is_finite()) {
                return Err(Error::config(
                    format!("{key}.intensity"),
                    "must be finite and nonnegative",
                ));
            }
            let spec = match *d {
                RawDensity::Uniform { lower, upper, .. } => {
                    let h = intensity / (upper - lower);
                    LevyMeasureSpec::density(Arc::new(move |_| h), lower, upper, nodes)
                }
                RawDensity::Gaussian { mean, sd, .. } => {
                    if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                        return Err(Error::config(format!("{key}.sd"), "needs finite mean and sd > 0"));
                    }
                    // Normalised to `intensity` on the truncated support.
                    let c = intensity / (SIX_SIGMA_MASS * sd * (2.0 * PI).sqrt());
                    LevyMeasureSpec::density(
                        Arc::new(move |z| c * (-0.5 * ((z - mean) / sd).powi(2)).exp()),
                        mean - 6.0 * sd,
                        mean + 6.0 * sd,
                        nodes,
                    )
                }
            };
            spec.map_err(|e| e.within(&key))
        }
    }
}

/// `erf(6/√2)`, the Gaussian mass within six standard deviations.
const SIX_SIGMA_MASS: f64 = 1.0 - 1.973_175_290_075_968_4e-9;

fn syntax_error(e: impl std::fmt::Display) -> Error {
    Error::config("(document)", e)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(syntax_error)?;
        let raw: RawConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "(document)".to_string() } else { path },
                e.into_inner(),
            )
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let n = raw.basis.modes;
        if n == 0 {
            return Err(Error::config("basis.modes", "must be at least 1"));
        }
        let q = raw
            .basis
            .quadrature_points
            .unwrap_or_else(|| SpectralBasis::default_quadrature_points(n));
        let basis = SpectralBasis::new(raw.basis.length, n, q).map_err(|e| match e {
            Error::Config { key, message } if key.is_empty() => Error::config("basis", message),
            Error::Config { key, message } => Error::config(format!("basis.{key}"), message),
            other => other,
        })?;

        let mut params = raw.coefficients.params.clone();
        if let Some(a) = raw.coefficients.alpha {
            if params.contains_key("alpha") {
                return Err(Error::config(
                    "coefficients.alpha",
                    "given both as coefficients.alpha and params.alpha",
                ));
            }
            params.insert("alpha".into(), a);
        }
        let coefficients = preset(&raw.coefficients.preset, &params).map_err(|e| e.within("coefficients"))?;

        let system = SlowFastSystem::new(
            basis,
            build_profile(&raw.profiles.slow, "profiles.slow")?,
            build_profile(&raw.profiles.fast, "profiles.fast")?,
            coefficients,
            build_noise(&raw.noise.slow, n, "noise.slow")?,
            build_noise(&raw.noise.fast, n, "noise.fast")?,
            build_levy(&raw.levy.slow, "levy.slow")?,
            build_levy(&raw.levy.fast, "levy.fast")?,
        )?;
        system.require_dissipative()?;

        let sim = &raw.simulation;
        let initial_u = match &sim.initial_u {
            Some(u) => padded("simulation.initial_u", u, n)?,
            None => FieldVector::mode(n, 1, 1.0),
        };
        let initial_v = padded("simulation.initial_v", &sim.initial_v, n)?;
        if sim.epsilons.is_empty() {
            return Err(Error::config("simulation.epsilons", "needs at least one value"));
        }

        let avg = &raw.averaging;
        let mut averaging = AveragingOptions::for_system(&system, avg.relax_multiple.unwrap_or(20.0))
            .map_err(|e| e.within("averaging"))?;
        if let Some(m) = avg.relax_multiple {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config("averaging.relax_multiple", "must be positive"));
            }
        }
        if let Some(v) = avg.t_avg {
            averaging.t_avg = v;
        }
        if let Some(v) = avg.t_burn {
            averaging.t_burn = v;
        }
        if let Some(v) = avg.dt {
            averaging.dt = v;
        }
        if let Some(v) = avg.warm_start {
            averaging.warm_start = v;
        }
        if let Some(v) = avg.batches {
            averaging.batches = v;
        }
        averaging.validate(&system)?;
        let average_x = match &avg.x {
            Some(x) => padded("averaging.x", x, n)?,
            None => initial_u.clone(),
        };
        if !(avg.t0 >= 0.0 && avg.t0.is_finite()) {
            return Err(Error::config("averaging.t0", "must be finite and nonnegative"));
        }
        if avg.drift == DriftChoice::Exact && AveragedDrift::closed_form(&system).is_none() {
            return Err(Error::config(
                "averaging.drift",
                "no closed form: needs an affine mean-field preset and a constant fast profile without transport",
            ));
        }

        let h = &raw.harness;
        if !(h.eta > 0.0 && h.eta.is_finite()) {
            return Err(Error::config("harness.eta", "must be positive"));
        }
        if h.replicas == 0 || h.replicas > u32::MAX as usize {
            return Err(Error::config("harness.replicas", "must be at least 1"));
        }
        if h.samples < 2 {
            return Err(Error::config("harness.samples", "must be at least 2"));
        }
        for (i, &lag) in h.lags.iter().enumerate() {
            if !(lag > 0.0 && lag <= sim.t_end) || integer_ratio(lag, sim.dt_slow).is_none() {
                return Err(Error::config(
                    format!("harness.lags[{i}]"),
                    format!("{lag} must be a positive multiple of dt_slow within [0, t_end]"),
                ));
            }
        }

        let cfg = RunConfig {
            seed: raw.seed,
            system,
            epsilons: sim.epsilons.clone(),
            t_end: sim.t_end,
            dt_slow: sim.dt_slow,
            dt_fast: sim.dt_fast,
            theta: sim.theta,
            initial_u,
            initial_v,
            drift_choice: avg.drift,
            averaging,
            average_x,
            average_t0: avg.t0,
            kappa: raw.khasminskii.kappa,
            eta: h.eta,
            replicas: h.replicas,
            lags: h.lags.clone(),
            samples: h.samples,
            record_wall_time: h.record_wall_time,
            output_dir: raw.output.dir,
        };
        if !(cfg.kappa > 0.0 && cfg.kappa < 1.0) {
            return Err(Error::config("khasminskii.kappa", "must lie in (0, 1)"));
        }
        cfg.sim_configs()?;
        Ok(cfg)
    }

    /// One validated [`SimConfig`] per `ε`, in file order.
    pub fn sim_configs(&self) -> Result<Vec<SimConfig>> {
        self.epsilons
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let dt_fast = self
                    .dt_fast
                    .unwrap_or_else(|| self.system.auto_dt_fast(eps, self.dt_slow));
                let c = SimConfig {
                    epsilon: eps,
                    t_end: self.t_end,
                    dt_slow: self.dt_slow,
                    dt_fast,
                    initial_u: self.initial_u.clone(),
                    initial_v: self.initial_v.clone(),
                    theta: self.theta,
                };
                c.validate(&self.system).map_err(|e| match e {
                    Error::Config { key, message } if key == "epsilon" => {
                        Error::config(format!("simulation.epsilons[{i}]"), message)
                    }
                    other => other.within("simulation"),
                })?;
                Ok(c)
            })
            .collect()
    }

    pub fn drift(&self) -> AveragedDrift {
        match self.drift_choice {
            DriftChoice::Estimated => AveragedDrift::Estimated(self.averaging),
            DriftChoice::Auto | DriftChoice::Exact => {
                AveragedDrift::closed_form(&self.system).unwrap_or(AveragedDrift::Estimated(self.averaging))
            }
        }
    }

    pub fn convergence_setup(&self) -> ConvergenceSetup {
        ConvergenceSetup {
            epsilons: self.epsilons.clone(),
            t_end: self.t_end,
            dt_slow: self.dt_slow,
            dt_fast: self.dt_fast,
            initial_u: self.initial_u.clone(),
            initial_v: self.initial_v.clone(),
            eta: self.eta,
            replicas: self.replicas,
            seed: self.seed,
            drift: self.drift(),
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            seed: self.seed,
            replicas: self.replicas,
            t_end: self.t_end,
            dt_slow: self.dt_slow,
            initial_u: self.initial_u.clone(),
            initial_v: self.initial_v.clone(),
            kappa: self.kappa,
            lags: self.lags.clone(),
            samples: self.samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[basis]
modes = 4
[coefficients]
preset = "linear-ou"
alpha = 2.0
"#;

    fn key_of(text: &str) -> String {
        match RunConfig::from_toml_str(text).unwrap_err() {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_applies_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.theta, 0.0);
        assert_eq!(c.kappa, 0.5);
        assert_eq!(c.seed, 0);
        assert_eq!(c.epsilons, vec![0.5, 0.1, 0.02]);
        assert_eq!(c.initial_u.coeffs(), &[1.0, 0.0, 0.0, 0.0]);
        assert!((c.system.basis.domain_length() - PI).abs() < 1e-15);
        assert!(c.drift().is_exact());
        assert_eq!(c.sim_configs().unwrap().len(), 3);
    }

    #[test]
    fn dissipativity_margin_is_enforced() {
        let text = MINIMAL.replace("alpha = 2.0", "alpha = 0.5");
        assert_eq!(key_of(&text), "coefficients.alpha");
    }

    #[test]
    fn dt_fast_above_dt_slow_is_rejected() {
        let text = format!("{MINIMAL}[simulation]\ndt_slow = 0.01\ndt_fast = 0.02\n");
        assert_eq!(key_of(&text), "simulation.dt_fast");
    }

    #[test]
    fn unknown_keys_are_fatal_with_their_path() {
        assert_eq!(
            key_of(&format!("{MINIMAL}[simulation]\nt_ned = 1.0\n")),
            "simulation.t_ned"
        );
        assert_eq!(key_of(&format!("{MINIMAL}[harness]\neta = -1.0\n")), "harness.eta");
        let text = MINIMAL.replace("alpha = 2.0", "alpha = 2.0\nparams = { bogus = 1.0 }");
        assert_eq!(key_of(&text), "coefficients.params.bogus");
    }

    #[test]
    fn tagged_laws_parse() {
        let text = format!(
            "{MINIMAL}[profiles.fast]\ngamma = {{ law = \"sinusoidal\", mean = 2.0, amplitude = 1.0, frequency = 1.0 }}\n\
             [levy.fast]\ndensity = {{ law = \"gaussian\", mean = 0.0, sd = 1.0, intensity = 2.0 }}\n\
             [averaging]\ndrift = \"estimated\"\n"
        );
        let c = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.system.fast_profile.gamma_lower(), 1.0);
        assert!((c.system.fast_levy.total_mass() - 2.0).abs() < 1e-9);
        assert!(!c.drift().is_exact());
        assert_eq!(
            key_of(&format!("{MINIMAL}[profiles.slow]\ngamma = {{ law = \"cubic\" }}\n")),
            "profiles.slow.gamma.law"
        );
    }

    #[test]
    fn exact_drift_needs_a_closed_form() {
        let text = format!("{MINIMAL}[profiles.fast]\ngamma = {{ law = \"sinusoidal\", mean = 2.0, amplitude = 1.0, frequency = 1.0 }}\n[averaging]\ndrift = \"exact\"\n");
        assert_eq!(key_of(&text), "averaging.drift");
    }

    #[test]
    fn initial_data_is_padded_and_bounded() {
        let c = RunConfig::from_toml_str(&format!("{MINIMAL}[simulation]\ninitial_u = [0.5, 0.25]\n")).unwrap();
        assert_eq!(c.initial_u.coeffs(), &[0.5, 0.25, 0.0, 0.0]);
        assert_eq!(
            key_of(&format!("{MINIMAL}[simulation]\ninitial_u = [1, 2, 3, 4, 5]\n")),
            "simulation.initial_u"
        );
    }

    #[test]
    fn every_table_key_is_documented() {
        for k in [
            "seed",
            "basis.modes",
            "simulation.dt_fast",
            "khasminskii.kappa",
            "output.dir",
            "harness.eta",
        ] {
            assert!(CONFIG_KEYS.iter().any(|(name, _)| *name == k), "{k}");
        }
    }
}
