//! Frozen-fast ergodic averages and the averaged slow equation.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::integrator::{
    integer_ratio, Diagnostics, ReplicaStreams, RunningMean, SimConfig, SlowFastSystem, TrajectoryRecord,
};
use crate::noise::{Channel, RandomStream, MAX_LANE};
use crate::spectral::FieldVector;
use crate::stats::MeanEstimate;
use crate::{Error, Result};

/// Lane of the averaged-drift estimator streams.
pub const ESTIMATOR_LANE: u32 = MAX_LANE;
/// Lane of quasi-stationary particles and transition replicas.
pub const PARTICLE_LANE: u32 = MAX_LANE - 1;

/// Frozen-fast estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingOptions {
    pub t_avg: f64,
    pub t_burn: f64,
    pub dt: f64,
    /// Start each estimate in [`solve_averaged`] from the previous end state
    /// without burn-in.
    pub warm_start: bool,
    /// Batch-means windows for the standard error (at least 8).
    pub batches: usize,
}

impl AveragingOptions {
    /// `t_avg = multiple · t_relax`, `t_burn = t_relax`, `dt` at the
    /// stiffness limit, warm start, 16 batches.
    pub fn for_system(system: &SlowFastSystem, multiple: f64) -> Result<Self> {
        let t_relax = system.t_relax()?;
        Ok(Self {
            t_avg: multiple * t_relax,
            t_burn: t_relax,
            dt: system.max_dt_fast(1.0),
            warm_start: true,
            batches: 16,
        })
    }

    pub fn validate(&self, system: &SlowFastSystem) -> Result<()> {
        let t_relax = system.t_relax()?;
        if !(self.t_avg >= 10.0 * t_relax * (1.0 - 1e-12)) {
            return Err(Error::config(
                "averaging.t_avg",
                format!("{} is below 10·t_relax = {}", self.t_avg, 10.0 * t_relax),
            ));
        }
        if !(self.t_burn >= 0.0 && self.t_burn.is_finite()) {
            return Err(Error::config("averaging.t_burn", "must be finite and nonnegative"));
        }
        if !(self.dt > 0.0 && self.dt <= system.max_dt_fast(1.0) * (1.0 + 1e-9)) {
            return Err(Error::config(
                "averaging.dt",
                format!(
                    "must lie in (0, {}] (stiffness guard at ε = 1)",
                    system.max_dt_fast(1.0)
                ),
            ));
        }
        if self.batches < 8 {
            return Err(Error::config("averaging.batches", "needs at least 8 batches"));
        }
        Ok(())
    }
}

/// Estimate of `B̄_1(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDriftEstimate {
    pub x: FieldVector,
    pub value: FieldVector,
    pub t0: f64,
    pub t_burn: f64,
    pub t_avg: f64,
    /// L² norm of `mode_stderr`.
    pub stderr: f64,
    /// Batch-means standard error per mode.
    pub mode_stderr: Vec<f64>,
    pub n_streams: usize,
    /// `max ‖v‖` over the averaging window.
    pub max_fast_norm: f64,
    /// Micro state at the end of the window.
    pub end_state: FieldVector,
    pub diagnostics: Diagnostics,
}

/// Runs the frozen fast equation for `steps` steps without recording.
#[allow(clippy::too_many_arguments)]
fn run_frozen(
    system: &SlowFastSystem,
    x: &FieldVector,
    y: &FieldVector,
    s: f64,
    steps: usize,
    dt: f64,
    w2: &mut RandomStream,
    n2: &mut RandomStream,
    diag: &mut Diagnostics,
) -> Result<FieldVector> {
    let prop = system.fast_propagator(dt, 1.0)?;
    let b = &system.basis;
    let xp = b.to_physical(x);
    let mut vp = vec![0.0; b.quadrature_points()];
    let mut v = y.clone();
    for i in 0..steps {
        b.to_physical_into(&v, &mut vp);
        v = system.fast_step_grid(&prop, s + i as f64 * dt, &xp, &v, &vp, 1.0, w2, n2, diag)?;
    }
    Ok(v)
}

/// Time average of `B_1(r, x, v^x(r))` over `r ∈ [t0, t0 + t_avg]` along one
/// frozen-fast path started from `y0` at `t0 − t_burn` (burn-in rounded up
/// to whole steps). The step is `dt` shrunk so that the window splits into
/// equal batches.
#[allow(clippy::too_many_arguments)]
pub fn estimate_averaged_drift(
    system: &SlowFastSystem,
    x: &FieldVector,
    t0: f64,
    options: &AveragingOptions,
    y0: &FieldVector,
    w2: &mut RandomStream,
    n2: &mut RandomStream,
) -> Result<AveragedDriftEstimate> {
    options.validate(system)?;
    let n = system.n_modes();
    if x.len() != n || y0.len() != n {
        return Err(Error::Contract(format!("states must have {n} modes")));
    }
    let per_batch = (options.t_avg / (options.dt * options.batches as f64)).ceil().max(1.0) as usize;
    let steps = per_batch * options.batches;
    let dt = options.t_avg / steps as f64;
    let burn = (options.t_burn / dt * (1.0 - 1e-12)).ceil() as usize;
    let mut diag = Diagnostics::default();
    let start = t0 - burn as f64 * dt;
    let mut v = run_frozen(system, x, y0, start, burn, dt, w2, n2, &mut diag)?;

    let b = &system.basis;
    let c = &system.coefficients;
    let prop = system.fast_propagator(dt, 1.0)?;
    let xp = b.to_physical(x);
    let mut vp = vec![0.0; b.quadrature_points()];
    let mut total = RunningMean::new(n);
    let mut batch_means = Vec::with_capacity(options.batches);
    let mut batch = RunningMean::new(n);
    let mut max_fast_norm = v.norm();
    for i in 0..steps {
        let r = t0 + i as f64 * dt;
        b.to_physical_into(&v, &mut vp);
        if c.b1.is_some() {
            let val = c.b1_grid(b, r, &xp, &vp)?;
            total.add(&val);
            batch.add(&val);
        }
        v = system.fast_step_grid(&prop, r, &xp, &v, &vp, 1.0, w2, n2, &mut diag)?;
        max_fast_norm = max_fast_norm.max(v.norm());
        if (i + 1) % per_batch == 0 {
            batch_means.push(std::mem::replace(&mut batch, RunningMean::new(n)));
        }
    }
    let mode_stderr: Vec<f64> = (0..n)
        .map(|k| {
            let xs: Vec<f64> = batch_means.iter().map(|m| m.mean()[k]).collect();
            MeanEstimate::from_samples(&xs).stderr
        })
        .collect();
    let stderr = mode_stderr.iter().map(|s| s * s).sum::<f64>().sqrt();
    let value = if total.count() == 0 {
        FieldVector::zeros(n)
    } else {
        total.mean().clone()
    };
    Ok(AveragedDriftEstimate {
        x: x.clone(),
        value,
        t0,
        t_burn: burn as f64 * dt,
        t_avg: options.t_avg,
        stderr,
        mode_stderr,
        n_streams: 1,
        max_fast_norm,
        end_state: v,
        diagnostics: diag,
    })
}

/// Approximate draws of `η^x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSample {
    pub t: f64,
    pub x: FieldVector,
    pub particles: Vec<FieldVector>,
    pub t_relax: f64,
}

/// Each particle is the frozen-fast endpoint at `t` started from `y = 0` at
/// `t − t_relax`, on its own stream (replica = particle index).
pub fn sample_quasi_stationary(
    system: &SlowFastSystem,
    x: &FieldVector,
    t: f64,
    n_particles: usize,
    t_relax: f64,
    dt: f64,
    seed: u64,
) -> Result<MeasureSample> {
    let min = system.t_relax()?;
    if t_relax < min * (1.0 - 1e-12) {
        return Err(Error::config(
            "averaging.t_burn",
            format!("burn-in {t_relax} is below t_relax = 8/δ = {min}"),
        ));
    }
    let steps = (t_relax / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = t_relax / steps as f64;
    let y = FieldVector::zeros(system.n_modes());
    let particles = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut w2 = RandomStream::new(seed, i as u32, PARTICLE_LANE, Channel::W2);
            let mut n2 = RandomStream::new(seed, i as u32, PARTICLE_LANE, Channel::N2);
            run_frozen(
                system,
                x,
                &y,
                t - t_relax,
                steps,
                h,
                &mut w2,
                &mut n2,
                &mut Diagnostics::default(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasureSample {
        t,
        x: x.clone(),
        particles,
        t_relax,
    })
}

/// Monte Carlo estimate of `P^x_{s,t} φ(y) = E φ(v^x(t; s, y))` over
/// `n_replicas` independent paths (replica `i` uses stream `(seed, i)`).
#[allow(clippy::too_many_arguments)]
pub fn transition_expectation(
    system: &SlowFastSystem,
    x: &FieldVector,
    y: &FieldVector,
    s: f64,
    t: f64,
    phi: &(dyn Fn(&FieldVector) -> f64 + Sync),
    n_replicas: usize,
    dt: f64,
    seed: u64,
) -> Result<MeanEstimate> {
    if !(s <= t) {
        return Err(Error::Contract(format!("transition needs s ≤ t, got {s} > {t}")));
    }
    let steps = if t == s {
        0
    } else {
        (((t - s) / dt) * (1.0 - 1e-12)).ceil() as usize
    };
    let h = if steps == 0 { dt } else { (t - s) / steps as f64 };
    let values = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let mut w2 = RandomStream::new(seed, i as u32, PARTICLE_LANE, Channel::W2);
            let mut n2 = RandomStream::new(seed, i as u32, PARTICLE_LANE, Channel::N2);
            let v = run_frozen(system, x, y, s, steps, h, &mut w2, &mut n2, &mut Diagnostics::default())?;
            Ok(phi(&v))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MeanEstimate::from_samples(&values))
}

pub type ExactDrift = Arc<dyn Fn(f64, &FieldVector) -> Result<FieldVector> + Send + Sync>;

/// How the averaged equation obtains `B̄_1`.
#[derive(Clone)]
pub enum AveragedDrift {
    Estimated(AveragingOptions),
    Exact(ExactDrift),
}

impl std::fmt::Debug for AveragedDrift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AveragedDrift::Estimated(o) => f.debug_tuple("Estimated").field(o).finish(),
            AveragedDrift::Exact(_) => f.write_str("Exact"),
        }
    }
}

impl AveragedDrift {
    /// Closed form `B̄_1(x) = B_1(x, v̄(x))` with
    /// `v̄_k = B_2(x)_k / (γ_2 α_k + α)`, available when the coefficients
    /// declare an affine mean field and `A_2` is time-constant without
    /// transport.
    pub fn closed_form(system: &SlowFastSystem) -> Option<Self> {
        let fp = &system.fast_profile;
        if !(system.coefficients.affine_mean_field && fp.has_constant_gamma() && !fp.has_transport()) {
            return None;
        }
        let gamma = fp.gamma(0.0);
        let alpha = system.alpha();
        let basis = system.basis.clone();
        let coefficients = system.coefficients.clone();
        let denom: Vec<f64> = basis.eigenvalues().iter().map(|a| gamma * a + alpha).collect();
        Some(AveragedDrift::Exact(Arc::new(move |t, x| {
            let zero = basis.zeros();
            let xp = basis.to_physical(x);
            let mut vbar = coefficients.b2_grid(&basis, 0.0, &xp, &basis.to_physical(&zero))?;
            for (v, d) in vbar.coeffs_mut().iter_mut().zip(&denom) {
                *v /= d;
            }
            coefficients.b1_grid(&basis, t, &xp, &basis.to_physical(&vbar))
        })))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, AveragedDrift::Exact(_))
    }
}

/// Solves the averaged slow equation on the slow grid of `config` with the
/// slow streams `w1`, `n1` of `streams`. Estimated drifts draw from the
/// estimator lane of the same seed and replica.
pub fn solve_averaged(
    system: &SlowFastSystem,
    config: &SimConfig,
    drift: &AveragedDrift,
    streams: &mut ReplicaStreams,
) -> Result<TrajectoryRecord> {
    let n = system.n_modes();
    let steps = integer_ratio(config.t_end, config.dt_slow)
        .ok_or_else(|| Error::config("dt_slow", "t_end / dt_slow must be an integer"))?;
    if config.initial_u.len() != n {
        return Err(Error::config("initial_u", format!("initial data must have {n} modes")));
    }
    if let AveragedDrift::Estimated(o) = drift {
        o.validate(system)?;
    }
    let slow = system.slow_propagator(config.dt_slow)?;
    let (seed, replica) = (streams.w1.seed(), streams.w1.replica());
    let mut ew = RandomStream::new(seed, replica, ESTIMATOR_LANE, Channel::W2);
    let mut en = RandomStream::new(seed, replica, ESTIMATOR_LANE, Channel::N2);
    let mut micro = FieldVector::zeros(n);
    let mut u = config.initial_u.clone();
    let mut rec = TrajectoryRecord::default();
    let mut diag = Diagnostics::default();
    rec.times.push(0.0);
    rec.sup_norm_u = u.norm();
    rec.u_path.push(u.clone());
    for i in 0..steps {
        let t = i as f64 * config.dt_slow;
        let b = match drift {
            AveragedDrift::Exact(f) => f(t, &u)?,
            AveragedDrift::Estimated(o) => {
                let mut opts = *o;
                if o.warm_start && i > 0 {
                    opts.t_burn = 0.0;
                } else {
                    micro = FieldVector::zeros(n);
                }
                let est = estimate_averaged_drift(system, &u, t, &opts, &micro, &mut ew, &mut en)?;
                diag.merge(&est.diagnostics);
                micro = est.end_state;
                est.value
            }
        };
        u = system.step_slow_with_drift(&slow, t, &u, &b, &mut streams.w1, &mut streams.n1, &mut diag)?;
        let norm = u.norm();
        if !norm.is_finite() {
            return Err(Error::numerical(
                t + config.dt_slow,
                "averaged state norm is not finite",
            ));
        }
        rec.times.push((i + 1) as f64 * config.dt_slow);
        rec.sup_norm_u = rec.sup_norm_u.max(norm);
        rec.u_path.push(u.clone());
    }
    rec.diagnostics = diag;
    Ok(rec)
}

/// One row of the averaged-drift cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedDrift {
    pub x: FieldVector,
    pub value: FieldVector,
    pub t_avg: f64,
    pub stderr: f64,
}

impl From<&AveragedDriftEstimate> for CachedDrift {
    fn from(e: &AveragedDriftEstimate) -> Self {
        Self {
            x: e.x.clone(),
            value: e.value.clone(),
            t_avg: e.t_avg,
            stderr: e.stderr,
        }
    }
}

/// Cache CSV: `x_1..x_N,bbar_1..bbar_N,t_avg,stderr`.
pub fn drift_cache_csv(rows: &[CachedDrift], n_modes: usize) -> String {
    let mut out = String::new();
    let names: Vec<String> = (1..=n_modes)
        .map(|k| format!("x_{k}"))
        .chain((1..=n_modes).map(|k| format!("bbar_{k}")))
        .chain(["t_avg".to_string(), "stderr".to_string()])
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for r in rows {
        let vals: Vec<String> =
            r.x.coeffs()
                .iter()
                .chain(r.value.coeffs())
                .chain([r.t_avg, r.stderr].iter())
                .map(|v| format!("{v:.16e}"))
                .collect();
        let _ = writeln!(out, "{}", vals.join(","));
    }
    out
}

pub fn write_drift_cache(path: &Path, rows: &[CachedDrift], n_modes: usize) -> Result<()> {
    std::fs::write(path, drift_cache_csv(rows, n_modes)).map_err(|e| Error::io(path, e))
}

pub fn read_drift_cache(path: &Path) -> Result<Vec<CachedDrift>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::config("cache", "empty drift cache"))?;
    let cols = header.split(',').count();
    if cols < 4 || cols % 2 != 0 {
        return Err(Error::config("cache", format!("malformed header with {cols} columns")));
    }
    let n = (cols - 2) / 2;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::config(format!("cache.row[{i}]"), e))?;
            if vals.len() != cols {
                return Err(Error::config(format!("cache.row[{i}]"), "wrong column count"));
            }
            Ok(CachedDrift {
                x: FieldVector::from_coeffs(vals[..n].to_vec()),
                value: FieldVector::from_coeffs(vals[n..2 * n].to_vec()),
                t_avg: vals[2 * n],
                stderr: vals[2 * n + 1],
            })
        })
        .collect()
}
