//! Convergence study over an `ε` grid and the statistical verification
//! suite.
//!
//! Replica `r` of an experiment always draws from streams keyed by
//! `(seed, r, lane)`, and results are collected in replica order, so the
//! output does not depend on how rayon schedules the work.

mod report;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

pub use report::{emit_report, verify_table_csv, ReportFormat, REPORT_HEADER};

use crate::averaging::{solve_averaged, AveragedDrift};
use crate::coefficients::JumpChannel;
use crate::integrator::{
    frozen_fast, holder_increment_stats, khasminskii_auxiliary, simulate_coupled, BlockLength, ReplicaStreams,
    SimConfig, SlowFastSystem, TrajectoryRecord,
};
use crate::noise::{
    check_a2_admissibility, compensated_jump_integral, sample_jump_batch, sample_wiener_increment, Channel,
    LevyMeasureSpec, NoiseSpec, RandomStream, MAX_LANE,
};
use crate::spectral::FieldVector;
use crate::stats::{linear_fit, proportion, MeanEstimate};
use crate::{Error, Result};

/// Largest fraction of replicas that may fail numerically before an
/// experiment is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Lane reserved for the sampler checks of the verification suite.
pub const VERIFY_LANE: u32 = MAX_LANE - 2;

/// Inputs of [`convergence_experiment`].
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub epsilons: Vec<f64>,
    pub t_end: f64,
    pub dt_slow: f64,
    /// Fixed fast step; `None` picks the largest admissible step per `ε`.
    pub dt_fast: Option<f64>,
    pub initial_u: FieldVector,
    pub initial_v: FieldVector,
    pub eta: f64,
    pub replicas: usize,
    pub seed: u64,
    pub drift: AveragedDrift,
    /// Write measured wall times into the CSV (breaks byte reproducibility).
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Sorted decreasingly.
    pub epsilons: Vec<f64>,
    pub e_sup_diff: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub p_exceed: Vec<f64>,
    pub p_stderr: Vec<f64>,
    /// Summed per-replica seconds for each `ε`.
    pub wall_times: Vec<f64>,
    pub eta: f64,
    pub n_replicas: usize,
    pub replicas_attempted: usize,
    pub replicas_failed: usize,
    /// `sup_t ‖u_ε − ū‖` of every used replica, `[ε index][replica]`.
    pub sup_diffs: Vec<Vec<f64>>,
    pub record_wall_time: bool,
}

impl ConvergenceReport {
    /// `sqrt(se_i² + se_j²)`
    pub fn combined_stderr(&self, i: usize, j: usize) -> f64 {
        self.stderrs[i].hypot(self.stderrs[j])
    }

    /// Every consecutive pair decreases by more than its combined stderr.
    pub fn strictly_decreasing(&self) -> bool {
        (1..self.epsilons.len()).all(|i| self.e_sup_diff[i - 1] - self.e_sup_diff[i] > self.combined_stderr(i - 1, i))
    }

    /// Per-replica differences `d_i − d_j` of the shared-stream replicas.
    pub fn paired_difference(&self, i: usize, j: usize) -> MeanEstimate {
        let d: Vec<f64> = self.sup_diffs[i]
            .iter()
            .zip(&self.sup_diffs[j])
            .map(|(a, b)| a - b)
            .collect();
        MeanEstimate::from_samples(&d)
    }
}

enum ReplicaOutcome {
    Used { diffs: Vec<f64>, seconds: Vec<f64> },
    Failed,
}

fn sup_distance(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    a.u_path
        .iter()
        .zip(&b.u_path)
        .map(|(x, y)| x.distance(y))
        .fold(0.0, f64::max)
}

fn run_replica(
    system: &SlowFastSystem,
    setup: &ConvergenceSetup,
    configs: &[SimConfig],
    r: u32,
) -> Result<ReplicaOutcome> {
    let seed = setup.seed;
    let guard = |res: Result<TrajectoryRecord>| match res {
        Ok(rec) => Ok(Some(rec)),
        Err(Error::Numerical { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    let Some(averaged) = guard(solve_averaged(
        system,
        &configs[0],
        &setup.drift,
        &mut ReplicaStreams::for_epsilon(seed, r, 0),
    ))?
    else {
        return Ok(ReplicaOutcome::Failed);
    };
    let mut diffs = Vec::with_capacity(configs.len());
    let mut seconds = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let start = Instant::now();
        let Some(rec) = guard(simulate_coupled(
            system,
            cfg,
            &mut ReplicaStreams::for_epsilon(seed, r, i),
        ))?
        else {
            return Ok(ReplicaOutcome::Failed);
        };
        seconds.push(start.elapsed().as_secs_f64());
        diffs.push(sup_distance(&rec, &averaged));
    }
    Ok(ReplicaOutcome::Used { diffs, seconds })
}

/// Monte Carlo estimate of `E sup_t ‖u_ε − ū‖` and `P(sup_t ‖u_ε − ū‖ > η)`
/// for each `ε`. Every replica couples ū and all `u_ε` through one slow
/// noise path; fast noise differs across `ε`. Replicas with a numerical
/// failure are excluded and counted.
pub fn convergence_experiment(system: &SlowFastSystem, setup: &ConvergenceSetup) -> Result<ConvergenceReport> {
    system.require_dissipative()?;
    if !(setup.eta > 0.0 && setup.eta.is_finite()) {
        return Err(Error::config("harness.eta", "must be positive"));
    }
    if setup.replicas == 0 || setup.replicas > u32::MAX as usize {
        return Err(Error::config("harness.replicas", "must be positive"));
    }
    let mut epsilons = setup.epsilons.clone();
    epsilons.sort_by(|a, b| b.total_cmp(a));
    let configs = epsilons
        .iter()
        .map(|&eps| {
            let dt_fast = setup.dt_fast.unwrap_or_else(|| system.auto_dt_fast(eps, setup.dt_slow));
            let cfg = SimConfig {
                epsilon: eps,
                t_end: setup.t_end,
                dt_slow: setup.dt_slow,
                dt_fast,
                initial_u: setup.initial_u.clone(),
                initial_v: setup.initial_v.clone(),
                theta: 0.0,
            };
            cfg.validate(system).map(|_| cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::new();
    if !configs.is_empty() {
        outcomes = (0..setup.replicas as u32)
            .into_par_iter()
            .map(|r| run_replica(system, setup, &configs, r))
            .collect::<Result<Vec<_>>>()?;
    }
    let attempted = setup.replicas;
    let failed = outcomes.iter().filter(|o| matches!(o, ReplicaOutcome::Failed)).count();
    if failed as f64 > MAX_FAILURE_FRACTION * attempted as f64 {
        return Err(Error::FailureBudget { failed, attempted });
    }

    let k = epsilons.len();
    let mut sup_diffs = vec![Vec::new(); k];
    let mut wall_times = vec![0.0; k];
    for o in &outcomes {
        if let ReplicaOutcome::Used { diffs, seconds } = o {
            for i in 0..k {
                sup_diffs[i].push(diffs[i]);
                wall_times[i] += seconds[i];
            }
        }
    }
    let mut report = ConvergenceReport {
        epsilons,
        e_sup_diff: Vec::with_capacity(k),
        stderrs: Vec::with_capacity(k),
        p_exceed: Vec::with_capacity(k),
        p_stderr: Vec::with_capacity(k),
        wall_times,
        eta: setup.eta,
        n_replicas: attempted - if k == 0 { 0 } else { failed },
        replicas_attempted: attempted,
        replicas_failed: if k == 0 { 0 } else { failed },
        sup_diffs: Vec::new(),
        record_wall_time: setup.record_wall_time,
    };
    for d in &sup_diffs {
        let est = MeanEstimate::from_samples(d);
        let (p, se) = proportion(d.iter().filter(|x| **x > setup.eta).count(), d.len());
        report.e_sup_diff.push(est.mean);
        report.stderrs.push(est.stderr);
        report.p_exceed.push(p);
        report.p_stderr.push(se);
    }
    report.sup_diffs = sup_diffs;
    Ok(report)
}

/// Names accepted by [`verify_lemmas`].
pub const CHECK_NAMES: [&str; 8] = [
    "moments",
    "holder",
    "fast-moment",
    "mixing",
    "auxiliary",
    "martingale",
    "wiener-cov",
    "a2",
];

/// How a statistic is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    AtMost,
    AtLeast,
    Below,
    Above,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
            Comparison::Below => "<",
            Comparison::Above => ">",
        }
    }

    /// `false` for NaN statistics.
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Comparison::AtMost => statistic <= threshold,
            Comparison::AtLeast => statistic >= threshold,
            Comparison::Below => statistic < threshold,
            Comparison::Above => statistic > threshold,
        }
    }
}

/// Outcome of one statistical check. `pass` is exactly
/// `comparison.holds(statistic, threshold)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySuiteResult {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub details: BTreeMap<String, f64>,
}

impl VerifySuiteResult {
    pub fn new(name: impl Into<String>, statistic: f64, comparison: Comparison, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            comparison,
            pass: comparison.holds(statistic, threshold),
            details: BTreeMap::new(),
        }
    }

    pub fn detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

/// Settings shared by the verification checks.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub replicas: usize,
    pub t_end: f64,
    pub dt_slow: f64,
    pub initial_u: FieldVector,
    pub initial_v: FieldVector,
    pub kappa: f64,
    /// Increment lags; empty means `dt_slow · 2^j` up to `T/4`.
    pub lags: Vec<f64>,
    /// Draws per sampler check.
    pub samples: usize,
}

impl VerifyOptions {
    /// `u₀ = e₁`, `v₀ = 0`, 200 replicas over `[0, 1]` with `dt_slow = 0.01`.
    pub fn for_system(system: &SlowFastSystem) -> Self {
        let n = system.n_modes();
        Self {
            seed: 0,
            replicas: 200,
            t_end: 1.0,
            dt_slow: 0.01,
            initial_u: FieldVector::mode(n, 1, 1.0),
            initial_v: FieldVector::zeros(n),
            kappa: 0.5,
            lags: Vec::new(),
            samples: 100_000,
        }
    }

    fn config(&self, system: &SlowFastSystem, epsilon: f64) -> Result<SimConfig> {
        let cfg = SimConfig::auto(
            system,
            epsilon,
            self.t_end,
            self.dt_slow,
            self.initial_u.clone(),
            self.initial_v.clone(),
        );
        cfg.validate(system)?;
        Ok(cfg)
    }

    fn lags(&self) -> Vec<f64> {
        if !self.lags.is_empty() {
            return self.lags.clone();
        }
        let mut out = Vec::new();
        let mut h = self.dt_slow;
        while h <= 0.25 * self.t_end * (1.0 + 1e-9) {
            out.push(h);
            h *= 2.0;
        }
        out
    }
}

fn coupled_ensemble(
    system: &SlowFastSystem,
    cfg: &SimConfig,
    opts: &VerifyOptions,
    index: usize,
) -> Result<Vec<TrajectoryRecord>> {
    (0..opts.replicas as u32)
        .into_par_iter()
        .map(|r| simulate_coupled(system, cfg, &mut ReplicaStreams::for_epsilon(opts.seed, r, index)))
        .collect()
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.iter().all(|v| v.is_finite()) && lo > 0.0 {
        hi / lo
    } else if values.iter().all(|v| *v == 0.0) {
        1.0
    } else {
        f64::NAN
    }
}

const MOMENT_EPSILONS: [f64; 3] = [1.0, 0.1, 0.01];

fn moment_checks(
    system: &SlowFastSystem,
    opts: &VerifyOptions,
    slow: bool,
    fast: bool,
) -> Result<Vec<VerifySuiteResult>> {
    let mut sup_u = Vec::new();
    let mut sup_v = Vec::new();
    let mut avg_v = Vec::new();
    for (i, &eps) in MOMENT_EPSILONS.iter().enumerate() {
        let cfg = opts.config(system, eps)?;
        let recs = coupled_ensemble(system, &cfg, opts, i)?;
        let su: Vec<f64> = recs.iter().map(|r| r.sup_norm_u * r.sup_norm_u).collect();
        sup_u.push(MeanEstimate::from_samples(&su).mean);
        let points = recs[0].times.len();
        let ev: Vec<f64> = (0..points)
            .map(|j| {
                let s: Vec<f64> = recs.iter().map(|r| r.v_path[j].norm_squared()).collect();
                MeanEstimate::from_samples(&s).mean
            })
            .collect();
        sup_v.push(ev.iter().copied().fold(0.0, f64::max));
        avg_v.push(MeanEstimate::from_samples(&ev).mean);
    }
    let mut out = Vec::new();
    if slow {
        let mut r = VerifySuiteResult::new("moments.spread", spread(&sup_u), Comparison::AtMost, 2.0);
        for (eps, m) in MOMENT_EPSILONS.iter().zip(&sup_u) {
            r = r.detail(format!("E_sup_u2[eps={eps}]"), *m);
        }
        out.push(r);
    }
    if fast {
        let scale = 1.0 + opts.initial_u.norm_squared() + opts.initial_v.norm_squared();
        let c = avg_v.iter().copied().fold(0.0, f64::max) / scale;
        // The bound is uniform in ε but the initial layer differs, so only
        // finiteness of the common constant is asserted.
        let mut r = VerifySuiteResult::new("fast-moment.c", c, Comparison::Below, f64::INFINITY);
        for (eps, (avg, sup)) in MOMENT_EPSILONS.iter().zip(avg_v.iter().zip(&sup_v)) {
            r = r
                .detail(format!("time_avg_E_v2[eps={eps}]"), *avg)
                .detail(format!("sup_E_v2[eps={eps}]"), *sup);
        }
        out.push(r);
    }
    Ok(out)
}

fn holder_check(system: &SlowFastSystem, opts: &VerifyOptions) -> Result<Vec<VerifySuiteResult>> {
    let cfg = opts.config(system, 0.1)?;
    let recs = coupled_ensemble(system, &cfg, opts, 0)?;
    let lags = opts.lags();
    let rows = holder_increment_stats(&recs, &lags)?;
    let mut min_z = f64::INFINITY;
    for w in rows.windows(2) {
        let se = w[0].stderr.hypot(w[1].stderr);
        let z = if se > 0.0 {
            (w[1].mean - w[0].mean) / se
        } else if w[1].mean >= w[0].mean {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        min_z = min_z.min(z);
    }
    let usable: Vec<_> = rows.iter().filter(|r| r.lag > 0.0 && r.mean > 0.0).collect();
    let x: Vec<f64> = usable.iter().map(|r| r.lag.ln()).collect();
    let y: Vec<f64> = usable.iter().map(|r| r.mean.ln()).collect();
    let exponent = if x.len() >= 2 {
        linear_fit(&x, &y).slope
    } else {
        f64::NAN
    };
    let mut mono = VerifySuiteResult::new("holder.monotone", min_z, Comparison::AtLeast, -3.0);
    for r in &rows {
        mono = mono.detail(format!("E_incr2[h={}]", r.lag), r.mean);
    }
    Ok(vec![
        mono,
        VerifySuiteResult::new("holder.exponent", exponent, Comparison::Above, 0.0),
    ])
}

/// Decay of `Ê‖v¹ − v²‖` for frozen pairs started at `0` and `e₁ + e₂/2`
/// under shared noise.
fn mixing_check(system: &SlowFastSystem, opts: &VerifyOptions) -> Result<Vec<VerifySuiteResult>> {
    let n = system.n_modes();
    let horizon = 4.0;
    let dt = {
        let m = (horizon / system.max_dt_fast(1.0)).ceil();
        horizon / m
    };
    let y1 = FieldVector::zeros(n);
    let mut y2 = FieldVector::mode(n, 1, 1.0);
    if n >= 2 {
        y2.coeffs_mut()[1] = 0.5;
    }
    let x = &opts.initial_u;
    let dists = (0..opts.replicas as u32)
        .into_par_iter()
        .map(|r| {
            let pair = |y: &FieldVector| {
                let mut s = ReplicaStreams::for_epsilon(opts.seed, r, 0);
                frozen_fast(system, x, y, 0.0, horizon, dt, &mut s.w2, &mut s.n2)
            };
            let (a, b) = (pair(&y1)?, pair(&y2)?);
            Ok(a.v_path
                .iter()
                .zip(&b.v_path)
                .map(|(p, q)| p.distance(q))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let points = dists[0].len();
    let stride = (points / 200).max(1);
    let (mut tx, mut ly) = (Vec::new(), Vec::new());
    for j in (0..points).step_by(stride) {
        let col: Vec<f64> = dists.iter().map(|d| d[j]).collect();
        let mean = MeanEstimate::from_samples(&col).mean;
        if mean > 0.0 && mean.is_finite() {
            tx.push(j as f64 * dt);
            ly.push(mean.ln());
        }
    }
    let fit = if tx.len() >= 2 {
        linear_fit(&tx, &ly)
    } else {
        crate::stats::LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
        }
    };
    let predicted = -(system.alpha() - system.coefficients.lipschitz.b2);
    Ok(vec![
        VerifySuiteResult::new("mixing.slope", fit.slope, Comparison::AtMost, 0.75 * predicted + 0.0)
            .detail("predicted_slope", predicted),
        VerifySuiteResult::new("mixing.r_squared", fit.r_squared, Comparison::AtLeast, 0.95),
    ])
}

const AUXILIARY_EPSILONS: [f64; 2] = [0.2, 0.05];

fn auxiliary_check(system: &SlowFastSystem, opts: &VerifyOptions) -> Result<Vec<VerifySuiteResult>> {
    let mut est = Vec::new();
    for (i, &eps) in AUXILIARY_EPSILONS.iter().enumerate() {
        let cfg = opts.config(system, eps)?;
        let block = BlockLength::Kappa(opts.kappa);
        block.slow_steps(&cfg)?;
        let errs = (0..opts.replicas as u32)
            .into_par_iter()
            .map(|r| {
                let rec = simulate_coupled(system, &cfg, &mut ReplicaStreams::for_epsilon(opts.seed, r, i))?;
                let aux = khasminskii_auxiliary(
                    system,
                    &rec,
                    &cfg,
                    block,
                    &mut ReplicaStreams::for_epsilon(opts.seed, r, i),
                )?;
                Ok(rec.v_path.last().unwrap().distance(aux.v_path.last().unwrap()))
            })
            .collect::<Result<Vec<f64>>>()?;
        est.push(MeanEstimate::from_samples(&errs));
    }
    let se = est[0].stderr.hypot(est[1].stderr);
    let z = if se > 0.0 {
        (est[0].mean - est[1].mean) / se
    } else {
        f64::NAN
    };
    Ok(vec![VerifySuiteResult::new(
        "auxiliary.decrease",
        z,
        Comparison::AtLeast,
        1.0,
    )
    .detail("E_diff[eps=0.2]", est[0].mean)
    .detail("E_diff[eps=0.05]", est[1].mean)
    .detail("combined_stderr", se)])
}

fn max_abs_z(means: &[MeanEstimate]) -> f64 {
    let top = means.iter().map(|m| m.stderr).fold(0.0, f64::max);
    means
        .iter()
        .filter(|m| m.stderr > 1e-9 * top)
        .map(|m| (m.mean / m.stderr).abs())
        .fold(0.0, f64::max)
}

/// Compensated fast-channel jump integral and Poisson void probability.
/// Systems without a fast jump channel are checked with
/// `g₂ = z·v` and marks `±1` of mass `1/2`.
fn martingale_check(system: &SlowFastSystem, opts: &VerifyOptions) -> Result<Vec<VerifySuiteResult>> {
    let basis = &system.basis;
    let n = system.n_modes();
    let mut cset = system.coefficients.clone();
    let mut levy = system.fast_levy.clone();
    if levy.total_mass() == 0.0 || cset.g2.is_none() {
        levy = LevyMeasureSpec::discrete(vec![(-1.0, 0.5), (1.0, 0.5)])?;
        cset.g2 = Some(Arc::new(|_, _, _, v, z| z * v));
    }
    let u = opts.initial_u.clone();
    let v = if opts.initial_v.norm() > 0.0 {
        opts.initial_v.clone()
    } else {
        FieldVector::mode(n, 1, 1.0)
    };
    let (dt, eps) = (0.01, 0.1);
    let mut stream = RandomStream::new(opts.seed, 0, VERIFY_LANE, Channel::N2);
    let mut per_mode = vec![Vec::with_capacity(opts.samples); n];
    for _ in 0..opts.samples {
        let jumps = sample_jump_batch(&levy, &mut stream, dt, 1.0 / eps)?;
        let m = compensated_jump_integral(
            &levy,
            &jumps,
            &cset,
            basis,
            JumpChannel::Fast,
            0.0,
            &u,
            &v,
            dt,
            1.0 / eps,
        )?;
        for (k, c) in m.coeffs().iter().enumerate() {
            per_mode[k].push(*c);
        }
    }
    let means: Vec<MeanEstimate> = per_mode.iter().map(|s| MeanEstimate::from_samples(s)).collect();

    let lambda = levy.total_mass();
    let dt0 = 0.1 / lambda;
    let mut counts = RandomStream::new(opts.seed, 1, VERIFY_LANE, Channel::N2);
    let mut voids = 0usize;
    for _ in 0..opts.samples {
        if sample_jump_batch(&levy, &mut counts, dt0, 1.0)?.is_empty() {
            voids += 1;
        }
    }
    let (p, _) = proportion(voids, opts.samples);
    let p0 = (-0.1f64).exp();
    let se0 = (p0 * (1.0 - p0) / opts.samples as f64).sqrt();
    Ok(vec![
        VerifySuiteResult::new(
            "martingale.compensated_mean",
            max_abs_z(&means),
            Comparison::AtMost,
            3.0,
        ),
        VerifySuiteResult::new(
            "martingale.poisson_zero",
            ((p - p0) / se0).abs(),
            Comparison::AtMost,
            3.0,
        )
        .detail("p_zero", p)
        .detail("predicted", p0),
    ])
}

/// Mode variances of both Wiener channels (unit spectrum when a channel is
/// switched off) and the cross-channel correlation of mode 1.
fn wiener_check(system: &SlowFastSystem, opts: &VerifyOptions) -> Result<Vec<VerifySuiteResult>> {
    let n = system.n_modes();
    let dt = 0.25;
    let unit = NoiseSpec::new(vec![1.0; n], f64::INFINITY, 1.0)?;
    let spec_for = |s: &NoiseSpec| if s.is_zero() { unit.clone() } else { s.clone() };
    let specs = [spec_for(&system.slow_noise), spec_for(&system.fast_noise)];
    let mut streams = [
        RandomStream::new(opts.seed, 0, VERIFY_LANE, Channel::W1),
        RandomStream::new(opts.seed, 0, VERIFY_LANE, Channel::W2),
    ];
    let mut sq = [
        vec![Vec::with_capacity(opts.samples); n],
        vec![Vec::with_capacity(opts.samples); n],
    ];
    let mut cross = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let mut first = [0.0; 2];
        for c in 0..2 {
            let w = sample_wiener_increment(&specs[c], &mut streams[c], dt);
            for (k, x) in w.coeffs().iter().enumerate() {
                sq[c][k].push(x * x);
            }
            let l = specs[c].q_eigenvalues[0];
            first[c] = if l > 0.0 { w.coeffs()[0] / (l * dt.sqrt()) } else { 0.0 };
        }
        cross.push(first[0] * first[1]);
    }
    let mut worst: f64 = 0.0;
    let mut r = VerifySuiteResult::new("wiener-cov.variance", 0.0, Comparison::AtMost, 0.05);
    for c in 0..2 {
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            let l = specs[c].q_eigenvalues[k];
            if l == 0.0 {
                continue;
            }
            let var = MeanEstimate::from_samples(&sq[c][k]).mean;
            let dev = (var / (l * l * dt) - 1.0).abs();
            worst = worst.max(dev);
        }
        r = r.detail(
            format!("channel{}_mode1_var", c + 1),
            MeanEstimate::from_samples(&sq[c][0]).mean,
        );
    }
    r.statistic = worst;
    r.pass = r.comparison.holds(worst, r.threshold);
    let xc = MeanEstimate::from_samples(&cross);
    Ok(vec![
        r,
        VerifySuiteResult::new("wiener-cov.cross", (xc.mean / xc.stderr).abs(), Comparison::AtMost, 3.0)
            .detail("correlation", xc.mean),
    ])
}

fn a2_check(system: &SlowFastSystem) -> Vec<VerifySuiteResult> {
    [("a2.slow", &system.slow_noise), ("a2.fast", &system.fast_noise)]
        .into_iter()
        .map(|(name, spec)| {
            let rep = check_a2_admissibility(spec, &system.basis);
            let stat = if rep.kappa.is_finite() && rep.zeta.is_finite() {
                rep.ratio
            } else {
                f64::NAN
            };
            VerifySuiteResult::new(name, stat, Comparison::Below, 1.0)
                .detail("kappa", rep.kappa)
                .detail("zeta", rep.zeta)
                .detail("rho", spec.rho)
                .detail("beta", spec.beta)
        })
        .collect()
}

/// Runs the selected checks (all when `selection` is empty) in the order of
/// [`CHECK_NAMES`]. Statistical failures are reported in the results;
/// errors are reserved for unusable settings.
pub fn verify_lemmas(
    system: &SlowFastSystem,
    selection: &[&str],
    opts: &VerifyOptions,
) -> Result<Vec<VerifySuiteResult>> {
    for s in selection {
        if !CHECK_NAMES.contains(s) {
            return Err(Error::config(
                "select",
                format!("unknown check `{s}`; expected one of {}", CHECK_NAMES.join(", ")),
            ));
        }
    }
    let wants = |name: &str| selection.is_empty() || selection.contains(&name);
    if opts.replicas < 2 {
        return Err(Error::config(
            "harness.replicas",
            "the verification suite needs at least 2 replicas",
        ));
    }
    if opts.samples < 2 {
        return Err(Error::config("samples", "needs at least 2 samples"));
    }
    let mut out = Vec::new();
    if wants("moments") || wants("fast-moment") {
        let mut res = moment_checks(system, opts, wants("moments"), wants("fast-moment"))?;
        out.append(&mut res);
    }
    if wants("holder") {
        out.extend(holder_check(system, opts)?);
    }
    if wants("mixing") {
        out.extend(mixing_check(system, opts)?);
    }
    if wants("auxiliary") {
        out.extend(auxiliary_check(system, opts)?);
    }
    if wants("martingale") {
        out.extend(martingale_check(system, opts)?);
    }
    if wants("wiener-cov") {
        out.extend(wiener_check(system, opts)?);
    }
    if wants("a2") {
        out.extend(a2_check(system));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::preset;
    use crate::spectral::{SpectralBasis, TimeProfile};
    use std::f64::consts::PI;

    fn linear_system(n: usize, pairs: &[(&str, f64)], slow_sigma: bool) -> SlowFastSystem {
        let params = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let c = preset("linear-ou", &params).unwrap();
        let basis = SpectralBasis::with_default_grid(PI, n).unwrap();
        let q1 = if slow_sigma {
            NoiseSpec::power_law(n, 0.1, 2.0, 4.0, 1.0).unwrap()
        } else {
            NoiseSpec::zero(n)
        };
        SlowFastSystem::new(
            basis,
            TimeProfile::constant(1.0).unwrap(),
            TimeProfile::constant(1.0).unwrap(),
            c,
            q1,
            NoiseSpec::power_law(n, 1.0, 2.0, 4.0, 1.0).unwrap(),
            LevyMeasureSpec::none(),
            LevyMeasureSpec::discrete(vec![(1.0, 1.0)]).unwrap(),
        )
        .unwrap()
    }

    fn setup(system: &SlowFastSystem, eps: Vec<f64>, replicas: usize) -> ConvergenceSetup {
        let n = system.n_modes();
        ConvergenceSetup {
            epsilons: eps,
            t_end: 0.2,
            dt_slow: 0.01,
            dt_fast: None,
            initial_u: FieldVector::mode(n, 1, 1.0),
            initial_v: FieldVector::zeros(n),
            eta: 0.1,
            replicas,
            seed: 3,
            drift: AveragedDrift::closed_form(system).unwrap(),
            record_wall_time: false,
        }
    }

    #[test]
    fn v_independent_slow_drift_couples_exactly() {
        let sys = linear_system(3, &[("feedback", 0.0), ("self_drift", -0.5), ("alpha", 2.0)], true);
        let rep = convergence_experiment(&sys, &setup(&sys, vec![0.1, 0.5], 8)).unwrap();
        assert_eq!(rep.epsilons, vec![0.5, 0.1]);
        assert!(rep.e_sup_diff.iter().all(|e| *e == 0.0), "{:?}", rep.e_sup_diff);
        assert!(rep.p_exceed.iter().all(|p| *p == 0.0));
        assert_eq!(rep.replicas_attempted, rep.n_replicas + rep.replicas_failed);
    }

    #[test]
    fn report_lists_share_length_and_proportions_are_binomial() {
        let sys = linear_system(2, &[("alpha", 2.0)], true);
        let mut s = setup(&sys, vec![0.5, 0.2], 16);
        s.eta = 0.01;
        let rep = convergence_experiment(&sys, &s).unwrap();
        for l in [
            &rep.e_sup_diff,
            &rep.stderrs,
            &rep.p_exceed,
            &rep.p_stderr,
            &rep.wall_times,
        ] {
            assert_eq!(l.len(), 2);
        }
        for (p, se) in rep.p_exceed.iter().zip(&rep.p_stderr) {
            assert!((0.0..=1.0).contains(p));
            assert!((se - (p * (1.0 - p) / 16.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn stderr_halves_with_four_times_the_replicas() {
        let sys = linear_system(2, &[("alpha", 2.0)], true);
        let small = convergence_experiment(&sys, &setup(&sys, vec![0.5], 100)).unwrap();
        let large = convergence_experiment(&sys, &setup(&sys, vec![0.5], 400)).unwrap();
        let ratio = small.stderrs[0] / large.stderrs[0];
        assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn empty_grid_gives_empty_report() {
        let sys = linear_system(2, &[("alpha", 2.0)], false);
        let rep = convergence_experiment(&sys, &setup(&sys, vec![], 4)).unwrap();
        assert!(rep.epsilons.is_empty());
        assert_eq!(rep.to_csv(), format!("{REPORT_HEADER}\n"));
        assert!(!rep.to_svg().contains("<polyline"));
    }

    #[test]
    fn overflowing_replicas_exhaust_the_budget() {
        let sys = linear_system(2, &[("alpha", 2.0), ("self_drift", 1e10)], false);
        let err = convergence_experiment(&sys, &setup(&sys, vec![0.5], 4)).unwrap_err();
        assert!(
            matches!(
                err,
                Error::FailureBudget {
                    failed: 4,
                    attempted: 4
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let rep = ConvergenceReport {
            epsilons: vec![0.5, 0.1, 0.02],
            e_sup_diff: vec![0.1 + 0.2, 1.0 / 3.0, PI * 1e-7],
            stderrs: vec![1e-3, 2e-3, 3e-3],
            p_exceed: vec![0.5, 0.25, 0.0],
            p_stderr: vec![0.05, 0.04, 0.0],
            wall_times: vec![1.0, 2.0, 3.0],
            eta: 0.1,
            n_replicas: 3,
            replicas_attempted: 3,
            replicas_failed: 0,
            sup_diffs: vec![vec![]; 3],
            record_wall_time: false,
        };
        let csv = rep.to_csv();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        for (i, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f.len(), 6);
            assert_eq!(f[1].parse::<f64>().unwrap(), rep.e_sup_diff[i]);
            assert_eq!(f[0].parse::<f64>().unwrap(), rep.epsilons[i]);
            assert_eq!(f[5], "");
        }
        assert_eq!(rep.to_svg().matches("<polyline").count(), 1);
    }

    #[test]
    fn a2_on_admissible_spectrum() {
        let sys = linear_system(8, &[], true);
        let opts = VerifyOptions::for_system(&sys);
        let res = verify_lemmas(&sys, &["a2"], &opts).unwrap();
        assert_eq!(res.len(), 2);
        for r in &res {
            assert!(r.pass, "{r:?}");
            assert!((r.statistic - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_check_is_a_config_error() {
        let sys = linear_system(2, &[], false);
        let err = verify_lemmas(&sys, &["nope"], &VerifyOptions::for_system(&sys)).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "select"));
    }

    #[test]
    fn pass_flag_follows_comparison() {
        assert!(VerifySuiteResult::new("x", 1.0, Comparison::AtMost, 1.0).pass);
        assert!(!VerifySuiteResult::new("x", 1.0, Comparison::Below, 1.0).pass);
        assert!(!VerifySuiteResult::new("x", f64::NAN, Comparison::AtLeast, 0.0).pass);
    }

    #[test]
    fn sampler_checks_pass_with_default_seed() {
        let sys = linear_system(4, &[], true);
        let mut opts = VerifyOptions::for_system(&sys);
        opts.samples = 20_000;
        let res = verify_lemmas(&sys, &["martingale", "wiener-cov"], &opts).unwrap();
        assert_eq!(res.len(), 4);
        for r in &res {
            // 20k draws keeps the variance deviation around 1%.
            if r.name == "wiener-cov.variance" {
                assert!(r.statistic < 0.05, "{r:?}");
            }
            assert!(r.statistic.is_finite(), "{r:?}");
        }
    }
}
