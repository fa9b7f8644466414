//! Exponential-Euler stepping in mild form.
//!
//! Slow step: `u⁺ = E_1(t+dt, t)[u + dt·B_1 + F_1 ΔW¹ + Σ G_1 − dt ∫G_1 dν_1]`.
//! Fast step: `v⁺ = E_{α,ε}(t+dt, t)[v + (dt/ε) B_2 + ε^{-1/2} F_2 ΔW² + Σ G_2
//! − (dt/ε) ∫G_2 dν_2]` with jumps at intensity `ν_2/ε`. All terms are
//! evaluated at the left endpoint; jumps inside a step see the left state.
//!
//! In the coupled scheme the slow state is frozen over the fast sub-loop of a
//! slow step, and the slow drift uses the sub-loop mean of
//! `B_1(t_j, u_n, v_j)`. With one sub-step this is the plain left-point rule.

use std::fmt::Write as _;
use std::path::Path;

use crate::coefficients::{CoefficientSet, JumpChannel};
use crate::noise::{
    compensated_jump_grid, sample_jump_batch, sample_wiener_increment, Channel, LevyMeasureSpec, NoiseSpec,
    RandomStream,
};
use crate::spectral::{transport_operator_norm, FieldVector, SpectralBasis, StepPropagator, TimeProfile};
use crate::stats::MeanEstimate;
use crate::{Error, Result};

/// Minimum mixing rate the averaging pipeline accepts.
pub const MIN_MIXING_RATE: f64 = 1.0;

/// Horizon and sample count for the `sup_t ‖C_2(t)‖` estimate.
const TRANSPORT_HORIZON: f64 = 100.0;
const TRANSPORT_SAMPLES: usize = 201;

/// Everything that defines the stochastic system, independent of `ε` and
/// the time grid.
#[derive(Debug, Clone)]
pub struct SlowFastSystem {
    pub basis: SpectralBasis,
    pub slow_profile: TimeProfile,
    pub fast_profile: TimeProfile,
    pub coefficients: CoefficientSet,
    pub slow_noise: NoiseSpec,
    pub fast_noise: NoiseSpec,
    pub slow_levy: LevyMeasureSpec,
    pub fast_levy: LevyMeasureSpec,
    fast_transport_norm: f64,
}

impl SlowFastSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: SpectralBasis,
        slow_profile: TimeProfile,
        fast_profile: TimeProfile,
        coefficients: CoefficientSet,
        slow_noise: NoiseSpec,
        fast_noise: NoiseSpec,
        slow_levy: LevyMeasureSpec,
        fast_levy: LevyMeasureSpec,
    ) -> Result<Self> {
        let n = basis.n_modes();
        for (key, spec) in [("noise.slow", &slow_noise), ("noise.fast", &fast_noise)] {
            if spec.q_eigenvalues.len() != n {
                return Err(Error::config(
                    format!("{key}.eigenvalues"),
                    format!("has {} entries but the basis has {n} modes", spec.q_eigenvalues.len()),
                ));
            }
        }
        if !(coefficients.alpha >= 0.0 && coefficients.alpha.is_finite()) {
            return Err(Error::config("coefficients.alpha", "must be finite and nonnegative"));
        }
        let fast_transport_norm = transport_operator_norm(&basis, &fast_profile, TRANSPORT_HORIZON, TRANSPORT_SAMPLES)?;
        Ok(Self {
            basis,
            slow_profile,
            fast_profile,
            coefficients,
            slow_noise,
            fast_noise,
            slow_levy,
            fast_levy,
            fast_transport_norm,
        })
    }

    /// Noise-free system with `γ_1 = γ_2 ≡ 1` and no jumps.
    pub fn deterministic(basis: SpectralBasis, coefficients: CoefficientSet) -> Result<Self> {
        let n = basis.n_modes();
        Self::new(
            basis,
            TimeProfile::constant(1.0)?,
            TimeProfile::constant(1.0)?,
            coefficients,
            NoiseSpec::zero(n),
            NoiseSpec::zero(n),
            LevyMeasureSpec::none(),
            LevyMeasureSpec::none(),
        )
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    pub fn alpha(&self) -> f64 {
        self.coefficients.alpha
    }

    /// `sup_t ‖C_2(t)‖_op`
    pub fn fast_transport_norm(&self) -> f64 {
        self.fast_transport_norm
    }

    /// Contraction rate of the frozen fast equation,
    /// `δ = γ_0 α_1 + α − L_{b2} − sup_t ‖C_2(t)‖_op`.
    pub fn mixing_rate(&self) -> f64 {
        self.fast_profile.gamma_lower() * self.basis.eigenvalues()[0] + self.alpha()
            - self.coefficients.lipschitz.b2
            - self.fast_transport_norm
    }

    /// Burn-in `8/δ` after which the start-value bias is below `e^{-8}`.
    pub fn t_relax(&self) -> Result<f64> {
        let d = self.mixing_rate();
        if d <= 0.0 {
            return Err(Error::config(
                "coefficients.alpha",
                format!("mixing rate γ₀α₁ + α − L_b2 − sup‖C₂‖ = {d} is not positive"),
            ));
        }
        Ok(8.0 / d)
    }

    /// Rejects systems whose mixing rate is below [`MIN_MIXING_RATE`].
    pub fn require_dissipative(&self) -> Result<()> {
        let d = self.mixing_rate();
        if d < MIN_MIXING_RATE {
            return Err(Error::config(
                "coefficients.alpha",
                format!(
                    "dissipativity margin violated: γ₀α₁ + α − L_b2 − sup‖C₂‖ = {} + {} − {} − {} = {d} < {MIN_MIXING_RATE}",
                    self.fast_profile.gamma_lower() * self.basis.eigenvalues()[0],
                    self.alpha(),
                    self.coefficients.lipschitz.b2,
                    self.fast_transport_norm
                ),
            ));
        }
        Ok(())
    }

    /// Largest fast step allowed by the stiffness guard.
    pub fn max_dt_fast(&self, epsilon: f64) -> f64 {
        0.2 * epsilon / (self.fast_profile.gamma_upper() * self.basis.max_eigenvalue() + self.alpha())
    }

    /// Largest `dt_slow / m` (integer `m`) within the stiffness guard.
    pub fn auto_dt_fast(&self, epsilon: f64, dt_slow: f64) -> f64 {
        let m = (dt_slow / self.max_dt_fast(epsilon) * (1.0 - 1e-12)).ceil().max(1.0);
        dt_slow / m
    }

    pub fn slow_propagator(&self, dt: f64) -> Result<StepPropagator> {
        StepPropagator::new(&self.basis, &self.slow_profile, dt, 0.0, 1.0)
    }

    pub fn fast_propagator(&self, dt: f64, epsilon: f64) -> Result<StepPropagator> {
        StepPropagator::new(&self.basis, &self.fast_profile, dt, self.alpha(), epsilon)
    }

    /// One slow step with drift `B_1(t, u, v)`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_slow(
        &self,
        prop: &StepPropagator,
        t: f64,
        u: &FieldVector,
        v: &FieldVector,
        w1: &mut RandomStream,
        n1: &mut RandomStream,
        diag: &mut Diagnostics,
    ) -> Result<FieldVector> {
        let b = &self.basis;
        let drift = self.coefficients.b1_grid(b, t, &b.to_physical(u), &b.to_physical(v))?;
        self.step_slow_with_drift(prop, t, u, &drift, w1, n1, diag)
    }

    /// One slow step with a precomputed drift field.
    #[allow(clippy::too_many_arguments)]
    pub fn step_slow_with_drift(
        &self,
        prop: &StepPropagator,
        t: f64,
        u: &FieldVector,
        drift: &FieldVector,
        w1: &mut RandomStream,
        n1: &mut RandomStream,
        diag: &mut Diagnostics,
    ) -> Result<FieldVector> {
        let b = &self.basis;
        let c = &self.coefficients;
        let dt = prop.dt();
        let mut next = u.clone();
        next.axpy(dt, drift);
        let dw = sample_wiener_increment(&self.slow_noise, w1, dt);
        let needs_grid = c.f1.is_some() || (c.g1.is_some() && self.slow_levy.total_mass() > 0.0);
        if needs_grid {
            let up = b.to_physical(u);
            if c.f1.is_some() {
                next += &c.f1_grid(b, t, &up, &b.to_physical(&dw))?;
            }
            if c.g1.is_some() && self.slow_levy.total_mass() > 0.0 {
                let jumps = sample_jump_batch(&self.slow_levy, n1, dt, 1.0)?;
                diag.slow_jumps += jumps.len() as u64;
                next += &compensated_jump_grid(&self.slow_levy, &jumps, c, b, JumpChannel::Slow, t, &up, &up, dt, 1.0)?;
            }
        }
        diag.clamped_modes += prop.apply(b, &self.slow_profile, t, &mut next)? as u64;
        finite(next, t + dt)
    }

    /// One fast step at scale `ε` with the slow argument `u`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_fast(
        &self,
        prop: &StepPropagator,
        t: f64,
        u: &FieldVector,
        v: &FieldVector,
        epsilon: f64,
        w2: &mut RandomStream,
        n2: &mut RandomStream,
        diag: &mut Diagnostics,
    ) -> Result<FieldVector> {
        let up = self.basis.to_physical(u);
        let vp = self.basis.to_physical(v);
        self.fast_step_grid(prop, t, &up, v, &vp, epsilon, w2, n2, diag)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fast_step_grid(
        &self,
        prop: &StepPropagator,
        t: f64,
        up: &[f64],
        v: &FieldVector,
        vp: &[f64],
        epsilon: f64,
        w2: &mut RandomStream,
        n2: &mut RandomStream,
        diag: &mut Diagnostics,
    ) -> Result<FieldVector> {
        let b = &self.basis;
        let c = &self.coefficients;
        let dt = prop.dt();
        let mut next = v.clone();
        if c.b2.is_some() {
            next.axpy(dt / epsilon, &c.b2_grid(b, t, up, vp)?);
        }
        let dw = sample_wiener_increment(&self.fast_noise, w2, dt);
        if c.f2.is_some() {
            next.axpy(epsilon.sqrt().recip(), &c.f2_grid(b, t, up, vp, &b.to_physical(&dw))?);
        }
        if c.g2.is_some() && self.fast_levy.total_mass() > 0.0 {
            let rate = 1.0 / epsilon;
            let jumps = sample_jump_batch(&self.fast_levy, n2, dt, rate)?;
            diag.fast_jumps += jumps.len() as u64;
            next += &compensated_jump_grid(&self.fast_levy, &jumps, c, b, JumpChannel::Fast, t, up, vp, dt, rate)?;
        }
        diag.clamped_modes += prop.apply(b, &self.fast_profile, t, &mut next)? as u64;
        finite(next, t + dt)
    }
}

fn finite(v: FieldVector, t: f64) -> Result<FieldVector> {
    if v.is_finite() && v.norm().is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(t, "state became non-finite"))
    }
}

/// Per-trajectory event counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub slow_jumps: u64,
    pub fast_jumps: u64,
    pub clamped_modes: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.slow_jumps += other.slow_jumps;
        self.fast_jumps += other.fast_jumps;
        self.clamped_modes += other.clamped_modes;
    }

    pub fn entries(&self) -> [(&'static str, u64); 3] {
        [
            ("slow_jumps", self.slow_jumps),
            ("fast_jumps", self.fast_jumps),
            ("clamped_modes", self.clamped_modes),
        ]
    }
}

/// The four noise streams of one replica. Slow and fast channels sit on
/// separate lanes so that several fast processes can share one slow noise.
#[derive(Debug, Clone)]
pub struct ReplicaStreams {
    pub w1: RandomStream,
    pub n1: RandomStream,
    pub w2: RandomStream,
    pub n2: RandomStream,
}

/// Lane of the shared slow channels.
pub const SLOW_LANE: u32 = 0;

impl ReplicaStreams {
    pub fn new(seed: u64, replica: u32, slow_lane: u32, fast_lane: u32) -> Self {
        Self {
            w1: RandomStream::new(seed, replica, slow_lane, Channel::W1),
            n1: RandomStream::new(seed, replica, slow_lane, Channel::N1),
            w2: RandomStream::new(seed, replica, fast_lane, Channel::W2),
            n2: RandomStream::new(seed, replica, fast_lane, Channel::N2),
        }
    }

    /// Streams for the `index`-th `ε` of a grid: shared slow lane, one fast
    /// lane per `ε`.
    pub fn for_epsilon(seed: u64, replica: u32, index: usize) -> Self {
        Self::new(seed, replica, SLOW_LANE, index as u32 + 1)
    }
}

/// Time grid and initial data of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub epsilon: f64,
    pub t_end: f64,
    pub dt_slow: f64,
    pub dt_fast: f64,
    pub initial_u: FieldVector,
    pub initial_v: FieldVector,
    /// Regularity index reported in diagnostics; does not affect stepping.
    pub theta: f64,
}

/// `x / step` rounded, if it is an integer up to relative tolerance `1e-9`.
pub(crate) fn integer_ratio(x: f64, step: f64) -> Option<usize> {
    let r = x / step;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * n.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl SimConfig {
    /// Config with `dt_fast` chosen by [`SlowFastSystem::auto_dt_fast`].
    pub fn auto(
        system: &SlowFastSystem,
        epsilon: f64,
        t_end: f64,
        dt_slow: f64,
        initial_u: FieldVector,
        initial_v: FieldVector,
    ) -> Self {
        Self {
            epsilon,
            t_end,
            dt_slow,
            dt_fast: system.auto_dt_fast(epsilon, dt_slow),
            initial_u,
            initial_v,
            theta: 0.0,
        }
    }

    pub fn validate(&self, system: &SlowFastSystem) -> Result<()> {
        let n = system.n_modes();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("t_end", "must be positive"));
        }
        if !(self.dt_slow > 0.0) {
            return Err(Error::config("dt_slow", "must be positive"));
        }
        if !(self.dt_fast > 0.0) {
            return Err(Error::config("dt_fast", "must be positive"));
        }
        if self.dt_fast > self.dt_slow * (1.0 + 1e-12) {
            return Err(Error::config(
                "dt_fast",
                format!("{} exceeds dt_slow = {}", self.dt_fast, self.dt_slow),
            ));
        }
        if integer_ratio(self.t_end, self.dt_slow).is_none() {
            return Err(Error::config("dt_slow", "t_end / dt_slow must be an integer"));
        }
        if integer_ratio(self.dt_slow, self.dt_fast).is_none() {
            return Err(Error::config("dt_fast", "dt_slow / dt_fast must be an integer"));
        }
        let limit = system.max_dt_fast(self.epsilon);
        if self.dt_fast > limit * (1.0 + 1e-9) {
            return Err(Error::config(
                "dt_fast",
                format!(
                    "{} violates the stiffness guard dt_fast ≤ 0.2ε/(γ·α_N + α) = {limit}",
                    self.dt_fast
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::config("theta", "must lie in [0, 1)"));
        }
        if self.initial_u.len() != n || self.initial_v.len() != n {
            return Err(Error::config("initial_u", format!("initial data must have {n} modes")));
        }
        if !self.initial_u.is_finite() || !self.initial_v.is_finite() {
            return Err(Error::config("initial_u", "initial data must be finite"));
        }
        Ok(())
    }

    pub fn slow_steps(&self) -> usize {
        integer_ratio(self.t_end, self.dt_slow).unwrap_or(0)
    }

    pub fn fast_substeps(&self) -> usize {
        integer_ratio(self.dt_slow, self.dt_fast).unwrap_or(0)
    }
}

/// Recorded path. `u_path` and `v_path` are either empty or aligned with
/// `times`; values are post-jump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub u_path: Vec<FieldVector>,
    pub v_path: Vec<FieldVector>,
    pub sup_norm_u: f64,
    pub diagnostics: Diagnostics,
}

impl TrajectoryRecord {
    fn push(&mut self, t: f64, u: Option<&FieldVector>, v: Option<&FieldVector>) -> Result<()> {
        self.times.push(t);
        if let Some(u) = u {
            let n = u.norm();
            if !n.is_finite() {
                return Err(Error::numerical(t, "slow state norm is not finite"));
            }
            self.sup_norm_u = self.sup_norm_u.max(n);
            self.u_path.push(u.clone());
        }
        if let Some(v) = v {
            if !v.norm().is_finite() {
                return Err(Error::numerical(t, "fast state norm is not finite"));
            }
            self.v_path.push(v.clone());
        }
        Ok(())
    }

    /// CSV with columns `t,||u||,||v||` and, with `modes`, the coefficients
    /// `u_1..u_N,v_1..v_N`. Absent paths drop their columns.
    pub fn to_csv(&self, modes: bool) -> String {
        let has_u = !self.u_path.is_empty();
        let has_v = !self.v_path.is_empty();
        let n = self.u_path.first().or(self.v_path.first()).map_or(0, |f| f.len());
        let mut out = String::from("t");
        if has_u {
            out.push_str(",||u||");
        }
        if has_v {
            out.push_str(",||v||");
        }
        if modes {
            for (flag, name) in [(has_u, "u"), (has_v, "v")] {
                if flag {
                    for k in 1..=n {
                        let _ = write!(out, ",{name}_{k}");
                    }
                }
            }
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            if has_u {
                let _ = write!(out, ",{:.16e}", self.u_path[i].norm());
            }
            if has_v {
                let _ = write!(out, ",{:.16e}", self.v_path[i].norm());
            }
            if modes {
                for (flag, path) in [(has_u, &self.u_path), (has_v, &self.v_path)] {
                    if flag {
                        for c in path[i].coeffs() {
                            let _ = write!(out, ",{c:.16e}");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, modes: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(modes)).map_err(|e| Error::io(path, e))
    }
}

/// Welford running mean of fields; bitwise exact for constant input.
#[derive(Debug, Clone)]
pub(crate) struct RunningMean {
    mean: FieldVector,
    count: usize,
}

impl RunningMean {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            mean: FieldVector::zeros(n),
            count: 0,
        }
    }

    pub(crate) fn add(&mut self, x: &FieldVector) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        for (m, v) in self.mean.coeffs_mut().iter_mut().zip(x.coeffs()) {
            *m += (v - *m) * w;
        }
    }

    pub(crate) fn count(&self) -> usize {
        self.count
    }

    pub(crate) fn mean(&self) -> &FieldVector {
        &self.mean
    }
}

/// Coupled slow-fast trajectory recorded at every slow step.
pub fn simulate_coupled(
    system: &SlowFastSystem,
    config: &SimConfig,
    streams: &mut ReplicaStreams,
) -> Result<TrajectoryRecord> {
    config.validate(system)?;
    let b = &system.basis;
    let c = &system.coefficients;
    let slow = system.slow_propagator(config.dt_slow)?;
    let fast = system.fast_propagator(config.dt_fast, config.epsilon)?;
    let m = config.fast_substeps();
    let mut u = config.initial_u.clone();
    let mut v = config.initial_v.clone();
    let mut rec = TrajectoryRecord::default();
    rec.push(0.0, Some(&u), Some(&v))?;
    let mut diag = Diagnostics::default();
    let mut vp = vec![0.0; b.quadrature_points()];
    for n in 0..config.slow_steps() {
        let t = n as f64 * config.dt_slow;
        let up = b.to_physical(&u);
        let mut drift = RunningMean::new(b.n_modes());
        for j in 0..m {
            let tj = t + j as f64 * config.dt_fast;
            b.to_physical_into(&v, &mut vp);
            if c.b1.is_some() {
                drift.add(&c.b1_grid(b, tj, &up, &vp)?);
            }
            v = system.fast_step_grid(
                &fast,
                tj,
                &up,
                &v,
                &vp,
                config.epsilon,
                &mut streams.w2,
                &mut streams.n2,
                &mut diag,
            )?;
        }
        u = system.step_slow_with_drift(&slow, t, &u, drift.mean(), &mut streams.w1, &mut streams.n1, &mut diag)?;
        rec.push((n + 1) as f64 * config.dt_slow, Some(&u), Some(&v))?;
    }
    rec.diagnostics = diag;
    Ok(rec)
}

/// Frozen fast equation `v^x(t; s, y)` at `ε = 1`, recorded every step.
#[allow(clippy::too_many_arguments)]
pub fn frozen_fast(
    system: &SlowFastSystem,
    x: &FieldVector,
    y: &FieldVector,
    s: f64,
    t_end: f64,
    dt: f64,
    w2: &mut RandomStream,
    n2: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    if !(s < t_end) {
        return Err(Error::Contract(format!(
            "frozen_fast needs s < t_end, got {s} ≥ {t_end}"
        )));
    }
    let steps = integer_ratio(t_end - s, dt).ok_or_else(|| {
        Error::config(
            "dt",
            format!("(t_end − s) / dt = {} is not an integer", (t_end - s) / dt),
        )
    })?;
    let prop = system.fast_propagator(dt, 1.0)?;
    let b = &system.basis;
    let xp = b.to_physical(x);
    let mut vp = vec![0.0; b.quadrature_points()];
    let mut v = y.clone();
    let mut rec = TrajectoryRecord::default();
    let mut diag = Diagnostics::default();
    rec.push(s, Some(x), Some(&v))?;
    for i in 0..steps {
        let t = s + i as f64 * dt;
        b.to_physical_into(&v, &mut vp);
        v = system.fast_step_grid(&prop, t, &xp, &v, &vp, 1.0, w2, n2, &mut diag)?;
        rec.push(s + (i + 1) as f64 * dt, Some(x), Some(&v))?;
    }
    rec.diagnostics = diag;
    Ok(rec)
}

/// Block length of the Khasminskii partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockLength {
    /// `δ_ε = κ ε ln(1/ε)`
    Kappa(f64),
    Fixed(f64),
}

impl BlockLength {
    /// `δ_ε` rounded to a whole number (≥ 1) of slow steps, in slow steps.
    pub fn slow_steps(&self, config: &SimConfig) -> Result<usize> {
        let delta = match *self {
            BlockLength::Kappa(k) => {
                if !(k > 0.0 && k < 1.0) {
                    return Err(Error::config("khasminskii.kappa", "must lie in (0, 1)"));
                }
                k * config.epsilon * (1.0 / config.epsilon).ln()
            }
            BlockLength::Fixed(d) => d,
        };
        if !(delta >= 2.0 * config.dt_fast) {
            return Err(Error::config(
                "khasminskii.kappa",
                format!("block length δ = {delta} is below 2·dt_fast = {}", 2.0 * config.dt_fast),
            ));
        }
        Ok(((delta / config.dt_slow).round() as usize).max(1))
    }
}

/// Auxiliary fast process `v̂_ε`: on each block the slow argument is frozen
/// at `u_ε` of the block start. Pass fresh copies of the streams used for
/// `v_ε` to obtain the coupling. `u_record` must come from
/// [`simulate_coupled`] with `config`.
pub fn khasminskii_auxiliary(
    system: &SlowFastSystem,
    u_record: &TrajectoryRecord,
    config: &SimConfig,
    block: BlockLength,
    streams: &mut ReplicaStreams,
) -> Result<TrajectoryRecord> {
    config.validate(system)?;
    let block_steps = block.slow_steps(config)?;
    let steps = config.slow_steps();
    if u_record.u_path.len() != steps + 1 {
        return Err(Error::Contract(format!(
            "slow record has {} points, expected {}",
            u_record.u_path.len(),
            steps + 1
        )));
    }
    let b = &system.basis;
    let fast = system.fast_propagator(config.dt_fast, config.epsilon)?;
    let m = config.fast_substeps();
    let mut v = config.initial_v.clone();
    let mut rec = TrajectoryRecord::default();
    let mut diag = Diagnostics::default();
    let mut vp = vec![0.0; b.quadrature_points()];
    let mut frozen = u_record.u_path[0].clone();
    let mut up = b.to_physical(&frozen);
    rec.push(0.0, Some(&frozen), Some(&v))?;
    for n in 0..steps {
        if n % block_steps == 0 {
            frozen = u_record.u_path[n].clone();
            up = b.to_physical(&frozen);
        }
        let t = n as f64 * config.dt_slow;
        for j in 0..m {
            let tj = t + j as f64 * config.dt_fast;
            b.to_physical_into(&v, &mut vp);
            v = system.fast_step_grid(
                &fast,
                tj,
                &up,
                &v,
                &vp,
                config.epsilon,
                &mut streams.w2,
                &mut streams.n2,
                &mut diag,
            )?;
        }
        rec.push((n + 1) as f64 * config.dt_slow, Some(&frozen), Some(&v))?;
    }
    rec.diagnostics = diag;
    Ok(rec)
}

/// One row of the increment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementRow {
    pub lag: f64,
    /// `Ê ‖u(t+h) − u(t)‖²` averaged over anchors and replicas.
    pub mean: f64,
    /// Standard error across replicas (across anchors for one record).
    pub stderr: f64,
}

/// Mean squared slow increments at each lag. Lags must be whole multiples of
/// the (uniform) record spacing and fit inside the horizon.
pub fn holder_increment_stats(records: &[TrajectoryRecord], lags: &[f64]) -> Result<Vec<IncrementRow>> {
    let first = records.first().ok_or_else(|| Error::Contract("no records".into()))?;
    if first.times.len() < 2 {
        return Err(Error::Contract("records need at least two points".into()));
    }
    let spacing = first.times[1] - first.times[0];
    let points = first.times.len();
    let mut rows = Vec::with_capacity(lags.len());
    for &lag in lags {
        if lag == 0.0 {
            rows.push(IncrementRow {
                lag,
                mean: 0.0,
                stderr: 0.0,
            });
            continue;
        }
        let shift = integer_ratio(lag, spacing).filter(|s| *s < points).ok_or_else(|| {
            Error::config(
                "harness.lags",
                format!("lag {lag} is not a multiple of {spacing} within the horizon"),
            )
        })?;
        let per_anchor = |r: &TrajectoryRecord| -> Vec<f64> {
            (0..points - shift)
                .map(|i| r.u_path[i + shift].distance(&r.u_path[i]).powi(2))
                .collect()
        };
        let est = if records.len() == 1 {
            MeanEstimate::from_samples(&per_anchor(first))
        } else {
            let means: Vec<f64> = records
                .iter()
                .map(|r| MeanEstimate::from_samples(&per_anchor(r)).mean)
                .collect();
            MeanEstimate::from_samples(&means)
        };
        rows.push(IncrementRow {
            lag,
            mean: est.mean,
            stderr: est.stderr,
        });
    }
    Ok(rows)
}
