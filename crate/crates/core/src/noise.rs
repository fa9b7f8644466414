//! Q-Wiener increments, compound Poisson jumps, and addressable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed with stream
//! id `replica << 32 | lane << 2 | channel`. A given `(seed, replica, lane,
//! channel)` therefore always yields the same sequence, independent of which
//! thread or in which order replicas run.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::coefficients::{CoefficientSet, JumpChannel};
use crate::spectral::quadrature::gauss_legendre;
use crate::spectral::{FieldVector, ScalarLaw, SpectralBasis};
use crate::{Error, Result};

/// Largest admissible expected jump count in one step.
pub const MAX_EXPECTED_JUMPS: f64 = 1e7;

/// Noise channel tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    W1,
    W2,
    N1,
    N2,
}

impl Channel {
    fn index(self) -> u64 {
        match self {
            Channel::W1 => 0,
            Channel::W2 => 1,
            Channel::N1 => 2,
            Channel::N2 => 3,
        }
    }
}

/// Largest lane index; lanes address independent copies of a channel
/// within one replica.
pub const MAX_LANE: u32 = (1 << 30) - 1;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

#[derive(Clone)]
pub struct RandomStream {
    seed: u64,
    replica: u32,
    lane: u32,
    channel: Channel,
    rng: ChaCha8Rng,
}

impl fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomStream")
            .field("seed", &self.seed)
            .field("replica", &self.replica)
            .field("lane", &self.lane)
            .field("channel", &self.channel)
            .finish_non_exhaustive()
    }
}

impl RandomStream {
    pub fn new(seed: u64, replica: u32, lane: u32, channel: Channel) -> Self {
        assert!(lane <= MAX_LANE, "lane {lane} exceeds {MAX_LANE}");
        let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
        rng.set_stream(((replica as u64) << 32) | ((lane as u64) << 2) | channel.index());
        Self {
            seed,
            replica,
            lane,
            channel,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u32 {
        self.replica
    }

    pub fn lane(&self) -> u32 {
        self.lane
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let d = Poisson::new(mean).expect("finite positive Poisson mean");
        d.sample(&mut self.rng) as u64
    }
}

/// Q-Wiener spectrum of one channel together with its trace-admissibility exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub q_eigenvalues: Vec<f64>,
    /// `ρ ∈ (2, ∞]`
    pub rho: f64,
    pub beta: f64,
}

impl NoiseSpec {
    pub fn new(q_eigenvalues: Vec<f64>, rho: f64, beta: f64) -> Result<Self> {
        if let Some(k) = q_eigenvalues.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config(
                format!("eigenvalues[{k}]"),
                "Q eigenvalues must be finite and nonnegative",
            ));
        }
        if !(rho > 2.0) {
            return Err(Error::config("rho", "must lie in (2, ∞]"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config("beta", "must be a positive finite real"));
        }
        Ok(Self {
            q_eigenvalues,
            rho,
            beta,
        })
    }

    /// `λ_k = scale · k^{−decay}` for `k = 1..=n`.
    pub fn power_law(n: usize, scale: f64, decay: f64, rho: f64, beta: f64) -> Result<Self> {
        Self::new((1..=n).map(|k| scale * (k as f64).powf(-decay)).collect(), rho, beta)
    }

    /// No Wiener forcing.
    pub fn zero(n: usize) -> Self {
        Self {
            q_eigenvalues: vec![0.0; n],
            rho: f64::INFINITY,
            beta: 1.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.q_eigenvalues.iter().all(|l| *l == 0.0)
    }
}

/// `λ_k sqrt(dt) N(0, 1)` per mode. One normal is drawn per mode even when
/// `λ_k = 0`, so the stream position depends only on the step count.
pub fn sample_wiener_increment(spec: &NoiseSpec, stream: &mut RandomStream, dt: f64) -> FieldVector {
    let h = dt.sqrt();
    FieldVector::from_coeffs(spec.q_eigenvalues.iter().map(|l| l * h * stream.normal()).collect())
}

#[derive(Clone)]
enum Marks {
    Discrete {
        atoms: Vec<(f64, f64)>,
        cumulative: Vec<f64>,
    },
    Density {
        density: ScalarLaw,
        lower: f64,
        upper: f64,
        nodes: Vec<(f64, f64)>,
        envelope: f64,
    },
}

/// Finite Lévy measure `ν` on the mark space.
#[derive(Clone)]
pub struct LevyMeasureSpec {
    marks: Marks,
    total_mass: f64,
}

impl fmt::Debug for LevyMeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.marks {
            Marks::Discrete { atoms, .. } => format!("discrete({} atoms)", atoms.len()),
            Marks::Density {
                lower, upper, nodes, ..
            } => {
                format!("density on [{lower}, {upper}], {} nodes", nodes.len())
            }
        };
        f.debug_struct("LevyMeasureSpec")
            .field("marks", &kind)
            .field("total_mass", &self.total_mass)
            .finish()
    }
}

impl LevyMeasureSpec {
    /// Point masses `(z, mass)`.
    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for (i, (z, m)) in atoms.iter().enumerate() {
            if !z.is_finite() {
                return Err(Error::config(format!("marks[{i}]"), "mark value must be finite"));
            }
            if !(m.is_finite() && *m >= 0.0) {
                return Err(Error::config(
                    format!("marks[{i}]"),
                    "mass must be finite and nonnegative",
                ));
            }
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (_, m) in &atoms {
            acc += m;
            cumulative.push(acc);
        }
        Ok(Self {
            total_mass: acc,
            marks: Marks::Discrete { atoms, cumulative },
        })
    }

    /// Density on `[lower, upper]`, integrated with an `n_nodes`-point
    /// Gauss–Legendre rule.
    pub fn density(density: ScalarLaw, lower: f64, upper: f64, n_nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::config("density", "needs finite bounds lower < upper"));
        }
        if n_nodes == 0 {
            return Err(Error::config("density.nodes", "must be positive"));
        }
        let (z, w) = gauss_legendre(n_nodes, lower, upper);
        let mut nodes = Vec::with_capacity(n_nodes);
        for (z, w) in z.into_iter().zip(w) {
            let f = density(z);
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::config(
                    "density",
                    format!("density({z}) = {f} is not a finite nonnegative value"),
                ));
            }
            nodes.push((z, w * f));
        }
        let mut envelope: f64 = 0.0;
        for i in 0..=1024 {
            let z = lower + (upper - lower) * i as f64 / 1024.0;
            envelope = envelope.max(density(z));
        }
        let total_mass = nodes.iter().map(|(_, m)| m).sum();
        Ok(Self {
            total_mass,
            marks: Marks::Density {
                density,
                lower,
                upper,
                nodes,
                envelope: 1.25 * envelope,
            },
        })
    }

    /// The zero measure.
    pub fn none() -> Self {
        Self {
            marks: Marks::Discrete {
                atoms: Vec::new(),
                cumulative: Vec::new(),
            },
            total_mass: 0.0,
        }
    }

    /// `Λ = ν(Z)`
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// `(z, mass)` pairs whose weighted sums integrate against `ν`.
    pub fn quadrature(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let slice = match &self.marks {
            Marks::Discrete { atoms, .. } => atoms.as_slice(),
            Marks::Density { nodes, .. } => nodes.as_slice(),
        };
        slice.iter().copied()
    }

    /// One mark drawn from `ν / Λ`.
    fn sample_mark(&self, stream: &mut RandomStream) -> f64 {
        match &self.marks {
            Marks::Discrete { atoms, cumulative } => {
                let target = stream.uniform() * self.total_mass;
                let i = cumulative.partition_point(|c| *c <= target).min(atoms.len() - 1);
                atoms[i].0
            }
            Marks::Density {
                density,
                lower,
                upper,
                envelope,
                ..
            } => loop {
                let z = lower + (upper - lower) * stream.uniform();
                if stream.uniform() * envelope < density(z) {
                    break z;
                }
            },
        }
    }
}

/// One jump: time offset in `(0, dt]` and mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub offset: f64,
    pub mark: f64,
}

/// Compound Poisson jumps over one step of length `dt` at intensity
/// `rate_scale · ν`, sorted by time.
pub fn sample_jump_batch(
    levy: &LevyMeasureSpec,
    stream: &mut RandomStream,
    dt: f64,
    rate_scale: f64,
) -> Result<Vec<Jump>> {
    let mean = levy.total_mass * rate_scale * dt;
    if mean > MAX_EXPECTED_JUMPS {
        return Err(Error::config(
            "dt",
            format!("expected {mean:.3e} jumps per step exceeds {MAX_EXPECTED_JUMPS:e}; shrink the step"),
        ));
    }
    if levy.total_mass == 0.0 {
        return Ok(Vec::new());
    }
    let count = stream.poisson(mean);
    let mut jumps: Vec<Jump> = (0..count)
        .map(|_| {
            let offset = dt * (1.0 - stream.uniform());
            let mark = levy.sample_mark(stream);
            Jump { offset, mark }
        })
        .collect();
    jumps.sort_by(|a, b| a.offset.total_cmp(&b.offset));
    Ok(jumps)
}

/// Grid-level compensated jump sum with the state frozen at the left endpoint.
#[allow(clippy::too_many_arguments)]
pub(crate) fn compensated_jump_grid(
    levy: &LevyMeasureSpec,
    jumps: &[Jump],
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    channel: JumpChannel,
    t: f64,
    u: &[f64],
    v: &[f64],
    dt: f64,
    rate_scale: f64,
) -> Result<FieldVector> {
    let mut acc = basis.zeros();
    if !cset.has_jump_coefficient(channel) {
        return Ok(acc);
    }
    for j in jumps {
        acc += &cset.g_grid(basis, channel, t, u, v, j.mark)?;
    }
    if levy.total_mass() > 0.0 {
        let comp = cset.compensator_grid(basis, levy, channel, t, u, v)?;
        acc.axpy(-dt * rate_scale, &comp);
    }
    Ok(acc)
}

/// `Σ_j G(t, u, v, z_j) − dt · rate_scale · ∫ G(t, u, v, z) ν(dz)`.
#[allow(clippy::too_many_arguments)]
pub fn compensated_jump_integral(
    levy: &LevyMeasureSpec,
    jumps: &[Jump],
    cset: &CoefficientSet,
    basis: &SpectralBasis,
    channel: JumpChannel,
    t: f64,
    u: &FieldVector,
    v: &FieldVector,
    dt: f64,
    rate_scale: f64,
) -> Result<FieldVector> {
    compensated_jump_grid(
        levy,
        jumps,
        cset,
        basis,
        channel,
        t,
        &basis.to_physical(u),
        &basis.to_physical(v),
        dt,
        rate_scale,
    )
}

/// Partial sums and exponent ratio of the trace admissibility condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2Report {
    /// `Σ_k λ_k^ρ ‖e_k‖_∞²`; for `ρ = ∞`, `sup_k λ_k ‖e_k‖_∞²`.
    pub kappa: f64,
    /// `Σ_k α_k^{−β} ‖e_k‖_∞²`
    pub zeta: f64,
    /// `β(ρ − 2)/ρ`, which is `β` for `ρ = ∞`.
    pub ratio: f64,
    pub pass: bool,
}

pub fn check_a2_admissibility(spec: &NoiseSpec, basis: &SpectralBasis) -> A2Report {
    let e2 = basis.eigenfunction_sup_norm().powi(2);
    let (kappa, ratio) = if spec.rho.is_infinite() {
        let sup = spec.q_eigenvalues.iter().fold(0.0f64, |m, l| m.max(*l));
        (sup * e2, spec.beta)
    } else {
        let terms: Vec<f64> = spec.q_eigenvalues.iter().map(|l| l.powf(spec.rho) * e2).collect();
        (
            crate::stats::pairwise_sum(&terms),
            spec.beta * (spec.rho - 2.0) / spec.rho,
        )
    };
    let terms: Vec<f64> = basis.eigenvalues().iter().map(|a| a.powf(-spec.beta) * e2).collect();
    let zeta = crate::stats::pairwise_sum(&terms);
    A2Report {
        kappa,
        zeta,
        ratio,
        pass: ratio < 1.0 && kappa.is_finite() && zeta.is_finite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{proportion, MeanEstimate};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn stream(ch: Channel) -> RandomStream {
        RandomStream::new(42, 0, 0, ch)
    }

    #[test]
    fn same_address_same_sequence() {
        let mut a = RandomStream::new(9, 3, 5, Channel::N2);
        let mut b = RandomStream::new(9, 3, 5, Channel::N2);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        let mut c = RandomStream::new(9, 3, 6, Channel::N2);
        assert_ne!(a.normal().to_bits(), c.normal().to_bits());
    }

    #[test]
    fn null_mode_gives_exact_zero() {
        let spec = NoiseSpec::new(vec![1.0, 0.0, 0.5], 4.0, 1.0).unwrap();
        let mut s = stream(Channel::W1);
        for _ in 0..100 {
            assert_eq!(sample_wiener_increment(&spec, &mut s, 0.3)[1], 0.0);
        }
    }

    #[test]
    fn wiener_mode_variance() {
        let spec = NoiseSpec::new(vec![1.0], 4.0, 1.0).unwrap();
        let mut s = stream(Channel::W1);
        let x: Vec<f64> = (0..100_000)
            .map(|_| sample_wiener_increment(&spec, &mut s, 0.25)[0].powi(2))
            .collect();
        let var = MeanEstimate::from_samples(&x).mean;
        assert!((0.2375..=0.2625).contains(&var), "{var}");
    }

    #[test]
    fn wiener_half_steps_sum_to_full_step_in_law() {
        let spec = NoiseSpec::new(vec![0.7], 4.0, 1.0).unwrap();
        let mut s = stream(Channel::W2);
        let full: Vec<f64> = (0..100_000)
            .map(|_| sample_wiener_increment(&spec, &mut s, 0.2)[0].powi(2))
            .collect();
        let halves: Vec<f64> = (0..100_000)
            .map(|_| {
                (sample_wiener_increment(&spec, &mut s, 0.1)[0] + sample_wiener_increment(&spec, &mut s, 0.1)[0])
                    .powi(2)
            })
            .collect();
        let (a, b) = (
            MeanEstimate::from_samples(&full).mean,
            MeanEstimate::from_samples(&halves).mean,
        );
        assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
    }

    #[test]
    fn channels_are_uncorrelated() {
        let mut a = stream(Channel::W1);
        let mut b = stream(Channel::W2);
        let prod: Vec<f64> = (0..100_000).map(|_| a.normal() * b.normal()).collect();
        let est = MeanEstimate::from_samples(&prod);
        assert!(est.mean.abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn poisson_mean_count() {
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 2.0)]).unwrap();
        let mut s = stream(Channel::N2);
        let counts: Vec<f64> = (0..50_000)
            .map(|_| sample_jump_batch(&levy, &mut s, 1.0, 2.0).unwrap().len() as f64)
            .collect();
        let est = MeanEstimate::from_samples(&counts);
        assert!((est.mean - 4.0).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn null_measure_never_jumps() {
        let levy = LevyMeasureSpec::none();
        let mut s = stream(Channel::N1);
        for _ in 0..1000 {
            assert!(sample_jump_batch(&levy, &mut s, 1.0, 5.0).unwrap().is_empty());
        }
    }

    #[test]
    fn probability_of_no_jump() {
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 1.0)]).unwrap();
        let mut s = stream(Channel::N1);
        let m = 100_000;
        let zeros = (0..m)
            .filter(|_| sample_jump_batch(&levy, &mut s, 0.1, 1.0).unwrap().is_empty())
            .count();
        let (p, se) = proportion(zeros, m);
        assert!((p - (-0.1f64).exp()).abs() <= 3.0 * se, "{p} ± {se}");
    }

    #[test]
    fn jump_times_sorted_within_step() {
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 1.0), (-2.0, 3.0)]).unwrap();
        let mut s = stream(Channel::N2);
        let jumps = sample_jump_batch(&levy, &mut s, 0.5, 20.0).unwrap();
        assert!(!jumps.is_empty());
        assert!(jumps.windows(2).all(|w| w[0].offset <= w[1].offset));
        assert!(jumps.iter().all(|j| j.offset > 0.0 && j.offset <= 0.5));
        assert!(jumps.iter().all(|j| j.mark == 1.0 || j.mark == -2.0));
    }

    #[test]
    fn oversized_intensity_is_a_config_error() {
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 1.0)]).unwrap();
        let mut s = stream(Channel::N2);
        assert!(matches!(
            sample_jump_batch(&levy, &mut s, 1.0, 1e8),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn density_marks_mass_and_range() {
        let levy = LevyMeasureSpec::density(Arc::new(|z: f64| 3.0 * z * z), 0.0, 1.0, 32).unwrap();
        assert!((levy.total_mass() - 1.0).abs() < 1e-12);
        let mut s = stream(Channel::N1);
        let marks: Vec<f64> = (0..20_000)
            .flat_map(|_| sample_jump_batch(&levy, &mut s, 1.0, 1.0).unwrap())
            .map(|j| j.mark)
            .collect();
        let est = MeanEstimate::from_samples(&marks);
        // E z = ∫ 3z³ dz = 3/4
        assert!((est.mean - 0.75).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn compensated_integral_without_jumps_is_minus_compensator() {
        let basis = SpectralBasis::with_default_grid(PI, 4).unwrap();
        let mut c = CoefficientSet::zero(1.0);
        c.g2 = Some(Arc::new(|_, _, _, v, z| 0.3 * z * v));
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 2.0)]).unwrap();
        let v = FieldVector::mode(4, 1, 1.0);
        let out = compensated_jump_integral(
            &levy,
            &[],
            &c,
            &basis,
            JumpChannel::Fast,
            0.0,
            &basis.zeros(),
            &v,
            0.1,
            10.0,
        )
        .unwrap();
        assert!(out.distance(&FieldVector::mode(4, 1, -0.6)) < 1e-13);

        let zero = CoefficientSet::zero(1.0);
        let jumps = [Jump {
            offset: 0.05,
            mark: 1.0,
        }];
        let out =
            compensated_jump_integral(&levy, &jumps, &zero, &basis, JumpChannel::Fast, 0.0, &v, &v, 0.1, 10.0).unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn symmetric_compensated_jumps_are_centered() {
        let basis = SpectralBasis::with_default_grid(PI, 2).unwrap();
        let mut c = CoefficientSet::zero(1.0);
        c.g2 = Some(Arc::new(|_, _, _, v, z| z * v));
        let levy = LevyMeasureSpec::discrete(vec![(1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let v = FieldVector::from_coeffs(vec![1.0, -0.5]);
        let (u, vp) = (basis.to_physical(&basis.zeros()), basis.to_physical(&v));
        let mut s = stream(Channel::N2);
        let mut samples = vec![Vec::new(), Vec::new()];
        for _ in 0..100_000 {
            let jumps = sample_jump_batch(&levy, &mut s, 0.01, 10.0).unwrap();
            let out =
                compensated_jump_grid(&levy, &jumps, &c, &basis, JumpChannel::Fast, 0.0, &u, &vp, 0.01, 10.0).unwrap();
            samples[0].push(out[0]);
            samples[1].push(out[1]);
        }
        for s in &samples {
            let est = MeanEstimate::from_samples(s);
            assert!(est.mean.abs() <= 3.0 * est.stderr, "{est:?}");
        }
    }

    #[test]
    fn a2_kappa_partial_sum() {
        let basis = SpectralBasis::with_default_grid(PI, 64).unwrap();
        let spec = NoiseSpec::power_law(64, 1.0, 2.0, 4.0, 1.0).unwrap();
        let r = check_a2_admissibility(&spec, &basis);
        // Oracle: ζ(8) = π⁸/9450.
        let limit = 2.0 / PI * PI.powi(8) / 9450.0;
        assert!((r.kappa - limit).abs() < 1e-10, "{} vs {limit}", r.kappa);
        assert_eq!(r.ratio, 0.5);
        assert!(r.pass);
    }

    #[test]
    fn a2_ratio_failure() {
        let basis = SpectralBasis::with_default_grid(PI, 4).unwrap();
        let spec = NoiseSpec::power_law(4, 1.0, 2.0, 6.0, 3.0).unwrap();
        let r = check_a2_admissibility(&spec, &basis);
        assert_eq!(r.ratio, 2.0);
        assert!(!r.pass);
    }

    #[test]
    fn invalid_spectra_rejected() {
        assert!(NoiseSpec::new(vec![-1.0], 4.0, 1.0).is_err());
        assert!(NoiseSpec::new(vec![1.0], 2.0, 1.0).is_err());
        assert!(NoiseSpec::new(vec![1.0], f64::INFINITY, 1.0).is_ok());
    }
}
