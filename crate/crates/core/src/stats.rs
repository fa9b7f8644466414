//! Small Monte Carlo reduction helpers.
//!
//! Every reduction here is order-deterministic: inputs are consumed in slice
//! order with pairwise summation, so results do not depend on how replicas
//! were scheduled across threads.

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Sample standard deviation implied by `stderr`.
    pub fn std_dev(&self) -> f64 {
        self.stderr * (self.n as f64).sqrt()
    }
}

/// Proportion estimate with binomial standard error `sqrt(p(1-p)/M)`.
pub fn proportion(hits: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len(), "fit needs paired samples");
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}
