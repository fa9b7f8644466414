//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration.

use crate::{Error, Result};

/// Gauss–Legendre nodes and weights on `[a, b]`, nodes in increasing order.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root.
        nodes[n - 1 - i] = mid + half * x;
        nodes[i] = mid - half * x;
        weights[n - 1 - i] = half * w;
        weights[i] = half * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive G7/K15 integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. Fails when the subdivision depth limit is reached.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
        let (value, err) = kronrod15(f, a, b);
        if err <= tol || (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            return Ok(value);
        }
        if depth == 0 {
            return Err(Error::numerical(
                a,
                format!("adaptive quadrature did not converge on [{a}, {b}]"),
            ));
        }
        let m = 0.5 * (a + b);
        Ok(recurse(f, a, m, 0.5 * tol, depth - 1)? + recurse(f, m, b, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    recurse(f, a, b, tol.max(f64::MIN_POSITIVE), 40)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5, 0.0, 2.0);
        // degree 9 = 2n - 1
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((q - 2f64.powi(10) / 10.0).abs() < 1e-11);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn kronrod_adaptive_on_oscillatory_integrand() {
        let v = integrate_adaptive(&|r: f64| (10.0 * r).cos(), 0.0, 3.0, 1e-13).unwrap();
        assert!((v - (30f64).sin() / 10.0).abs() < 1e-12);
    }
}
