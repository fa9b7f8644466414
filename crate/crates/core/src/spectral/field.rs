use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub, SubAssign};

/// Element of `L²(0, L)` stored as its first `N` sine-mode coefficients.
///
/// Because the basis is orthonormal, [`FieldVector::norm`] is the `L²` norm
/// of the represented function.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    coeffs: Vec<f64>,
}

impl FieldVector {
    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_modes],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// `value · e_k` for the 1-based mode index `k`.
    pub fn mode(n_modes: usize, k: usize, value: f64) -> Self {
        assert!(k >= 1 && k <= n_modes, "mode {k} out of range 1..={n_modes}");
        let mut v = Self::zeros(n_modes);
        v.coeffs[k - 1] = value;
        v
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn norm_squared(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<usize> for FieldVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coeffs[i]
    }
}

impl IndexMut<usize> for FieldVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coeffs[i]
    }
}

impl AddAssign<&FieldVector> for FieldVector {
    fn add_assign(&mut self, rhs: &FieldVector) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&FieldVector> for FieldVector {
    fn sub_assign(&mut self, rhs: &FieldVector) {
        self.axpy(-1.0, rhs);
    }
}

impl Add<&FieldVector> for &FieldVector {
    type Output = FieldVector;
    fn add(self, rhs: &FieldVector) -> FieldVector {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&FieldVector> for &FieldVector {
    type Output = FieldVector;
    fn sub(self, rhs: &FieldVector) -> FieldVector {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Mul<f64> for &FieldVector {
    type Output = FieldVector;
    fn mul(self, rhs: f64) -> FieldVector {
        let mut out = self.clone();
        out.scale(rhs);
        out
    }
}
