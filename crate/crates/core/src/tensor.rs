use std::ops::{Add, Mul, Sub};

use serde::Serialize;

/// Dense 2x2 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn identity() -> Self {
        Self::scalar(1.0)
    }

    pub fn scalar(c: f64) -> Self {
        Mat2([[c, 0.0], [0.0, c]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    pub fn sym(a11: f64, a12: f64, a22: f64) -> Self {
        Mat2([[a11, a12], [a12, a22]])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let m = self.0;
        Mat2([[f(m[0][0]), f(m[0][1])], [f(m[1][0]), f(m[1][1])]])
    }

    pub fn zip_map(&self, other: &Mat2, f: impl Fn(f64, f64) -> f64) -> Self {
        let (a, b) = (self.0, other.0);
        Mat2([
            [f(a[0][0], b[0][0]), f(a[0][1], b[0][1])],
            [f(a[1][0], b[1][0]), f(a[1][1], b[1][1])],
        ])
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        (self.0[0][1] - self.0[1][0]).abs()
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// `u^T A v`
    pub fn bilinear(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let av = self.mul_vec(v);
        u[0] * av[0] + u[1] * av[1]
    }

    /// Closed-form eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let a = self.0[0][0];
        let d = self.0[1][1];
        let b = 0.5 * (self.0[0][1] + self.0[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean - rad, mean + rad)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        self.zip_map(&rhs, |a, b| a + b)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        self.zip_map(&rhs, |a, b| a - b)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: f64) -> Mat2 {
        self.map(|a| a * rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_closed_form() {
        let (lo, hi) = Mat2::sym(2.0, 1.0, 2.0).eigenvalues();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
        let (lo, hi) = Mat2::diag(5.0, 4.0).eigenvalues();
        assert_eq!((lo, hi), (4.0, 5.0));
    }

    #[test]
    fn arithmetic() {
        let a = Mat2::sym(1.0, 2.0, 3.0);
        assert_eq!(a + a, a * 2.0);
        assert_eq!(a - a, Mat2::ZERO);
        assert_eq!(a.bilinear([1.0, 0.0], [0.0, 1.0]), 2.0);
    }
}
