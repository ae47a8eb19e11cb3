//! Second-order forward-mode automatic differentiation over a fixed number
//! of local variables.

use std::ops::{Add, Mul, Neg, Sub};

/// A value with its gradient and Hessian with respect to `N` seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// The `i`-th independent variable at value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    /// Applies a scalar function with first and second derivatives `d1`, `d2`.
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let mut out = Self::constant(f);
        for i in 0..N {
            out.g[i] = d1 * self.g[i];
            for j in 0..N {
                out.h[i][j] = d1 * self.h[i][j] + d2 * self.g[i] * self.g[j];
            }
        }
        out
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    pub fn scale(self, k: f64) -> Self {
        let mut out = self;
        out.v *= k;
        for i in 0..N {
            out.g[i] *= k;
            for j in 0..N {
                out.h[i][j] *= k;
            }
        }
        out
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..N {
            self.g[i] += o.g[i];
            for j in 0..N {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for i in 0..N {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
            for j in 0..N {
                out.h[i][j] =
                    self.v * o.h[i][j] + o.v * self.h[i][j] + self.g[i] * o.g[j] + self.g[j] * o.g[i];
            }
        }
        out
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.scale(k)
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, k: f64) -> Self {
        self.v += k;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_trig_derivatives() {
        // f(x, y) = x² sin(y)
        let (x0, y0) = (1.3, 0.7);
        let x = Jet::<2>::var(x0, 0);
        let y = Jet::<2>::var(y0, 1);
        let f = x * x * y.sin();
        assert!((f.v - x0 * x0 * y0.sin()).abs() < 1e-15);
        assert!((f.g[0] - 2.0 * x0 * y0.sin()).abs() < 1e-14);
        assert!((f.g[1] - x0 * x0 * y0.cos()).abs() < 1e-14);
        assert!((f.h[0][0] - 2.0 * y0.sin()).abs() < 1e-14);
        assert!((f.h[0][1] - 2.0 * x0 * y0.cos()).abs() < 1e-14);
        assert!((f.h[1][0] - f.h[0][1]).abs() < 1e-15);
        assert!((f.h[1][1] + x0 * x0 * y0.sin()).abs() < 1e-14);
    }

    #[test]
    fn cos_of_difference() {
        let a = Jet::<2>::var(0.4, 0);
        let b = Jet::<2>::var(0.1, 1);
        let f = (a - b).cos();
        assert!((f.g[0] + 0.3f64.sin()).abs() < 1e-15);
        assert!((f.g[1] - 0.3f64.sin()).abs() < 1e-15);
        assert!((f.h[0][1] - 0.3f64.cos()).abs() < 1e-15);
    }
}
