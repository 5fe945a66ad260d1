use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::Var;

/// Arithmetic shared by plain `f64` evaluation and tape recording, so the
/// simulator and cost functions have a single implementation.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant in the same arithmetic context as `self`.
    fn cst(&self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn min(self, o: Self) -> Self;
    fn max(self, o: Self) -> Self;
    fn clamp(self, lo: f64, hi: f64) -> Self;

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    fn sq(self) -> Self {
        self * self
    }

    fn sum(xs: &[Self]) -> Self;

    /// Euclidean norm with zero subgradient at the origin.
    fn norm(xs: &[Self]) -> Self;

    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// Inner product with constant coefficients.
    fn dot_const(a: &[Self], c: &[f64]) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn cst(&self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn powf(self, p: f64) -> f64 {
        f64::powf(self, p)
    }
    #[inline]
    fn atan2(self, x: f64) -> f64 {
        f64::atan2(self, x)
    }
    #[inline]
    fn min(self, o: f64) -> f64 {
        if self <= o {
            self
        } else {
            o
        }
    }
    #[inline]
    fn max(self, o: f64) -> f64 {
        if self >= o {
            self
        } else {
            o
        }
    }
    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> f64 {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
    fn sum(xs: &[f64]) -> f64 {
        xs.iter().sum()
    }
    fn norm(xs: &[f64]) -> f64 {
        xs.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn dot_const(a: &[f64], c: &[f64]) -> f64 {
        a.iter().zip(c).map(|(x, y)| x * y).sum()
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(&self) -> f64 {
        Var::value(self)
    }
    #[inline]
    fn cst(&self, c: f64) -> Self {
        Var::cst(self, c)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn powf(self, p: f64) -> Self {
        Var::powf(self, p)
    }
    fn atan2(self, x: Self) -> Self {
        Var::atan2(self, x)
    }
    fn min(self, o: Self) -> Self {
        Var::min(self, o)
    }
    fn max(self, o: Self) -> Self {
        Var::max(self, o)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        Var::clamp(self, lo, hi)
    }
    fn sum(xs: &[Self]) -> Self {
        xs[0].tape().sum(xs)
    }
    fn norm(xs: &[Self]) -> Self {
        xs[0].tape().norm(xs)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        a[0].tape().dot(a, b)
    }
    fn dot_const(a: &[Self], c: &[f64]) -> Self {
        a[0].tape().dot_const(a, c)
    }
}
