//! Flat parameter vectors.

use std::ops::Index;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Flat vector of trainable parameters.
///
/// The length is fixed at construction and every binary operation checks it.
/// Operations that can introduce NaN/Inf from finite inputs (`ensure_finite`
/// callers in the optimizers) surface that as [`Error::NonFinite`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<S> {
    values: Vec<S>,
}

impl<S: Real> ParamVector<S> {
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "parameter vectors are nonempty");
        Self {
            values: vec![S::zero(); len],
        }
    }

    pub fn filled(len: usize, value: S) -> Self {
        assert!(len > 0, "parameter vectors are nonempty");
        Self {
            values: vec![value; len],
        }
    }

    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn from_vec(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("parameter vector must be nonempty"));
        }
        let v = Self { values };
        v.ensure_finite("ParamVector::from_vec")?;
        Ok(v)
    }

    pub fn from_f64_slice(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&x| S::lit(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.values.iter()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|x| x.as_f64()).collect()
    }

    pub fn check_len(&self, other: &Self) -> Result<()> {
        check_len(self.len(), other.len())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, ctx: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::non_finite(ctx))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, a: S) -> Self {
        Self {
            values: self.values.iter().map(|&x| a * x).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: S, x: &Self) -> Result<()> {
        self.check_len(x)?;
        for (s, &xi) in self.values.iter_mut().zip(&x.values) {
            *s = *s + a * xi;
        }
        Ok(())
    }

    /// `a * self + b * other`
    pub fn lin_comb(&self, a: S, other: &Self, b: S) -> Result<Self> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.check_len(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> S {
        self.values.iter().map(|&x| x * x).sum()
    }

    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn dist_sq(&self, other: &Self) -> Result<S> {
        self.check_len(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        self.check_len(other)?;
        Ok(self.values.iter().zip(&other.values).fold(S::zero(), |m, (&a, &b)| {
            let d = (a - b).abs();
            if d > m {
                d
            } else {
                m
            }
        }))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

impl<S> Index<usize> for ParamVector<S> {
    type Output = S;

    fn index(&self, i: usize) -> &S {
        &self.values[i]
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Coordinate-wise sum by pairwise (tree) reduction in slice order.
///
/// The reduction tree depends only on `items.len()`, so the result is
/// independent of scheduling if the slice order is fixed.
pub fn pairwise_sum<S: Real>(items: &[ParamVector<S>]) -> Result<ParamVector<S>> {
    match items {
        [] => Err(Error::EmptyBatch),
        [one] => Ok(one.clone()),
        _ => {
            let mid = items.len() / 2;
            pairwise_sum(&items[..mid])?.add(&pairwise_sum(&items[mid..])?)
        }
    }
}

/// Coordinate-wise mean via [`pairwise_sum`].
pub fn pairwise_mean<S: Real>(items: &[ParamVector<S>]) -> Result<ParamVector<S>> {
    let sum = pairwise_sum(items)?;
    Ok(sum.scale(S::one() / S::lit(items.len() as f64)))
}
