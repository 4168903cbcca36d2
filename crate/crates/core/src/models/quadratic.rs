//! Analytic quadratic model `½ wᵀA w − bᵀw + c` with exact derivatives.

use super::linalg;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::{check_len, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel<S> {
    dim: usize,
    a: Vec<S>,
    b: ParamVector<S>,
    c: S,
    eigenvalues: Vec<S>,
}

impl<S: Real> QuadraticModel<S> {
    /// `a` is row-major `d×d`; it must be symmetric (to 1e-12, relative to
    /// its largest entry) and positive semidefinite.
    pub fn new(a: Vec<S>, b: ParamVector<S>, c: S) -> Result<Self> {
        let dim = b.len();
        check_len(dim * dim, a.len())?;
        if a.iter().any(|x| !x.is_finite()) || !c.is_finite() {
            return Err(Error::non_finite("QuadraticModel::new"));
        }
        let scale = a.iter().fold(S::one(), |m, x| m.max(x.abs()));
        if linalg::max_asymmetry(&a, dim) > S::lit(1e-12) * scale {
            return Err(Error::config("quadratic matrix A is not symmetric"));
        }
        let eigenvalues = linalg::symmetric_eigenvalues(&a, dim);
        let psd_tol = S::lit(1e-10) * scale;
        if eigenvalues[0] < -psd_tol {
            return Err(Error::config(format!(
                "quadratic matrix A is not positive semidefinite (min eigenvalue {})",
                eigenvalues[0]
            )));
        }
        Ok(Self {
            dim,
            a,
            b,
            c,
            eigenvalues,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = vec![S::zero(); dim * dim];
        for i in 0..dim {
            a[i * dim + i] = S::one();
        }
        Self::new(a, ParamVector::zeros(dim), S::zero()).expect("identity is SPD")
    }

    pub fn diagonal(diag: &[S], b: ParamVector<S>, c: S) -> Result<Self> {
        let d = diag.len();
        let mut a = vec![S::zero(); d * d];
        for (i, &x) in diag.iter().enumerate() {
            a[i * d + i] = x;
        }
        Self::new(a, b, c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[S] {
        &self.a
    }

    pub fn linear(&self) -> &ParamVector<S> {
        &self.b
    }

    pub fn offset(&self) -> S {
        self.c
    }

    /// Ascending eigenvalues of `A`.
    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    /// Gradient-Lipschitz constant: the largest eigenvalue of `A`.
    pub fn lipschitz(&self) -> S {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    pub fn loss(&self, w: &ParamVector<S>) -> Result<S> {
        Ok(self.loss_grad(w)?.0)
    }

    pub fn grad(&self, w: &ParamVector<S>) -> Result<ParamVector<S>> {
        Ok(self.loss_grad(w)?.1)
    }

    pub fn loss_grad(&self, w: &ParamVector<S>) -> Result<(S, ParamVector<S>)> {
        check_len(self.dim, w.len())?;
        let aw = linalg::matvec(&self.a, self.dim, w.as_slice());
        let half = S::lit(0.5);
        let quad: S = aw.iter().zip(w.iter()).map(|(&x, &y)| x * y).sum();
        let lin = self.b.dot(w)?;
        let loss = half * quad - lin + self.c;
        let g: Vec<S> = aw.iter().zip(self.b.iter()).map(|(&x, &bi)| x - bi).collect();
        Ok((loss, ParamVector::from_vec(g)?))
    }

    /// Exact Hessian-vector product `A v`; independent of the evaluation point.
    pub fn hvp(&self, v: &ParamVector<S>) -> Result<ParamVector<S>> {
        check_len(self.dim, v.len())?;
        ParamVector::from_vec(linalg::matvec(&self.a, self.dim, v.as_slice()))
    }

    /// The unique stationary point `A⁻¹ b` when `A` is positive definite.
    pub fn minimizer(&self) -> Result<ParamVector<S>> {
        let x = solve(&self.a, self.b.as_slice(), self.dim)
            .ok_or_else(|| Error::Unsupported("singular quadratic has no unique minimizer".into()))?;
        ParamVector::from_vec(x)
    }
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve<S: Real>(a: &[S], b: &[S], d: usize) -> Option<Vec<S>> {
    let mut m: Vec<S> = a.to_vec();
    let mut x: Vec<S> = b.to_vec();
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| m[i * d + col].abs().partial_cmp(&m[j * d + col].abs()).expect("finite"))?;
        if m[piv * d + col].abs() <= S::min_positive_value() {
            return None;
        }
        if piv != col {
            for k in 0..d {
                m.swap(piv * d + k, col * d + k);
            }
            x.swap(piv, col);
        }
        for r in (col + 1)..d {
            let f = m[r * d + col] / m[col * d + col];
            for k in col..d {
                m[r * d + k] = m[r * d + k] - f * m[col * d + k];
            }
            x[r] = x[r] - f * x[col];
        }
    }
    for col in (0..d).rev() {
        let s: S = ((col + 1)..d).map(|k| m[col * d + k] * x[k]).sum();
        x[col] = (x[col] - s) / m[col * d + col];
    }
    Some(x)
}
