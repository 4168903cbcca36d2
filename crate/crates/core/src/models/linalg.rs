//! Small dense symmetric-matrix helpers (row-major storage).

use crate::scalar::Real;

pub(crate) fn matvec<S: Real>(a: &[S], d: usize, x: &[S]) -> Vec<S> {
    (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().zip(x).map(|(&aij, &xj)| aij * xj).sum())
        .collect()
}

pub(crate) fn matmul<S: Real>(a: &[S], b: &[S], d: usize) -> Vec<S> {
    let mut out = vec![S::zero(); d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] = out[i * d + j] + aik * b[k * d + j];
            }
        }
    }
    out
}

pub(crate) fn max_asymmetry<S: Real>(a: &[S], d: usize) -> S {
    let mut m = S::zero();
    for i in 0..d {
        for j in (i + 1)..d {
            m = m.max((a[i * d + j] - a[j * d + i]).abs());
        }
    }
    m
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub(crate) fn symmetric_eigenvalues<S: Real>(a: &[S], d: usize) -> Vec<S> {
    let mut m = a.to_vec();
    let two = S::lit(2.0);
    let tol = S::epsilon() * S::epsilon();
    for _sweep in 0..100 {
        let off: S = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        let diag: S = (0..d).map(|i| m[i * d + i] * m[i * d + i]).sum();
        if off <= tol * diag.max(S::min_positive_value()) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == S::zero() {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = m[k * d + p];
                    let akq = m[k * d + q];
                    m[k * d + p] = c * akp - s * akq;
                    m[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = m[p * d + k];
                    let aqk = m[q * d + k];
                    m[p * d + k] = c * apk - s * aqk;
                    m[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<S> = (0..d).map(|i| m[i * d + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let e = symmetric_eigenvalues(&[2.0f64, 1.0, 1.0, 2.0], 2);
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_diagonal_is_identity_op() {
        let e = symmetric_eigenvalues(&[5.0f64, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0], 3);
        assert_eq!(e, vec![-1.0, 2.0, 5.0]);
    }
}
