use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::ParamVector;

/// Default finite-difference step `1e-4 · (1 + ‖w‖∞)`.
pub fn default_hvp_eps<S: Real>(w: &ParamVector<S>) -> S {
    S::lit(1e-4) * (S::one() + w.norm_inf())
}

/// Symmetric-difference Hessian-vector product
/// `‖v‖ (∇f(w + εv̂) − ∇f(w − εv̂)) / 2ε` with `v̂ = v/‖v‖`, for a gradient
/// evaluator at a fixed batch.
///
/// Stepping along the unit direction keeps the perturbation at `ε` however
/// large `v` gets; a raw `εv` step lets higher-order terms dominate.
pub fn hvp_fd<S, G>(grad_fn: G, w: &ParamVector<S>, v: &ParamVector<S>, eps: S) -> Result<ParamVector<S>>
where
    S: Real,
    G: Fn(&ParamVector<S>) -> Result<ParamVector<S>>,
{
    if !(eps > S::zero()) {
        return Err(Error::config("hvp_fd step must be positive"));
    }
    w.check_len(v)?;
    let scale = v.norm();
    if scale == S::zero() {
        return Ok(ParamVector::zeros(v.len()));
    }
    let dir = v.scale(S::one() / scale);
    let plus = w.lin_comb(S::one(), &dir, eps)?;
    let minus = w.lin_comb(S::one(), &dir, -eps)?;
    let gp = grad_fn(&plus)?;
    let gm = grad_fn(&minus)?;
    gp.ensure_finite("hvp_fd gradient at w + eps v")?;
    gm.ensure_finite("hvp_fd gradient at w - eps v")?;
    let out = gp
        .lin_comb(S::one(), &gm, -S::one())?
        .scale(scale / (S::lit(2.0) * eps));
    out.ensure_finite("hvp_fd result")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticModel;

    #[test]
    fn quadratic_gradient_gives_exact_product() {
        let q = QuadraticModel::new(
            vec![3.0, 1.0, 1.0, 2.0],
            ParamVector::from_f64_slice(&[1.0, -1.0]).unwrap(),
            0.0,
        )
        .unwrap();
        let w = ParamVector::from_f64_slice(&[0.3, 0.7]).unwrap();
        let v = ParamVector::from_f64_slice(&[1.0, 2.0]).unwrap();
        let h = hvp_fd(|x| q.grad(x), &w, &v, 1e-4).unwrap();
        assert!(h.max_abs_diff(&q.hvp(&v).unwrap()).unwrap() < 1e-6);
    }

    #[test]
    fn zero_direction() {
        let q = QuadraticModel::<f64>::identity(3);
        let w = ParamVector::filled(3, 1.0);
        let h = hvp_fd(|x| q.grad(x), &w, &ParamVector::zeros(3), 1e-4).unwrap();
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let w = ParamVector::filled(2, 1.0);
        let bad = |_: &ParamVector<f64>| Ok(ParamVector::filled(2, f64::MAX));
        let r = hvp_fd(
            |x: &ParamVector<f64>| if x[0] > 1.0 { bad(x) } else { Ok(x.scale(-f64::MAX)) },
            &w,
            &ParamVector::filled(2, 1.0),
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn nonpositive_step_rejected() {
        let w = ParamVector::filled(2, 1.0);
        assert!(hvp_fd(|x: &ParamVector<f64>| Ok(x.clone()), &w, &w, 0.0).is_err());
    }
}
