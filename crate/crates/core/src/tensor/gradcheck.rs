use super::{Graph, Tensor, TensorError, Var};

/// Compare the autodiff gradient of a scalar function against central
/// differences. Returns the largest per-coordinate relative error
/// `|autodiff - numeric| / (|numeric| + 1e-8)`.
///
/// `f` builds the function on a fresh graph from its input variable.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(TensorError::Invalid(format!("eps {eps} must be positive")));
    }
    let eval = |point: Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let v = g.param(point);
        let out = f(&mut g, v)?;
        let value = g.value(out).item();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                node: out.index(),
                op: "output",
            });
        }
        Ok(value)
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let analytic = g.gradients(out, &[v])?.remove(0);

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / (numeric.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|g, x| g.mul(x, x), &Tensor::scalar(3.0), 1e-4).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(finite_diff_check(|g, x| g.sum(x), &Tensor::scalar(1.0), 0.0).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let r = finite_diff_check(|g, x| g.ln(x), &Tensor::scalar(1e-5), 1e-4);
        assert!(r.is_err());
    }
}
