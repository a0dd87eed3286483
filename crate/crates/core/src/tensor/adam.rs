use super::{ParamStore, Tensor, TensorError};

/// Moment estimates and hyper-parameters of the Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update applied in place. Every parameter must
/// have a gradient of the same shape.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TensorError> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(TensorError::Invalid(format!("learning rate {lr} must be positive")));
    }
    for (name, p) in params.iter() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(TensorError::Shape(format!(
                "gradient for {name}: {:?} vs parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(TensorError::NonFiniteGradient(name.clone()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g: &Tensor = grads.get(name)?;
        let m = state.first_moment.get_mut(name)?;
        for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let m = state.first_moment.get(name)?.data().to_vec();
        let v = state.second_moment.get_mut(name)?;
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let v = state.second_moment.get(name)?;
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(&m).zip(v.data()) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(values));
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(vec![1.0, -2.0, 0.5]);
        let g = store(vec![3.0, -0.01, 1e-3]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        let got = p.get("w").unwrap().data();
        // m_hat / sqrt(v_hat) = g / |g|, so the move is lr * sign(g) up to eps
        for (after, (before, gi)) in got.iter().zip([(1.0, 3.0), (-2.0, -0.01), (0.5, 1e-3)]) {
            let expected = before - 0.001 * f64::signum(gi) * (gi.abs() / (gi.abs() + 1e-8));
            assert!((after - expected).abs() < 1e-15, "{after} vs {expected}");
            assert!((after - (before - 0.001 * f64::signum(gi))).abs() < 1e-7);
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(vec![1.0, 2.0]);
        let g = store(vec![0.0, 0.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = store(vec![0.3, -0.7]);
            let mut st = AdamState::new(&p);
            for k in 0..5 {
                let g = store(vec![0.1 * k as f64 - 0.2, 0.05]);
                adam_step(&mut p, &g, &mut st, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = store(vec![1.0, 2.0]);
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &store(vec![1.0]), &mut st, 0.1),
            Err(TensorError::Shape(_))
        ));
        assert!(matches!(
            adam_step(&mut p, &store(vec![f64::NAN, 0.0]), &mut st, 0.1),
            Err(TensorError::NonFiniteGradient(_))
        ));
        assert_eq!(st.step, 0);
    }
}
