use crate::autodiff::param::Parameter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over `params`. Every parameter must carry a
/// gradient; nothing is modified otherwise. Gradients are left in place.
pub fn adam_step<T: Scalar>(params: &mut [Parameter<T>], lr: f64, cfg: AdamConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let eps = T::from_f64(cfg.eps);
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
        let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64(lr);
        let grad = p.grad.as_deref().unwrap_or_default();
        let w = p.value.data_mut();
        for (((w, &g), m), v) in w
            .iter_mut()
            .zip(grad)
            .zip(p.adam_m.iter_mut())
            .zip(p.adam_v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every present gradient, accumulated in parameter order.
pub fn grad_norm<T: Scalar>(params: &[Parameter<T>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad.as_deref())
        .flat_map(|g| g.iter())
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(params: &mut [Parameter<T>], max_norm: f64) -> Result<f64> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::invalid(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let norm = grad_norm(params);
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(w: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Tensor::new([1], vec![w]).unwrap());
        p.grad = Some(vec![g]);
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_values() {
        let mut ps = vec![scalar_param(0.7, 0.0)];
        adam_step(&mut ps, 1e-3, AdamConfig::default()).unwrap();
        assert_eq!(ps[0].value.data(), &[0.7]);
        assert_eq!(ps[0].step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = vec![scalar_param(0.0, 1.0)];
        adam_step(&mut ps, 1e-4, AdamConfig::default()).unwrap();
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((ps[0].value.data()[0] - expected).abs() < 1e-9);
        assert_eq!(ps[0].grad.as_deref(), Some(&[1.0][..]));
    }

    #[test]
    fn three_steps_match_reference_sequence() {
        // hand-rolled scalar Adam, constant gradient 0.5
        let (lr, b1, b2, eps, g) = (1e-2, 0.9f64, 0.999f64, 1e-8, 0.5);
        let (mut w, mut m, mut v) = (1.0f64, 0.0, 0.0);
        let mut expected = Vec::new();
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            expected.push(w);
        }
        let mut ps = vec![scalar_param(1.0, g)];
        for e in expected {
            adam_step(&mut ps, lr, AdamConfig::default()).unwrap();
            assert!((ps[0].value.data()[0] - e).abs() < 1e-9);
        }
        assert_eq!(ps[0].step_count, 3);
    }

    #[test]
    fn missing_gradient_is_rejected_without_mutation() {
        let mut ps = vec![
            scalar_param(1.0, 1.0),
            Parameter::new("b", Tensor::new([1], vec![2.0]).unwrap()),
        ];
        let err = adam_step(&mut ps, 1e-3, AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "b"));
        assert_eq!(ps[0].value.data(), &[1.0]);
        assert_eq!(ps[0].step_count, 0);
    }

    #[test]
    fn clipping_below_threshold_is_identity() {
        let mut ps = vec![scalar_param(0.0, 3.0)];
        assert_eq!(clip_gradients(&mut ps, 5.0).unwrap(), 3.0);
        assert_eq!(ps[0].grad.as_deref(), Some(&[3.0][..]));
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut ps = vec![scalar_param(0.0, 6.0), scalar_param(0.0, 8.0)];
        let pre = clip_gradients(&mut ps, 5.0).unwrap();
        assert!((pre - 10.0).abs() < 1e-12);
        assert!((grad_norm(&ps) - 5.0).abs() < 1e-6);
    }
}
