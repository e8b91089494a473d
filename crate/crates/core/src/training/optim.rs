use crate::autodiff::archive::TensorMap;
use crate::autodiff::Tensor;
use crate::networks::ParamStore;

use super::{TrainConfig, TrainError};

/// `lr0 * factor^floor(step / decay_steps)`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_steps) as i32;
    cfg.lr0 * cfg.decay_factor.powi(k)
}

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    pub m: TensorMap,
    pub v: TensorMap,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter named in `grads`; `t` is the 1-based
    /// update count used for bias correction.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &TensorMap,
        lr: f64,
        t: u64,
        cfg: &TrainConfig,
    ) -> Result<(), TrainError> {
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.adam_eps);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(TrainError::NonFinite(format!("gradient of `{name}`")));
            }
            let p = params.get_mut(name)?;
            let shape = p.shape().to_vec();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(shape.clone()));
            let it = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                .zip(g.data());
            for ((p, (m, v)), &g) in it {
                let g = f64::from(g);
                let mn = b1 * f64::from(*m) + (1.0 - b1) * g;
                let vn = b2 * f64::from(*v) + (1.0 - b2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let step = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                *p = (f64::from(*p) - step) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-4);
        assert_eq!(lr_at(799, &c), 1e-4);
        assert_eq!(lr_at(800, &c), 3e-5);
        assert_eq!(lr_at(1600, &c), 9e-6);
        assert_eq!(lr_at(2399, &c), 9e-6);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params
            .insert("w", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let mut grads = TensorMap::new();
        grads.insert("w".into(), Tensor::new([3], vec![0.3, -4.0, 0.0]).unwrap());
        let mut adam = Adam::new();
        adam.update(&mut params, &grads, 0.01, 1, &cfg).unwrap();
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn matches_a_scalar_reference_over_many_steps() {
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.insert("x", Tensor::scalar(3.0)).unwrap();
        let mut adam = Adam::new();
        let (mut x, mut m, mut v) = (3.0f64, 0.0f64, 0.0f64);
        for t in 1..=50u64 {
            // minimise x^2
            let g = 2.0 * f64::from(params.get("x").unwrap().data()[0]);
            let mut grads = TensorMap::new();
            grads.insert("x".into(), Tensor::scalar(g as f32));
            adam.update(&mut params, &grads, 0.05, t, &cfg).unwrap();
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        let got = f64::from(params.get("x").unwrap().data()[0]);
        assert!((got - x).abs() < 1e-4, "{got} vs {x}");
        assert!(got.abs() < 3.0);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut grads = TensorMap::new();
        grads.insert("w".into(), Tensor::scalar(f32::NAN));
        let err = Adam::new()
            .update(&mut params, &grads, 0.1, 1, &cfg)
            .unwrap_err();
        assert!(matches!(err, TrainError::NonFinite(_)));
    }
}
