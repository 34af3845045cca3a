//! First-order optimizers over the flat named-parameter map.

use alloc::string::String;

use crate::error::{Result, TensorError};
use crate::model::NamedTensors;

/// Plain stochastic gradient descent: `p ← p − lr·g` for every tensor whose
/// name appears in both maps.
pub fn sgd_step(params: &mut NamedTensors, grads: &NamedTensors, lr: f64) -> Result<()> {
    for (name, g) in grads {
        let p = params.get_mut(name).ok_or_else(|| {
            TensorError::InvalidArgument(alloc::format!("unknown parameter {name}"))
        })?;
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeError(alloc::format!(
                "gradient shape mismatch for {name}"
            )));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moment estimates, keyed by tensor name so
/// the state survives serialization round trips.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: NamedTensors,
    pub v: NamedTensors,
    pub step: u64,
}

pub fn adam_step(
    params: &mut NamedTensors,
    grads: &NamedTensors,
    state: &mut AdamState,
    cfg: AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (name, g) in grads {
        let p = params.get_mut(name).ok_or_else(|| {
            TensorError::InvalidArgument(alloc::format!("unknown parameter {name}"))
        })?;
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeError(alloc::format!(
                "gradient shape mismatch for {name}"
            )));
        }
        let m = state
            .m
            .entry(String::from(name.as_str()))
            .or_insert_with(|| crate::tensor::DenseTensor::zeros(g.shape().to_vec()));
        for (mv, gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
        }
        let v = state
            .v
            .entry(String::from(name.as_str()))
            .or_insert_with(|| crate::tensor::DenseTensor::zeros(g.shape().to_vec()));
        for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
        }
        let m = &state.m[name];
        let v = &state.v[name];
        for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let mhat = mv / bc1;
            let vhat = vv / bc2;
            *pv -= cfg.lr * mhat / (libm::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;
    use alloc::vec;

    fn bowl_grad(params: &NamedTensors) -> NamedTensors {
        // f(x) = sum of 0.5 * c_i * x_i^2 with c = (1, 4).
        let x = &params["x"];
        let c = [1.0, 4.0];
        let mut g = NamedTensors::new();
        g.insert(
            "x".into(),
            DenseTensor::new(
                vec![2],
                x.data().iter().zip(c).map(|(v, c)| c * v).collect(),
            )
            .unwrap(),
        );
        g
    }

    #[test]
    fn sgd_converges_on_quadratic_bowl() {
        let mut params = NamedTensors::new();
        params.insert("x".into(), DenseTensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        for _ in 0..200 {
            let g = bowl_grad(&params);
            sgd_step(&mut params, &g, 0.2).unwrap();
        }
        assert!(params["x"].data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn sgd_single_step_is_exact() {
        let mut params = NamedTensors::new();
        params.insert("x".into(), DenseTensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let g = bowl_grad(&params);
        sgd_step(&mut params, &g, 0.1).unwrap();
        // x0: 1 - 0.1*1 = 0.9; x1: 1 - 0.1*4 = 0.6
        assert!((params["x"].data()[0] - 0.9).abs() <= 1e-15);
        assert!((params["x"].data()[1] - 0.6).abs() <= 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut params = NamedTensors::new();
        params.insert("x".into(), DenseTensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut state = AdamState::default();
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let g = bowl_grad(&params);
            adam_step(&mut params, &g, &mut state, cfg).unwrap();
        }
        assert!(params["x"].data().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn adam_first_step_matches_hand_derivation() {
        // With bias correction, the first Adam step moves each coordinate by
        // almost exactly lr (sign of the gradient), independent of scale.
        let mut params = NamedTensors::new();
        params.insert("x".into(), DenseTensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut state = AdamState::default();
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let g = bowl_grad(&params);
        adam_step(&mut params, &g, &mut state, cfg).unwrap();
        assert!((params["x"].data()[0] - (3.0 - 0.01)).abs() <= 1e-6);
        assert!((params["x"].data()[1] - (-2.0 + 0.01)).abs() <= 1e-6);
    }

    #[test]
    fn unknown_gradient_name_rejected() {
        let mut params = NamedTensors::new();
        params.insert("x".into(), DenseTensor::zeros(vec![2]));
        let mut g = NamedTensors::new();
        g.insert("y".into(), DenseTensor::zeros(vec![2]));
        assert!(sgd_step(&mut params, &g, 0.1).is_err());
    }
}
