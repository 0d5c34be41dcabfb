use std::fmt;
use std::str::FromStr;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                write!(f, "adam beta1={beta1} beta2={beta2} eps={eps}")
            }
            OptimizerKind::Sgd => f.write_str("sgd"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::adam()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::usage(format!(
                "unknown optimizer {other:?} (expected adam or sgd)"
            ))),
        }
    }
}

/// First and second moment estimates, one buffer per store entry.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Real> {
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = |e: &crate::nn::ParamEntry<T>| {
            if e.trainable {
                vec![T::zero(); e.value.numel()]
            } else {
                Vec::new()
            }
        };
        Self {
            step: 0,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one update to every trainable entry of `store`.
///
/// `grads` is indexed like the store. A trainable entry without a gradient is
/// a usage error; nothing is modified in that case.
pub fn optimizer_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::usage(format!(
            "expected {} gradient slots, got {}",
            store.len(),
            grads.len()
        )));
    }
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        match &grads[id.index()] {
            Some(g) if g.shape() == store.get(id).shape() => {}
            Some(g) => {
                return Err(Error::dim(format!(
                    "gradient of {} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    g.shape(),
                    store.get(id).shape()
                )))
            }
            None => {
                return Err(Error::usage(format!(
                    "parameter {} has no gradient",
                    store.name(id)
                )))
            }
        }
    }

    state.step += 1;
    let lr = config.learning_rate;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    match config.optimizer {
        OptimizerKind::Sgd => {
            let lr = T::from_f64_lossy(lr);
            for id in ids {
                let g = grads[id.index()].as_ref().expect("checked");
                for (p, &gi) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                    *p = *p - lr * gi;
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = state.step as f64;
            let c1 = 1.0 - beta1.powf(t);
            let c2 = 1.0 - beta2.powf(t);
            let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
            let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
            let step_size = T::from_f64_lossy(lr / c1);
            let inv_c2 = T::from_f64_lossy(1.0 / c2);
            let eps = T::from_f64_lossy(eps);
            for id in ids {
                let g = grads[id.index()].as_ref().expect("checked");
                let m = &mut state.m[id.index()];
                let v = &mut state.v[id.index()];
                let p = store.get_mut(id).data_mut();
                for j in 0..p.len() {
                    let gj = g.data()[j];
                    m[j] = b1 * m[j] + one_b1 * gj;
                    v[j] = b2 * v[j] + one_b2 * gj * gj;
                    p[j] = p[j] - step_size * m[j] / ((v[j] * inv_c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add_param("p", Tensor::from_vec(&[1], vec![p]).unwrap()).unwrap();
        s
    }

    fn config(kind: OptimizerKind, lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            optimizer: kind,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_step() {
        let mut s = one_param(1.0);
        let mut st = OptimizerState::new(&s);
        let g = vec![Some(Tensor::from_vec(&[1], vec![2.0]).unwrap())];
        optimizer_step(&mut s, &g, &mut st, &config(OptimizerKind::Sgd, 0.1)).unwrap();
        assert!((s.entries()[0].value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_regardless_of_scale() {
        for scale in [1e-3, 1.0, 1e4] {
            let mut s = one_param(0.0);
            let mut st = OptimizerState::new(&s);
            let g = vec![Some(Tensor::from_vec(&[1], vec![scale]).unwrap())];
            optimizer_step(&mut s, &g, &mut st, &config(OptimizerKind::adam(), 1e-3)).unwrap();
            let moved = s.entries()[0].value.data()[0].abs();
            assert!((moved - 1e-3).abs() < 1e-6, "scale {scale}: {moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let mut s = one_param(0.25);
            let mut st = OptimizerState::new(&s);
            let g = vec![Some(Tensor::zeros(&[1]))];
            for _ in 0..3 {
                optimizer_step(&mut s, &g, &mut st, &config(kind, 0.1)).unwrap();
            }
            assert!((s.entries()[0].value.data()[0] - 0.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut s = one_param(1.0);
        let mut st = OptimizerState::new(&s);
        let err = optimizer_step(&mut s, &[None], &mut st, &config(OptimizerKind::Sgd, 0.1))
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(err.to_string().contains("p"));
    }

    #[test]
    fn buffers_are_skipped() {
        let mut s = one_param(1.0);
        s.add_buffer("b", Tensor::ones(&[2])).unwrap();
        let mut st = OptimizerState::new(&s);
        let g = vec![Some(Tensor::from_vec(&[1], vec![1.0]).unwrap()), None];
        optimizer_step(&mut s, &g, &mut st, &config(OptimizerKind::Sgd, 0.5)).unwrap();
        assert_eq!(s.entries()[1].value.data(), &[1.0, 1.0]);
    }
}
