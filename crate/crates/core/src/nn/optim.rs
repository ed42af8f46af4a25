//! SGD with momentum, L2 weight decay and a single step learning-rate drop.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_drop_iteration: u64,
    pub dropped_rate: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    /// Samples drawn from each source per batch.
    pub batch_composition: Vec<usize>,
    pub total_iterations: u64,
    pub rng_seed: u64,
    /// Scales every convolution depth and the wide fully connected layers.
    pub width_mult: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            lr_drop_iteration: 40_000,
            dropped_rate: 0.0001,
            momentum: 0.9,
            l2_lambda: 0.0025,
            batch_size: 64,
            batch_composition: vec![24, 24, 16],
            total_iterations: 50_000,
            rng_seed: 0,
            width_mult: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.batch_composition.iter().sum();
        if sum != self.batch_size {
            return Err(Error::Config(format!(
                "batch composition {:?} sums to {sum}, batch size is {}",
                self.batch_composition, self.batch_size
            )));
        }
        if !(self.dropped_rate > 0.0 && self.dropped_rate <= self.learning_rate) {
            return Err(Error::Config(format!(
                "dropped rate {} must lie in (0, {}]",
                self.dropped_rate, self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.l2_lambda < 0.0 || self.width_mult <= 0.0 {
            return Err(Error::Config("l2_lambda and width_mult must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        if iteration < self.lr_drop_iteration {
            self.learning_rate
        } else {
            self.dropped_rate
        }
    }
}

/// One update: `v = momentum * v - lr * (grad + l2 * param); param += v`.
///
/// Fails before touching anything if a gradient holds a non-finite value.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    velocity: &mut [Tensor<T>],
    names: &[String],
    config: &TrainConfig,
    iteration: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "sgd: tensor {} has shapes {:?} / {:?} / {:?}",
                names.get(i).map(String::as_str).unwrap_or("?"),
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(
                names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            ));
        }
    }
    let lr = T::from_f64(config.lr_at(iteration));
    let mu = T::from_f64(config.momentum);
    let l2 = T::from_f64(config.l2_lambda);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * (gv + l2 * *pv);
            *pv += *vv;
        }
    }
    Ok(())
}

/// Momentum buffers for one network.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &Network<T>) -> Self {
        Sgd {
            velocity: net
                .layers
                .iter()
                .flat_map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())))
                .collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, config: &TrainConfig, iteration: u64) -> Result<()> {
        let names = net.param_names();
        let mut params: Vec<&mut Tensor<T>> = net.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect();
        let grads: Vec<&Tensor<T>> = grads.iter().flatten().collect();
        sgd_step(&mut params, &grads, &mut self.velocity, &names, config, iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    fn step(param: f64, grad: f64, cfg: &TrainConfig, iteration: u64) -> Result<f64> {
        let mut p = scalar(param);
        let g = scalar(grad);
        let mut v = vec![scalar(0.0)];
        sgd_step(&mut [&mut p], &[&g], &mut v, &["w".into()], cfg, iteration)?;
        Ok(p.data()[0])
    }

    #[test]
    fn plain_sgd_step() {
        let cfg = TrainConfig {
            momentum: 0.0,
            l2_lambda: 0.0,
            ..TrainConfig::default()
        };
        assert!((step(1.0, 2.0, &cfg, 0).unwrap() - 0.998).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_drops_at_configured_iteration() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(39_999), 0.001);
        assert_eq!(cfg.lr_at(40_000), 0.0001);
    }

    #[test]
    fn weight_decay_only_step() {
        let cfg = TrainConfig::default();
        let got = step(1.0, 0.0, &cfg, 0).unwrap();
        assert!((got - 0.9999975).abs() < 1e-15, "{got}");
        // the decay term is the derivative of (l2 / 2) * p^2
        let penalty = |p: f64| 0.5 * cfg.l2_lambda * p * p;
        let h = 1e-6;
        let fd = (penalty(1.0 + h) - penalty(1.0 - h)) / (2.0 * h);
        assert!((1.0 - 0.001 * fd - got).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = TrainConfig::default();
        let mut p = scalar(1.0);
        let g = scalar(f64::NAN);
        let mut v = vec![scalar(0.0)];
        let err = sgd_step(&mut [&mut p], &[&g], &mut v, &["conv.0.weight".into()], &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("conv.0.weight"));
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_composition: vec![24, 24],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
