use std::collections::HashMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("train.adam.{key}"), "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("train.adam.eps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: ArrayD<f32>,
    v: ArrayD<f32>,
    steps: i32,
}

/// Adam with L2 penalty folded into the gradient. Each parameter keeps its
/// own step count, so parameters skipped while frozen start their bias
/// correction when first updated.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: HashMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn update(&mut self, name: &str, p: &mut Param, lr: f64, weight_decay: f64) {
        let s = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: ArrayD::zeros(p.value.raw_dim()),
            v: ArrayD::zeros(p.value.raw_dim()),
            steps: 0,
        });
        s.steps += 1;
        let (b1, b2) = (self.config.beta1 as f32, self.config.beta2 as f32);
        let c1 = 1.0 - self.config.beta1.powi(s.steps);
        let c2 = 1.0 - self.config.beta2.powi(s.steps);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.config.eps * c2.sqrt()) as f32;
        let wd = weight_decay as f32;
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut s.m)
            .and(&mut s.v)
            .for_each(|w, &g, m, v| {
                let g = g + wd * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step * *m / (v.sqrt() + eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::filled(&[2], 1.0, ParamKind::Weight);
        p.grad[[0]] = 3.0;
        p.grad[[1]] = -0.01;
        let mut adam = Adam::new(AdamConfig::default());
        adam.update("w", &mut p, 0.1, 0.0);
        assert!((p.value[[0]] - 0.9).abs() < 1e-5);
        assert!((p.value[[1]] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::filled(&[1], 5.0, ParamKind::Weight);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            p.grad[[0]] = 2.0 * (p.value[[0]] - 2.0);
            adam.update("w", &mut p, 0.05, 0.0);
        }
        assert!((p.value[[0]] - 2.0).abs() < 1e-2);
    }
}
