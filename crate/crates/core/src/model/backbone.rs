use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, Module, Param, Relu};
use crate::rng::Rng;

pub const SMALL_CNN: &str = "small-cnn";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    pub output_channels: usize,
    pub downsampling: usize,
}

/// Feature extractor producing a `B × C × h × w` map.
pub trait Backbone: Module + Send {
    fn spec(&self) -> BackboneSpec;

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Array4<f32>>;

    /// Accumulates parameter gradients for the last training-mode forward.
    fn backward(&mut self, grad: &Array4<f32>);
}

pub type BackboneFactory = Box<dyn Fn(&ModelConfig, &mut Rng) -> Result<Box<dyn Backbone>> + Send + Sync>;

/// Name → constructor table for backbones.
pub struct BackboneRegistry {
    factories: BTreeMap<String, BackboneFactory>,
}

impl fmt::Debug for BackboneRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(SMALL_CNN, |config, rng| {
            Ok(Box::new(SmallCnn::new(&config.channels, rng)?) as Box<dyn Backbone>)
        });
        r
    }
}

impl BackboneRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ModelConfig, &mut Rng) -> Result<Box<dyn Backbone>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, config: &ModelConfig, rng: &mut Rng) -> Result<Box<dyn Backbone>> {
        let factory = self.factories.get(&config.backbone).ok_or_else(|| {
            Error::config(
                "model.backbone",
                format!(
                    "unknown backbone `{}` (registered: {})",
                    config.backbone,
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        factory(config, rng)
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
}

/// Stack of `conv3x3/stride 2 → batch norm → ReLU` blocks.
#[derive(Clone, Debug)]
pub struct SmallCnn {
    blocks: Vec<Block>,
}

impl SmallCnn {
    pub fn new(channels: &[usize], rng: &mut Rng) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::config("model.channels", "needs at least one non-zero width"));
        }
        let mut in_ch = 3;
        let blocks = channels
            .iter()
            .map(|&out| {
                let b = Block {
                    conv: Conv2d::new(in_ch, out, 3, 2, 1, rng),
                    bn: BatchNorm2d::new(out),
                    relu: Relu::default(),
                };
                in_ch = out;
                b
            })
            .collect();
        Ok(Self { blocks })
    }
}

impl Module for SmallCnn {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv.visit(&join(&p, "conv"), f);
            b.bn.visit(&join(&p, "bn"), f);
        }
    }
}

impl Backbone for SmallCnn {
    fn spec(&self) -> BackboneSpec {
        BackboneSpec {
            name: SMALL_CNN.to_string(),
            output_channels: self.blocks.last().map(|b| b.bn.gamma.value.len()).unwrap_or(0),
            downsampling: 1 << self.blocks.len(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Array4<f32>> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            let y = b.conv.forward(&h, train);
            let y = b.bn.forward(&y, train)?;
            h = b.relu.forward(y, train);
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Array4<f32>) {
        let mut g = grad.clone();
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            let gy = b.relu.backward(g);
            let gc = b.bn.backward(&gy);
            match b.conv.backward(&gc, i > 0) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }
}
