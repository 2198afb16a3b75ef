//! Minimal CPU layers with explicit forward/backward passes.
//!
//! Layers cache what their backward pass needs during a training-mode
//! forward; backward accumulates into each [`Param::grad`].

use ndarray::{Array2, Array4, ArrayD, IxDyn};

mod conv;
mod norm;

pub use conv::Conv2d;
pub use norm::{BatchNorm1d, BatchNorm2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable, weight-decayed.
    Weight,
    /// Learnable normalisation scale/shift, never weight-decayed.
    Norm,
    /// Running statistic; saved in checkpoints, never optimised.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(value: ArrayD<f32>, kind: ParamKind) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad, kind }
    }

    pub fn zeros(shape: &[usize], kind: ParamKind) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)), kind)
    }

    pub fn filled(shape: &[usize], v: f32, kind: ParamKind) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v), kind)
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

/// Visits every parameter and buffer under `prefix` in a fixed order.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Rectified linear unit remembering its activation mask.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Array4<f32>, train: bool) -> Array4<f32> {
        if train {
            let mut mask = Vec::with_capacity(x.len());
            x.mapv_inplace(|v| {
                mask.push(v > 0.0);
                v.max(0.0)
            });
            self.mask = Some(mask);
        } else {
            x.mapv_inplace(|v| v.max(0.0));
        }
        x
    }

    pub fn backward(&mut self, mut grad: Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("relu backward without a training forward");
        for (g, &m) in grad.iter_mut().zip(&mask) {
            if !m {
                *g = 0.0;
            }
        }
        grad
    }
}

/// Spatial mean of a `B × C × h × w` map.
pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = x.dim();
    let inv = 1.0 / (h * w) as f32;
    Array2::from_shape_fn((b, c), |(i, j)| {
        x.slice(ndarray::s![i, j, .., ..]).iter().sum::<f32>() * inv
    })
}

pub fn global_avg_pool_backward(grad: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (b, c) = grad.dim();
    let inv = 1.0 / (h * w) as f32;
    Array4::from_shape_fn((b, c, h, w), |(i, j, _, _)| grad[[i, j]] * inv)
}
