use ndarray::{Array1, Array2, Array4, Axis, Ix1};

use super::{join, Module, Param, ParamKind};
use crate::error::{Error, Result};

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

fn as_vec(p: &Param) -> Array1<f32> {
    p.value.view().into_dimensionality::<Ix1>().expect("1-D param").to_owned()
}

fn update_running(running: &mut Param, batch: &Array1<f32>) {
    for (r, &b) in running.value.iter_mut().zip(batch.iter()) {
        *r = (1.0 - MOMENTUM) * *r + MOMENTUM * b;
    }
}

fn add_grad(p: &mut Param, g: &Array1<f32>) {
    for (a, &b) in p.grad.iter_mut().zip(g.iter()) {
        *a += b;
    }
}

/// Channel statistics of a `N × C` view: (mean, biased var).
fn moments(x: &Array2<f32>) -> (Array1<f32>, Array1<f32>) {
    let n = x.nrows() as f32;
    let mean = x.sum_axis(Axis(0)) / n;
    let var = x
        .axis_iter(Axis(0))
        .fold(Array1::zeros(x.ncols()), |acc: Array1<f32>, row| {
            let d = &row - &mean;
            acc + &d * &d
        })
        / n;
    (mean, var)
}

/// Shared core: normalises a `N × C` matrix.
#[derive(Clone, Debug)]
struct NormCore {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

fn forward_core(
    x: Array2<f32>,
    gamma: &Array1<f32>,
    beta: Option<&Array1<f32>>,
    running_mean: &mut Param,
    running_var: &mut Param,
    train: bool,
) -> Result<(Array2<f32>, Option<NormCore>)> {
    let n = x.nrows();
    let (mean, var) = if train {
        if n < 2 {
            return Err(Error::Precondition(
                "batch statistics need at least 2 values per channel in training mode".into(),
            ));
        }
        let (mean, var) = moments(&x);
        let unbiased = &var * (n as f32 / (n - 1) as f32);
        update_running(running_mean, &mean);
        update_running(running_var, &unbiased);
        (mean, var)
    } else {
        (as_vec(running_mean), as_vec(running_var))
    };
    let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
    let xhat = (x - &mean) * &inv_std;
    let mut y = &xhat * gamma;
    if let Some(b) = beta {
        y += b;
    }
    let core = train.then_some(NormCore { xhat, inv_std });
    Ok((y, core))
}

/// Returns (dx, dgamma, dbeta).
fn backward_core(core: NormCore, grad: &Array2<f32>, gamma: &Array1<f32>) -> (Array2<f32>, Array1<f32>, Array1<f32>) {
    let n = grad.nrows() as f32;
    let dbeta = grad.sum_axis(Axis(0));
    let dgamma = (grad * &core.xhat).sum_axis(Axis(0));
    let scale = gamma * &core.inv_std / n;
    let dx = ((grad * n) - &dbeta - &(&core.xhat * &dgamma)) * &scale;
    (dx, dgamma, dbeta)
}

/// Batch normalisation over `B × C × H × W` with affine scale and shift.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(NormCore, (usize, usize, usize, usize))>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0, ParamKind::Norm),
            beta: Param::zeros(&[channels], ParamKind::Norm),
            running_mean: Param::zeros(&[channels], ParamKind::Buffer),
            running_var: Param::filled(&[channels], 1.0, ParamKind::Buffer),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Array4<f32>> {
        let dim = x.dim();
        let (b, c, h, w) = dim;
        // N x C with N = B*H*W
        let flat = x
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * h * w, c))
            .expect("flatten");
        let (y, core) = forward_core(
            flat,
            &as_vec(&self.gamma),
            Some(&as_vec(&self.beta)),
            &mut self.running_mean,
            &mut self.running_var,
            train,
        )?;
        self.cache = core.map(|c| (c, dim));
        Ok(unflatten(y, dim))
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (core, dim) = self.cache.take().expect("batchnorm backward without a training forward");
        let (b, c, h, w) = dim;
        let g = grad
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * h * w, c))
            .expect("flatten");
        let (dx, dgamma, dbeta) = backward_core(core, &g, &as_vec(&self.gamma));
        add_grad(&mut self.gamma, &dgamma);
        add_grad(&mut self.beta, &dbeta);
        unflatten(dx, dim)
    }
}

fn unflatten(y: Array2<f32>, (b, c, h, w): (usize, usize, usize, usize)) -> Array4<f32> {
    y.into_shape_with_order((b, h, w, c))
        .expect("unflatten")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
}

impl Module for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Batch normalisation over `B × C` with a learnable scale and no shift.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<NormCore>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0, ParamKind::Norm),
            running_mean: Param::zeros(&[channels], ParamKind::Buffer),
            running_var: Param::filled(&[channels], 1.0, ParamKind::Buffer),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Result<Array2<f32>> {
        let (y, core) = forward_core(
            x.clone(),
            &as_vec(&self.gamma),
            None,
            &mut self.running_mean,
            &mut self.running_var,
            train,
        )?;
        self.cache = core;
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array2<f32> {
        let core = self.cache.take().expect("batchnorm backward without a training forward");
        let (dx, dgamma, _) = backward_core(core, grad, &as_vec(&self.gamma));
        add_grad(&mut self.gamma, &dgamma);
        dx
    }
}

impl Module for BatchNorm1d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
