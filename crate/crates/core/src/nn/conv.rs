use ndarray::{Array2, Array4, ArrayView2, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{join, Module, Param, ParamKind};

/// Square-kernel 2-D convolution without bias, lowered to one GEMM per batch
/// through im2col.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Array2<f32>,
    input_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    /// Kaiming-normal initialisation (fan-out, ReLU gain).
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (out_channels * kernel * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = out_channels * in_channels * kernel * kernel;
        let data: Vec<f32> = (0..n).map(|_| normal.sample(rng) as f32).collect();
        let value = ndarray::ArrayD::from_shape_vec(
            ndarray::IxDyn(&[out_channels, in_channels, kernel, kernel]),
            data,
        )
        .expect("shape matches length");
        Self {
            weight: Param::new(value, ParamKind::Weight),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("contiguous weight")
            .into_dimensionality::<Ix2>()
            .expect("2-D view")
    }

    fn im2col(&self, x: &Array4<f32>) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let plane = oh * ow;
        let n = b * plane;
        let xs = x.as_slice().expect("standard layout input");
        let mut cols = vec![0f32; c * k * k * n];
        for bi in 0..b {
            for ci in 0..c {
                let src = &xs[(bi * c + ci) * h * w..][..h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dst = &mut cols[row * n + bi * plane..][..plane];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * w..][..w];
                            let dst_row = &mut dst[oy * ow..][..ow];
                            for (ox, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((c * k * k, n), cols).expect("im2col shape")
    }

    fn col2im(&self, cols: &Array2<f32>, dim: (usize, usize, usize, usize)) -> Array4<f32> {
        let (b, c, h, w) = dim;
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let plane = oh * ow;
        let n = b * plane;
        let cs = cols.as_slice().expect("standard layout cols");
        let mut dx = vec![0f32; b * c * h * w];
        for bi in 0..b {
            for ci in 0..c {
                let dst = &mut dx[(bi * c + ci) * h * w..][..h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let src = &cs[row * n + bi * plane..][..plane];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array4::from_shape_vec((b, c, h, w), dx).expect("col2im shape")
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_size(h, w);
        let cols = self.im2col(x);
        let out = self.weight_matrix().dot(&cols);
        let plane = oh * ow;
        let os = out.as_slice().expect("gemm output layout");
        let mut y = vec![0f32; b * self.out_channels * plane];
        for co in 0..self.out_channels {
            for bi in 0..b {
                y[(bi * self.out_channels + co) * plane..][..plane]
                    .copy_from_slice(&os[co * b * plane + bi * plane..][..plane]);
            }
        }
        if train {
            self.cache = Some(ConvCache {
                cols,
                input_dim: (b, c, h, w),
            });
        }
        Array4::from_shape_vec((b, self.out_channels, oh, ow), y).expect("conv output shape")
    }

    /// Accumulates the weight gradient; returns the input gradient when
    /// `input_grad` is set.
    pub fn backward(&mut self, grad: &Array4<f32>, input_grad: bool) -> Option<Array4<f32>> {
        let cache = self.cache.take().expect("conv backward without a training forward");
        let (b, co, oh, ow) = grad.dim();
        let plane = oh * ow;
        let gs = grad.as_standard_layout();
        let gs = gs.as_slice().expect("standard layout");
        let mut g2 = vec![0f32; co * b * plane];
        for c in 0..co {
            for bi in 0..b {
                g2[c * b * plane + bi * plane..][..plane].copy_from_slice(&gs[(bi * co + c) * plane..][..plane]);
            }
        }
        let g2 = Array2::from_shape_vec((co, b * plane), g2).expect("grad shape");
        let dw = g2.dot(&cache.cols.t());
        let mut wg = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order(dw.raw_dim())
            .expect("contiguous grad");
        wg += &dw;
        input_grad.then(|| {
            let dcols = self.weight_matrix().t().dot(&g2);
            self.col2im(&dcols, cache.input_dim)
        })
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}
