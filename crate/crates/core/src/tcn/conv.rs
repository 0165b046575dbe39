//! Dilated causal 1-D convolution over the time axis.
//!
//! `y[b, t, o] = bias[o] + Σ_i Σ_c K[i, c, o] · x[b, t − d·i, c]`, with
//! `x` taken as zero for negative time. Output length equals input length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor3, TcnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// Shape `(kernel_size, c_in, c_out)`; tap `i` multiplies `x[t − d·i]`.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(c_in: usize, c_out: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel_size,
            dilation,
            kernel: vec![0.0; kernel_size * c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    /// He-style uniform fan-in initialisation, zero bias.
    pub fn init<R: Rng>(c_in: usize, c_out: usize, kernel_size: usize, dilation: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(c_in, c_out, kernel_size, dilation);
        let bound = (6.0 / (kernel_size * c_in) as f64).sqrt();
        for w in &mut layer.kernel {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    #[inline]
    pub fn k_idx(&self, tap: usize, ci: usize, co: usize) -> usize {
        (tap * self.c_in + ci) * self.c_out + co
    }

    /// Left zero-padding implied by causality.
    pub fn causal_padding(&self) -> usize {
        (self.kernel_size - 1) * self.dilation
    }

    pub fn is_consistent(&self) -> bool {
        self.kernel_size > 0
            && self.dilation > 0
            && self.kernel.len() == self.kernel_size * self.c_in * self.c_out
            && self.bias.len() == self.c_out
    }

    /// Number of taps that land on real (non-padding) input at time `t`.
    #[inline]
    fn live_taps(&self, t: usize) -> usize {
        (t / self.dilation + 1).min(self.kernel_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor3,
    pub grad_kernel: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub fn dilated_causal_conv_forward(x: &Tensor3, layer: &ConvLayer) -> Result<Tensor3, TcnError> {
    if x.c != layer.c_in {
        return Err(TcnError::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            layer.c_in, x.c
        )));
    }
    let mut y = Tensor3::zeros(x.n, x.t, layer.c_out);
    for b in 0..x.n {
        for t in 0..x.t {
            let out = y.row_mut(b, t);
            out.copy_from_slice(&layer.bias);
            for tap in 0..layer.live_taps(t) {
                let src = x.row(b, t - layer.dilation * tap);
                for (ci, &xv) in src.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let k0 = layer.k_idx(tap, ci, 0);
                    for (o, w) in out.iter_mut().zip(&layer.kernel[k0..k0 + layer.c_out]) {
                        *o += w * xv;
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn dilated_causal_conv_backward(
    grad_out: &Tensor3,
    x: &Tensor3,
    layer: &ConvLayer,
) -> Result<ConvGrads, TcnError> {
    if x.c != layer.c_in || grad_out.c != layer.c_out || grad_out.n != x.n || grad_out.t != x.t {
        return Err(TcnError::ShapeMismatch(format!(
            "conv backward: x ({}, {}, {}), grad ({}, {}, {}), layer {}→{}",
            x.n, x.t, x.c, grad_out.n, grad_out.t, grad_out.c, layer.c_in, layer.c_out
        )));
    }
    let mut grad_x = Tensor3::zeros(x.n, x.t, x.c);
    let mut grad_kernel = vec![0.0; layer.kernel.len()];
    let mut grad_bias = vec![0.0; layer.c_out];
    for b in 0..x.n {
        for t in 0..x.t {
            let g = grad_out.row(b, t);
            for (gb, gv) in grad_bias.iter_mut().zip(g) {
                *gb += gv;
            }
            for tap in 0..layer.live_taps(t) {
                let s = t - layer.dilation * tap;
                let base = (b * x.t + s) * x.c;
                for ci in 0..x.c {
                    let xv = x.data[base + ci];
                    let k0 = layer.k_idx(tap, ci, 0);
                    let w = &layer.kernel[k0..k0 + layer.c_out];
                    let gk = &mut grad_kernel[k0..k0 + layer.c_out];
                    let mut acc = 0.0;
                    for o in 0..layer.c_out {
                        acc += w[o] * g[o];
                        gk[o] += xv * g[o];
                    }
                    grad_x.data[base + ci] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_kernel,
        grad_bias,
    })
}
