use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{residual_block_backward, residual_block_forward, BlockCache, ResidualBlock};
use super::{Mode, Tensor3, TcnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnHyper {
    /// Input feature channels.
    pub in_channels: usize,
    /// Filters (output channels) of every convolution.
    pub filters: usize,
    /// Taps per convolution along time.
    pub kernel_size: usize,
    /// Residual blocks; block `l` uses dilation `2^l`.
    pub layers: usize,
    /// Input sequence length.
    pub seq_len: usize,
}

impl Default for TcnHyper {
    fn default() -> Self {
        Self {
            in_channels: 9,
            filters: 5,
            kernel_size: 15,
            layers: 6,
            seq_len: 10,
        }
    }
}

impl TcnHyper {
    pub fn validate(&self) -> Result<(), TcnError> {
        if self.in_channels == 0 || self.filters == 0 || self.kernel_size == 0 || self.layers == 0 || self.seq_len == 0 {
            return Err(TcnError::ShapeMismatch(format!("invalid hyperparameters {self:?}")));
        }
        if self.layers > 30 {
            return Err(TcnError::ShapeMismatch("too many layers for a 2^l dilation".into()));
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    /// Input steps one output step can see: two convolutions per block.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.layers)
            .map(|l| 2 * (self.kernel_size - 1) * self.dilation(l))
            .sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        let (c, f, k) = (self.in_channels, self.filters, self.kernel_size);
        let mut total = 0;
        for l in 0..self.layers {
            let cin = if l == 0 { c } else { f };
            total += k * cin * f + f + 2 * f + k * f * f + f + 2 * f;
            if cin != f {
                total += cin * f + f;
            }
        }
        total + f + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnModel {
    pub hyper: TcnHyper,
    pub blocks: Vec<ResidualBlock>,
    /// Fully connected head over the last time step's features.
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

pub struct ModelCache {
    pub blocks: Vec<BlockCache>,
    /// Last-step features fed to the head, `(n, filters)`.
    last: Vec<f64>,
    pub preds: Vec<f64>,
    n: usize,
    t: usize,
}

impl ModelCache {
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.relu_pattern()).collect()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TcnModel {
    pub fn new(hyper: TcnHyper, seed: u64) -> Result<Self, TcnError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..hyper.layers)
            .map(|l| {
                let cin = if l == 0 { hyper.in_channels } else { hyper.filters };
                ResidualBlock::init(cin, hyper.filters, hyper.kernel_size, hyper.dilation(l), &mut rng)
            })
            .collect();
        let bound = (1.0 / hyper.filters as f64).sqrt();
        let head_weight = (0..hyper.filters).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self {
            hyper,
            blocks,
            head_weight,
            head_bias: vec![0.0],
        })
    }

    pub fn is_consistent(&self) -> bool {
        let h = &self.hyper;
        h.validate().is_ok()
            && self.blocks.len() == h.layers
            && self.blocks.iter().enumerate().all(|(l, b)| {
                b.is_consistent()
                    && b.c_in() == if l == 0 { h.in_channels } else { h.filters }
                    && b.c_out() == h.filters
                    && b.conv1.kernel_size == h.kernel_size
                    && b.conv2.kernel_size == h.kernel_size
                    && b.conv1.dilation == h.dilation(l)
                    && b.conv2.dilation == h.dilation(l)
            })
            && self.head_weight.len() == h.filters
            && self.head_bias.len() == 1
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), TcnError> {
        if x.c != self.hyper.in_channels || x.t != self.hyper.seq_len {
            return Err(TcnError::ShapeMismatch(format!(
                "model expects (·, {}, {}), got (·, {}, {})",
                self.hyper.seq_len, self.hyper.in_channels, x.t, x.c
            )));
        }
        Ok(())
    }

    /// Runs every block and returns each block's output along with the caches.
    pub fn forward_blocks(&self, x: &Tensor3, mode: Mode) -> Result<(Vec<Tensor3>, Vec<BlockCache>), TcnError> {
        self.check_input(x)?;
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let (y, c) = residual_block_forward(&h, b, mode)?;
            outs.push(y.clone());
            caches.push(c);
            h = y;
        }
        Ok((outs, caches))
    }

    pub fn forward(&self, x: &Tensor3, mode: Mode) -> Result<ModelCache, TcnError> {
        let (outs, blocks) = self.forward_blocks(x, mode)?;
        let h = outs.last().expect("at least one block");
        let f = self.hyper.filters;
        let mut last = Vec::with_capacity(x.n * f);
        let mut preds = Vec::with_capacity(x.n);
        for b in 0..x.n {
            let feat = h.row(b, x.t - 1);
            let z = self.head_bias[0] + feat.iter().zip(&self.head_weight).map(|(a, w)| a * w).sum::<f64>();
            preds.push(sigmoid(z));
            last.extend_from_slice(feat);
        }
        Ok(ModelCache {
            blocks,
            last,
            preds,
            n: x.n,
            t: x.t,
        })
    }

    /// Inference with running batch-norm statistics.
    pub fn predict(&self, x: &Tensor3) -> Result<Vec<f64>, TcnError> {
        Ok(self.forward(x, Mode::Eval)?.preds)
    }

    /// Back-propagates `dL/dpred`. Returns the input gradient and parameter
    /// gradients in [`TcnModel::params`] order.
    pub fn backward(&self, cache: &ModelCache, grad_pred: &[f64]) -> Result<(Tensor3, Vec<Vec<f64>>), TcnError> {
        if grad_pred.len() != cache.n {
            return Err(TcnError::ShapeMismatch(format!(
                "{} prediction gradients for batch of {}",
                grad_pred.len(),
                cache.n
            )));
        }
        let f = self.hyper.filters;
        let mut g_head_w = vec![0.0; f];
        let mut g_head_b = 0.0;
        let mut g = Tensor3::zeros(cache.n, cache.t, f);
        for b in 0..cache.n {
            let y = cache.preds[b];
            let dz = grad_pred[b] * y * (1.0 - y);
            g_head_b += dz;
            let feat = &cache.last[b * f..(b + 1) * f];
            let row = g.row_mut(b, cache.t - 1);
            for c in 0..f {
                g_head_w[c] += dz * feat[c];
                row[c] = dz * self.head_weight[c];
            }
        }
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (gx, grads) = residual_block_backward(&g, bc, block)?;
            per_block.push(grads.into_vec());
            g = gx;
        }
        let mut grads: Vec<Vec<f64>> = per_block.into_iter().rev().flatten().collect();
        grads.push(g_head_w);
        grads.push(vec![g_head_b]);
        Ok((g, grads))
    }

    /// Applies the running-statistics update recorded in a training pass.
    pub fn update_running_stats(&mut self, cache: &ModelCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn1.update_running(&c.bn1);
            b.bn2.update_running(&c.bn2);
        }
    }
}
