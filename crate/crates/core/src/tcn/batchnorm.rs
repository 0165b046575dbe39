//! Per-channel batch normalisation over the (batch, time) axes.

use serde::{Deserialize, Serialize};

use super::{Mode, Tensor3, TcnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let c = self.channels;
        self.gamma.len() == c
            && self.beta.len() == c
            && self.running_mean.len() == c
            && self.running_var.len() == c
            && self.running_var.iter().all(|v| *v >= 0.0)
    }

    /// Exponential moving average update from one training batch.
    pub fn update_running(&mut self, cache: &BnCache) {
        if let Some(stats) = &cache.batch {
            let m = self.momentum;
            for c in 0..self.channels {
                self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
                self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.unbiased_var[c];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor3,
    inv_std: Vec<f64>,
    /// Present in training mode only.
    pub batch: Option<BatchStats>,
}

pub fn batchnorm_forward(x: &Tensor3, layer: &BatchNormLayer, mode: Mode) -> Result<(Tensor3, BnCache), TcnError> {
    if x.c != layer.channels {
        return Err(TcnError::ShapeMismatch(format!(
            "batchnorm expects {} channels, got {}",
            layer.channels, x.c
        )));
    }
    let count = x.n * x.t;
    let c_n = x.c;
    let (mean, var, batch) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(TcnError::DegenerateBatch);
            }
            let mut mean = vec![0.0; c_n];
            for r in x.data.chunks_exact(c_n) {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; c_n];
            for r in x.data.chunks_exact(c_n) {
                for c in 0..c_n {
                    let d = r[c] - mean[c];
                    var[c] += d * d;
                }
            }
            let unbiased: Vec<f64> = var.iter().map(|v| v / (count - 1) as f64).collect();
            var.iter_mut().for_each(|v| *v /= count as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                unbiased_var: unbiased,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (layer.running_mean.clone(), layer.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + layer.epsilon).sqrt()).collect();
    let mut xhat = Tensor3::zeros(x.n, x.t, c_n);
    let mut y = Tensor3::zeros(x.n, x.t, c_n);
    for ((xr, hr), yr) in x
        .data
        .chunks_exact(c_n)
        .zip(xhat.data.chunks_exact_mut(c_n))
        .zip(y.data.chunks_exact_mut(c_n))
    {
        for c in 0..c_n {
            hr[c] = (xr[c] - mean[c]) * inv_std[c];
            yr[c] = layer.gamma[c] * hr[c] + layer.beta[c];
        }
    }
    Ok((y, BnCache { xhat, inv_std, batch }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub grad_x: Tensor3,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

pub fn batchnorm_backward(grad_out: &Tensor3, cache: &BnCache, layer: &BatchNormLayer) -> Result<BnGrads, TcnError> {
    if !grad_out.same_shape(&cache.xhat) {
        return Err(TcnError::ShapeMismatch("batchnorm backward shape".into()));
    }
    let c_n = grad_out.c;
    let count = (grad_out.n * grad_out.t) as f64;
    let mut grad_gamma = vec![0.0; c_n];
    let mut grad_beta = vec![0.0; c_n];
    for (g, h) in grad_out.data.chunks_exact(c_n).zip(cache.xhat.data.chunks_exact(c_n)) {
        for c in 0..c_n {
            grad_beta[c] += g[c];
            grad_gamma[c] += g[c] * h[c];
        }
    }
    let mut grad_x = Tensor3::zeros(grad_out.n, grad_out.t, c_n);
    let training = cache.batch.is_some();
    for ((g, h), gx) in grad_out
        .data
        .chunks_exact(c_n)
        .zip(cache.xhat.data.chunks_exact(c_n))
        .zip(grad_x.data.chunks_exact_mut(c_n))
    {
        for c in 0..c_n {
            let scale = layer.gamma[c] * cache.inv_std[c];
            gx[c] = if training {
                scale * (g[c] - grad_beta[c] / count - h[c] * grad_gamma[c] / count)
            } else {
                scale * g[c]
            };
        }
    }
    Ok(BnGrads {
        grad_x,
        grad_gamma,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardised_input_passes_through() {
        // per channel: mean 0, biased variance 1
        let x = Tensor3::from_vec(2, 2, 1, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &BatchNormLayer::new(1), Mode::Train).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor3::from_vec(3, 2, 1, vec![4.2; 6]).unwrap();
        let mut layer = BatchNormLayer::new(1);
        layer.beta[0] = 0.37;
        layer.gamma[0] = 5.0;
        let (y, _) = batchnorm_forward(&x, &layer, Mode::Train).unwrap();
        assert!(y.data.iter().all(|v| *v == 0.37));
    }

    #[test]
    fn single_element_batch_is_degenerate() {
        let x = Tensor3::from_vec(1, 1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            batchnorm_forward(&x, &BatchNormLayer::new(2), Mode::Train),
            Err(TcnError::DegenerateBatch)
        ));
        assert!(batchnorm_forward(&x, &BatchNormLayer::new(2), Mode::Eval).is_ok());
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let x = Tensor3::from_vec(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut layer = BatchNormLayer::new(1);
        let (_, cache) = batchnorm_forward(&x, &layer, Mode::Train).unwrap();
        layer.update_running(&cache);
        assert!((layer.running_mean[0] - 0.25).abs() < 1e-15);
        // unbiased variance of 1..4 is 5/3
        assert!((layer.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut layer = BatchNormLayer::new(1);
        layer.running_mean[0] = 2.0;
        layer.running_var[0] = 4.0 - layer.epsilon;
        let x = Tensor3::from_vec(1, 2, 1, vec![2.0, 4.0]).unwrap();
        let (y, _) = batchnorm_forward(&x, &layer, Mode::Eval).unwrap();
        assert!((y.data[0]).abs() < 1e-15);
        assert!((y.data[1] - 1.0).abs() < 1e-12);
    }
}
