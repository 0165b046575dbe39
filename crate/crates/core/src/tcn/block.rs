//! Residual block: two `conv → batchnorm → ReLU` stages added to the input
//! (or to a 1×1 projection of it when the channel counts differ).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormLayer, BnCache};
use super::conv::{dilated_causal_conv_backward, dilated_causal_conv_forward, ConvLayer};
use super::{Mode, Tensor3, TcnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub bn1: BatchNormLayer,
    pub conv2: ConvLayer,
    pub bn2: BatchNormLayer,
    pub projection: Option<ConvLayer>,
}

impl ResidualBlock {
    pub fn init<R: Rng>(c_in: usize, c_out: usize, kernel_size: usize, dilation: usize, rng: &mut R) -> Self {
        Self {
            conv1: ConvLayer::init(c_in, c_out, kernel_size, dilation, rng),
            bn1: BatchNormLayer::new(c_out),
            conv2: ConvLayer::init(c_out, c_out, kernel_size, dilation, rng),
            bn2: BatchNormLayer::new(c_out),
            projection: (c_in != c_out).then(|| ConvLayer::init(c_in, c_out, 1, 1, rng)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.conv1.c_in
    }

    pub fn c_out(&self) -> usize {
        self.conv2.c_out
    }

    pub fn is_consistent(&self) -> bool {
        self.conv1.is_consistent()
            && self.conv2.is_consistent()
            && self.bn1.is_consistent()
            && self.bn2.is_consistent()
            && self.conv1.c_out == self.bn1.channels
            && self.conv2.c_in == self.conv1.c_out
            && self.conv2.c_out == self.bn2.channels
            && match &self.projection {
                Some(p) => p.is_consistent() && p.kernel_size == 1 && p.c_in == self.c_in() && p.c_out == self.c_out(),
                None => self.c_in() == self.c_out(),
            }
    }

    /// Parameter buffers in a fixed order, matched by [`BlockGrads::into_vec`].
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![
            &self.conv1.kernel,
            &self.conv1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.kernel,
            &self.conv2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
        ];
        if let Some(p) = &self.projection {
            v.push(&p.kernel);
            v.push(&p.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![
            &mut self.conv1.kernel,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.kernel,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ];
        if let Some(p) = &mut self.projection {
            v.push(&mut p.kernel);
            v.push(&mut p.bias);
        }
        v
    }
}

pub struct BlockCache {
    x: Tensor3,
    h1: Tensor3,
    pub bn1: BnCache,
    pub bn2: BnCache,
    /// ReLU pass-through masks of the two stages.
    mask1: Vec<bool>,
    mask2: Vec<bool>,
}

impl BlockCache {
    /// Signs of every ReLU input, for kink detection in gradient checks.
    pub fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.mask1.iter().chain(&self.mask2).copied()
    }
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub conv1_kernel: Vec<f64>,
    pub conv1_bias: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    pub conv2_kernel: Vec<f64>,
    pub conv2_bias: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
    pub projection: Option<(Vec<f64>, Vec<f64>)>,
}

impl BlockGrads {
    pub fn into_vec(self) -> Vec<Vec<f64>> {
        let mut v = vec![
            self.conv1_kernel,
            self.conv1_bias,
            self.bn1_gamma,
            self.bn1_beta,
            self.conv2_kernel,
            self.conv2_bias,
            self.bn2_gamma,
            self.bn2_beta,
        ];
        if let Some((k, b)) = self.projection {
            v.push(k);
            v.push(b);
        }
        v
    }
}

fn relu_in_place(t: &mut Tensor3) -> Vec<bool> {
    t.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

fn mask_grad(g: &mut Tensor3, mask: &[bool]) {
    for (v, &on) in g.data.iter_mut().zip(mask) {
        if !on {
            *v = 0.0;
        }
    }
}

pub fn residual_block_forward(
    x: &Tensor3,
    block: &ResidualBlock,
    mode: Mode,
) -> Result<(Tensor3, BlockCache), TcnError> {
    if x.c != block.c_in() {
        return Err(TcnError::ShapeMismatch(format!(
            "block expects {} channels, got {}",
            block.c_in(),
            x.c
        )));
    }
    let a1 = dilated_causal_conv_forward(x, &block.conv1)?;
    let (mut h1, bn1) = batchnorm_forward(&a1, &block.bn1, mode)?;
    let mask1 = relu_in_place(&mut h1);
    let a2 = dilated_causal_conv_forward(&h1, &block.conv2)?;
    let (mut y, bn2) = batchnorm_forward(&a2, &block.bn2, mode)?;
    let mask2 = relu_in_place(&mut y);
    match &block.projection {
        Some(p) => y.add_assign(&dilated_causal_conv_forward(x, p)?),
        None => y.add_assign(x),
    }
    Ok((
        y,
        BlockCache {
            x: x.clone(),
            h1,
            bn1,
            bn2,
            mask1,
            mask2,
        },
    ))
}

pub fn residual_block_backward(
    grad_y: &Tensor3,
    cache: &BlockCache,
    block: &ResidualBlock,
) -> Result<(Tensor3, BlockGrads), TcnError> {
    let mut g2 = grad_y.clone();
    mask_grad(&mut g2, &cache.mask2);
    let bn2 = batchnorm_backward(&g2, &cache.bn2, &block.bn2)?;
    let c2 = dilated_causal_conv_backward(&bn2.grad_x, &cache.h1, &block.conv2)?;
    let mut g1 = c2.grad_x;
    mask_grad(&mut g1, &cache.mask1);
    let bn1 = batchnorm_backward(&g1, &cache.bn1, &block.bn1)?;
    let c1 = dilated_causal_conv_backward(&bn1.grad_x, &cache.x, &block.conv1)?;
    let mut grad_x = c1.grad_x;
    let projection = match &block.projection {
        Some(p) => {
            let pg = dilated_causal_conv_backward(grad_y, &cache.x, p)?;
            grad_x.add_assign(&pg.grad_x);
            Some((pg.grad_kernel, pg.grad_bias))
        }
        None => {
            grad_x.add_assign(grad_y);
            None
        }
    };
    Ok((
        grad_x,
        BlockGrads {
            conv1_kernel: c1.grad_kernel,
            conv1_bias: c1.grad_bias,
            bn1_gamma: bn1.grad_gamma,
            bn1_beta: bn1.grad_beta,
            conv2_kernel: c2.grad_kernel,
            conv2_bias: c2.grad_bias,
            bn2_gamma: bn2.grad_gamma,
            bn2_beta: bn2.grad_beta,
            projection,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_tau(c_in: usize, c_out: usize) -> ResidualBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = ResidualBlock::init(c_in, c_out, 3, 2, &mut rng);
        b.conv1.kernel.fill(0.0);
        b.conv2.kernel.fill(0.0);
        b
    }

    fn random_input(n: usize, t: usize, c: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor3::from_vec(n, t, c, data).unwrap()
    }

    #[test]
    fn zero_path_is_identity() {
        let b = zero_tau(4, 4);
        let x = random_input(3, 6, 4, 1);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = residual_block_forward(&x, &b, mode).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn zero_path_with_projection() {
        let b = zero_tau(3, 5);
        let x = random_input(2, 4, 3, 2);
        let (y, _) = residual_block_forward(&x, &b, Mode::Eval).unwrap();
        let p = dilated_causal_conv_forward(&x, b.projection.as_ref().unwrap()).unwrap();
        assert_eq!(y, p);
    }

    #[test]
    fn final_step_does_not_leak_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = ResidualBlock::init(3, 4, 5, 1, &mut rng);
        let x = random_input(2, 8, 3, 4);
        let mut x2 = x.clone();
        for bi in 0..2 {
            x2.row_mut(bi, 7).fill(0.0);
        }
        let (y1, _) = residual_block_forward(&x, &b, Mode::Eval).unwrap();
        let (y2, _) = residual_block_forward(&x2, &b, Mode::Eval).unwrap();
        for bi in 0..2 {
            for t in 0..7 {
                assert_eq!(y1.row(bi, t), y2.row(bi, t));
            }
        }
    }
}
