//! Small trainable layer building blocks shared by the encoders, the
//! generator, and the discriminators.

use crate::tensor::Tensor;
use crate::text_encoder::uniform_param;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone)]
pub struct ConvLayer {
    pub weight: Tensor, // [O, C, k, k]
    pub bias: Tensor,   // [O]
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn init(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> ConvLayer {
        let weight = uniform_param(&[out_ch, in_ch, k, k], in_ch * k * k, rng);
        let bias = Tensor::param(&[out_ch], vec![0.0; out_ch]);
        ConvLayer { weight, bias, stride, pad }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.conv2d(&self.weight, self.stride, self.pad).add_channel_bias(&self.bias)
    }

    pub fn detached(&self) -> ConvLayer {
        ConvLayer {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor, // [out, in]
    pub bias: Tensor,   // [out]
}

impl Linear {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Linear {
        Linear {
            weight: uniform_param(&[out_dim, in_dim], in_dim, rng),
            bias: Tensor::param(&[out_dim], vec![0.0; out_dim]),
        }
    }

    /// Apply to a 1-D input, returning a 1-D output.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (out_dim, in_dim) = (self.weight.shape()[0], self.weight.shape()[1]);
        self.weight
            .matmul(&x.reshape(&[in_dim, 1]))
            .reshape(&[out_dim])
            .add(&self.bias)
    }

    pub fn detached(&self) -> Linear {
        Linear { weight: self.weight.detach(), bias: self.bias.detach() }
    }

    pub fn push_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}
