//! Convolutional image encoder: a small trainable CNN standing in for a
//! pretrained backbone, producing a grid of local sub-region features
//! and one pooled global feature, each linearly projected into the joint
//! text-image space (v = W·f, v̄ = W̄·f̄).
//!
//! Reference dims at full scale would be f ∈ R^{768×289} (17×17 grid)
//! with a 2048-dim global feature; the desk configuration is 32×32 input
//! → three stride-2 convs → a 4×4 grid (N = 16).

use crate::error::{Error, Result};
use crate::layers::{ConvLayer, LEAKY_SLOPE};
use crate::raster::RawImage;
use crate::rng::{self, stream_rng};
use crate::tensor::Tensor;
use crate::text_encoder::uniform_param;

#[derive(Clone, Debug)]
pub struct ImageDims {
    pub input_side: usize,
    /// Output channels of each stride-2 conv block.
    pub channels: Vec<usize>,
    /// Joint feature dim D, shared with the text encoder.
    pub joint: usize,
}

impl ImageDims {
    pub fn grid_side(&self) -> usize {
        self.input_side >> self.channels.len()
    }

    pub fn regions(&self) -> usize {
        let g = self.grid_side();
        g * g
    }
}

#[derive(Clone)]
pub struct ImageEncoderParams {
    pub convs: Vec<ConvLayer>,
    /// W: joint × C, applied to every local feature column.
    pub w_local: Tensor,
    /// W̄: joint × C, applied to the pooled global feature.
    pub w_global: Tensor,
    pub dims: ImageDims,
}

/// Pre-projection features from the conv stack.
pub struct LocalGlobalFeatures {
    /// f, shape [C, N]; column j is sub-region j of the row-major grid.
    pub local: Tensor,
    /// f̄, shape [C]: global average pooled.
    pub global: Tensor,
    pub grid: usize,
}

/// Projected features in the joint space.
#[derive(Clone)]
pub struct ImageFeatures {
    /// v, shape [D, N].
    pub local: Tensor,
    /// v̄, shape [D].
    pub global: Tensor,
    pub grid: usize,
}

pub fn init_image_encoder(seed: u64, dims: ImageDims, freeze_backbone: bool) -> ImageEncoderParams {
    assert!(
        dims.input_side % (1 << dims.channels.len()) == 0,
        "input side {} not divisible by 2^{}",
        dims.input_side,
        dims.channels.len()
    );
    let mut rng = stream_rng(seed, rng::stream::INIT_IMAGE, 0);
    let mut convs = Vec::new();
    let mut in_ch = 3;
    for &out_ch in &dims.channels {
        let layer = ConvLayer::init(out_ch, in_ch, 3, 2, 1, &mut rng);
        convs.push(if freeze_backbone { layer.detached() } else { layer });
        in_ch = out_ch;
    }
    let w_local = uniform_param(&[dims.joint, in_ch], in_ch, &mut rng);
    let w_global = uniform_param(&[dims.joint, in_ch], in_ch, &mut rng);
    ImageEncoderParams { convs, w_local, w_global, dims }
}

impl ImageEncoderParams {
    /// Conv stack up to the last spatial map, then split into the local
    /// feature matrix and the pooled global feature.
    pub fn backbone(&self, x: &Tensor) -> LocalGlobalFeatures {
        let mut map = x.clone();
        for conv in &self.convs {
            map = conv.apply(&map).leaky_relu(LEAKY_SLOPE);
        }
        let grid = map.shape()[1];
        let channels = map.shape()[0];
        let local = map.reshape(&[channels, grid * grid]);
        let global = map.global_avg_pool();
        LocalGlobalFeatures { local, global, grid }
    }

    /// The linear projections into the joint space.
    pub fn project(&self, feats: &LocalGlobalFeatures) -> ImageFeatures {
        let c = feats.global.numel();
        let local = self.w_local.matmul(&feats.local);
        let global = self
            .w_global
            .matmul(&feats.global.reshape(&[c, 1]))
            .reshape(&[self.dims.joint]);
        ImageFeatures { local, global, grid: feats.grid }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("image.conv{i}.weight"), conv.weight.clone()));
            out.push((format!("image.conv{i}.bias"), conv.bias.clone()));
        }
        out.push(("image.w_local".into(), self.w_local.clone()));
        out.push(("image.w_global".into(), self.w_global.clone()));
        out
    }

    pub fn frozen(&self) -> ImageEncoderParams {
        ImageEncoderParams {
            convs: self.convs.iter().map(ConvLayer::detached).collect(),
            w_local: self.w_local.detach(),
            w_global: self.w_global.detach(),
            dims: self.dims.clone(),
        }
    }
}

/// Encode a raw image (non-differentiable input path).
pub fn encode_image(img: &RawImage, params: &ImageEncoderParams) -> Result<ImageFeatures> {
    if img.side != params.dims.input_side {
        return Err(Error::Contract(format!(
            "image side {} does not match encoder input side {}",
            img.side, params.dims.input_side
        )));
    }
    Ok(params.project(&params.backbone(&img.to_tensor())))
}

/// Encode an image held as a tensor, keeping it differentiable (used for
/// generated images inside the matching loss).
pub fn encode_image_tensor(x: &Tensor, params: &ImageEncoderParams) -> Result<ImageFeatures> {
    let s = params.dims.input_side;
    if x.shape() != [3, s, s] {
        return Err(Error::Contract(format!(
            "expected image tensor [3,{s},{s}], got {:?}",
            x.shape()
        )));
    }
    Ok(params.project(&params.backbone(x)))
}

/// Per-channel spatial mean of a [C,H,W] map.
pub fn global_average_pool(featmap: &Tensor) -> Tensor {
    featmap.global_avg_pool()
}
