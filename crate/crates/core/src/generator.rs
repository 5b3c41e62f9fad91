//! Attentional multi-stage generator.
//!
//! Stage 0 turns noise plus the (conditioning-augmented) sentence vector
//! into the coarsest hidden grid; every later stage queries the word
//! features with its sub-region features through a word-attention layer,
//! fuses the word-context matrix with the hidden grid, and doubles the
//! resolution. Each stage has a 3-channel image head.

use crate::error::{Error, Result};
use crate::layers::{ConvLayer, Linear, LEAKY_SLOPE};
use crate::raster::RawImage;
use crate::rng::{self, stream_rng};
use crate::tensor::Tensor;
use crate::text_encoder::{uniform_param, TextFeatures};

#[derive(Clone, Copy, Debug)]
pub struct GenDims {
    /// Stage count m (2 or 3).
    pub stages: usize,
    /// Word feature dim D.
    pub joint: usize,
    /// Hidden image-feature dim per stage.
    pub stage_dim: usize,
    pub z_dim: usize,
    pub c_dim: usize,
    /// Side of the stage-0 hidden grid.
    pub base_grid: usize,
}

impl GenDims {
    pub fn grid_at(&self, stage: usize) -> usize {
        self.base_grid << stage
    }

    /// Image side produced by the stage-i head (one upsample above the
    /// hidden grid).
    pub fn image_side_at(&self, stage: usize) -> usize {
        2 * self.grid_at(stage)
    }
}

/// Per-stage attention + fusion parameters: the word projection e' = U·e,
/// a 1x1 fuse conv over [h ‖ context], a residual pair, and the upsample
/// conv.
#[derive(Clone)]
pub struct StageParams {
    pub word_proj: Tensor, // U: [stage_dim, joint]
    pub fuse: ConvLayer,
    pub res1: ConvLayer,
    pub res2: ConvLayer,
    pub up_conv: ConvLayer,
}

#[derive(Clone)]
pub struct GeneratorParams {
    pub ca_mu: Linear,
    pub ca_logvar: Linear,
    pub f0: Linear,
    pub f0_conv: ConvLayer,
    pub stages: Vec<StageParams>, // m-1 entries, stage i at index i-1
    pub heads: Vec<ConvLayer>,    // m entries
    pub dims: GenDims,
}

/// Hidden image features at one stage: [stage_dim, g, g].
#[derive(Clone)]
pub struct StageState {
    pub h: Tensor,
    pub grid: usize,
}

/// Word-context matrix and attention weights from one attention layer.
#[derive(Clone)]
pub struct AttentionResult {
    /// Context c, shape [stage_dim, N]; column j belongs to sub-region j.
    pub context: Tensor,
    /// β, shape [N, T]; row j is the word distribution for sub-region j.
    pub weights: Tensor,
}

pub fn init_generator(seed: u64, dims: GenDims) -> GeneratorParams {
    let mut rng = stream_rng(seed, rng::stream::INIT_GEN, 0);
    let d = dims.stage_dim;
    let n0 = dims.base_grid * dims.base_grid;
    let ca_mu = Linear::init(dims.c_dim, dims.joint, &mut rng);
    let ca_logvar = Linear::init(dims.c_dim, dims.joint, &mut rng);
    let f0 = Linear::init(d * n0, dims.z_dim + dims.c_dim, &mut rng);
    let f0_conv = ConvLayer::init(d, d, 3, 1, 1, &mut rng);
    let mut stages = Vec::new();
    for _ in 1..dims.stages {
        stages.push(StageParams {
            word_proj: uniform_param(&[d, dims.joint], dims.joint, &mut rng),
            fuse: ConvLayer::init(d, 2 * d, 1, 1, 0, &mut rng),
            res1: ConvLayer::init(d, d, 3, 1, 1, &mut rng),
            res2: ConvLayer::init(d, d, 3, 1, 1, &mut rng),
            up_conv: ConvLayer::init(d, d, 3, 1, 1, &mut rng),
        });
    }
    let heads = (0..dims.stages)
        .map(|_| ConvLayer::init(3, d, 3, 1, 1, &mut rng))
        .collect();
    GeneratorParams { ca_mu, ca_logvar, f0, f0_conv, stages, heads, dims }
}

/// Reparameterized Gaussian resampling of the sentence vector:
/// mu(ē) + exp(logvar(ē)/2) ⊙ ε.
pub fn conditioning_augmentation(
    sentence: &Tensor,
    eps: &Tensor,
    params: &GeneratorParams,
) -> Tensor {
    ca_forward(sentence, eps, params).0
}

/// Returns (sample, mu, logvar); mu/logvar feed the optional KL term.
pub fn ca_forward(
    sentence: &Tensor,
    eps: &Tensor,
    params: &GeneratorParams,
) -> (Tensor, Tensor, Tensor) {
    let mu = params.ca_mu.apply(sentence);
    let logvar = params.ca_logvar.apply(sentence);
    let sample = mu.add(&logvar.mul_scalar(0.5).exp().mul(eps));
    (sample, mu, logvar)
}

/// One word-attention layer: project words into the stage space, score
/// them against every sub-region feature, softmax over words, and build
/// the per-region word-context vectors.
pub fn word_attention(words: &Tensor, hidden: &Tensor, word_proj: &Tensor) -> AttentionResult {
    let projected = word_proj.matmul(words); // e': [stage_dim, T]
    let scores = hidden.transpose().matmul(&projected); // s': [N, T]
    let weights = scores.softmax_rows(1.0); // β: rows sum to 1
    let context = projected.matmul(&weights.transpose()); // [stage_dim, N]
    AttentionResult { context, weights }
}

/// h_0 from noise and the augmented sentence vector.
pub fn initial_stage(z: &Tensor, c_aug: &Tensor, params: &GeneratorParams) -> StageState {
    let g = params.dims.base_grid;
    let d = params.dims.stage_dim;
    let joined = Tensor::concat0(&[z, c_aug]);
    let h = params
        .f0
        .apply(&joined)
        .reshape(&[d, g, g])
        .leaky_relu(LEAKY_SLOPE);
    let h = params.f0_conv.apply(&h).leaky_relu(LEAKY_SLOPE);
    StageState { h, grid: g }
}

/// h_i = F_i(h_{i-1}, attention(e, h_{i-1})): channel-concat the hidden
/// grid with the word-context grid, fuse, residual-refine, upsample 2x.
pub fn stage_forward(
    prev: &StageState,
    text: &TextFeatures,
    params: &GeneratorParams,
    stage: usize,
) -> Result<(StageState, AttentionResult)> {
    if stage == 0 || stage >= params.dims.stages {
        return Err(Error::Contract(format!(
            "stage index {stage} out of range 1..{}",
            params.dims.stages
        )));
    }
    let sp = &params.stages[stage - 1];
    let d = params.dims.stage_dim;
    let g = prev.grid;
    let n = g * g;
    let h_flat = prev.h.reshape(&[d, n]);
    let attn = word_attention(&text.words, &h_flat, &sp.word_proj);
    let ctx_map = attn.context.reshape(&[d, g, g]);
    let joined = Tensor::concat0(&[&prev.h, &ctx_map]);
    let fused = sp.fuse.apply(&joined).leaky_relu(LEAKY_SLOPE);
    let refined = sp
        .res2
        .apply(&sp.res1.apply(&fused).leaky_relu(LEAKY_SLOPE))
        .add(&fused)
        .leaky_relu(LEAKY_SLOPE);
    let up = refined.upsample_nearest2x();
    let h = sp.up_conv.apply(&up).leaky_relu(LEAKY_SLOPE);
    Ok((StageState { h, grid: 2 * g }, attn))
}

/// Differentiable stage-i image: upsample, 3-channel conv, tanh squashed
/// into [0,1].
pub fn image_head(state: &StageState, params: &GeneratorParams, stage: usize) -> Result<Tensor> {
    if stage >= params.dims.stages {
        return Err(Error::Contract(format!(
            "stage index {stage} out of range 0..{}",
            params.dims.stages
        )));
    }
    let up = state.h.upsample_nearest2x();
    let img = params.heads[stage].apply(&up).tanh();
    Ok(img.add_scalar(1.0).mul_scalar(0.5))
}

pub fn generate_image(state: &StageState, params: &GeneratorParams, stage: usize) -> Result<RawImage> {
    RawImage::from_tensor(&image_head(state, params, stage)?)
}

/// Full forward pass of the stage recursion, keeping tensors for training.
pub struct GeneratorOutput {
    pub images: Vec<Tensor>,
    pub attention: Vec<AttentionResult>,
    pub mu: Tensor,
    pub logvar: Tensor,
}

pub fn forward(
    z: &Tensor,
    eps: &Tensor,
    text: &TextFeatures,
    params: &GeneratorParams,
) -> Result<GeneratorOutput> {
    let (c_aug, mu, logvar) = ca_forward(&text.sentence, eps, params);
    let mut state = initial_stage(z, &c_aug, params);
    let mut images = vec![image_head(&state, params, 0)?];
    let mut attention = Vec::new();
    for stage in 1..params.dims.stages {
        let (next, attn) = stage_forward(&state, text, params, stage)?;
        state = next;
        images.push(image_head(&state, params, stage)?);
        attention.push(attn);
    }
    Ok(GeneratorOutput { images, attention, mu, logvar })
}

/// End-to-end generation: m images of doubling side plus the m-1
/// attention results from stages 1..m-1.
pub fn generate_all(
    z: &Tensor,
    eps: &Tensor,
    text: &TextFeatures,
    params: &GeneratorParams,
) -> Result<(Vec<RawImage>, Vec<AttentionResult>)> {
    let out = forward(z, eps, text, params)?;
    let images = out
        .images
        .iter()
        .map(RawImage::from_tensor)
        .collect::<Result<Vec<_>>>()?;
    Ok((images, out.attention))
}

impl GeneratorParams {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.ca_mu.push_params("gen.ca_mu", &mut out);
        self.ca_logvar.push_params("gen.ca_logvar", &mut out);
        self.f0.push_params("gen.f0", &mut out);
        self.f0_conv.push_params("gen.f0_conv", &mut out);
        for (i, sp) in self.stages.iter().enumerate() {
            let s = i + 1;
            out.push((format!("gen.stage{s}.word_proj"), sp.word_proj.clone()));
            sp.fuse.push_params(&format!("gen.stage{s}.fuse"), &mut out);
            sp.res1.push_params(&format!("gen.stage{s}.res1"), &mut out);
            sp.res2.push_params(&format!("gen.stage{s}.res2"), &mut out);
            sp.up_conv.push_params(&format!("gen.stage{s}.up_conv"), &mut out);
        }
        for (i, head) in self.heads.iter().enumerate() {
            head.push_params(&format!("gen.head{i}"), &mut out);
        }
        out
    }
}
