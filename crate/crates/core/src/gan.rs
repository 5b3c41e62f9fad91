//! Per-stage discriminators and the adversarial objectives.
//!
//! Each stage has a structurally independent discriminator with two
//! heads: an unconditional real/fake head and a conditional head that
//! consumes the image features concatenated with the spatially
//! replicated sentence vector. The generator loss halves between the
//! two heads; the discriminator loss is the four-term cross-entropy sum.

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::layers::{ConvLayer, Linear, LEAKY_SLOPE};
use crate::rng::{self, stream_rng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Probability clamp for the log terms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone)]
pub struct DiscriminatorParams {
    pub convs: Vec<ConvLayer>,
    /// 1x1 fuse over [features ‖ replicated sentence vector].
    pub cond_fuse: ConvLayer,
    pub uncond_head: Linear,
    pub cond_head: Linear,
    pub stage: usize,
    /// Expected input image side.
    pub side: usize,
    pub joint: usize,
}

/// One discriminator per stage. Stage i consumes images of side
/// `base_grid * 2^(i+1)`, downsampled internally to a 4x4 feature grid.
pub fn init_discriminators(
    seed: u64,
    hp: &HyperParams,
    base_grid: usize,
    base_channels: usize,
) -> Vec<DiscriminatorParams> {
    let mut rng = stream_rng(seed, rng::stream::INIT_DISC, 0);
    let mut out = Vec::new();
    for stage in 0..hp.stages {
        let side = base_grid * (1 << stage) * 2;
        let downs = (side / 4).trailing_zeros() as usize;
        let mut convs = Vec::new();
        let mut in_ch = 3;
        let mut ch = base_channels;
        for _ in 0..downs {
            convs.push(ConvLayer::init(ch, in_ch, 4, 2, 1, &mut rng));
            in_ch = ch;
            ch *= 2;
        }
        let feat = in_ch * 16;
        out.push(DiscriminatorParams {
            convs,
            cond_fuse: ConvLayer::init(in_ch, in_ch + hp.joint, 1, 1, 0, &mut rng),
            uncond_head: Linear::init(1, feat, &mut rng),
            cond_head: Linear::init(1, feat, &mut rng),
            stage,
            side,
            joint: hp.joint,
        });
    }
    out
}

impl DiscriminatorParams {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let p = format!("disc{}", self.stage);
        for (i, conv) in self.convs.iter().enumerate() {
            conv.push_params(&format!("{p}.conv{i}"), &mut out);
        }
        self.cond_fuse.push_params(&format!("{p}.cond_fuse"), &mut out);
        self.uncond_head.push_params(&format!("{p}.uncond_head"), &mut out);
        self.cond_head.push_params(&format!("{p}.cond_head"), &mut out);
        out
    }
}

/// Run one discriminator, returning (unconditional, conditional) match
/// probabilities as scalar tensors in (0,1).
pub fn discriminate(
    image: &Tensor,
    sentence: &Tensor,
    d: &DiscriminatorParams,
) -> Result<(Tensor, Tensor)> {
    if image.shape() != [3, d.side, d.side] {
        return Err(Error::Contract(format!(
            "stage {} discriminator expects [3,{},{}], got {:?}",
            d.stage,
            d.side,
            d.side,
            image.shape()
        )));
    }
    if sentence.shape() != [d.joint] {
        return Err(Error::Contract(format!(
            "sentence vector must be [{}], got {:?}",
            d.joint,
            sentence.shape()
        )));
    }
    let mut map = image.clone();
    for conv in &d.convs {
        map = conv.apply(&map).leaky_relu(LEAKY_SLOPE);
    }
    let ch = map.shape()[0];
    let flat = map.reshape(&[ch * 16]);
    let p_uncond = d.uncond_head.apply(&flat).sigmoid();

    let replicated = sentence.replicate_spatial(4, 4);
    let joined = Tensor::concat0(&[&map, &replicated]);
    let fused = d.cond_fuse.apply(&joined).leaky_relu(LEAKY_SLOPE);
    let p_cond = d.cond_head.apply(&fused.reshape(&[ch * 16])).sigmoid();
    Ok((p_uncond, p_cond))
}

fn neg_half_log(p: &Tensor) -> Tensor {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln().mul_scalar(-0.5)
}

/// Per-stage generator loss: −½·E[log D(x̂)] − ½·E[log D(x̂, ē)], batch
/// mean over the items.
pub fn generator_adv_loss(
    fakes: &[Vec<Tensor>],
    sentences: &[Tensor],
    discs: &[DiscriminatorParams],
) -> Result<Vec<Tensor>> {
    if fakes.is_empty() {
        return Err(Error::Contract("generator loss needs at least one item".into()));
    }
    let stages = discs.len();
    for item in fakes {
        if item.len() != stages {
            return Err(Error::Contract(format!(
                "expected one fake per stage ({stages}), got {}",
                item.len()
            )));
        }
    }
    let scale = 1.0 / fakes.len() as f64;
    let mut per_stage = Vec::with_capacity(stages);
    for (i, d) in discs.iter().enumerate() {
        let mut terms = Vec::new();
        for (item, sent) in fakes.iter().zip(sentences) {
            let (p_u, p_c) = discriminate(&item[i], sent, d)?;
            terms.push(neg_half_log(&p_u).add(&neg_half_log(&p_c)));
        }
        let refs: Vec<&Tensor> = terms.iter().collect();
        per_stage.push(Tensor::concat0(&refs).sum().mul_scalar(scale));
    }
    Ok(per_stage)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DiscStageLoss {
    pub total: f64,
    pub uncond: f64,
    pub cond: f64,
}

/// Four-term discriminator loss for one stage, batch mean:
/// unconditional real/fake cross-entropy plus conditional real/fake
/// cross-entropy against the true captions. Fakes are cut from the
/// generator graph here, matching the alternating update scheme. With
/// `mismatch_real` an extra real-image/rotated-caption negative is
/// added to the conditional term.
pub fn discriminator_loss(
    reals: &[Tensor],
    fakes: &[Tensor],
    sentences: &[Tensor],
    d: &DiscriminatorParams,
    mismatch_real: bool,
) -> Result<(Tensor, DiscStageLoss)> {
    if reals.len() != fakes.len() || reals.len() != sentences.len() || reals.is_empty() {
        return Err(Error::Contract(format!(
            "discriminator batch misaligned: {} reals, {} fakes, {} sentences",
            reals.len(),
            fakes.len(),
            sentences.len()
        )));
    }
    let n = reals.len();
    let scale = 1.0 / n as f64;
    let mut uncond_terms = Vec::new();
    let mut cond_terms = Vec::new();
    for (k, ((real, fake), sent)) in reals.iter().zip(fakes).zip(sentences).enumerate() {
        let fake = fake.detach();
        let (pu_real, pc_real) = discriminate(real, sent, d)?;
        let (pu_fake, pc_fake) = discriminate(&fake, sent, d)?;
        let one = Tensor::scalar(1.0);
        uncond_terms.push(neg_half_log(&pu_real).add(&neg_half_log(&one.sub(&pu_fake))));
        let mut cond = neg_half_log(&pc_real).add(&neg_half_log(&one.sub(&pc_fake)));
        if mismatch_real && n > 1 {
            let wrong = &sentences[(k + 1) % n];
            let (_, pc_mis) = discriminate(real, wrong, d)?;
            cond = cond.add(&neg_half_log(&one.sub(&pc_mis)));
        }
        cond_terms.push(cond);
    }
    let sum = |v: &[Tensor]| {
        let refs: Vec<&Tensor> = v.iter().collect();
        Tensor::concat0(&refs).sum()
    };
    let uncond = sum(&uncond_terms).mul_scalar(scale);
    let cond = sum(&cond_terms).mul_scalar(scale);
    let total = uncond.add(&cond);
    let split = DiscStageLoss {
        total: total.item(),
        uncond: uncond.item(),
        cond: cond.item(),
    };
    Ok((total, split))
}

/// Components of one generator objective evaluation, plus the matching
/// discriminator losses when the step recorded them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub gen_stage: Vec<f64>,
    pub gen_total: f64,
    /// lambda * matching loss (0 when lambda is 0).
    pub damsm_weighted: f64,
    /// gen_total + damsm_weighted, exactly.
    pub total: f64,
    pub disc_stage: Vec<DiscStageLoss>,
}

/// Combine per-stage adversarial losses with the weighted matching loss.
/// The matching value must come from the last stage's output only.
pub fn total_objective(
    adv_losses: &[Tensor],
    damsm_total: Option<&Tensor>,
    lambda: f64,
) -> (Tensor, LossReport) {
    assert!(!adv_losses.is_empty(), "total_objective needs per-stage losses");
    let mut total = adv_losses[0].clone();
    for loss in &adv_losses[1..] {
        total = total.add(loss);
    }
    let gen_stage: Vec<f64> = adv_losses.iter().map(Tensor::item).collect();
    let gen_total: f64 = gen_stage.iter().sum();
    let damsm_weighted = match damsm_total {
        Some(value) => {
            let weighted = value.mul_scalar(lambda);
            total = total.add(&weighted);
            weighted.item()
        }
        None => 0.0,
    };
    let report = LossReport {
        gen_stage,
        gen_total,
        damsm_weighted,
        total: gen_total + damsm_weighted,
        disc_stage: Vec::new(),
    };
    (total, report)
}
