//! Finite-difference verification of every differentiable path: core
//! primitives, the word-attention layer, the matching loss through both
//! encoders, and the adversarial losses through the discriminators.

use crate::config::HyperParams;
use crate::damsm::{damsm_loss, BatchPairs};
use crate::error::Result;
use crate::gan::{discriminate, discriminator_loss, generator_adv_loss, init_discriminators, PROB_EPS};
use crate::generator::word_attention;
use crate::image_encoder::{encode_image_tensor, init_image_encoder, ImageDims};
use crate::rng::{self, stream_rng};
use crate::tensor::{grad_check, grad_check_multi, Tensor};
use crate::text_encoder::{encode_text, init_text_encoder, LstmCell, TextDims, TextEncoderParams};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
}

const EPS: f64 = 1e-5;

fn rand_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let data: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor::new(shape, data)
}

/// Run the whole suite. Every entry must come back at or below 1e-4.
pub fn run_grad_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = stream_rng(seed, rng::stream::EVAL, 4242);
    let mut results = Vec::new();
    let mut push = |name: &str, err: f64| {
        results.push(CheckResult { name: name.to_string(), max_rel_err: err });
    };

    // ── primitives ───────────────────────────────────────────────────
    {
        let b = rand_tensor(&[3, 4], &mut rng);
        let w = rand_tensor(&[2, 4], &mut rng);
        let x = rand_tensor(&[2, 3], &mut rng);
        push("matmul", grad_check(|a| a.matmul(&b).mul(&w).sum(), &x, EPS)?);
    }
    {
        let w = rand_tensor(&[4, 3], &mut rng);
        let x = rand_tensor(&[4, 3], &mut rng);
        push(
            "softmax_columns",
            grad_check(|t| t.softmax_columns(5.0).mul(&w).sum(), &x, EPS)?,
        );
    }
    {
        let kernel = rand_tensor(&[2, 3, 3, 3], &mut rng);
        let img = rand_tensor(&[3, 6, 6], &mut rng);
        let w = rand_tensor(&[2, 3, 3], &mut rng);
        push(
            "conv2d_input",
            grad_check(|t| t.conv2d(&kernel, 2, 1).mul(&w).sum(), &img, EPS)?,
        );
        push(
            "conv2d_kernel",
            grad_check(|k| img.conv2d(k, 2, 1).mul(&w).sum(), &kernel, EPS)?,
        );
    }
    {
        let x = rand_tensor(&[2, 3, 3], &mut rng);
        let w = rand_tensor(&[2, 6, 6], &mut rng);
        push(
            "upsample_nearest2x",
            grad_check(|t| t.upsample_nearest2x().mul(&w).sum(), &x, EPS)?,
        );
        let wp = rand_tensor(&[2], &mut rng);
        push(
            "global_avg_pool",
            grad_check(|t| t.global_avg_pool().mul(&wp).sum(), &x, EPS)?,
        );
        let bias = rand_tensor(&[2], &mut rng);
        push(
            "add_channel_bias",
            grad_check(|t| t.add_channel_bias(&bias).tanh().sum(), &x, EPS)?,
        );
    }
    {
        let x = rand_tensor(&[5], &mut rng);
        push(
            "unary_chain",
            grad_check(
                |t| t.sigmoid().mul_scalar(0.9).add_scalar(0.05).ln().sum(),
                &x,
                EPS,
            )?,
        );
    }
    {
        // one LSTM step through every gate
        let h = 3;
        let cell = LstmCell {
            w_x: rand_tensor(&[4 * h, 2], &mut rng),
            w_h: rand_tensor(&[4 * h, h], &mut rng),
            bias: rand_tensor(&[4 * h], &mut rng),
        };
        let x0 = rand_tensor(&[2], &mut rng);
        let w = rand_tensor(&[h], &mut rng);
        push(
            "lstm_gates",
            grad_check(
                |wx| {
                    let cell = LstmCell {
                        w_x: wx.clone(),
                        w_h: cell.w_h.detach(),
                        bias: cell.bias.detach(),
                    };
                    let pre = cell
                        .w_x
                        .matmul(&x0.reshape(&[2, 1]))
                        .reshape(&[4 * h])
                        .add(&cell.bias);
                    let i = pre.narrow0(0, h).sigmoid();
                    let f = pre.narrow0(h, h).sigmoid();
                    let g = pre.narrow0(2 * h, h).tanh();
                    let o = pre.narrow0(3 * h, h).sigmoid();
                    let c = f.mul_scalar(0.3).add(&i.mul(&g));
                    o.mul(&c.tanh()).mul(&w).sum()
                },
                &cell.w_x,
                EPS,
            )?,
        );
    }

    // ── word attention (one layer) ───────────────────────────────────
    {
        let words = rand_tensor(&[4, 3], &mut rng);
        let hidden = rand_tensor(&[5, 4], &mut rng);
        let proj = rand_tensor(&[5, 4], &mut rng);
        let w_ctx = rand_tensor(&[5, 4], &mut rng);
        let w_beta = rand_tensor(&[4, 3], &mut rng);
        let (name, err) = grad_check_multi(
            |args| {
                let attn = word_attention(&args[0], &args[1], &args[2]);
                attn.context.mul(&w_ctx).sum().add(&attn.weights.mul(&w_beta).sum())
            },
            &[("words", &words), ("hidden", &hidden), ("word_proj", &proj)],
            EPS,
        )?;
        push(&format!("word_attention[{name}]"), err);
    }

    // ── matching loss through both encoders ──────────────────────────
    {
        let td = TextDims { vocab: 8, embed: 3, hidden: 3, max_len: 8 };
        let text = init_text_encoder(seed, td);
        let id = ImageDims { input_side: 8, channels: vec![4], joint: 6 };
        let image = init_image_encoder(seed, id, false);
        let hp = HyperParams {
            gamma1: 5.0,
            gamma2: 5.0,
            gamma3: 10.0,
            batch: 2,
            lambda: 5.0,
            stages: 2,
            joint: 6,
            stage_dim: 4,
            z_dim: 4,
        };
        let captions = [vec![1usize, 3, 5], vec![2usize, 6]];
        let imgs = [rand_tensor(&[3, 8, 8], &mut rng), rand_tensor(&[3, 8, 8], &mut rng)];

        let mut params: Vec<(String, Tensor)> = text.named_params();
        params.extend(image.named_params());
        let param_refs: Vec<(&str, &Tensor)> =
            params.iter().map(|(n, p)| (n.as_str(), p)).collect();
        let (name, err) = grad_check_multi(
            |args| {
                let text_p = TextEncoderParams {
                    embed: args[0].clone(),
                    fwd: LstmCell {
                        w_x: args[1].clone(),
                        w_h: args[2].clone(),
                        bias: args[3].clone(),
                    },
                    bwd: LstmCell {
                        w_x: args[4].clone(),
                        w_h: args[5].clone(),
                        bias: args[6].clone(),
                    },
                    dims: td,
                };
                let mut image_p = image.frozen();
                image_p.convs[0].weight = args[7].clone();
                image_p.convs[0].bias = args[8].clone();
                image_p.w_local = args[9].clone();
                image_p.w_global = args[10].clone();
                let feats: Vec<_> = imgs
                    .iter()
                    .map(|x| encode_image_tensor(x, &image_p).unwrap())
                    .collect();
                let texts: Vec<_> = captions
                    .iter()
                    .map(|c| encode_text(c, &text_p).unwrap())
                    .collect();
                let batch = BatchPairs::new(&feats, &texts).unwrap();
                damsm_loss(&batch, &hp).unwrap().total
            },
            &param_refs,
            EPS,
        )?;
        push(&format!("damsm_loss[{name}]"), err);
    }

    // ── adversarial losses through tiny discriminators ───────────────
    {
        let hp = HyperParams {
            gamma1: 5.0,
            gamma2: 5.0,
            gamma3: 10.0,
            batch: 2,
            lambda: 5.0,
            stages: 2,
            joint: 4,
            stage_dim: 4,
            z_dim: 4,
        };
        let discs = init_discriminators(seed, &hp, 4, 2);
        let sent = rand_tensor(&[4], &mut rng);
        let fake0 = rand_tensor(&[3, 8, 8], &mut rng).sigmoid();
        let fake1 = rand_tensor(&[3, 16, 16], &mut rng).sigmoid();
        let real0 = rand_tensor(&[3, 8, 8], &mut rng).sigmoid();

        // generator loss w.r.t. the fake image
        push(
            "generator_adv_loss[fake_image]",
            grad_check(
                |img| {
                    let fakes = vec![vec![img.clone(), fake1.detach()]];
                    let losses =
                        generator_adv_loss(&fakes, &[sent.detach()], &discs).unwrap();
                    losses[0].add(&losses[1])
                },
                &fake0,
                EPS,
            )?,
        );

        // the conditional generator term alone
        push(
            "generator_conditional_term",
            grad_check(
                |img| {
                    let (_, p_cond) = discriminate(img, &sent, &discs[0]).unwrap();
                    p_cond
                        .clamp(PROB_EPS, 1.0 - PROB_EPS)
                        .ln()
                        .mul_scalar(-0.5)
                },
                &fake0,
                EPS,
            )?,
        );

        // discriminator loss w.r.t. its own parameters
        let d_params = discs[0].named_params();
        let probes: Vec<(&str, &Tensor)> = d_params
            .iter()
            .map(|(n, p)| (n.as_str(), p))
            .collect();
        let (name, err) = grad_check_multi(
            |args| {
                let mut d = discs[0].clone();
                d.convs[0].weight = args[0].clone();
                d.convs[0].bias = args[1].clone();
                d.cond_fuse.weight = args[2].clone();
                d.cond_fuse.bias = args[3].clone();
                d.uncond_head.weight = args[4].clone();
                d.uncond_head.bias = args[5].clone();
                d.cond_head.weight = args[6].clone();
                d.cond_head.bias = args[7].clone();
                let (loss, _) = discriminator_loss(
                    &[real0.detach()],
                    &[fake0.detach()],
                    &[sent.detach()],
                    &d,
                    false,
                )
                .unwrap();
                loss
            },
            &probes,
            EPS,
        )?;
        push(&format!("discriminator_loss[{name}]"), err);
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn full_suite_within_tolerance_and_time() {
        let started = Instant::now();
        let results = run_grad_suite(7).unwrap();
        assert!(results.len() >= 12);
        for r in &results {
            assert!(
                r.max_rel_err <= 1e-4,
                "{} exceeded tolerance: {}",
                r.name,
                r.max_rel_err
            );
        }
        assert!(
            started.elapsed().as_secs() < 60,
            "suite took {:?}",
            started.elapsed()
        );
    }
}
