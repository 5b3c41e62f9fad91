//! Attention diagnostics: suppressed per-word attention maps, Gaussian
//! upsampled heatmaps at image resolution, and top-k attended-word
//! rankings. Heatmaps go to disk as grayscale PGM with a JSON sidecar.

use crate::error::{Error, Result};
use crate::generator::AttentionResult;
use crate::raster::write_pgm;
use crate::tensor::Tensor;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Zero out attention weights at or below the uniform level 1/T
/// (strict threshold, so uniform attention suppresses to all-zero).
pub fn suppress(beta: &Tensor) -> Tensor {
    assert!(
        beta.shape().len() == 2,
        "suppress expects an [N,T] matrix, got {:?}",
        beta.shape()
    );
    let t = beta.shape()[1];
    let threshold = 1.0 / t as f64;
    let data: Vec<f64> = beta
        .data()
        .iter()
        .map(|&b| if b > threshold { b } else { 0.0 })
        .collect();
    Tensor::new(beta.shape(), data)
}

/// One upsampled per-word attention map.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub side: usize,
    /// Post-blur values before display normalization.
    pub raw: Vec<f64>,
    /// Display values scaled into [0,1] per map.
    pub display: Vec<f64>,
    /// Sum of the raw map.
    pub mass: f64,
    /// Column sum of the suppressed attention for this word.
    pub score: f64,
}

/// Reshape word `i`'s suppressed weights to the sqrt(N) grid, bilinearly
/// upsample to the image side, and blur with a truncated edge-clamped
/// Gaussian. `sigma <= 0` selects the default image_side/16.
pub fn word_heatmap(
    beta_hat: &Tensor,
    word: usize,
    image_side: usize,
    sigma: f64,
) -> Result<Heatmap> {
    let (n, t) = (beta_hat.shape()[0], beta_hat.shape()[1]);
    if word >= t {
        return Err(Error::Contract(format!("word {word} out of range 0..{t}")));
    }
    let grid = (n as f64).sqrt().round() as usize;
    if grid * grid != n {
        return Err(Error::Contract(format!(
            "region count {n} is not a perfect square"
        )));
    }
    let data = beta_hat.data();
    let cells: Vec<f64> = (0..n).map(|j| data[j * t + word]).collect();
    drop(data);
    let score: f64 = cells.iter().sum();

    let up = bilinear_upsample(&cells, grid, image_side);
    let sigma = if sigma > 0.0 { sigma } else { image_side as f64 / 16.0 };
    let raw = gaussian_blur(&up, image_side, sigma);
    let mass: f64 = raw.iter().sum();
    let peak = raw.iter().cloned().fold(0.0_f64, f64::max);
    let display = if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(Heatmap { side: image_side, raw, display, mass, score })
}

/// Edge-clamped bilinear resampling of a square grid.
fn bilinear_upsample(cells: &[f64], grid: usize, side: usize) -> Vec<f64> {
    let scale = side as f64 / grid as f64;
    let mut out = vec![0.0; side * side];
    let sample = |idx: isize| -> usize { idx.clamp(0, grid as isize - 1) as usize };
    for y in 0..side {
        let sy = (y as f64 + 0.5) / scale - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        for x in 0..side {
            let sx = (x as f64 + 0.5) / scale - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (iy0, iy1) = (sample(y0 as isize), sample(y0 as isize + 1));
            let (ix0, ix1) = (sample(x0 as isize), sample(x0 as isize + 1));
            out[y * side + x] = cells[iy0 * grid + ix0] * (1.0 - fy) * (1.0 - fx)
                + cells[iy0 * grid + ix1] * (1.0 - fy) * fx
                + cells[iy1 * grid + ix0] * fy * (1.0 - fx)
                + cells[iy1 * grid + ix1] * fy * fx;
        }
    }
    out
}

/// Separable Gaussian, kernel truncated at 3 sigma, borders clamped.
fn gaussian_blur(values: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return values.to_vec();
    }
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64) * (k as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }
    let clamp = |i: isize| -> usize { i.clamp(0, side as isize - 1) as usize };
    let mut rows = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius);
                acc += w * values[y * side + sx];
            }
            rows[y * side + x] = acc;
        }
    }
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius);
                acc += w * rows[sy * side + x];
            }
            out[y * side + x] = acc;
        }
    }
    out
}

/// Word indices ranked by suppressed column sum, descending; ties break
/// toward the lower index.
pub fn top_attended_words(beta_hat: &Tensor, k: usize) -> Vec<(usize, f64)> {
    let (n, t) = (beta_hat.shape()[0], beta_hat.shape()[1]);
    assert!(k <= t, "top-{k} of only {t} words");
    let data = beta_hat.data();
    let mut sums: Vec<(usize, f64)> = (0..t)
        .map(|i| (i, (0..n).map(|j| data[j * t + i]).sum()))
        .collect();
    sums.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    sums.truncate(k);
    sums
}

#[derive(Serialize)]
struct SidecarEntry {
    stage: usize,
    word_index: usize,
    word: String,
    score: f64,
    file: String,
}

/// Write the per-stage attention diagnostics for one caption: a PGM per
/// top-k word plus a JSON sidecar listing word, score, and file.
pub fn export_attention_maps(
    dir: &Path,
    caption: &[String],
    attention: &[AttentionResult],
    image_side: usize,
    sigma: f64,
    k: usize,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (s, attn) in attention.iter().enumerate() {
        let stage = s + 1;
        let beta_hat = suppress(&attn.weights);
        let k = k.min(caption.len());
        for (rank, (word_index, score)) in top_attended_words(&beta_hat, k).iter().enumerate() {
            let map = word_heatmap(&beta_hat, *word_index, image_side, sigma)?;
            let file = format!("stage{stage}_top{rank}_{}.pgm", caption[*word_index]);
            write_pgm(&dir.join(&file), map.side, &map.display)?;
            entries.push(SidecarEntry {
                stage,
                word_index: *word_index,
                word: caption[*word_index].clone(),
                score: *score,
                file,
            });
        }
    }
    let sidecar = dir.join("attention.json");
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::Contract(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(&sidecar, json + "\n")?;
    Ok(sidecar)
}
