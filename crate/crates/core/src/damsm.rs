//! Attention-driven image-text matching: per-word region attention, the
//! word- and sentence-level match scores, and the four-part batch loss
//! used both for encoder pretraining and as the extra generator
//! objective.

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::image_encoder::ImageFeatures;
use crate::tensor::Tensor;
use crate::text_encoder::TextFeatures;

/// Guard for cosine denominators; untrained encoders can emit near-zero
/// vectors.
pub const NORM_EPS: f64 = 1e-8;

/// Raw word-region similarities s = eᵀ·v, shape [T, N].
pub fn similarity_matrix(words: &Tensor, regions: &Tensor) -> Tensor {
    assert_eq!(
        words.shape()[0],
        regions.shape()[0],
        "similarity_matrix joint dim mismatch: {:?} vs {:?}",
        words.shape(),
        regions.shape()
    );
    words.transpose().matmul(regions)
}

/// Softmax over the word axis: for each region column, the similarities
/// to all words sum to 1.
pub fn normalize_over_words(similarities: &Tensor) -> Tensor {
    similarities.softmax_columns(1.0)
}

/// Per-word region attention at temperature gamma1 and the resulting
/// region-context vectors: c_i = Σ_j α_{i,j}·v_j, shape [D, T].
pub fn region_context(
    normalized: &Tensor,
    regions: &Tensor,
    gamma1: f64,
) -> (Tensor, Tensor) {
    let alpha = normalized.softmax_rows(gamma1); // [T, N], rows sum to 1
    let context = regions.matmul(&alpha.transpose()); // [D, T]
    (context, alpha)
}

/// Per-word relevances plus the aggregate word-level match score.
pub struct MatchScore {
    /// r_i = cos(c_i, e_i), shape [T].
    pub per_word: Tensor,
    /// (1/gamma2)·log Σ_i exp(gamma2·r_i), scalar.
    pub aggregate: Tensor,
    /// Words whose context or feature norm fell below the guard.
    pub zero_norm_words: Vec<usize>,
}

/// Cosine similarity of two vectors with a guarded denominator.
pub fn cosine(a: &Tensor, b: &Tensor) -> Tensor {
    let dot = a.dot(b);
    let denom = a.norm().mul(&b.norm()).add_scalar(NORM_EPS);
    dot.div(&denom)
}

/// Aggregate the per-word cosines r_i into the word-level score via a
/// stabilized log-sum-exp at temperature gamma2 (summing over all T
/// words).
pub fn match_score(words: &Tensor, contexts: &Tensor, gamma2: f64) -> MatchScore {
    assert!(gamma2 > 0.0, "gamma2 must be positive, got {gamma2}");
    assert_eq!(
        words.shape(),
        contexts.shape(),
        "match_score shape mismatch: {:?} vs {:?}",
        words.shape(),
        contexts.shape()
    );
    let t = words.shape()[1];
    let mut cosines = Vec::with_capacity(t);
    let mut zero_norm_words = Vec::new();
    for i in 0..t {
        let e_i = words.col(i);
        let c_i = contexts.col(i);
        let norms = e_i.norm().item() * c_i.norm().item();
        if norms < NORM_EPS {
            zero_norm_words.push(i);
        }
        cosines.push(cosine(&c_i, &e_i));
    }
    let refs: Vec<&Tensor> = cosines.iter().collect();
    let per_word = Tensor::concat0(&refs);
    let aggregate = log_sum_exp(&per_word, gamma2);
    MatchScore { per_word, aggregate, zero_norm_words }
}

/// (1/gamma)·ln Σ exp(gamma·x_i), max-stabilized. The subtracted max is
/// treated as a constant, which leaves the gradient unchanged.
pub fn log_sum_exp(x: &Tensor, gamma: f64) -> Tensor {
    let m = x.max_value();
    x.mul_scalar(gamma)
        .add_scalar(-gamma * m)
        .exp()
        .sum()
        .ln()
        .mul_scalar(1.0 / gamma)
        .add_scalar(m)
}

/// Sentence-level score: cosine of the global image and sentence vectors.
pub fn sentence_score(image_global: &Tensor, sentence: &Tensor) -> Tensor {
    cosine(image_global, sentence)
}

/// Word-level score between one image and one description, Eq. 7–10
/// end to end.
pub fn pair_score(image: &ImageFeatures, text: &TextFeatures, gamma1: f64, gamma2: f64) -> Tensor {
    let s = similarity_matrix(&text.words, &image.local);
    let s_bar = normalize_over_words(&s);
    let (contexts, _alpha) = region_context(&s_bar, &image.local, gamma1);
    match_score(&text.words, &contexts, gamma2).aggregate
}

/// Which way Eq. 11's softmax runs over the M×M score grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorAxis {
    /// P(D_j | Q_i): softmax across descriptions for a fixed image row.
    TextGivenImage,
    /// P(Q_i | D_j): softmax across images for a fixed description column.
    ImageGivenText,
}

/// Softmax of gamma3·scores along the chosen axis. `scores[i][j]` must
/// hold R(Q_i, D_j).
pub fn batch_posterior(scores: &Tensor, gamma3: f64, axis: PosteriorAxis) -> Tensor {
    assert!(
        scores.shape().len() == 2 && scores.shape()[0] == scores.shape()[1],
        "batch_posterior expects a square score matrix, got {:?}",
        scores.shape()
    );
    match axis {
        PosteriorAxis::TextGivenImage => scores.softmax_rows(gamma3),
        PosteriorAxis::ImageGivenText => scores.softmax_columns(gamma3),
    }
}

/// A batch of aligned image-description pairs: entry i of each slice is
/// the matching pair, every other description is a mismatch for image i.
pub struct BatchPairs<'a> {
    pub images: &'a [ImageFeatures],
    pub texts: &'a [TextFeatures],
}

impl<'a> BatchPairs<'a> {
    pub fn new(images: &'a [ImageFeatures], texts: &'a [TextFeatures]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("matching batch must not be empty".into()));
        }
        if images.len() != texts.len() {
            return Err(Error::Contract(format!(
                "batch misaligned: {} images vs {} descriptions",
                images.len(),
                texts.len()
            )));
        }
        Ok(BatchPairs { images, texts })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// The four loss components, reported alongside the total.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct DamsmComponents {
    pub word_text_given_image: f64,
    pub word_image_given_text: f64,
    pub sent_text_given_image: f64,
    pub sent_image_given_text: f64,
    pub total: f64,
}

pub struct DamsmLoss {
    pub total: Tensor,
    pub components: DamsmComponents,
}

/// Full matching loss over a batch: word-level and sentence-level score
/// grids, posteriors both ways, and the sum of the four negative
/// log-likelihood terms.
pub fn damsm_loss(batch: &BatchPairs<'_>, hp: &HyperParams) -> Result<DamsmLoss> {
    let m = batch.len();
    let mut word_cols: Vec<Tensor> = Vec::with_capacity(m);
    let mut sent_cols: Vec<Tensor> = Vec::with_capacity(m);
    // column j holds scores of all images against description j, so the
    // matrix entry [i][j] is R(Q_i, D_j)
    for text in batch.texts {
        let mut wcol = Vec::with_capacity(m);
        let mut scol = Vec::with_capacity(m);
        for image in batch.images {
            wcol.push(pair_score(image, text, hp.gamma1, hp.gamma2));
            scol.push(sentence_score(&image.global, &text.sentence));
        }
        let wrefs: Vec<&Tensor> = wcol.iter().collect();
        let srefs: Vec<&Tensor> = scol.iter().collect();
        word_cols.push(Tensor::concat0(&wrefs));
        sent_cols.push(Tensor::concat0(&srefs));
    }
    let wrefs: Vec<&Tensor> = word_cols.iter().collect();
    let srefs: Vec<&Tensor> = sent_cols.iter().collect();
    let word_scores = Tensor::stack_cols(&wrefs);
    let sent_scores = Tensor::stack_cols(&srefs);

    let l1w = diagonal_nll(&batch_posterior(&word_scores, hp.gamma3, PosteriorAxis::TextGivenImage));
    let l2w = diagonal_nll(&batch_posterior(&word_scores, hp.gamma3, PosteriorAxis::ImageGivenText));
    let l1s = diagonal_nll(&batch_posterior(&sent_scores, hp.gamma3, PosteriorAxis::TextGivenImage));
    let l2s = diagonal_nll(&batch_posterior(&sent_scores, hp.gamma3, PosteriorAxis::ImageGivenText));

    let total = l1w.add(&l2w).add(&l1s).add(&l2s);
    let components = DamsmComponents {
        word_text_given_image: l1w.item(),
        word_image_given_text: l2w.item(),
        sent_text_given_image: l1s.item(),
        sent_image_given_text: l2s.item(),
        total: total.item(),
    };
    if !components.total.is_finite() {
        return Err(Error::Numeric(format!(
            "matching loss is not finite: {components:?}"
        )));
    }
    Ok(DamsmLoss { total, components })
}

/// −Σ_i log P[i][i] of a posterior matrix.
fn diagonal_nll(posterior: &Tensor) -> Tensor {
    let m = posterior.shape()[0];
    let diag: Vec<Tensor> = (0..m).map(|i| posterior.col(i).narrow0(i, 1)).collect();
    let refs: Vec<&Tensor> = diag.iter().collect();
    Tensor::concat0(&refs).ln().sum().neg()
}
