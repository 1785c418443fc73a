//! Question-conditioned fusion of N candidate images.
//!
//! Image tokens attend to question tokens through stacked multi-head
//! cross-attention. Each image is scored by the similarity of its pooled
//! contextual features to the pooled question, the image grids are mixed by
//! that distribution, and a stacked-attention head answers from the mixture.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::encoders::{ImageFeatures, ModelConfig, QuestionFeatures};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, ParamStore};

const SIMPLEX_TOLERANCE: f64 = 1e-6;

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::ShapeMismatch(format!("{what} is empty")));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::ShapeMismatch(format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::ShapeMismatch(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Probability over the N candidate images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDistribution(Vec<f64>);

impl ImageDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_simplex(&p, "image distribution")?;
        Ok(ImageDistribution(p))
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n);
        ImageDistribution((0..n).map(|i| if i == index { 1.0 } else { 0.0 }).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    fn as_row(&self) -> Tensor {
        Tensor::new(vec![1, self.0.len()], self.0.clone())
    }
}

/// Probability over the answer vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerDistribution(Vec<f64>);

impl AnswerDistribution {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        check_simplex(&q, "answer distribution")?;
        Ok(AnswerDistribution(q))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Convex mixture of the candidate image grids, `[R', D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedImage {
    values: Tensor,
}

impl FusedImage {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || !values.is_finite() {
            return Err(Error::ShapeMismatch(format!(
                "fused image must be a finite [R, D] array, got {:?}",
                values.shape()
            )));
        }
        Ok(FusedImage { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// `[1, L]` row averaging the real question positions.
fn mask_weights(mask: &[bool]) -> Result<Tensor> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyQuestion);
    }
    let w = 1.0 / count as f64;
    Ok(Tensor::new(
        vec![1, mask.len()],
        mask.iter().map(|&m| if m { w } else { 0.0 }).collect(),
    ))
}

/// Masked mean of question features, `[L, D] -> [1, D]`.
pub fn question_summary<'t>(tape: &'t Tape, question: Var<'t>, mask: &[bool]) -> Result<Var<'t>> {
    let (len, _) = question.dims2();
    if len != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "question has {len} rows but mask has {}",
            mask.len()
        )));
    }
    Ok(tape.constant(mask_weights(mask)?).matmul(question))
}

struct CrossAttentionLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm: LayerNorm,
}

/// Stacked multi-head cross-attention with image tokens as queries and
/// question tokens as keys and values. Each layer is residual and
/// layer-normalized.
pub struct CrossAttention {
    layers: Vec<CrossAttentionLayer>,
    heads: usize,
    dim: usize,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let layers = (0..cfg.fusion_layers)
            .map(|l| {
                let name = |part: &str| format!("fusion.{l}.{part}");
                CrossAttentionLayer {
                    query: Linear::new(store, &name("query"), d, d, rng),
                    key: Linear::new(store, &name("key"), d, d, rng),
                    value: Linear::new(store, &name("value"), d, d, rng),
                    out: Linear::new(store, &name("out"), d, d, rng),
                    norm: LayerNorm::new(store, &name("norm"), d),
                }
            })
            .collect();
        CrossAttention {
            layers,
            heads: cfg.heads,
            dim: d,
        }
    }

    /// `[T, D]` image tokens (any number of images stacked) attending over
    /// `[L, D]` question tokens; returns `[T, D]`.
    pub fn forward_graph<'t>(
        &self,
        ctx: &Ctx<'t>,
        images: Var<'t>,
        question: Var<'t>,
        mask: &[bool],
    ) -> Result<Var<'t>> {
        let (_, d) = images.dims2();
        let (len, qd) = question.dims2();
        if d != self.dim || qd != self.dim || len != mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "cross-attention expects width {} and a mask per question row; got image width {d}, question [{len}, {qd}], mask {}",
                self.dim,
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyQuestion);
        }
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut x = images;
        for layer in &self.layers {
            let q = layer.query.forward(ctx, x);
            let k = layer.key.forward(ctx, question);
            let v = layer.value.forward(ctx, question);
            let heads: Vec<Var> = (0..self.heads)
                .map(|h| {
                    let (a, b) = (h * head_dim, (h + 1) * head_dim);
                    let scores = q
                        .slice_cols(a, b)
                        .matmul(k.slice_cols(a, b).transpose())
                        .scale(scale);
                    scores.softmax_rows(Some(mask)).matmul(v.slice_cols(a, b))
                })
                .collect();
            let attended = layer.out.forward(ctx, ctx.tape.concat_cols(&heads));
            x = layer.norm.forward(ctx, x.add(attended));
        }
        Ok(x)
    }

    /// Contextualizes `[N, R', D]` image features against a question.
    pub fn apply(
        &self,
        params: &ParamStore,
        images: &ImageFeatures,
        question: &QuestionFeatures,
    ) -> Result<ImageFeatures> {
        let (n, r, d) = images.dims();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, params);
        let out = self.forward_graph(
            &ctx,
            ctx.constant(images.as_rows()),
            ctx.constant(question.values().clone()),
            question.mask(),
        )?;
        ImageFeatures::new((*out.value()).clone().reshape(vec![n, r, d]))
    }
}

/// Image distribution `[1, N]`: mean-pool each image's `R'` contextual rows,
/// dot with the masked-mean question vector, scale by `1/sqrt(D)`, softmax
/// over images.
pub fn score_images_graph<'t>(
    tape: &'t Tape,
    contextual: Var<'t>,
    n: usize,
    question: Var<'t>,
    mask: &[bool],
) -> Result<Var<'t>> {
    let (rows, d) = contextual.dims2();
    if n == 0 || rows % n != 0 {
        return Err(Error::ShapeMismatch(format!("{rows} rows do not split into {n} images")));
    }
    let per_image = rows / n;
    let pool = Tensor::from_fn(vec![n, rows], |i| {
        let (img, row) = (i / rows, i % rows);
        if row / per_image == img {
            1.0 / per_image as f64
        } else {
            0.0
        }
    });
    let pooled = tape.constant(pool).matmul(contextual);
    let summary = question_summary(tape, question, mask)?;
    let scores = pooled
        .matmul(summary.transpose())
        .reshape(vec![1, n])
        .scale(1.0 / (d as f64).sqrt());
    Ok(scores.softmax_rows(None))
}

pub fn score_images(
    contextual: &ImageFeatures,
    question: &QuestionFeatures,
) -> Result<ImageDistribution> {
    let (n, _, d) = contextual.dims();
    if question.values().shape()[1] != d {
        return Err(Error::ShapeMismatch("image and question widths differ".into()));
    }
    let tape = Tape::new();
    let p = score_images_graph(
        &tape,
        tape.constant(contextual.as_rows()),
        n,
        tape.constant(question.values().clone()),
        question.mask(),
    )?;
    ImageDistribution::new(p.value().data().to_vec())
}

/// `fused[r, d] = sum_i p[i] * images[i, r, d]` with `images` as
/// `[N * R', D]` rows and `p` as `[1, N]`.
pub fn fuse_images_graph<'t>(images: Var<'t>, n: usize, p: Var<'t>) -> Result<Var<'t>> {
    let (rows, d) = images.dims2();
    if p.shape() != [1, n] || n == 0 || rows % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot mix {rows} rows with distribution {:?} over {n} images",
            p.shape()
        )));
    }
    let per_image = rows / n;
    let mixed = p.matmul(images.reshape(vec![n, per_image * d]));
    Ok(mixed.reshape(vec![per_image, d]))
}

pub fn fuse_images(images: &ImageFeatures, p: &ImageDistribution) -> Result<FusedImage> {
    let (n, _, _) = images.dims();
    if p.probs().len() != n {
        return Err(Error::ShapeMismatch(format!(
            "distribution over {} images for {n} candidates",
            p.probs().len()
        )));
    }
    let tape = Tape::new();
    let fused = fuse_images_graph(tape.constant(images.as_rows()), n, tape.constant(p.as_row()))?;
    FusedImage::new((*fused.value()).clone())
}

struct AttentionHop {
    image: Linear,
    question: Linear,
    logit: Linear,
}

/// Stacked-attention answer head.
///
/// Starting from the masked-mean question vector `u`, each hop attends over
/// the fused regions with `softmax(w . tanh(W_I v_r + W_Q u + b))` and adds
/// the attended region vector to `u`. The final `u` goes through a linear
/// layer and a softmax over the answer vocabulary.
pub struct AnswerHead {
    hops: Vec<AttentionHop>,
    output: Linear,
    dim: usize,
}

impl AnswerHead {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let hops = (0..cfg.san_layers)
            .map(|k| AttentionHop {
                image: Linear::new(store, &format!("answer.hop{k}.image"), d, d, rng),
                question: Linear::new(store, &format!("answer.hop{k}.question"), d, d, rng),
                logit: Linear::new(store, &format!("answer.hop{k}.logit"), d, 1, rng),
            })
            .collect();
        let output = Linear::new(store, "answer.output", d, cfg.answer_vocab, rng);
        AnswerHead { hops, output, dim: d }
    }

    /// The final projection to answer logits.
    pub fn output_layer(&self) -> Linear {
        self.output
    }

    /// `[R', D]` fused regions + `[L, D]` question -> `[1, V]` probabilities.
    pub fn forward_graph<'t>(
        &self,
        ctx: &Ctx<'t>,
        fused: Var<'t>,
        question: Var<'t>,
        mask: &[bool],
    ) -> Result<Var<'t>> {
        let (regions, d) = fused.dims2();
        if d != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "fused width {d}, head expects {}",
                self.dim
            )));
        }
        let mut u = question_summary(ctx.tape, question, mask)?;
        for hop in &self.hops {
            let image_part = fused.matmul(ctx.param(hop.image.weight));
            let question_part = hop.question.forward(ctx, u);
            let hidden = image_part.add_bcast(question_part).tanh();
            let attention = hop
                .logit
                .forward(ctx, hidden)
                .reshape(vec![1, regions])
                .softmax_rows(None);
            u = u.add(attention.matmul(fused));
        }
        Ok(self.output.forward(ctx, u).softmax_rows(None))
    }

    pub fn apply(
        &self,
        params: &ParamStore,
        fused: &FusedImage,
        question: &QuestionFeatures,
    ) -> Result<AnswerDistribution> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, params);
        let q = self.forward_graph(
            &ctx,
            ctx.constant(fused.values().clone()),
            ctx.constant(question.values().clone()),
            question.mask(),
        )?;
        AnswerDistribution::new(q.value().data().to_vec())
    }
}
