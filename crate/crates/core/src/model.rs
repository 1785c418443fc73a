//! The full multi-image VQA model: encoders, cross-attention fusion, image
//! scoring, weighted-sum fusion and the stacked-attention answer head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::encoders::{
    concat_regions_graph, encode_images_graph, tokenize, ConvBackbone, GridRegionStub,
    ImageBackbone, ImageFeatures, LstmEncoder, ModelConfig, QuestionFeatures, RegionProvider,
    SequenceEncoder, TokenSeq, Tokenizer, WordTokenizer,
};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse_images_graph, score_images_graph, AnswerDistribution, AnswerHead, CrossAttention,
    ImageDistribution,
};
use crate::nn::{Ctx, Linear, ParamStore};

/// One question with its candidate images (NHWC `[N, H, W, 3]`, values in
/// `[0, 1]`).
#[derive(Clone, Debug)]
pub struct SampleInput {
    pub images: Tensor,
    pub tokens: TokenSeq,
}

impl SampleInput {
    pub fn n_images(&self) -> usize {
        self.images.shape()[0]
    }
}

/// Graph outputs for one sample.
pub struct SampleOutput<'t> {
    /// `[1, N]` image distribution.
    pub image_probs: Var<'t>,
    /// `[1, V]` answer distribution.
    pub answer_probs: Var<'t>,
}

struct RegionBranch {
    provider: Box<dyn RegionProvider>,
    projector: Linear,
}

pub struct VqaModel {
    config: ModelConfig,
    params: ParamStore,
    tokenizer: WordTokenizer,
    backbone: Box<dyn ImageBackbone>,
    sequence: Box<dyn SequenceEncoder>,
    regions: Option<RegionBranch>,
    cross: CrossAttention,
    head: AnswerHead,
}

impl VqaModel {
    /// Builds the model with the built-in trainable encoders. The question
    /// vocabulary size is taken from `tokenizer`. Parameter initialization is
    /// a pure function of `(config, tokenizer, seed)`.
    pub fn new(mut config: ModelConfig, tokenizer: WordTokenizer, seed: u64) -> Result<Self> {
        config.question_vocab = tokenizer.vocab_size();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = ConvBackbone::new(&mut params, &config, &mut rng);
        let sequence = LstmEncoder::new(&mut params, &config, &mut rng);
        let regions = (config.region_features > 0).then(|| RegionBranch {
            provider: Box::new(GridRegionStub::new(
                config.region_features,
                config.region_dim,
                seed ^ 0x5eed,
            )),
            projector: Linear::new(
                &mut params,
                "regions.projector",
                config.region_dim,
                config.dim,
                &mut rng,
            ),
        });
        let cross = CrossAttention::new(&mut params, &config, &mut rng);
        let head = AnswerHead::new(&mut params, &config, &mut rng);
        Ok(VqaModel {
            config,
            params,
            tokenizer,
            backbone: Box::new(backbone),
            sequence: Box::new(sequence),
            regions,
            cross,
            head,
        })
    }

    /// Replaces the image backbone, e.g. with a frozen pretrained adapter.
    pub fn with_backbone(mut self, backbone: Box<dyn ImageBackbone>) -> Result<Self> {
        let meta = backbone.meta();
        if meta.rows != self.config.regions || meta.dim != self.config.dim {
            return Err(Error::ShapeMismatch(format!(
                "backbone '{}' yields [{}, {}], model expects [{}, {}]",
                meta.name, meta.rows, meta.dim, self.config.regions, self.config.dim
            )));
        }
        self.backbone = backbone;
        Ok(self)
    }

    /// Replaces the question encoder.
    pub fn with_sequence_encoder(mut self, encoder: Box<dyn SequenceEncoder>) -> Result<Self> {
        let meta = encoder.meta();
        if meta.rows != self.config.max_len || meta.dim != self.config.dim {
            return Err(Error::ShapeMismatch(format!(
                "sequence encoder '{}' yields [{}, {}], model expects [{}, {}]",
                meta.name, meta.rows, meta.dim, self.config.max_len, self.config.dim
            )));
        }
        self.sequence = encoder;
        Ok(self)
    }

    /// Replaces the region-feature provider. Requires `region_features > 0`.
    pub fn with_region_provider(mut self, provider: Box<dyn RegionProvider>) -> Result<Self> {
        let meta = provider.meta();
        let branch = self.regions.as_mut().ok_or_else(|| {
            Error::InvalidConfig("region features are disabled (region_features = 0)".into())
        })?;
        if meta.rows != self.config.region_features || meta.dim != self.config.region_dim {
            return Err(Error::ShapeMismatch(format!(
                "region provider '{}' yields [{}, {}], model expects [{}, {}]",
                meta.name, meta.rows, meta.dim, self.config.region_features, self.config.region_dim
            )));
        }
        branch.provider = provider;
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn answer_head(&self) -> &AnswerHead {
        &self.head
    }

    pub fn cross_attention(&self) -> &CrossAttention {
        &self.cross
    }

    pub fn tokenize(&self, question: &str) -> Result<TokenSeq> {
        tokenize(question, self.config.max_len, &self.tokenizer)
    }

    /// `[T * R', D]` features for `T` stacked images.
    fn image_rows<'t>(&self, ctx: &Ctx<'t>, images: &Tensor) -> Result<Var<'t>> {
        let grid = encode_images_graph(ctx, images, &self.config, self.backbone.as_ref())?;
        match &self.regions {
            None => Ok(grid),
            Some(branch) => {
                let n = images.shape()[0];
                let raw = branch.provider.regions(images)?;
                let expected = [n, self.config.region_features, self.config.region_dim];
                if raw.shape() != expected {
                    return Err(Error::ShapeMismatch(format!(
                        "region provider produced {:?}, expected {expected:?}",
                        raw.shape()
                    )));
                }
                let rows = ctx.constant(raw.reshape(vec![
                    n * self.config.region_features,
                    self.config.region_dim,
                ]));
                concat_regions_graph(ctx, grid, n, rows, &branch.projector)
            }
        }
    }

    fn question_rows<'t>(&self, ctx: &Ctx<'t>, tokens: &TokenSeq) -> Result<Var<'t>> {
        let q = self.sequence.encode(ctx, tokens)?;
        if q.shape() != [self.config.max_len, self.config.dim] || tokens.mask.len() != self.config.max_len
        {
            return Err(Error::ShapeMismatch(format!(
                "question features {:?} with {} mask entries, expected [{}, {}]",
                q.shape(),
                tokens.mask.len(),
                self.config.max_len,
                self.config.dim
            )));
        }
        Ok(q)
    }

    /// Records the forward pass of a batch on `ctx`'s tape. All images of the
    /// batch go through the backbone together. `forced` optionally overrides
    /// each sample's image distribution (`[1, N]`).
    pub fn forward_graph<'t>(
        &self,
        ctx: &Ctx<'t>,
        batch: &[&SampleInput],
        forced: Option<&[ImageDistribution]>,
    ) -> Result<Vec<SampleOutput<'t>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let first = batch[0].images.shape();
        if first.len() != 4 {
            return Err(Error::ShapeMismatch(format!("images must be NHWC, got {first:?}")));
        }
        let frame: Vec<usize> = first[1..].to_vec();
        let mut stacked = Vec::new();
        for s in batch {
            if s.images.shape().len() != 4 || s.images.shape()[1..] != frame[..] || s.n_images() == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "all images must share one spatial size; got {:?} and {:?}",
                    first,
                    s.images.shape()
                )));
            }
            stacked.extend_from_slice(s.images.data());
        }
        let total: usize = batch.iter().map(|s| s.n_images()).sum();
        let all = Tensor::new([vec![total], frame].concat(), stacked);
        let rows = self.image_rows(ctx, &all)?;
        let per_image = self.config.tokens_per_image();

        let mut outputs = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for (k, sample) in batch.iter().enumerate() {
            let n = sample.n_images();
            let images = rows.slice_rows(offset * per_image, (offset + n) * per_image);
            offset += n;
            let question = self.question_rows(ctx, &sample.tokens)?;
            let mask = &sample.tokens.mask;
            let image_probs = match forced {
                Some(dists) => {
                    let p = dists.get(k).ok_or_else(|| {
                        Error::ShapeMismatch("fewer forced distributions than samples".into())
                    })?;
                    if p.probs().len() != n {
                        return Err(Error::ShapeMismatch(format!(
                            "forced distribution over {} images for {n} candidates",
                            p.probs().len()
                        )));
                    }
                    ctx.constant(Tensor::new(vec![1, n], p.probs().to_vec()))
                }
                None => {
                    let contextual = self.cross.forward_graph(ctx, images, question, mask)?;
                    score_images_graph(ctx.tape, contextual, n, question, mask)?
                }
            };
            let fused = fuse_images_graph(images, n, image_probs)?;
            let answer_probs = self.head.forward_graph(ctx, fused, question, mask)?;
            outputs.push(SampleOutput {
                image_probs,
                answer_probs,
            });
        }
        Ok(outputs)
    }

    /// Image and answer distributions for each sample of a batch.
    pub fn predict_batch(
        &self,
        batch: &[&SampleInput],
    ) -> Result<Vec<(ImageDistribution, AnswerDistribution)>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        self.forward_graph(&ctx, batch, None)?
            .into_iter()
            .map(|o| {
                Ok((
                    ImageDistribution::new(o.image_probs.value().data().to_vec())?,
                    AnswerDistribution::new(o.answer_probs.value().data().to_vec())?,
                ))
            })
            .collect()
    }

    pub fn forward(&self, input: &SampleInput) -> Result<(ImageDistribution, AnswerDistribution)> {
        Ok(self.predict_batch(&[input])?.remove(0))
    }

    /// Answer distribution with the image distribution forced to `p`.
    pub fn forward_with_distribution(
        &self,
        input: &SampleInput,
        p: &ImageDistribution,
    ) -> Result<AnswerDistribution> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let out = self.forward_graph(&ctx, &[input], Some(std::slice::from_ref(p)))?;
        AnswerDistribution::new(out[0].answer_probs.value().data().to_vec())
    }

    /// Classic single-image VQA: encode one image and answer from its grid.
    pub fn answer_single_image(
        &self,
        image: &Tensor,
        tokens: &TokenSeq,
    ) -> Result<AnswerDistribution> {
        if image.shape().len() != 4 || image.shape()[0] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected one NHWC image [1, H, W, 3], got {:?}",
                image.shape()
            )));
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let grid = self.image_rows(&ctx, image)?;
        let question = self.question_rows(&ctx, tokens)?;
        let q = self.head.forward_graph(&ctx, grid, question, &tokens.mask)?;
        AnswerDistribution::new(q.value().data().to_vec())
    }

    /// `[N, R', D]` encoder output (grid plus any region features).
    pub fn encode_images(&self, images: &Tensor) -> Result<ImageFeatures> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let rows = self.image_rows(&ctx, images)?;
        let n = images.shape()[0];
        ImageFeatures::new((*rows.value()).clone().reshape(vec![
            n,
            self.config.tokens_per_image(),
            self.config.dim,
        ]))
    }

    pub fn encode_question(&self, tokens: &TokenSeq) -> Result<QuestionFeatures> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let q = self.question_rows(&ctx, tokens)?;
        QuestionFeatures::new((*q.value()).clone(), tokens.mask.clone())
    }
}
