//! Image and question encoders.
//!
//! Images become `[N, R(+M), D]` region grids; questions become `[L, D]`
//! token features with a validity mask. Every encoder is a plugin so
//! pretrained extractors can be swapped in behind the same contracts; the
//! built-in ones ([`ConvBackbone`], [`LstmEncoder`], [`WordTokenizer`]) are
//! small and trainable.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{he, uniform, xavier, Ctx, Linear, ParamId, ParamStore};

/// Sizes shared by every model component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Candidate images per sample.
    pub n_images: usize,
    /// Grid cells per image.
    pub regions: usize,
    /// Region-proposal features appended per image (0 disables them).
    pub region_features: usize,
    /// Raw width of region-proposal features before projection.
    pub region_dim: usize,
    /// Feature width shared by images and questions.
    pub dim: usize,
    /// Maximum question length in tokens.
    pub max_len: usize,
    /// Answer vocabulary size, `<unk>` included.
    pub answer_vocab: usize,
    /// Question tokenizer vocabulary size, pad and unk included.
    pub question_vocab: usize,
    pub heads: usize,
    pub fusion_layers: usize,
    pub san_layers: usize,
    /// Square input resolution the image loader resizes to.
    pub image_size: usize,
    /// Channels of the two convolution stages of the built-in backbone.
    pub conv_channels: [usize; 2],
    /// Word embedding width of the built-in question encoder.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_images: 4,
            regions: 196,
            region_features: 0,
            region_dim: 32,
            dim: 640,
            max_len: 30,
            answer_vocab: 1,
            question_vocab: 2,
            heads: 8,
            fusion_layers: 2,
            san_layers: 2,
            image_size: 64,
            conv_channels: [32, 64],
            embed_dim: 300,
        }
    }
}

impl ModelConfig {
    /// Laptop-scale preset used by tests and examples.
    pub fn desk() -> Self {
        ModelConfig {
            n_images: 4,
            regions: 16,
            region_features: 0,
            region_dim: 16,
            dim: 64,
            max_len: 12,
            answer_vocab: 1,
            question_vocab: 2,
            heads: 4,
            fusion_layers: 2,
            san_layers: 2,
            image_size: 32,
            conv_channels: [16, 32],
            embed_dim: 32,
        }
    }

    /// Regions per image after optional region-feature concatenation.
    pub fn tokens_per_image(&self) -> usize {
        self.regions + self.region_features
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_images", self.n_images),
            ("regions", self.regions),
            ("dim", self.dim),
            ("max_len", self.max_len),
            ("answer_vocab", self.answer_vocab),
            ("question_vocab", self.question_vocab),
            ("heads", self.heads),
            ("fusion_layers", self.fusion_layers),
            ("san_layers", self.san_layers),
            ("image_size", self.image_size),
            ("conv_channels[0]", self.conv_channels[0]),
            ("conv_channels[1]", self.conv_channels[1]),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.region_features > 0 && self.region_dim == 0 {
            return Err(Error::InvalidConfig(
                "region_dim must be positive when region features are enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample image features, `[N, R', D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    values: Tensor,
}

impl ImageFeatures {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image features must be [N, R, D], got {:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(Error::ShapeMismatch("image features contain NaN/Inf".into()));
        }
        Ok(ImageFeatures { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// `(N, R', D)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2])
    }

    /// Features flattened to `[N * R', D]` rows.
    pub fn as_rows(&self) -> Tensor {
        let (n, r, d) = self.dims();
        self.values.clone().reshape(vec![n * r, d])
    }

    /// Features of image `index` as `[R', D]`.
    pub fn image(&self, index: usize) -> Tensor {
        let (_, r, d) = self.dims();
        Tensor::new(
            vec![r, d],
            self.values.data()[index * r * d..(index + 1) * r * d].to_vec(),
        )
    }
}

/// Question token features `[L, D]` plus a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionFeatures {
    values: Tensor,
    mask: Vec<bool>,
}

impl QuestionFeatures {
    pub fn new(values: Tensor, mask: Vec<bool>) -> Result<Self> {
        let (len, dim) = match values.shape() {
            [l, d] => (*l, *d),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "question features must be [L, D], got {other:?}"
                )))
            }
        };
        if mask.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} for {len} positions",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyQuestion);
        }
        for (pos, &real) in mask.iter().enumerate() {
            if !real && values.data()[pos * dim..(pos + 1) * dim].iter().any(|&v| v != 0.0) {
                return Err(Error::ShapeMismatch(format!(
                    "masked position {pos} carries a non-zero vector"
                )));
            }
        }
        Ok(QuestionFeatures { values, mask })
    }

    /// Skips the masked-rows-are-zero check; used to probe that masked
    /// positions are ignored downstream.
    pub fn new_unchecked(values: Tensor, mask: Vec<bool>) -> Self {
        QuestionFeatures { values, mask }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Token ids padded or truncated to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    /// Identifies the tokenizer vocabulary the ids refer to.
    pub vocab_ref: String,
}

impl TokenSeq {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub trait Tokenizer: Send + Sync {
    /// Stable identifier of the vocabulary.
    fn vocab_ref(&self) -> String;
    fn vocab_size(&self) -> usize;
    fn pad_id(&self) -> u32;
    /// Token ids of `text`, unpadded.
    fn encode(&self, text: &str) -> Vec<u32>;
}

/// Lowercases and splits on anything that is not alphanumeric; punctuation
/// is dropped.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Word-level tokenizer over a closed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordTokenizer {
    pub const PAD: &'static str = "<pad>";
    pub const UNK: &'static str = "<unk>";

    /// Vocabulary = pad, unk, then every word of `questions` in sorted order.
    pub fn fit<'a>(questions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = questions
            .into_iter()
            .flat_map(normalize_words)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut vocab = vec![Self::PAD.to_string(), Self::UNK.to_string()];
        words.retain(|w| w != Self::PAD && w != Self::UNK);
        vocab.extend(words);
        Self::from_vocab(vocab).expect("fitted vocabulary is well formed")
    }

    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < 2 || vocab[0] != Self::PAD || vocab[1] != Self::UNK {
            return Err(Error::VocabMismatch(
                "tokenizer vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != vocab.len() {
            return Err(Error::VocabMismatch("duplicate tokenizer entries".into()));
        }
        Ok(WordTokenizer { vocab, index })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}

impl Tokenizer for WordTokenizer {
    fn vocab_ref(&self) -> String {
        let mut hasher = Sha256::new();
        for word in &self.vocab {
            hasher.update(word.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("word-{}-{hex}", self.vocab.len())
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn pad_id(&self) -> u32 {
        0
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        normalize_words(text)
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(1))
            .collect()
    }
}

/// Tokenizes `question` and pads or truncates it to `max_len`.
pub fn tokenize(question: &str, max_len: usize, tokenizer: &dyn Tokenizer) -> Result<TokenSeq> {
    let mut ids = tokenizer.encode(question);
    if ids.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, tokenizer.pad_id());
    let mask = (0..max_len).map(|i| i < real).collect();
    Ok(TokenSeq {
        ids,
        mask,
        vocab_ref: tokenizer.vocab_ref(),
    })
}

/// Output dimensions a plugin promises.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginMeta {
    pub name: String,
    /// Rows per input (regions per image, or sequence length).
    pub rows: usize,
    /// Feature width per row.
    pub dim: usize,
}

/// Maps a batch of NHWC images `[B, H, W, 3]` to features reshapeable to
/// `[B, R, D]`.
pub trait ImageBackbone: Send + Sync {
    fn meta(&self) -> PluginMeta;
    fn features<'t>(&self, ctx: &Ctx<'t>, images: &Tensor) -> Result<Var<'t>>;
}

/// Maps a [`TokenSeq`] to `[L, D]` features; masked rows must be zero.
pub trait SequenceEncoder: Send + Sync {
    fn meta(&self) -> PluginMeta;
    fn encode<'t>(&self, ctx: &Ctx<'t>, tokens: &TokenSeq) -> Result<Var<'t>>;
}

/// Produces frozen region-proposal features `[B, M, D_r]` for a batch of
/// NHWC images.
pub trait RegionProvider: Send + Sync {
    fn meta(&self) -> PluginMeta;
    fn regions(&self, images: &Tensor) -> Result<Tensor>;
}

/// Factors `cells` into the most square `(rows, cols)` grid.
pub fn grid_shape(cells: usize) -> (usize, usize) {
    let mut rows = 1;
    let mut r = 1;
    while r * r <= cells {
        if cells.is_multiple_of(r) {
            rows = r;
        }
        r += 1;
    }
    (rows, cells / rows)
}

fn check_images(images: &Tensor) -> Result<(usize, usize, usize)> {
    match images.shape() {
        [b, h, w, 3] if *b > 0 => Ok((*b, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "expected NHWC RGB images [N, H, W, 3] with N >= 1, got {other:?}"
        ))),
    }
}

/// Small trainable convolutional stack: three 3x3 convolutions (two with
/// stride 2), adaptive pooling onto an `R`-cell grid, a projection to `D`
/// channels and a learned per-cell position embedding.
#[derive(Clone, Debug)]
pub struct ConvBackbone {
    convs: [(ParamId, ParamId, usize); 3],
    proj: Linear,
    position: ParamId,
    regions: usize,
    dim: usize,
}

impl ConvBackbone {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2] = cfg.conv_channels;
        let mut conv = |name: &str, c_in: usize, c_out: usize, stride: usize| {
            let w = store.add(format!("backbone.{name}.weight"), he(9 * c_in, c_out, rng));
            let b = store.add(format!("backbone.{name}.bias"), Tensor::zeros(vec![c_out]));
            (w, b, stride)
        };
        let convs = [conv("conv1", 3, c1, 2), conv("conv2", c1, c2, 2), conv("conv3", c2, c2, 1)];
        let proj = Linear::new(store, "backbone.proj", c2, cfg.dim, rng);
        let position = store.add(
            "backbone.position",
            uniform(vec![cfg.regions, cfg.dim], 0.1, rng),
        );
        ConvBackbone {
            convs,
            proj,
            position,
            regions: cfg.regions,
            dim: cfg.dim,
        }
    }
}

impl ImageBackbone for ConvBackbone {
    fn meta(&self) -> PluginMeta {
        PluginMeta {
            name: "conv".into(),
            rows: self.regions,
            dim: self.dim,
        }
    }

    fn features<'t>(&self, ctx: &Ctx<'t>, images: &Tensor) -> Result<Var<'t>> {
        let (b, _, _) = check_images(images)?;
        let centered = Tensor::new(
            images.shape().to_vec(),
            images.data().iter().map(|v| v - 0.5).collect(),
        );
        let mut x = ctx.constant(centered);
        for &(w, bias, stride) in &self.convs {
            x = x.conv2d(ctx.param(w), ctx.param(bias), 3, stride, 1).relu();
        }
        let (gh, gw) = grid_shape(self.regions);
        let cells = x.adaptive_avg_pool(gh, gw);
        let feats = self
            .proj
            .forward(ctx, cells)
            .add_bcast(ctx.param(self.position));
        Ok(feats.reshape(vec![b, self.regions * self.dim]))
    }
}

/// Frozen deterministic backbone: pools raw pixels onto the grid and applies
/// a fixed random projection. Stands in for a pretrained extractor.
#[derive(Clone, Debug)]
pub struct PixelStubBackbone {
    regions: usize,
    dim: usize,
    projection: Tensor,
}

impl PixelStubBackbone {
    pub fn new(regions: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PixelStubBackbone {
            regions,
            dim,
            projection: uniform(vec![3, dim], 1.0, &mut rng),
        }
    }
}

impl ImageBackbone for PixelStubBackbone {
    fn meta(&self) -> PluginMeta {
        PluginMeta {
            name: "pixel-stub".into(),
            rows: self.regions,
            dim: self.dim,
        }
    }

    fn features<'t>(&self, ctx: &Ctx<'t>, images: &Tensor) -> Result<Var<'t>> {
        let (b, _, _) = check_images(images)?;
        let (gh, gw) = grid_shape(self.regions);
        let pooled = ctx.constant(images.clone()).adaptive_avg_pool(gh, gw);
        let out = pooled.matmul(ctx.constant(self.projection.clone()));
        Ok(out.reshape(vec![b, self.regions * self.dim]))
    }
}

/// Frozen region-feature stand-in: pixel means over an `M`-cell grid through
/// a fixed random projection to `D_r`.
#[derive(Clone, Debug)]
pub struct GridRegionStub {
    count: usize,
    region_dim: usize,
    projection: Tensor,
}

impl GridRegionStub {
    pub fn new(count: usize, region_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridRegionStub {
            count,
            region_dim,
            projection: uniform(vec![3, region_dim], 1.0, &mut rng),
        }
    }
}

impl RegionProvider for GridRegionStub {
    fn meta(&self) -> PluginMeta {
        PluginMeta {
            name: "grid-region-stub".into(),
            rows: self.count,
            dim: self.region_dim,
        }
    }

    fn regions(&self, images: &Tensor) -> Result<Tensor> {
        let (b, _, _) = check_images(images)?;
        let tape = Tape::new();
        let (gh, gw) = grid_shape(self.count);
        let out = tape
            .constant(images.clone())
            .adaptive_avg_pool(gh, gw)
            .matmul(tape.constant(self.projection.clone()))
            .value();
        Ok((*out).clone().reshape(vec![b, self.count, self.region_dim]))
    }
}

/// Reshapes backbone output to `[N * R, D]` rows, checking the contract.
pub fn encode_images_graph<'t>(
    ctx: &Ctx<'t>,
    images: &Tensor,
    cfg: &ModelConfig,
    backbone: &dyn ImageBackbone,
) -> Result<Var<'t>> {
    let (n, _, _) = check_images(images)?;
    let out = backbone.features(ctx, images)?;
    let shape = out.shape();
    let total: usize = shape.iter().product();
    if shape.first() != Some(&n) || total != n * cfg.regions * cfg.dim {
        return Err(Error::ShapeMismatch(format!(
            "backbone '{}' produced {:?}, cannot reshape to [{n}, {}, {}]",
            backbone.meta().name,
            shape,
            cfg.regions,
            cfg.dim
        )));
    }
    Ok(out.reshape(vec![n * cfg.regions, cfg.dim]))
}

/// Encodes `N` images (NHWC `[N, H, W, 3]`) to `[N, R, D]` grid features.
pub fn encode_images(
    images: &Tensor,
    cfg: &ModelConfig,
    backbone: &dyn ImageBackbone,
    params: &ParamStore,
) -> Result<ImageFeatures> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params);
    let rows = encode_images_graph(&ctx, images, cfg, backbone)?;
    let n = images.shape()[0];
    ImageFeatures::new((*rows.value()).clone().reshape(vec![n, cfg.regions, cfg.dim]))
}

/// Appends projected region features after each image's grid cells:
/// `[N * R, D]` + `[N * M, D_r]` -> `[N * (R + M), D]`.
pub fn concat_regions_graph<'t>(
    ctx: &Ctx<'t>,
    grid: Var<'t>,
    n: usize,
    regions: Var<'t>,
    projector: &Linear,
) -> Result<Var<'t>> {
    let (grid_rows, dim) = grid.dims2();
    let (region_rows, region_dim) = regions.dims2();
    let weight = ctx.param(projector.weight).dims2();
    if n == 0 || grid_rows % n != 0 || region_rows % n != 0 || region_rows == 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot split {grid_rows} grid rows and {region_rows} region rows over {n} images"
        )));
    }
    if weight != (region_dim, dim) {
        return Err(Error::ShapeMismatch(format!(
            "projector is {weight:?}, need [{region_dim}, {dim}]"
        )));
    }
    let (r, m) = (grid_rows / n, region_rows / n);
    let projected = projector.forward(ctx, regions);
    let mut parts = Vec::with_capacity(2 * n);
    for i in 0..n {
        parts.push(grid.slice_rows(i * r, (i + 1) * r));
        parts.push(projected.slice_rows(i * m, (i + 1) * m));
    }
    Ok(ctx.tape.concat_rows(&parts))
}

/// Concatenates grid features `[N, R, D]` with region features `[N, M, D_r]`
/// projected to `D`, giving `[N, R + M, D]` with grid cells first.
pub fn concat_region_features(
    grid: &ImageFeatures,
    regions: &Tensor,
    projector: &Linear,
    params: &ParamStore,
) -> Result<ImageFeatures> {
    let (n, r, d) = grid.dims();
    let (m, dr) = match regions.shape() {
        [rn, m, dr] if *rn == n && *m >= 1 => (*m, *dr),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "region features {other:?} do not match {n} images"
            )))
        }
    };
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params);
    let out = concat_regions_graph(
        &ctx,
        ctx.constant(grid.as_rows()),
        n,
        ctx.constant(regions.clone().reshape(vec![n * m, dr])),
        projector,
    )?;
    ImageFeatures::new((*out.value()).clone().reshape(vec![n, r + m, d]))
}

/// Trainable word embeddings followed by a single-layer LSTM. Only real
/// (mask = true) positions are read; padded rows are emitted as zeros.
#[derive(Clone, Debug)]
pub struct LstmEncoder {
    embedding: ParamId,
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
    vocab: usize,
    max_len: usize,
    dim: usize,
}

impl LstmEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let embedding = store.add(
            "question.embedding",
            uniform(vec![cfg.question_vocab, cfg.embed_dim], 0.5, rng),
        );
        let input = store.add("question.lstm.input", xavier(cfg.embed_dim, 4 * d, rng));
        let recurrent = store.add("question.lstm.recurrent", xavier(d, 4 * d, rng));
        // gate order: input, forget, cell, output; forget bias starts at 1
        let bias = store.add(
            "question.lstm.bias",
            Tensor::from_fn(vec![4 * d], |i| if (d..2 * d).contains(&i) { 1.0 } else { 0.0 }),
        );
        LstmEncoder {
            embedding,
            input,
            recurrent,
            bias,
            vocab: cfg.question_vocab,
            max_len: cfg.max_len,
            dim: d,
        }
    }

    /// Parameter holding the embedding table.
    pub fn embedding(&self) -> ParamId {
        self.embedding
    }
}

impl SequenceEncoder for LstmEncoder {
    fn meta(&self) -> PluginMeta {
        PluginMeta {
            name: "lstm".into(),
            rows: self.max_len,
            dim: self.dim,
        }
    }

    fn encode<'t>(&self, ctx: &Ctx<'t>, tokens: &TokenSeq) -> Result<Var<'t>> {
        if let Some(&bad) = tokens.ids.iter().find(|&&id| id as usize >= self.vocab) {
            return Err(Error::VocabMismatch(format!(
                "token id {bad} exceeds embedding table of {}",
                self.vocab
            )));
        }
        if tokens.mask.len() != tokens.ids.len() {
            return Err(Error::ShapeMismatch("token ids and mask differ in length".into()));
        }
        let real: Vec<usize> = tokens
            .ids
            .iter()
            .zip(&tokens.mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id as usize)
            .collect();
        if real.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let d = self.dim;
        let embedded = ctx.param(self.embedding).gather_rows(&real);
        let projected = embedded
            .matmul(ctx.param(self.input))
            .add_bcast(ctx.param(self.bias));
        let recurrent = ctx.param(self.recurrent);
        let mut h = ctx.constant(Tensor::zeros(vec![1, d]));
        let mut c = ctx.constant(Tensor::zeros(vec![1, d]));
        let mut outputs = Vec::with_capacity(real.len());
        for t in 0..real.len() {
            let z = projected.slice_rows(t, t + 1).add(h.matmul(recurrent));
            let i = z.slice_cols(0, d).sigmoid();
            let f = z.slice_cols(d, 2 * d).sigmoid();
            let g = z.slice_cols(2 * d, 3 * d).tanh();
            let o = z.slice_cols(3 * d, 4 * d).sigmoid();
            c = f.mul(c).add(i.mul(g));
            h = o.mul(c.tanh());
            outputs.push(h);
        }
        let mut rows = Vec::with_capacity(tokens.mask.len());
        let mut produced = outputs.into_iter();
        for &m in &tokens.mask {
            rows.push(if m {
                produced.next().expect("one output per real token")
            } else {
                ctx.constant(Tensor::zeros(vec![1, d]))
            });
        }
        Ok(ctx.tape.concat_rows(&rows))
    }
}

/// Frozen stand-in for pretrained contextual embeddings: each token id maps
/// to a fixed pseudo-random vector, mixed with the running mean of the
/// preceding tokens.
#[derive(Clone, Debug)]
pub struct HashedEmbeddingStub {
    dim: usize,
    max_len: usize,
    seed: u64,
}

impl HashedEmbeddingStub {
    pub fn new(max_len: usize, dim: usize, seed: u64) -> Self {
        HashedEmbeddingStub { dim, max_len, seed }
    }

    fn vector(&self, id: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(id) << 20));
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl SequenceEncoder for HashedEmbeddingStub {
    fn meta(&self) -> PluginMeta {
        PluginMeta {
            name: "hashed-embedding-stub".into(),
            rows: self.max_len,
            dim: self.dim,
        }
    }

    fn encode<'t>(&self, ctx: &Ctx<'t>, tokens: &TokenSeq) -> Result<Var<'t>> {
        if !tokens.mask.iter().any(|&m| m) {
            return Err(Error::EmptyQuestion);
        }
        let mut out = vec![0.0; tokens.ids.len() * self.dim];
        let mut running = vec![0.0; self.dim];
        let mut seen = 0.0;
        for (pos, (&id, &m)) in tokens.ids.iter().zip(&tokens.mask).enumerate() {
            if !m {
                continue;
            }
            let v = self.vector(id);
            seen += 1.0;
            for (j, x) in v.iter().enumerate() {
                running[j] += x;
                out[pos * self.dim + j] = 0.5 * x + 0.5 * running[j] / seen;
            }
        }
        Ok(ctx.constant(Tensor::new(vec![tokens.ids.len(), self.dim], out)))
    }
}

/// Encodes a token sequence to `[L, D]` question features.
pub fn encode_question(
    tokens: &TokenSeq,
    cfg: &ModelConfig,
    encoder: &dyn SequenceEncoder,
    params: &ParamStore,
) -> Result<QuestionFeatures> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params);
    let out = encoder.encode(&ctx, tokens)?;
    if out.shape() != [cfg.max_len, cfg.dim] {
        return Err(Error::ShapeMismatch(format!(
            "sequence encoder '{}' produced {:?}, expected [{}, {}]",
            encoder.meta().name,
            out.shape(),
            cfg.max_len,
            cfg.dim
        )));
    }
    QuestionFeatures::new((*out.value()).clone(), tokens.mask.clone())
}
