//! Training, evaluation, checkpointing and prediction.
//!
//! A [`RunConfig`] is a flat key-value document (TOML or JSON) covering the
//! model sizes, the loss schedule, the optimizer, the seed and file paths.
//! [`train`] runs seeded minibatch Adam on the combined loss, evaluates the
//! validation split each epoch, appends one JSONL metrics record per epoch
//! and keeps a `last` and a `best` (by word accuracy) checkpoint.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Tensor};
use crate::dataset::{answer_index, images_to_tensor, item_rng, load_sample, DirStore, ImageStore, Manifest, UNK};
use crate::encoders::{tokenize, ModelConfig, WordTokenizer};
use crate::error::{Error, Result};
use crate::fusion::{AnswerDistribution, ImageDistribution};
use crate::losses::{anneal_lambda, combined_loss, combined_loss_graph, LossConfig};
use crate::model::{SampleInput, VqaModel};
use crate::nn::{clip_grad_norm, Adam, Ctx};

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const LAST_CHECKPOINT: &str = "last.json";
pub const BEST_CHECKPOINT: &str = "best.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
const SHUFFLE_STREAM: u64 = 0x0005_4f55_f1e5_0000;
const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Only `"adam"` is supported.
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            optimizer: "adam".into(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            grad_clip: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub train_manifest: PathBuf,
    /// Defaults to the training manifest.
    pub val_manifest: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    /// Defaults to `<checkpoint_dir>/metrics.jsonl`.
    pub metrics_file: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            train_manifest: PathBuf::from("train.jsonl"),
            val_manifest: None,
            checkpoint_dir: PathBuf::from("checkpoints"),
            metrics_file: None,
        }
    }
}

/// Everything a training run depends on. Serialized flat: every field of
/// every section is a top-level key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub loss: LossConfig,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(flatten)]
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if o.optimizer != "adam" {
            return Err(Error::InvalidConfig(format!("unknown optimizer '{}'", o.optimizer)));
        }
        if o.epochs == 0 || o.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(o.learning_rate > 0.0) || !o.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be > 0", o.learning_rate)));
        }
        if !(o.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be >= 0".into()));
        }
        self.loss.validate()
    }

    /// Parses a flat TOML or JSON document over [`RunConfig::default`].
    /// Unknown keys are rejected.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let value: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            let t: toml::Value = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            serde_json::to_value(t).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidConfig("run config must be a key-value document".into()))?;
        let mut merged = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        let defaults = merged.as_object_mut().expect("config is an object");
        let unknown: Vec<&String> = obj.keys().filter(|k| !defaults.contains_key(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidConfig(format!("unknown keys {unknown:?}")));
        }
        for (k, v) in obj {
            defaults.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (JSON if it ends in `.json`, TOML otherwise). Relative
    /// paths inside are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading run config {}", path.display()), e))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json)?;
        if let Some(dir) = path.parent() {
            cfg.paths.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.paths
            .metrics_file
            .clone()
            .unwrap_or_else(|| self.paths.checkpoint_dir.join(METRICS_FILE))
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.train_manifest);
        fix(&mut self.checkpoint_dir);
        if let Some(p) = self.val_manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = self.metrics_file.as_mut() {
            fix(p);
        }
    }
}

/// One epoch of training (or one evaluation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epoch: usize,
    pub lambda: f64,
    pub mean_loss: f64,
    pub word_accuracy: f64,
    pub image_accuracy: f64,
    pub wall_seconds: f64,
    pub count: usize,
    pub word_correct: usize,
    pub image_correct: usize,
}

impl Metrics {
    /// Equality ignoring `wall_seconds`.
    pub fn same_trajectory(&self, other: &Metrics) -> bool {
        Metrics {
            wall_seconds: 0.0,
            ..self.clone()
        } == Metrics {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Correct-prediction counts over a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Accuracy {
    pub count: usize,
    pub word_correct: usize,
    pub image_correct: usize,
}

impl Accuracy {
    pub fn word(&self) -> f64 {
        ratio(self.word_correct, self.count)
    }

    pub fn image(&self) -> f64 {
        ratio(self.image_correct, self.count)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Word accuracy counts `argmax(q) == answer`, image accuracy counts
/// `argmax(p) == gt`; ties go to the lowest index.
pub fn compute_accuracy(
    predictions: &[(ImageDistribution, AnswerDistribution)],
    answers: &[usize],
    gts: &[usize],
) -> Result<Accuracy> {
    if predictions.len() != answers.len() || answers.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} answers and {} ground truths",
            predictions.len(),
            answers.len(),
            gts.len()
        )));
    }
    let mut acc = Accuracy {
        count: predictions.len(),
        word_correct: 0,
        image_correct: 0,
    };
    for ((p, q), (&a, &g)) in predictions.iter().zip(answers.iter().zip(gts)) {
        acc.word_correct += usize::from(q.argmax() == a);
        acc.image_correct += usize::from(p.argmax() == g);
    }
    Ok(acc)
}

/// Decoded samples ready for the model.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub inputs: Vec<SampleInput>,
    /// Answer indices into the model's answer vocabulary.
    pub answers: Vec<usize>,
    pub gts: Vec<usize>,
}

impl Split {
    /// Decodes every sample of `manifest`. Answers are indexed in
    /// `answer_vocab`; ones it lacks map to `<unk>`.
    pub fn load(
        manifest: &Manifest,
        store: &dyn ImageStore,
        model: &VqaModel,
        answer_vocab: &[String],
    ) -> Result<Self> {
        let mut split = Split::default();
        for (i, record) in manifest.samples.iter().enumerate() {
            let loaded = load_sample(manifest, i, store, model.config().image_size)?;
            split.inputs.push(SampleInput {
                images: loaded.images,
                tokens: model.tokenize(&record.question)?,
            });
            split.answers.push(answer_index(answer_vocab, &record.answer));
            split.gts.push(record.gt_index);
        }
        Ok(split)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            inputs: self.inputs[..n].to_vec(),
            answers: self.answers[..n].to_vec(),
            gts: self.gts[..n].to_vec(),
        }
    }
}

pub fn predict_split(model: &VqaModel, split: &Split) -> Result<Vec<(ImageDistribution, AnswerDistribution)>> {
    let mut out = Vec::with_capacity(split.len());
    for chunk in split.inputs.chunks(EVAL_BATCH) {
        let refs: Vec<&SampleInput> = chunk.iter().collect();
        out.extend(model.predict_batch(&refs)?);
    }
    Ok(out)
}

/// Accuracy plus mean combined loss at weight `lambda`.
pub fn evaluate_model(model: &VqaModel, split: &Split, lambda: f64) -> Result<(Accuracy, f64)> {
    let preds = predict_split(model, split)?;
    let acc = compute_accuracy(&preds, &split.answers, &split.gts)?;
    let mut total = 0.0;
    for ((p, q), (&a, &g)) in preds.iter().zip(split.answers.iter().zip(&split.gts)) {
        total += combined_loss(q, p, a, g, lambda)?.total;
    }
    Ok((acc, total / split.len().max(1) as f64))
}

/// One optimizer step on `batch`. Returns the mean batch loss.
fn train_step(
    model: &mut VqaModel,
    adam: &mut Adam,
    split: &Split,
    batch: &[usize],
    lambda: f64,
    grad_clip: f64,
) -> Result<f64> {
    // The tape shares parameter buffers; it must be gone before the update.
    let (value, mut grads) = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, model.params());
        let inputs: Vec<&SampleInput> = batch.iter().map(|&i| &split.inputs[i]).collect();
        let outputs = model.forward_graph(&ctx, &inputs, None)?;
        let mut total = None;
        for (out, &i) in outputs.iter().zip(batch) {
            let l = combined_loss_graph(out.answer_probs, out.image_probs, split.answers[i], split.gts[i], lambda)?;
            total = Some(match total {
                None => l,
                Some(t) => l.add(t),
            });
        }
        let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f64);
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = tape.backward(loss);
        (value, ctx.param_grads(&grads))
    };
    if grad_clip > 0.0 {
        clip_grad_norm(&mut grads, grad_clip);
    }
    adam.step(model.params_mut(), &grads);
    Ok(value)
}

/// In-memory training loop. `on_epoch` sees each epoch's metrics and the
/// model right after it; returning an error aborts training.
///
/// Fails with [`Error::Diverged`] (with `last_good: None`) on a non-finite
/// loss.
pub fn fit(
    model: &mut VqaModel,
    train: &Split,
    val: &Split,
    run: &RunConfig,
    mut on_epoch: impl FnMut(&Metrics, &VqaModel) -> Result<()>,
) -> Result<Vec<Metrics>> {
    run.validate()?;
    if train.is_empty() {
        return Err(Error::ManifestInvalid("training split is empty".into()));
    }
    let opt = &run.optimizer;
    let mut adam = Adam::new(model.params(), opt.learning_rate);
    let start = Instant::now();
    let mut history = Vec::with_capacity(opt.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..opt.epochs {
        let lambda = anneal_lambda(epoch, &run.loss);
        let mut rng = item_rng(run.seed ^ SHUFFLE_STREAM, epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let l = train_step(model, &mut adam, train, batch, lambda, opt.grad_clip)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: None,
                });
            }
            loss_sum += l * batch.len() as f64;
        }
        let (acc, _) = evaluate_model(model, val, lambda)?;
        let metrics = Metrics {
            epoch,
            lambda,
            mean_loss: loss_sum / train.len() as f64,
            word_accuracy: acc.word(),
            image_accuracy: acc.image(),
            wall_seconds: start.elapsed().as_secs_f64(),
            count: acc.count,
            word_correct: acc.word_correct,
            image_correct: acc.image_correct,
        };
        log::info!(
            "epoch {epoch} lambda {lambda:.4} loss {:.4} word {:.3} image {:.3}",
            metrics.mean_loss,
            metrics.word_accuracy,
            metrics.image_accuracy
        );
        on_epoch(&metrics, model)?;
        history.push(metrics);
    }
    Ok(history)
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<Metrics>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics_file: PathBuf,
}

/// Loads the manifests named in `run`, fits a fresh model and writes
/// checkpoints and metrics.
pub fn train(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    let train_manifest = Manifest::read(&run.paths.train_manifest)?;
    let val_path = run.paths.val_manifest.as_ref().unwrap_or(&run.paths.train_manifest);
    let val_manifest = Manifest::read(val_path)?;
    let tokenizer = WordTokenizer::fit(train_manifest.samples.iter().map(|s| s.question.as_str()));
    let answer_vocab = train_manifest.answer_vocab().to_vec();
    let mut cfg = run.model.clone();
    cfg.answer_vocab = answer_vocab.len();
    cfg.n_images = train_manifest.header.k + 1;
    let mut model = VqaModel::new(cfg, tokenizer, run.seed)?;
    let train_split = Split::load(
        &train_manifest,
        &DirStore::beside(&run.paths.train_manifest),
        &model,
        &answer_vocab,
    )?;
    let val_split = Split::load(&val_manifest, &DirStore::beside(val_path), &model, &answer_vocab)?;

    let dir = &run.paths.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let metrics_file = run.metrics_path();
    let mut sink = MetricsWriter::create(&metrics_file)?;
    let last = dir.join(LAST_CHECKPOINT);
    let best = dir.join(BEST_CHECKPOINT);
    let mut best_word = f64::NEG_INFINITY;
    let mut any_saved = false;
    let result = fit(&mut model, &train_split, &val_split, run, |m, model| {
        sink.append(m)?;
        let ckpt = CheckpointInfo {
            answer_vocab: &answer_vocab,
            loss: &run.loss,
            seed: run.seed,
            metrics: m,
        };
        save_checkpoint(&last, model, &ckpt)?;
        any_saved = true;
        if m.word_accuracy > best_word {
            best_word = m.word_accuracy;
            save_checkpoint(&best, model, &ckpt)?;
        }
        Ok(())
    });
    match result {
        Ok(metrics) => Ok(TrainOutcome {
            metrics,
            last_checkpoint: last,
            best_checkpoint: best,
            metrics_file,
        }),
        Err(Error::Diverged { epoch, .. }) => Err(Error::Diverged {
            epoch,
            last_good: any_saved.then_some(last),
        }),
        Err(e) => Err(e),
    }
}

/// Appends JSONL metrics records, truncating any previous file.
pub struct MetricsWriter {
    file: fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, m: &Metrics) -> Result<()> {
        let mut line = serde_json::to_vec(m).map_err(|e| Error::json("serializing metrics", e))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .map_err(|e| Error::io("writing metrics", e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(format!("parsing {}", path.display()), e)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start of the tensor in the blob, in f64 elements.
    pub offset: usize,
}

/// JSON half of a checkpoint. Weights live in a sibling `.bin` blob of
/// little-endian f64 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub answer_vocab: Vec<String>,
    pub tokenizer_vocab: Vec<String>,
    pub epoch: usize,
    pub metrics: Metrics,
    pub weights: Vec<WeightEntry>,
    pub blob_sha256: String,
}

/// What a checkpoint records besides the model itself.
pub struct CheckpointInfo<'a> {
    pub answer_vocab: &'a [String],
    pub loss: &'a LossConfig,
    pub seed: u64,
    pub metrics: &'a Metrics,
}

pub fn blob_path(meta_path: &Path) -> PathBuf {
    meta_path.with_extension("bin")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

/// Writes `path` (JSON metadata) and its `.bin` weight blob.
pub fn save_checkpoint(path: &Path, model: &VqaModel, info: &CheckpointInfo<'_>) -> Result<()> {
    let params = model.params();
    let mut blob = Vec::with_capacity(params.numel() * 8);
    let mut weights = Vec::with_capacity(params.len());
    let mut offset = 0;
    for id in params.ids() {
        let t = params.get(id);
        weights.push(WeightEntry {
            name: params.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT,
        config: model.config().clone(),
        loss: info.loss.clone(),
        seed: info.seed,
        answer_vocab: info.answer_vocab.to_vec(),
        tokenizer_vocab: model.tokenizer().vocab().to_vec(),
        epoch: info.metrics.epoch,
        metrics: info.metrics.clone(),
        weights,
        blob_sha256: hex_digest(&blob),
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json("serializing checkpoint", e))?;
    write_atomic(&blob_path(path), &blob)?;
    write_atomic(path, &json)
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: VqaModel,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointInvalid(format!("{}: {e}", path.display())))?;
    if meta.format_version != CHECKPOINT_FORMAT {
        return Err(Error::CheckpointInvalid(format!("format version {}", meta.format_version)));
    }
    if meta.answer_vocab.len() != meta.config.answer_vocab {
        return Err(Error::CheckpointInvalid("answer vocabulary size disagrees with config".into()));
    }
    let blob_file = blob_path(path);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(format!("reading {}", blob_file.display()), e))?;
    if hex_digest(&blob) != meta.blob_sha256 {
        return Err(Error::CheckpointInvalid("weight blob checksum mismatch".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let tokenizer = WordTokenizer::from_vocab(meta.tokenizer_vocab.clone())?;
    let mut model = VqaModel::new(meta.config.clone(), tokenizer, meta.seed)?;
    let store = model.params_mut();
    let mut restored = BTreeSet::new();
    for w in &meta.weights {
        let id = store
            .find(&w.name)
            .ok_or_else(|| Error::CheckpointInvalid(format!("unknown parameter {}", w.name)))?;
        let len: usize = w.shape.iter().product();
        let end = w.offset + len;
        if store.get(id).shape() != w.shape.as_slice() || end > values.len() {
            return Err(Error::CheckpointInvalid(format!("parameter {} has wrong shape or extent", w.name)));
        }
        *store.get_mut(id) = Tensor::new(w.shape.clone(), values[w.offset..end].to_vec());
        restored.insert(id);
    }
    if restored.len() != store.len() {
        return Err(Error::CheckpointInvalid(format!(
            "{} of {} parameters present",
            restored.len(),
            store.len()
        )));
    }
    Ok(Checkpoint { meta, model })
}

/// Metrics of a checkpoint on a manifest. Every answer in the manifest's
/// vocabulary must be known to the checkpoint.
pub fn evaluate(checkpoint: &Path, manifest: &Path) -> Result<Metrics> {
    let ckpt = load_checkpoint(checkpoint)?;
    let m = Manifest::read(manifest)?;
    let known: BTreeSet<&String> = ckpt.meta.answer_vocab.iter().collect();
    let missing: Vec<&String> = m.answer_vocab().iter().filter(|a| !known.contains(a)).collect();
    if !missing.is_empty() {
        return Err(Error::VocabMismatch(format!(
            "manifest answers {missing:?} are not in the checkpoint vocabulary"
        )));
    }
    if m.header.k + 1 != ckpt.meta.config.n_images {
        log::warn!(
            "manifest has {} images per sample, checkpoint was trained with {}",
            m.header.k + 1,
            ckpt.meta.config.n_images
        );
    }
    let split = Split::load(&m, &DirStore::beside(manifest), &ckpt.model, &ckpt.meta.answer_vocab)?;
    let lambda = ckpt.meta.metrics.lambda;
    let start = Instant::now();
    let (acc, mean_loss) = evaluate_model(&ckpt.model, &split, lambda)?;
    Ok(Metrics {
        epoch: ckpt.meta.epoch,
        lambda,
        mean_loss,
        word_accuracy: acc.word(),
        image_accuracy: acc.image(),
        wall_seconds: start.elapsed().as_secs_f64(),
        count: acc.count,
        word_correct: acc.word_correct,
        image_correct: acc.image_correct,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub answer: String,
    pub image_index: usize,
    pub image_probs: Vec<f64>,
    pub answer_probs: Vec<f64>,
}

/// Answers `question` over any number of candidate images.
pub fn predict_images(
    model: &VqaModel,
    answer_vocab: &[String],
    images: &[RgbImage],
    question: &str,
) -> Result<Prediction> {
    if images.is_empty() {
        return Err(Error::ShapeMismatch("at least one image is required".into()));
    }
    let tokens = tokenize(question, model.config().max_len, model.tokenizer())?;
    let input = SampleInput {
        images: images_to_tensor(images, model.config().image_size),
        tokens,
    };
    let (p, q) = model.forward(&input)?;
    let answer = answer_vocab.get(q.argmax()).cloned().unwrap_or_else(|| UNK.to_string());
    Ok(Prediction {
        answer,
        image_index: p.argmax(),
        image_probs: p.probs().to_vec(),
        answer_probs: q.probs().to_vec(),
    })
}

pub fn predict(checkpoint: &Path, images: &[PathBuf], question: &str) -> Result<Prediction> {
    let ckpt = load_checkpoint(checkpoint)?;
    let store = DirStore::new("");
    let decoded = images
        .iter()
        .map(|p| store.load(&p.to_string_lossy()))
        .collect::<Result<Vec<_>>>()?;
    predict_images(&ckpt.model, &ckpt.meta.answer_vocab, &decoded, question)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        (0..n).map(|j| f64::from(u8::from(i == j))).collect()
    }

    #[test]
    fn oracle_predictions_score_perfectly() {
        let answers = [2, 0, 1, 2];
        let gts = [3, 1, 0, 2];
        let preds: Vec<_> = answers
            .iter()
            .zip(&gts)
            .map(|(&a, &g)| {
                (
                    ImageDistribution::one_hot(4, g),
                    AnswerDistribution::new(one_hot(3, a)).unwrap(),
                )
            })
            .collect();
        let acc = compute_accuracy(&preds, &answers, &gts).unwrap();
        assert_eq!((acc.word(), acc.image()), (1.0, 1.0));
    }

    #[test]
    fn ties_count_as_lowest_index() {
        let preds = vec![(
            ImageDistribution::new(vec![0.5, 0.5]).unwrap(),
            AnswerDistribution::new(vec![0.5, 0.5]).unwrap(),
        )];
        let acc = compute_accuracy(&preds, &[1], &[0]).unwrap();
        assert_eq!((acc.word_correct, acc.image_correct), (0, 1));
    }

    #[test]
    fn flat_config_round_trip() {
        let text = r#"
            dim = 32
            heads = 4
            lambda0 = 5.0
            mode = "word_only"
            learning_rate = 0.01
            epochs = 3
            seed = 9
            train_manifest = "data/train.jsonl"
        "#;
        let cfg = RunConfig::parse(text, false).unwrap();
        assert_eq!(cfg.model.dim, 32);
        assert_eq!(cfg.model.regions, ModelConfig::desk().regions);
        assert_eq!(cfg.loss.lambda0, 5.0);
        assert_eq!(cfg.optimizer.epochs, 3);
        assert_eq!(cfg.optimizer.batch_size, 32);
        assert_eq!(cfg.seed, 9);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&json, true).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::parse("dimm = 3", false), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::parse("epochs = 0", false).is_err());
        assert!(RunConfig::parse("learning_rate = 0.0", false).is_err());
        assert!(RunConfig::parse(r#"optimizer = "sgd""#, false).is_err());
        assert!(RunConfig::parse("gamma = 1.5", false).is_err());
    }

    #[test]
    fn trajectory_equality_ignores_time() {
        let a = Metrics {
            epoch: 0,
            lambda: 1.0,
            mean_loss: 0.5,
            word_accuracy: 0.1,
            image_accuracy: 0.2,
            wall_seconds: 1.0,
            count: 10,
            word_correct: 1,
            image_correct: 2,
        };
        let b = Metrics { wall_seconds: 7.0, ..a.clone() };
        assert!(a.same_trajectory(&b));
        assert!(!a.same_trajectory(&Metrics { mean_loss: 0.4, ..b }));
    }
}
