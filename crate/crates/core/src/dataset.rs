//! Multi-image dataset construction and loading.
//!
//! A single-image VQA source (image, question, answer) becomes a multi-image
//! source by pairing each ground-truth image with `k` distractors sampled
//! uniformly without replacement from a pool. An optional object detector
//! removes pool entries whose class appears in the ground-truth image.
//!
//! Manifests are JSON Lines: a header object followed by one sample per line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{imageops::FilterType, RgbImage};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_MAX_VOCAB: usize = 1000;
pub const GT_TAG: &str = "gt";

/// One item of a single-image VQA source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseItem {
    pub image: String,
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub image: String,
    pub class: String,
}

/// Labeled images distractors are drawn from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistractorPool {
    entries: Vec<PoolEntry>,
    class_vocab: BTreeSet<String>,
}

impl DistractorPool {
    pub fn new(entries: Vec<PoolEntry>) -> Self {
        let class_vocab = entries.iter().map(|e| e.class.clone()).collect();
        DistractorPool {
            entries,
            class_vocab,
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn class_vocab(&self) -> &BTreeSet<String> {
        &self.class_vocab
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_of(&self, image: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.image == image)
            .map(|e| e.class.as_str())
    }
}

/// Object classes found in one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub labels: BTreeSet<String>,
    #[serde(default)]
    pub confidences: BTreeMap<String, f64>,
}

impl DetectionResult {
    /// Every label with confidence 1.
    pub fn certain<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let confidences = labels.iter().map(|l| (l.clone(), 1.0)).collect();
        DetectionResult {
            labels,
            confidences,
        }
    }

    pub fn empty() -> Self {
        Self::certain(Vec::<String>::new())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let keys: BTreeSet<&String> = self.confidences.keys().collect();
        let labels: BTreeSet<&String> = self.labels.iter().collect();
        if keys != labels {
            return Err("confidence keys differ from labels".into());
        }
        if let Some((l, c)) = self.confidences.iter().find(|(_, c)| !(0.0..=1.0).contains(*c)) {
            return Err(format!("confidence {c} for '{l}' outside [0, 1]"));
        }
        Ok(())
    }
}

/// Object detector run on ground-truth images.
pub trait DetectorClient: Send + Sync {
    fn name(&self) -> String;
    fn detect(&self, image: &str) -> std::result::Result<DetectionResult, String>;
}

/// Reads detections from `<root>/<image>.det.json` sidecar files.
#[derive(Clone, Debug)]
pub struct SidecarDetector {
    root: PathBuf,
}

impl SidecarDetector {
    pub const SUFFIX: &'static str = ".det.json";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        SidecarDetector { root: root.into() }
    }

    pub fn sidecar_path(root: &Path, image: &str) -> PathBuf {
        root.join(format!("{image}{}", Self::SUFFIX))
    }
}

impl DetectorClient for SidecarDetector {
    fn name(&self) -> String {
        "stub".into()
    }

    fn detect(&self, image: &str) -> std::result::Result<DetectionResult, String> {
        let path = Self::sidecar_path(&self.root, image);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let det: DetectionResult =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        det.validate()?;
        Ok(det)
    }
}

/// Runs an external program as `program [args..] <image path>` and parses a
/// [`DetectionResult`] JSON object from its stdout.
#[derive(Clone, Debug)]
pub struct CommandDetector {
    program: String,
    args: Vec<String>,
    root: PathBuf,
}

impl CommandDetector {
    pub fn new(program: impl Into<String>, args: Vec<String>, root: impl Into<PathBuf>) -> Self {
        CommandDetector {
            program: program.into(),
            args,
            root: root.into(),
        }
    }
}

impl DetectorClient for CommandDetector {
    fn name(&self) -> String {
        format!("cmd:{}", self.program)
    }

    fn detect(&self, image: &str) -> std::result::Result<DetectionResult, String> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(self.root.join(image))
            .output()
            .map_err(|e| format!("cannot run {}: {e}", self.program))?;
        if !output.status.success() {
            return Err(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ));
        }
        let det: DetectionResult = serde_json::from_slice(&output.stdout)
            .map_err(|e| format!("unparseable detector output: {e}"))?;
        det.validate()?;
        Ok(det)
    }
}

/// In-memory detections keyed by image reference.
#[derive(Clone, Debug, Default)]
pub struct StaticDetector {
    detections: HashMap<String, DetectionResult>,
}

impl StaticDetector {
    pub fn new(detections: HashMap<String, DetectionResult>) -> Self {
        StaticDetector { detections }
    }
}

impl DetectorClient for StaticDetector {
    fn name(&self) -> String {
        "static".into()
    }

    fn detect(&self, image: &str) -> std::result::Result<DetectionResult, String> {
        self.detections
            .get(image)
            .cloned()
            .ok_or_else(|| "no detection recorded".to_string())
    }
}

/// Matches detector labels against pool class labels: lowercase, trim,
/// naive singularization, plus a synonym map from detector label to pool
/// labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelNormalizer {
    synonyms: BTreeMap<String, Vec<String>>,
}

impl LabelNormalizer {
    pub fn new(synonyms: BTreeMap<String, Vec<String>>) -> Self {
        let synonyms = synonyms
            .into_iter()
            .map(|(k, v)| (Self::normalize(&k), v.iter().map(|s| Self::normalize(s)).collect()))
            .collect();
        LabelNormalizer { synonyms }
    }

    /// Reads a JSON object `{detector_label: [pool_label, ...]}`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading synonym map {}", path.display()), e))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing synonym map {}", path.display()), e))?;
        Ok(Self::new(map))
    }

    /// Drops one trailing `s` unless the word ends in `ss`.
    pub fn normalize(label: &str) -> String {
        let lower = label.trim().to_lowercase();
        if lower.len() > 1 && lower.ends_with('s') && !lower.ends_with("ss") {
            lower[..lower.len() - 1].to_string()
        } else {
            lower
        }
    }

    /// Normalized pool labels excluded by a detection.
    pub fn excluded(&self, detection: &DetectionResult) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for label in &detection.labels {
            let norm = Self::normalize(label);
            if let Some(extra) = self.synonyms.get(&norm) {
                out.extend(extra.iter().cloned());
            }
            out.insert(norm);
        }
        out
    }
}

/// Detector plus label matching used while building.
pub struct DetectionFilter<'a> {
    pub detector: &'a dyn DetectorClient,
    pub normalizer: LabelNormalizer,
}

impl<'a> DetectionFilter<'a> {
    pub fn new(detector: &'a dyn DetectorClient, normalizer: LabelNormalizer) -> Self {
        DetectionFilter {
            detector,
            normalizer,
        }
    }
}

/// Pool entries whose normalized class matches none of the labels detected
/// on `gt_image`.
pub fn filter_pool_by_detection<'p>(
    gt_image: &str,
    pool: &'p DistractorPool,
    detector: &dyn DetectorClient,
    normalizer: &LabelNormalizer,
) -> Result<Vec<&'p PoolEntry>> {
    let detection = detector.detect(gt_image).map_err(|reason| Error::DetectorFailure {
        image: gt_image.to_string(),
        reason,
    })?;
    let excluded = normalizer.excluded(&detection);
    Ok(pool
        .entries
        .iter()
        .filter(|e| !excluded.contains(&LabelNormalizer::normalize(&e.class)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub question: String,
    pub answer: String,
    pub image_refs: Vec<String>,
    pub gt_index: usize,
    /// `"gt"` for the ground truth, `"distractor:<class>"` otherwise.
    pub source_tags: Vec<String>,
}

impl SampleRecord {
    fn check(&self, k: usize) -> std::result::Result<(), String> {
        let n = self.image_refs.len();
        if n != k + 1 {
            return Err(format!("{} images, expected {}", n, k + 1));
        }
        if self.gt_index >= n {
            return Err(format!("gt_index {} out of range", self.gt_index));
        }
        if self.source_tags.len() != n {
            return Err("one source tag per image required".into());
        }
        let gt_positions: Vec<usize> = self
            .source_tags
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == GT_TAG)
            .map(|(i, _)| i)
            .collect();
        if gt_positions != [self.gt_index] {
            return Err(format!(
                "ground-truth tags at {gt_positions:?}, gt_index {}",
                self.gt_index
            ));
        }
        let distinct: BTreeSet<&String> = self.image_refs.iter().collect();
        if distinct.len() != n {
            return Err("image references are not distinct".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
    pub filter_mode: String,
    pub answer_vocab: Vec<String>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn answer_vocab(&self) -> &[String] {
        &self.header.answer_vocab
    }

    /// Index of `answer` in the vocabulary, falling back to `<unk>`.
    pub fn answer_index(&self, answer: &str) -> usize {
        answer_index(&self.header.answer_vocab, answer)
    }

    /// Rebuilds the vocabulary from the samples, keeping `max_size` answers.
    /// Answers that fall out of the vocabulary become `<unk>`.
    pub fn rebuild_vocab(&mut self, max_size: usize) {
        self.header.answer_vocab = build_answer_vocab(&self.samples, max_size);
        let vocab: BTreeSet<&String> = self.header.answer_vocab.iter().collect();
        for s in &mut self.samples {
            if !vocab.contains(&s.answer) {
                s.answer = UNK.to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.version != MANIFEST_VERSION {
            return Err(Error::ManifestInvalid(format!("unsupported version {}", h.version)));
        }
        if h.count != self.samples.len() {
            return Err(Error::ManifestInvalid(format!(
                "header count {} but {} samples",
                h.count,
                self.samples.len()
            )));
        }
        if h.answer_vocab.last().map(String::as_str) != Some(UNK) {
            return Err(Error::ManifestInvalid("answer vocabulary must end with <unk>".into()));
        }
        let vocab: BTreeSet<&String> = h.answer_vocab.iter().collect();
        if vocab.len() != h.answer_vocab.len() {
            return Err(Error::ManifestInvalid("duplicate answer vocabulary entries".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            s.check(h.k)
                .map_err(|e| Error::ManifestInvalid(format!("sample {}: {e}", s.sample_id)))?;
            if !vocab.contains(&s.answer) {
                return Err(Error::ManifestInvalid(format!(
                    "sample {}: answer '{}' is not in the vocabulary",
                    s.sample_id, s.answer
                )));
            }
            if !ids.insert(&s.sample_id) {
                return Err(Error::ManifestInvalid(format!("duplicate sample id {}", s.sample_id)));
            }
        }
        Ok(())
    }

    /// Header line followed by one line per sample, LF-terminated.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        push_json_line(&mut out, &self.header)?;
        for s in &self.samples {
            push_json_line(&mut out, s)?;
        }
        Ok(out)
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::ManifestInvalid("empty manifest".into()))?
            .map_err(|e| Error::io("reading manifest", e))?;
        let header: ManifestHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::ManifestInvalid(format!("header: {e}")))?;
        let mut samples = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("reading manifest", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)
                .map_err(|e| Error::ManifestInvalid(format!("line {}: {e}", i + 2)))?;
            samples.push(record);
        }
        let manifest = Manifest { header, samples };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_jsonl()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let mut file = fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)
            .map_err(|e| Error::io(format!("opening manifest {}", path.display()), e))?;
        Self::from_jsonl(BufReader::new(file))
    }

    /// How often the ground truth sits at each position.
    pub fn gt_position_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.header.k + 1];
        for s in &self.samples {
            counts[s.gt_index] += 1;
        }
        counts
    }
}

fn push_json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::json("serializing", e))?;
    out.push(b'\n');
    Ok(())
}

pub fn answer_index(vocab: &[String], answer: &str) -> usize {
    vocab
        .iter()
        .position(|a| a == answer)
        .or_else(|| vocab.iter().position(|a| a == UNK))
        .expect("answer vocabulary contains <unk>")
}

/// The `max_size` most frequent answers (ties broken lexicographically),
/// followed by `<unk>`.
pub fn build_answer_vocab(samples: &[SampleRecord], max_size: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.answer != UNK) {
        *counts.entry(s.answer.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(max_size)
        .map(|(a, _)| a.to_string())
        .chain(std::iter::once(UNK.to_string()))
        .collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for item `ordinal` of a run seeded with `seed`.
pub fn item_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(ordinal)))
}

/// Builds a `k`-distractor multi-image manifest from a single-image source.
///
/// Sample `i` draws its randomness only from `(seed, i)`, so any subset can
/// be rebuilt independently. The ground truth lands at a uniformly random
/// position; distractors are drawn uniformly without replacement from the
/// eligible pool entries (minus the ground-truth image itself).
pub fn build_multi_image_dataset<I>(
    base: I,
    pool: &DistractorPool,
    k: usize,
    seed: u64,
    filter: Option<&DetectionFilter<'_>>,
) -> Result<Manifest>
where
    I: IntoIterator<Item = BaseItem>,
{
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let base: Vec<BaseItem> = base.into_iter().collect();
    if base.is_empty() {
        return Err(Error::EmptyBase);
    }
    let mut samples = Vec::with_capacity(base.len());
    for (ordinal, item) in base.iter().enumerate() {
        let candidates: Vec<&PoolEntry> = match filter {
            Some(f) => filter_pool_by_detection(&item.image, pool, f.detector, &f.normalizer)?,
            None => pool.entries.iter().collect(),
        };
        let mut seen = BTreeSet::new();
        let eligible: Vec<&PoolEntry> = candidates
            .into_iter()
            .filter(|e| e.image != item.image && seen.insert(e.image.as_str()))
            .collect();
        if eligible.len() < k {
            return Err(Error::PoolExhausted {
                sample: ordinal,
                needed: k,
                available: eligible.len(),
            });
        }
        let mut rng = item_rng(seed, ordinal as u64);
        let picks = sample_indices(&mut rng, eligible.len(), k);
        let gt_index = rng.gen_range(0..=k);
        let mut image_refs = Vec::with_capacity(k + 1);
        let mut source_tags = Vec::with_capacity(k + 1);
        for idx in picks.iter() {
            image_refs.push(eligible[idx].image.clone());
            source_tags.push(format!("distractor:{}", eligible[idx].class));
        }
        image_refs.insert(gt_index, item.image.clone());
        source_tags.insert(gt_index, GT_TAG.to_string());
        samples.push(SampleRecord {
            sample_id: format!("{ordinal:06}"),
            question: item.question.clone(),
            answer: item.answer.clone(),
            image_refs,
            gt_index,
            source_tags,
        });
    }
    let filter_mode = match filter {
        Some(f) => format!("detector:{}", f.detector.name()),
        None => "none".to_string(),
    };
    let mut manifest = Manifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            k,
            seed,
            filter_mode,
            answer_vocab: Vec::new(),
            count: samples.len(),
        },
        samples,
    };
    manifest.rebuild_vocab(DEFAULT_MAX_VOCAB);
    Ok(manifest)
}

/// Counts distractors whose class the detector reports on their sample's
/// ground-truth image. Zero for a soundly filtered manifest.
pub fn audit_filter(
    manifest: &Manifest,
    pool: &DistractorPool,
    detector: &dyn DetectorClient,
    normalizer: &LabelNormalizer,
) -> Result<usize> {
    let mut collisions = 0;
    for s in &manifest.samples {
        let gt = &s.image_refs[s.gt_index];
        let detection = detector.detect(gt).map_err(|reason| Error::DetectorFailure {
            image: gt.clone(),
            reason,
        })?;
        let excluded = normalizer.excluded(&detection);
        for (i, r) in s.image_refs.iter().enumerate() {
            if i == s.gt_index {
                continue;
            }
            let class = pool.class_of(r).ok_or_else(|| {
                Error::ManifestInvalid(format!("distractor {r} is not in the pool"))
            })?;
            if excluded.contains(&LabelNormalizer::normalize(class)) {
                collisions += 1;
            }
        }
    }
    Ok(collisions)
}

/// Source of decoded images addressed by manifest references.
pub trait ImageStore: Send + Sync {
    fn load(&self, reference: &str) -> Result<RgbImage>;
}

/// Resolves references as paths relative to a root directory.
#[derive(Clone, Debug)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirStore { root: root.into() }
    }

    /// Store rooted at the directory containing `manifest_path`.
    pub fn beside(manifest_path: &Path) -> Self {
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        DirStore { root }
    }
}

impl ImageStore for DirStore {
    fn load(&self, reference: &str) -> Result<RgbImage> {
        let path = self.root.join(reference);
        image::open(&path)
            .map(|img| img.to_rgb8())
            .map_err(|e| Error::MissingImage {
                reference: reference.to_string(),
                reason: e.to_string(),
            })
    }
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    images: HashMap<String, RgbImage>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, reference: impl Into<String>, image: RgbImage) {
        self.images.insert(reference.into(), image);
    }

    pub fn get(&self, reference: &str) -> Option<&RgbImage> {
        self.images.get(reference)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RgbImage)> {
        self.images.iter()
    }
}

impl ImageStore for MemoryStore {
    fn load(&self, reference: &str) -> Result<RgbImage> {
        self.images
            .get(reference)
            .cloned()
            .ok_or_else(|| Error::MissingImage {
                reference: reference.to_string(),
                reason: "not in memory store".into(),
            })
    }
}

/// Resizes to `size x size` if needed and scales to `[0, 1]`, HWC order.
pub fn image_to_pixels(image: &RgbImage, size: usize) -> Vec<f64> {
    let resized;
    let img = if image.width() as usize == size && image.height() as usize == size {
        image
    } else {
        resized = image::imageops::resize(image, size as u32, size as u32, FilterType::Triangle);
        &resized
    };
    img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect()
}

/// Stacks images into an NHWC tensor `[N, size, size, 3]`.
pub fn images_to_tensor(images: &[RgbImage], size: usize) -> Tensor {
    let data: Vec<f64> = images.iter().flat_map(|img| image_to_pixels(img, size)).collect();
    Tensor::new(vec![images.len(), size, size, 3], data)
}

/// A decoded manifest sample.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    /// `[N, size, size, 3]`, values in `[0, 1]`.
    pub images: Tensor,
    pub question: String,
    pub answer_index: usize,
    pub gt_index: usize,
}

pub fn load_sample(
    manifest: &Manifest,
    index: usize,
    store: &dyn ImageStore,
    image_size: usize,
) -> Result<LoadedSample> {
    let record = manifest.samples.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: manifest.samples.len(),
    })?;
    let images = record
        .image_refs
        .iter()
        .map(|r| store.load(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedSample {
        images: images_to_tensor(&images, image_size),
        question: record.question.clone(),
        answer_index: manifest.answer_index(&record.answer),
        gt_index: record.gt_index,
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file =
        fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        push_json_line(&mut out, row)?;
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// File listing a source directory's items.
pub const INDEX_FILE: &str = "index.jsonl";

/// Base items from `<dir>/index.jsonl`; image paths are relative to `dir`.
pub fn read_base_dir(dir: &Path) -> Result<Vec<BaseItem>> {
    read_jsonl(&dir.join(INDEX_FILE))
}

pub fn write_base_index(dir: &Path, items: &[BaseItem]) -> Result<()> {
    write_jsonl(&dir.join(INDEX_FILE), items)
}

/// Pool entries from `<dir>/index.jsonl`; image paths are relative to `dir`.
pub fn read_pool_dir(dir: &Path) -> Result<DistractorPool> {
    Ok(DistractorPool::new(read_jsonl(&dir.join(INDEX_FILE))?))
}

pub fn write_pool_index(dir: &Path, pool: &DistractorPool) -> Result<()> {
    write_jsonl(&dir.join(INDEX_FILE), pool.entries())
}
