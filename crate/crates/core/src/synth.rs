//! Self-contained shapes dataset: rendered scenes, templated questions with a
//! unique answer, and a pool of shape-free texture images.

use std::fmt;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    item_rng, write_base_index, write_pool_index, BaseItem, DetectionResult, DistractorPool,
    MemoryStore, PoolEntry, SidecarDetector,
};
use crate::error::{Error, Result};

pub const TEXTURE_CLASS: &str = "texture";
pub const DEFAULT_IMAGE_SIZE: usize = 32;
pub const MAX_OBJECTS: usize = 3;
/// Largest allowed overlap as a fraction of the smaller object's area.
pub const MAX_OVERLAP: f64 = 0.2;
const SCENE_RETRIES: usize = 200;
const PLACEMENT_RETRIES: usize = 50;
const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
// Streams for scenes and textures must not collide.
const POOL_STREAM: u64 = 0x7e37_0000_0000_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }

    pub fn rgb(self) -> Rgb<u8> {
        match self {
            Color::Red => Rgb([220, 40, 40]),
            Color::Green => Rgb([40, 200, 60]),
            Color::Blue => Rgb([50, 80, 230]),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const COUNT_WORDS: [&str; MAX_OBJECTS + 1] = ["zero", "one", "two", "three"];

/// The closed answer vocabulary: colors, shapes, then count words.
pub fn answer_words() -> Vec<&'static str> {
    Color::ALL
        .iter()
        .map(|c| c.name())
        .chain(Shape::ALL.iter().map(|s| s.name()))
        .chain(COUNT_WORDS)
        .collect()
}

/// One object; `(x, y)` is the top-left corner of its `size x size` box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl SceneObject {
    fn box_overlap(&self, other: &SceneObject) -> usize {
        let w = (self.x + self.size).min(other.x + other.size).saturating_sub(self.x.max(other.x));
        let h = (self.y + self.size).min(other.y + other.size).saturating_sub(self.y.max(other.y));
        w * h
    }

    /// Whether the pixel with center `(px + 0.5, py + 0.5)` is covered.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        let s = self.size as f64;
        let u = px as f64 + 0.5 - self.x as f64;
        let v = py as f64 + 0.5 - self.y as f64;
        if u < 0.0 || v < 0.0 || u > s || v > s {
            return false;
        }
        match self.shape {
            Shape::Square => true,
            Shape::Circle => {
                let r = s / 2.0;
                (u - r).powi(2) + (v - r).powi(2) <= r * r
            }
            // apex at top center, base along the bottom edge
            Shape::Triangle => (u - s / 2.0).abs() <= v / 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub image_size: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(format!("{} objects, expected 1..={MAX_OBJECTS}", self.objects.len()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size == 0 || o.x + o.size > self.image_size || o.y + o.size > self.image_size {
                return Err(format!("object {i} leaves the canvas"));
            }
            for other in &self.objects[..i] {
                let smaller = o.size.min(other.size).pow(2) as f64;
                if o.box_overlap(other) as f64 > MAX_OVERLAP * smaller {
                    return Err(format!("object {i} overlaps another by more than 20%"));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, shape: Shape) -> usize {
        self.objects.iter().filter(|o| o.shape == shape).count()
    }

    /// Shapes present, for detector sidecars.
    pub fn shape_labels(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = self.objects.iter().map(|o| o.shape.name()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Objects are painted in order; later ones cover earlier ones.
    pub fn render(&self) -> RgbImage {
        let n = self.image_size as u32;
        let mut img = RgbImage::from_pixel(n, n, BACKGROUND);
        for o in &self.objects {
            for py in o.y..o.y + o.size {
                for px in o.x..o.x + o.size {
                    if o.covers(px, py) {
                        img.put_pixel(px as u32, py as u32, o.color.rgb());
                    }
                }
            }
        }
        img
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum Template {
    ColorOfShape(Shape),
    ShapeOfColor(Color),
    CountShape(Shape),
}

impl Template {
    pub fn question(self) -> String {
        match self {
            Template::ColorOfShape(s) => format!("what color is the {s}?"),
            Template::ShapeOfColor(c) => format!("what shape is the {c} object?"),
            Template::CountShape(s) => format!("how many {s}s are there?"),
        }
    }

    /// The answer under `scene`, or `None` when it is not unique.
    pub fn answer(self, scene: &SceneSpec) -> Option<&'static str> {
        match self {
            Template::ColorOfShape(s) => {
                let mut it = scene.objects.iter().filter(|o| o.shape == s);
                match (it.next(), it.next()) {
                    (Some(o), None) => Some(o.color.name()),
                    _ => None,
                }
            }
            Template::ShapeOfColor(c) => {
                let mut it = scene.objects.iter().filter(|o| o.color == c);
                match (it.next(), it.next()) {
                    (Some(o), None) => Some(o.shape.name()),
                    _ => None,
                }
            }
            Template::CountShape(s) => Some(COUNT_WORDS[scene.count(s)]),
        }
    }

    fn sample(rng: &mut impl Rng) -> Self {
        let shape = Shape::ALL[rng.gen_range(0..3)];
        let color = Color::ALL[rng.gen_range(0..3)];
        match rng.gen_range(0..3) {
            0 => Template::ColorOfShape(shape),
            1 => Template::ShapeOfColor(color),
            _ => Template::CountShape(shape),
        }
    }
}

fn place_object(
    rng: &mut impl Rng,
    placed: &[SceneObject],
    image_size: usize,
) -> Option<SceneObject> {
    let lo = (image_size * 9 / 32).max(4);
    let hi = (image_size * 13 / 32).max(lo + 1);
    for _ in 0..PLACEMENT_RETRIES {
        let size = rng.gen_range(lo..hi);
        let candidate = SceneObject {
            shape: Shape::ALL[rng.gen_range(0..3)],
            color: Color::ALL[rng.gen_range(0..3)],
            x: rng.gen_range(0..=image_size - size),
            y: rng.gen_range(0..=image_size - size),
            size,
        };
        let fits = placed.iter().all(|o| {
            o.box_overlap(&candidate) as f64 <= MAX_OVERLAP * o.size.min(size).pow(2) as f64
        });
        if fits {
            return Some(candidate);
        }
    }
    None
}

/// A random valid scene of 1 to 3 objects.
pub fn sample_scene(rng: &mut impl Rng, image_size: usize) -> SceneSpec {
    loop {
        let n = rng.gen_range(1..=MAX_OBJECTS);
        let mut objects = Vec::with_capacity(n);
        while objects.len() < n {
            match place_object(rng, &objects, image_size) {
                Some(o) => objects.push(o),
                None => break,
            }
        }
        if objects.len() == n {
            return SceneSpec {
                objects,
                image_size,
            };
        }
    }
}

/// A noise, stripe or checker texture. Never contains a rendered shape.
pub fn render_texture(rng: &mut impl Rng, image_size: usize) -> RgbImage {
    let n = image_size as u32;
    let base: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let alt: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
    match rng.gen_range(0..3) {
        0 => {
            let amp = rng.gen_range(20i32..90);
            RgbImage::from_fn(n, n, |_, _| {
                Rgb(base.map(|c| (i32::from(c) + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8))
            })
        }
        1 => {
            let period = rng.gen_range(2u32..6);
            let vertical = rng.gen_bool(0.5);
            RgbImage::from_fn(n, n, |x, y| {
                let t = if vertical { x } else { x + y };
                Rgb(if (t / period) % 2 == 0 { base } else { alt })
            })
        }
        _ => {
            let period = rng.gen_range(1u32..4);
            RgbImage::from_fn(n, n, |x, y| {
                Rgb(if (x / period + y / period) % 2 == 0 { base } else { alt })
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthItem {
    pub base: BaseItem,
    pub scene: SceneSpec,
    pub template: Template,
}

/// Generated base source, texture pool and the images behind both.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub items: Vec<SynthItem>,
    pub pool: DistractorPool,
    pub images: MemoryStore,
    pub image_size: usize,
    /// Items dropped because no template answer was unique within the retry budget.
    pub skipped: usize,
}

pub const BASE_DIR: &str = "base";
pub const POOL_DIR: &str = "pool";

fn base_ref(i: usize) -> String {
    format!("{BASE_DIR}/images/{i:06}.png")
}

fn pool_ref(i: usize) -> String {
    format!("{POOL_DIR}/images/{i:06}.png")
}

/// Renders `n_samples` scenes with one question each plus `max(n_samples, 16)`
/// pool textures. Item `i` depends only on `(seed, i)`.
pub fn generate_shapes_dataset(n_samples: usize, image_size: usize, seed: u64) -> Result<SynthDataset> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    if image_size < 16 {
        return Err(Error::InvalidConfig(format!("image_size {image_size} below 16")));
    }
    let mut items = Vec::with_capacity(n_samples);
    let mut images = MemoryStore::new();
    let mut skipped = 0;
    for i in 0..n_samples {
        let mut rng = item_rng(seed, i as u64);
        let template = Template::sample(&mut rng);
        let found = (0..SCENE_RETRIES).find_map(|_| {
            let scene = sample_scene(&mut rng, image_size);
            template.answer(&scene).map(|a| (scene, a))
        });
        let Some((scene, answer)) = found else {
            skipped += 1;
            continue;
        };
        let image = base_ref(i);
        images.insert(image.clone(), scene.render());
        items.push(SynthItem {
            base: BaseItem {
                image,
                question: template.question(),
                answer: answer.to_string(),
            },
            scene,
            template,
        });
    }
    let pool_size = n_samples.max(16);
    let mut entries = Vec::with_capacity(pool_size);
    for j in 0..pool_size {
        let mut rng = item_rng(seed ^ POOL_STREAM, j as u64);
        let image = pool_ref(j);
        images.insert(image.clone(), render_texture(&mut rng, image_size));
        entries.push(PoolEntry {
            image,
            class: TEXTURE_CLASS.to_string(),
        });
    }
    Ok(SynthDataset {
        items,
        pool: DistractorPool::new(entries),
        images,
        image_size,
        skipped,
    })
}

impl SynthDataset {
    pub fn base_items(&self) -> Vec<BaseItem> {
        self.items.iter().map(|it| it.base.clone()).collect()
    }

    /// Detected shapes per base image, as a detector stub would report them.
    pub fn detections(&self) -> Vec<(String, DetectionResult)> {
        self.items
            .iter()
            .map(|it| (it.base.image.clone(), DetectionResult::certain(it.scene.shape_labels())))
            .collect()
    }

    /// Writes `base/` and `pool/` directories, each with an `index.jsonl` whose
    /// image paths are relative to that directory. Base images get
    /// `.det.json` sidecars.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        for sub in [BASE_DIR, POOL_DIR] {
            let images = dir.join(sub).join("images");
            fs::create_dir_all(&images)
                .map_err(|e| Error::io(format!("creating {}", images.display()), e))?;
        }
        for (reference, img) in self.images.iter() {
            let path = dir.join(reference);
            img.save(&path).map_err(|e| {
                Error::io(format!("writing {}", path.display()), std::io::Error::other(e))
            })?;
        }
        let strip = |r: &str, sub: &str| r.strip_prefix(&format!("{sub}/")).unwrap_or(r).to_string();
        let base: Vec<BaseItem> = self
            .items
            .iter()
            .map(|it| BaseItem {
                image: strip(&it.base.image, BASE_DIR),
                ..it.base.clone()
            })
            .collect();
        write_base_index(&dir.join(BASE_DIR), &base)?;
        let pool = DistractorPool::new(
            self.pool
                .entries()
                .iter()
                .map(|e| PoolEntry {
                    image: strip(&e.image, POOL_DIR),
                    class: e.class.clone(),
                })
                .collect(),
        );
        write_pool_index(&dir.join(POOL_DIR), &pool)?;
        for (reference, det) in self.detections() {
            let path = SidecarDetector::sidecar_path(dir, &reference);
            let json = serde_json::to_vec(&det).map_err(|e| Error::json("serializing detection", e))?;
            fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}
