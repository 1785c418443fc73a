#![allow(dead_code)]

use std::collections::HashMap;

use mivqa::dataset::{DetectionResult, DistractorPool, MemoryStore, PoolEntry, StaticDetector};
use mivqa::synth::{SceneSpec, SynthDataset};

/// Answer recomputed from the scene symbols alone, by parsing the question
/// text. Shares no code with the generator's templates.
pub fn oracle_answer(question: &str, scene: &SceneSpec) -> Option<String> {
    let shape = |o: &mivqa::synth::SceneObject| format!("{:?}", o.shape).to_lowercase();
    let color = |o: &mivqa::synth::SceneObject| format!("{:?}", o.color).to_lowercase();
    let q = question.strip_suffix('?')?;
    let unique = |found: Vec<String>| (found.len() == 1).then(|| found[0].clone());
    if let Some(s) = q.strip_prefix("what color is the ") {
        unique(scene.objects.iter().filter(|o| shape(o) == s).map(color).collect())
    } else if let Some(rest) = q.strip_prefix("what shape is the ") {
        let c = rest.strip_suffix(" object")?;
        unique(scene.objects.iter().filter(|o| color(o) == c).map(shape).collect())
    } else if let Some(rest) = q.strip_prefix("how many ") {
        let s = rest.strip_suffix("s are there")?;
        let n = scene.objects.iter().filter(|o| shape(o) == s).count();
        Some(["zero", "one", "two", "three"].get(n)?.to_string())
    } else {
        None
    }
}

/// Scene invariants checked by brute force over pixel cells.
pub fn oracle_scene_valid(scene: &SceneSpec) -> bool {
    let n = scene.image_size;
    if !(1..=3).contains(&scene.objects.len()) {
        return false;
    }
    let inside = scene
        .objects
        .iter()
        .all(|o| o.size > 0 && o.x + o.size <= n && o.y + o.size <= n);
    let overlap_ok = scene.objects.iter().enumerate().all(|(i, a)| {
        scene.objects[..i].iter().all(|b| {
            let mut shared = 0usize;
            for y in 0..n {
                for x in 0..n {
                    let in_a = x >= a.x && x < a.x + a.size && y >= a.y && y < a.y + a.size;
                    let in_b = x >= b.x && x < b.x + b.size && y >= b.y && y < b.y + b.size;
                    shared += usize::from(in_a && in_b);
                }
            }
            shared as f64 <= 0.2 * (a.size.min(b.size).pow(2)) as f64
        })
    });
    inside && overlap_ok
}

/// Stub detector reporting each scene's shapes.
pub fn scene_detector(ds: &SynthDataset) -> StaticDetector {
    StaticDetector::new(ds.detections().into_iter().collect::<HashMap<String, DetectionResult>>())
}

/// Texture pool plus single-object decoy scenes labeled with plural shape
/// names, so a detector filter has something to exclude. Decoy images are
/// added to `store` under `decoy/`.
pub fn pool_with_decoys(ds: &SynthDataset, decoys: &SynthDataset, store: &mut MemoryStore) -> DistractorPool {
    let mut entries = ds.pool.entries().to_vec();
    for item in &decoys.items {
        if let [only] = item.scene.objects.as_slice() {
            let reference = format!("decoy/{}", item.base.image);
            store.insert(reference.clone(), decoys.images.get(&item.base.image).unwrap().clone());
            entries.push(PoolEntry {
                image: reference,
                class: format!("{}s", format!("{:?}", only.shape).to_lowercase()),
            });
        }
    }
    DistractorPool::new(entries)
}

/// Writes a synthetic dataset under `dir` and a `k = 3` manifest beside it.
/// Synthetic references are already relative to `dir`.
pub fn write_synth_manifest(dir: &std::path::Path, name: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let ds = mivqa::synth::generate_shapes_dataset(n, 32, seed).unwrap();
    ds.write_to_dir(dir).unwrap();
    let m = mivqa::dataset::build_multi_image_dataset(ds.base_items(), &ds.pool, 3, seed, None).unwrap();
    let path = dir.join(name);
    m.write(&path).unwrap();
    path
}
