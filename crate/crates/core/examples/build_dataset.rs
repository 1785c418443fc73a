// Builds a multi-image manifest (one ground-truth image plus three
// distractors) with and without a detector filter. The pool is salted with
// single-object decoy scenes so the filter has something to exclude, and an
// independent audit checks that no kept distractor shows the answer class.

use std::collections::HashMap;

use mivqa::dataset::{
    audit_filter, build_multi_image_dataset, DetectionFilter, DistractorPool, LabelNormalizer,
    PoolEntry, StaticDetector,
};
use mivqa::synth::generate_shapes_dataset;

pub fn run_example() -> mivqa::Result<()> {
    let ds = generate_shapes_dataset(40, 32, 5)?;
    let decoys = generate_shapes_dataset(40, 32, 6)?;

    let mut entries = ds.pool.entries().to_vec();
    for item in &decoys.items {
        if let [only] = item.scene.objects.as_slice() {
            let image = format!("decoy/{}", item.base.image);
            // Pool labels are plural; the normalizer folds them onto shapes.
            entries.push(PoolEntry { image, class: format!("{}s", only.shape.name()) });
        }
    }
    let pool = DistractorPool::new(entries);
    let detector = StaticDetector::new(ds.detections().into_iter().collect::<HashMap<_, _>>());

    let plain = build_multi_image_dataset(ds.base_items(), &pool, 3, 5, None)?;
    let filter = DetectionFilter::new(&detector, LabelNormalizer::default());
    let filtered = build_multi_image_dataset(ds.base_items(), &pool, 3, 5, Some(&filter))?;

    let normalizer = LabelNormalizer::default();
    let before = audit_filter(&plain, &pool, &detector, &normalizer)?;
    let after = audit_filter(&filtered, &pool, &detector, &normalizer)?;
    println!("filter mode: {}", filtered.header.filter_mode);
    println!("answer vocab: {:?}", filtered.answer_vocab());
    println!("distractors sharing a detected class: {before} unfiltered, {after} filtered");
    println!("ground-truth position counts: {:?}", filtered.gt_position_counts());

    let sample = &filtered.samples[0];
    println!("{} {:?} gt={} {:?}", sample.sample_id, sample.question, sample.gt_index, sample.image_refs);
    assert_eq!(after, 0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    run_example()
}
