// End to end on files: writes a synthetic dataset and manifest, trains from
// a run config, re-evaluates the best checkpoint and answers a question over
// images given as paths.

use mivqa::dataset::{build_multi_image_dataset, Manifest};
use mivqa::harness::{evaluate, predict, train, RunConfig};
use mivqa::synth::generate_shapes_dataset;

pub fn run_example() -> mivqa::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| mivqa::Error::io("creating temp dir", e))?;
    let root = dir.path();
    let ds = generate_shapes_dataset(32, 32, 4)?;
    ds.write_to_dir(root)?;
    let manifest = build_multi_image_dataset(ds.base_items(), &ds.pool, 3, 4, None)?;
    let manifest_path = root.join("train.jsonl");
    manifest.write(&manifest_path)?;

    let config = format!(
        "seed = 4\nepochs = 3\nbatch_size = 8\ntrain_manifest = \"{}\"\ncheckpoint_dir = \"ckpt\"\n",
        manifest_path.display()
    );
    let config_path = root.join("run.toml");
    std::fs::write(&config_path, config).map_err(|e| mivqa::Error::io("writing config", e))?;
    let outcome = train(&RunConfig::load(&config_path)?)?;
    for m in &outcome.metrics {
        println!("epoch {} lambda {:.2} word {:.3} image {:.3}", m.epoch, m.lambda, m.word_accuracy, m.image_accuracy);
    }

    let metrics = evaluate(&outcome.best_checkpoint, &manifest_path)?;
    println!("re-evaluated best checkpoint: word {:.3} image {:.3}", metrics.word_accuracy, metrics.image_accuracy);

    let sample = &Manifest::read(&manifest_path)?.samples[0];
    let paths: Vec<_> = sample.image_refs.iter().map(|r| root.join(r)).collect();
    let prediction = predict(&outcome.best_checkpoint, &paths, &sample.question)?;
    println!(
        "{:?}: predicted {:?} from image {} (truth {:?}, image {})",
        sample.question, prediction.answer, prediction.image_index, sample.answer, sample.gt_index
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    run_example()
}
