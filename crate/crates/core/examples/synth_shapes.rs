// Generates a small synthetic shapes dataset, prints a few questions with
// their answers and writes the images and index files to a temporary
// directory.

use mivqa::synth::generate_shapes_dataset;

pub fn run_example() -> mivqa::Result<()> {
    let ds = generate_shapes_dataset(24, 32, 11)?;
    println!("{} samples, {} skipped, {} pool textures", ds.items.len(), ds.skipped, ds.pool.len());
    for item in ds.items.iter().take(5) {
        let objects: Vec<String> = item
            .scene
            .objects
            .iter()
            .map(|o| format!("{} {}", o.color.name(), o.shape.name()))
            .collect();
        println!("{:<40} -> {:<8} [{}]", item.base.question, item.base.answer, objects.join(", "));
    }

    let dir = tempfile::tempdir().map_err(|e| mivqa::Error::io("creating temp dir", e))?;
    ds.write_to_dir(dir.path())?;
    let base = mivqa::dataset::read_base_dir(&dir.path().join("base"))?;
    assert_eq!(base.len(), ds.items.len());
    println!("wrote {} base items under {}", base.len(), dir.path().display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    run_example()
}
