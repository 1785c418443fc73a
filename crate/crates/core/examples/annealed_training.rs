// Prints the annealed image-loss weight schedule, then trains two small
// models on the same synthetic data, one with the annealed combined loss and
// one with the word loss alone. Pass an epoch count to train longer.

use mivqa::dataset::build_multi_image_dataset;
use mivqa::encoders::{ModelConfig, WordTokenizer};
use mivqa::harness::{fit, RunConfig, Split};
use mivqa::losses::{anneal_lambda, LossConfig, LossMode};
use mivqa::model::VqaModel;
use mivqa::synth::generate_shapes_dataset;

fn train_arm(mode: LossMode, epochs: usize) -> mivqa::Result<Vec<mivqa::harness::Metrics>> {
    let ds = generate_shapes_dataset(48, 32, 7)?;
    let manifest = build_multi_image_dataset(ds.base_items(), &ds.pool, 3, 7, None)?;
    let tokenizer = WordTokenizer::fit(manifest.samples.iter().map(|s| s.question.as_str()));
    let cfg = ModelConfig { answer_vocab: manifest.answer_vocab().len(), ..ModelConfig::desk() };
    let mut model = VqaModel::new(cfg, tokenizer, 7)?;
    let split = Split::load(&manifest, &ds.images, &model, manifest.answer_vocab())?;

    let mut run = RunConfig::default();
    run.loss.mode = mode;
    run.optimizer.epochs = epochs;
    run.optimizer.batch_size = 16;
    fit(&mut model, &split, &split, &run, |m, _| {
        println!(
            "  {:?} epoch {:>2}  lambda {:>7.4}  loss {:.4}  word {:.3}  image {:.3}",
            mode, m.epoch, m.lambda, m.mean_loss, m.word_accuracy, m.image_accuracy
        );
        Ok(())
    })
}

pub fn run_with(epochs: usize) -> mivqa::Result<()> {
    let cfg = LossConfig::default();
    let schedule: Vec<String> = (0..8).map(|e| format!("{:.3}", anneal_lambda(e, &cfg))).collect();
    println!("lambda by epoch: {}", schedule.join(" "));

    let annealed = train_arm(LossMode::Annealed, epochs)?;
    let word_only = train_arm(LossMode::WordOnly, epochs)?;
    let (a, w) = (annealed.last().unwrap(), word_only.last().unwrap());
    println!("final image accuracy: annealed {:.3}, word only {:.3}", a.image_accuracy, w.image_accuracy);
    Ok(())
}

pub fn run_example() -> mivqa::Result<()> {
    run_with(2)
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    run_with(epochs)
}
