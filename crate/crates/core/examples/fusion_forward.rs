// Walks one sample through the fusion stages by hand (cross-attention,
// image scoring, weighted fusion, answer head), checks the result against
// `VqaModel::forward`, then shows the permutation and one-hot properties.

use mivqa::autograd::Tensor;
use mivqa::encoders::{ModelConfig, WordTokenizer};
use mivqa::fusion::{fuse_images, score_images, ImageDistribution};
use mivqa::model::{SampleInput, VqaModel};

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_example() -> mivqa::Result<()> {
    let tokenizer = WordTokenizer::fit(["what shape is the red object?"]);
    let model = VqaModel::new(ModelConfig { answer_vocab: 6, ..ModelConfig::desk() }, tokenizer, 9)?;
    let s = model.config().image_size;
    let n = 4;
    let images = Tensor::from_fn(vec![n, s, s, 3], |i| ((i * 7919) % 255) as f64 / 255.0);
    let input = SampleInput { images, tokens: model.tokenize("what shape is the red object?")? };

    let grid = model.encode_images(&input.images)?;
    let question = model.encode_question(&input.tokens)?;
    let contextual = model.cross_attention().apply(model.params(), &grid, &question)?;
    let p = score_images(&contextual, &question)?;
    let fused = fuse_images(&grid, &p)?;
    let q = model.answer_head().apply(model.params(), &fused, &question)?;

    let (p_model, q_model) = model.forward(&input)?;
    println!("p = {:.4?}", p.probs());
    println!("staged vs forward: |dp| {:.1e}, |dq| {:.1e}", max_diff(p.probs(), p_model.probs()), max_diff(q.probs(), q_model.probs()));

    let order = [2, 0, 3, 1];
    let per = input.images.len() / n;
    let permuted: Vec<f64> = order
        .iter()
        .flat_map(|&i| input.images.data()[i * per..(i + 1) * per].iter().copied())
        .collect();
    let swapped = SampleInput {
        images: Tensor::new(input.images.shape().to_vec(), permuted),
        tokens: input.tokens.clone(),
    };
    let (p_perm, q_perm) = model.forward(&swapped)?;
    let expected: Vec<f64> = order.iter().map(|&i| p.probs()[i]).collect();
    println!("permuted p = {:.4?} (expected {:.4?}), |dq| {:.1e}", p_perm.probs(), expected, max_diff(q.probs(), q_perm.probs()));

    let chosen = 2;
    let forced = model.forward_with_distribution(&input, &ImageDistribution::one_hot(n, chosen))?;
    let single_image = Tensor::new(vec![1, s, s, 3], input.images.data()[chosen * per..(chosen + 1) * per].to_vec());
    let single = model.answer_single_image(&single_image, &input.tokens)?;
    println!("one-hot vs single-image VQA: |dq| {:.1e}", max_diff(forced.probs(), single.probs()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    run_example()
}
