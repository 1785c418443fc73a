use mivqa::autograd::{Tape, Tensor};
use mivqa::encoders::{ModelConfig, WordTokenizer};
use mivqa::fusion::ImageDistribution;
use mivqa::harness::predict_images;
use mivqa::model::{SampleInput, VqaModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["what", "color", "is", "the", "square", "how", "many", "circles"];

fn small_config() -> ModelConfig {
    ModelConfig {
        regions: 4,
        dim: 16,
        heads: 2,
        max_len: 8,
        image_size: 16,
        conv_channels: [4, 8],
        embed_dim: 8,
        answer_vocab: 5,
        ..ModelConfig::desk()
    }
}

fn model(seed: u64) -> VqaModel {
    VqaModel::new(small_config(), WordTokenizer::fit(WORDS), seed).unwrap()
}

fn random_input(model: &VqaModel, n: usize, rng: &mut ChaCha8Rng) -> SampleInput {
    let s = model.config().image_size;
    let images = Tensor::from_fn(vec![n, s, s, 3], |_| rng.gen::<f64>());
    let len = rng.gen_range(1..=10);
    let question: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    SampleInput {
        images,
        tokens: model.tokenize(&question.join(" ")).unwrap(),
    }
}

fn permute_images(images: &Tensor, perm: &[usize]) -> Tensor {
    let per = images.len() / images.shape()[0];
    let data = perm
        .iter()
        .flat_map(|&i| images.data()[i * per..(i + 1) * per].iter().copied())
        .collect();
    Tensor::new(images.shape().to_vec(), data)
}

fn image(images: &Tensor, i: usize) -> Tensor {
    let per = images.len() / images.shape()[0];
    let mut shape = images.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, images.data()[i * per..(i + 1) * per].to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn distributions_are_normalized(seed in any::<u64>(), n in 1usize..6) {
        let m = model(seed % 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = m.forward(&random_input(&m, n, &mut rng)).unwrap();
        prop_assert_eq!(p.probs().len(), n);
        prop_assert_eq!(q.probs().len(), 5);
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.probs().iter().chain(q.probs()).all(|&v| v >= 0.0));
    }

    #[test]
    fn permuting_images_permutes_p_and_keeps_q(seed in any::<u64>(), n in 2usize..6) {
        let m = model(seed % 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_input(&m, n, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = SampleInput { images: permute_images(&input.images, &perm), tokens: input.tokens.clone() };
        let (p, q) = m.forward(&input).unwrap();
        let (p2, q2) = m.forward(&shuffled).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((p2.probs()[j] - p.probs()[i]).abs() < 1e-6);
        }
        let dq = q.probs().iter().zip(q2.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(dq < 1e-5);
    }

    #[test]
    fn one_hot_p_is_single_image_vqa(seed in any::<u64>(), n in 1usize..5) {
        let m = model(seed % 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_input(&m, n, &mut rng);
        let i = rng.gen_range(0..n);
        let forced = m.forward_with_distribution(&input, &ImageDistribution::one_hot(n, i)).unwrap();
        let single = m.answer_single_image(&image(&input.images, i), &input.tokens).unwrap();
        for (a, b) in forced.probs().iter().zip(single.probs()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pad_embedding_never_reaches_outputs(seed in any::<u64>()) {
        let mut m = model(seed % 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_input(&m, 3, &mut rng);
        prop_assume!(input.tokens.mask.iter().any(|&v| !v));
        let (p, q) = m.forward(&input).unwrap();
        let id = m.params().find("question.embedding").unwrap();
        let width = m.params().get(id).shape()[1];
        for v in &mut m.params_mut().get_mut(id).data_mut()[..width] {
            *v += rng.gen_range(-5.0..5.0);
        }
        let (p2, q2) = m.forward(&input).unwrap();
        for (a, b) in p.probs().iter().chain(q.probs()).zip(p2.probs().iter().chain(q2.probs())) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_images_give_finite_features() {
    let m = model(0);
    let s = m.config().image_size;
    let feats = m.encode_images(&Tensor::zeros(vec![4, s, s, 3])).unwrap();
    assert_eq!(feats.dims(), (4, 4, 16));
    assert!(feats.values().is_finite());
}

#[test]
fn question_encoding_is_pure() {
    let m = model(1);
    let tokens = m.tokenize("how many circles").unwrap();
    let a = m.encode_question(&tokens).unwrap();
    let b = m.encode_question(&tokens).unwrap();
    assert_eq!(a.values().data(), b.values().data());
}

#[test]
fn duplicated_image_gets_equal_probability() {
    let m = model(2);
    let img = image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 16) as u8, (y * 16) as u8, 90]));
    let other = image::RgbImage::from_pixel(16, 16, image::Rgb([10, 200, 30]));
    let vocab: Vec<String> = (0..5).map(|i| format!("a{i}")).collect();
    let pred = predict_images(&m, &vocab, &[img.clone(), img, other], "what color is the square").unwrap();
    assert!((pred.image_probs[0] - pred.image_probs[1]).abs() < 1e-6);
    let single = predict_images(&m, &vocab, &[image::RgbImage::new(16, 16)], "how many").unwrap();
    assert_eq!((single.image_index, single.image_probs.clone()), (0, vec![1.0]));
}

/// d CE / d logits at a uniform softmax equals `q - onehot(target)`, and the
/// autograd value agrees with central differences.
#[test]
fn softmax_cross_entropy_gradient_identity() {
    let v = 4;
    for target in 0..v {
        let tape = Tape::new();
        let logits = tape.leaf(std::sync::Arc::new(Tensor::zeros(vec![1, v])));
        let loss = logits.softmax_rows(None).neg_log_prob(target, 1e-9);
        let grads = tape.backward(loss);
        let g = grads.get(logits).unwrap();
        let ce = |z: &[f64]| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|x| (x - max).exp()).sum();
            -((z[target] - max) - sum.ln())
        };
        for j in 0..v {
            let expected = 0.25 - f64::from(u8::from(j == target));
            assert!((g.data()[j] - expected).abs() < 1e-12);
            let h = 1e-5;
            let mut plus = vec![0.0; v];
            let mut minus = vec![0.0; v];
            plus[j] += h;
            minus[j] -= h;
            let fd = (ce(&plus) - ce(&minus)) / (2.0 * h);
            assert!((fd - expected).abs() / expected.abs() < 1e-4);
        }
    }
}
