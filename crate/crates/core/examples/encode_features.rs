// Tokenizes a question and runs the encoders on their own: the built-in
// convolutional grid backbone and LSTM, region-feature concatenation, and
// the frozen plugin stand-ins swapped in through the builder methods.

use mivqa::autograd::Tensor;
use mivqa::encoders::{HashedEmbeddingStub, ModelConfig, PixelStubBackbone, WordTokenizer};
use mivqa::model::VqaModel;

pub fn run_example() -> mivqa::Result<()> {
    let tokenizer = WordTokenizer::fit(["what color is the circle?", "how many squares are there?"]);
    let cfg = ModelConfig { answer_vocab: 10, ..ModelConfig::desk() };
    let model = VqaModel::new(cfg.clone(), tokenizer.clone(), 3)?;

    let tokens = model.tokenize("What color is the CIRCLE?")?;
    println!("ids {:?}", tokens.ids);
    println!("mask {:?} ({} real tokens)", tokens.mask, tokens.real_len());
    let unknown = model.tokenize("what colour is the hexagon")?;
    println!("out-of-vocabulary ids {:?}", &unknown.ids[..unknown.real_len()]);

    let s = cfg.image_size;
    let images = Tensor::from_fn(vec![4, s, s, 3], |i| ((i % 97) as f64) / 97.0);
    let grid = model.encode_images(&images)?;
    let question = model.encode_question(&tokens)?;
    println!("grid features {:?}, question features {:?}", grid.dims(), question.values().shape());

    let with_regions = VqaModel::new(
        ModelConfig { region_features: 5, region_dim: 12, ..cfg.clone() },
        tokenizer.clone(),
        3,
    )?;
    println!("grid + regions {:?}", with_regions.encode_images(&images)?.dims());

    let frozen = VqaModel::new(cfg.clone(), tokenizer, 3)?
        .with_backbone(Box::new(PixelStubBackbone::new(cfg.regions, cfg.dim, 1)))?
        .with_sequence_encoder(Box::new(HashedEmbeddingStub::new(cfg.max_len, cfg.dim, 2)))?;
    let (p, q) = frozen.forward(&mivqa::model::SampleInput { images, tokens })?;
    println!("stub encoders: p {:.3?}, argmax answer {}", p.probs(), q.argmax());

    let wrong = PixelStubBackbone::new(cfg.regions + 1, cfg.dim, 1);
    let err = VqaModel::new(cfg, WordTokenizer::fit(["x"]), 0)?.with_backbone(Box::new(wrong));
    println!("mismatched plugin: {}", err.err().map(|e| e.to_string()).unwrap_or_default());
    Ok(())
}

#[allow(dead_code)]
fn main() -> mivqa::Result<()> {
    run_example()
}
