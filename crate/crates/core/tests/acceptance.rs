//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits nonzero if any fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use mivqa::autograd::{Tape, Tensor};
use mivqa::dataset::{
    audit_filter, build_multi_image_dataset, DetectionFilter, LabelNormalizer, Manifest, MemoryStore,
};
use mivqa::encoders::{
    concat_region_features, encode_images, encode_question, HashedEmbeddingStub, ModelConfig,
    PixelStubBackbone, WordTokenizer,
};
use mivqa::fusion::{fuse_images, score_images, ImageDistribution};
use mivqa::harness::{predict, read_metrics, train, Metrics, RunConfig, Split};
use mivqa::losses::{combined_loss_graph, LossMode};
use mivqa::model::{SampleInput, VqaModel};
use mivqa::nn::{Ctx, Linear, ParamStore};
use mivqa::synth::generate_shapes_dataset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const WORDS: [&str; 12] = [
    "what", "color", "is", "the", "square", "shape", "red", "object", "how", "many", "circles", "are",
];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: mivqa::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_question(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let len = rng.gen_range(1..=max_words);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    Tensor::from_fn(vec![n, size, size, 3], |_| rng.gen::<f64>())
}

fn slice_image(images: &Tensor, i: usize) -> Tensor {
    let per = images.len() / images.shape()[0];
    let mut shape = images.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, images.data()[i * per..(i + 1) * per].to_vec())
}

fn permute(images: &Tensor, order: &[usize]) -> Tensor {
    let per = images.len() / images.shape()[0];
    let data = order.iter().flat_map(|&i| images.data()[i * per..(i + 1) * per].iter().copied()).collect();
    Tensor::new(images.shape().to_vec(), data)
}

fn desk_model(seed: u64, answers: usize) -> VqaModel {
    let cfg = ModelConfig { answer_vocab: answers, ..ModelConfig::desk() };
    VqaModel::new(cfg, WordTokenizer::fit(WORDS), seed).unwrap()
}

fn shape_contracts() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases = 200;
    for case in 0..cases {
        let n = rng.gen_range(2..=5);
        let heads = *[1, 2, 4, 8].choose(&mut rng).unwrap();
        let dim = heads * rng.gen_range(16usize.div_ceil(heads)..=128 / heads);
        let cfg = ModelConfig {
            n_images: n,
            regions: rng.gen_range(4..=32),
            region_features: if rng.gen_bool(0.5) { rng.gen_range(1..=4) } else { 0 },
            region_dim: rng.gen_range(4..=16),
            dim,
            heads,
            max_len: rng.gen_range(8..=30),
            answer_vocab: rng.gen_range(2..=12),
            fusion_layers: rng.gen_range(1..=2),
            san_layers: rng.gen_range(1..=2),
            image_size: 16,
            conv_channels: [4, 8],
            embed_dim: 8,
            ..ModelConfig::desk()
        };
        let fail = |what: &str, got: String| format!("case {case} {cfg:?}: {what} gave {got}");
        let model = lib(VqaModel::new(cfg.clone(), WordTokenizer::fit(WORDS), case))?;
        let (r, d, l, v) = (cfg.regions, cfg.dim, cfg.max_len, cfg.answer_vocab);
        let r_all = cfg.tokens_per_image();
        let images = random_images(&mut rng, n, cfg.image_size);
        let tokens = lib(model.tokenize(&random_question(&mut rng, l + 4)))?;
        ensure(tokens.ids.len() == l && tokens.mask.len() == l, || fail("tokenize", format!("{}", tokens.ids.len())))?;

        let stub = PixelStubBackbone::new(r, d, case);
        let grid = lib(encode_images(&images, &cfg, &stub, &ParamStore::new()))?;
        ensure(grid.dims() == (n, r, d), || fail("encode_images", format!("{:?}", grid.dims())))?;
        let model_grid = lib(model.encode_images(&images))?;
        ensure(model_grid.dims() == (n, r_all, d), || fail("model encode_images", format!("{:?}", model_grid.dims())))?;

        let m = rng.gen_range(1..=4);
        let mut store = ParamStore::new();
        let projector = Linear::new(&mut store, "p", cfg.region_dim, d, &mut rng);
        let regions = Tensor::from_fn(vec![n, m, cfg.region_dim], |_| rng.gen::<f64>());
        let joined = lib(concat_region_features(&grid, &regions, &projector, &store))?;
        ensure(joined.dims() == (n, r + m, d), || fail("concat", format!("{:?}", joined.dims())))?;

        let question = lib(model.encode_question(&tokens))?;
        ensure(question.values().shape() == [l, d] && question.mask().len() == l, || {
            fail("encode_question", format!("{:?}", question.values().shape()))
        })?;
        let hashed = lib(encode_question(&tokens, &cfg, &HashedEmbeddingStub::new(l, d, case), &ParamStore::new()))?;
        ensure(hashed.values().shape() == [l, d], || fail("stub encode_question", format!("{:?}", hashed.values().shape())))?;

        let contextual = lib(model.cross_attention().apply(model.params(), &model_grid, &question))?;
        ensure(contextual.dims() == (n, r_all, d), || fail("cross_attention", format!("{:?}", contextual.dims())))?;
        let p = lib(score_images(&contextual, &question))?;
        ensure(p.probs().len() == n, || fail("score_images", format!("{}", p.probs().len())))?;
        let fused = lib(fuse_images(&model_grid, &p))?;
        ensure(fused.values().shape() == [r_all, d], || fail("fuse_images", format!("{:?}", fused.values().shape())))?;
        let q = lib(model.answer_head().apply(model.params(), &fused, &question))?;
        ensure(q.probs().len() == v, || fail("answer head", format!("{}", q.probs().len())))?;
        let (p2, q2) = lib(model.forward(&SampleInput { images, tokens }))?;
        ensure(p2.probs().len() == n && q2.probs().len() == v, || fail("forward", format!("{} {}", p2.probs().len(), q2.probs().len())))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("{cases} cases took {secs:.1} s"))?;
    Ok(format!("{cases} random configs, 0 failures, {secs:.1} s"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut passes = 0;
    for seed in 0..10 {
        let model = desk_model(seed, rng.gen_range(2..=12));
        let inputs: Vec<SampleInput> = (0..100)
            .map(|_| {
                let n = rng.gen_range(1..=6);
                let images = random_images(&mut rng, n, 32);
                let tokens = model.tokenize(&random_question(&mut rng, 14)).unwrap();
                SampleInput { images, tokens }
            })
            .collect();
        for chunk in inputs.chunks(25) {
            let refs: Vec<&SampleInput> = chunk.iter().collect();
            for (p, q) in lib(model.predict_batch(&refs))? {
                for probs in [p.probs(), q.probs()] {
                    ensure(probs.iter().all(|&x| x >= 0.0), || "negative probability".into())?;
                    worst = worst.max((probs.iter().sum::<f64>() - 1.0).abs());
                }
                passes += 1;
            }
        }
    }
    ensure(passes >= 1000 && worst < 1e-6, || format!("max |sum - 1| = {worst:.2e} over {passes}"))?;
    Ok(format!("{passes} forward passes, max |sum - 1| = {worst:.1e}"))
}

fn permutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_p, mut worst_q): (f64, f64) = (0.0, 0.0);
    let cases = 120;
    for case in 0..cases {
        let model = desk_model(case % 6, 7);
        let n = rng.gen_range(2..=5);
        let images = random_images(&mut rng, n, 32);
        let tokens = lib(model.tokenize(&random_question(&mut rng, 12)))?;
        let mut order: Vec<usize> = (0..n).collect();
        while order.iter().enumerate().all(|(i, &j)| i == j) {
            order.shuffle(&mut rng);
        }
        let shuffled = SampleInput { images: permute(&images, &order), tokens: tokens.clone() };
        let (p, q) = lib(model.forward(&SampleInput { images, tokens }))?;
        let (p2, q2) = lib(model.forward(&shuffled))?;
        let expected: Vec<f64> = order.iter().map(|&i| p.probs()[i]).collect();
        worst_p = worst_p.max(max_diff(&expected, p2.probs()));
        worst_q = worst_q.max(max_diff(q.probs(), q2.probs()));
    }
    ensure(worst_p < 1e-6 && worst_q < 1e-5, || format!("max |dp| {worst_p:.2e}, max |dq| {worst_q:.2e}"))?;
    Ok(format!("{cases} cases, max |dp| {worst_p:.1e}, max |dq| {worst_q:.1e}"))
}

fn one_hot_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    let cases = 100;
    for case in 0..cases {
        let model = desk_model(case % 5, 9);
        let n = rng.gen_range(1..=5);
        let images = random_images(&mut rng, n, 32);
        let tokens = lib(model.tokenize(&random_question(&mut rng, 12)))?;
        let i = rng.gen_range(0..n);
        let single = lib(model.answer_single_image(&slice_image(&images, i), &tokens))?;
        let input = SampleInput { images, tokens };
        let forced = lib(model.forward_with_distribution(&input, &ImageDistribution::one_hot(n, i)))?;
        worst = worst.max(max_diff(forced.probs(), single.probs()));
    }
    ensure(worst <= 1e-6, || format!("max |dq| {worst:.2e}"))?;
    Ok(format!("{cases} cases, max |dq| {worst:.1e}"))
}

fn batch_loss(model: &VqaModel, split: &Split, lambda: f64, grads: bool) -> (f64, Vec<Tensor>) {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, model.params());
    let inputs: Vec<&SampleInput> = split.inputs.iter().collect();
    let outs = model.forward_graph(&ctx, &inputs, None).unwrap();
    let mut total = None;
    for (i, out) in outs.iter().enumerate() {
        let l = combined_loss_graph(out.answer_probs, out.image_probs, split.answers[i], split.gts[i], lambda).unwrap();
        total = Some(match total {
            None => l,
            Some(t) => l.add(t),
        });
    }
    let loss = total.unwrap().scale(1.0 / split.len() as f64);
    let value = loss.value().data()[0];
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss);
    (value, ctx.param_grads(&g))
}

fn gradient_check() -> Outcome {
    let ds = lib(generate_shapes_dataset(4, 32, 505))?;
    let manifest = lib(build_multi_image_dataset(ds.base_items(), &ds.pool, 3, 505, None))?;
    let tokenizer = WordTokenizer::fit(manifest.samples.iter().map(|s| s.question.as_str()));
    let cfg = ModelConfig { answer_vocab: manifest.answer_vocab().len(), ..ModelConfig::desk() };
    let mut model = lib(VqaModel::new(cfg, tokenizer, 505))?;
    let split = lib(Split::load(&manifest, &ds.images, &model, manifest.answer_vocab()))?;
    let lambda = 10.0;
    let (_, analytic) = batch_loss(&model, &split, lambda, true);
    let ids: Vec<_> = model.params().ids().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    // Central differences on a loss near 10 carry rounding noise around
    // 1e-15 * 10 / h; the floor keeps near-zero gradients from dividing by it.
    let (h, floor) = (1e-5, 1e-6);
    let samples = 60;
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    let mut report = String::new();
    for _ in 0..samples {
        let k = rng.gen_range(0..ids.len());
        let j = rng.gen_range(0..model.params().get(ids[k]).len());
        let orig = model.params().get(ids[k]).data()[j];
        model.params_mut().get_mut(ids[k]).data_mut()[j] = orig + h;
        let (plus, _) = batch_loss(&model, &split, lambda, false);
        model.params_mut().get_mut(ids[k]).data_mut()[j] = orig - h;
        let (minus, _) = batch_loss(&model, &split, lambda, false);
        model.params_mut().get_mut(ids[k]).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[k].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        nonzero += usize::from(a.abs() > floor);
        if rel > worst {
            worst = rel;
            report = format!("{}[{j}] analytic {a:.6e} numeric {numeric:.6e}", model.params().name(ids[k]));
        }
    }
    ensure(worst < 1e-3, || format!("max rel err {worst:.2e} at {report}"))?;
    Ok(format!("{samples} params ({nonzero} with |g| > {floor:.0e}), max rel err {worst:.1e}"))
}

fn annealing_contract(metrics: &[Metrics], run: &RunConfig) -> Outcome {
    let oracle = |t: usize, l0: f64, g: f64, lmin: f64| f64::max(lmin, l0 * g.powi(t as i32));
    let l = &run.loss;
    for (t, m) in metrics.iter().enumerate() {
        ensure(m.epoch == t, || format!("epoch column {} at row {t}", m.epoch))?;
        let want = oracle(t, l.lambda0, l.gamma, l.lambda_min);
        ensure(m.lambda == want, || format!("epoch {t}: lambda {} != {want}", m.lambda))?;
    }
    ensure(metrics.windows(2).all(|w| w[1].lambda <= w[0].lambda), || "lambda increased".into())?;

    // A floored schedule and gamma = 1, through the in-memory loop.
    let ds = lib(generate_shapes_dataset(12, 32, 606))?;
    let manifest = lib(build_multi_image_dataset(ds.base_items(), &ds.pool, 3, 606, None))?;
    let tokenizer = WordTokenizer::fit(manifest.samples.iter().map(|s| s.question.as_str()));
    let cfg = ModelConfig { answer_vocab: manifest.answer_vocab().len(), ..ModelConfig::desk() };
    let mut checked = metrics.len();
    for (l0, g, lmin) in [(8.0, 0.5, 1.5), (3.0, 1.0, 0.0)] {
        let mut model = lib(VqaModel::new(cfg.clone(), tokenizer.clone(), 606))?;
        let split = lib(Split::load(&manifest, &ds.images, &model, manifest.answer_vocab()))?;
        let mut short = RunConfig::default();
        short.loss.lambda0 = l0;
        short.loss.gamma = g;
        short.loss.lambda_min = lmin;
        short.optimizer.epochs = 6;
        short.optimizer.batch_size = 6;
        let got = lib(mivqa::harness::fit(&mut model, &split, &split, &short, |_, _| Ok(())))?;
        for (t, m) in got.iter().enumerate() {
            let want = oracle(t, l0, g, lmin);
            ensure(m.lambda == want, || format!("({l0}, {g}, {lmin}) epoch {t}: {} != {want}", m.lambda))?;
        }
        ensure(got.windows(2).all(|w| w[1].lambda <= w[0].lambda), || "lambda increased".into())?;
        checked += got.len();
    }
    Ok(format!("{checked} logged epochs match max(lambda_min, lambda0 * gamma^t) exactly, non-increasing"))
}

struct OverfitRun {
    metrics: Vec<Metrics>,
    seconds: f64,
    best: std::path::PathBuf,
}

fn overfit_run(dir: &Path, manifest: &Path, mode: LossMode, epochs: usize) -> Result<(OverfitRun, RunConfig), String> {
    let mut run = RunConfig { seed: 7, ..RunConfig::default() };
    run.loss.mode = mode;
    run.optimizer.epochs = epochs;
    run.paths.train_manifest = manifest.to_path_buf();
    run.paths.checkpoint_dir = dir.join(format!("{mode:?}"));
    let start = Instant::now();
    let outcome = lib(train(&run))?;
    let seconds = start.elapsed().as_secs_f64();
    let metrics = lib(read_metrics(&outcome.metrics_file))?;
    ensure(metrics.len() == outcome.metrics.len(), || "metrics file length differs".into())?;
    ensure(metrics.iter().zip(&outcome.metrics).all(|(a, b)| a == b), || "metrics file differs from returned metrics".into())?;
    Ok((OverfitRun { metrics, seconds, best: outcome.best_checkpoint }, run))
}

fn first_epoch(metrics: &[Metrics], pred: impl Fn(&Metrics) -> bool) -> Option<usize> {
    metrics.iter().find(|m| pred(m)).map(|m| m.epoch)
}

fn overfit(run: &OverfitRun) -> Outcome {
    let m = &run.metrics;
    let hit = m.iter().find(|m| m.image_accuracy >= 0.95 && m.word_accuracy >= 0.90);
    let img = first_epoch(m, |m| m.image_accuracy >= 0.9);
    let word = first_epoch(m, |m| m.word_accuracy >= 0.9);
    let last = m.last().unwrap();
    let summary = format!(
        "image >= 0.9 at epoch {img:?}, word >= 0.9 at epoch {word:?}, final word {:.3} image {:.3}, {} epochs in {:.0} s",
        last.word_accuracy,
        last.image_accuracy,
        m.len(),
        run.seconds
    );
    let hit = hit.ok_or_else(|| format!("no epoch reached image >= 0.95 and word >= 0.90; {summary}"))?;
    ensure(hit.epoch < 200 && hit.wall_seconds <= 600.0 && run.seconds <= 600.0, || format!("too slow: {summary}"))?;
    ensure(matches!((img, word), (Some(i), Some(w)) if i < w), || format!("crossing order violated: {summary}"))?;
    Ok(format!(
        "both thresholds first met at epoch {} ({:.0} s, word {:.3} image {:.3}); {summary}",
        hit.epoch, hit.wall_seconds, hit.word_accuracy, hit.image_accuracy
    ))
}

fn ablation(annealed: &OverfitRun, word_only: &OverfitRun, manifest_path: &Path) -> Outcome {
    let (a, w) = (annealed.metrics.last().unwrap(), word_only.metrics.last().unwrap());
    let summary = format!(
        "final image accuracy annealed {:.3} vs word-only {:.3}; word accuracy annealed {:.3} vs word-only {:.3}",
        a.image_accuracy, w.image_accuracy, a.word_accuracy, w.word_accuracy
    );
    ensure(a.image_accuracy >= w.image_accuracy, || summary.clone())?;

    let manifest = lib(Manifest::read(manifest_path))?;
    let root = manifest_path.parent().unwrap();
    let mut answers = Vec::new();
    for s in &manifest.samples[..10] {
        let paths: Vec<_> = s.image_refs.iter().map(|r| root.join(r)).collect();
        answers.push(lib(predict(&annealed.best, &paths, &s.question))?.answer);
    }
    let matched = answers.iter().zip(&manifest.samples).filter(|(a, s)| **a == s.answer).count();
    let first = &manifest.samples[0];
    ensure(answers[0] == first.answer, || {
        format!("best checkpoint answered {:?} for sample 0, recorded {:?}", answers[0], first.answer)
    })?;
    Ok(format!("{summary}; predict with best checkpoint matches recorded answer on {matched}/10 training samples"))
}

fn dataset_audit() -> Outcome {
    let seed = 909;
    let ds = lib(generate_shapes_dataset(1000, 32, seed))?;
    ensure(ds.items.len() == 1000, || format!("only {} samples generated", ds.items.len()))?;
    let decoys = lib(generate_shapes_dataset(300, 32, seed + 1))?;
    let mut store = MemoryStore::new();
    let pool = common::pool_with_decoys(&ds, &decoys, &mut store);
    let n_decoys = pool.len() - ds.pool.len();

    let plain = lib(build_multi_image_dataset(ds.base_items(), &pool, 3, seed, None))?;
    for s in &plain.samples {
        let distinct: BTreeSet<&String> = s.image_refs.iter().collect();
        ensure(s.image_refs.len() == 4 && distinct.len() == 4, || format!("{} has refs {:?}", s.sample_id, s.image_refs))?;
    }
    let counts = plain.gt_position_counts();
    let n = plain.len() as f64;
    let sigma = (n * 0.25 * 0.75).sqrt();
    let worst_z = counts.iter().map(|&c| (c as f64 - n / 4.0).abs() / sigma).fold(0.0, f64::max);
    ensure(worst_z <= 4.0, || format!("gt counts {counts:?}, worst z {worst_z:.2}"))?;

    // Collisions judged from the scene symbols, independent of the detector path.
    let shapes: HashMap<&str, BTreeSet<String>> = ds
        .items
        .iter()
        .map(|it| (it.base.image.as_str(), it.scene.objects.iter().map(|o| format!("{:?}", o.shape).to_lowercase()).collect()))
        .collect();
    let singular = |c: &str| c.to_lowercase().trim_end_matches('s').to_string();
    let collisions = |m: &Manifest| -> usize {
        m.samples
            .iter()
            .map(|s| {
                let gt = &shapes[s.image_refs[s.gt_index].as_str()];
                s.image_refs
                    .iter()
                    .enumerate()
                    .filter(|&(i, r)| i != s.gt_index && gt.contains(&singular(pool.class_of(r).unwrap())))
                    .count()
            })
            .sum()
    };

    let detector = common::scene_detector(&ds);
    let filter = DetectionFilter::new(&detector, LabelNormalizer::default());
    let filtered = lib(build_multi_image_dataset(ds.base_items(), &pool, 3, seed, Some(&filter)))?;
    let (before, after) = (collisions(&plain), collisions(&filtered));
    let audited = lib(audit_filter(&filtered, &pool, &detector, &LabelNormalizer::default()))?;
    ensure(before > 0, || "unfiltered build has no collisions; audit would be vacuous".into())?;
    ensure(after == 0 && audited == 0, || format!("filtered collisions: oracle {after}, audit {audited}"))?;

    let again_ds = lib(generate_shapes_dataset(1000, 32, seed))?;
    let mut again_store = MemoryStore::new();
    let again_pool = common::pool_with_decoys(&again_ds, &decoys, &mut again_store);
    let filter2 = DetectionFilter::new(&detector, LabelNormalizer::default());
    let rebuilt = lib(build_multi_image_dataset(again_ds.base_items(), &again_pool, 3, seed, Some(&filter2)))?;
    let plain2 = lib(build_multi_image_dataset(again_ds.base_items(), &again_pool, 3, seed, None))?;
    ensure(lib(filtered.to_jsonl())? == lib(rebuilt.to_jsonl())?, || "filtered rebuild differs".into())?;
    ensure(lib(plain.to_jsonl())? == lib(plain2.to_jsonl())?, || "unfiltered rebuild differs".into())?;
    Ok(format!(
        "1000 samples x 4 distinct images; gt counts {counts:?} (max z {worst_z:.2}); collisions {before} unfiltered -> {after} filtered ({n_decoys} decoys in pool); rebuilds byte-identical"
    ))
}

fn oracle_agreement() -> Outcome {
    let mut total = 0;
    for seed in [1u64, 2, 3, 4, 5] {
        let ds = lib(generate_shapes_dataset(1000, 32, seed))?;
        for item in &ds.items {
            ensure(common::oracle_scene_valid(&item.scene), || format!("seed {seed} {}: invalid scene", item.base.image))?;
            let want = common::oracle_answer(&item.base.question, &item.scene);
            ensure(want.as_deref() == Some(item.base.answer.as_str()), || {
                format!("seed {seed} {:?}: generator {:?}, oracle {want:?}", item.base.question, item.base.answer)
            })?;
            total += 1;
        }
    }
    Ok(format!("{total}/{total} generated questions agree with the scene oracle"))
}

/// Criterion numbers given as arguments restrict the run, e.g.
/// `cargo test --test acceptance -- 5 9`. Other arguments are ignored.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &str, outcome: Outcome| {
        let tag = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = outcome.as_ref().unwrap_or_else(|e| e);
        println!("criterion {id:>2} {tag} {name}: {detail}");
        results.push((id, outcome));
    };
    type Check = (usize, &'static str, fn() -> Outcome);
    let quick: [Check; 5] = [
        (1, "shape contracts", shape_contracts),
        (2, "distribution normalization", normalization),
        (3, "image permutation", permutation),
        (4, "one-hot fusion identity", one_hot_identity),
        (5, "gradient check", gradient_check),
    ];
    for (id, name, f) in quick {
        if wanted(id) {
            record(id, name, f());
        }
    }

    if [6, 7, 8].into_iter().any(wanted) {
        let dir = tempfile::tempdir().expect("temp dir");
        let manifest = common::write_synth_manifest(dir.path(), "train.jsonl", 200, 7);
        let epochs = 100;
        let annealed = overfit_run(dir.path(), &manifest, LossMode::Annealed, epochs);
        let word_only = overfit_run(dir.path(), &manifest, LossMode::WordOnly, epochs);
        match &annealed {
            Ok((run, cfg)) => record(6, "annealing contract", annealing_contract(&run.metrics, cfg)),
            Err(e) => record(6, "annealing contract", Err(e.clone())),
        }
        record(7, "overfit run", annealed.as_ref().map_err(Clone::clone).and_then(|(run, _)| overfit(run)));
        let ablation_result = match (&annealed, &word_only) {
            (Ok((a, _)), Ok((w, _))) => ablation(a, w, &manifest),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        };
        record(8, "ablation direction", ablation_result);
    }
    if wanted(9) {
        record(9, "dataset builder audit", dataset_audit());
    }
    if wanted(10) {
        record(10, "synthetic oracle agreement", oracle_agreement());
    }

    let failed: Vec<usize> = results.iter().filter(|r| r.1.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
