use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mivqa::dataset::{
    build_multi_image_dataset, read_base_dir, read_pool_dir, BaseItem, CommandDetector,
    DetectionFilter, DetectorClient, DistractorPool, LabelNormalizer, PoolEntry, SidecarDetector,
};
use mivqa::harness::{evaluate, predict, train, RunConfig};
use mivqa::synth::generate_shapes_dataset;
use mivqa::{Error, Result};

#[derive(Parser)]
#[command(name = "mivqa", version, about = "Multi-image visual question answering")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    /// Read `<image>.det.json` sidecar files.
    Stub,
    /// Run `--detector-cmd` on each ground-truth image.
    Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic shapes base source and texture pool.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
    },
    /// Build a multi-image manifest from a base source and a distractor pool.
    BuildDataset {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        detector: Option<DetectorKind>,
        /// Program for `--detector cmd`; prints detection JSON for the image path it is given.
        #[arg(long)]
        detector_cmd: Option<String>,
        /// JSON object mapping detector labels to pool labels.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        max_vocab: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML or JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print metrics of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Answer a question over candidate images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
    },
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(format!("resolving {}", p.display()), e))
}

/// Rewrites `reference` (relative to `from`) to be relative to `to`.
fn rebase(reference: &str, from: &Path, to: &Path) -> String {
    let target = from.join(reference);
    pathdiff::diff_paths(&target, to)
        .unwrap_or(target)
        .to_string_lossy()
        .into_owned()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("serializing output", e))?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("writing output", e)),
        _ => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_dataset(
    base: &Path,
    pool: &Path,
    k: usize,
    seed: u64,
    detector: Option<DetectorKind>,
    detector_cmd: Option<String>,
    synonyms: Option<PathBuf>,
    max_vocab: Option<usize>,
    out: &Path,
) -> Result<()> {
    let base_dir = absolute(base)?;
    let pool_dir = absolute(pool)?;
    let out = absolute(out)?;
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    // References are resolved through this directory, so it must exist.
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let items: Vec<BaseItem> = read_base_dir(&base_dir)?
        .into_iter()
        .map(|b| BaseItem {
            image: rebase(&b.image, &base_dir, &out_dir),
            ..b
        })
        .collect();
    let pool = DistractorPool::new(
        read_pool_dir(&pool_dir)?
            .entries()
            .iter()
            .map(|e| PoolEntry {
                image: rebase(&e.image, &pool_dir, &out_dir),
                class: e.class.clone(),
            })
            .collect(),
    );
    let normalizer = match &synonyms {
        Some(path) => LabelNormalizer::from_file(path)?,
        None => LabelNormalizer::default(),
    };
    let client: Option<Box<dyn DetectorClient>> = match detector {
        None => None,
        Some(DetectorKind::Stub) => Some(Box::new(SidecarDetector::new(&out_dir))),
        Some(DetectorKind::Cmd) => {
            let cmd = detector_cmd.ok_or_else(|| {
                Error::InvalidConfig("--detector cmd requires --detector-cmd".into())
            })?;
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts
                .next()
                .ok_or_else(|| Error::InvalidConfig("empty --detector-cmd".into()))?;
            Some(Box::new(CommandDetector::new(program, parts.collect(), &out_dir)))
        }
    };
    let filter = client.as_deref().map(|d| DetectionFilter::new(d, normalizer));
    let mut manifest = build_multi_image_dataset(items, &pool, k, seed, filter.as_ref())?;
    if let Some(max) = max_vocab {
        manifest.rebuild_vocab(max);
    }
    manifest.write(&out)?;
    let summary: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
        ("samples", manifest.len().into()),
        ("answer_vocab", manifest.answer_vocab().len().into()),
        ("filter_mode", manifest.header.filter_mode.clone().into()),
        ("out", out.display().to_string().into()),
    ]);
    print_json(&summary)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Synth {
            out,
            n,
            seed,
            image_size,
        } => {
            let ds = generate_shapes_dataset(n, image_size, seed)?;
            ds.write_to_dir(&out)?;
            print_json(&BTreeMap::from([
                ("samples", ds.items.len()),
                ("skipped", ds.skipped),
                ("pool", ds.pool.len()),
            ]))
        }
        Cmd::BuildDataset {
            base,
            pool,
            k,
            seed,
            detector,
            detector_cmd,
            synonyms,
            max_vocab,
            out,
        } => build_dataset(&base, &pool, k, seed, detector, detector_cmd, synonyms, max_vocab, &out),
        Cmd::Train { config } => {
            let run = RunConfig::load(&config)?;
            let outcome = train(&run)?;
            print_json(&BTreeMap::from([
                ("final", serde_json::to_value(outcome.metrics.last()).unwrap_or_default()),
                ("best_checkpoint", outcome.best_checkpoint.display().to_string().into()),
                ("last_checkpoint", outcome.last_checkpoint.display().to_string().into()),
                ("metrics_file", outcome.metrics_file.display().to_string().into()),
            ]))
        }
        Cmd::Eval {
            checkpoint,
            manifest,
        } => print_json(&evaluate(&checkpoint, &manifest)?),
        Cmd::Predict {
            checkpoint,
            question,
            images,
        } => print_json(&predict(&checkpoint, &images, &question)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
