use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use jigsaw_core::checkpoint;
use jigsaw_core::compat::{reference_labels, write_reference_csv, ReferenceRecord};
use jigsaw_core::config::TrainConfig;
use jigsaw_core::data::{
    build_manifest, load_image, write_synthetic_corpus, DatasetManifest, SampleSchedule, Split, SplitFractions,
};
use jigsaw_core::eval::{
    self, check_set_matches, evaluate, load_solver, run_ablation, test_samples, test_seed, time_solver,
    write_ablation_csv, write_json, write_predictions_csv, AblationSpec, Corpus,
};
use jigsaw_core::exec::with_kernel_exec;
use jigsaw_core::networks::DOWNSAMPLE;
use jigsaw_core::puzzle::{PermutationSet, PieceBatch};
use jigsaw_core::training::{FitOptions, Trainer};
use jigsaw_core::warp::flow_from_permutation;
use jigsaw_core::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "jigsawgan", version, about = "Self-supervised square jigsaw puzzle solver")]
struct Cli {
    /// Seed overriding `train.seed` (and the shuffles derived from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset manifest from a `<category>/<domain>/<file>` corpus.
    Prepare(PrepareArgs),
    /// Generate a maximal-Hamming permutation set.
    Permset(PermsetArgs),
    /// Write reference labels for the jigsaw split.
    Refsolve(RefsolveArgs),
    /// Train all four networks.
    Train(TrainArgs),
    /// Reassemble scrambled images with a trained checkpoint.
    Solve(SolveArgs),
    /// Score a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Train and score a list of config variants.
    Ablate(AblateArgs),
    /// Time the solver per image.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Corpus root.
    #[arg(long)]
    corpus: PathBuf,
    /// Manifest to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// First write this many synthetic images into the corpus.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 96)]
    side: usize,
    /// Jigsaw, real and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.4, 0.4, 0.2])]
    fractions: Vec<f64>,
}

#[derive(Args)]
struct PermsetArgs {
    #[arg(long)]
    n: usize,
    /// Number of permutations `P`.
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    permset: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set loss.w_gan=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RefsolveArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Reference-label CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    permset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional `image_id,true_class` CSV for scoring.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write the feature-level flow field of each prediction as CSV.
    #[arg(long)]
    dump_flow: bool,
    /// An image file or a directory of images.
    input: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    permset: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// TOML file with `[[variant]]` tables.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    permset: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Number of test images to time.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.deterministic {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match with_kernel_exec(exec, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => prepare(cli, a),
        Command::Permset(a) => {
            let set = PermutationSet::generate(a.n, a.classes, cli.seed.unwrap_or(0)).map_err(|e| match e {
                Error::Invalid(m) => Error::Config(m),
                e => e,
            })?;
            set.save(&a.out)?;
            println!("wrote {} permutations (n={}) to {}", set.len(), a.n, a.out.display());
            Ok(())
        }
        Command::Refsolve(a) => refsolve(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Solve(a) => solve(a),
        Command::Eval(a) => evaluate_checkpoint(a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Bench(a) => bench(a),
    }
}

fn prepare(cli: &Cli, a: &PrepareArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    if let Some(count) = a.synthetic {
        write_synthetic_corpus(&a.corpus, count, a.side, seed)?;
        info!("wrote {count} synthetic images under {}", a.corpus.display());
    }
    let fractions = SplitFractions {
        jigsaw: a.fractions[0],
        real: a.fractions[1],
        test: a.fractions[2],
    };
    let manifest = build_manifest(&a.corpus, seed, fractions)?;
    manifest.save(&a.out)?;
    println!(
        "manifest {}: {} jigsaw, {} real, {} test",
        a.out.display(),
        manifest.split(Split::Jigsaw).len(),
        manifest.split(Split::Real).len(),
        manifest.split(Split::Test).len()
    );
    Ok(())
}

/// Config, manifest and permutation set of a training-style command.
struct Setup {
    config: TrainConfig,
    manifest: DatasetManifest,
    set: PermutationSet,
}

fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text} must look like key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn setup(cli: &Cli, run: &RunArgs) -> Result<Setup> {
    let mut config = match &run.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for o in &run.overrides {
        let (k, v) = parse_override(o)?;
        config = config.with_override(&k, v)?;
    }
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if cli.deterministic {
        config.train.deterministic = true;
    }
    if let Some(p) = &run.manifest {
        config.data.manifest = Some(p.clone());
    }
    if let Some(p) = &run.permset {
        config.data.permset = Some(p.clone());
    }
    let manifest_path = config
        .data
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no manifest: pass --manifest or set data.manifest".into()))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let set = match &config.data.permset {
        Some(p) => PermutationSet::load(p)?,
        None => PermutationSet::generate(config.puzzle.n, config.puzzle.classes, config.puzzle.permset_seed)?,
    };
    Ok(Setup { config, manifest, set })
}

fn exec_of(config: &TrainConfig) -> Exec {
    if config.train.deterministic {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn refsolve(cli: &Cli, a: &RefsolveArgs) -> Result<()> {
    let s = setup(cli, &a.run)?;
    let grid = s.config.grid()?;
    let exec = exec_of(&s.config);
    let corpus = Corpus::load(&s.manifest, grid, exec)?;
    // the fixed shuffles that a run with train.reshuffle = false sees
    let schedule = SampleSchedule {
        grid,
        seed: s.config.train.seed,
        reshuffle: false,
    };
    let pieces = schedule.pieces(&corpus.jigsaw, &s.set, 0, exec)?;
    let labels = reference_labels(&pieces, &s.set, s.config.jigsaw.pix, exec)?;
    let records: Vec<ReferenceRecord> = pieces
        .iter()
        .zip(&labels)
        .map(|(p, l)| ReferenceRecord::new(&p.source_id, l))
        .collect();
    write_reference_csv(&a.out, &records)?;
    println!("wrote {} reference labels to {}", records.len(), a.out.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let s = setup(cli, &a.run)?;
    let grid = s.config.grid()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    std::fs::write(a.out.join("config.toml"), s.config.to_toml_string()?).map_err(|e| Error::io(&a.out, e))?;
    s.set.save(&a.out.join("permset.txt"))?;
    let corpus = Corpus::load(&s.manifest, grid, exec_of(&s.config))?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(s.config.clone(), s.set.clone(), p)?,
        None => Trainer::new(s.config.clone(), s.set.clone())?,
    };
    let opts = FitOptions {
        out_dir: Some(a.out.clone()),
        ..Default::default()
    };
    let fit = trainer.fit(&corpus.jigsaw, &corpus.real, &opts)?;
    let outcome = eval::evaluate_trained(trainer, fit, &corpus, Some(&a.out))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "epochs": outcome.fit.epochs_completed,
            "train": outcome.train,
            "test": outcome.test,
        }))
        .unwrap_or_default()
    );
    Ok(())
}

fn image_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no images found", input.display())));
    }
    Ok(files)
}

fn read_truths(path: &Path) -> Result<HashMap<String, usize>> {
    #[derive(serde::Deserialize)]
    struct Row {
        image_id: String,
        true_class: usize,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize::<Row>()
        .map(|row| {
            row.map(|r| (r.image_id, r.true_class))
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn solve(a: &SolveArgs) -> Result<()> {
    let set = PermutationSet::load(&a.permset)?;
    let mut model = load_solver(&a.checkpoint, &set)?;
    let side = model.grid.image_side();
    let images = image_files(&a.input)?
        .into_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            load_image(&p, side).map(|t| (id, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let truths = a.truth.as_deref().map(read_truths).transpose()?;
    let predictions = eval::solve(&mut model, &set, &images, &a.out, truths.as_ref())?;
    if a.dump_flow {
        let feature_side = model.grid.n * model.grid.piece_px / DOWNSAMPLE;
        for p in &predictions {
            let flow = flow_from_permutation(&set.get(p.predicted_class)?.invert(), feature_side, feature_side)?;
            flow.save_csv(&a.out.join(format!("{}.flow.csv", p.image_id)))?;
        }
    }
    println!("solved {} images into {}", predictions.len(), a.out.display());
    Ok(())
}

fn evaluate_checkpoint(a: &EvalArgs) -> Result<()> {
    let split = match a.split.as_str() {
        "jigsaw" => Split::Jigsaw,
        "real" => Split::Real,
        "test" => Split::Test,
        other => return Err(Error::Config(format!("unknown split {other}"))),
    };
    let set = PermutationSet::load(&a.permset)?;
    let (_, manifest_ck) = checkpoint::load(&a.checkpoint)?;
    check_set_matches(&manifest_ck, &set)?;
    let mut model = load_solver(&a.checkpoint, &set)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let data = jigsaw_core::data::load_split(&manifest, split, model.grid.image_side(), Exec::Parallel)?;
    let samples = test_samples(&data, model.grid, &set, test_seed(manifest_ck.seed), Exec::Parallel)?;
    let (report, predictions) = evaluate(&mut model, &set, &samples, &data.categories, None)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_predictions_csv(&a.out.join("predictions.csv"), &predictions)?;
    write_json(&a.out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default());
    Ok(())
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let s = setup(cli, &a.run)?;
    let spec = AblationSpec::load(&a.spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let rows = run_ablation(&s.config, &spec, &s.manifest, Some(&a.out));
    let table = a.out.join("ablation.csv");
    write_ablation_csv(&table, &rows)?;
    println!("{} variants, table at {}", rows.len(), table.display());
    Ok(())
}

fn hardware_stamp() -> serde_json::Value {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    serde_json::json!({
        "arch": std::env::consts::ARCH,
        "os": std::env::consts::OS,
        "cpu": cpu,
        "threads": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    })
}

fn bench(a: &BenchArgs) -> Result<()> {
    let set = PermutationSet::load(&a.permset)?;
    let (_, ck) = checkpoint::load(&a.checkpoint)?;
    let mut model = load_solver(&a.checkpoint, &set)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let data = jigsaw_core::data::load_split(&manifest, Split::Test, model.grid.image_side(), Exec::Parallel)?;
    let samples = test_samples(&data, model.grid, &set, test_seed(ck.seed), Exec::Parallel)?;
    let puzzles: Vec<PieceBatch> = samples.into_iter().take(a.count).map(|s| s.pieces).collect();
    let timing = time_solver(&mut model, &puzzles)?;
    let report = serde_json::json!({
        "images": timing.samples.len(),
        "mean_seconds": timing.mean,
        "median_seconds": timing.median,
        "hardware": hardware_stamp(),
    });
    let text = serde_json::to_string_pretty(&report).unwrap_or_default();
    if let Some(p) = &a.out {
        std::fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    println!("{text}");
    Ok(())
}
