//! Metrics, inference, timing and ablation drivers.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_inference, CheckpointManifest};
use crate::compat::{adjacent_cells, Relation};
use crate::config::TrainConfig;
use crate::data::{
    load_split, save_image, DatasetManifest, LoadedSplit, SampleSchedule, ShuffledSample, Split,
};
use crate::error::{Error, Result};
use crate::exec::{with_kernel_exec, Exec};
use crate::networks::InferenceModel;
use crate::puzzle::{split_image, GridSpec, Permutation, PermutationSet, PieceBatch};
use crate::tensor::Tensor;
use crate::training::{FitOptions, FitReport, Trainer};

/// Fraction of exact class matches.
pub fn reorganization_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth classes",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("accuracy of an empty prediction set is undefined".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction of the `2n(n-1)` adjacent cell pairs of the reassembled image
/// that hold pieces which were adjacent, in the same relation, originally.
///
/// Both arguments are shuffles: cell `i` of the puzzle shows original piece
/// `truth[i]`, and the solver undoes `predicted`.
pub fn neighbor_accuracy(predicted: &Permutation, truth: &Permutation, n: usize) -> Result<f64> {
    if n < 2 || predicted.len() != n * n || truth.len() != n * n {
        return Err(Error::Invalid(format!(
            "neighbor accuracy needs two permutations of length {} (n={n}), got {} and {}",
            n * n,
            predicted.len(),
            truth.len()
        )));
    }
    let grid = GridSpec { n, piece_px: 1 };
    // reassembled cell j shows shuffled cell predicted⁻¹[j], i.e. original piece truth[predicted⁻¹[j]]
    let placed = truth.then(&predicted.invert());
    let mut good = 0;
    let mut total = 0;
    for (relation, step) in [(Relation::Above, n), (Relation::LeftOf, 1)] {
        for (a, b) in adjacent_cells(grid, relation) {
            let (pa, pb) = (placed.mapping()[a], placed.mapping()[b]);
            let same_row = relation == Relation::Above || pa / n == pb / n;
            if pb == pa + step && same_row {
                good += 1;
            }
            total += 1;
        }
    }
    Ok(good as f64 / total as f64)
}

/// One evaluated puzzle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub predicted_class: usize,
    pub true_class: Option<usize>,
    pub neighbor_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub accuracy: f64,
    pub neighbor_accuracy: f64,
    /// Agreement of the reference labels with the truth, when supplied.
    pub ref_agreement: Option<f64>,
    pub mean_seconds: f64,
    pub per_category: BTreeMap<String, CategoryReport>,
}

const EVAL_BATCH: usize = 16;

fn stack_pieces(batches: &[&PieceBatch]) -> Result<Tensor<f32>> {
    let g = batches
        .first()
        .ok_or_else(|| Error::Invalid("no puzzles to stack".into()))?
        .grid;
    let tensors: Vec<Tensor<f32>> = batches.iter().map(|b| b.pieces.clone()).collect();
    Tensor::stack(&tensors)?.reshape(&[batches.len() * g.cells(), 3, g.piece_px, g.piece_px])
}

/// Predicted classes for a list of puzzles, in batches, using encoder and
/// classifier only.
pub fn predict_all(model: &mut InferenceModel, puzzles: &[&PieceBatch]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(puzzles.len());
    for chunk in puzzles.chunks(EVAL_BATCH) {
        out.extend(model.predict(&stack_pieces(chunk)?)?);
    }
    Ok(out)
}

/// Score `model` on samples with known classes. `categories[i]` belongs to
/// `samples[i]`; `reference` optionally holds the reference class of each.
pub fn evaluate(
    model: &mut InferenceModel,
    set: &PermutationSet,
    samples: &[ShuffledSample],
    categories: &[String],
    reference: Option<&[usize]>,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if categories.len() != samples.len() || reference.is_some_and(|r| r.len() != samples.len()) {
        return Err(Error::Shape("samples, categories and reference labels differ in length".into()));
    }
    let puzzles: Vec<&PieceBatch> = samples.iter().map(|s| &s.pieces).collect();
    let start = Instant::now();
    let predicted = predict_all(model, &puzzles)?;
    let seconds = start.elapsed().as_secs_f64();
    let truths: Vec<usize> = samples.iter().map(|s| s.true_class).collect();
    let accuracy = reorganization_accuracy(&predicted, &truths)?;

    let n = model.grid.n;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut neighbor_total = 0.0;
    let mut per_category: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((s, &p), cat) in samples.iter().zip(&predicted).zip(categories) {
        let na = neighbor_accuracy(set.get(p)?, set.get(s.true_class)?, n)?;
        neighbor_total += na;
        let entry = per_category.entry(cat.clone()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(p == s.true_class);
        predictions.push(Prediction {
            image_id: s.image_id.clone(),
            predicted_class: p,
            true_class: Some(s.true_class),
            neighbor_accuracy: Some(na),
        });
    }
    let ref_agreement = reference.map(|r| reorganization_accuracy(r, &truths)).transpose()?;
    let report = EvalReport {
        count: samples.len(),
        accuracy,
        neighbor_accuracy: neighbor_total / samples.len() as f64,
        ref_agreement,
        mean_seconds: seconds / samples.len() as f64,
        per_category: per_category
            .into_iter()
            .map(|(k, (count, hits))| {
                (
                    k,
                    CategoryReport {
                        count,
                        accuracy: hits as f64 / count as f64,
                    },
                )
            })
            .collect(),
    };
    Ok((report, predictions))
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for p in predictions {
        w.serialize(p).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Reject a permutation set that does not match the checkpoint's `(n, P)`.
pub fn check_set_matches(manifest: &CheckpointManifest, set: &PermutationSet) -> Result<()> {
    if (manifest.n, manifest.classes) != (set.n, set.len()) {
        return Err(Error::Config(format!(
            "checkpoint was trained with n={} P={} but the permutation set has n={} P={}",
            manifest.n,
            manifest.classes,
            set.n,
            set.len()
        )));
    }
    Ok(())
}

/// Load a checkpoint for inference, checking it against `set`.
pub fn load_solver(checkpoint: &Path, set: &PermutationSet) -> Result<InferenceModel> {
    let (model, manifest) = load_inference(checkpoint)?;
    check_set_matches(&manifest, set)?;
    Ok(model)
}

/// Undo the predicted shuffle: output cell `j` gets puzzle cell `σ⁻¹[j]`.
pub fn reassemble(puzzle: &PieceBatch, predicted: &Permutation) -> Result<Tensor<f32>> {
    Ok(puzzle.apply_permutation(&predicted.invert())?.assemble())
}

/// Solve scrambled images. Each image is cut into the model's grid, its
/// shuffle predicted, and the reassembled image written to
/// `out_dir/<image_id>.png`. `truths` optionally maps ids to true classes.
pub fn solve(
    model: &mut InferenceModel,
    set: &PermutationSet,
    images: &[(String, Tensor<f32>)],
    out_dir: &Path,
    truths: Option<&HashMap<String, usize>>,
) -> Result<Vec<Prediction>> {
    if set.n != model.grid.n || set.len() != model.classes {
        return Err(Error::Config(format!(
            "model is for n={} P={} but the permutation set has n={} P={}",
            model.grid.n,
            model.classes,
            set.n,
            set.len()
        )));
    }
    let puzzles = images
        .iter()
        .map(|(id, img)| split_image(img, model.grid, id))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PieceBatch> = puzzles.iter().collect();
    let predicted = predict_all(model, &refs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::with_capacity(images.len());
    for (puzzle, &p) in puzzles.iter().zip(&predicted) {
        let sigma = set.get(p)?;
        save_image(&reassemble(puzzle, sigma)?, &solved_path(out_dir, &puzzle.source_id))?;
        let true_class = truths.and_then(|t| t.get(&puzzle.source_id).copied());
        let neighbor = true_class
            .map(|t| neighbor_accuracy(sigma, set.get(t)?, set.n))
            .transpose()?;
        out.push(Prediction {
            image_id: puzzle.source_id.clone(),
            predicted_class: p,
            true_class,
            neighbor_accuracy: neighbor,
        });
    }
    write_predictions_csv(&out_dir.join("predictions.csv"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Wall-clock seconds per image.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Time one forward pass per puzzle after a warm-up pass.
pub fn time_solver(model: &mut InferenceModel, puzzles: &[PieceBatch]) -> Result<TimingReport> {
    let first = puzzles
        .first()
        .ok_or_else(|| Error::Invalid("nothing to time".into()))?;
    model.predict(&stack_pieces(&[first])?)?;
    let mut samples = Vec::with_capacity(puzzles.len());
    for p in puzzles {
        let x = stack_pieces(&[p])?;
        let start = Instant::now();
        model.predict(&x)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(TimingReport { samples, mean, median })
}

/// The three manifest splits, preprocessed for one grid.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub jigsaw: LoadedSplit,
    pub real: LoadedSplit,
    pub test: LoadedSplit,
}

impl Corpus {
    pub fn load(manifest: &DatasetManifest, grid: GridSpec, exec: Exec) -> Result<Self> {
        let side = grid.image_side();
        Ok(Corpus {
            jigsaw: load_split(manifest, Split::Jigsaw, side, exec)?,
            real: load_split(manifest, Split::Real, side, exec)?,
            test: load_split(manifest, Split::Test, side, exec)?,
        })
    }
}

/// Shuffled test puzzles: round 0 of a reshuffling schedule keyed by `seed`.
pub fn test_samples(
    split: &LoadedSplit,
    grid: GridSpec,
    set: &PermutationSet,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ShuffledSample>> {
    SampleSchedule {
        grid,
        seed,
        reshuffle: true,
    }
    .samples(split, set, 0, exec)
}

/// Seed of the test-split shuffles for a run trained with `train_seed`.
pub fn test_seed(train_seed: u64) -> u64 {
    train_seed ^ 0x7e57_7e57_7e57_7e57
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitReport,
    /// Scored on the final epoch's training puzzles.
    pub train: EvalReport,
    pub test: Option<EvalReport>,
}

/// Train a fresh model and score it on its final-epoch training puzzles and
/// on the test split.
pub fn train_and_evaluate(
    config: &TrainConfig,
    set: &PermutationSet,
    corpus: &Corpus,
    opts: &FitOptions,
) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(config.clone(), set.clone())?;
    let fit = trainer.fit(&corpus.jigsaw, &corpus.real, opts)?;
    evaluate_trained(trainer, fit, corpus, opts.out_dir.as_deref())
}

/// Score a trained model; writes `train_report.json`, `test_report.json`
/// and `test_predictions.csv` to `out_dir` when given.
pub fn evaluate_trained(trainer: Trainer, fit: FitReport, corpus: &Corpus, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let config = trainer.config().clone();
    let set = trainer.set().clone();
    let exec = trainer.exec();
    let grid = trainer.grid();
    let last_epoch = trainer.epoch.saturating_sub(1);
    let samples = trainer.schedule().samples(&corpus.jigsaw, &set, last_epoch, exec)?;
    let puzzles: Vec<PieceBatch> = samples.iter().map(|s| s.pieces.clone()).collect();
    let external = match (&config.jigsaw.ref_label_source, &config.jigsaw.ref_label_csv) {
        (crate::config::RefLabelSource::External, Some(path)) => Some(
            crate::compat::read_reference_csv(path, set.len())?
                .into_iter()
                .map(|(k, r)| (k, r.class_index))
                .collect::<HashMap<_, _>>(),
        ),
        _ => None,
    };
    let reference = trainer.reference_classes(&puzzles, external.as_ref())?;
    let mut model = trainer.into_inference();
    with_kernel_exec(exec, || {
        let (train, _) = evaluate(&mut model, &set, &samples, &corpus.jigsaw.categories, Some(&reference))?;
        info!(
            "train accuracy {:.3} (reference agreement {:.3})",
            train.accuracy,
            train.ref_agreement.unwrap_or(f64::NAN)
        );
        let test = if corpus.test.is_empty() {
            None
        } else {
            let samples = test_samples(&corpus.test, grid, &set, test_seed(config.train.seed), exec)?;
            let (report, predictions) = evaluate(&mut model, &set, &samples, &corpus.test.categories, None)?;
            info!("test accuracy {:.3} on {} images", report.accuracy, report.count);
            if let Some(dir) = out_dir {
                write_predictions_csv(&dir.join("test_predictions.csv"), &predictions)?;
            }
            Some(report)
        };
        if let Some(dir) = out_dir {
            write_json(&dir.join("train_report.json"), &train)?;
            if let Some(t) = &test {
                write_json(&dir.join("test_report.json"), t)?;
            }
        }
        Ok(RunOutcome { fit, train, test })
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One ablation variant: a name and dotted-key overrides of the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationVariant {
    pub name: String,
    #[serde(default)]
    pub set: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    #[serde(default, rename = "variant")]
    pub variants: Vec<AblationVariant>,
}

impl AblationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// One line of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub n: usize,
    pub classes: usize,
    pub w_jigsaw: f64,
    pub w_gan: f64,
    pub w_boundary: f64,
    pub train_accuracy: Option<f64>,
    pub train_ref_agreement: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_neighbor_accuracy: Option<f64>,
    /// `ok`, or the error that stopped the variant.
    pub status: String,
}

/// Train and score every variant. A failing variant is recorded and the
/// others still run. Each variant writes into `out_dir/<name>` when given.
pub fn run_ablation(
    base: &TrainConfig,
    spec: &AblationSpec,
    manifest: &DatasetManifest,
    out_dir: Option<&Path>,
) -> Vec<AblationRow> {
    let mut corpora: HashMap<GridSpec, Corpus> = HashMap::new();
    spec.variants
        .iter()
        .map(|variant| {
            let config = variant
                .set
                .iter()
                .try_fold(base.clone(), |cfg, (k, v)| cfg.with_override(k, v.clone()));
            let mut row = AblationRow {
                variant: variant.name.clone(),
                n: 0,
                classes: 0,
                w_jigsaw: 0.0,
                w_gan: 0.0,
                w_boundary: 0.0,
                train_accuracy: None,
                train_ref_agreement: None,
                test_accuracy: None,
                test_neighbor_accuracy: None,
                status: String::new(),
            };
            let result = config.and_then(|config| {
                row.n = config.puzzle.n;
                row.classes = config.puzzle.classes;
                row.w_jigsaw = config.loss.w_jigsaw;
                row.w_gan = config.loss.w_gan;
                row.w_boundary = config.loss.w_boundary;
                let grid = config.grid()?;
                let set = PermutationSet::generate(grid.n, config.puzzle.classes, config.puzzle.permset_seed)?;
                if !corpora.contains_key(&grid) {
                    corpora.insert(grid, Corpus::load(manifest, grid, Exec::Parallel)?);
                }
                let opts = FitOptions {
                    out_dir: out_dir.map(|d| d.join(&variant.name)),
                    ..Default::default()
                };
                train_and_evaluate(&config, &set, &corpora[&grid], &opts)
            });
            match result {
                Ok(outcome) => {
                    row.train_accuracy = Some(outcome.train.accuracy);
                    row.train_ref_agreement = outcome.train.ref_agreement;
                    row.test_accuracy = outcome.test.as_ref().map(|t| t.accuracy);
                    row.test_neighbor_accuracy = outcome.test.as_ref().map(|t| t.neighbor_accuracy);
                    row.status = "ok".into();
                }
                Err(e) => {
                    warn!("ablation variant {} failed: {e}", variant.name);
                    row.status = e.to_string();
                }
            }
            row
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record([
        "variant",
        "n",
        "classes",
        "w_jigsaw",
        "w_gan",
        "w_boundary",
        "train_accuracy",
        "train_ref_agreement",
        "test_accuracy",
        "test_neighbor_accuracy",
        "status",
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output location of a reassembled image.
pub fn solved_path(out_dir: &Path, image_id: &str) -> PathBuf {
    out_dir.join(format!("{image_id}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_counts_exact_matches() {
        let truth: Vec<usize> = (0..10).collect();
        let mut pred = truth.clone();
        pred[0] = 9;
        pred[3] = 1;
        pred[7] = 0;
        assert_eq!(reorganization_accuracy(&pred, &truth).unwrap(), 0.7);
        assert_eq!(reorganization_accuracy(&truth, &truth).unwrap(), 1.0);
        assert!(reorganization_accuracy(&[], &[]).is_err());
        assert!(reorganization_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn neighbor_accuracy_cases() {
        let id = Permutation::identity(4);
        assert_eq!(neighbor_accuracy(&id, &id, 2).unwrap(), 1.0);
        // columns swapped: both vertical pairs survive, both horizontal ones break
        assert_eq!(neighbor_accuracy(&perm(&[1, 0, 3, 2]), &id, 2).unwrap(), 0.5);
        // reassembled grid [3,2 / 1,0]: every neighbour relation is reversed
        assert_eq!(neighbor_accuracy(&perm(&[3, 2, 1, 0]), &id, 2).unwrap(), 0.0);
        let truth = perm(&[2, 0, 3, 1]);
        assert_eq!(neighbor_accuracy(&truth, &truth, 2).unwrap(), 1.0);
        assert!(neighbor_accuracy(&id, &Permutation::identity(9), 2).is_err());
    }

    /// Brute-force count over original piece positions.
    fn neighbor_oracle(predicted: &Permutation, truth: &Permutation, n: usize) -> f64 {
        let inv = predicted.invert();
        let at = |cell: usize| truth.mapping()[inv.mapping()[cell]];
        let pos = |piece: usize| (piece / n, piece % n);
        let mut good = 0;
        for r in 0..n {
            for c in 0..n {
                let (pr, pc) = pos(at(r * n + c));
                if c + 1 < n && pos(at(r * n + c + 1)) == (pr, pc + 1) {
                    good += 1;
                }
                if r + 1 < n && pos(at((r + 1) * n + c)) == (pr + 1, pc) {
                    good += 1;
                }
            }
        }
        good as f64 / (2 * n * (n - 1)) as f64
    }

    #[test]
    fn neighbor_accuracy_matches_brute_force() {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in 2..=4 {
            for _ in 0..200 {
                let mut a: Vec<usize> = (0..n * n).collect();
                let mut b = a.clone();
                a.shuffle(&mut rng);
                b.shuffle(&mut rng);
                let (a, b) = (perm(&a), perm(&b));
                assert_eq!(neighbor_accuracy(&a, &b, n).unwrap(), neighbor_oracle(&a, &b, n));
            }
        }
    }

    #[test]
    fn ablation_spec_parsing() {
        let spec = AblationSpec::from_toml_str(
            "[[variant]]\nname = \"full\"\n\n[[variant]]\nname = \"no_gan\"\nset = { \"loss.w_gan\" = 0.0 }\n",
        )
        .unwrap();
        assert_eq!(spec.variants.len(), 2);
        assert_eq!(spec.variants[1].set["loss.w_gan"], toml::Value::Float(0.0));
        assert_eq!(AblationSpec::from_toml_str("").unwrap().variants.len(), 0);
    }

    #[test]
    fn empty_ablation_gives_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            entries: Vec::new(),
            fractions: Default::default(),
            seed: 0,
        };
        let rows = run_ablation(&TrainConfig::default(), &AblationSpec::default(), &manifest, None);
        assert!(rows.is_empty());
        let path = dir.path().join("table.csv");
        write_ablation_csv(&path, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "variant,n,classes,w_jigsaw,w_gan,w_boundary,train_accuracy,train_ref_agreement,test_accuracy,test_neighbor_accuracy,status\n"
        );
    }

    #[test]
    fn failing_variant_is_recorded() {
        let manifest = DatasetManifest {
            entries: Vec::new(),
            fractions: Default::default(),
            seed: 0,
        };
        let spec = AblationSpec::from_toml_str(
            "[[variant]]\nname = \"bad\"\nset = { \"train.epochs\" = 0 }\n[[variant]]\nname = \"empty\"\n",
        )
        .unwrap();
        let rows = run_ablation(&TrainConfig::default(), &spec, &manifest, None);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].status.contains("epochs"));
        assert!(rows[1].status.contains("empty"));
    }

    #[test]
    fn predictions_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let rows = vec![
            Prediction {
                image_id: "a/b/c".into(),
                predicted_class: 3,
                true_class: Some(3),
                neighbor_accuracy: Some(1.0),
            },
            Prediction {
                image_id: "x".into(),
                predicted_class: 0,
                true_class: None,
                neighbor_accuracy: None,
            },
        ];
        write_predictions_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,predicted_class,true_class,neighbor_accuracy\n"));
        assert_eq!(read_predictions_csv(&path).unwrap(), rows);
    }
}
