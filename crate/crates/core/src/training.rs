//! Joint optimisation of encoder, classifier, generator and discriminator.
//!
//! The step only ever sees shuffled pieces, reference labels and unpaired
//! target-domain images. Checkpoints hold weights, batch-norm statistics,
//! optimiser moments and the trainer position, so a run can be resumed.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointManifest, TensorMap};
use crate::compat::{read_reference_csv, reference_labels};
use crate::config::{RefLabelSource, TrainConfig, WarpSource};
use crate::data::{LoadedSplit, SampleSchedule};
use crate::error::{Error, Result};
use crate::exec::{with_kernel_exec, Exec};
use crate::losses::{
    boundary_loss, fake_target_term, generator_adversarial_loss, jigsaw_loss, real_target_term, LossComponents,
};
use crate::networks::{argmax_rows, component_rng, Component, InferenceModel, JigsawNet};
use crate::nn::{Adam, AdamMoments, Mode};
use crate::puzzle::{GridSpec, PermutationSet, PieceBatch};
use crate::tensor::Tensor;
use crate::warp::{flow_from_permutation, warp_each, warp_each_backward};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(rename = "L_jigsaw")]
    pub jigsaw: f64,
    #[serde(rename = "L_GAN_D")]
    pub gan_d: f64,
    #[serde(rename = "L_GAN_G")]
    pub gan_g: f64,
    #[serde(rename = "L_boundary")]
    pub boundary: f64,
    /// Fraction of predictions equal to the reference label.
    pub ref_agreement: f64,
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Where `fit` writes its artifacts and when it stops early.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Receives `loss_log.csv`, `checkpoints/epoch_NNNN.safetensors` and
    /// `model.safetensors`.
    pub out_dir: Option<PathBuf>,
    /// Stop once this many epochs are complete, as if interrupted.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Log rows produced by this call.
    pub records: Vec<LossRecord>,
    pub epochs_completed: usize,
    pub final_checkpoint: Option<PathBuf>,
}

struct Optimizers {
    encoder: Adam<f32>,
    classifier: Adam<f32>,
    generator: Adam<f32>,
    discriminator: Adam<f32>,
}

impl Optimizers {
    fn all(&mut self) -> [(&'static str, &mut Adam<f32>); 4] {
        [
            ("encoder", &mut self.encoder),
            ("classifier", &mut self.classifier),
            ("generator", &mut self.generator),
            ("discriminator", &mut self.discriminator),
        ]
    }
}

/// Position of the trainer, stored in the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    epoch: usize,
    step: u64,
    adam_steps: BTreeMap<String, u64>,
    /// Batch order and shuffles are drawn from ChaCha8 keyed by this seed
    /// with the epoch as stream, so the position above fixes the RNG state.
    rng_seed: u64,
    config: TrainConfig,
}

fn adam_step<C: Component<f32>>(opt: &mut Adam<f32>, component: &mut C) {
    opt.begin_step();
    component.visit_params(&mut |k, p| opt.update(k, p));
}

pub struct Trainer {
    config: TrainConfig,
    set: PermutationSet,
    pub net: JigsawNet<f32>,
    optimizers: Optimizers,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
    exec: Exec,
}

impl Trainer {
    pub fn new(config: TrainConfig, set: PermutationSet) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        if set.n != grid.n || set.len() != config.puzzle.classes {
            return Err(Error::Config(format!(
                "permutation set has n={} P={} but the config asks for n={} P={}",
                set.n,
                set.len(),
                grid.n,
                config.puzzle.classes
            )));
        }
        let net = JigsawNet::new(grid, set.len(), config.train.seed)?;
        let adam = config.adam();
        let exec = if config.train.deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        };
        Ok(Trainer {
            config,
            set,
            net,
            optimizers: Optimizers {
                encoder: Adam::new(adam),
                classifier: Adam::new(adam),
                generator: Adam::new(adam),
                discriminator: Adam::new(adam),
            },
            epoch: 0,
            step: 0,
            exec,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn set(&self) -> &PermutationSet {
        &self.set
    }

    pub fn grid(&self) -> GridSpec {
        self.net.grid
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn schedule(&self) -> SampleSchedule {
        SampleSchedule {
            grid: self.net.grid,
            seed: self.config.train.seed,
            reshuffle: self.config.train.reshuffle,
        }
    }

    /// Encoder and classifier, for evaluation.
    pub fn into_inference(self) -> InferenceModel {
        InferenceModel::from_net(self.net)
    }

    /// One optimisation step: discriminator first, then encoder, classifier
    /// and generator jointly. `real` may be empty when the adversarial
    /// weight is zero.
    pub fn train_step(&mut self, pieces: &[PieceBatch], ref_labels: &[usize], real: &[Tensor<f32>]) -> Result<LossRecord> {
        let exec = self.exec;
        with_kernel_exec(exec, || self.step_inner(pieces, ref_labels, real))
    }

    fn step_inner(&mut self, pieces: &[PieceBatch], ref_labels: &[usize], real: &[Tensor<f32>]) -> Result<LossRecord> {
        let b = pieces.len();
        let weights = self.config.loss;
        let use_gan = weights.w_gan > 0.0;
        let use_generator = use_gan || weights.w_boundary > 0.0;
        if b == 0 {
            return Err(Error::Invalid("empty training batch".into()));
        }
        if ref_labels.len() != b {
            return Err(Error::Shape(format!(
                "{} reference labels for a batch of {b} puzzles",
                ref_labels.len()
            )));
        }
        if use_gan && real.len() != b {
            return Err(Error::Shape(format!(
                "real batch has {} images but the jigsaw batch has {b}",
                real.len()
            )));
        }
        let grid = self.net.grid;
        if let Some(p) = pieces.iter().find(|p| p.grid != grid) {
            return Err(Error::Shape(format!(
                "pieces of {} are cut for n={}, {}px; the model expects n={}, {}px",
                p.source_id, p.grid.n, p.grid.piece_px, grid.n, grid.piece_px
            )));
        }
        let piece_tensors: Vec<Tensor<f32>> = pieces.iter().map(|p| p.pieces.clone()).collect();
        let x = Tensor::stack(&piece_tensors)?.reshape(&[b * grid.cells(), 3, grid.piece_px, grid.piece_px])?;

        let net = &mut self.net;
        net.encoder.zero_grad();
        net.classifier.zero_grad();
        let features = net.encoder.forward(&x, Mode::Train)?;
        let logits = net.classifier.forward(&features, Mode::Train);
        let (l_jigsaw, mut d_logits) = jigsaw_loss(&logits, ref_labels, self.config.jigsaw.gamma)?;
        let predicted = argmax_rows(&logits);
        let agree = predicted.iter().zip(ref_labels).filter(|(p, r)| p == r).count();
        let mut losses = LossComponents {
            jigsaw: l_jigsaw as f64,
            gan_d: 0.0,
            gan_g: 0.0,
            boundary: 0.0,
        };

        let mut d_features_from_image = None;
        if use_generator {
            let warp_classes = match self.config.jigsaw.warp_source {
                WarpSource::Argmax => &predicted[..],
                WarpSource::Reference => ref_labels,
            };
            let side = features.shape()[2];
            let flows = warp_classes
                .iter()
                .map(|&c| flow_from_permutation(&self.set.get(c)?.invert(), side, side))
                .collect::<Result<Vec<_>>>()?;
            let warped = warp_each(&features, &flows)?;
            net.generator.zero_grad();
            let fake = net.generator.forward(&warped, Mode::Train);
            let mut d_fake = Tensor::zeros(fake.shape());

            if use_gan {
                let real = Tensor::stack(real)?;
                if real.shape() != fake.shape() {
                    return Err(Error::Shape(format!(
                        "real images {:?} do not match generated images {:?}",
                        real.shape(),
                        fake.shape()
                    )));
                }
                let disc = &mut net.discriminator;
                disc.zero_grad();
                let (l_real, g_real) = real_target_term(&disc.forward(&real, Mode::Train)?);
                disc.backward(&g_real);
                let (l_fake, g_fake) = fake_target_term(&disc.forward(&fake, Mode::Train)?);
                disc.backward(&g_fake);
                losses.gan_d = (l_real + l_fake) as f64;
                LossComponents {
                    gan_d: losses.gan_d,
                    ..LossComponents::default()
                }
                .check_finite()?;
                adam_step(&mut self.optimizers.discriminator, disc);

                disc.zero_grad();
                let scores = disc.forward(&fake, Mode::TrainNoTrack)?;
                let (l_gen, mut g_scores) = generator_adversarial_loss(&scores, self.config.gan.saturating);
                losses.gan_g = l_gen as f64;
                g_scores.scale(weights.w_gan as f32);
                d_fake = disc.backward(&g_scores);
                disc.zero_grad();
            }

            let (l_boundary, g_boundary) = boundary_loss(&fake, grid, &self.config.boundary)?;
            losses.boundary = l_boundary as f64;
            if weights.w_boundary > 0.0 {
                d_fake.axpy(weights.w_boundary as f32, &g_boundary);
            }
            losses.check_finite()?;
            let d_warped = net.generator.backward(&d_fake);
            d_features_from_image = Some(warp_each_backward(&d_warped, &flows)?);
        }
        losses.check_finite()?;

        d_logits.scale(weights.w_jigsaw as f32);
        let mut d_features = net.classifier.backward(&d_logits);
        if let Some(extra) = &d_features_from_image {
            d_features.add_assign(extra);
        }
        net.encoder.backward(&d_features)?;

        adam_step(&mut self.optimizers.encoder, &mut net.encoder);
        adam_step(&mut self.optimizers.classifier, &mut net.classifier);
        if use_generator {
            adam_step(&mut self.optimizers.generator, &mut net.generator);
        }

        let record = LossRecord {
            step: self.step,
            epoch: self.epoch,
            jigsaw: losses.jigsaw,
            gan_d: losses.gan_d,
            gan_g: losses.gan_g,
            boundary: losses.boundary,
            ref_agreement: agree as f64 / b as f64,
        };
        self.step += 1;
        Ok(record)
    }

    /// Reference classes for a list of puzzles, from the configured source.
    pub fn reference_classes(
        &self,
        pieces: &[PieceBatch],
        external: Option<&HashMap<String, usize>>,
    ) -> Result<Vec<usize>> {
        match external {
            Some(map) => pieces
                .iter()
                .map(|p| {
                    map.get(&p.source_id)
                        .copied()
                        .ok_or_else(|| Error::Data(format!("no external reference label for {}", p.source_id)))
                })
                .collect(),
            None => Ok(reference_labels(pieces, &self.set, self.config.jigsaw.pix, self.exec)?
                .into_iter()
                .map(|l| l.class_index)
                .collect()),
        }
    }

    fn external_labels(&self) -> Result<Option<HashMap<String, usize>>> {
        if self.config.jigsaw.ref_label_source != RefLabelSource::External {
            return Ok(None);
        }
        let path = self
            .config
            .jigsaw
            .ref_label_csv
            .as_ref()
            .ok_or_else(|| Error::Config("external reference labels need jigsaw.ref_label_csv".into()))?;
        let records = read_reference_csv(path, self.set.len())?;
        Ok(Some(records.into_iter().map(|(k, r)| (k, r.class_index)).collect()))
    }

    /// Train from the current epoch up to `train.epochs`.
    pub fn fit(&mut self, jigsaw: &LoadedSplit, real: &LoadedSplit, opts: &FitOptions) -> Result<FitReport> {
        if jigsaw.is_empty() {
            return Err(Error::Data("the jigsaw split is empty".into()));
        }
        let use_gan = self.config.loss.w_gan > 0.0;
        if use_gan && real.is_empty() {
            return Err(Error::Data("the real split is empty but train.w_gan > 0".into()));
        }
        let external = self.external_labels()?;
        let schedule = self.schedule();
        let batch_size = self.config.train.batch_size;
        let log_path = opts.out_dir.as_ref().map(|d| d.join("loss_log.csv"));
        let mut log = match &log_path {
            Some(p) if self.step > 0 && p.exists() => {
                let mut rows = read_loss_log(p)?;
                rows.retain(|r| r.step < self.step);
                rows
            }
            _ => Vec::new(),
        };
        let mut records = Vec::new();
        let mut final_checkpoint = None;
        let mut labels_round: Option<(usize, Vec<usize>)> = None;

        while self.epoch < self.config.train.epochs {
            let epoch = self.epoch;
            let pieces = schedule.pieces(jigsaw, &self.set, epoch, self.exec)?;
            let round = schedule.round(epoch);
            if labels_round.as_ref().map(|(r, _)| *r) != Some(round) {
                labels_round = Some((round, self.reference_classes(&pieces, external.as_ref())?));
            }
            let labels = &labels_round.as_ref().unwrap().1;

            let mut rng = component_rng(self.config.train.seed, 16 + epoch as u64);
            let mut order: Vec<usize> = (0..jigsaw.len()).collect();
            order.shuffle(&mut rng);
            let mut real_order: Vec<usize> = (0..real.len()).collect();
            real_order.shuffle(&mut rng);
            let mut real_cursor = 0;

            for chunk in order.chunks(batch_size) {
                let batch: Vec<PieceBatch> = chunk.iter().map(|&i| pieces[i].clone()).collect();
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let real_batch: Vec<Tensor<f32>> = if use_gan {
                    chunk
                        .iter()
                        .map(|_| {
                            let i = real_order[real_cursor % real_order.len()];
                            real_cursor += 1;
                            real.images[i].clone()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let record = self.train_step(&batch, &batch_labels, &real_batch)?;
                log.push(record.clone());
                records.push(record);
            }
            self.epoch += 1;
            if let Some(r) = records.last() {
                info!(
                    "epoch {} step {}: L_jigsaw {:.4} L_GAN_D {:.4} L_GAN_G {:.4} L_boundary {:.4} ref_agreement {:.3}",
                    self.epoch, r.step, r.jigsaw, r.gan_d, r.gan_g, r.boundary, r.ref_agreement
                );
            }

            let finished = self.epoch == self.config.train.epochs;
            if let Some(dir) = &opts.out_dir {
                if finished || self.epoch % self.config.train.checkpoint_every == 0 {
                    let path = dir.join("checkpoints").join(format!("epoch_{:04}.safetensors", self.epoch));
                    self.save_checkpoint(&path)?;
                    write_loss_log(log_path.as_ref().unwrap(), &log)?;
                    if finished {
                        let model = dir.join("model.safetensors");
                        std::fs::copy(&path, &model).map_err(|e| Error::io(&model, e))?;
                        final_checkpoint = Some(model);
                    }
                }
            }
            if opts.stop_after_epoch.is_some_and(|e| self.epoch >= e) {
                break;
            }
        }
        Ok(FitReport {
            records,
            epochs_completed: self.epoch,
            final_checkpoint,
        })
    }

    fn manifest(&mut self) -> Result<CheckpointManifest> {
        let state = TrainerState {
            epoch: self.epoch,
            step: self.step,
            adam_steps: self
                .optimizers
                .all()
                .into_iter()
                .map(|(k, o)| (k.to_string(), o.steps))
                .collect(),
            rng_seed: self.config.train.seed,
            config: self.config.clone(),
        };
        let grid = self.net.grid;
        Ok(CheckpointManifest {
            n: grid.n,
            classes: self.set.len(),
            piece_px: grid.piece_px,
            seed: self.config.train.seed,
            epoch: self.epoch,
            step: self.step,
            trainer: Some(serde_json::to_value(state).map_err(|e| Error::Checkpoint(e.to_string()))?),
        })
    }

    /// Weights, buffers, optimiser moments (`adam.<param>.m` / `.v`) and position.
    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut tensors = checkpoint::export_net(&mut self.net);
        for (_, opt) in self.optimizers.all() {
            for (k, m) in &opt.moments {
                tensors.insert(format!("adam.{k}.m"), m.m.clone());
                tensors.insert(format!("adam.{k}.v"), m.v.clone());
            }
        }
        let manifest = self.manifest()?;
        checkpoint::save(path, &tensors, &manifest)
    }

    /// Rebuild a trainer from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(config: TrainConfig, set: PermutationSet, path: &Path) -> Result<Self> {
        let (tensors, manifest) = checkpoint::load(path)?;
        let mut trainer = Trainer::new(config, set)?;
        let grid = trainer.grid();
        if (manifest.n, manifest.classes, manifest.piece_px) != (grid.n, trainer.set.len(), grid.piece_px) {
            return Err(Error::Config(format!(
                "checkpoint is for n={} P={} piece_px={} but the config asks for n={} P={} piece_px={}",
                manifest.n,
                manifest.classes,
                manifest.piece_px,
                grid.n,
                trainer.set.len(),
                grid.piece_px
            )));
        }
        let state: TrainerState = manifest
            .trainer
            .clone()
            .ok_or_else(|| Error::Checkpoint(format!("{} holds no trainer state", path.display())))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Checkpoint(e.to_string())))?;
        checkpoint::import_net(&mut trainer.net, &tensors)?;
        restore_moments(&mut trainer.optimizers, &state, &tensors)?;
        trainer.epoch = state.epoch;
        trainer.step = state.step;
        Ok(trainer)
    }
}

fn restore_moments(opts: &mut Optimizers, state: &TrainerState, tensors: &TensorMap) -> Result<()> {
    for (name, opt) in opts.all() {
        opt.steps = state.adam_steps.get(name).copied().unwrap_or(0);
        opt.moments.clear();
        let prefix = format!("adam.{name}.");
        for (key, m) in tensors.range(prefix.clone()..) {
            if !key.starts_with(&prefix) {
                break;
            }
            if let Some(param) = key.strip_prefix("adam.").and_then(|k| k.strip_suffix(".m")) {
                let v = tensors
                    .get(&format!("adam.{param}.v"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {param}")))?;
                opt.moments.insert(
                    param.to_string(),
                    AdamMoments {
                        m: m.clone(),
                        v: v.clone(),
                    },
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_shuffled_sample, LoadedSplit};
    use crate::losses::LossWeights;
    use crate::synth::smooth_image;

    fn tiny_config(weights: LossWeights) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.puzzle.n = 2;
        c.puzzle.piece_px = 8;
        c.puzzle.classes = 4;
        c.train.batch_size = 2;
        c.train.epochs = 2;
        c.loss = weights;
        c
    }

    fn split(count: usize, side: usize, seed: u64) -> LoadedSplit {
        LoadedSplit {
            ids: (0..count).map(|k| format!("t/smooth/{seed}_{k}")).collect(),
            categories: vec!["t".into(); count],
            images: (0..count).map(|k| smooth_image(side, k % 2, seed + k as u64)).collect(),
        }
    }

    fn trainer(weights: LossWeights) -> Trainer {
        let c = tiny_config(weights);
        let set = PermutationSet::generate(2, 4, 0).unwrap();
        Trainer::new(c, set).unwrap()
    }

    fn batch(t: &Trainer, count: usize) -> (Vec<PieceBatch>, Vec<Tensor<f32>>) {
        let s = split(count, 16, 1);
        let pieces = (0..count)
            .map(|i| {
                make_shuffled_sample(&s.images[i], &s.ids[i], t.grid(), t.set(), i as u64)
                    .unwrap()
                    .pieces
            })
            .collect();
        (pieces, split(count, 16, 50).images)
    }

    fn snapshot<C: Component<f32>>(c: &mut C) -> Vec<Vec<f32>> {
        let mut out = Vec::new();
        c.visit_params(&mut |_, p| out.push(p.value.data().to_vec()));
        c.visit_buffers(&mut |_, b| out.push(b.data().to_vec()));
        out
    }

    #[test]
    fn reference_only_weights_leave_generator_and_discriminator_alone() {
        let mut t = trainer(LossWeights {
            w_jigsaw: 1.0,
            w_gan: 0.0,
            w_boundary: 0.0,
        });
        let (pieces, real) = batch(&t, 2);
        let g0 = snapshot(&mut t.net.generator);
        let d0 = snapshot(&mut t.net.discriminator);
        let e0 = snapshot(&mut t.net.encoder);
        for _ in 0..2 {
            t.train_step(&pieces, &[0, 1], &real).unwrap();
        }
        assert_eq!(snapshot(&mut t.net.generator), g0);
        assert_eq!(snapshot(&mut t.net.discriminator), d0);
        assert_ne!(snapshot(&mut t.net.encoder), e0);
    }

    #[test]
    fn full_step_updates_every_network_once() {
        let mut t = trainer(LossWeights::default());
        let (pieces, real) = batch(&t, 2);
        let g0 = snapshot(&mut t.net.generator);
        let d0 = snapshot(&mut t.net.discriminator);
        let r = t.train_step(&pieces, &[0, 1], &real).unwrap();
        assert!(r.jigsaw.is_finite() && r.gan_d > 0.0 && r.gan_g > 0.0 && r.boundary >= 0.0);
        assert_ne!(snapshot(&mut t.net.generator), g0);
        assert_ne!(snapshot(&mut t.net.discriminator), d0);
        for (_, o) in t.optimizers.all() {
            assert_eq!(o.steps, 1);
        }
        assert_eq!((r.step, t.step), (0, 1));
    }

    #[test]
    fn mismatched_batches_are_rejected() {
        let mut t = trainer(LossWeights::default());
        let (pieces, real) = batch(&t, 2);
        assert!(matches!(t.train_step(&pieces, &[0], &real), Err(Error::Shape(_))));
        assert!(matches!(t.train_step(&pieces, &[0, 1], &real[..1]), Err(Error::Shape(_))));
        assert!(t.train_step(&[], &[], &[]).is_err());
        assert_eq!(t.step, 0);
    }

    #[test]
    fn non_finite_loss_aborts_naming_the_component() {
        let mut t = trainer(LossWeights {
            w_jigsaw: 1.0,
            w_gan: 0.0,
            w_boundary: 0.0,
        });
        let (pieces, real) = batch(&t, 2);
        t.net.classifier.visit_params(&mut |_, p| p.value.data_mut()[0] = f32::NAN);
        match t.train_step(&pieces, &[0, 1], &real) {
            Err(Error::NonFinite { component, .. }) => assert_eq!(component, "L_jigsaw"),
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let jig = split(4, 16, 0);
        let real = split(4, 16, 100);
        let mut c = tiny_config(LossWeights::default());
        c.train.epochs = 3;
        c.train.checkpoint_every = 1;
        let set = PermutationSet::generate(2, 4, 0).unwrap();

        let mut full = Trainer::new(c.clone(), set.clone()).unwrap();
        let full_dir = dir.path().join("full");
        let report = full
            .fit(&jig, &real, &FitOptions { out_dir: Some(full_dir.clone()), ..Default::default() })
            .unwrap();
        assert_eq!(report.records.len(), 6);

        let part_dir = dir.path().join("part");
        let mut part = Trainer::new(c.clone(), set.clone()).unwrap();
        let opts = FitOptions {
            out_dir: Some(part_dir.clone()),
            stop_after_epoch: Some(2),
        };
        part.fit(&jig, &real, &opts).unwrap();
        let mut resumed = Trainer::resume(c, set, &part_dir.join("checkpoints/epoch_0002.safetensors")).unwrap();
        assert_eq!((resumed.epoch, resumed.step), (2, 4));
        resumed
            .fit(&jig, &real, &FitOptions { out_dir: Some(part_dir.clone()), ..Default::default() })
            .unwrap();

        let a = std::fs::read(full_dir.join("model.safetensors")).unwrap();
        let b = std::fs::read(part_dir.join("model.safetensors")).unwrap();
        assert!(a == b, "resumed checkpoint differs from the uninterrupted one");
        let log_a = std::fs::read_to_string(full_dir.join("loss_log.csv")).unwrap();
        let log_b = std::fs::read_to_string(part_dir.join("loss_log.csv")).unwrap();
        assert_eq!(log_a, log_b);
        assert!(log_a.starts_with("step,epoch,L_jigsaw,L_GAN_D,L_GAN_G,L_boundary,ref_agreement\n"));
        let steps: Vec<u64> = read_loss_log(&full_dir.join("loss_log.csv"))
            .unwrap()
            .iter()
            .map(|r| r.step)
            .collect();
        assert_eq!(steps, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn external_labels_must_cover_every_image() {
        let t = trainer(LossWeights::default());
        let (pieces, _) = batch(&t, 2);
        let mut map = HashMap::new();
        map.insert(pieces[0].source_id.clone(), 3);
        assert!(matches!(t.reference_classes(&pieces, Some(&map)), Err(Error::Data(_))));
        map.insert(pieces[1].source_id.clone(), 1);
        assert_eq!(t.reference_classes(&pieces, Some(&map)).unwrap(), vec![3, 1]);
    }
}
