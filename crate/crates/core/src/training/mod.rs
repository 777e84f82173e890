//! Optimization, training and evaluation loops, metrics and score fusion.

mod optim;
mod scores;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{BatchNormMode, Real, Tape, Tensor};
use crate::models::Model;
use crate::rng::{hash_words, Rng};
use crate::skeleton::{
    generate_synthetic, CoordType, DatasetContainer, SkeletonSequence, SynthSpec,
};
use crate::transforms::{
    eval_pipeline, normalize_2d, pre_normalize_3d, train_pipeline, PreNormOptions, Stream,
    TransformConfig,
};
use crate::{Error, Result};

pub use optim::{cosine_lr, sgd_nesterov_step, OptimState};
pub use scores::{
    compute_metrics, default_fusion_weights, fuse_scores, Metrics, ScoreTable, SCORES_MAGIC,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub seed: u64,
    pub stream: Stream,
    pub train_split: String,
    pub test_split: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            batch_size: 128,
            epochs: 80,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            seed: 0,
            stream: Stream::Joint,
            train_split: "train".into(),
            test_split: "test".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate, momentum and weight decay must be non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Desk-scale setup on the synthetic motion set.
#[derive(Debug, Clone)]
pub struct DeskRecipe {
    pub data: DatasetContainer,
    pub transform: TransformConfig,
    pub train: TrainConfig,
}

pub const DESK_SEED: u64 = 7;
pub const DESK_PER_CLASS: usize = 50;

/// 200 normalized synthetic samples on `layout` (seed 7), 32-frame clips and
/// 20 epochs of batch 16 at the default learning rate.
pub fn desk_recipe(layout: &str) -> Result<DeskRecipe> {
    let spec = SynthSpec::default_for(layout)?;
    let mut data = generate_synthetic(&spec, DESK_PER_CLASS, DESK_SEED)?;
    for s in data.samples.iter_mut() {
        *s = match s.coord_type {
            CoordType::ThreeD => pre_normalize_3d(s, PreNormOptions::default())?,
            CoordType::TwoD => normalize_2d(s)?,
        };
    }
    let transform = TransformConfig {
        clip_len: 32,
        ..Default::default()
    };
    let train = TrainConfig {
        epochs: 20,
        batch_size: 16,
        seed: DESK_SEED,
        ..Default::default()
    };
    Ok(DeskRecipe {
        data,
        transform,
        train,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub top1: f64,
}

/// Stacks equal-length sequences into `[N, M, C, T, V]`. Extra persons are
/// dropped and missing ones zero-filled.
pub fn batch_tensor<F: Real>(seqs: &[SkeletonSequence], persons: usize) -> Result<Tensor<F>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let (t, v, c) = (first.shape.frames, first.shape.joints, first.shape.channels);
    let mut data = vec![F::zero(); seqs.len() * persons * c * t * v];
    for (n, s) in seqs.iter().enumerate() {
        if (s.shape.frames, s.shape.joints, s.shape.channels) != (t, v, c) {
            return Err(Error::Shape(format!(
                "batch mixes shapes {:?} and {:?}",
                first.shape, s.shape
            )));
        }
        for m in 0..persons.min(s.shape.persons) {
            for ti in 0..t {
                for vi in 0..v {
                    let j = s.joint(m, ti, vi);
                    for (ci, &x) in j.iter().enumerate() {
                        data[(((n * persons + m) * c + ci) * t + ti) * v + vi] = F::of(x as f64);
                    }
                }
            }
        }
    }
    Tensor::new(&[seqs.len(), persons, c, t, v], data)
}

const SHUFFLE_TAG: u64 = 0x5348_5546;

/// Epoch order of `indices`, keyed by `hash(seed, epoch)`.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    Rng::new(hash_words(&[seed, epoch as u64, SHUFFLE_TAG])).shuffle(&mut order);
    order
}

/// Runs `cfg.epochs` epochs of SGD on the train split. Each sample's
/// augmentation stream is derived from `(seed, sample index, epoch)`, so
/// results do not depend on the number of worker threads.
pub fn train<F: Real>(
    model: &mut Model<F>,
    data: &DatasetContainer,
    transform: &TransformConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let indices = data.split(&cfg.train_split)?;
    if indices.is_empty() {
        return Err(Error::Data(format!("split {:?} is empty", cfg.train_split)));
    }
    if data.num_classes != model.spec.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, model {}",
            data.num_classes, model.spec.num_classes
        )));
    }
    let mut state = OptimState::new(&model.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let order = epoch_order(indices, cfg.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let seqs = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = Rng::derive(cfg.seed, i as u64, epoch as u64);
                    train_pipeline(&data.samples[i], transform, cfg.stream, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
            let x = batch_tensor::<F>(&seqs, model.spec.persons)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = model.forward(&mut tape, xv, BatchNormMode::Train)?;
            let (loss, probs) = tape.softmax_cross_entropy(logits, &labels)?;
            loss_sum += tape.value(loss).item().as_f64() * batch.len() as f64;
            let k = model.spec.num_classes;
            for (row, &l) in probs.data().chunks_exact(k).zip(&labels) {
                if argmax(row) == l {
                    correct += 1;
                }
            }
            let grads = tape.backward(loss)?;
            model.params.zero_grads();
            tape.accumulate_param_grads(&grads, &mut model.params);
            sgd_nesterov_step(&mut model.params, &mut state, lr, cfg);
        }
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / order.len() as f64,
            top1: correct as f64 / order.len() as f64,
        };
        log::info!(
            "epoch {} lr {:.5} loss {:.4} top1 {:.3}",
            log.epoch,
            log.lr,
            log.loss,
            log.top1
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &s) in row.iter().enumerate() {
        if s > row[best] {
            best = j;
        }
    }
    best
}

/// Scores every sample of `split` with deterministic center sampling.
/// Scores are softmax probabilities rounded to single precision.
pub fn evaluate<F: Real>(
    model: &mut Model<F>,
    data: &DatasetContainer,
    split: &str,
    transform: &TransformConfig,
    stream: Stream,
    batch_size: usize,
) -> Result<(Metrics, ScoreTable)> {
    let indices = data.split(split)?;
    if indices.is_empty() {
        return Err(Error::Data(format!("split {split:?} is empty")));
    }
    let k = model.spec.num_classes;
    let mut labels = Vec::with_capacity(indices.len());
    let mut scores = Vec::with_capacity(indices.len() * k);
    for batch in indices.chunks(batch_size.max(1)) {
        let seqs = batch
            .par_iter()
            .map(|&i| eval_pipeline(&data.samples[i], transform, stream))
            .collect::<Result<Vec<_>>>()?;
        let x = batch_tensor::<F>(&seqs, model.spec.persons)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = model.forward(&mut tape, xv, BatchNormMode::Eval)?;
        let batch_labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
        let (_, probs) = tape.softmax_cross_entropy(logits, &batch_labels)?;
        scores.extend(probs.data().iter().map(|p| p.as_f64()));
        labels.extend(batch_labels);
    }
    let table = ScoreTable::new(k, labels, scores)?.quantized();
    Ok((table.metrics(), table))
}

/// Writes logs as line-delimited JSON.
pub fn write_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for l in logs {
        writeln!(
            f,
            "{}",
            serde_json::to_string(l).map_err(|e| Error::Format(e.to_string()))?
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec, Variant};
    use crate::skeleton::{generate_synthetic, SynthSpec};

    fn small_data() -> DatasetContainer {
        let mut spec = SynthSpec::default_for("coco17").unwrap();
        spec.frames = 16;
        generate_synthetic(&spec, 5, 7).unwrap()
    }

    fn transform() -> TransformConfig {
        TransformConfig {
            clip_len: 8,
            ..TransformConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let data = small_data();
        let spec = ModelSpec::tiny(Variant::Stgcnpp, "coco17", 2, 1, 4);
        let mut model = build_model::<f32>(&spec, 1).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig {
            base_lr: 0.0,
            epochs: 1,
            batch_size: 64,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &transform(), &cfg, |_| {}).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
            if a.trainable {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
    }

    #[test]
    fn empty_split_is_data_error() {
        let mut data = small_data();
        data.splits.insert("train".into(), vec![]);
        let spec = ModelSpec::tiny(Variant::Stgcn, "coco17", 2, 1, 4);
        let mut model = build_model::<f32>(&spec, 1).unwrap();
        let r = train(
            &mut model,
            &data,
            &transform(),
            &TrainConfig::default(),
            |_| {},
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn batch_tensor_layout_and_person_padding() {
        let data = small_data();
        let s = &data.samples[0];
        let x = batch_tensor::<f64>(std::slice::from_ref(s), 2).unwrap();
        let (t, v) = (s.shape.frames, s.shape.joints);
        assert_eq!(x.shape(), &[1, 2, 2, t, v]);
        // [n, m, c, t, v] = [0, 0, 1, 3, 5]
        assert_eq!(x.data()[(t + 3) * v + 5], s.joint(0, 3, 5)[1] as f64);
        assert!(x.data()[2 * t * v..].iter().all(|&z| z == 0.0));
    }

    #[test]
    fn shuffle_depends_on_epoch() {
        let idx: Vec<usize> = (0..50).collect();
        assert_eq!(epoch_order(&idx, 3, 1), epoch_order(&idx, 3, 1));
        assert_ne!(epoch_order(&idx, 3, 1), epoch_order(&idx, 3, 2));
    }
}
