//! Losses, the two-task min-norm weighting and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use symgnn_autodiff::{Adam, Checkpoint, Mode, ParamGrads, ParamStore, Real, Tape, Tensor, Var};

use crate::data::{Batch, Dataset, MotionSample};
use crate::error::{ensure, Error, Result};
use crate::model::{ModelConfig, SymGnn};
use crate::nn::{apply_bn_updates, Ctx};
use crate::skeleton::{bone_features, build_bone_dual, SkeletonSpec};

pub const LOG_CLAMP: f64 = 1e-12;

/// `−(1/N) Σ_n log softmax(logits_n)[y_n]`, probabilities clamped at 1e-12.
pub fn loss_recognition<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let s = logits.shape();
    ensure!(s.len() == 2 && s[0] == labels.len(), "logits {s:?} for {} labels", labels.len());
    let (n, c) = (s[0], s[1]);
    let mut onehot = Tensor::zeros(&[n, c]);
    for (i, &l) in labels.iter().enumerate() {
        ensure!(l < c, "label {l} out of range for {c} classes");
        onehot.set(&[i, l], T::one());
    }
    let logp = logits.softmax()?.ln_floor(T::from_f64_lossy(LOG_CLAMP))?;
    let picked = logp.mul(logits.tape().constant(onehot))?.sum_all()?;
    Ok(picked.scale(T::from_f64_lossy(-1.0 / n as f64))?)
}

/// `(1/N) Σ_n ‖target_n − pred_n‖₁`.
pub fn loss_prediction<'t, T: Real>(pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let s = pred.shape();
    ensure!(s == target.shape(), "prediction {s:?} and target {:?} differ", target.shape());
    let n = s[0] as f64;
    let diff = pred.sub(pred.tape().constant(target.clone()))?;
    Ok(diff.abs()?.sum_all()?.scale(T::from_f64_lossy(1.0 / n))?)
}

/// `argmin_{λ∈[0,1]} ‖λ g_r + (1 − λ) g_p‖²`; 0.5 when the gradients agree.
pub fn mgda_lambda(g_recg: &[f64], g_pred: &[f64]) -> Result<f64> {
    ensure!(g_recg.len() == g_pred.len(), "gradient lengths {} and {} differ", g_recg.len(), g_pred.len());
    ensure!(
        g_recg.iter().chain(g_pred).all(|v| v.is_finite()),
        "non-finite gradient entries"
    );
    let mut num = 0.0;
    let mut den = 0.0;
    for (&r, &p) in g_recg.iter().zip(g_pred) {
        num += (p - r) * p;
        den += (r - p) * (r - p);
    }
    if den == 0.0 {
        return Ok(0.5);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Weights of the pre-softmax joint/bone logit fusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualFusion {
    pub w_joint: f64,
    pub w_bone: f64,
}

impl Default for DualFusion {
    fn default() -> Self {
        Self { w_joint: 0.5, w_bone: 0.5 }
    }
}

impl DualFusion {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.w_joint >= 0.0 && self.w_bone >= 0.0, "fusion weights must be non-negative");
        ensure!((self.w_joint + self.w_bone - 1.0).abs() <= 1e-9, "fusion weights must sum to 1");
        Ok(())
    }
}

/// `softmax(w_j · logits_joint + w_b · logits_bone)` per row of `[N, C]`.
pub fn fuse_dual_logits(joint: &Tensor<f64>, bone: &Tensor<f64>, fusion: &DualFusion) -> Result<Tensor<f64>> {
    fusion.validate()?;
    ensure!(joint.shape() == bone.shape(), "logit shapes {:?} and {:?} differ", joint.shape(), bone.shape());
    let z = joint.zip_map(bone, |a, b| fusion.w_joint * a + fusion.w_bone * b)?;
    Ok(softmax_rows(&z))
}

pub fn softmax_rows(z: &Tensor<f64>) -> Tensor<f64> {
    let c = *z.shape().last().expect("non-empty");
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_recg: f64,
    pub l_pred: f64,
    pub lambda_star: f64,
    pub l_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: Option<StepDecay>,
    /// Replaces the per-step min-norm weight.
    pub lambda_fixed: Option<f64>,
    pub label_noise: f64,
    pub target_noise: f64,
    pub dual_bone: bool,
    pub fusion: DualFusion,
    /// Stop after this many seconds of training, keeping the epochs done.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 200,
            batch_size: 16,
            lr: 1e-4,
            lr_decay: None,
            lambda_fixed: None,
            label_noise: 0.0,
            target_noise: 0.0,
            dual_bone: false,
            fusion: DualFusion::default(),
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be positive");
        ensure!(self.batch_size >= 1, "batch_size must be positive");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        if let Some(l) = self.lambda_fixed {
            ensure!((0.0..=1.0).contains(&l), "lambda_fixed must be in [0, 1], got {l}");
        }
        if let Some(d) = self.lr_decay {
            ensure!(d.every_epochs >= 1 && d.factor > 0.0, "invalid lr_decay");
        }
        self.fusion.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr / d.factor.powi((epoch / d.every_epochs) as i32),
            None => self.lr,
        }
    }
}

/// One model with its weights and optimiser state.
pub struct Trainer {
    pub model: SymGnn,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
    backbone: Vec<symgnn_autodiff::ParamId>,
}

impl Trainer {
    pub fn new(config: &ModelConfig, skeleton: &SkeletonSpec, classes: usize, coords: usize, lr: f64) -> Result<Self> {
        let (model, store) = SymGnn::new::<f32>(config, skeleton, classes, coords)?;
        let backbone = model.backbone_params(&store);
        Ok(Self { model, store, adam: Adam::new(lr as f32), step: 0, backbone })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr as f32;
    }

    pub fn train_step(&mut self, batch: &Batch<f32>, lambda_fixed: Option<f64>) -> Result<LossReport> {
        let horizon = batch.pred.shape()[1];
        let seed = self.model.config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.step;
        let (report, grads, updates) = {
            let tape = Tape::with_seed(Mode::Train, seed);
            let ctx = Ctx::new(&tape, &self.store, self.model.config.dropout);
            let teacher = self.model.config.teacher_forcing.then_some(batch.labels.as_slice());
            let out = self.model.forward(&ctx, &batch.prev, horizon, teacher)?;
            let l_r = loss_recognition(out.logits, &batch.labels)?;
            let l_p = loss_prediction(out.pred.expect("positive horizon"), &batch.pred)?;
            let (lr_v, lp_v) = (l_r.item().to_f64_lossy(), l_p.item().to_f64_lossy());
            let (lambda, grads) = match lambda_fixed {
                Some(l) => {
                    let total = l_r.scale(l as f32)?.add(l_p.scale((1.0 - l) as f32)?)?;
                    (l, tape.backward(total)?.for_params(&self.store))
                }
                None => {
                    let g_r = tape.backward(l_r)?.for_params(&self.store);
                    let g_p = tape.backward(l_p)?.for_params(&self.store);
                    let flat = |g: &ParamGrads<f32>| -> Vec<f64> {
                        g.flatten(&self.backbone).into_iter().map(f64::from).collect()
                    };
                    let l = mgda_lambda(&flat(&g_r), &flat(&g_p))?;
                    (l, g_r.combine(l as f32, &g_p, (1.0 - l) as f32))
                }
            };
            let report = LossReport {
                l_recg: lr_v,
                l_pred: lp_v,
                lambda_star: lambda,
                l_total: lambda * lr_v + (1.0 - lambda) * lp_v,
            };
            (report, grads, ctx.into_updates())
        };
        ensure!(grads.all_finite(), "non-finite gradients at step {}", self.step);
        self.adam.step(&mut self.store, &grads)?;
        apply_bn_updates(&mut self.store, &updates);
        self.step += 1;
        Ok(report)
    }

    /// Evaluation-mode logits `[N, C]` and, for a positive horizon,
    /// predictions `[N, horizon, M, D]`, processed in chunks.
    pub fn infer(&self, prev: &[&Tensor<f64>], horizon: usize, chunk: usize) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
        infer(&self.model, &self.store, prev, horizon, chunk, None)
    }

    pub fn checkpoint(&self, meta: &CheckpointMeta) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(serde_json::to_string(meta)?, &self.store))
    }
}

/// Evaluation-mode forward over many clips of equal length.
pub fn infer<T: Real>(
    model: &SymGnn,
    store: &ParamStore<T>,
    prev: &[&Tensor<f64>],
    horizon: usize,
    chunk: usize,
    teacher: Option<&[usize]>,
) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
    ensure!(!prev.is_empty(), "no clips to evaluate");
    let mut logits = Vec::new();
    let mut preds = Vec::new();
    for (ci, part) in prev.chunks(chunk.max(1)).enumerate() {
        let mut data = Vec::new();
        for c in part {
            ensure!(c.shape() == prev[0].shape(), "clips of different shapes in one evaluation");
            data.extend(c.data().iter().map(|&v| T::from_f64_lossy(v)));
        }
        let mut shape = vec![part.len()];
        shape.extend_from_slice(prev[0].shape());
        let x = Tensor::new(&shape, data)?;
        let tape = Tape::new(Mode::Eval);
        let ctx = Ctx::new(&tape, store, 0.0);
        let labels = teacher.map(|t| &t[ci * chunk.max(1)..ci * chunk.max(1) + part.len()]);
        let out = model.forward(&ctx, &x, horizon, labels)?;
        logits.extend(out.logits.value().to_f64_vec());
        if let Some(p) = out.pred {
            preds.extend(p.value().to_f64_vec());
        }
    }
    let n = prev.len();
    let logits = Tensor::new(&[n, model.classes], logits)?;
    let pred = if horizon > 0 {
        let s = prev[0].shape();
        Some(Tensor::new(&[n, horizon, s[1], s[2]], preds)?)
    } else {
        None
    };
    Ok((logits, pred))
}

/// Metadata stored alongside the weights of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub skeleton: SkeletonSpec,
    pub classes: Vec<String>,
    pub coords: usize,
    pub horizon: usize,
    /// Set on the bone-dual model of a pair.
    pub bone_dual: bool,
    pub fusion: DualFusion,
    /// Dataset directory the model was trained on, when known.
    #[serde(default)]
    pub data_dir: Option<String>,
}

/// Rebuilds a model from a checkpoint written by [`Trainer::checkpoint`].
pub fn load_model<T: Real>(ck: &Checkpoint) -> Result<(CheckpointMeta, SymGnn, ParamStore<T>)> {
    let meta: CheckpointMeta = serde_json::from_str(&ck.config)?;
    let (model, mut store) = SymGnn::new::<T>(&meta.model, &meta.skeleton, meta.classes.len(), meta.coords)?;
    ck.restore_into(&mut store)?;
    Ok((meta, model, store))
}

/// Bone-vector version of a sample on the dual skeleton.
pub fn bone_sample(s: &MotionSample, skeleton: &SkeletonSpec) -> Result<MotionSample> {
    Ok(MotionSample {
        label: s.label,
        prev: bone_features(&s.prev, skeleton)?,
        pred: bone_features(&s.pred, skeleton)?,
        repr: s.repr,
        split: s.split.clone(),
    })
}

/// Bone-vector version of a whole dataset.
pub fn bone_dataset(ds: &Dataset) -> Result<Dataset> {
    let dual = build_bone_dual(&ds.skeleton)?;
    let mut out = Dataset::new(dual, ds.classes.clone());
    for s in &ds.samples {
        out.samples.push(bone_sample(s, &ds.skeleton)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LogLine {
    pub step: u64,
    pub epoch: usize,
    #[serde(rename = "L_recg")]
    pub l_recg: f64,
    #[serde(rename = "L_pred")]
    pub l_pred: f64,
    pub lambda_star: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<&'static str>,
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub l_recg: f64,
    pub l_pred: f64,
    pub lambda_star: f64,
    pub secs: f64,
}

/// Result of [`train`].
pub struct Trained {
    pub joint: Trainer,
    pub bone: Option<Trainer>,
    pub epochs: Vec<EpochSummary>,
    pub meta: CheckpointMeta,
    pub bone_meta: Option<CheckpointMeta>,
    /// The time budget ran out before the configured epoch count.
    pub truncated: bool,
}

/// Trains on the `train` split of `ds`. Each step appends a line to `log`.
pub fn train(ds: &Dataset, config: &TrainConfig, log: &mut dyn Write) -> Result<Trained> {
    config.validate()?;
    let mut ds = ds.clone();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.model.seed ^ 0x6e_6f69_7365);
    if config.label_noise > 0.0 {
        ds.shuffle_labels("train", config.label_noise, &mut noise_rng)?;
    }
    if config.target_noise > 0.0 {
        ds.shuffle_targets("train", config.target_noise, &mut noise_rng)?;
    }
    let train_set: Vec<&MotionSample> = ds.split("train");
    ensure!(!train_set.is_empty(), "dataset has no training samples");
    let coords = train_set[0].prev.shape()[2];
    let horizon = train_set[0].pred.shape()[0];
    let meta = CheckpointMeta {
        model: config.model.clone(),
        skeleton: ds.skeleton.clone(),
        classes: ds.classes.clone(),
        coords,
        horizon,
        bone_dual: false,
        fusion: config.fusion,
        data_dir: None,
    };
    let mut joint = Trainer::new(&config.model, &ds.skeleton, ds.num_classes(), coords, config.lr)?;
    let (mut bone, bone_set, bone_meta) = if config.dual_bone {
        let bds = bone_dataset(&ds)?;
        let t = Trainer::new(&config.model, &bds.skeleton, bds.num_classes(), coords, config.lr)?;
        let meta = CheckpointMeta { skeleton: bds.skeleton.clone(), bone_dual: true, ..meta.clone() };
        let set: Vec<MotionSample> = bds.samples.into_iter().filter(|s| s.split == "train").collect();
        (Some(t), set, Some(meta))
    } else {
        (None, Vec::new(), None)
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.model.seed ^ 0x5348_5546);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start = std::time::Instant::now();
    let mut epochs = Vec::new();
    let mut truncated = false;
    for epoch in 0..config.epochs {
        if let Some(budget) = config.time_budget_secs {
            if start.elapsed().as_secs_f64() >= budget {
                truncated = true;
                break;
            }
        }
        let lr = config.lr_at(epoch);
        joint.set_lr(lr);
        if let Some(b) = bone.as_mut() {
            b.set_lr(lr);
        }
        order.shuffle(&mut order_rng);
        let epoch_start = std::time::Instant::now();
        let (mut sr, mut sp, mut sl, mut count) = (0.0, 0.0, 0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let samples: Vec<&MotionSample> = idx.iter().map(|&i| train_set[i]).collect();
            let batch = Batch::<f32>::from_samples(&samples)?;
            let r = joint.train_step(&batch, config.lambda_fixed)?;
            write_log(log, joint.step, epoch, &r, lr, bone.as_ref().map(|_| "joint"))?;
            let w = batch.len() as f64;
            sr += r.l_recg * w;
            sp += r.l_pred * w;
            sl += r.lambda_star * w;
            count += w;
            if let Some(b) = bone.as_mut() {
                let samples: Vec<&MotionSample> = idx.iter().map(|&i| &bone_set[i]).collect();
                let batch = Batch::<f32>::from_samples(&samples)?;
                let r = b.train_step(&batch, config.lambda_fixed)?;
                write_log(log, b.step, epoch, &r, lr, Some("bone"))?;
            }
        }
        epochs.push(EpochSummary {
            epoch,
            l_recg: sr / count,
            l_pred: sp / count,
            lambda_star: sl / count,
            secs: epoch_start.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained { joint, bone, epochs, meta, bone_meta, truncated })
}

fn write_log(log: &mut dyn Write, step: u64, epoch: usize, r: &LossReport, lr: f64, model: Option<&'static str>) -> Result<()> {
    let line = LogLine { step, epoch, l_recg: r.l_recg, l_pred: r.l_pred, lambda_star: r.lambda_star, lr, model };
    serde_json::to_writer(&mut *log, &line)?;
    log.write_all(b"\n").map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mgda_examples() {
        assert_eq!(mgda_lambda(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert!((mgda_lambda(&[2.0, 0.0], &[0.0, 1.0]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mgda_lambda(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert!(mgda_lambda(&[f64::NAN], &[0.0]).is_err());
    }
}
