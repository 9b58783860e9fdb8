//! Metric evaluation of trained models on a dataset split.

use std::path::Path;
use std::str::FromStr;

use symgnn_autodiff::{Checkpoint, ParamStore, Tensor};

use crate::data::{observe_prefix, Dataset, MotionSample, Repr};
use crate::error::{ensure, Error, Result};
use crate::metrics::{mae, pck, pck_normalizer, pred_l1, topk, zerov_baseline, MetricReport};
use crate::model::SymGnn;
use crate::training::{bone_dataset, fuse_dual_logits, infer, load_model, softmax_rows, CheckpointMeta, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Top1,
    Top5,
    Pck,
    Mae,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "top1" => Ok(Metric::Top1),
            "top5" => Ok(Metric::Top5),
            "pck" => Ok(Metric::Pck),
            "mae" => Ok(Metric::Mae),
            other => Err(Error::invalid(format!("unknown metric `{other}` (top1, top5, pck, mae)"))),
        }
    }
}

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    /// Fraction of each observed clip shown to the recognition head.
    pub observe_ratio: f64,
    pub split: String,
    pub chunk: usize,
    pub pck_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Top1, Metric::Top5, Metric::Pck],
            observe_ratio: 1.0,
            split: "test".into(),
            chunk: 32,
            pck_threshold: 0.05,
        }
    }
}

/// A model with its weights, ready for inference.
pub struct Loaded {
    pub meta: CheckpointMeta,
    pub model: SymGnn,
    pub store: ParamStore<f32>,
}

impl Loaded {
    pub fn from_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path.as_ref())
            .map_err(|e| Error::invalid(format!("{}: {e}", path.as_ref().display())))?;
        let (meta, model, store) = load_model::<f32>(&ck)?;
        Ok(Self { meta, model, store })
    }

    pub fn from_trainer(t: &Trainer, meta: &CheckpointMeta) -> Self {
        Self { meta: meta.clone(), model: t.model.clone(), store: t.store.clone() }
    }
}

fn stack(samples: &[&MotionSample], f: impl Fn(&MotionSample) -> Result<Tensor<f64>>) -> Result<Tensor<f64>> {
    let clips: Vec<Tensor<f64>> = samples.iter().map(|s| f(s)).collect::<Result<_>>()?;
    let mut shape = vec![clips.len()];
    shape.extend_from_slice(clips[0].shape());
    let mut data = Vec::with_capacity(shape.iter().product());
    for c in &clips {
        ensure!(c.shape() == clips[0].shape(), "clips of different shapes in one split");
        data.extend_from_slice(c.data());
    }
    Ok(Tensor::new(&shape, data)?)
}

fn check_compat(meta: &CheckpointMeta, ds: &Dataset) -> Result<()> {
    ensure!(
        meta.skeleton == ds.skeleton,
        "dataset skeleton does not match the checkpoint skeleton"
    );
    ensure!(
        meta.classes.len() == ds.num_classes(),
        "checkpoint has {} classes, dataset {}",
        meta.classes.len(),
        ds.num_classes()
    );
    Ok(())
}

/// Evaluates `joint` (fused with `bone` when given) on `opts.split` of `ds`.
pub fn evaluate(joint: &Loaded, bone: Option<&Loaded>, ds: &Dataset, opts: &EvalOptions) -> Result<MetricReport> {
    check_compat(&joint.meta, ds)?;
    ensure!(opts.observe_ratio > 0.0 && opts.observe_ratio <= 1.0, "observe ratio must be in (0, 1]");
    let samples = ds.split(&opts.split);
    ensure!(!samples.is_empty(), "split `{}` is empty", opts.split);
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let wants = |m| opts.metrics.contains(&m);
    let mut report = MetricReport::default();

    let observed: Vec<Tensor<f64>> =
        samples.iter().map(|s| observe_prefix(&s.prev, opts.observe_ratio)).collect::<Result<_>>()?;
    let observed_refs: Vec<&Tensor<f64>> = observed.iter().collect();
    let (logits, _) = infer(&joint.model, &joint.store, &observed_refs, 0, opts.chunk, None)?;
    let posterior = match bone {
        Some(b) => {
            let bds = bone_dataset(ds)?;
            check_compat(&b.meta, &bds)?;
            let bsamples = bds.split(&opts.split);
            let bobs: Vec<Tensor<f64>> =
                bsamples.iter().map(|s| observe_prefix(&s.prev, opts.observe_ratio)).collect::<Result<_>>()?;
            let brefs: Vec<&Tensor<f64>> = bobs.iter().collect();
            let (blogits, _) = infer(&b.model, &b.store, &brefs, 0, opts.chunk, None)?;
            fuse_dual_logits(&logits, &blogits, &joint.meta.fusion)?
        }
        None => softmax_rows(&logits),
    };
    if wants(Metric::Top1) {
        report.top1 = Some(topk(&posterior, &labels, 1)?);
    }
    if wants(Metric::Top5) && ds.num_classes() >= 5 {
        report.top5 = Some(topk(&posterior, &labels, 5)?);
    }

    let horizon = samples[0].pred.shape()[0];
    if horizon > 0 {
        let prev: Vec<&Tensor<f64>> = samples.iter().map(|s| &s.prev).collect();
        let (_, pred) = infer(&joint.model, &joint.store, &prev, horizon, opts.chunk, None)?;
        let pred = pred.expect("positive horizon");
        let target = stack(&samples, |s| Ok(s.pred.clone()))?;
        let zerov = stack(&samples, |s| zerov_baseline(&s.prev, horizon))?;
        report.pred_l1 = Some(pred_l1(&pred, &target)?);
        report.zerov_l1 = Some(pred_l1(&zerov, &target)?);
        if wants(Metric::Pck) {
            report.pck_005 = Some(pck(&pred, &target, opts.pck_threshold, &pck_normalizer(&target)?)?);
        }
        if wants(Metric::Mae) {
            let repr = samples[0].repr;
            ensure!(samples.iter().all(|s| s.repr == repr), "mixed representations in one split");
            ensure!(repr == Repr::Expmap, "MAE needs expmap data, the split is tagged xyz");
            report.mae = Some(mae(&pred, &target, repr)?);
        }
    }
    Ok(report)
}
