//! The full network: backbone plus both task heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use symgnn_autodiff::{ParamId, ParamStore, Real, Tensor, Var};

use crate::backbone::{Backbone, BackboneConfig, Graphs};
use crate::error::{ensure, Result};
use crate::graph::difference;
use crate::heads::{PredictionHead, RecognitionHead, RolloutStart};
use crate::nn::Ctx;
use crate::skeleton::SkeletonSpec;

/// Everything needed to rebuild a model bit-for-bit, given the skeleton and
/// the class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Width of the fused features and of the GRU state.
    pub hidden: usize,
    pub dropout: f64,
    /// Feed ground-truth one-hot labels to the rollout during training.
    pub teacher_forcing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { seed: 0, backbone: BackboneConfig::default(), hidden: 256, dropout: 0.5, teacher_forcing: false }
    }
}

#[derive(Clone, Debug)]
pub struct SymGnn {
    pub config: ModelConfig,
    pub skeleton: SkeletonSpec,
    pub classes: usize,
    pub coords: usize,
    pub graphs: Graphs,
    pub backbone: Backbone,
    pub recg: RecognitionHead,
    pub pred: PredictionHead,
}

pub struct Output<'t, T: Real> {
    pub logits: Var<'t, T>,
    pub probs: Var<'t, T>,
    /// `[N, horizon, M, D]`, absent for a zero horizon.
    pub pred: Option<Var<'t, T>>,
    pub a_act: Var<'t, T>,
}

impl SymGnn {
    pub fn new<T: Real>(
        config: &ModelConfig,
        skeleton: &SkeletonSpec,
        classes: usize,
        coords: usize,
    ) -> Result<(Self, ParamStore<T>)> {
        ensure!((0.0..1.0).contains(&config.dropout), "dropout must be in [0, 1), got {}", config.dropout);
        ensure!(config.hidden >= 1, "hidden width must be positive");
        ensure!(coords >= 1, "coordinate width must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let graphs = Graphs::build(skeleton, config.backbone.gamma)?;
        let backbone = Backbone::new(&mut store, &config.backbone, skeleton, &graphs, coords, &mut rng)?;
        ensure!(
            config.backbone.profile.output_channels() == config.hidden,
            "hidden width {} must equal the backbone output width {}",
            config.hidden,
            config.backbone.profile.output_channels()
        );
        let fused = config.hidden * config.backbone.branches.len();
        let recg = RecognitionHead::new(&mut store, fused, config.hidden, classes, &mut rng)?;
        let pred = PredictionHead::new(
            &mut store,
            fused,
            config.hidden,
            classes,
            coords,
            &graphs.supports,
            config.backbone.lambda_act,
            &mut rng,
        )?;
        let model = Self {
            config: config.clone(),
            skeleton: skeleton.clone(),
            classes,
            coords,
            graphs,
            backbone,
            recg,
            pred,
        };
        Ok((model, store))
    }

    /// Parameters shared by both tasks: actional inference and every branch.
    pub fn backbone_params<T: Real>(&self, store: &ParamStore<T>) -> Vec<ParamId> {
        store
            .trainable_ids()
            .into_iter()
            .filter(|&id| {
                let name = &store.get(id).name;
                name.starts_with("agim.") || name.starts_with("branch")
            })
            .collect()
    }

    /// Forward pass on observed clips `[N, T, M, D]`. `teacher` replaces the
    /// posterior fed to the rollout with one-hot labels.
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        prev: &Tensor<T>,
        horizon: usize,
        teacher: Option<&[usize]>,
    ) -> Result<Output<'t, T>> {
        let s = prev.shape();
        ensure!(
            s.len() == 4 && s[2] == self.skeleton.num_joints() && s[3] == self.coords,
            "expected clips [N, T, {}, {}], got {s:?}",
            self.skeleton.num_joints(),
            self.coords
        );
        let (n, m, d) = (s[0], s[2], s[3]);
        let x = ctx.constant(prev.clone());
        let bb = self.backbone.forward(ctx, x)?;
        let logits = self.recg.logits(ctx, &bb.h)?;
        let probs = logits.softmax()?;
        let pred = if horizon == 0 {
            None
        } else {
            let y = match teacher {
                Some(labels) => {
                    ensure!(labels.len() == n, "{} teacher labels for {n} samples", labels.len());
                    let mut onehot = Tensor::zeros(&[n, self.classes]);
                    for (i, &l) in labels.iter().enumerate() {
                        ensure!(l < self.classes, "label {l} out of range");
                        onehot.set(&[i, l], T::one());
                    }
                    ctx.constant(onehot)
                }
                None => probs,
            };
            let last = |t: &Tensor<T>| -> Result<Var<'t, T>> {
                Ok(ctx.constant(t.clone()).gather(1, &[t.shape()[1] - 1])?.reshape(&[n, m, d])?)
            };
            let pad = self.config.backbone.padding;
            let start = RolloutStart {
                x_last: last(prev)?,
                d1: last(&difference(prev, 1, 1, pad)?)?,
                d2: last(&difference(prev, 1, 2, pad)?)?,
            };
            Some(self.pred.rollout(ctx, &bb.h, bb.a_act, start, y, horizon)?)
        };
        Ok(Output { logits, probs, pred, a_act: bb.a_act })
    }
}
