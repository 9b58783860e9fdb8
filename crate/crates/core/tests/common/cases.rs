//! Fixed small instances compared against the loop references.

use rand::Rng;
use symgnn_core::agim::{Agim, AgimConfig};
use symgnn_core::autodiff::{Mode, ParamStore, Tape, Tensor};
use symgnn_core::backbone::{Branch, Graphs};
use symgnn_core::graph::{BlockShape, GtcBlock};
use symgnn_core::heads::{PredictionHead, RolloutStart};
use symgnn_core::nn::Ctx;
use symgnn_core::SkeletonSpec;

use super::*;

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// AGIM with 3 joints and one message-passing round; returns the worst
/// relative error over the flattened input, `p^K` and `A_act`.
pub fn agim_small(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let cfg = AgimConfig { t_agim: 4, k: 1, hidden: 6, d_v: 5, d_e: 4, d_emb: 3 };
    let agim = Agim::new(&mut store, "agim", &cfg, 3, 3, &mut r).unwrap();
    scramble(&mut store, seed + 1);
    let n = 2;
    let x = random(&[n, 6, 3, 3], &mut r);

    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let flat = agim.flatten_input(&ctx, ctx.constant(x.clone())).unwrap();
    let p = agim.propagate(&ctx, flat).unwrap();
    let a = agim.infer(&ctx, p).unwrap();

    let flat_o = agim_flatten(&agim, &x);
    let p_o = agim_propagate(&store, &agim, &flat_o, n);
    let a_o = agim_infer(&store, &agim, &p_o, n);
    rel_err(flat.value().data(), &flat_o)
        .max(rel_err(p.value().data(), &p_o))
        .max(rel_err(a.value().data(), &a_o))
}

/// Five-block branch on the 11-joint skeleton with two structural powers,
/// strided blocks, projected and identity residuals and fusion after
/// blocks 2 and 3.
pub fn branch_small(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = SkeletonSpec::synthetic();
    let graphs = Graphs::build(&spec, 2).unwrap();
    let mut store = ParamStore::<f64>::new();
    let b = |input, spatial, output, stride| BlockShape { input, spatial, output, kernel: 3, stride };
    let shapes = [b(3, 4, 4, 1), b(4, 4, 5, 2), b(10, 6, 6, 1), b(12, 6, 6, 2), b(6, 6, 6, 1)];
    let mut joint = Vec::new();
    let mut part = Vec::new();
    for (i, &s) in shapes.iter().enumerate() {
        joint.push(GtcBlock::joint(&mut store, &format!("b{i}"), &graphs.supports, s, 0.7, &mut r).unwrap());
        if i > 0 {
            part.push(GtcBlock::part(&mut store, &format!("b{i}.part"), &graphs.part_graph, s, &mut r).unwrap());
        }
    }
    let br = Branch { joint, part, fusion_after: vec![2, 3], parts: spec.parts().to_vec() };
    scramble(&mut store, seed + 1);
    let (n, m, t, d) = (2, spec.num_joints(), 7, 3);
    let x = random(&[n, m, t, d], &mut r);
    let a = random_stochastic(n, m, &mut r);

    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let a_var = ctx.constant(Tensor::new(&[n, m, m], a.clone()).unwrap());
    let got = br.forward(&ctx, ctx.constant(x.clone()), a_var).unwrap();
    assert_eq!(got.shape(), vec![n, m, 6]);
    let want = branch(&store, &br, x.data(), Dims { n, v: m, t, c: d }, &a);
    rel_err(got.value().data(), &want)
}

/// Three-step rollout of a small prediction head with non-zero output layer.
pub fn rollout_small(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = SkeletonSpec::synthetic();
    let graphs = Graphs::build(&spec, 1).unwrap();
    let (n, m, d, c, hid, dh) = (2, spec.num_joints(), 3, 3, 5, 4);
    let mut store = ParamStore::<f64>::new();
    let head = PredictionHead::new(&mut store, 2 * dh, hid, c, d, &graphs.supports, 0.7, &mut r).unwrap();
    scramble(&mut store, seed + 1);
    let h: Vec<Tensor<f64>> = (0..2).map(|_| random(&[n, m, dh], &mut r)).collect();
    let a = random_stochastic(n, m, &mut r);
    let (xl, d1, d2) = (random(&[n, m, d], &mut r), random(&[n, m, d], &mut r), random(&[n, m, d], &mut r));
    let mut y = random(&[n, c], &mut r).map(f64::exp);
    for row in y.data_mut().chunks_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }

    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let hv: Vec<_> = h.iter().map(|t| ctx.constant(t.clone())).collect();
    let start = RolloutStart {
        x_last: ctx.constant(xl.clone()),
        d1: ctx.constant(d1.clone()),
        d2: ctx.constant(d2.clone()),
    };
    let a_var = ctx.constant(Tensor::new(&[n, m, m], a.clone()).unwrap());
    let got = head.rollout(&ctx, &hv, a_var, start, ctx.constant(y.clone()), 3).unwrap();
    assert_eq!(got.shape(), vec![n, 3, m, d]);
    let hd: Vec<Vec<f64>> = h.iter().map(|t| t.data().to_vec()).collect();
    let want = rollout(&store, &head, &hd, n, m, &a, xl.data(), d1.data(), d2.data(), y.data(), 3);
    rel_err(got.value().data(), &want)
}
