mod common;

use common::{feature_mlp, rel_err, rng, scramble};
use rand::Rng;
use symgnn_core::agim::{perturbation_ratio, Agim, AgimConfig};
use symgnn_core::autodiff::{Mode, ParamStore, Tape, Tensor};
use symgnn_core::nn::Ctx;

fn rand_t(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn small(k: usize, joints: usize, seed: u64) -> (Agim, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let config = AgimConfig { t_agim: 5, k, hidden: 7, d_v: 6, d_e: 4, d_emb: 3 };
    let agim = Agim::new(&mut store, "agim", &config, joints, 3, &mut rng(seed)).unwrap();
    scramble(&mut store, seed + 100);
    (agim, store)
}

#[test]
fn zero_rounds_is_the_joint_feature_map() {
    let (agim, store) = small(0, 4, 1);
    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let x = rand_t(&[2, 5, 4, 3], &mut rng(2));
    let flat = agim.flatten_input(&ctx, ctx.constant(x)).unwrap();
    let p = agim.propagate(&ctx, flat).unwrap();
    let want = feature_mlp(&store, &agim.f_v[0], flat.value().data(), 15);
    assert_eq!(p.shape(), vec![2, 4, 6]);
    assert!(rel_err(p.value().data(), &want) < 1e-14);
}

#[test]
fn identical_trajectories_get_identical_embeddings() {
    let (agim, store) = small(2, 4, 3);
    let mut x = rand_t(&[1, 5, 4, 3], &mut rng(4));
    for t in 0..5 {
        for c in 0..3 {
            let v = x.at(&[0, t, 0, c]);
            x.set(&[0, t, 2, c], v);
        }
    }
    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let p = agim.propagate(&ctx, agim.flatten_input(&ctx, ctx.constant(x)).unwrap()).unwrap().value();
    let d = p.shape()[2];
    assert!((0..d).all(|k| (p.at(&[0, 0, k]) - p.at(&[0, 2, k])).abs() < 1e-14));
    assert!((0..d).any(|k| (p.at(&[0, 0, k]) - p.at(&[0, 1, k])).abs() > 1e-6));
}

#[test]
fn equal_embeddings_give_a_uniform_graph() {
    let (agim, store) = small(1, 5, 5);
    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let row = rand_t(&[6], &mut rng(6));
    let p = Tensor::from_fn(&[1, 5, 6], |i| row.data()[i % 6]);
    let a = agim.infer(&ctx, ctx.constant(p)).unwrap().value();
    assert!(a.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn graph_matches_direct_softmax() {
    let (agim, store) = small(1, 3, 7);
    let tape = Tape::new(Mode::Eval);
    let ctx = Ctx::new(&tape, &store, 0.0);
    let p = rand_t(&[1, 3, 6], &mut rng(8));
    let a = agim.infer(&ctx, ctx.constant(p.clone())).unwrap().value();
    let f = feature_mlp(&store, &agim.f_emb, p.data(), 6);
    let g = feature_mlp(&store, &agim.g_emb, p.data(), 6);
    for i in 0..3 {
        let logits: Vec<f64> = (0..3).map(|j| (0..3).map(|k| f[i * 3 + k] * g[j * 3 + k]).sum()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (j, l) in logits.iter().enumerate() {
            assert!((a.at(&[0, i, j]) - l.exp() / z).abs() < 1e-14);
        }
    }
}

#[test]
fn graphs_are_row_stochastic_and_asymmetric() {
    let (agim, store) = small(2, 6, 9);
    let mut r = rng(10);
    let mut asymmetric = false;
    for _ in 0..10 {
        let clip = rand_t(&[12, 6, 3], &mut r);
        let a = agim.graph_of(&store, &clip).unwrap();
        for i in 0..6 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            for j in 0..6 {
                asymmetric |= (a.at(&[i, j]) - a.at(&[j, i])).abs() > 1e-9;
            }
        }
    }
    assert!(asymmetric);
}

#[test]
fn single_joint_is_rejected() {
    let mut store = ParamStore::<f64>::new();
    assert!(Agim::new(&mut store, "a", &AgimConfig::default(), 1, 3, &mut rng(0)).is_err());
}

#[test]
fn perturbation_ratio_is_finite() {
    let (agim, store) = small(1, 4, 11);
    let clip = rand_t(&[8, 4, 3], &mut rng(12));
    let mut r = rng(13);
    for sigma in [0.01, 0.05, 0.1] {
        let ratio = perturbation_ratio(&agim, &store, &clip, sigma, &mut r).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
    assert!(perturbation_ratio(&agim, &store, &clip, 0.0, &mut r).is_err());
}
