//! Self-checks: finite-difference gradients of every primitive and composite
//! operator, the JGC stability bound, and the min-norm task weighting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use symgnn_autodiff::{
    check_function, gradcheck::TOLERANCE, gradient_check, Mode, ParamStore, Primitive, Tensor, Var,
};

use crate::error::{ensure, Result};
use crate::graph::{agc, jgc, pgc, sgc, stability_check, BlockShape, GtcBlock, JgcLayer};
use crate::heads::{PredictionHead, RolloutStart};
use crate::nn::Ctx;
use crate::skeleton::{normalize_adjacency, PartGraph, SkeletonSpec, StructuralSupports};
use crate::training::{loss_prediction, loss_recognition, mgda_lambda};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Stability,
    Mgda,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gradients" => Ok(Suite::Gradients),
            "stability" => Ok(Suite::Stability),
            "mgda" => Ok(Suite::Mgda),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite `{s}` (gradients, stability, mgda, all)")),
        }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest error statistic seen (relative gradient error, bound slack, ...).
    pub worst: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn wrap(e: crate::Error) -> symgnn_autodiff::Error {
    symgnn_autodiff::Error::InvalidArgument { op: "verify", msg: e.to_string() }
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Gradient check of `f` with every trainable parameter in `store` driven by
/// an extra input after `inputs`.
fn check_layer<F>(store: &ParamStore<f64>, inputs: Vec<Tensor<f64>>, mode: Mode, dropout: f64, seed: u64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&Ctx<'t, '_, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let ids = store.trainable_ids();
    let k = inputs.len();
    let mut all = inputs;
    all.extend(ids.iter().map(|&id| store.value(id).clone()));
    Ok(check_function(&all, mode, seed, |tape, vars| {
        for (&id, &v) in ids.iter().zip(&vars[k..]) {
            tape.bind_param(id, v);
        }
        let ctx = Ctx::new(tape, store, dropout);
        f(&ctx, &vars[..k]).map_err(wrap)
    })?)
}

fn path3() -> SkeletonSpec {
    SkeletonSpec::new(3, vec![(0, 1), (1, 2)], vec![0, 0, 1], 0).expect("valid path")
}

/// Worst relative error of one composite operator for one seed.
pub fn composite_gradient(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = path3();
    let supports = StructuralSupports::new(&normalize_adjacency(&spec), 2)?;
    match name {
        "agc" => {
            let inputs = vec![rand_tensor(&[4, 3], &mut rng), rand_tensor(&[4, 4], &mut rng), rand_tensor(&[5, 3], &mut rng)];
            Ok(check_function(&inputs, Mode::Eval, seed, |_, v| agc(v[0], v[1].softmax()?, v[2]).map_err(wrap))?)
        }
        "sgc" => {
            let inputs = vec![
                rand_tensor(&[3, 2], &mut rng),
                rand_tensor(&[3, 3], &mut rng),
                rand_tensor(&[3, 3], &mut rng),
                rand_tensor(&[4, 2], &mut rng),
                rand_tensor(&[4, 2], &mut rng),
            ];
            Ok(check_function(&inputs, Mode::Eval, seed, |tape, v| {
                let s: Vec<_> = supports.supports.iter().map(|s| tape.constant(s.clone())).collect();
                sgc(v[0], &s, &[v[1], v[2]], &[v[3], v[4]]).map_err(wrap)
            })?)
        }
        "jgc" => {
            let inputs = vec![
                rand_tensor(&[3, 2], &mut rng),
                rand_tensor(&[3, 3], &mut rng),
                rand_tensor(&[4, 2], &mut rng),
                rand_tensor(&[3, 3], &mut rng),
                rand_tensor(&[3, 3], &mut rng),
                rand_tensor(&[4, 2], &mut rng),
                rand_tensor(&[4, 2], &mut rng),
            ];
            Ok(check_function(&inputs, Mode::Eval, seed, |tape, v| {
                let s: Vec<_> = supports.supports.iter().map(|s| tape.constant(s.clone())).collect();
                jgc(v[0], v[1].softmax()?, v[2], 0.7, &s, &[v[3], v[4]], &[v[5], v[6]]).map_err(wrap)
            })?)
        }
        "pgc" => {
            let pg = PartGraph::build(&spec);
            let inputs = vec![rand_tensor(&[2, 3], &mut rng), rand_tensor(&[2, 2], &mut rng), rand_tensor(&[4, 3], &mut rng)];
            Ok(check_function(&inputs, Mode::Eval, seed, |tape, v| {
                pgc(v[0], tape.constant(pg.support.clone()), v[1], v[2]).map_err(wrap)
            })?)
        }
        "jgtc" | "pgtc" => {
            let mut store = ParamStore::<f64>::new();
            let shape = BlockShape { input: 2, spatial: 3, output: 4, kernel: 3, stride: 2 };
            let (block, v) = if name == "jgtc" {
                (GtcBlock::joint(&mut store, "b", &supports, shape, 0.5, &mut rng)?, 3)
            } else {
                (GtcBlock::part(&mut store, "b", &PartGraph::build(&spec), shape, &mut rng)?, 2)
            };
            perturb_store(&mut store, &mut rng);
            let inputs = vec![rand_tensor(&[2, v, 4, 2], &mut rng), rand_tensor(&[2, 3, 3], &mut rng)];
            let joint = name == "jgtc";
            check_layer(&store, inputs, Mode::Train, 0.25, seed, |ctx, v| {
                let a = if joint { Some(v[1].softmax()?) } else { None };
                block.forward(ctx, v[0], a)
            })
        }
        "gru_rollout" => {
            let mut store = ParamStore::<f64>::new();
            let (n, m, d, c, hdim) = (2, 3, 2, 3, 4);
            let head = PredictionHead::new(&mut store, 2 * hdim, hdim, c, d, &supports, 0.5, &mut rng)?;
            perturb_store(&mut store, &mut rng);
            let inputs = vec![
                rand_tensor(&[n, m, hdim], &mut rng),
                rand_tensor(&[n, m, hdim], &mut rng),
                rand_tensor(&[n, m, m], &mut rng),
                rand_tensor(&[n, m, d], &mut rng),
                rand_tensor(&[n, m, d], &mut rng),
                rand_tensor(&[n, m, d], &mut rng),
                rand_tensor(&[n, c], &mut rng),
            ];
            check_layer(&store, inputs, Mode::Eval, 0.0, seed, |ctx, v| {
                let start = RolloutStart { x_last: v[3], d1: v[4], d2: v[5] };
                head.rollout(ctx, &[v[0], v[1]], v[2].softmax()?, start, v[6].softmax()?, 3)
            })
        }
        "loss_recognition" => {
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let inputs = vec![rand_tensor(&[4, 3], &mut rng)];
            Ok(check_function(&inputs, Mode::Eval, seed, |_, v| loss_recognition(v[0], &labels).map_err(wrap))?)
        }
        "loss_prediction" => {
            let target = rand_tensor(&[2, 3, 3, 2], &mut rng);
            let inputs = vec![rand_tensor(&[2, 3, 3, 2], &mut rng)];
            Ok(check_function(&inputs, Mode::Eval, seed, |_, v| loss_prediction(v[0], &target).map_err(wrap))?)
        }
        "jgc_layer" => jgc_layer_gradient(seed),
        other => Err(crate::Error::invalid(format!("unknown composite `{other}`"))),
    }
}

pub const COMPOSITES: [&str; 10] = [
    "agc",
    "sgc",
    "jgc",
    "pgc",
    "jgtc",
    "pgtc",
    "gru_rollout",
    "loss_recognition",
    "loss_prediction",
    "jgc_layer",
];

/// Moves every trainable parameter away from its initial value so zero
/// biases, unit masks and zero output layers do not hide gradient paths.
fn perturb_store(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for id in store.trainable_ids() {
        let v = store.value_mut(id);
        for x in v.data_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
    }
}

fn jgc_layer_gradient(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = path3();
    let supports = StructuralSupports::new(&normalize_adjacency(&spec), 2)?;
    let mut store = ParamStore::<f64>::new();
    let layer = JgcLayer::new(&mut store, "j", &supports, 2, 3, 0.5, &mut rng)?;
    perturb_store(&mut store, &mut rng);
    let inputs = vec![rand_tensor(&[2, 3, 2, 2], &mut rng), rand_tensor(&[2, 3, 3], &mut rng)];
    check_layer(&store, inputs, Mode::Eval, 0.0, seed, |ctx, v| layer.forward(ctx, v[0], v[1].softmax()?))
}

/// Every primitive and composite over seeds `seed..seed + trials`.
pub fn gradient_suite(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for p in Primitive::ALL {
        let mut worst = 0.0f64;
        let mut failures = 0;
        for s in seed..seed + trials as u64 {
            let e = gradient_check(p, &p.default_shapes(), s)?;
            if e.is_nan() || e >= TOLERANCE {
                failures += 1;
            }
            worst = worst.max(e);
        }
        out.push(Check { name: format!("primitive:{}", p.name()), trials, failures, worst });
    }
    for name in COMPOSITES {
        let mut worst = 0.0f64;
        let mut failures = 0;
        for s in seed..seed + trials as u64 {
            let e = composite_gradient(name, s)?;
            if e.is_nan() || e >= TOLERANCE {
                failures += 1;
            }
            worst = worst.max(e);
        }
        out.push(Check { name: format!("composite:{name}"), trials, failures, worst });
    }
    Ok(out)
}

/// Random row-stochastic matrix and a perturbed copy, both via softmax of
/// logits.
fn graph_pair(m: usize, eps: f64, rng: &mut impl Rng) -> (Tensor<f64>, Tensor<f64>) {
    let logits = rand_tensor(&[m, m], rng).scaled(2.0);
    let mut noisy = logits.clone();
    noisy.data_mut().iter_mut().for_each(|v| *v += eps * rng.random_range(-1.0..1.0));
    let sm = |t: &Tensor<f64>| crate::training::softmax_rows(t);
    (sm(&logits), sm(&noisy))
}

/// `trials` random JGC layers on the synthetic skeleton (3 → 32 channels,
/// as the first light block), perturbations with ε ∈ [1e-3, 0.1]. The
/// worst statistic is the largest `lhs / rhs`.
pub fn stability_suite(trials: usize, seed: u64) -> Result<Check> {
    let spec = SkeletonSpec::synthetic();
    let supports = StructuralSupports::new(&normalize_adjacency(&spec), 1)?;
    let m = spec.num_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let mut store = ParamStore::<f64>::new();
        let lambda = rng.random_range(0.0..1.0);
        let layer = JgcLayer::new(&mut store, "j", &supports, 3, 32, lambda, &mut rng)?;
        for &id in &layer.masks {
            *store.value_mut(id) = Tensor::from_fn(&[m, m], |_| rng.random_range(0.0..2.0));
        }
        let params = layer.snapshot(&store);
        let eps = rng.random_range(1e-3..0.1);
        let x = rand_tensor(&[m, 3], &mut rng);
        let mut x_star = x.clone();
        x_star.data_mut().iter_mut().for_each(|v| *v += eps * rng.random_range(-1.0..1.0));
        let (a, a_star) = graph_pair(m, eps, &mut rng);
        let r = stability_check(&params, &x, &a, &x_star, &a_star)?;
        if !r.holds {
            failures += 1;
        }
        if r.rhs > 0.0 {
            worst = worst.max(r.lhs / r.rhs);
        }
    }
    Ok(Check { name: "stability:jgc_bound".into(), trials, failures, worst })
}

/// `‖ρ(A) − ρ(B)‖_F ≤ ‖A − B‖_F` on random matrix pairs.
pub fn relu_contraction_suite(trials: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
        let a = rand_tensor(&[r, c], &mut rng).scaled(rng.random_range(0.1..10.0));
        let b = rand_tensor(&[r, c], &mut rng).scaled(rng.random_range(0.1..10.0));
        let lhs = a.map(|v| v.max(0.0)).zip_map(&b.map(|v| v.max(0.0)), |x, y| x - y)?.frobenius();
        let rhs = a.zip_map(&b, |x, y| x - y)?.frobenius();
        if lhs > rhs {
            failures += 1;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    Ok(Check { name: "stability:relu_contraction".into(), trials, failures, worst })
}

fn min_norm_sq(l: f64, r: &[f64], p: &[f64]) -> f64 {
    r.iter().zip(p).map(|(a, b)| (l * a + (1.0 - l) * b).powi(2)).sum()
}

/// Closed-form weight against a 1001-point grid on random gradient pairs.
/// The worst statistic is the largest amount by which any grid point beats
/// the closed form.
pub fn mgda_suite(trials: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..trials {
        let n = rng.random_range(1..32);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = mgda_lambda(&r, &p)?;
        let at = min_norm_sq(l, &r, &p);
        let grid_best = (0..=1000).map(|i| min_norm_sq(i as f64 / 1000.0, &r, &p)).fold(f64::INFINITY, f64::min);
        let gap = at - grid_best;
        if !(0.0..=1.0).contains(&l) || gap > 1e-10 {
            failures += 1;
        }
        worst = worst.max(gap);
    }
    Ok(Check { name: "mgda:grid".into(), trials, failures, worst })
}

/// Runs `suite`; `trials` replaces each check's default count.
pub fn run_suite(suite: Suite, trials: Option<usize>, seed: u64) -> Result<Vec<Check>> {
    ensure!(trials != Some(0), "trials must be positive");
    let mut out = Vec::new();
    if matches!(suite, Suite::Gradients | Suite::All) {
        out.extend(gradient_suite(trials.unwrap_or(20), seed)?);
    }
    if matches!(suite, Suite::Stability | Suite::All) {
        out.push(stability_suite(trials.unwrap_or(200), seed)?);
        out.push(relu_contraction_suite(trials.unwrap_or(10_000), seed)?);
    }
    if matches!(suite, Suite::Mgda | Suite::All) {
        out.push(mgda_suite(trials.unwrap_or(100), seed)?);
    }
    Ok(out)
}
