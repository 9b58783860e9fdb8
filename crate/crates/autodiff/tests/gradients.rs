use proptest::prelude::*;
use symgnn_autodiff::{
    gradient_check, gradients, Adam, Mode, ParamGrads, ParamStore, Primitive, Sgd, Tape, Tensor,
};

const TOL: f64 = 1e-4;

#[test]
fn every_primitive_passes_on_twenty_seeds() {
    for p in Primitive::ALL {
        for seed in 0..20 {
            let err = gradient_check(p, &p.default_shapes(), seed).unwrap();
            assert!(err < TOL, "{p} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn named_examples() {
    let mm = gradient_check(Primitive::Matmul, &[vec![3, 4], vec![4, 2]], 0).unwrap();
    assert!(mm < TOL, "{mm:e}");
    let gru = gradient_check(Primitive::GruCell, &[vec![3, 8], vec![3, 8]], 0).unwrap();
    assert!(gru < TOL, "{gru:e}");
    let sm = gradient_check(Primitive::Softmax, &[vec![5, 5]], 0).unwrap();
    assert!(sm < TOL, "{sm:e}");
}

#[test]
fn square_and_relu_gradients() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", Tensor::from_f64(&[1], &[3.0]).unwrap()).unwrap();
    let y = store.add("y", Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap()).unwrap();
    store.add("unused", Tensor::full(&[2, 2], 5.0)).unwrap();

    let tape = Tape::new(Mode::Eval);
    let xv = tape.param(&store, x);
    let loss = xv.mul(xv).unwrap().sum_all().unwrap();
    let g = gradients(&tape, loss, &store).unwrap();
    assert_eq!(g["x"].data(), &[6.0]);
    assert_eq!(g["unused"].data(), &[0.0; 4]);
    assert_eq!(g["unused"].shape(), &[2, 2]);

    let tape = Tape::new(Mode::Eval);
    let loss = tape.param(&store, y).relu().unwrap().sum_all().unwrap();
    let g = gradients(&tape, loss, &store).unwrap();
    assert_eq!(g["y"].data(), &[0.0, 1.0]);
    assert_eq!(g["x"].data(), &[0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::<f64>::new(Mode::Eval);
    let x = tape.leaf(Tensor::zeros(&[2]));
    assert!(tape.backward(x.relu().unwrap()).is_err());
}

fn const_grads(store: &ParamStore<f64>, g: f64) -> ParamGrads<f64> {
    let tape = Tape::new(Mode::Train);
    let p = tape.param(store, store.id("p").unwrap());
    let loss = p.scale(g).unwrap().sum_all().unwrap();
    tape.backward(loss).unwrap().for_params(store)
}

#[test]
fn adam_moments_persist() {
    let fresh = || {
        let mut s = ParamStore::new();
        s.add("p", Tensor::full(&[1], 0.0)).unwrap();
        s
    };
    // gradients 1 then 3
    let mut s = fresh();
    let mut opt = Adam::new(1e-3);
    let g = const_grads(&s, 1.0);
    opt.step(&mut s, &g).unwrap();
    let g = const_grads(&s, 3.0);
    opt.step(&mut s, &g).unwrap();
    let chained = s.by_name("p").unwrap().value.data()[0];

    // hand-unrolled oracle
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 1e-3);
    let (m1, v1) = ((1.0 - b1) * 1.0, (1.0 - b2) * 1.0);
    let p1 = -lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let (m2, v2) = (b1 * m1 + (1.0 - b1) * 3.0, b2 * v1 + (1.0 - b2) * 9.0);
    let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
    assert!((chained - p2).abs() < 1e-12, "{chained} vs {p2}");

    // two independent first steps move by exactly lr each
    let mut s = fresh();
    let g = const_grads(&s, 1.0);
    Adam::new(1e-3).step(&mut s, &g).unwrap();
    let g = const_grads(&s, 3.0);
    Adam::new(1e-3).step(&mut s, &g).unwrap();
    let fresh_twice = s.by_name("p").unwrap().value.data()[0];
    assert!((chained - fresh_twice).abs() > 1e-6);
}

#[test]
fn sgd_shape_mismatch() {
    let mut a = ParamStore::<f64>::new();
    a.add("p", Tensor::zeros(&[2])).unwrap();
    let mut b = ParamStore::<f64>::new();
    b.add("p", Tensor::zeros(&[3])).unwrap();
    let g = ParamGrads::zeros_like(&b);
    assert!(Sgd::new(0.1, 0.0).unwrap().step(&mut a, &g).is_err());
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// d(f + g) = df + dg for two subgraphs sharing the leaf.
    #[test]
    fn backward_is_linear(x in tensor(vec![3, 4]), w in tensor(vec![4, 2])) {
        let grad_of = |which: u8| {
            let tape = Tape::new(Mode::Eval);
            let xv = tape.leaf(x.clone());
            let f = xv.matmul(tape.constant(w.clone())).unwrap().tanh().unwrap().sum_all().unwrap();
            let g = xv.softmax().unwrap().mul(xv).unwrap().sum_all().unwrap();
            let root = match which {
                0 => f,
                1 => g,
                _ => f.add(g).unwrap(),
            };
            tape.backward(root).unwrap().wrt(xv)
        };
        let mut sum = grad_of(0);
        sum.add_assign(&grad_of(1));
        prop_assert!(sum.max_abs_diff(&grad_of(2)) < 1e-12);
    }

    /// Same inputs and seed give bitwise-identical outputs, dropout included.
    #[test]
    fn evaluation_is_deterministic(x in tensor(vec![4, 6]), seed in 0u64..1000) {
        let run = || {
            let tape = Tape::with_seed(Mode::Train, seed);
            tape.leaf(x.clone()).dropout(0.5).unwrap().relu().unwrap().softmax().unwrap().value().data().to_vec()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn softmax_rows_sum_to_one(x in tensor(vec![3, 5])) {
        let tape = Tape::new(Mode::Eval);
        let y = tape.leaf(x).softmax().unwrap().value();
        for r in 0..3 {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
