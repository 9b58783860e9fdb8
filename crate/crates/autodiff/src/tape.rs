//! Dynamic computation tape.
//!
//! Every differentiable operation appends a node holding its output value, the
//! ids of its inputs, and a closure mapping the output cotangent to input
//! cotangents. Nodes are appended in evaluation order, so a reverse sweep over
//! the node list is a valid topological order for backpropagation.
//!
//! The tape is never consumed by [`Tape::backward`]; several losses sharing one
//! forward pass can be differentiated independently.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Forward behaviour of mode-dependent primitives (batch-norm, dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("mode", &self.mode)
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }
}

impl<T: Real> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// `seed` drives the dropout stream.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn rng(&self) -> std::cell::RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    /// Input that no gradient is requested for.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    /// Input that gradients are requested for.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// Leaf holding a copy of a stored parameter; repeated calls for the same
    /// parameter return the same node so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let var = self.push_leaf(p.value.clone(), p.trainable);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Makes later [`Tape::param`] calls for `id` return `var` instead of a
    /// fresh leaf, so a parameter can be driven by an arbitrary input.
    pub fn bind_param(&self, id: ParamId, var: Var<'_, T>) {
        self.params.borrow_mut().insert(id, var.id);
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarLoss(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(root_value.shape()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &*nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| nodes[j].requires_grad).collect();
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&j, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[j].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[j].value.shape());
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().iter().map(|(&p, &n)| (p, n)).collect(),
        })
    }
}

/// Cotangents of one backward sweep, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if the root does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when unreachable.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    /// Per-parameter gradients aligned with `store`; parameters the root does
    /// not reach (or that never entered the tape) get zeros.
    pub fn for_params(&self, store: &ParamStore<T>) -> ParamGrads<T> {
        let mut out: Vec<Tensor<T>> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        for &(pid, node) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                if store.get(pid).trainable {
                    out[pid.index()] = g.clone();
                }
            }
        }
        ParamGrads { grads: out }
    }
}

/// Gradient tensor per parameter of a [`ParamStore`], aligned by index.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.index()]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        Self {
            grads: self
                .grads
                .iter()
                .zip(&other.grads)
                .map(|(x, y)| x.zip_map(y, |u, v| a * u + b * v).expect("aligned grads"))
                .collect(),
        }
    }

    /// Concatenation of the selected gradients into one flat vector.
    pub fn flatten(&self, ids: &[ParamId]) -> Vec<T> {
        ids.iter()
            .flat_map(|id| self.grads[id.index()].data().iter().copied())
            .collect()
    }

    /// Name → gradient map.
    pub fn named(&self, store: &ParamStore<T>) -> BTreeMap<String, Tensor<T>> {
        store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, p)| (p.name.clone(), self.grads[id.index()].clone()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}

/// Gradients of a scalar loss with respect to every trainable parameter of
/// `store`, keyed by name.
pub fn gradients<T: Real>(
    tape: &Tape<T>,
    loss: Var<'_, T>,
    store: &ParamStore<T>,
) -> Result<BTreeMap<String, Tensor<T>>> {
    Ok(tape.backward(loss)?.for_params(store).named(store))
}
