use std::ops::{Deref, DerefMut};

use crate::{Error, Result, SeededRng};

use super::{ParamId, ParamStore, Real, Tensor};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees for one recorded op.
pub(crate) struct BackCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input needs a gradient; closures may skip the others.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Ordered record of executed ops.
///
/// Values are kept for every node; backward closures are only stored when
/// at least one input requires a gradient.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// The leaf for parameter `id`; repeated calls return the same node.
    /// Frozen parameters are recorded as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push_leaf(p.value.clone(), p.trainable);
        self.param_vars.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an op. `backward` maps the output gradient to
    /// one optional gradient per input, in input order.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        backward: impl Fn(&BackCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        debug_assert!(value.all_finite() || inputs.iter().any(|v| !self.value(*v).all_finite()), "non-finite output from finite inputs");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `d loss / d node` to every node, adding the parameter
    /// gradients into `store` (gradients accumulate across calls).
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.gradients(loss)?;
        for &(id, v) in &self.param_vars {
            if let Some(g) = &grads.grads[v.0] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    /// Like [`Tape::backward`] without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let ctx = BackCtx {
                grad: &g,
                inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                needs: node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect(),
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&j, gi) in node.inputs.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                debug_assert_eq!(gi.shape(), self.nodes[j].value.shape());
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Tape::input`] or
    /// [`Tape::param`]; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a tape plus the parameters it reads and the mode.
pub struct Graph<'a, T> {
    tape: Tape<T>,
    params: &'a ParamStore<T>,
    mode: Mode,
    rng: Option<SeededRng>,
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn eval(params: &'a ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            params,
            mode: Mode::Eval,
            rng: None,
        }
    }

    /// Training mode; `rng` drives stochastic layers such as drop-path.
    pub fn train(params: &'a ParamStore<T>, rng: SeededRng) -> Self {
        Self {
            tape: Tape::new(),
            params,
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    /// [`Tape::drop_path_with`] driven by this graph's mode and generator.
    pub fn drop_path(&mut self, x: Var, rate: f64) -> Result<Var> {
        let rng = match self.mode {
            Mode::Train => self.rng.as_mut(),
            Mode::Eval => None,
        };
        self.tape.drop_path_with(x, rate, rng)
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }
}

impl<T> Deref for Graph<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<T> DerefMut for Graph<'_, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }
}
