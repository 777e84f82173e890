use super::ops::Op;
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<F> {
    pub value: Tensor<F>,
    pub op: Op<F>,
    pub needs_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<F> {
    pub(crate) nodes: Vec<Node<F>>,
    done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let needs_grad = match &op {
            Op::Leaf { requires_grad, .. } => *requires_grad,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(
            t,
            Op::Leaf {
                param: None,
                requires_grad: false,
            },
        )
    }

    /// A free leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(
            t,
            Op::Leaf {
                param: None,
                requires_grad: true,
            },
        )
    }

    /// Leaf holding a copy of a stored parameter's current value.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(
            p.value.clone(),
            Op::Leaf {
                param: Some(id),
                requires_grad: p.trainable,
            },
        )
    }

    /// Reverse pass from a scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<F>> {
        if self.done {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.done = true;
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::full(&shape, F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, ig) in node.op.backward(&self.nodes, &node.value, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            // keep the gradient of interior nodes available to callers
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Adds the gradients of all parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, grads: &Grads<F>, store: &mut ParamStore<F>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf {
                param: Some(id),
                requires_grad: true,
            } = node.op
            {
                if let Some(g) = grads.get(Var(i)) {
                    store.get_mut(id).grad.add_assign(g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::new(&[3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_half_square_is_value() {
        let mut store = ParamStore::<f64>::new();
        let v = vec![0.5, -1.5, 2.0];
        let id = store.add("p", Tensor::new(&[3], v.clone()).unwrap(), true);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), v.as_slice());
    }

    #[test]
    fn unreachable_params_keep_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full(&[2], 1.0), true);
        let b = store.add("b", Tensor::full(&[2], 1.0), true);
        let mut tape = Tape::new();
        let pa = tape.param(&store, a);
        let _pb = tape.param(&store, b);
        let loss = tape.sum(pa);
        let g = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
        assert_eq!(store.get(b).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_tape_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(&[2], 1.0));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(&[2], 1.0));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }
}
