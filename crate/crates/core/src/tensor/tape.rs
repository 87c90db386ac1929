use std::sync::atomic::{AtomicU64, Ordering};

use super::{Result, Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Local gradient rule of a recorded operation.
///
/// `inputs` are the parent values in the order they were recorded, `output`
/// is the value this node produced and `grad` is dL/d(output). The rule
/// returns one entry per parent; entries for parents with `needs[i] == false`
/// may be `None`.
pub trait Backward<F: Scalar>: Send + Sync {
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad: &Tensor<F>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<F>>>;
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<usize>,
    rule: Option<Box<dyn Backward<F>>>,
    requires_grad: bool,
}

/// Reverse-mode record of one forward computation.
///
/// Nodes are appended in evaluation order, so every parent precedes its
/// consumers. A tape is single-owner: build it during a forward pass, call
/// [`Tape::backward`] once or more, then drop it.
pub struct Tape<F: Scalar> {
    id: u64,
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<F>) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a value that does not require a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad: false,
        })
    }

    /// Records a leaf that requires a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad: true,
        })
    }

    /// Records the result of an operation. The gradient rule is kept only
    /// when at least one parent requires a gradient.
    pub fn record(
        &mut self,
        value: Tensor<F>,
        parents: &[Var],
        rule: impl Backward<F> + 'static,
    ) -> Var {
        let parents: Vec<usize> = parents.iter().map(|p| self.check(*p)).collect();
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.push(Node {
            value,
            parents,
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn Backward<F>>),
            requires_grad,
        })
    }

    fn check(&self, v: Var) -> usize {
        assert!(
            v.tape == self.id && v.index < self.nodes.len(),
            "variable {v:?} does not belong to tape {}",
            self.id
        );
        v.index
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[self.check(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v)].requires_grad
    }

    /// Parent handles of a recorded node.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[self.check(v)]
            .parents
            .iter()
            .map(|&index| Var {
                tape: self.id,
                index,
            })
            .collect()
    }

    /// Propagates dL/dL = 1 from a scalar loss back to every ancestor that
    /// requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(TensorError::DetachedLoss);
        }
        let loss_node = &self.nodes[loss.index];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NotScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.index + 1];
        if loss_node.requires_grad {
            grads[loss.index] = Some(Tensor::full(loss_node.value.shape(), F::one()));
        }

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<F>> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = rule.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.make_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradients produced by [`Tape::backward`], keyed by variable.
pub struct Gradients<F> {
    tape: u64,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss with respect to `v`; `None` when `v` is not an
    /// ancestor of the loss or does not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` received none.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}
