use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Real, Tensor};
use crate::error::{usage_err, Result};

/// Everything a backward rule may read.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad_out: &'a [T],
    /// Forward values of the node's inputs, in the order they were recorded.
    pub inputs: &'a [Rc<Tensor<T>>],
    /// Forward value of the node itself.
    pub output: &'a Tensor<T>,
    /// Which inputs need a gradient; rules may skip work for the others.
    pub needs: &'a [bool],
}

/// Vector-Jacobian product of one recorded operation.
///
/// Returns one entry per input; `None` means "no contribution" and is only
/// allowed for inputs whose `needs` flag is false.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    rule: Option<Box<dyn Backward<T>>>,
    grad: Option<Vec<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lifecycle {
    Recording,
    Consumed,
}

struct Inner<T: Real> {
    nodes: Vec<Node<T>>,
    state: Lifecycle,
}

/// Append-only record of a forward computation.
///
/// Inputs always precede outputs in the record, so the append order is a
/// topological order and the graph is acyclic by construction. A graph is
/// single-use: [`Graph::backward`] consumes it.
pub struct Graph<T: Real> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { inner: RefCell::new(Inner { nodes: Vec::new(), state: Lifecycle::Recording }) }
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value: Rc::new(value), requires_grad, inputs: Vec::new(), rule: None, grad: None });
        Var { graph: self, id }
    }

    /// Records the result of an operation. The backward rule is kept only when
    /// at least one input requires a gradient.
    pub fn record(&self, inputs: &[Var<'_, T>], output: Tensor<T>, rule: Box<dyn Backward<T>>) -> Var<'_, T> {
        // Overflow to a non-finite value is left to the caller: training
        // turns it into a NonFinite error rather than a panic.
        let mut inner = self.inner.borrow_mut();
        let requires_grad = inputs.iter().any(|v| inner.nodes[v.id].requires_grad);
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(output),
            requires_grad,
            inputs: if requires_grad { inputs.iter().map(|v| v.id).collect() } else { Vec::new() },
            rule: if requires_grad { Some(rule) } else { None },
            grad: None,
        });
        Var { graph: self, id }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Populates gradients of every leaf reachable from `loss`.
    ///
    /// Nodes are visited once each, in reverse append order. Afterwards the
    /// recorded intermediates are released and the graph refuses a second
    /// backward pass.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.state == Lifecycle::Consumed {
            return Err(usage_err!("backward called twice on the same graph; record a new forward pass"));
        }
        let numel = inner.nodes[loss.id].value.numel();
        if numel != 1 {
            return Err(usage_err!("backward needs a scalar loss, got {numel} elements"));
        }
        inner.state = Lifecycle::Consumed;
        if !inner.nodes[loss.id].requires_grad {
            return Ok(());
        }
        inner.nodes[loss.id].grad = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &mut inner.nodes[id];
            let Some(rule) = node.rule.take() else { continue };
            let Some(grad_out) = node.grad.take() else { continue };
            let input_ids = std::mem::take(&mut node.inputs);
            let output = Rc::clone(&node.value);

            let values: Vec<Rc<Tensor<T>>> = input_ids.iter().map(|&i| Rc::clone(&inner.nodes[i].value)).collect();
            let needs: Vec<bool> = input_ids.iter().map(|&i| inner.nodes[i].requires_grad).collect();
            let grads = rule.backward(BackwardCtx { grad_out: &grad_out, inputs: &values, output: &output, needs: &needs });
            debug_assert_eq!(grads.len(), input_ids.len(), "{} returned the wrong number of gradients", rule.name());

            for ((&input, grad), &need) in input_ids.iter().zip(grads).zip(&needs) {
                if !need {
                    continue;
                }
                let Some(grad) = grad else {
                    panic!("{} skipped a gradient that was needed", rule.name());
                };
                let target = &mut inner.nodes[input];
                debug_assert_eq!(grad.len(), target.value.numel(), "{} gradient length", rule.name());
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &g)| *a += g),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient accumulated on this leaf by the last backward pass.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        node.grad.as_ref().map(|g| Tensor::new(node.value.shape(), g.clone()).expect("gradient shape"))
    }

    /// Takes the gradient out of the leaf, leaving `None` behind.
    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.graph.inner.borrow_mut().nodes[self.id].grad.take()
    }
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}
