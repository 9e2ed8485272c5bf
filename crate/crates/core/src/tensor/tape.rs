use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Maps the gradient of a node's output to gradients of its parents, in the
/// order the parents were recorded.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// A tape is single-threaded; independent samples use independent tapes.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    kinks: Cell<Option<u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kinks: Cell::new(None),
        }
    }

    /// A tape that fingerprints the sign pattern seen by every
    /// non-differentiable point (PReLU, ReLU, |x|). Finite-difference checks
    /// compare fingerprints to detect a step that crossed a kink.
    pub fn with_kink_tracking() -> Self {
        let t = Self::new();
        t.kinks.set(Some(0xcbf2_9ce4_8422_2325));
        t
    }

    pub fn kink_fingerprint(&self) -> Option<u64> {
        self.kinks.get()
    }

    pub(crate) fn note_kinks<'a>(&self, values: impl IntoIterator<Item = &'a f64>) {
        if let Some(mut h) = self.kinks.get() {
            for &v in values {
                h ^= (v > 0.0) as u64 + 1;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            self.kinks.set(Some(h));
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Vec::new(), None)
    }

    pub(crate) fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Records an op whose gradient is produced by `backward`.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&Tensor) -> Vec<Tensor> + 'static,
    ) -> Var<'t> {
        let ids = parents
            .iter()
            .map(|p| {
                debug_assert!(std::ptr::eq(p.tape, self), "mixing tapes");
                p.id
            })
            .collect();
        self.push(value, ids, Some(Box::new(backward)))
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Propagates `seed` (the gradient of some scalar objective with respect
    /// to `output`) back through every recorded op. Gradients are summed over
    /// every use of a variable.
    pub fn backward(&self, output: Var<'_>, seed: Tensor) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(Error::NotRecorded(output.id));
        }
        let nodes = self.nodes.borrow();
        if output.id >= nodes.len() {
            return Err(Error::NotRecorded(output.id));
        }
        let out_shape = nodes[output.id].value.shape();
        if seed.shape() != out_shape {
            return Err(shape_err("backward", format!("{out_shape:?}"), format!("{:?}", seed.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            // Intermediate gradients are released once propagated.
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward from a scalar (single-element) output with seed 1.
    pub fn backward_scalar(&self, output: Var<'_>) -> Result<Gradients> {
        let shape = output.value().shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(shape_err("backward_scalar", "single element", format!("{shape:?}")));
        }
        self.backward(output, Tensor::full(&shape, 1.0))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }
}

/// Gradients of leaf variables after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the variable did not influence the output.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with zeros substituted for variables that did not
    /// influence the output.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}
