//! Define-by-run reverse-mode differentiation.
//!
//! Every differentiable operation on [`Variable`]s records a [`FunctionNode`]
//! at call time, provided at least one input requires a gradient. The graph
//! is walked backwards from a scalar loss in strictly decreasing generation
//! order, so a node runs only after every consumer of its output has
//! contributed a gradient.

mod gradcheck;
mod ops;

use std::cell::{Cell, RefCell};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::backend::{BufferId, Retain};
use crate::deferred::Deferred;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_with, relative_error, GradCheckReport};
pub use ops::{conv2d, linear, softmax_cross_entropy};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Operation recorded by a [`FunctionNode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    MatMul,
    Relu,
    Reshape,
    Transpose,
    Sum,
    Conv2d,
    Linear,
    SoftmaxCrossEntropy,
}

/// Maps the upstream gradient of a node's output to one optional gradient
/// per input. `None` means the input receives no contribution.
type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Result<Vec<Option<Tensor>>>>;

pub struct FunctionNode {
    id: u64,
    op: OpKind,
    inputs: Vec<Variable>,
    generation: u64,
    output: u64,
    backward: BackwardFn,
}

impl FunctionNode {
    pub fn op_kind(&self) -> OpKind {
        self.op
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn inputs(&self) -> &[Variable] {
        &self.inputs
    }
}

impl fmt::Debug for FunctionNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionNode")
            .field("id", &self.id)
            .field("op", &self.op)
            .field("generation", &self.generation)
            .field("inputs", &self.inputs.len())
            .finish()
    }
}

struct VarNode {
    id: u64,
    data: RefCell<Tensor>,
    grad: RefCell<Option<Tensor>>,
    creator: Option<Rc<FunctionNode>>,
    requires_grad: bool,
    retain_grad: Cell<bool>,
}

/// A tensor plus the graph bookkeeping needed to differentiate through it.
/// Cloning shares the same node.
#[derive(Clone)]
pub struct Variable(Rc<VarNode>);

impl Variable {
    fn build(data: Tensor, requires_grad: bool, creator: Option<Rc<FunctionNode>>) -> Variable {
        Variable(Rc::new(VarNode {
            id: next_id(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            creator,
            requires_grad,
            retain_grad: Cell::new(false),
        }))
    }

    /// A leaf holding `data`.
    pub fn new(data: Tensor, requires_grad: bool) -> Variable {
        Self::build(data, requires_grad, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(data: Tensor) -> Variable {
        Self::new(data, false)
    }

    /// A trainable leaf.
    pub fn parameter(data: Tensor) -> Variable {
        Self::new(data, true)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> Tensor {
        self.0.data.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.data.borrow().shape().to_vec()
    }

    /// Replaces the data of a leaf. Shape must be unchanged.
    pub fn set_data(&self, data: Tensor) -> Result<()> {
        let mut slot = self.0.data.borrow_mut();
        if slot.shape() != data.shape() || slot.dtype() != data.dtype() {
            return Err(Error::shape("set_data", slot.shape(), data.shape()));
        }
        *slot = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    pub fn set_grad(&self, grad: Option<Tensor>) -> Result<()> {
        if let Some(g) = &grad {
            let data = self.0.data.borrow();
            if g.shape() != data.shape() || g.dtype() != data.dtype() {
                return Err(Error::shape("set_grad", data.shape(), g.shape()));
            }
        }
        *self.0.grad.borrow_mut() = grad;
        Ok(())
    }

    /// Clears the gradient entirely rather than zero-filling it.
    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.creator.is_none()
    }

    pub fn creator(&self) -> Option<&Rc<FunctionNode>> {
        self.0.creator.as_ref()
    }

    /// Generation of the creating node, 0 for leaves.
    pub fn generation(&self) -> u64 {
        self.0.creator.as_ref().map_or(0, |c| c.generation)
    }

    /// Keeps this non-leaf's gradient after [`Variable::backward`].
    pub fn retain_grad(&self) {
        self.0.retain_grad.set(true);
    }

    /// Reverse-mode pass from this scalar. Gradients accumulate into the
    /// `grad` of every reachable leaf that requires one.
    pub fn backward(&self) -> Deferred<()> {
        Deferred::ready(self.run_backward())
    }

    fn run_backward(&self) -> Result<()> {
        let data = self.data();
        if data.numel() != 1 || data.rank() > 1 {
            return Err(Error::NonScalarLoss(data.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let seed = data.sibling_f32(vec![1.0], data.shape().to_vec());

        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(self.id(), seed);
        let mut keep: Vec<Variable> = Vec::new();
        let mut queue: BinaryHeap<(u64, u64)> = BinaryHeap::new();
        let mut nodes: HashMap<u64, Rc<FunctionNode>> = HashMap::new();

        let visit = |var: &Variable,
                         queue: &mut BinaryHeap<(u64, u64)>,
                         nodes: &mut HashMap<u64, Rc<FunctionNode>>,
                         keep: &mut Vec<Variable>| {
            match &var.0.creator {
                Some(node) => {
                    if let std::collections::hash_map::Entry::Vacant(slot) = nodes.entry(node.id) {
                        slot.insert(node.clone());
                        queue.push((node.generation, node.id));
                    }
                    if var.0.retain_grad.get() {
                        keep.push(var.clone());
                    }
                }
                None => keep.push(var.clone()),
            }
        };
        visit(self, &mut queue, &mut nodes, &mut keep);

        while let Some((_, node_id)) = queue.pop() {
            let node = nodes.remove(&node_id).expect("queued node is registered");
            let Some(upstream) = grads.get(&node.output).cloned() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Variable::requires_grad).collect();
            let input_grads = (node.backward)(&upstream, &needs)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                let first = !grads.contains_key(&input.id());
                accumulate(&mut grads, input.id(), g)?;
                if first {
                    visit(input, &mut queue, &mut nodes, &mut keep);
                }
            }
            // Nothing downstream of this node will read its output gradient
            // again; drop it unless asked to keep it.
            if !keep.iter().any(|v| v.id() == node.output) {
                grads.remove(&node.output);
            }
        }

        for var in keep {
            if let Some(g) = grads.remove(&var.id()) {
                let merged = match var.grad() {
                    Some(prev) => prev.add(&g)?,
                    None => g,
                };
                var.set_grad(Some(merged))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut HashMap<u64, Tensor>, id: u64, g: Tensor) -> Result<()> {
    let merged = match grads.remove(&id) {
        Some(prev) => prev.add(&g)?,
        None => g,
    };
    grads.insert(id, merged);
    Ok(())
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Variable")
            .field("id", &self.0.id)
            .field("data", &*self.0.data.borrow())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.creator.as_ref().map(|c| c.op))
            .finish()
    }
}

impl Retain for Variable {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        out.push(self.0.data.borrow().buffer_id());
        if let Some(g) = &*self.0.grad.borrow() {
            out.push(g.buffer_id());
        }
    }
}

/// Records a node for `inputs` when any of them requires a gradient;
/// otherwise returns a constant.
pub(crate) fn record(op: OpKind, inputs: &[&Variable], data: Tensor, backward: BackwardFn) -> Variable {
    if !inputs.iter().any(|v| v.requires_grad()) {
        return Variable::constant(data);
    }
    let generation = inputs.iter().map(|v| v.generation()).max().unwrap_or(0) + 1;
    let output = next_id();
    let node = Rc::new(FunctionNode {
        id: next_id(),
        op,
        inputs: inputs.iter().map(|&v| v.clone()).collect(),
        generation,
        output,
        backward,
    });
    Variable(Rc::new(VarNode {
        id: output,
        data: RefCell::new(data),
        grad: RefCell::new(None),
        creator: Some(node),
        requires_grad: true,
        retain_grad: Cell::new(false),
    }))
}
