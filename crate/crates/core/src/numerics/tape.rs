//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to its variables. Calling
//! [`Tape::backward`] on a scalar output replays the record in reverse and
//! returns the gradient of that scalar with respect to every recorded node.
//!
//! ```
//! use coopgame::numerics::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::scalar(3.0));
//! let y = x.mul(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```
//!
//! Mixing variables from two tapes in one primitive is a programming error
//! and panics; handing a foreign variable to `backward` returns
//! [`Error::Detached`].

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    MulConst(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("tape", &self.tape.id)
            .field("idx", &self.idx)
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Tracked leaf: gradients are reported for it.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf: participates in values only.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Requires that no [`Var`] is alive.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    /// Stacks row blocks of equal width.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let nodes = self.nodes.borrow();
        let cols = nodes[parts[0].idx].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for p in parts {
            self.check_owner(*p);
            let n = &nodes[p.idx];
            assert_eq!(n.value.cols(), cols, "concat_rows width mismatch");
            rows += n.value.rows();
            data.extend_from_slice(n.value.data());
            rg |= n.requires_grad;
        }
        drop(nodes);
        let value = Tensor::from_parts(vec![rows, cols], data);
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.idx).collect()), rg)
    }

    /// Gradient of the scalar `output` with respect to every recorded node.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) || output.tape.id != self.id {
            return Err(Error::Detached);
        }
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.idx];
        if out_node.value.numel() != 1 {
            return Err(Error::NotScalar(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.idx] = Some(Tensor::filled(out_node.value.shape(), 1.0));

        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn check_owner(&self, v: Var<'_>) {
        assert!(
            std::ptr::eq(v.tape, self),
            "variable from a different tape used in a primitive"
        );
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let needs = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                accumulate(grads, *b, g.clone());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                accumulate(grads, *b, g.map(|v| -v));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(&nodes[*b].value, |x, y| x * y));
            }
            if needs(*b) {
                accumulate(grads, *b, g.zip_map(&nodes[*a].value, |x, y| x * y));
            }
        }
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, matmul_nt(g, &nodes[*b].value));
            }
            if needs(*b) {
                accumulate(grads, *b, matmul_tn(&nodes[*a].value, g));
            }
        }
        Op::AddRow(a, row) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*row) {
                let cols = g.cols();
                let mut sums = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (s, v) in sums.iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                accumulate(grads, *row, Tensor::from_parts(vec![1, cols], sums));
            }
        }
        Op::Scale(a, s) => {
            if needs(*a) {
                accumulate(grads, *a, g.map(|v| v * s));
            }
        }
        Op::Shift(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
        }
        Op::Tanh(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)));
            }
        }
        Op::Sigmoid(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)));
            }
        }
        Op::Exp(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(&node.value, |gv, y| gv * y));
            }
        }
        Op::Square(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(&nodes[*a].value, |gv, x| 2.0 * gv * x));
            }
        }
        Op::Sum(a) => {
            if needs(*a) {
                accumulate(grads, *a, Tensor::filled(nodes[*a].value.shape(), g.data()[0]));
            }
        }
        Op::SliceRows(a, start) => {
            if needs(*a) {
                let parent = &nodes[*a].value;
                let mut full = Tensor::zeros(parent.shape());
                let c = parent.cols();
                full.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                accumulate(grads, *a, full);
            }
        }
        Op::SliceCols(a, start) => {
            if needs(*a) {
                let parent = &nodes[*a].value;
                let mut full = Tensor::zeros(parent.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    full.row_mut(r)[*start..start + w].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, full);
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let rows = nodes[p].value.rows();
                if needs(p) {
                    accumulate(grads, p, g.slice_rows(offset, offset + rows));
                }
                offset += rows;
            }
        }
        Op::MulConst(a, k) => {
            if needs(*a) {
                accumulate(grads, *a, g.zip_map(k, |x, y| x * y));
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` did not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        assert_eq!(v.tape.id, self.tape, "gradient lookup with a foreign variable");
        match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.idx]),
        }
    }

    /// Like [`wrt`](Self::wrt) but returns `None` for untouched nodes.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        assert_eq!(v.tape.id, self.tape, "gradient lookup with a foreign variable");
        self.grads[v.idx].as_ref()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrowed view of the recorded value.
    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.idx].value)
    }

    pub fn value(&self) -> Tensor {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn scalar(&self) -> f64 {
        let v = self.value_ref();
        assert_eq!(v.numel(), 1, "scalar() on non-scalar variable");
        v.data()[0]
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.idx];
            (f(&n.value), n.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
    ) -> Var<'t> {
        self.tape.check_owner(other);
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx], &nodes[other.idx]);
            (f(&a.value, &b.value), a.requires_grad || b.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.idx, other.idx), |a, b| {
            assert_eq!(a.shape(), b.shape(), "add shape mismatch");
            a.zip_map(b, |x, y| x + y)
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.idx, other.idx), |a, b| {
            assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
            a.zip_map(b, |x, y| x - y)
        })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.idx, other.idx), |a, b| {
            assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
            a.zip_map(b, |x, y| x * y)
        })
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::MatMul(self.idx, other.idx), |a, b| {
            assert_eq!(a.cols(), b.rows(), "matmul {:?} x {:?}", a.shape(), b.shape());
            matmul_raw(a, b)
        })
    }

    /// Adds a `1 x C` row to every row of an `R x C` matrix.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::AddRow(self.idx, row.idx), |a, r| {
            assert_eq!(r.shape(), [1, a.cols()], "add_row shape mismatch");
            let mut out = a.clone();
            let c = a.cols();
            for chunk in out.data_mut().chunks_mut(c) {
                for (o, v) in chunk.iter_mut().zip(r.data()) {
                    *o += v;
                }
            }
            out
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, s), |a| a.map(|v| v * s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::Shift(self.idx), |a| a.map(|v| v + s))
    }

    /// Subtracts a constant tensor of the same shape.
    pub fn sub_const(self, k: &Tensor) -> Var<'t> {
        self.unary(Op::Shift(self.idx), |a| {
            assert_eq!(a.shape(), k.shape(), "sub_const shape mismatch");
            a.zip_map(k, |x, y| x - y)
        })
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(self, k: &Tensor) -> Var<'t> {
        self.unary(Op::MulConst(self.idx, k.clone()), |a| {
            assert_eq!(a.shape(), k.shape(), "mul_const shape mismatch");
            a.zip_map(k, |x, y| x * y)
        })
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.idx), |a| a.map(f64::tanh))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), |a| a.map(sigmoid))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), |a| a.map(f64::exp))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |a| a.map(|v| v * v))
    }

    /// Sum of all entries as a `[1, 1]` scalar.
    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.idx), |a| Tensor::scalar(a.sum()))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        self.unary(Op::SliceRows(self.idx, start), |a| {
            assert!(start <= end && end <= a.rows(), "slice_rows out of range");
            a.slice_rows(start, end)
        })
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.unary(Op::SliceCols(self.idx, start), |a| {
            assert!(start <= end && end <= a.cols(), "slice_cols out of range");
            let w = end - start;
            let mut data = Vec::with_capacity(a.rows() * w);
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row(r)[start..end]);
            }
            Tensor::from_parts(vec![a.rows(), w], data)
        })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(5.0));
        let g = tape.backward(x).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = x.mul(x);
        assert_eq!(tape.backward(y).unwrap().wrt(x).data(), &[6.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_output_is_detached() {
        let a = Tape::new();
        let b = Tape::new();
        let x = b.var(Tensor::scalar(1.0));
        assert!(matches!(a.backward(x), Err(Error::Detached)));
    }

    #[test]
    fn untouched_variable_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let unused = tape.var(Tensor::zeros(&[2, 3]));
        let y = x.square();
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let k = tape.constant(Tensor::scalar(4.0));
        let y = x.mul(k);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[4.0]);
        assert!(g.get(k).is_none());
    }

    #[test]
    fn reused_variable_accumulates() {
        // y = x*x + 3x at x = 2 -> dy/dx = 7
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(2.0));
        let y = x.mul(x).add(x.scale(3.0));
        assert_eq!(tape.backward(y).unwrap().wrt(x).data(), &[7.0]);
    }

    #[test]
    fn reset_clears_nodes() {
        let mut tape = Tape::new();
        {
            let x = tape.var(Tensor::scalar(1.0));
            let _ = x.exp();
        }
        assert_eq!(tape.len(), 2);
        tape.reset();
        assert!(tape.is_empty());
    }
}
