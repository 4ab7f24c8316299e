//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only arena of eagerly evaluated nodes. Ops return
//! [`Var`] handles into the tape. [`Tape::grad`] walks the recorded graph
//! backwards and builds the adjoints *out of the same differentiable
//! primitives*, so the returned gradients are themselves tape nodes and a
//! second `grad` through them is valid (gradients of gradients, as needed by
//! the critic's gradient penalty).
//!
//! Tapes are single-threaded by construction (`RefCell` inside); run one
//! tape per thread. Node values are immutable once written.

mod kernels;

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Plain tensor storage living outside any tape (parameters, batches).
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> HostTensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                op: "host_tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(HostTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        HostTensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        HostTensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    /// Input, parameter or runtime constant; no gradient flows past it.
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    /// `[rows, len, ch] -> [rows*len, width*ch]` sliding windows, zero pad.
    Unfold1d { x: usize, width: usize },
    /// Adjoint of `Unfold1d`; scatter-adds back to `[rows, len, ch]`.
    Fold1d { g: usize, width: usize },
    Relu(usize),
    /// Softmax over the last axis.
    Softmax(usize),
    /// Sum over the last axis, keeping it as 1.
    RowSum(usize),
    /// Broadcast a trailing axis of 1 up to n.
    RowBcast(usize, usize),
    /// Sum over all leading axes: `[..., c] -> [c]`.
    ColSum(usize),
    /// Repeat a `[c]` vector into `[r, c]`.
    RowRepeat(usize, usize),
    SumAll(usize),
    /// Broadcast a scalar to the node's own shape.
    BcastAll(usize),
    /// `x [..., c] + bias [c]`, bias broadcast over leading axes.
    AddRowBcast(usize, usize),
    Sqrt(usize),
    Recip(usize),
}

struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Append-only record of primitive ops; see module docs.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded nodes (invalidates outstanding `Var`s).
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    fn push(&self, op: Op<T>, shape: Vec<usize>, data: Vec<T>) -> Var<'_, T> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, data });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn leaf(&self, shape: &[usize], data: Vec<T>) -> Result<Var<'_, T>> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data))
    }

    pub fn leaf_tensor(&self, t: &HostTensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, t.shape.clone(), t.data.clone())
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.push(Op::Leaf, vec![1], vec![v])
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_, T> {
        self.push(Op::Leaf, shape.to_vec(), vec![T::zero(); shape.iter().product()])
    }

    /// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
    ///
    /// The results are tape-recorded, so differentiating through them again
    /// is valid. A `wrt` that `output` does not depend on yields zeros.
    /// Adjoints are only propagated into subgraphs that can reach a `wrt`
    /// node, so unrelated branches cost nothing.
    pub fn grad<'s>(&'s self, output: Var<'s, T>, wrt: &[Var<'s, T>]) -> Result<Vec<Var<'s, T>>> {
        let out_id = output.id;
        {
            let nodes = self.nodes.borrow();
            if nodes[out_id].data.len() != 1 {
                return Err(Error::Shape {
                    op: "grad(output must be scalar)",
                    lhs: nodes[out_id].shape.clone(),
                    rhs: vec![1],
                });
            }
        }

        // needed[id]: some wrt node is reachable from id along input edges.
        let mut needed = vec![false; out_id + 1];
        for v in wrt {
            if v.id <= out_id {
                needed[v.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..=out_id {
                if !needed[id] {
                    needed[id] = op_inputs(&nodes[id].op).iter().any(|&i| needed[i]);
                }
            }
        }

        let mut adj: Vec<Option<Var<'s, T>>> = vec![None; out_id + 1];
        if needed[out_id] {
            adj[out_id] = Some(self.scalar(T::one()));
        }

        for id in (0..=out_id).rev() {
            let Some(g) = adj[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            let mut acc = |target: usize,
                           adj: &mut Vec<Option<Var<'s, T>>>,
                           contrib: &dyn Fn() -> Result<Var<'s, T>>|
             -> Result<()> {
                if !needed[target] {
                    return Ok(());
                }
                let c = contrib()?;
                adj[target] = Some(match adj[target] {
                    Some(prev) => prev.add(c)?,
                    None => c,
                });
                Ok(())
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(a, &mut adj, &|| Ok(g))?;
                    acc(b, &mut adj, &|| Ok(g))?;
                }
                Op::Mul(a, b) => {
                    let va = self.var(a);
                    let vb = self.var(b);
                    acc(a, &mut adj, &|| g.mul(vb))?;
                    acc(b, &mut adj, &|| g.mul(va))?;
                }
                Op::Scale(a, c) => acc(a, &mut adj, &|| g.scale(c))?,
                Op::AddScalar(a, _) => acc(a, &mut adj, &|| Ok(g))?,
                Op::Matmul(a, b) => {
                    let va = self.var(a);
                    let vb = self.var(b);
                    acc(a, &mut adj, &|| g.matmul(vb.t()?))?;
                    acc(b, &mut adj, &|| va.t()?.matmul(g))?;
                }
                Op::Transpose(a) => acc(a, &mut adj, &|| g.t())?,
                Op::Reshape(a) => {
                    let ashape = self.shape_of(a);
                    acc(a, &mut adj, &|| g.reshape(&ashape))?;
                }
                Op::Unfold1d { x, width } => {
                    let xs = self.shape_of(x);
                    acc(x, &mut adj, &|| g.fold1d(&xs, width))?;
                }
                Op::Fold1d { g: gin, width } => {
                    acc(gin, &mut adj, &|| g.unfold1d(width))?;
                }
                Op::Relu(a) => {
                    // d/dx relu = step(x); constant under further differentiation.
                    acc(a, &mut adj, &|| {
                        let (shape, data) = {
                            let nodes = self.nodes.borrow();
                            let src = &nodes[a];
                            let data: Vec<T> = src
                                .data
                                .iter()
                                .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
                                .collect();
                            (src.shape.clone(), data)
                        };
                        let mask = self.push(Op::Leaf, shape, data);
                        g.mul(mask)
                    })?;
                }
                Op::Softmax(a) => {
                    // dx = y * (g - rowsum(g*y)), with y this node's output.
                    let y = self.var(id);
                    let n = *self.shape_of(id).last().unwrap();
                    acc(a, &mut adj, &|| {
                        let gy = g.mul(y)?;
                        let inner = g.sub(gy.row_sum()?.row_bcast(n)?)?;
                        inner.mul(y)
                    })?;
                }
                Op::RowSum(a) => {
                    let n = *self.shape_of(a).last().unwrap();
                    acc(a, &mut adj, &|| g.row_bcast(n))?;
                }
                Op::RowBcast(a, _) => acc(a, &mut adj, &|| g.row_sum())?,
                Op::ColSum(a) => {
                    let ashape = self.shape_of(a);
                    let c = *ashape.last().unwrap();
                    let rows: usize = ashape.iter().product::<usize>() / c;
                    acc(a, &mut adj, &|| g.row_repeat(rows)?.reshape(&ashape))?;
                }
                Op::RowRepeat(a, _) => acc(a, &mut adj, &|| g.col_sum())?,
                Op::SumAll(a) => {
                    let ashape = self.shape_of(a);
                    acc(a, &mut adj, &|| g.bcast_all(&ashape))?;
                }
                Op::BcastAll(a) => acc(a, &mut adj, &|| g.sum_all())?,
                Op::AddRowBcast(x, bias) => {
                    acc(x, &mut adj, &|| Ok(g))?;
                    acc(bias, &mut adj, &|| g.col_sum())?;
                }
                Op::Sqrt(a) => {
                    // d sqrt = 0.5 / y
                    let y = self.var(id);
                    acc(a, &mut adj, &|| g.mul(y.recip()?.scale(T::fr(0.5))?))?;
                }
                Op::Recip(a) => {
                    // d(1/x) = -y^2
                    let y = self.var(id);
                    acc(a, &mut adj, &|| g.mul(y.mul(y)?.scale(-T::one())?))?;
                }
            }
        }

        wrt.iter()
            .map(|v| match adj.get(v.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.zeros(&self.shape_of(v.id))),
            })
            .collect()
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }
}

/// Input node ids of an op, for reachability marking.
fn op_inputs<T>(op: &Op<T>) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::AddRowBcast(a, b) => vec![a, b],
        Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Transpose(a)
        | Op::Reshape(a)
        | Op::Unfold1d { x: a, .. }
        | Op::Fold1d { g: a, .. }
        | Op::Relu(a)
        | Op::Softmax(a)
        | Op::RowSum(a)
        | Op::RowBcast(a, _)
        | Op::ColSum(a)
        | Op::RowRepeat(a, _)
        | Op::SumAll(a)
        | Op::BcastAll(a)
        | Op::Sqrt(a)
        | Op::Recip(a) => vec![a],
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].data.len()
    }

    /// Borrow the node's value buffer.
    pub fn data(&self) -> Ref<'t, [T]> {
        Ref::map(self.tape.nodes.borrow(), |n| n[self.id].data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().to_vec()
    }

    pub fn to_host(&self) -> HostTensor<T> {
        HostTensor {
            shape: self.shape(),
            data: self.to_vec(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data()[0]
    }

    pub fn has_non_finite(&self) -> bool {
        self.data().iter().any(|v| !v.is_finite())
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn binary_elementwise(
        &self,
        other: Var<'t, T>,
        opname: &'static str,
        make: fn(usize, usize) -> Op<T>,
        f: fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            if a.shape != b.shape {
                return Err(Error::Shape {
                    op: opname,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let data: Vec<T> = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), data)
        };
        Ok(self.tape.push(make(self.id, other.id), shape, data))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_elementwise(other, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.add(other.scale(-T::one())?)
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|&x| x * c).collect())
        };
        Ok(self.tape.push(Op::Scale(self.id, c), shape, data))
    }

    pub fn neg(&self) -> Result<Var<'t, T>> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|&x| x + c).collect())
        };
        Ok(self.tape.push(Op::AddScalar(self.id, c), shape, data))
    }

    pub fn square(&self) -> Result<Var<'t, T>> {
        self.mul(*self)
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (m, k, n, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![T::zero(); m * n];
            T::gemm_acc(m, k, n, &a.data, &b.data, &mut c);
            (m, k, n, c)
        };
        let _ = k;
        Ok(self.tape.push(Op::Matmul(self.id, other.id), vec![m, n], data))
    }

    pub fn t(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return Err(Error::Shape {
                    op: "transpose",
                    lhs: a.shape.clone(),
                    rhs: vec![0, 0],
                });
            }
            let (m, n) = (a.shape[0], a.shape[1]);
            let mut out = vec![T::zero(); m * n];
            kernels::transpose2d(&a.data, m, n, &mut out);
            (vec![n, m], out)
        };
        Ok(self.tape.push(Op::Transpose(self.id), shape, data))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Shape {
                    op: "reshape",
                    lhs: a.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            a.data.clone()
        };
        Ok(self.tape.push(Op::Reshape(self.id), shape.to_vec(), data))
    }

    pub fn unfold1d(&self, width: usize) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 3 || width == 0 {
                return Err(Error::Shape {
                    op: "unfold1d",
                    lhs: a.shape.clone(),
                    rhs: vec![width],
                });
            }
            let (rows, len, ch) = (a.shape[0], a.shape[1], a.shape[2]);
            let mut out = vec![T::zero(); rows * len * width * ch];
            kernels::unfold1d(&a.data, rows, len, ch, width, &mut out);
            (vec![rows * len, width * ch], out)
        };
        Ok(self.tape.push(Op::Unfold1d { x: self.id, width }, shape, data))
    }

    pub fn fold1d(&self, target: &[usize], width: usize) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if target.len() != 3 {
                return Err(Error::Shape {
                    op: "fold1d",
                    lhs: a.shape.clone(),
                    rhs: target.to_vec(),
                });
            }
            let (rows, len, ch) = (target[0], target[1], target[2]);
            if a.shape != [rows * len, width * ch] {
                return Err(Error::Shape {
                    op: "fold1d",
                    lhs: a.shape.clone(),
                    rhs: target.to_vec(),
                });
            }
            let mut out = vec![T::zero(); rows * len * ch];
            kernels::fold1d(&a.data, rows, len, ch, width, &mut out);
            (target.to_vec(), out)
        };
        Ok(self.tape.push(Op::Fold1d { g: self.id, width }, shape, data))
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let data = a
                .data
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect();
            (a.shape.clone(), data)
        };
        Ok(self.tape.push(Op::Relu(self.id), shape, data))
    }

    /// Softmax over the last axis; each row sums to 1.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let n = *a.shape.last().ok_or(Error::Shape {
                op: "softmax",
                lhs: a.shape.clone(),
                rhs: vec![],
            })?;
            let mut out = vec![T::zero(); a.data.len()];
            kernels::softmax_rows(&a.data, n, &mut out);
            (a.shape.clone(), out)
        };
        Ok(self.tape.push(Op::Softmax(self.id), shape, data))
    }

    /// Sum over the last axis, kept as a trailing axis of 1.
    pub fn row_sum(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let n = *a.shape.last().ok_or(Error::Shape {
                op: "row_sum",
                lhs: a.shape.clone(),
                rhs: vec![],
            })?;
            let rows = a.data.len() / n;
            let mut out = vec![T::zero(); rows];
            kernels::row_sum(&a.data, n, &mut out);
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = 1;
            (shape, out)
        };
        Ok(self.tape.push(Op::RowSum(self.id), shape, data))
    }

    /// Broadcast a trailing axis of 1 up to `n`.
    pub fn row_bcast(&self, n: usize) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.last() != Some(&1) {
                return Err(Error::Shape {
                    op: "row_bcast",
                    lhs: a.shape.clone(),
                    rhs: vec![n],
                });
            }
            let mut out = Vec::with_capacity(a.data.len() * n);
            for &v in &a.data {
                out.extend(std::iter::repeat(v).take(n));
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = n;
            (shape, out)
        };
        Ok(self.tape.push(Op::RowBcast(self.id, n), shape, data))
    }

    /// Sum over all leading axes: `[..., c] -> [c]`.
    pub fn col_sum(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let c = *a.shape.last().ok_or(Error::Shape {
                op: "col_sum",
                lhs: a.shape.clone(),
                rhs: vec![],
            })?;
            let mut out = vec![T::zero(); c];
            kernels::col_sum(&a.data, c, &mut out);
            (vec![c], out)
        };
        Ok(self.tape.push(Op::ColSum(self.id), shape, data))
    }

    /// Repeat a `[c]` vector into `[r, c]`.
    pub fn row_repeat(&self, r: usize) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 1 {
                return Err(Error::Shape {
                    op: "row_repeat",
                    lhs: a.shape.clone(),
                    rhs: vec![r],
                });
            }
            let mut out = Vec::with_capacity(a.data.len() * r);
            for _ in 0..r {
                out.extend_from_slice(&a.data);
            }
            (vec![r, a.shape[0]], out)
        };
        Ok(self.tape.push(Op::RowRepeat(self.id, r), shape, data))
    }

    pub fn sum_all(&self) -> Result<Var<'t, T>> {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let mut s = T::zero();
            for &v in &a.data {
                s += v;
            }
            vec![s]
        };
        Ok(self.tape.push(Op::SumAll(self.id), vec![1], data))
    }

    /// Broadcast a scalar to `shape`.
    pub fn bcast_all(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.data.len() != 1 {
                return Err(Error::Shape {
                    op: "bcast_all",
                    lhs: a.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            vec![a.data[0]; shape.iter().product()]
        };
        Ok(self.tape.push(Op::BcastAll(self.id), shape.to_vec(), data))
    }

    /// `self [..., c] + bias [c]`, bias broadcast over leading axes.
    pub fn affine(&self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[bias.id];
            let c = *a.shape.last().unwrap_or(&0);
            if b.shape.len() != 1 || b.shape[0] != c {
                return Err(Error::Shape {
                    op: "affine",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let mut out = a.data.clone();
            for row in out.chunks_exact_mut(c) {
                for (o, &bv) in row.iter_mut().zip(&b.data) {
                    *o += bv;
                }
            }
            (a.shape.clone(), out)
        };
        Ok(self
            .tape
            .push(Op::AddRowBcast(self.id, bias.id), shape, data))
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|v| v.sqrt()).collect())
        };
        Ok(self.tape.push(Op::Sqrt(self.id), shape, data))
    }

    pub fn recip(&self) -> Result<Var<'t, T>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.data.iter().map(|v| v.recip()).collect())
        };
        Ok(self.tape.push(Op::Recip(self.id), shape, data))
    }

    // ---- compositions ----

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let n = self.numel();
        self.sum_all()?.scale(T::one() / T::fr(n as f64))
    }

    /// Per-row Euclidean norm, `[..., c] -> [..., 1]`, with `eps` inside the
    /// square root so the gradient stays defined at zero rows.
    pub fn l2_norm_rows(&self, eps: T) -> Result<Var<'t, T>> {
        self.square()?.row_sum()?.add_scalar(eps)?.sqrt()
    }

    /// 1-D convolution, stride 1, zero same-padding.
    ///
    /// `self: [b, len, c_in]`, `w: [width*c_in, c_out]` where the row index
    /// is `dk*c_in + ci` for window offset `dk` (0 = leftmost tap).
    pub fn conv1d(&self, w: Var<'t, T>, width: usize) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 3 || ws.len() != 2 || ws[0] != width * xs[2] {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (b, len, c_out) = (xs[0], xs[1], ws[1]);
        let u = self.unfold1d(width)?;
        let y = u.matmul(w)?;
        y.reshape(&[b, len, c_out])
    }
}
