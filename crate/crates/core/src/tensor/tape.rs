use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::gemm::{gemm, Mat};
use super::params::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_tape_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Log,
    Clamp01,
    PowScalar(f64),
    Relu,
    Sigmoid,
    /// Huber penalty with the given threshold.
    Huber(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Axes {
    All,
    Only(Vec<usize>),
}

#[derive(Debug)]
struct ConvGeometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Reduce {
        kind: Reduce,
        a: usize,
        group_of: Vec<usize>,
        group_sizes: Vec<usize>,
    },
    Affine {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        input: usize,
        kernels: usize,
        bias: usize,
        geom: ConvGeometry,
        // im2col buffers, one [patch_len, positions] block per batch item;
        // empty when the kernels need no gradient.
        cols: Vec<f64>,
    },
    Reshape {
        a: usize,
    },
    Gather {
        a: usize,
        indices: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
    },
    PowerMean {
        a: usize,
        p: f64,
        // Group index per input element, `None` when masked out.
        group_of: Vec<Option<usize>>,
        // Per group: count, max magnitude, and mean of (x/max)^p.
        stats: Vec<(usize, f64, f64)>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive operations, replayed in reverse by [`Tape::backward`].
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps every flat index of `shape` to its group after removing `axes`.
fn reduction_groups(shape: &[usize], axes: &Axes) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    match axes {
        Axes::All => reduced.iter_mut().for_each(|r| *r = true),
        Axes::Only(list) => {
            for &axis in list {
                if axis >= rank {
                    return Err(TensorError::InvalidAxis { axis, rank });
                }
                reduced[axis] = true;
            }
        }
    }
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    // Stride of each input axis in the output index space (0 for reduced axes).
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for axis in (0..rank).rev() {
        if !reduced[axis] {
            out_strides[axis] = acc;
            acc *= shape[axis];
        }
    }
    let total: usize = shape.iter().product();
    let mut group_of = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    for _ in 0..total {
        group_of.push(counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum());
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            if counter[axis] < shape[axis] {
                break;
            }
            counter[axis] = 0;
        }
    }
    Ok((out_shape, group_of))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: fresh_tape_id(),
            nodes: Vec::new(),
        }
    }

    /// Drops every recorded node; previously issued [`Var`]s become stale.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_tape_id();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::StaleReference);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.index(v)?])
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.node(v)?.value.shape())
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64> {
        let t = self.value(v)?;
        t.item()
            .ok_or_else(|| TensorError::NonScalarRoot(t.shape().to_vec()))
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    fn push(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        // Nodes without gradient flow never need their backward metadata.
        let op = if requires_grad || matches!(op, Op::Param { .. }) {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn grad_any(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Arc::new(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Records a trainable parameter; its gradient is reported by [`Gradients::for_store`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.shared(id);
        self.push(
            value,
            Op::Param {
                store: store.uid(),
                id,
            },
            true,
        )
    }

    /// Records a parameter as a constant (no gradient), sharing its storage.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.shared(id), Op::Leaf, false)
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let op_name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = if ta.shape() == tb.shape() {
            ta.shape().to_vec()
        } else if ta.is_scalar() && tb.is_scalar() {
            // Both single-valued: keep the higher-rank shape.
            if ta.rank() >= tb.rank() { ta.shape() } else { tb.shape() }.to_vec()
        } else if tb.is_scalar() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        let n = out_shape.iter().product::<usize>();
        let (da, db) = (ta.data(), tb.data());
        let at = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
        let bt = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (at(i), bt(i));
            let v = match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => {
                    if y == 0.0 {
                        return Err(TensorError::Domain {
                            op: "div",
                            index: i,
                            value: y,
                        });
                    }
                    x / y
                }
            };
            out.push(v);
        }
        check_finite(op_name, &out)?;
        let rg = self.grad_any(&[ia, ib]);
        Ok(self.push(
            Arc::new(Tensor::from_parts(out_shape, out)),
            Op::Binary { kind, a: ia, b: ib },
            rg,
        ))
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = &self.nodes[ia].value;
        let op_name = match kind {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Clamp01 => "clamp01",
            UnaryKind::PowScalar(_) => "pow_scalar",
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Huber(_) => "huber",
        };
        let mut out = Vec::with_capacity(ta.len());
        for (i, &x) in ta.data().iter().enumerate() {
            let v = match kind {
                UnaryKind::Neg => -x,
                UnaryKind::Exp => x.exp(),
                UnaryKind::Log => {
                    if x <= 0.0 {
                        return Err(TensorError::Domain {
                            op: "log",
                            index: i,
                            value: x,
                        });
                    }
                    x.ln()
                }
                UnaryKind::Clamp01 => x.clamp(0.0, 1.0),
                UnaryKind::PowScalar(p) => {
                    if (x < 0.0 && p.fract() != 0.0) || (x == 0.0 && p < 0.0) {
                        return Err(TensorError::Domain {
                            op: "pow_scalar",
                            index: i,
                            value: x,
                        });
                    }
                    x.powf(p)
                }
                UnaryKind::Relu => x.max(0.0),
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Huber(delta) => {
                    let m = x.abs();
                    if m <= delta {
                        0.5 * x * x
                    } else {
                        delta * (m - 0.5 * delta)
                    }
                }
            };
            out.push(v);
        }
        check_finite(op_name, &out)?;
        let shape = ta.shape().to_vec();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(
            Arc::new(Tensor::from_parts(shape, out)),
            Op::Unary { kind, a: ia },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn clamp01(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Clamp01, a)
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(UnaryKind::PowScalar(p), a)
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        self.unary(UnaryKind::Huber(delta), a)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var> {
        match kind {
            Activation::Relu => self.unary(UnaryKind::Relu, a),
            Activation::Sigmoid => self.unary(UnaryKind::Sigmoid, a),
        }
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    /// `1 - a`, the standard fuzzy complement.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let one = self.scalar(1.0);
        self.sub(one, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let s = self.scalar(factor);
        self.mul(a, s)
    }

    pub fn reduce(&mut self, kind: Reduce, a: Var, axes: &Axes) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = &self.nodes[ia].value;
        let (out_shape, group_of) = reduction_groups(ta.shape(), axes)?;
        let groups = out_shape.iter().product::<usize>();
        let mut group_sizes = vec![0usize; groups];
        for &g in &group_of {
            group_sizes[g] += 1;
        }
        let out = match kind {
            Reduce::Sum | Reduce::Mean => {
                let mut acc = vec![0.0; groups];
                for (&g, &x) in group_of.iter().zip(ta.data()) {
                    acc[g] += x;
                }
                if kind == Reduce::Mean {
                    for (v, &n) in acc.iter_mut().zip(&group_sizes) {
                        *v /= n as f64;
                    }
                }
                acc
            }
            Reduce::Max => {
                let mut acc = vec![f64::NEG_INFINITY; groups];
                for (&g, &x) in group_of.iter().zip(ta.data()) {
                    if x > acc[g] {
                        acc[g] = x;
                    }
                }
                acc
            }
        };
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(
            Arc::new(Tensor::from_parts(out_shape, out)),
            Op::Reduce {
                kind,
                a: ia,
                group_of,
                group_sizes,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, a, &Axes::All)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, a, &Axes::All)
    }

    /// `x . w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.index(x)?, self.index(w)?, self.index(b)?);
        let (tx, tw, tb) = (
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            &self.nodes[ib].value,
        );
        let mismatch = |l: &Tensor, r: &Tensor| TensorError::ShapeMismatch {
            op: "affine",
            left: l.shape().to_vec(),
            right: r.shape().to_vec(),
        };
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[0] {
            return Err(mismatch(tx, tw));
        }
        let (batch, inp, outp) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
        if tb.shape() != [outp] {
            return Err(mismatch(tw, tb));
        }
        let mut out = Vec::with_capacity(batch * outp);
        for _ in 0..batch {
            out.extend_from_slice(tb.data());
        }
        gemm(
            Mat::new(tx.data(), batch, inp),
            Mat::new(tw.data(), inp, outp),
            1.0,
            &mut out,
        );
        check_finite("affine", &out)?;
        let rg = self.grad_any(&[ix, iw, ib]);
        Ok(self.push(
            Arc::new(Tensor::from_parts(vec![batch, outp], out)),
            Op::Affine {
                x: ix,
                w: iw,
                b: ib,
            },
            rg,
        ))
    }

    /// Valid cross-correlation of `input` (`[c,h,w]` or `[n,c,h,w]`) with
    /// `kernels: [c_out,c_in,kh,kw]`, plus a per-channel `bias`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let (ii, ik, ib) = (self.index(input)?, self.index(kernels)?, self.index(bias)?);
        let (ti, tk, tb) = (
            &self.nodes[ii].value,
            &self.nodes[ik].value,
            &self.nodes[ib].value,
        );
        if stride == 0 {
            return Err(TensorError::Invalid("conv2d stride must be positive".into()));
        }
        let (batch, c_in, h, w) = match ti.shape() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    left: ti.shape().to_vec(),
                    right: tk.shape().to_vec(),
                })
            }
        };
        let (c_out, kh, kw) = match tk.shape() {
            [co, ci, kh, kw] if *ci == c_in => (*co, *kh, *kw),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    left: ti.shape().to_vec(),
                    right: tk.shape().to_vec(),
                })
            }
        };
        if tb.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: tk.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        if kh > h || kw > w {
            return Err(TensorError::KernelTooLarge {
                kernel: (kh, kw),
                input: (h, w),
            });
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
            stride,
        };
        let (pl, pos) = (geom.patch_len(), geom.positions());
        let mut cols = vec![0.0; batch * pl * pos];
        let item_in = c_in * h * w;
        for n in 0..batch {
            im2col(
                &ti.data()[n * item_in..(n + 1) * item_in],
                &geom,
                &mut cols[n * pl * pos..(n + 1) * pl * pos],
            );
        }
        let item_out = c_out * pos;
        let mut out = vec![0.0; batch * item_out];
        for n in 0..batch {
            let block = &mut out[n * item_out..(n + 1) * item_out];
            for (co, row) in block.chunks_mut(pos).enumerate() {
                row.fill(tb.data()[co]);
            }
            gemm(
                Mat::new(tk.data(), c_out, pl),
                Mat::new(&cols[n * pl * pos..(n + 1) * pl * pos], pl, pos),
                1.0,
                block,
            );
        }
        check_finite("conv2d", &out)?;
        let out_shape = if ti.rank() == 3 {
            vec![c_out, geom.oh, geom.ow]
        } else {
            vec![batch, c_out, geom.oh, geom.ow]
        };
        let rg = self.grad_any(&[ii, ik, ib]);
        if !self.nodes[ik].requires_grad {
            cols = Vec::new();
        }
        Ok(self.push(
            Arc::new(Tensor::from_parts(out_shape, out)),
            Op::Conv2d {
                input: ii,
                kernels: ik,
                bias: ib,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ia = self.index(a)?;
        let t = self.nodes[ia].value.reshape(shape)?;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Arc::new(t), Op::Reshape { a: ia }, rg))
    }

    /// `out.flat[i] = a.flat[indices[i]]`, shaped as `shape`.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = &self.nodes[ia].value;
        if shape.iter().product::<usize>() != indices.len() || indices.is_empty() {
            return Err(TensorError::Invalid(format!(
                "gather shape {shape:?} does not hold {} indices",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ta.len()) {
            return Err(TensorError::Invalid(format!(
                "gather index {bad} out of range for {} values",
                ta.len()
            )));
        }
        let out: Vec<f64> = indices.iter().map(|&i| ta.data()[i]).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(
            Arc::new(Tensor::from_parts(shape, out)),
            Op::Gather { a: ia, indices },
            rg,
        ))
    }

    /// Flattens and concatenates `parts` into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("cannot concatenate zero tensors".into()));
        }
        let idx = parts
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for &i in &idx {
            out.extend_from_slice(self.nodes[i].value.data());
        }
        let rg = self.grad_any(&idx);
        let n = out.len();
        Ok(self.push(
            Arc::new(Tensor::from_parts(vec![n], out)),
            Op::Concat { parts: idx },
            rg,
        ))
    }

    /// Selects whole rows (first-axis slices) of `a`.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a)?.to_vec();
        let row_len: usize = shape[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(TensorError::Invalid(format!(
                "row {bad} out of range for {} rows",
                shape[0]
            )));
        }
        let indices = rows
            .iter()
            .flat_map(|&r| (r * row_len)..((r + 1) * row_len))
            .collect();
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        self.gather(a, indices, out_shape)
    }

    /// Power mean `(mean x^p)^(1/p)` of non-negative entries over `axes`,
    /// counting only entries where `mask` holds. Groups with no selected entry
    /// evaluate to 0.
    pub fn power_mean(
        &mut self,
        a: Var,
        p: f64,
        axes: &Axes,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(TensorError::Invalid(format!("power mean exponent {p}")));
        }
        let ia = self.index(a)?;
        let ta = &self.nodes[ia].value;
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(TensorError::Invalid(format!(
                    "mask of length {} for {} values",
                    m.len(),
                    ta.len()
                )));
            }
        }
        if let Some(index) = ta.data().iter().position(|&x| x < 0.0) {
            return Err(TensorError::Domain {
                op: "power_mean",
                index,
                value: ta.data()[index],
            });
        }
        let (out_shape, groups) = reduction_groups(ta.shape(), axes)?;
        let n_groups = out_shape.iter().product::<usize>();
        let group_of: Vec<Option<usize>> = groups
            .iter()
            .enumerate()
            .map(|(i, &g)| match mask {
                Some(m) if !m[i] => None,
                _ => Some(g),
            })
            .collect();
        let mut counts = vec![0usize; n_groups];
        let mut maxes = vec![0.0f64; n_groups];
        for (g, &x) in group_of.iter().zip(ta.data()) {
            if let Some(g) = *g {
                counts[g] += 1;
                maxes[g] = maxes[g].max(x);
            }
        }
        let mut sums = vec![0.0; n_groups];
        for (g, &x) in group_of.iter().zip(ta.data()) {
            if let Some(g) = *g {
                if maxes[g] > 0.0 {
                    sums[g] += (x / maxes[g]).powf(p);
                }
            }
        }
        let mut stats = Vec::with_capacity(n_groups);
        let mut out = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let mean = if counts[g] > 0 {
                sums[g] / counts[g] as f64
            } else {
                0.0
            };
            out.push(if maxes[g] > 0.0 {
                maxes[g] * mean.powf(1.0 / p)
            } else {
                0.0
            });
            stats.push((counts[g], maxes[g], mean));
        }
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(
            Arc::new(Tensor::from_parts(out_shape, out)),
            Op::PowerMean {
                a: ia,
                p,
                group_of,
                stats,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let ir = self.index(root)?;
        let root_value = &self.nodes[ir].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[ir] = Some(vec![1.0]);
        for i in (0..=ir).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        let mut by_node = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let g = g.map(|g| Tensor::from_parts(node.value.shape().to_vec(), g));
            if let (Op::Param { store, id }, Some(_)) = (&node.op, &g) {
                params.push((*store, *id, by_node.len()));
            }
            by_node.push(g);
        }
        Ok(Gradients {
            tape: self.id,
            by_node,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Binary { kind, a, b } => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                let at = |k: usize| if va.len() == 1 { va[0] } else { va[k] };
                let bt = |k: usize| if vb.len() == 1 { vb[0] } else { vb[k] };
                if wants(*a) {
                    let ga: Vec<f64> = (0..g.len())
                        .map(|k| match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[k],
                            BinaryKind::Mul => g[k] * bt(k),
                            BinaryKind::Div => g[k] / bt(k),
                        })
                        .collect();
                    accumulate_broadcast(grads, *a, va.len(), ga);
                }
                if wants(*b) {
                    let gb: Vec<f64> = (0..g.len())
                        .map(|k| match kind {
                            BinaryKind::Add => g[k],
                            BinaryKind::Sub => -g[k],
                            BinaryKind::Mul => g[k] * at(k),
                            BinaryKind::Div => -g[k] * at(k) / (bt(k) * bt(k)),
                        })
                        .collect();
                    accumulate_broadcast(grads, *b, vb.len(), gb);
                }
            }
            Op::Unary { kind, a } => {
                if !wants(*a) {
                    return;
                }
                let x = nodes[*a].value.data();
                let y = node.value.data();
                let ga: Vec<f64> = (0..g.len())
                    .map(|k| {
                        let d = match kind {
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Exp => y[k],
                            UnaryKind::Log => 1.0 / x[k],
                            UnaryKind::Clamp01 => {
                                if (0.0..=1.0).contains(&x[k]) {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::PowScalar(p) => {
                                if x[k] == 0.0 && *p < 1.0 {
                                    // Unbounded slope at the origin; use the zero subgradient.
                                    0.0
                                } else {
                                    p * x[k].powf(p - 1.0)
                                }
                            }
                            UnaryKind::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Sigmoid => y[k] * (1.0 - y[k]),
                            UnaryKind::Huber(delta) => {
                                if x[k].abs() <= *delta {
                                    x[k]
                                } else {
                                    delta * x[k].signum()
                                }
                            }
                        };
                        g[k] * d
                    })
                    .collect();
                accumulate(grads, *a, ga);
            }
            Op::Reduce {
                kind,
                a,
                group_of,
                group_sizes,
            } => {
                if !wants(*a) {
                    return;
                }
                let x = nodes[*a].value.data();
                let mut ga = vec![0.0; x.len()];
                match kind {
                    Reduce::Sum => {
                        for (k, &grp) in group_of.iter().enumerate() {
                            ga[k] = g[grp];
                        }
                    }
                    Reduce::Mean => {
                        for (k, &grp) in group_of.iter().enumerate() {
                            ga[k] = g[grp] / group_sizes[grp] as f64;
                        }
                    }
                    Reduce::Max => {
                        let y = node.value.data();
                        let mut taken = vec![false; y.len()];
                        for (k, &grp) in group_of.iter().enumerate() {
                            if !taken[grp] && x[k] == y[grp] {
                                ga[k] = g[grp];
                                taken[grp] = true;
                            }
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Affine { x, w, b } => {
                let tx = &nodes[*x].value;
                let tw = &nodes[*w].value;
                let (batch, inp) = (tx.shape()[0], tx.shape()[1]);
                let outp = tw.shape()[1];
                if wants(*x) {
                    let mut gx = vec![0.0; batch * inp];
                    gemm(
                        Mat::new(g, batch, outp),
                        Mat::new(tw.data(), inp, outp).t(),
                        0.0,
                        &mut gx,
                    );
                    accumulate(grads, *x, gx);
                }
                if wants(*w) {
                    let mut gw = vec![0.0; inp * outp];
                    gemm(
                        Mat::new(tx.data(), batch, inp).t(),
                        Mat::new(g, batch, outp),
                        0.0,
                        &mut gw,
                    );
                    accumulate(grads, *w, gw);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; outp];
                    for row in g.chunks(outp) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            } => {
                let (pl, pos) = (geom.patch_len(), geom.positions());
                let item_out = geom.c_out * pos;
                if wants(*bias) {
                    let mut gb = vec![0.0; geom.c_out];
                    for item in g.chunks(item_out) {
                        for (co, row) in item.chunks(pos).enumerate() {
                            gb[co] += row.iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, *bias, gb);
                }
                if wants(*kernels) {
                    let mut gk = vec![0.0; geom.c_out * pl];
                    for n in 0..geom.batch {
                        gemm(
                            Mat::new(&g[n * item_out..(n + 1) * item_out], geom.c_out, pos),
                            Mat::new(&cols[n * pl * pos..(n + 1) * pl * pos], pl, pos).t(),
                            1.0,
                            &mut gk,
                        );
                    }
                    accumulate(grads, *kernels, gk);
                }
                if wants(*input) {
                    let tk = &nodes[*kernels].value;
                    let item_in = geom.c_in * geom.h * geom.w;
                    let mut gi = vec![0.0; geom.batch * item_in];
                    let mut gcols = vec![0.0; pl * pos];
                    for n in 0..geom.batch {
                        gemm(
                            Mat::new(tk.data(), geom.c_out, pl).t(),
                            Mat::new(&g[n * item_out..(n + 1) * item_out], geom.c_out, pos),
                            0.0,
                            &mut gcols,
                        );
                        col2im(&gcols, geom, &mut gi[n * item_in..(n + 1) * item_in]);
                    }
                    accumulate(grads, *input, gi);
                }
            }
            Op::Reshape { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
            }
            Op::Gather { a, indices } => {
                if wants(*a) {
                    let mut ga = vec![0.0; nodes[*a].value.len()];
                    for (&src, &v) in indices.iter().zip(g) {
                        ga[src] += v;
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &part in parts {
                    let len = nodes[part].value.len();
                    if wants(part) {
                        accumulate(grads, part, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::PowerMean {
                a,
                p,
                group_of,
                stats,
            } => {
                if !wants(*a) {
                    return;
                }
                let x = nodes[*a].value.data();
                let mut ga = vec![0.0; x.len()];
                for (k, grp) in group_of.iter().enumerate() {
                    let Some(grp) = *grp else { continue };
                    let (count, max, mean) = stats[grp];
                    if max > 0.0 && mean > 0.0 {
                        // d/dx_k of max * mean^(1/p), with s = x/max.
                        let s = x[k] / max;
                        ga[k] = g[grp] * s.powf(p - 1.0) * mean.powf(1.0 / p - 1.0)
                            / count as f64;
                    }
                }
                accumulate(grads, *a, ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: usize, delta: Vec<f64>) {
    match &mut grads[target] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn accumulate_broadcast(grads: &mut [Option<Vec<f64>>], target: usize, len: usize, delta: Vec<f64>) {
    if len == delta.len() {
        accumulate(grads, target, delta);
    } else {
        accumulate(grads, target, vec![delta.iter().sum()]);
    }
}

fn im2col(input: &[f64], geom: &ConvGeometry, cols: &mut [f64]) {
    let pos = geom.positions();
    let mut row = 0;
    for c in 0..geom.c_in {
        let plane = &input[c * geom.h * geom.w..(c + 1) * geom.h * geom.w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let dst = &mut cols[row * pos..(row + 1) * pos];
                let mut k = 0;
                for oy in 0..geom.oh {
                    let src_row = (oy * geom.stride + ky) * geom.w + kx;
                    for ox in 0..geom.ow {
                        dst[k] = plane[src_row + ox * geom.stride];
                        k += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f64], geom: &ConvGeometry, out: &mut [f64]) {
    let pos = geom.positions();
    let mut row = 0;
    for c in 0..geom.c_in {
        let plane = &mut out[c * geom.h * geom.w..(c + 1) * geom.h * geom.w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let src = &cols[row * pos..(row + 1) * pos];
                let mut k = 0;
                for oy in 0..geom.oh {
                    let dst_row = (oy * geom.stride + ky) * geom.w + kx;
                    for ox in 0..geom.ow {
                        plane[dst_row + ox * geom.stride] += src[k];
                        k += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    by_node: Vec<Option<Tensor>>,
    /// (store uid, parameter, node index) of every parameter use.
    params: Vec<(u64, ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if the root depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.by_node.get(v.index).and_then(Option::as_ref)
    }

    /// One gradient per parameter of `store`, zero for parameters the root
    /// does not depend on. Repeated uses of a parameter are summed.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for (uid, id, node) in &self.params {
            if *uid != store.uid() {
                continue;
            }
            let Some(g) = self.by_node[*node].as_ref() else { continue };
            match &mut out[id.index()] {
                Some(acc) => {
                    for (o, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
        out.into_iter()
            .zip(store.iter())
            .map(|(g, (_, t))| g.unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}
