//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Every operation appends a node holding its output value and the indices
//! of its inputs. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates gradients into every node that depends on a leaf created with
//! `requires_grad = true`. All reductions run in a fixed order so repeated
//! runs are bit-identical.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Layout, Real};
use crate::spectral::StftPlan;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

enum Op<T: Real> {
    Leaf,
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    Prelu {
        x: usize,
        a: usize,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Concat(usize, usize),
    ChannelAffine {
        x: usize,
        scale: Vec<T>,
    },
    Istft {
        x: usize,
        plan: Arc<StftPlan<T>>,
    },
    Crop {
        x: usize,
        start: usize,
    },
    Scale {
        x: usize,
        k: T,
    },
    AddScalar(usize),
    Square(usize),
    Sum(usize),
    SumSquaredDiff {
        x: usize,
        target: Tensor<T>,
    },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv1d { x, w, b, .. } | Op::Linear { x, w, b } => vec![x, w, b],
            Op::Prelu { x, a } => vec![x, a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::LeakyRelu { x, .. }
            | Op::ChannelAffine { x, .. }
            | Op::Istft { x, .. }
            | Op::Crop { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Sum(x)
            | Op::SumSquaredDiff { x, .. } => vec![x],
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
///
/// Single-threaded: build one tape per forward pass. [`Tape::clear`]
/// discards every recorded value and invalidates outstanding handles.
pub struct Tape<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
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

    /// Drops all recorded activations; handles issued before are invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    fn resolve(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::GraphNotRecorded);
        }
        Ok(v.id)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.resolve(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.resolve(v)?].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFiniteActivation(what.to_string()));
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        })
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// 1-D convolution with symmetric zero padding.
    ///
    /// `x`: `(B, Cin, L)`, `w`: `(Cout, Cin, K)`, `b`: `(1, Cout, 1)`.
    /// Output length is `floor((L + 2 pad - K) / stride) + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let xv = &self.nodes[xi].value;
        let wv = &self.nodes[wi].value;
        let bv = &self.nodes[bi].value;
        let [batch, cin, len] = xv.shape();
        let [cout, wcin, k] = wv.shape();
        if wcin != cin || bv.shape() != [1, cout, 1] || stride == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv1d input {:?}, weight {:?}, bias {:?}, stride {stride}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        if len + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!(
                "conv1d kernel {k} longer than padded input {}",
                len + 2 * pad
            )));
        }
        let lout = (len + 2 * pad - k) / stride + 1;
        let ck = cin * k;
        let mut out = Tensor::zeros([batch, cout, lout]);
        let mut cols = vec![T::zero(); ck * lout];
        for bidx in 0..batch {
            im2col(xv.item(bidx), cin, len, k, stride, pad, lout, &mut cols);
            let y = &mut out.data_mut()[bidx * cout * lout..(bidx + 1) * cout * lout];
            for (c, row) in y.chunks_mut(lout).enumerate() {
                row.fill(bv.data()[c]);
            }
            gemm(
                cout,
                ck,
                lout,
                wv.data(),
                Layout::Normal,
                &cols,
                Layout::Normal,
                T::one(),
                y,
            );
        }
        self.push(
            out,
            Op::Conv1d {
                x: xi,
                w: wi,
                b: bi,
                stride,
                pad,
            },
            "conv1d",
        )
    }

    /// Parametric ReLU; `a` is `(1, 1, 1)` (shared) or `(1, C, 1)`.
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xi, ai) = (self.resolve(x)?, self.resolve(a)?);
        let xv = &self.nodes[xi].value;
        let av = &self.nodes[ai].value;
        let [batch, ch, len] = xv.shape();
        let per_channel = match av.shape() {
            [1, 1, 1] => false,
            [1, c, 1] if c == ch => true,
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "prelu slope {s:?} for input {:?}",
                    xv.shape()
                )))
            }
        };
        let out = Tensor::from_fn([batch, ch, len], |b, c, l| {
            let v = xv.get(b, c, l);
            if v >= T::zero() {
                v
            } else {
                av.data()[if per_channel { c } else { 0 }] * v
            }
        });
        self.push(out, Op::Prelu { x: xi, a: ai }, "prelu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let data = xv
            .data()
            .iter()
            .map(|&v| if v >= T::zero() { v } else { slope * v })
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push(out, Op::LeakyRelu { x: xi, slope }, "leaky_relu")
    }

    /// Fully connected layer over the flattened `(C, L)` features of each
    /// batch item. `w`: `(out, C*L, 1)`, `b`: `(1, out, 1)`; output
    /// `(B, out, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(w)?, self.resolve(b)?);
        let xv = &self.nodes[xi].value;
        let wv = &self.nodes[wi].value;
        let bv = &self.nodes[bi].value;
        let batch = xv.batch();
        let input = xv.channels() * xv.length();
        let [out_units, w_in, one] = wv.shape();
        if w_in != input || one != 1 || bv.shape() != [1, out_units, 1] {
            return Err(Error::ShapeMismatch(format!(
                "linear input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = Tensor::zeros([batch, out_units, 1]);
        for row in out.data_mut().chunks_mut(out_units) {
            row.copy_from_slice(bv.data());
        }
        gemm(
            batch,
            input,
            out_units,
            xv.data(),
            Layout::Normal,
            wv.data(),
            Layout::Transposed,
            T::one(),
            out.data_mut(),
        );
        self.push(
            out,
            Op::Linear {
                x: xi,
                w: wi,
                b: bi,
            },
            "linear",
        )
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.resolve(a)?, self.resolve(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{what} of {sa:?} and {sb:?}")));
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary_same_shape(a, b, "add")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push(out, Op::Add(ai, bi), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.binary_same_shape(a, b, "sub")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push(out, Op::Sub(ai, bi), "sub")
    }

    /// Stacks `a` and `b` along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.resolve(a)?, self.resolve(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let [ba, ca, la] = av.shape();
        let [bb, cb, lb] = bv.shape();
        if ba != bb || la != lb {
            return Err(Error::ShapeMismatch(format!(
                "concat of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for item in 0..ba {
            data.extend_from_slice(av.item(item));
            data.extend_from_slice(bv.item(item));
        }
        let out = Tensor::new([ba, ca + cb, la], data)?;
        self.push(out, Op::Concat(ai, bi), "concat")
    }

    /// `y[b, c, l] = x[b, c, l] * scale[c] + shift[c]` with constant
    /// per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let ch = xv.channels();
        if scale.len() != ch || shift.len() != ch {
            return Err(Error::ShapeMismatch(format!(
                "channel affine with {} / {} coefficients for {ch} channels",
                scale.len(),
                shift.len()
            )));
        }
        let out = Tensor::from_fn(xv.shape(), |b, c, l| xv.get(b, c, l) * scale[c] + shift[c]);
        self.push(
            out,
            Op::ChannelAffine {
                x: xi,
                scale: scale.to_vec(),
            },
            "channel_affine",
        )
    }

    /// Least-squares inverse STFT of a `(B, 2F', N)` tensor whose first `F'`
    /// channels hold real parts and last `F'` imaginary parts. Output is
    /// `(B, 1, T)`.
    pub fn istft(&mut self, x: Var, plan: Arc<StftPlan<T>>) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let bins = plan.config().bins();
        let [batch, ch, frames] = xv.shape();
        if ch != 2 * bins {
            return Err(Error::ShapeMismatch(format!(
                "istft block needs {} channels, got {ch}",
                2 * bins
            )));
        }
        let len = plan.config().signal_len(frames);
        let mut data = Vec::with_capacity(batch * len);
        for b in 0..batch {
            let spec = Array2::from_shape_fn((bins, frames), |(k, n)| {
                Complex::new(xv.get(b, k, n), xv.get(b, bins + k, n))
            });
            data.extend(plan.synthesize(&spec)?);
        }
        let out = Tensor::new([batch, 1, len], data)?;
        self.push(out, Op::Istft { x: xi, plan }, "istft")
    }

    /// Keeps `len` samples starting at `start` along the length axis.
    pub fn crop(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let [batch, ch, full] = xv.shape();
        if start + len > full || len == 0 {
            return Err(Error::ShapeMismatch(format!(
                "crop [{start}, {}) of length {full}",
                start + len
            )));
        }
        let out = Tensor::from_fn([batch, ch, len], |b, c, l| xv.get(b, c, start + l));
        self.push(out, Op::Crop { x: xi, start }, "crop")
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * k).collect())?;
        self.push(out, Op::Scale { x: xi, k }, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v + k).collect())?;
        self.push(out, Op::AddScalar(xi), "add_scalar")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * v).collect())?;
        self.push(out, Op::Square(xi), "square")
    }

    /// Sum of all elements as a `(1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.resolve(x)?;
        let total = self.nodes[xi].value.data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(xi), "sum")
    }

    /// `Σ (x - target)²` as a scalar; `target` is constant.
    pub fn sum_squared_diff(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        if xv.shape() != target.shape() {
            return Err(Error::ShapeMismatch(format!(
                "squared distance between {:?} and {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let total = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::SumSquaredDiff {
                x: xi,
                target: target.clone(),
            },
            "sum_squared_diff",
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.resolve(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; li + 1];
        grads[li] = Some(vec![T::one()]);
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.propagate(node, g, lower)?;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes[..=li].iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], i: usize) -> Option<&'a mut Vec<T>> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let [batch, cin, len] = xv.shape();
                let [cout, _, k] = wv.shape();
                let lout = node.value.length();
                let ck = cin * k;
                if let Some(db) = self.slot(grads, b) {
                    for bidx in 0..batch {
                        for c in 0..cout {
                            let off = (bidx * cout + c) * lout;
                            let s: T = g[off..off + lout].iter().copied().sum();
                            db[c] = db[c] + s;
                        }
                    }
                }
                let need_w = self.nodes[w].requires_grad;
                let need_x = self.nodes[x].requires_grad;
                let mut cols = vec![T::zero(); ck * lout];
                for bidx in 0..batch {
                    let gy = &g[bidx * cout * lout..(bidx + 1) * cout * lout];
                    if need_w {
                        im2col(xv.item(bidx), cin, len, k, stride, pad, lout, &mut cols);
                        let dw = self.slot(grads, w).expect("weight requires grad");
                        gemm(
                            cout,
                            lout,
                            ck,
                            gy,
                            Layout::Normal,
                            &cols,
                            Layout::Transposed,
                            T::one(),
                            dw,
                        );
                    }
                    if need_x {
                        gemm(
                            ck,
                            cout,
                            lout,
                            wv.data(),
                            Layout::Transposed,
                            gy,
                            Layout::Normal,
                            T::zero(),
                            &mut cols,
                        );
                        let dx = self.slot(grads, x).expect("input requires grad");
                        col2im_add(
                            &cols,
                            cin,
                            len,
                            k,
                            stride,
                            pad,
                            lout,
                            &mut dx[bidx * cin * len..(bidx + 1) * cin * len],
                        );
                    }
                }
            }
            &Op::Prelu { x, a } => {
                let xv = &self.nodes[x].value;
                let av = &self.nodes[a].value;
                let [batch, ch, len] = xv.shape();
                let per_channel = av.len() > 1;
                if let Some(dx) = self.slot(grads, x) {
                    for bidx in 0..batch {
                        for c in 0..ch {
                            let slope = av.data()[if per_channel { c } else { 0 }];
                            for l in 0..len {
                                let i = xv.index(bidx, c, l);
                                let d = if xv.data()[i] >= T::zero() { g[i] } else { slope * g[i] };
                                dx[i] = dx[i] + d;
                            }
                        }
                    }
                }
                if let Some(da) = self.slot(grads, a) {
                    for bidx in 0..batch {
                        for c in 0..ch {
                            let slot = if per_channel { c } else { 0 };
                            for l in 0..len {
                                let i = xv.index(bidx, c, l);
                                let v = xv.data()[i];
                                if v < T::zero() {
                                    da[slot] = da[slot] + g[i] * v;
                                }
                            }
                        }
                    }
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = &self.nodes[x].value;
                if let Some(dx) = self.slot(grads, x) {
                    for (i, d) in dx.iter_mut().enumerate() {
                        let s = if xv.data()[i] >= T::zero() { T::one() } else { slope };
                        *d = *d + s * g[i];
                    }
                }
            }
            &Op::Linear { x, w, b } => {
                let xv = &self.nodes[x].value;
                let wv = &self.nodes[w].value;
                let batch = xv.batch();
                let input = xv.channels() * xv.length();
                let out_units = wv.shape()[0];
                if let Some(db) = self.slot(grads, b) {
                    for row in g.chunks(out_units) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, w) {
                    gemm(
                        out_units,
                        batch,
                        input,
                        g,
                        Layout::Transposed,
                        xv.data(),
                        Layout::Normal,
                        T::one(),
                        dw,
                    );
                }
                if let Some(dx) = self.slot(grads, x) {
                    gemm(
                        batch,
                        out_units,
                        input,
                        g,
                        Layout::Normal,
                        wv.data(),
                        Layout::Normal,
                        T::one(),
                        dx,
                    );
                }
            }
            &Op::Add(a, b) => {
                for i in [a, b] {
                    if let Some(d) = self.slot(grads, i) {
                        add_into(d, g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, a) {
                    add_into(d, g);
                }
                if let Some(d) = self.slot(grads, b) {
                    for (d, &v) in d.iter_mut().zip(g) {
                        *d = *d - v;
                    }
                }
            }
            &Op::Concat(a, b) => {
                let na = self.nodes[a].value.channels() * self.nodes[a].value.length();
                let nb = self.nodes[b].value.channels() * self.nodes[b].value.length();
                let batch = node.value.batch();
                if let Some(d) = self.slot(grads, a) {
                    for item in 0..batch {
                        let src = &g[item * (na + nb)..item * (na + nb) + na];
                        add_into(&mut d[item * na..(item + 1) * na], src);
                    }
                }
                if let Some(d) = self.slot(grads, b) {
                    for item in 0..batch {
                        let src = &g[item * (na + nb) + na..(item + 1) * (na + nb)];
                        add_into(&mut d[item * nb..(item + 1) * nb], src);
                    }
                }
            }
            Op::ChannelAffine { x, scale } => {
                let shape = self.nodes[*x].value.shape();
                if let Some(d) = self.slot(grads, *x) {
                    let len = shape[2];
                    for (row, chunk) in d.chunks_mut(len).enumerate() {
                        let s = scale[row % shape[1]];
                        let src = &g[row * len..(row + 1) * len];
                        for (d, &v) in chunk.iter_mut().zip(src) {
                            *d = *d + s * v;
                        }
                    }
                }
            }
            Op::Istft { x, plan } => {
                let [batch, ch, frames] = self.nodes[*x].value.shape();
                let bins = ch / 2;
                let len = node.value.length();
                if let Some(d) = self.slot(grads, *x) {
                    for b in 0..batch {
                        let adj = plan.synthesize_adjoint(&g[b * len..(b + 1) * len], frames)?;
                        let base = b * ch * frames;
                        for k in 0..bins {
                            for n in 0..frames {
                                let re = base + k * frames + n;
                                let im = base + (bins + k) * frames + n;
                                d[re] = d[re] + adj[[k, n]].re;
                                d[im] = d[im] + adj[[k, n]].im;
                            }
                        }
                    }
                }
            }
            &Op::Crop { x, start } => {
                let [batch, ch, full] = self.nodes[x].value.shape();
                let len = node.value.length();
                if let Some(d) = self.slot(grads, x) {
                    for row in 0..batch * ch {
                        let dst = &mut d[row * full + start..row * full + start + len];
                        add_into(dst, &g[row * len..(row + 1) * len]);
                    }
                }
            }
            &Op::Scale { x, k } => {
                if let Some(d) = self.slot(grads, x) {
                    for (d, &v) in d.iter_mut().zip(g) {
                        *d = *d + k * v;
                    }
                }
            }
            &Op::AddScalar(x) => {
                if let Some(d) = self.slot(grads, x) {
                    add_into(d, g);
                }
            }
            &Op::Square(x) => {
                let xv = &self.nodes[x].value;
                if let Some(d) = self.slot(grads, x) {
                    let two = T::of(2.0);
                    for ((d, &v), &gv) in d.iter_mut().zip(xv.data()).zip(g) {
                        *d = *d + two * v * gv;
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(d) = self.slot(grads, x) {
                    for d in d.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::SumSquaredDiff { x, target } => {
                let xv = &self.nodes[*x].value;
                if let Some(d) = self.slot(grads, *x) {
                    let two = T::of(2.0) * g[0];
                    for ((d, &v), &t) in d.iter_mut().zip(xv.data()).zip(target.data()) {
                        *d = *d + two * (v - t);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<[usize; 3]>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` does not influence the
    /// loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>> {
        if v.tape != self.tape {
            return Err(Error::GraphNotRecorded);
        }
        match self.shapes.get(v.id) {
            None => Err(Error::GraphNotRecorded),
            Some(&shape) => match &self.grads[v.id] {
                Some(g) => Tensor::new(shape, g.clone()),
                None => Ok(Tensor::zeros(shape)),
            },
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
    cols: &mut [T],
) {
    for c in 0..cin {
        let src = &x[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * lout..(c * k + j + 1) * lout];
            for (o, slot) in row.iter_mut().enumerate() {
                let pos = (o * stride + j) as isize - pad as isize;
                *slot = if pos >= 0 && (pos as usize) < len {
                    src[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Real>(
    cols: &[T],
    cin: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
    dx: &mut [T],
) {
    for c in 0..cin {
        for j in 0..k {
            let row = &cols[(c * k + j) * lout..(c * k + j + 1) * lout];
            for (o, &v) in row.iter().enumerate() {
                let pos = (o * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    let i = c * len + pos as usize;
                    dx[i] = dx[i] + v;
                }
            }
        }
    }
}
