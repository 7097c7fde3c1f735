//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in execution order, so the tape is already a
//! topological order and the backward sweep walks it once in reverse.

use super::attention::{self, AttnDims, AttnSaved};
use super::{MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Mean(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        gains: Var,
        dims: AttnDims,
        saved: AttnSaved<T>,
    },
    Gather {
        src: Var,
        index: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records tensor operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let value = 0.5 * x * (1.0 + th);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let deriv = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    (value, deriv)
}

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    T::of(gelu_parts(x.as_f64()).0)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn matrix_dims(&self, var: Var) -> Result<(usize, usize)> {
        match self.value(var).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a)?;
        let (k2, n) = self.matrix_dims(b)?;
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}×{k} by {k2}×{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            T::one(),
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
            n,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat {base:?} with {s:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(src).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let src_data = self.value(src).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&src_data[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[src]);
        Ok(self.push(
            Tensor::from_vec(out_shape, data)?,
            Op::Slice { src, axis, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(src).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::Reshape(src), rg))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, src: Var) -> Result<Var> {
        let v = self.value(src);
        if v.numel() == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let m = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let rg = self.rg(&[src]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(src), rg))
    }

    pub fn gelu(&mut self, src: Var) -> Var {
        let value = self.value(src).map(gelu);
        let rg = self.rg(&[src]);
        self.push(value, Op::Gelu(src), rg)
    }

    pub fn sigmoid(&mut self, src: Var) -> Var {
        let value = self.value(src).map(sigmoid);
        let rg = self.rg(&[src]);
        self.push(value, Op::Sigmoid(src), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, src: Var) -> Result<Var> {
        let v = self.value(src);
        let n = v.last_dim();
        if v.shape().is_empty() || n == 0 {
            return Err(Error::shape("softmax over an empty axis"));
        }
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::from_vec(v.shape().to_vec(), data)?;
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::Softmax(src), rg))
    }

    /// LayerNorm over the last axis with a learnable gain and no bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.value(gain).shape() != [d] {
            return Err(Error::shape(format!(
                "layer-norm gain {:?} for feature size {d}",
                self.value(gain).shape()
            )));
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        let inv_d = T::of(1.0 / d as f64);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let s = T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let h = (row[c] - mu) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c];
            }
        }
        let value = Tensor::from_vec(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// QK-Norm multi-head attention. `q` is `lq × (heads·head_dim)`, `k`/`v`
    /// are `lk × (heads·head_dim)`, `gains` holds one scalar per head.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        gains: Var,
        heads: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (lq, width) = self.matrix_dims(q)?;
        let (lk, wk) = self.matrix_dims(k)?;
        if heads == 0 || width % heads != 0 || wk != width {
            return Err(Error::shape(format!(
                "attention widths {width}/{wk} not divisible into {heads} heads"
            )));
        }
        let dims = AttnDims {
            lq,
            lk,
            heads,
            head_dim: width / heads,
        };
        let (out, saved) = attention::forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            self.value(gains).data(),
            mask,
            dims,
        )?;
        let rg = self.rg(&[q, k, v, gains]);
        Ok(self.push(
            Tensor::from_vec(vec![lq, width], out)?,
            Op::Attention {
                q,
                k,
                v,
                gains,
                dims,
                saved,
            },
            rg,
        ))
    }

    /// `out[i] = src[index[i]]` over flattened elements, reshaped to `shape`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let sv = self.value(src);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(
                "gather index length disagrees with output shape",
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= sv.numel()) {
            return Err(Error::shape(format!("gather index {bad} out of range")));
        }
        let data = index.iter().map(|&i| sv.data()[i]).collect();
        let value = Tensor::from_vec(shape.to_vec(), data)?;
        let rg = self.rg(&[src]);
        Ok(self.push(value, Op::Gather { src, index }, rg))
    }

    /// Backpropagates from `output`. Without a seed the output must be a
    /// scalar and is seeded with 1.
    pub fn backward(&self, output: Var, seed: Option<Tensor<T>>) -> Result<Gradients<T>> {
        let seed = match seed {
            Some(s) => s,
            None if self.value(output).numel() == 1 => {
                Tensor::full(self.value(output).shape().to_vec(), T::one())
            }
            None => return Err(Error::shape("backward without seed needs a scalar output")),
        };
        self.backward_many(vec![(output, seed)])
    }

    /// Backpropagates the sum of `seed_i · output_i` over all given outputs.
    pub fn backward_many(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (var, seed) in seeds {
            let value = self.value(var);
            if seed.shape() != value.shape() {
                return Err(Error::shape(format!(
                    "seed gradient {:?} for output {:?}",
                    seed.shape(),
                    value.shape()
                )));
            }
            match &mut grads[var.0] {
                Some(g) => g.iter_mut().zip(seed.data()).for_each(|(a, &b)| *a += b),
                slot => *slot = Some(seed.into_data()),
            }
            last = last.max(var.0);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::from_vec(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Vec<T>>], var: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[var.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.matrix_dims(*a).expect("matrix");
                let n = self.value(*b).shape()[1];
                let gm = MatRef::new(g, m, n);
                let av = MatRef::new(self.value(*a).data(), m, k);
                let bv = MatRef::new(self.value(*b).data(), k, n);
                if let Some(ga) = self.accumulate(grads, *a) {
                    T::gemm(T::one(), gm, bv.t(), T::one(), ga, k);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    T::gemm(T::one(), av.t(), gm, T::one(), gb, n);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let ga = self.accumulate(grads, *a).expect("requires grad");
                    for ((x, &y), &w) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * w;
                    }
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let gb = self.accumulate(grads, *b).expect("requires grad");
                    for ((x, &y), &w) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * w;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *f);
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_at_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.value(p).shape()[*axis] * inner;
                    if let Some(gp) = self.accumulate(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (x, &y) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { src, axis, start } => {
                let shape = self.value(*src).shape().to_vec();
                let (outer, extent, inner) = split_at_axis(&shape, *axis);
                let len = node.value.shape()[*axis];
                if let Some(gs) = self.accumulate(grads, *src) {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        let from = &g[o * len * inner..(o + 1) * len * inner];
                        for (x, &y) in gs[base..base + len * inner].iter_mut().zip(from) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Reshape(src) => {
                if let Some(gs) = self.accumulate(grads, *src) {
                    gs.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Mean(src) => {
                let n = T::of(self.value(*src).numel() as f64);
                if let Some(gs) = self.accumulate(grads, *src) {
                    let d = g[0] / n;
                    gs.iter_mut().for_each(|x| *x += d);
                }
            }
            Op::Gelu(src) => {
                let xs = self.value(*src).data();
                if self.requires_grad(*src) {
                    let deriv: Vec<T> = xs
                        .iter()
                        .map(|&x| T::of(gelu_parts(x.as_f64()).1))
                        .collect();
                    let gs = self.accumulate(grads, *src).expect("requires grad");
                    for ((x, &y), &d) in gs.iter_mut().zip(g).zip(&deriv) {
                        *x += y * d;
                    }
                }
            }
            Op::Sigmoid(src) => {
                let ys = node.value.data();
                if let Some(gs) = self.accumulate(grads, *src) {
                    for ((x, &gy), &y) in gs.iter_mut().zip(g).zip(ys) {
                        *x += gy * y * (T::one() - y);
                    }
                }
            }
            Op::Softmax(src) => {
                let n = node.value.last_dim();
                let ys = node.value.data();
                if let Some(gs) = self.accumulate(grads, *src) {
                    for ((gx, gy), y) in gs.chunks_mut(n).zip(g.chunks(n)).zip(ys.chunks(n)) {
                        let dot: T = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for ((x, &a), &b) in gx.iter_mut().zip(gy).zip(y) {
                            *x += b * (a - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data().to_vec();
                if let Some(gg) = self.accumulate(grads, *gain) {
                    for (gy, h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            gg[c] += gy[c] * h[c];
                        }
                    }
                }
                if let Some(gx) = self.accumulate(grads, *x) {
                    let inv_d = T::of(1.0 / d as f64);
                    for (r, ((gxr, gy), h)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for c in 0..d {
                            let dh = gy[c] * gv[c];
                            mean_dh += dh;
                            mean_dh_h += dh * h[c];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for c in 0..d {
                            let dh = gy[c] * gv[c];
                            gxr[c] += rstd[r] * (dh - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                gains,
                dims,
                saved,
            } => {
                let ag = attention::backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    self.value(*gains).data(),
                    saved,
                    g,
                    *dims,
                );
                for (var, part) in [
                    (*q, &ag.dq),
                    (*k, &ag.dk),
                    (*v, &ag.dv),
                    (*gains, &ag.dgains),
                ] {
                    if let Some(gv) = self.accumulate(grads, var) {
                        gv.iter_mut().zip(part).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Gather { src, index } => {
                if let Some(gs) = self.accumulate(grads, *src) {
                    for (&j, &y) in index.iter().zip(g) {
                        gs[j] += y;
                    }
                }
            }
        }
    }
}
