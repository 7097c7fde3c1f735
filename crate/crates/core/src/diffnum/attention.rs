//! Multi-head attention with QK-Norm.
//!
//! Queries and keys are L2-normalized per head before the dot product and the
//! cosine logits are scaled by one learnable gain per head, so every logit is
//! bounded by the magnitude of its head's gain.

use super::{MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Added to squared norms before the square root so zero vectors stay finite.
pub const QK_NORM_EPS: f64 = 1e-6;

/// Layout of one attention call. Q is `lq × (heads·head_dim)`, K and V are
/// `lk × (heads·head_dim)`; head `h` occupies columns `h·head_dim..(h+1)·head_dim`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub lq: usize,
    pub lk: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub(crate) struct AttnSaved<T> {
    qn: Vec<T>,
    kn: Vec<T>,
    q_inv_norm: Vec<T>,
    k_inv_norm: Vec<T>,
    /// `heads × lq × lk` row-stochastic attention weights.
    probs: Vec<T>,
}

pub(crate) fn check_mask(mask: &[bool], lq: usize, lk: usize) -> Result<()> {
    if mask.len() != lq * lk {
        return Err(Error::shape(format!(
            "mask has {} entries, expected {lq}×{lk}",
            mask.len()
        )));
    }
    for (row, chunk) in mask.chunks(lk.max(1)).enumerate() {
        if !chunk.iter().any(|&m| m) {
            return Err(Error::DegenerateMask { row });
        }
    }
    Ok(())
}

fn normalize_rows<T: Scalar>(x: &[T], rows: usize, dims: &AttnDims) -> (Vec<T>, Vec<T>) {
    let (width, dh) = (dims.width(), dims.head_dim);
    let eps = T::of(QK_NORM_EPS);
    let mut out = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows * dims.heads];
    for r in 0..rows {
        for h in 0..dims.heads {
            let off = r * width + h * dh;
            let seg = &x[off..off + dh];
            let ss: T = seg.iter().map(|&v| v * v).sum();
            let s = T::one() / (ss + eps).sqrt();
            inv[r * dims.heads + h] = s;
            for (o, &v) in out[off..off + dh].iter_mut().zip(seg) {
                *o = v * s;
            }
        }
    }
    (out, inv)
}

pub(crate) fn forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    gains: &[T],
    mask: Option<&[bool]>,
    dims: AttnDims,
) -> Result<(Vec<T>, AttnSaved<T>)> {
    let AttnDims {
        lq,
        lk,
        heads,
        head_dim,
    } = dims;
    let width = dims.width();
    if q.len() != lq * width || k.len() != lk * width || v.len() != lk * width {
        return Err(Error::shape("attention operands disagree with head layout"));
    }
    if gains.len() != heads {
        return Err(Error::shape(format!(
            "expected {heads} QK gains, got {}",
            gains.len()
        )));
    }
    if lk == 0 {
        return Err(Error::shape("attention over an empty key set"));
    }
    if let Some(mask) = mask {
        check_mask(mask, lq, lk)?;
    }
    let (qn, q_inv_norm) = normalize_rows(q, lq, &dims);
    let (kn, k_inv_norm) = normalize_rows(k, lk, &dims);
    let mut probs = vec![T::zero(); heads * lq * lk];
    let mut out = vec![T::zero(); lq * width];
    for h in 0..heads {
        let off = h * head_dim;
        let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
        let qh = MatRef::strided(&qn[off..], lq, head_dim, width);
        let kh = MatRef::strided(&kn[off..], lk, head_dim, width);
        T::gemm(gains[h], qh, kh.t(), T::zero(), p, lk);
        for i in 0..lq {
            let row = &mut p[i * lk..(i + 1) * lk];
            let allowed = |j: usize| mask.is_none_or(|m| m[i * lk + j]);
            let mut max = T::neg_infinity();
            for (j, &s) in row.iter().enumerate() {
                if allowed(j) && s > max {
                    max = s;
                }
            }
            let mut total = T::zero();
            for (j, s) in row.iter_mut().enumerate() {
                *s = if allowed(j) {
                    (*s - max).exp()
                } else {
                    T::zero()
                };
                total += *s;
            }
            let inv = T::one() / total;
            for s in row.iter_mut() {
                *s *= inv;
            }
        }
        let vh = MatRef::strided(&v[off..], lk, head_dim, width);
        T::gemm(
            T::one(),
            MatRef::new(p, lq, lk),
            vh,
            T::zero(),
            &mut out[off..],
            width,
        );
    }
    Ok((
        out,
        AttnSaved {
            qn,
            kn,
            q_inv_norm,
            k_inv_norm,
            probs,
        },
    ))
}

pub(crate) struct AttnGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
    pub dgains: Vec<T>,
}

fn normalize_backward<T: Scalar>(
    x: &[T],
    inv_norm: &[T],
    dxn: &[T],
    rows: usize,
    dims: &AttnDims,
) -> Vec<T> {
    let (width, dh) = (dims.width(), dims.head_dim);
    let mut dx = vec![T::zero(); x.len()];
    for r in 0..rows {
        for h in 0..dims.heads {
            let off = r * width + h * dh;
            let s = inv_norm[r * dims.heads + h];
            let xs = &x[off..off + dh];
            let gs = &dxn[off..off + dh];
            let dot: T = xs.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            let coef = dot * s * s * s;
            for ((d, &xv), &g) in dx[off..off + dh].iter_mut().zip(xs).zip(gs) {
                *d = g * s - xv * coef;
            }
        }
    }
    dx
}

pub(crate) fn backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    gains: &[T],
    saved: &AttnSaved<T>,
    dout: &[T],
    dims: AttnDims,
) -> AttnGrads<T> {
    let AttnDims {
        lq,
        lk,
        heads,
        head_dim,
    } = dims;
    let width = dims.width();
    let mut dqn = vec![T::zero(); q.len()];
    let mut dkn = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dgains = vec![T::zero(); heads];
    let mut ds = vec![T::zero(); lq * lk];
    let mut gq = vec![T::zero(); lq * head_dim];
    for h in 0..heads {
        let off = h * head_dim;
        let p = &saved.probs[h * lq * lk..(h + 1) * lq * lk];
        let pm = MatRef::new(p, lq, lk);
        let doh = MatRef::strided(&dout[off..], lq, head_dim, width);
        T::gemm(T::one(), pm.t(), doh, T::zero(), &mut dv[off..], width);
        let vh = MatRef::strided(&v[off..], lk, head_dim, width);
        T::gemm(T::one(), doh, vh.t(), T::zero(), &mut ds, lk);
        for i in 0..lq {
            let prow = &p[i * lk..(i + 1) * lk];
            let drow = &mut ds[i * lk..(i + 1) * lk];
            let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pv) in drow.iter_mut().zip(prow) {
                *d = pv * (*d - dot);
            }
        }
        let dsm = MatRef::new(&ds, lq, lk);
        let qh = MatRef::strided(&saved.qn[off..], lq, head_dim, width);
        let kh = MatRef::strided(&saved.kn[off..], lk, head_dim, width);
        // gq = dS · Kn; dgain = Σ_i Qn_i · gq_i
        T::gemm(T::one(), dsm, kh, T::zero(), &mut gq, head_dim);
        let mut dg = T::zero();
        for i in 0..lq {
            let qrow = &saved.qn[i * width + off..i * width + off + head_dim];
            let grow = &gq[i * head_dim..(i + 1) * head_dim];
            dg += qrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>();
            for (d, &g) in dqn[i * width + off..i * width + off + head_dim]
                .iter_mut()
                .zip(grow)
            {
                *d = g * gains[h];
            }
        }
        dgains[h] = dg;
        T::gemm(gains[h], dsm.t(), qh, T::zero(), &mut dkn[off..], width);
    }
    let dq = normalize_backward(q, &saved.q_inv_norm, &dqn, lq, &dims);
    let dk = normalize_backward(k, &saved.k_inv_norm, &dkn, lk, &dims);
    AttnGrads { dq, dk, dv, dgains }
}

/// QK-Norm attention over `[L, heads, head_dim]` tensors.
///
/// `mask`, when given, is a row-major `lq × lk` matrix of allowed query/key
/// pairs. Every query row must allow at least one key.
pub fn qknorm_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
    gains: &[T],
) -> Result<Tensor<T>> {
    let dims = dims_from_shapes(q.shape(), k.shape(), v.shape())?;
    let (out, _) = forward(q.data(), k.data(), v.data(), gains, mask, dims)?;
    Tensor::from_vec(q.shape().to_vec(), out)
}

/// Attention weights of every head, `heads × lq × lk`.
pub fn attention_weights<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&[bool]>,
    gains: &[T],
) -> Result<Tensor<T>> {
    let dims = dims_from_shapes(q.shape(), k.shape(), v.shape())?;
    let (_, saved) = forward(q.data(), k.data(), v.data(), gains, mask, dims)?;
    Tensor::from_vec(vec![dims.heads, dims.lq, dims.lk], saved.probs)
}

fn dims_from_shapes(q: &[usize], k: &[usize], v: &[usize]) -> Result<AttnDims> {
    match (q, k, v) {
        ([lq, h, d], [lk, h2, d2], [lk2, h3, d3])
            if h == h2 && h == h3 && d == d2 && d == d3 && lk == lk2 =>
        {
            Ok(AttnDims {
                lq: *lq,
                lk: *lk,
                heads: *h,
                head_dim: *d,
            })
        }
        _ => Err(Error::shape(format!(
            "attention expects Q [Lq,h,dh] and K,V [Lk,h,dh], got {q:?} {k:?} {v:?}"
        ))),
    }
}
