use crate::diffnum::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A differentiable image-similarity term added to the photometric loss.
pub trait PerceptualProxy {
    /// Value and gradient with respect to `pred` for two `height × width × 3` images.
    fn evaluate<T: Scalar>(
        &self,
        pred: &[T],
        gt: &[T],
        height: usize,
        width: usize,
    ) -> (f64, Vec<T>);
}

/// Mean absolute difference between the horizontal and vertical
/// finite-difference gradients of the two images.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientDifference;

impl PerceptualProxy for GradientDifference {
    fn evaluate<T: Scalar>(
        &self,
        pred: &[T],
        gt: &[T],
        height: usize,
        width: usize,
    ) -> (f64, Vec<T>) {
        let pairs = 3 * (height * width.saturating_sub(1) + height.saturating_sub(1) * width);
        let mut grad = vec![T::zero(); pred.len()];
        if pairs == 0 {
            return (0.0, grad);
        }
        let w = 1.0 / pairs as f64;
        let mut sum = 0.0;
        let mut term = |a: usize, b: usize| {
            // Difference between pixel b and its neighbour a.
            let e = (pred[b].as_f64() - pred[a].as_f64()) - (gt[b].as_f64() - gt[a].as_f64());
            sum += e.abs();
            let s = if e > 0.0 {
                w
            } else if e < 0.0 {
                -w
            } else {
                0.0
            };
            grad[b] += T::of(s);
            grad[a] -= T::of(s);
        };
        for r in 0..height {
            for c in 0..width {
                for ch in 0..3 {
                    let i = (r * width + c) * 3 + ch;
                    if c + 1 < width {
                        term(i, i + 3);
                    }
                    if r + 1 < height {
                        term(i, i + width * 3);
                    }
                }
            }
        }
        (sum * w, grad)
    }
}

/// Photometric loss of one predicted image and its gradient.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub total: f64,
    pub mse: f64,
    pub perceptual: f64,
    /// `d total / d pred`, shaped like the prediction.
    pub grad: Tensor<T>,
}

/// `MSE(pred, gt) + λ · proxy(pred, gt)` for `H × W × 3` tensors, using [`GradientDifference`].
pub fn compute_loss<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    lambda: f64,
) -> Result<LossValue<T>> {
    compute_loss_with(&GradientDifference, pred, gt, lambda)
}

pub fn compute_loss_with<T: Scalar, P: PerceptualProxy>(
    proxy: &P,
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    lambda: f64,
) -> Result<LossValue<T>> {
    let shape = pred.shape();
    if shape != gt.shape() || shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape(format!(
            "loss needs two H×W×3 images, got {:?} and {:?}",
            shape,
            gt.shape()
        )));
    }
    let n = pred.numel();
    let (p, g) = (pred.data(), gt.data());
    let mut mse = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&a, &b) in p.iter().zip(g) {
        let d = a.as_f64() - b.as_f64();
        mse += d * d;
        grad.push(T::of(2.0 * d / n.max(1) as f64));
    }
    mse /= n.max(1) as f64;
    let mut perceptual = 0.0;
    if lambda != 0.0 {
        let (value, pg) = proxy.evaluate(p, g, shape[0], shape[1]);
        perceptual = value;
        for (a, b) in grad.iter_mut().zip(pg) {
            *a += T::of(lambda) * b;
        }
    }
    Ok(LossValue {
        total: mse + lambda * perceptual,
        mse,
        perceptual,
        grad: Tensor::from_vec(shape.to_vec(), grad)?,
    })
}
