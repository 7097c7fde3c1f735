use crate::error::{Error, Result};
use crate::image::Image;

/// Value returned by [`psnr`] for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_same(pred: &Image, gt: &Image) -> Result<()> {
    if pred.same_shape(gt) {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "images differ in size: {}×{} vs {}×{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )))
    }
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    check_same(pred, gt)?;
    let n = pred.data().len().max(1) as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(sum / n)
}

/// `10 · log10(1 / MSE)` for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
    }
}

fn luma(img: &Image) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|px| (0..3).map(|c| LUMA[c] * f64::from(px[c])).sum())
        .collect()
}

/// Mean SSIM over 8×8 luma windows placed every 4 pixels.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_same(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let (x, y) = (luma(pred), luma(gt));
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in (0..=h - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for c0 in (0..=w - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sx, mut sy) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sx += x[r * w + c];
                    sy += y[r * w + c];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (dx, dy) = (x[r * w + c] - mx, y[r * w + c] - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cov += dx * dy;
                }
            }
            let (vx, vy, cov) = (vx / n, vy / n, cov / n);
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
