//! Image metrics, the view-count sweep, decode timing and evaluation reports.

mod harness;
mod metrics;
mod report;

pub use harness::{
    comparison_grid, copy_nearest_input, decode_timing, evaluate_copy_nearest, evaluate_model,
    view_count_sweep, SceneEval, SweepRow, TimingRow,
};
pub use metrics::{mse, psnr, ssim, PSNR_CAP, SSIM_STRIDE, SSIM_WINDOW};
pub use report::{Aggregate, EvalReport, SceneScore, METRICS_NOTE};
