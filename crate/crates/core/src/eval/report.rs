use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::harness::{SceneEval, SweepRow, TimingRow};
use crate::error::{Error, Result};

pub const METRICS_NOTE: &str =
    "metrics: PSNR (dB) and SSIM; LPIPS omitted (needs a pretrained network)";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
}

impl Aggregate {
    /// Arithmetic mean of per-scene values.
    pub fn of(scores: &[SceneScore]) -> Self {
        let n = scores.len().max(1) as f64;
        Self {
            psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub note: String,
    pub scenes: Vec<SceneScore>,
    pub aggregate: Option<Aggregate>,
    /// Copy-nearest-input reference on the same scenes.
    pub baseline: Option<Aggregate>,
    pub sweep: Vec<SweepRow>,
    pub timing: Vec<TimingRow>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self {
            note: METRICS_NOTE.to_string(),
            ..Self::default()
        }
    }

    pub fn set_scenes(&mut self, evals: &[SceneEval]) {
        self.scenes = evals
            .iter()
            .enumerate()
            .map(|(scene, e)| SceneScore {
                scene,
                psnr: e.psnr,
                ssim: e.ssim,
            })
            .collect();
        self.aggregate = Some(Aggregate::of(&self.scenes));
    }

    pub fn set_baseline(&mut self, evals: &[SceneEval]) {
        let scores: Vec<SceneScore> = evals
            .iter()
            .enumerate()
            .map(|(scene, e)| SceneScore {
                scene,
                psnr: e.psnr,
                ssim: e.ssim,
            })
            .collect();
        self.baseline = Some(Aggregate::of(&scores));
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.note);
        if !self.scenes.is_empty() {
            s.push_str("\nscene   psnr_db    ssim\n");
            for r in &self.scenes {
                let _ = writeln!(s, "{:>5} {:>9.3} {:>7.4}", r.scene, r.psnr, r.ssim);
            }
        }
        if let Some(a) = self.aggregate {
            let _ = writeln!(s, " mean {:>9.3} {:>7.4}", a.psnr, a.ssim);
        }
        if let Some(b) = self.baseline {
            let _ = writeln!(
                s,
                "\ncopy-nearest baseline: psnr {:.3} dB, ssim {:.4}",
                b.psnr, b.ssim
            );
        }
        if !self.sweep.is_empty() {
            s.push_str("\nviews   psnr_db    ssim\n");
            for r in &self.sweep {
                let _ = writeln!(s, "{:>5} {:>9.3} {:>7.4}", r.views, r.psnr, r.ssim);
            }
        }
        if !self.timing.is_empty() {
            s.push_str("\nviews  decode_seconds\n");
            for r in &self.timing {
                let _ = writeln!(s, "{:>5} {:>15.6}", r.views, r.median_seconds);
            }
        }
        s
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_mean() {
        let mut r = EvalReport::new();
        r.scenes = vec![
            SceneScore {
                scene: 0,
                psnr: 20.0,
                ssim: 0.5,
            },
            SceneScore {
                scene: 1,
                psnr: 30.0,
                ssim: 0.7,
            },
        ];
        r.aggregate = Some(Aggregate::of(&r.scenes));
        r.sweep = vec![SweepRow {
            views: 1,
            psnr: 21.0,
            ssim: 0.6,
        }];
        assert_eq!(r.aggregate.unwrap().psnr, 25.0);
        assert_eq!(EvalReport::from_toml(&r.to_toml().unwrap()).unwrap(), r);
        assert!(r.to_text().contains("LPIPS omitted"));
    }
}
