use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraModel, CameraPose, Vec3};
use crate::image::Image;

use super::render::render_oracle_view;
use super::scene::SceneSpec;

/// Radius of the object-mode camera sphere.
pub const OBJECT_CAMERA_RADIUS: f64 = 2.0;
/// Horizontal field of view of generated cameras (radians).
pub const DEFAULT_FOV: f64 = 60.0 * PI / 180.0;

const WORLD_UP: Vec3 = [0.0, 0.0, 1.0];

/// One posed image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Image,
    pub camera: CameraModel,
}

/// Posed inputs and the target views to predict from them.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneExample {
    pub inputs: Vec<View>,
    pub targets: Vec<View>,
}

impl SceneExample {
    pub fn input_pairs(&self) -> Vec<(&Image, &CameraModel)> {
        self.inputs.iter().map(|v| (&v.image, &v.camera)).collect()
    }

    /// The first `count` inputs with all targets.
    pub fn with_input_count(&self, count: usize) -> Result<SceneExample> {
        if count == 0 || count > self.inputs.len() {
            return Err(Error::Config(format!(
                "input view count {count} outside 1..={}",
                self.inputs.len()
            )));
        }
        Ok(SceneExample {
            inputs: self.inputs[..count].to_vec(),
            targets: self.targets.clone(),
        })
    }

    /// Keeps only the targets at `indices`.
    pub fn with_targets(&self, indices: &[usize]) -> Result<SceneExample> {
        let targets = indices
            .iter()
            .map(|&i| {
                self.targets
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("target index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        Ok(SceneExample {
            inputs: self.inputs.clone(),
            targets,
        })
    }

    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.inputs
            .iter()
            .chain(&self.targets)
            .next()
            .map(|v| (v.image.height(), v.image.width()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Cameras on a sphere around the object.
    Object,
    /// Cameras along a smooth arc.
    Scene,
}

impl SampleMode {
    /// Default `(inputs, targets)` per example.
    pub fn default_views(self) -> (usize, usize) {
        match self {
            SampleMode::Object => (4, 8),
            SampleMode::Scene => (2, 6),
        }
    }
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(SampleMode::Object),
            "scene" => Ok(SampleMode::Scene),
            other => Err(Error::Config(format!(
                "unknown sampling mode `{other}` (object | scene)"
            ))),
        }
    }
}

fn uniform_sphere(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = [0, 1, 2].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

fn object_cameras(rng: &mut impl Rng, count: usize) -> Vec<CameraPose> {
    (0..count)
        .map(|_| {
            let eye = uniform_sphere(rng).map(|x| x * OBJECT_CAMERA_RADIUS);
            CameraPose::look_at(eye, [0.0; 3], WORLD_UP)
        })
        .collect()
}

fn jitter(rng: &mut impl Rng) -> Vec3 {
    [0, 1, 2].map(|_| rng.random_range(-0.05..0.05))
}

/// Inputs spread evenly along the arc; targets at random arc positions between
/// the first and last input.
fn scene_cameras(rng: &mut impl Rng, n: usize, m: usize) -> (Vec<CameraPose>, Vec<CameraPose>) {
    let radius = rng.random_range(1.8..2.4);
    let elevation = rng.random_range(0.15..0.6);
    let start = rng.random_range(0.0..TAU);
    let span = rng.random_range(0.9..1.6);
    let lift = rng.random_range(-0.1..0.1);
    let look = [
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    ];
    let pose_at = |s: f64, jitter: Vec3| {
        let az = start + span * s;
        let el: f64 = elevation + lift * (PI * s).sin();
        let eye = [
            radius * el.cos() * az.cos(),
            radius * el.cos() * az.sin(),
            radius * el.sin(),
        ];
        let target = [0, 1, 2].map(|i| look[i] + jitter[i]);
        CameraPose::look_at(eye, target, WORLD_UP)
    };
    let inputs = (0..n)
        .map(|i| {
            let s = if n == 1 {
                0.5
            } else {
                i as f64 / (n - 1) as f64
            };
            pose_at(s, jitter(rng))
        })
        .collect();
    let targets = (0..m)
        .map(|_| {
            let s = if n == 1 {
                rng.random_range(0.0..1.0)
            } else {
                rng.random_range(0.02..0.98)
            };
            pose_at(s, jitter(rng))
        })
        .collect();
    (inputs, targets)
}

/// Camera placement and oracle rendering of one training/eval example.
/// Images are snapped to 8-bit levels so they survive PPM/PNG storage unchanged.
pub fn sample_example(
    scene: &SceneSpec,
    mode: SampleMode,
    n: usize,
    m: usize,
    seed: u64,
    resolution: usize,
) -> Result<SceneExample> {
    if n == 0 || m == 0 {
        return Err(Error::Config(format!(
            "need at least one input and one target view, got {n} and {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input_poses, target_poses) = match mode {
        SampleMode::Object => {
            let all = object_cameras(&mut rng, n + m);
            let (a, b) = all.split_at(n);
            (a.to_vec(), b.to_vec())
        }
        SampleMode::Scene => scene_cameras(&mut rng, n, m),
    };
    let intrinsics = CameraIntrinsics::from_fov(resolution, resolution, DEFAULT_FOV);
    let view = |pose: CameraPose| {
        let camera = CameraModel { pose, intrinsics };
        let mut image = render_oracle_view(scene, &camera, resolution, resolution);
        image.quantize_u8();
        View { image, camera }
    };
    Ok(SceneExample {
        inputs: input_poses.into_iter().map(view).collect(),
        targets: target_poses.into_iter().map(view).collect(),
    })
}
