//! Procedural scenes, the analytic ground-truth renderer, view sampling and
//! the on-disk dataset layout.
//!
//! A dataset directory holds one subdirectory per example with a
//! `cameras.json` manifest and one image per view:
//!
//! ```text
//! scene_00000/
//!   cameras.json      {"views": [{"role": "input", "image": "input_00.ppm",
//!                                 "fx", "fy", "cx", "cy", "width", "height",
//!                                 "c2w": [[r00, r01, r02, tx], ...]}, ...]}
//!   input_00.ppm
//!   target_00.ppm
//! ```

mod io;
mod render;
mod sampling;
mod scene;

pub use io::{
    example_dir_name, read_dataset, read_example, read_image, read_manifest, read_png, read_ppm,
    write_dataset, write_dataset_as, write_example, write_image, write_manifest, write_png,
    write_ppm, CameraManifest, ImageFormat, ManifestView, ViewRole, MANIFEST_NAME,
};
pub use render::{render_oracle_view, trace, AMBIENT};
pub use sampling::{
    sample_example, SampleMode, SceneExample, View, DEFAULT_FOV, OBJECT_CAMERA_RADIUS,
};
pub use scene::{
    generate_scene, Albedo, Primitive, SceneSpec, Shape, GROUND_HALF_SIZE, GROUND_HEIGHT,
    SCENE_RADIUS,
};

use crate::error::Result;
use crate::seed::derive_indexed;

/// `count` examples with per-example scene and camera seeds derived from `seed`.
pub fn generate_dataset(
    seed: u64,
    count: usize,
    mode: SampleMode,
    views: (usize, usize),
    resolution: usize,
) -> Result<Vec<SceneExample>> {
    (0..count as u64)
        .map(|i| {
            let scene = generate_scene(derive_indexed(seed, "scene", i));
            sample_example(
                &scene,
                mode,
                views.0,
                views.1,
                derive_indexed(seed, "cameras", i),
                resolution,
            )
        })
        .collect()
}
