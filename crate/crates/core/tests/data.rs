use std::path::{Path, PathBuf};

use lvsm::data::{
    generate_dataset, generate_scene, read_dataset, read_example, read_image, read_manifest,
    read_ppm, render_oracle_view, sample_example, write_dataset_as, write_example, write_ppm,
    Albedo, ImageFormat, Primitive, SampleMode, SceneSpec, Shape, ViewRole, GROUND_HEIGHT,
    MANIFEST_NAME,
};
use lvsm::geometry::{norm, CameraIntrinsics, CameraModel, CameraPose};
use lvsm::image::Image;
use lvsm::Error;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn hand_written_manifest_parses_to_the_expected_cameras() {
    let manifest = read_manifest(&fixture("one_view").join(MANIFEST_NAME)).unwrap();
    let inputs = manifest.cameras(ViewRole::Input).unwrap();
    assert_eq!(inputs.len(), 1);
    let want = CameraModel {
        pose: CameraPose {
            rotation: [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.25, -1.5, 2.0],
        },
        intrinsics: CameraIntrinsics {
            fx: 3.5,
            fy: 3.25,
            cx: 2.0,
            cy: 1.5,
            width: 4,
            height: 3,
        },
    };
    assert_eq!(inputs[0], want);
}

#[test]
fn fixture_example_loads_with_commented_ppm_header() {
    let ex = read_example(&fixture("one_view")).unwrap();
    assert_eq!((ex.inputs.len(), ex.targets.len()), (1, 1));
    let bytes: Vec<u8> = (0..36).map(|i| ((i * 7) % 256) as u8).collect();
    assert_eq!(ex.inputs[0].image, Image::from_u8(3, 4, &bytes).unwrap());
    assert_eq!(ex.targets[0].camera.pose.translation, [0.0, 0.0, -2.0]);
}

#[test]
fn truncated_image_is_an_io_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ppm");
    write_ppm(&path, &Image::filled(4, 4, [0.2, 0.4, 0.6])).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    let err = read_ppm(&path).unwrap_err();
    assert!(
        matches!(&err, Error::Io { path: p, .. } if p == &path),
        "{err}"
    );
    assert!(err.to_string().contains("cut.ppm"));
}

#[test]
fn malformed_manifest_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(MANIFEST_NAME);
    std::fs::write(
        &path,
        "{\n  \"views\": [\n    {\"role\": \"input\",\n     \"fx\": oops}\n  ]\n}\n",
    )
    .unwrap();
    match read_manifest(&path).unwrap_err() {
        Error::Parse { file, line, .. } => {
            assert_eq!(file, path);
            assert_eq!(line, 4);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn examples_roundtrip_in_both_image_formats() {
    let data = generate_dataset(11, 2, SampleMode::Scene, (2, 3), 12).unwrap();
    for format in [ImageFormat::Ppm, ImageFormat::Png] {
        let dir = tempfile::tempdir().unwrap();
        write_dataset_as(&data, dir.path(), format).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in data.iter().zip(&back) {
            for (va, vb) in a
                .inputs
                .iter()
                .chain(&a.targets)
                .zip(b.inputs.iter().chain(&b.targets))
            {
                assert_eq!(va.image, vb.image);
                let (pa, pb) = (va.camera.pose, vb.camera.pose);
                for i in 0..3 {
                    assert!((pa.translation[i] - pb.translation[i]).abs() <= 1e-7);
                    for j in 0..3 {
                        assert!((pa.rotation[i][j] - pb.rotation[i][j]).abs() <= 1e-7);
                    }
                }
            }
        }
    }
}

#[test]
fn png_and_ppm_decode_to_the_same_pixels() {
    let ex = sample_example(&generate_scene(12), SampleMode::Object, 1, 1, 12, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_example(&ex, &dir.path().join("a"), ImageFormat::Ppm).unwrap();
    write_example(&ex, &dir.path().join("b"), ImageFormat::Png).unwrap();
    let a = read_image(&dir.path().join("a/input_00.ppm")).unwrap();
    let b = read_image(&dir.path().join("b/input_00.png")).unwrap();
    assert_eq!(a, b);
}

fn mirror_scene() -> SceneSpec {
    let flat = |c: [f32; 3]| Albedo::Flat(c);
    SceneSpec {
        seed: 0,
        primitives: vec![
            Primitive {
                shape: Shape::Plate {
                    z: GROUND_HEIGHT,
                    half_size: 0.6,
                },
                albedo: flat([0.7, 0.7, 0.6]),
            },
            Primitive {
                shape: Shape::Sphere {
                    center: [0.0, 0.2, -0.1],
                    radius: 0.3,
                },
                albedo: flat([0.9, 0.2, 0.2]),
            },
            Primitive {
                shape: Shape::Cuboid {
                    min: [-0.4, -0.3, -0.5],
                    max: [0.4, -0.1, 0.0],
                },
                albedo: flat([0.2, 0.3, 0.9]),
            },
        ],
        light_dir: lvsm::geometry::normalize([0.0, -0.4, 1.0]),
        background: [0.1, 0.1, 0.15],
    }
}

#[test]
fn mirrored_cameras_see_mirrored_images() {
    // The scene is symmetric under x -> -x, so the camera mirrored through
    // that plane sees the horizontal flip.
    let scene = mirror_scene();
    let intr = CameraIntrinsics::from_fov(24, 20, 1.0);
    for eye in [[1.2, -1.4, 0.6], [0.7, 1.5, 1.1], [1.9, 0.1, -0.2]] {
        let cam = |e: [f64; 3]| CameraModel {
            pose: CameraPose::look_at(e, [0.0, 0.0, -0.2], [0.0, 0.0, 1.0]),
            intrinsics: intr,
        };
        let a = render_oracle_view(&scene, &cam(eye), 20, 24);
        let b = render_oracle_view(&scene, &cam([-eye[0], eye[1], eye[2]]), 20, 24);
        let flipped = a.flip_horizontal();
        let worst = flipped
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "eye {eye:?}: {worst}");
        assert!(a.data().iter().any(|&v| v != a.data()[0]));
    }
}

#[test]
fn empty_scene_renders_its_background() {
    let cam = CameraModel {
        pose: CameraPose::look_at([0.0, -2.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]),
        intrinsics: CameraIntrinsics::from_fov(5, 5, 1.0),
    };
    let img = render_oracle_view(&SceneSpec::empty([0.3, 0.5, 0.7]), &cam, 5, 5);
    assert_eq!(img, Image::filled(5, 5, [0.3, 0.5, 0.7]));
}

#[test]
fn scene_mode_keeps_cameras_near_the_scene_and_facing_it() {
    for seed in 0..20 {
        let ex = sample_example(&generate_scene(seed), SampleMode::Scene, 2, 6, seed, 8).unwrap();
        for v in ex.inputs.iter().chain(&ex.targets) {
            let pose = v.camera.pose;
            pose.validate().unwrap();
            let c = pose.center();
            let forward = [
                pose.rotation[0][2],
                pose.rotation[1][2],
                pose.rotation[2][2],
            ];
            let to_origin = lvsm::geometry::scale(c, -1.0 / norm(c));
            assert!(lvsm::geometry::dot(forward, to_origin) > 0.5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quantized_views_survive_ppm_storage(seed in 0u64..1_000_000) {
        let ex = sample_example(&generate_scene(seed), SampleMode::Object, 1, 1, seed, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ppm");
        write_ppm(&path, &ex.inputs[0].image).unwrap();
        prop_assert_eq!(read_ppm(&path).unwrap(), ex.inputs[0].image.clone());
        prop_assert!(ex.inputs[0].image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
