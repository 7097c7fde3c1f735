mod common;

use common::rng;
use lvsm::geometry::{
    add, axis_angle, central_reference_index, compute_plucker_map, cross, dot, mat_mul, mat_vec,
    norm, normalize, normalize_cameras, scale, sub, transpose, CameraIntrinsics, CameraPose, Mat3,
    Vec3,
};
use proptest::prelude::*;
use rand::Rng;

fn random_unit(r: &mut impl Rng) -> Vec3 {
    normalize([
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    ])
}

fn random_pose(r: &mut impl Rng) -> CameraPose {
    let rot = axis_angle(random_unit(r), r.random_range(-3.0..3.0));
    let t = [
        r.random_range(-3.0..3.0),
        r.random_range(-3.0..3.0),
        r.random_range(-3.0..3.0),
    ];
    CameraPose::new(rot, t).unwrap()
}

fn max_mat_diff(a: &Mat3, b: &Mat3) -> f64 {
    (0..9)
        .map(|k| (a[k / 3][k % 3] - b[k / 3][k % 3]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn moments_agree_with_points_sampled_on_each_ray() {
    let mut r = rng(3);
    for _ in 0..5 {
        let pose = random_pose(&mut r);
        let intr = CameraIntrinsics {
            fx: r.random_range(5.0..20.0),
            fy: r.random_range(5.0..20.0),
            cx: r.random_range(4.0..8.0),
            cy: r.random_range(3.0..7.0),
            width: 12,
            height: 10,
        };
        let map = compute_plucker_map(&pose, &intr, 10, 12).unwrap();
        for row in 0..10 {
            for col in 0..12 {
                let (d, m) = map.ray(row, col);
                assert!((norm(d) - 1.0).abs() < 1e-12);
                assert!(dot(d, m).abs() < 1e-12);
                // Back-project the pixel center at an arbitrary depth.
                let cam = [
                    (col as f64 + 0.5 - intr.cx) / intr.fx,
                    (row as f64 + 0.5 - intr.cy) / intr.fy,
                    1.0,
                ];
                let depth = r.random_range(0.5..4.0);
                let p = add(pose.translation, mat_vec(&pose.rotation, scale(cam, depth)));
                let want_d = normalize(sub(p, pose.translation));
                let want_m = cross(p, want_d);
                for k in 0..3 {
                    assert!((d[k] - want_d[k]).abs() < 1e-12);
                    assert!((m[k] - want_m[k]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn normalization_preserves_relative_transforms_up_to_scale() {
    let mut r = rng(4);
    for _ in 0..10 {
        let poses: Vec<CameraPose> = (0..3).map(|_| random_pose(&mut r)).collect();
        let reference = central_reference_index(&poses);
        let (normed, _) = normalize_cameras(&poses, reference).unwrap();
        let rel = |a: &CameraPose, b: &CameraPose| -> (Mat3, Vec3) {
            let rt = transpose(&a.rotation);
            (
                mat_mul(&rt, &b.rotation),
                mat_vec(&rt, sub(b.translation, a.translation)),
            )
        };
        let max_dist = (0..3)
            .map(|i| norm(sub(poses[i].translation, poses[reference].translation)))
            .fold(0.0, f64::max);
        for i in 0..3 {
            for j in 0..3 {
                let (r0, t0) = rel(&poses[i], &poses[j]);
                let (r1, t1) = rel(&normed[i], &normed[j]);
                assert!(max_mat_diff(&r0, &r1) < 1e-6);
                for k in 0..3 {
                    assert!((t0[k] / max_dist - t1[k]).abs() < 1e-6);
                }
            }
        }
        let far = (0..3)
            .map(|i| norm(normed[i].translation))
            .fold(0.0, f64::max);
        assert!((far - 1.0).abs() < 1e-9);
        assert!(
            max_mat_diff(
                &normed[reference].rotation,
                &axis_angle([0.0, 0.0, 1.0], 0.0)
            ) < 1e-12
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_invariant_to_a_global_similarity(
        seed in 0u64..10_000,
        angle in -3.0f64..3.0,
        s in 0.2f64..5.0,
        shift in proptest::array::uniform3(-4.0f64..4.0),
    ) {
        let mut r = rng(seed);
        let poses: Vec<CameraPose> = (0..4).map(|_| random_pose(&mut r)).collect();
        let rot = axis_angle(random_unit(&mut r), angle);
        let moved: Vec<CameraPose> = poses
            .iter()
            .map(|p| {
                let t = p.transformed(&rot, shift);
                CameraPose { translation: scale(t.translation, s), ..t }
            })
            .collect();
        let reference = central_reference_index(&poses);
        prop_assert_eq!(reference, central_reference_index(&moved));
        let (a, _) = normalize_cameras(&poses, reference).unwrap();
        let (b, _) = normalize_cameras(&moved, reference).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            prop_assert!(max_mat_diff(&pa.rotation, &pb.rotation) < 1e-9);
            prop_assert!(norm(sub(pa.translation, pb.translation)) < 1e-9);
        }
    }

    #[test]
    fn plucker_rays_are_unit_and_orthogonal(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let pose = random_pose(&mut r);
        let intr = CameraIntrinsics::from_fov(6, 4, r.random_range(0.3..2.5));
        let map = compute_plucker_map(&pose, &intr, 4, 6).unwrap();
        for ray in map.values().chunks(6) {
            let (d, m) = ([ray[0], ray[1], ray[2]], [ray[3], ray[4], ray[5]]);
            prop_assert!((norm(d) - 1.0).abs() < 1e-12);
            prop_assert!(dot(d, m).abs() < 1e-12);
        }
    }
}
