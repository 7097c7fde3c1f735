mod common;

use common::{rng, uniform};
use lvsm::diffnum::Tensor;
use lvsm::geometry::{compute_plucker_map, CameraIntrinsics, CameraPose, PluckerMap};
use lvsm::image::Image;
use lvsm::tokenizer::{
    decode_output_head, patchify, tokenize_input_view, tokenize_target_view, unpatchify, GridMeta,
    TokenKind, TokenSequence,
};
use proptest::prelude::*;
use rand::Rng;

fn random_image(h: usize, w: usize, r: &mut impl Rng) -> Image {
    Image::new(
        h,
        w,
        (0..h * w * 3).map(|_| r.random_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn plucker(h: usize, w: usize) -> PluckerMap {
    let pose = CameraPose::look_at([1.0, -2.0, 0.5], [0.1, 0.0, 0.0], [0.0, 0.0, 1.0]);
    compute_plucker_map(&pose, &CameraIntrinsics::from_fov(w, h, 1.0), h, w).unwrap()
}

/// Element `(row, col, c)` of the patch vector of patch `j`, built by hand.
fn naive_patch(
    values: impl Fn(usize, usize, usize) -> f64,
    channels: usize,
    width: usize,
    p: usize,
    j: usize,
) -> Vec<f64> {
    let cols = width / p;
    let (pr, pc) = (j / cols, j % cols);
    let mut v = Vec::new();
    for dy in 0..p {
        for dx in 0..p {
            for c in 0..channels {
                v.push(values(pr * p + dy, pc * p + dx, c));
            }
        }
    }
    v
}

fn mat_vec_t(v: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let cols = w.shape()[1];
    (0..cols)
        .map(|j| {
            v.iter()
                .enumerate()
                .map(|(i, x)| x * w.data()[i * cols + j])
                .sum()
        })
        .collect()
}

#[test]
fn random_array_roundtrips_bit_exactly() {
    let mut r = rng(1);
    let data: Vec<f64> = (0..16 * 16 * 9).map(|_| r.random::<f64>()).collect();
    let grid = patchify(&data, 16, 16, 9, 4).unwrap();
    assert_eq!(grid.num_patches(), 16);
    assert_eq!(grid.patch_len(), 144);
    let back = unpatchify(&grid);
    assert!(back
        .iter()
        .zip(&data)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn input_tokens_match_per_patch_oracle() {
    let (h, w, p, d) = (8, 12, 4, 5);
    let mut r = rng(2);
    let image = random_image(h, w, &mut r);
    let rays = plucker(h, w);
    let weights = uniform(&[9 * p * p, d], -1.0, 1.0, &mut r);
    let tokens = tokenize_input_view(&image, &rays, &weights).unwrap();
    assert_eq!(tokens.kind, TokenKind::InputImage);
    assert_eq!(tokens.len(), (h / p) * (w / p));
    for j in 0..tokens.len() {
        let rgb = naive_patch(|y, x, c| f64::from(image.pixel(y, x)[c]), 3, w, p, j);
        let ray = naive_patch(|y, x, c| rays.values()[(y * w + x) * 6 + c], 6, w, p, j);
        let want = mat_vec_t(&[rgb, ray].concat(), &weights);
        for (a, b) in tokens.token(j).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn permutation_weights_expose_the_patch_vector() {
    let (h, w, p) = (4, 4, 2);
    let n = 9 * p * p;
    let mut r = rng(3);
    let image = random_image(h, w, &mut r);
    let rays = plucker(h, w);
    // Reverses the order of the patch vector entries.
    let mut perm = vec![0.0; n * n];
    for i in 0..n {
        perm[i * n + (n - 1 - i)] = 1.0;
    }
    let weights = Tensor::from_vec(vec![n, n], perm).unwrap();
    let tokens = tokenize_input_view(&image, &rays, &weights).unwrap();
    for j in 0..tokens.len() {
        let rgb = naive_patch(|y, x, c| f64::from(image.pixel(y, x)[c]), 3, w, p, j);
        let ray = naive_patch(|y, x, c| rays.values()[(y * w + x) * 6 + c], 6, w, p, j);
        let mut want = [rgb, ray].concat();
        want.reverse();
        assert_eq!(tokens.token(j), want.as_slice());
    }
}

#[test]
fn target_tokens_match_per_patch_oracle() {
    let (h, w, p, d) = (8, 8, 4, 7);
    let mut r = rng(4);
    let rays = plucker(h, w);
    let weights = uniform(&[6 * p * p, d], -1.0, 1.0, &mut r);
    let tokens = tokenize_target_view(&rays, &weights).unwrap();
    assert_eq!(tokens.kind, TokenKind::TargetQuery);
    for j in 0..tokens.len() {
        let ray = naive_patch(|y, x, c| rays.values()[(y * w + x) * 6 + c], 6, w, p, j);
        let want = mat_vec_t(&ray, &weights);
        for (a, b) in tokens.token(j).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

fn grid(rows: usize, cols: usize, p: usize) -> GridMeta {
    GridMeta {
        views: 1,
        grid_rows: rows,
        grid_cols: cols,
        patch: p,
    }
}

#[test]
fn output_head_matches_per_patch_oracle() {
    let (rows, cols, p, d) = (2, 3, 2, 6);
    let mut r = rng(5);
    let tokens = uniform(&[rows * cols, d], -2.0, 2.0, &mut r);
    let weights = uniform(&[d, 3 * p * p], -1.0, 1.0, &mut r);
    let seq = TokenSequence {
        tokens: tokens.clone(),
        kind: TokenKind::Output,
        grid: Some(grid(rows, cols, p)),
    };
    let image = decode_output_head(&seq, &weights).unwrap();
    assert_eq!((image.height(), image.width()), (rows * p, cols * p));
    for j in 0..rows * cols {
        let logits = mat_vec_t(&tokens.data()[j * d..(j + 1) * d], &weights);
        let (pr, pc) = (j / cols, j % cols);
        for dy in 0..p {
            for dx in 0..p {
                let px = image.pixel(pr * p + dy, pc * p + dx);
                for c in 0..3 {
                    let want = 1.0 / (1.0 + (-logits[(dy * p + dx) * 3 + c]).exp());
                    assert!((f64::from(px[c]) - want).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn large_logits_saturate_to_white() {
    let p = 2;
    let n = 3 * p * p;
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let seq = TokenSequence {
        tokens: Tensor::full(vec![1, n], 8.0),
        kind: TokenKind::Output,
        grid: Some(grid(1, 1, p)),
    };
    let image = decode_output_head(&seq, &Tensor::from_vec(vec![n, n], eye).unwrap()).unwrap();
    assert!(image.data().iter().all(|&v| (1.0 - v) < 1e-3 && v < 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn editing_one_patch_changes_exactly_one_token(
        seed in 0u64..10_000,
        y in 0usize..8,
        x in 0usize..8,
        c in 0usize..3,
    ) {
        let mut r = rng(seed);
        let image = random_image(8, 8, &mut r);
        let rays = plucker(8, 8);
        let weights = uniform(&[9 * 16, 4], -1.0, 1.0, &mut r);
        let mut edited = image.clone();
        let mut px = edited.pixel(y, x);
        px[c] = 1.0 - px[c] + 0.25;
        edited.set_pixel(y, x, px);
        let a = tokenize_input_view(&image, &rays, &weights).unwrap();
        let b = tokenize_input_view(&edited, &rays, &weights).unwrap();
        let changed: Vec<usize> = (0..a.len()).filter(|&j| a.token(j) != b.token(j)).collect();
        prop_assert_eq!(changed, vec![(y / 4) * 2 + x / 4]);
    }
}
