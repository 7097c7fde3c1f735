//! ViT-style patch tokenization of posed images and target ray maps, and the
//! sigmoid output head that turns target tokens back into pixels.
//!
//! Patches are ordered row-major over the patch grid. Inside a patch, pixels
//! are row-major and each pixel's channels are contiguous. Input patches
//! concatenate the RGB patch and the Plücker patch, in that order.

use crate::diffnum::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PluckerMap;
use crate::image::Image;

pub const INPUT_CHANNELS: usize = 9;
pub const TARGET_CHANNELS: usize = 6;
pub const OUTPUT_CHANNELS: usize = 3;

/// Non-overlapping `p × p` patches of an `H × W × C` array.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T> {
    pub patch: usize,
    pub channels: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// `(grid_rows·grid_cols) × (p·p·C)`, row-major.
    pub data: Vec<T>,
}

impl<T: Copy> PatchGrid<T> {
    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn patch_slice(&self, j: usize) -> &[T] {
        let n = self.patch_len();
        &self.data[j * n..(j + 1) * n]
    }
}

fn check_divisible(height: usize, width: usize, p: usize) -> Result<()> {
    if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) || height == 0 || width == 0
    {
        return Err(Error::shape(format!(
            "{height}×{width} is not divisible into {p}×{p} patches"
        )));
    }
    Ok(())
}

/// For each element of the patchified layout, its index in the `H × W × C` source.
pub fn patch_source_index(
    height: usize,
    width: usize,
    channels: usize,
    p: usize,
) -> Result<Vec<usize>> {
    check_divisible(height, width, p)?;
    let (gr, gc) = (height / p, width / p);
    let mut index = Vec::with_capacity(height * width * channels);
    for pr in 0..gr {
        for pc in 0..gc {
            for py in 0..p {
                for px in 0..p {
                    let pixel = (pr * p + py) * width + pc * p + px;
                    index.extend((0..channels).map(|ch| pixel * channels + ch));
                }
            }
        }
    }
    Ok(index)
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (i, &j) in index.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

pub fn patchify<T: Copy>(
    array: &[T],
    height: usize,
    width: usize,
    channels: usize,
    p: usize,
) -> Result<PatchGrid<T>> {
    if array.len() != height * width * channels {
        return Err(Error::shape(format!(
            "array of {} values is not {height}×{width}×{channels}",
            array.len()
        )));
    }
    let index = patch_source_index(height, width, channels, p)?;
    Ok(PatchGrid {
        patch: p,
        channels,
        grid_rows: height / p,
        grid_cols: width / p,
        data: index.iter().map(|&i| array[i]).collect(),
    })
}

/// Inverse of [`patchify`], returning the `H × W × C` array.
pub fn unpatchify<T: Copy>(grid: &PatchGrid<T>) -> Vec<T> {
    let (h, w) = (grid.grid_rows * grid.patch, grid.grid_cols * grid.patch);
    let index = patch_source_index(h, w, grid.channels, grid.patch).expect("grid is divisible");
    invert(&index).iter().map(|&i| grid.data[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    InputImage,
    TargetQuery,
    Latent,
    Output,
}

/// Shape of the patch grid a token sequence was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridMeta {
    pub views: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch: usize,
}

impl GridMeta {
    pub fn patches_per_view(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn image_height(&self) -> usize {
        self.grid_rows * self.patch
    }

    pub fn image_width(&self) -> usize {
        self.grid_cols * self.patch
    }
}

/// `L × d` tokens with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Tensor<T>,
    pub kind: TokenKind,
    pub grid: Option<GridMeta>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn token(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.tokens.data()[i * d..(i + 1) * d]
    }

    /// Concatenates the input tokens of several views, view-major.
    pub fn concat_views(views: &[TokenSequence<T>]) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::shape("no views to concatenate"))?;
        let d = first.dim();
        let mut data = Vec::new();
        let mut total = 0;
        for v in views {
            if v.dim() != d
                || v.grid.map(|g| (g.grid_rows, g.grid_cols))
                    != first.grid.map(|g| (g.grid_rows, g.grid_cols))
            {
                return Err(Error::shape("views disagree in token dim or grid"));
            }
            data.extend_from_slice(v.tokens.data());
            total += v.len();
        }
        Ok(Self {
            tokens: Tensor::from_vec(vec![total, d], data)?,
            kind: first.kind,
            grid: first.grid.map(|g| GridMeta {
                views: views.len(),
                ..g
            }),
        })
    }
}

/// Per-patch `[RGB, Plücker]` vectors of one input view, `(HW/p²) × 9p²`.
pub fn input_patch_matrix<T: Scalar>(
    image: &Image,
    plucker: &PluckerMap,
    p: usize,
) -> Result<Tensor<T>> {
    let (h, w) = (image.height(), image.width());
    if plucker.height() != h || plucker.width() != w {
        return Err(Error::shape(format!(
            "image {h}×{w} with Plücker map {}×{}",
            plucker.height(),
            plucker.width()
        )));
    }
    let rgb = patchify(image.data(), h, w, 3, p)?;
    let rays = patchify(plucker.values(), h, w, 6, p)?;
    let n = rgb.num_patches();
    let mut data = Vec::with_capacity(n * p * p * INPUT_CHANNELS);
    for j in 0..n {
        data.extend(rgb.patch_slice(j).iter().map(|&v| T::of(f64::from(v))));
        data.extend(rays.patch_slice(j).iter().map(|&v| T::of(v)));
    }
    Tensor::from_vec(vec![n, p * p * INPUT_CHANNELS], data)
}

/// Per-patch Plücker vectors of a target view, `(HW/p²) × 6p²`.
pub fn target_patch_matrix<T: Scalar>(plucker: &PluckerMap, p: usize) -> Result<Tensor<T>> {
    let rays = patchify(plucker.values(), plucker.height(), plucker.width(), 6, p)?;
    let n = rays.num_patches();
    let data = rays.data.iter().map(|&v| T::of(v)).collect();
    Tensor::from_vec(vec![n, p * p * TARGET_CHANNELS], data)
}

fn project<T: Scalar>(patches: Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(patches);
    let w = tape.constant(weights.clone());
    let y = tape.matmul(x, w)?;
    Ok(tape.value(y).clone())
}

fn grid_of(height: usize, width: usize, p: usize) -> GridMeta {
    GridMeta {
        views: 1,
        grid_rows: height / p,
        grid_cols: width / p,
        patch: p,
    }
}

fn patch_size_from(shape: &[usize], channels: usize) -> Result<usize> {
    let rows = match shape {
        [r, _] => *r,
        s => {
            return Err(Error::shape(format!(
                "linear map must be a matrix, got {s:?}"
            )))
        }
    };
    let p = ((rows / channels) as f64).sqrt().round() as usize;
    if p * p * channels != rows {
        return Err(Error::shape(format!(
            "linear map input size {rows} is not p²·{channels}"
        )));
    }
    Ok(p)
}

/// Input patch tokens `x_ij = [I_ij, P_ij] · W_input`; `weights` is `9p² × d`.
pub fn tokenize_input_view<T: Scalar>(
    image: &Image,
    plucker: &PluckerMap,
    weights: &Tensor<T>,
) -> Result<TokenSequence<T>> {
    let p = patch_size_from(weights.shape(), INPUT_CHANNELS)?;
    let patches = input_patch_matrix(image, plucker, p)?;
    Ok(TokenSequence {
        tokens: project(patches, weights)?,
        kind: TokenKind::InputImage,
        grid: Some(grid_of(image.height(), image.width(), p)),
    })
}

/// Target query tokens `q_j = P^t_j · W_target`; `weights` is `6p² × d`.
pub fn tokenize_target_view<T: Scalar>(
    plucker: &PluckerMap,
    weights: &Tensor<T>,
) -> Result<TokenSequence<T>> {
    let p = patch_size_from(weights.shape(), TARGET_CHANNELS)?;
    let patches = target_patch_matrix(plucker, p)?;
    Ok(TokenSequence {
        tokens: project(patches, weights)?,
        kind: TokenKind::TargetQuery,
        grid: Some(grid_of(plucker.height(), plucker.width(), p)),
    })
}

/// Records the output head on a tape: `sigmoid(y · W_out)` per token,
/// reassembled into an `H × W × 3` image tensor.
pub fn decode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    outputs: Var,
    out_proj: Var,
    grid: GridMeta,
) -> Result<Var> {
    let lq = tape.value(outputs).shape()[0];
    if lq != grid.patches_per_view() {
        return Err(Error::shape(format!(
            "{lq} output tokens for a {}×{} patch grid",
            grid.grid_rows, grid.grid_cols
        )));
    }
    let logits = tape.matmul(outputs, out_proj)?;
    if tape.value(logits).shape()[1] != grid.patch * grid.patch * OUTPUT_CHANNELS {
        return Err(Error::shape("output head width is not 3p²"));
    }
    let rgb = tape.sigmoid(logits);
    let (h, w) = (grid.image_height(), grid.image_width());
    let index = invert(&patch_source_index(h, w, OUTPUT_CHANNELS, grid.patch)?);
    tape.gather(rgb, index, &[h, w, OUTPUT_CHANNELS])
}

/// Decodes output tokens into an image with values strictly inside `(0, 1)`.
pub fn decode_output_head<T: Scalar>(
    outputs: &TokenSequence<T>,
    weights: &Tensor<T>,
) -> Result<Image> {
    let grid = outputs
        .grid
        .ok_or_else(|| Error::shape("output tokens carry no grid metadata"))?;
    let mut tape = Tape::new();
    let y = tape.constant(outputs.tokens.clone());
    let w = tape.constant(weights.clone());
    let img = decode_on_tape(&mut tape, y, w, grid)?;
    Image::new(
        grid.image_height(),
        grid.image_width(),
        tape.value(img)
            .data()
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect(),
    )
}
