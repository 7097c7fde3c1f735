//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use lvsm::diffnum::Tensor;
use lvsm::model::{Architecture, AttentionVariant, LayerParams, LvsmConfig, LvsmWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn tiny_config(
    architecture: Architecture,
    attention: AttentionVariant,
    layers: usize,
) -> LvsmConfig {
    let enc = architecture == Architecture::EncoderDecoder;
    LvsmConfig {
        architecture,
        encoder_layers: if enc { layers } else { 0 },
        decoder_layers: layers,
        dim: 8,
        heads: 2,
        mlp_ratio: 4,
        patch_size: 1,
        latent_tokens: if enc { 2 } else { 0 },
        attention,
    }
}

/// Weights with every tensor redrawn from a wide distribution, so gains and
/// projections are far from their initial values.
pub fn scrambled_weights(config: &LvsmConfig, seed: u64) -> LvsmWeights<f64> {
    let base = lvsm::model::init_weights::<f64>(config, seed).unwrap();
    let mut r = rng(seed ^ 0xabcdef);
    base.map(|name, t| {
        if name.ends_with("ln_attn") || name.ends_with("ln_mlp") {
            uniform(t.shape(), 0.5, 1.5, &mut r)
        } else if name.ends_with("qk_gain") {
            uniform(t.shape(), 1.0, 3.0, &mut r)
        } else {
            uniform(t.shape(), -0.5, 0.5, &mut r)
        }
    })
}

fn linear(x: &Mat, w: &Tensor<f64>) -> Mat {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), din);
            (0..dout)
                .map(|j| (0..din).map(|i| row[i] * wd[i * dout + j]).sum())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, g: &Tensor<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mu = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
            let s = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .zip(g.data())
                .map(|(v, gi)| (v - mu) * s * gi)
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Which key each query may attend to, from the variant's definition.
pub fn oracle_allowed(variant: AttentionVariant, context: usize) -> impl Fn(usize, usize) -> bool {
    let updated = matches!(variant, AttentionVariant::Full | AttentionVariant::PerPatch);
    let joint = matches!(
        variant,
        AttentionVariant::Full | AttentionVariant::FrozenLatents
    );
    move |i, j| {
        let (qi_ctx, kj_ctx) = (i < context, j < context);
        if qi_ctx && !updated {
            return i == j;
        }
        match (qi_ctx, kj_ctx) {
            (_, true) => true,
            (_, false) => joint,
        }
    }
}

/// Multi-head QK-Norm attention written as explicit loops.
pub fn oracle_attention(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    gains: &[f64],
    heads: usize,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Mat {
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let unit = |row: &Vec<f64>| -> Vec<f64> {
            let seg = &row[cols.clone()];
            let n = (seg.iter().map(|x| x * x).sum::<f64>() + 1e-6).sqrt();
            seg.iter().map(|x| x / n).collect()
        };
        let qs: Vec<Vec<f64>> = q.iter().map(unit).collect();
        let ks: Vec<Vec<f64>> = k.iter().map(unit).collect();
        for i in 0..q.len() {
            let mut logits = vec![f64::NEG_INFINITY; k.len()];
            for j in 0..k.len() {
                if allowed(i, j) {
                    logits[j] =
                        gains[h] * qs[i].iter().zip(&ks[j]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k.len() {
                for c in cols.clone() {
                    out[i][c] += e[j] / z * v[j][c];
                }
            }
        }
    }
    out
}

/// One pre-norm block; the first `frozen` rows are returned unchanged.
pub fn oracle_layer(
    x: &Mat,
    p: &LayerParams<Tensor<f64>>,
    heads: usize,
    allowed: &dyn Fn(usize, usize) -> bool,
    frozen: usize,
) -> Mat {
    let h = layer_norm(x, &p.ln_attn);
    let (q, k, v) = (linear(&h, &p.wq), linear(&h, &p.wk), linear(&h, &p.wv));
    let a = linear(
        &oracle_attention(&q, &k, &v, p.qk_gain.data(), heads, allowed),
        &p.wo,
    );
    let x1: Mat = x
        .iter()
        .zip(&a)
        .map(|(r, s)| r.iter().zip(s).map(|(u, w)| u + w).collect())
        .collect();
    let up = linear(&layer_norm(&x1, &p.ln_mlp), &p.w_up);
    let act: Mat = up
        .iter()
        .map(|r| r.iter().map(|&u| gelu(u)).collect())
        .collect();
    let down = linear(&act, &p.w_down);
    let mut out: Mat = x1
        .iter()
        .zip(&down)
        .map(|(r, s)| r.iter().zip(s).map(|(u, w)| u + w).collect())
        .collect();
    out[..frozen].clone_from_slice(&x[..frozen]);
    out
}

fn frozen_rows(variant: AttentionVariant, context: usize) -> usize {
    match variant {
        AttentionVariant::FrozenLatents | AttentionVariant::PureCross => context,
        _ => 0,
    }
}

/// Encoder over `[x; e]`, then the decoder over `[z; q]`; returns the target rows.
pub fn oracle_encoder_decoder(w: &LvsmWeights<f64>, cfg: &LvsmConfig, x: &Mat, q: &Mat) -> Mat {
    let e = to_mat(w.latents.as_ref().unwrap());
    let mut seq: Mat = x.iter().chain(&e).cloned().collect();
    for layer in &w.encoder {
        seq = oracle_layer(&seq, layer, cfg.heads, &|_, _| true, 0);
    }
    let z: Mat = seq[x.len()..].to_vec();
    let mut seq: Mat = z.iter().chain(q).cloned().collect();
    let allowed = oracle_allowed(cfg.attention, z.len());
    for layer in &w.decoder {
        seq = oracle_layer(
            &seq,
            layer,
            cfg.heads,
            &allowed,
            frozen_rows(cfg.attention, z.len()),
        );
    }
    seq[z.len()..].to_vec()
}

pub fn oracle_decoder_only(w: &LvsmWeights<f64>, cfg: &LvsmConfig, x: &Mat, q: &Mat) -> Mat {
    let mut seq: Mat = x.iter().chain(q).cloned().collect();
    let allowed = oracle_allowed(cfg.attention, x.len());
    for layer in &w.decoder {
        seq = oracle_layer(&seq, layer, cfg.heads, &allowed, 0);
    }
    seq[x.len()..].to_vec()
}

pub fn max_abs_diff(a: &Mat, b: &[f64]) -> f64 {
    a.iter()
        .flatten()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `|a - f| / max(|a|, |f|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Step for central differences.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not count as large relative deviations.
pub const FD_FLOOR: f64 = 1e-3;

pub type Build<'a> = dyn Fn(&mut lvsm::diffnum::Tape<f64>, &[lvsm::diffnum::Var]) -> lvsm::Result<lvsm::diffnum::Var>
    + 'a;

/// Largest relative error between tape gradients and central differences of
/// `sum(r · build(inputs))` for a fixed random `r`, over every input element.
pub fn check_op(inputs: &[Tensor<f64>], build: &Build<'_>) -> f64 {
    use lvsm::diffnum::Tape;
    let eval = |vals: &[Tensor<f64>],
                proj: Option<&Tensor<f64>>|
     -> (f64, Tensor<f64>, Vec<Option<Tensor<f64>>>) {
        let mut tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let value = tape.value(out).clone();
        let r = proj
            .cloned()
            .unwrap_or_else(|| uniform(value.shape(), -1.0, 1.0, &mut rng(99)));
        let loss: f64 = value.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let grads = if proj.is_none() {
            let g = tape.backward(out, Some(r.clone())).unwrap();
            vars.iter().map(|&v| g.get(v).cloned()).collect()
        } else {
            Vec::new()
        };
        (loss, r, grads)
    };
    let (_, r, grads) = eval(inputs, None);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads[i]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let numeric = numeric_gradient(input.data(), FD_STEP, |x| {
            let mut vals = inputs.to_vec();
            vals[i] = Tensor::from_vec(input.shape().to_vec(), x.to_vec()).unwrap();
            eval(&vals, Some(&r)).0
        });
        for (a, f) in analytic.data().iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *f, FD_FLOOR));
        }
    }
    worst
}
