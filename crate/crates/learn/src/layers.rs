//! Parameterized building blocks. Each block reads its tensors from a [`ParamStore`] under a path prefix.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{glorot, Mat, ParamStore};

pub const LN_EPS: f64 = 1e-5;

pub fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, path: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{path}.w"), glorot(rng, fan_in, fan_out));
    store.insert(format!("{path}.b"), Mat::zeros((1, fan_out)));
}

pub fn linear(g: &mut Graph, store: &ParamStore, path: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{path}.w"))?;
    let b = g.param(store, &format!("{path}.b"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

pub fn init_layer_norm(store: &mut ParamStore, path: &str, dim: usize) {
    store.insert(format!("{path}.gamma"), Mat::ones((1, dim)));
    store.insert(format!("{path}.beta"), Mat::zeros((1, dim)));
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, path: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{path}.gamma"))?;
    let beta = g.param(store, &format!("{path}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, LN_EPS))
}

/// Linear layers `path.0 .. path.{n-1}` with the given widths.
pub fn init_mlp(store: &mut ParamStore, rng: &mut impl Rng, path: &str, dims: &[usize]) {
    for (i, w) in dims.windows(2).enumerate() {
        init_linear(store, rng, &format!("{path}.{i}"), w[0], w[1]);
    }
}

/// GELU between layers, none after the last.
pub fn mlp(g: &mut Graph, store: &ParamStore, path: &str, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, store, &format!("{path}.{i}"), h)?;
        if i + 1 < layers {
            h = g.gelu(h);
        }
    }
    Ok(h)
}

pub fn init_attention(store: &mut ParamStore, rng: &mut impl Rng, path: &str, dim: usize) {
    init_linear(store, rng, &format!("{path}.qkv"), dim, 3 * dim);
    init_linear(store, rng, &format!("{path}.proj"), dim, dim);
}

/// Dense multi-head self-attention over all rows.
pub fn attention(g: &mut Graph, store: &ParamStore, path: &str, heads: usize, x: Var) -> Result<Var> {
    let dim = g.value(x).ncols();
    let dh = dim / heads;
    let qkv = linear(g, store, &format!("{path}.qkv"), x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice_cols(qkv, h * dh, (h + 1) * dh);
        let k = g.slice_cols(qkv, dim + h * dh, dim + (h + 1) * dh);
        let v = g.slice_cols(qkv, 2 * dim + h * dh, 2 * dim + (h + 1) * dh);
        let scores = g.matmul_t(q, k);
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores);
        outs.push(g.matmul(p, v));
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, store, &format!("{path}.proj"), cat)
}

pub fn init_block(store: &mut ParamStore, rng: &mut impl Rng, path: &str, dim: usize, mlp_ratio: usize) {
    init_layer_norm(store, &format!("{path}.ln1"), dim);
    init_attention(store, rng, &format!("{path}.attn"), dim);
    init_layer_norm(store, &format!("{path}.ln2"), dim);
    init_mlp(store, rng, &format!("{path}.mlp"), &[dim, dim * mlp_ratio, dim]);
}

/// Pre-norm transformer block.
pub fn block(g: &mut Graph, store: &ParamStore, path: &str, heads: usize, x: Var) -> Result<Var> {
    let n1 = layer_norm(g, store, &format!("{path}.ln1"), x)?;
    let a = attention(g, store, &format!("{path}.attn"), heads, n1)?;
    let x = g.add(x, a);
    let n2 = layer_norm(g, store, &format!("{path}.ln2"), x)?;
    let m = mlp(g, store, &format!("{path}.mlp"), 2, n2)?;
    Ok(g.add(x, m))
}
