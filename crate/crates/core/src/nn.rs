//! Layers assembled from graph primitives.
//!
//! Every layer reads its weights from [`Parameters`] under a path prefix and
//! has a matching `*_specs` function listing the tensors it needs.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::{Init, Parameters, Tensor};

pub type ParamSpec = (String, usize, usize, Init);

pub fn linear_specs(prefix: &str, input: usize, output: usize) -> Vec<ParamSpec> {
    vec![
        (format!("{prefix}.weight"), input, output, Init::Glorot),
        (format!("{prefix}.bias"), 1, output, Init::Zeros),
    ]
}

/// `x · W + b` with `W: [in, out]`.
pub fn linear(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Layer widths `[in, hidden.., out]`; GELU between layers, none after the last.
pub fn mlp_specs(prefix: &str, widths: &[usize]) -> Vec<ParamSpec> {
    widths
        .windows(2)
        .enumerate()
        .flat_map(|(i, w)| linear_specs(&format!("{prefix}.{i}"), w[0], w[1]))
        .collect()
}

pub fn mlp(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var, TensorError> {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, params, &format!("{prefix}.{i}"), h)?;
        if i + 1 < layers {
            h = g.gelu(h)?;
        }
    }
    Ok(h)
}

pub fn layer_norm_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    vec![
        (format!("{prefix}.gain"), 1, d, Init::Ones),
        (format!("{prefix}.bias"), 1, d, Init::Zeros),
    ]
}

pub fn layer_norm(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias)
}

/// Scaled dot-product attention. Returns `(output, weights)`.
///
/// `mask[i * keys + j] == false` blocks query `i` from key `j`.
pub fn attention(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var), TensorError> {
    let (_, dq) = g.shape(queries);
    let (nk, dk) = g.shape(keys);
    let (nv, _) = g.shape(values);
    if dq != dk || nk != nv {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            detail: format!("query dim {dq}, key dim {dk}, {nk} keys, {nv} values"),
        });
    }
    let scores = g.matmul_t(queries, keys)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = g.softmax_rows_masked(scores, mask)?;
    let out = g.matmul(weights, values)?;
    Ok((out, weights))
}

pub fn multi_head_attention_specs(prefix: &str, d: usize, d_kv: usize) -> Vec<ParamSpec> {
    let mut specs = linear_specs(&format!("{prefix}.query"), d, d);
    specs.extend(linear_specs(&format!("{prefix}.key"), d_kv, d));
    specs.extend(linear_specs(&format!("{prefix}.value"), d_kv, d));
    specs.extend(linear_specs(&format!("{prefix}.out"), d, d));
    specs
}

/// Multi-head attention from `x` (`[n, d]`) over `memory` (`[m, d_kv]`).
pub fn multi_head_attention(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    heads: usize,
    x: Var,
    memory: Var,
) -> Result<Var, TensorError> {
    let q = linear(g, params, &format!("{prefix}.query"), x)?;
    let k = linear(g, params, &format!("{prefix}.key"), memory)?;
    let v = linear(g, params, &format!("{prefix}.value"), memory)?;
    let d = g.shape(q).1;
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "multi_head_attention",
            detail: format!("d={d} not divisible by {heads} heads"),
        });
    }
    let hd = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        outs.push(attention(g, qh, kh, vh, None)?.0);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    linear(g, params, &format!("{prefix}.out"), cat)
}

/// Sinusoidal position table, `[n, d]`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut values = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            values[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![n, d], values)
}

/// Hyperparameters of one decoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub d: usize,
    pub d_acoustic: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

pub fn transformer_block_specs(prefix: &str, dims: BlockDims) -> Vec<ParamSpec> {
    let mut specs = layer_norm_specs(&format!("{prefix}.ln_self"), dims.d);
    specs.extend(multi_head_attention_specs(
        &format!("{prefix}.self_attn"),
        dims.d,
        dims.d,
    ));
    specs.extend(layer_norm_specs(&format!("{prefix}.ln_cross"), dims.d));
    specs.extend(multi_head_attention_specs(
        &format!("{prefix}.cross_attn"),
        dims.d,
        dims.d_acoustic,
    ));
    specs.extend(layer_norm_specs(&format!("{prefix}.ln_ffn"), dims.d));
    specs.extend(mlp_specs(
        &format!("{prefix}.ffn"),
        &[dims.d, dims.ffn_hidden, dims.d],
    ));
    specs
}

/// Pre-norm decoder block: full self-attention over the word-pieces, then
/// cross-attention over every acoustic frame, then a feed-forward layer, each
/// wrapped in a residual connection.
pub fn transformer_block(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    dims: BlockDims,
    wp_embeddings: Var,
    acoustic: Var,
) -> Result<Var, TensorError> {
    let (m, d) = g.shape(wp_embeddings);
    let (t, da) = g.shape(acoustic);
    if m == 0 || t == 0 {
        return Err(TensorError::Empty {
            op: "transformer_block",
        });
    }
    if d != dims.d || da != dims.d_acoustic {
        return Err(TensorError::ShapeMismatch {
            op: "transformer_block",
            detail: format!("got d={d}, d_a={da}; configured {dims:?}"),
        });
    }
    let h = layer_norm(g, params, &format!("{prefix}.ln_self"), wp_embeddings)?;
    let h = multi_head_attention(g, params, &format!("{prefix}.self_attn"), dims.heads, h, h)?;
    let x = g.add(wp_embeddings, h)?;

    let h = layer_norm(g, params, &format!("{prefix}.ln_cross"), x)?;
    let h = multi_head_attention(
        g,
        params,
        &format!("{prefix}.cross_attn"),
        dims.heads,
        h,
        acoustic,
    )?;
    let x = g.add(x, h)?;

    let h = layer_norm(g, params, &format!("{prefix}.ln_ffn"), x)?;
    let h = mlp(g, params, &format!("{prefix}.ffn"), 2, h)?;
    g.add(x, h)
}
