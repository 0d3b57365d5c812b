//! Reusable network building blocks: named affine layers, MLPs, and the
//! pre-norm transformer block used by the trajectory encoder.

use super::params::ParamSet;
use super::tape::{BoundParams, Tape, Var};
use super::{NumError, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Gelu,
    Identity,
}

/// y = x W + b with parameters `<name>.w` / `<name>.b`.
pub fn affine_layer(
    tape: &mut Tape,
    bound: &BoundParams,
    name: &str,
    x: Var,
) -> Result<Var, NumError> {
    let w = bound.var(&format!("{name}.w"));
    let b = bound.var(&format!("{name}.b"));
    tape.affine(x, w, b)
}

/// Register an MLP: dims = [in, hidden..., out].
pub fn init_mlp(
    params: &mut ParamSet,
    prefix: &str,
    dims: &[usize],
    rng: &mut Rng,
) -> Result<(), NumError> {
    for i in 0..dims.len() - 1 {
        params.insert_affine(&format!("{prefix}.l{i}"), dims[i], dims[i + 1], rng)?;
    }
    Ok(())
}

/// Forward an MLP registered by [`init_mlp`]; activation applied between
/// layers, never after the last one.
pub fn mlp_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    x: Var,
    layer_count: usize,
    activation: Activation,
) -> Result<Var, NumError> {
    let mut h = x;
    for i in 0..layer_count {
        h = affine_layer(tape, bound, &format!("{prefix}.l{i}"), h)?;
        if i + 1 < layer_count {
            h = match activation {
                Activation::Tanh => tape.tanh(h)?,
                Activation::Gelu => tape.gelu(h)?,
                Activation::Identity => h,
            };
        }
    }
    Ok(h)
}

/// Register one pre-norm transformer block (attention + feed-forward).
pub fn init_transformer_block(
    params: &mut ParamSet,
    prefix: &str,
    d_model: usize,
    d_ff: usize,
    rng: &mut Rng,
) -> Result<(), NumError> {
    for ln in ["ln1", "ln2"] {
        params.insert(&format!("{prefix}.{ln}.g"), Tensor::full(&[d_model], 1.0))?;
        params.insert(&format!("{prefix}.{ln}.b"), Tensor::zeros(&[d_model]))?;
    }
    for proj in ["wq", "wv", "wo"] {
        params.insert_affine(&format!("{prefix}.{proj}"), d_model, d_model, rng)?;
    }
    // key projection is bias-free (softmax cancels a shared row shift)
    let bound = (6.0 / (2 * d_model) as f64).sqrt();
    let wk: Vec<f64> = (0..d_model * d_model)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    params.insert(
        &format!("{prefix}.wk.w"),
        Tensor::new(vec![d_model, d_model], wk)?,
    )?;
    params.insert_affine(&format!("{prefix}.ff0"), d_model, d_ff, rng)?;
    params.insert_affine(&format!("{prefix}.ff1"), d_ff, d_model, rng)?;
    Ok(())
}

/// Pre-norm multi-head self-attention + GELU feed-forward, both residual.
pub fn attention_block(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    tokens: Var,
    heads: usize,
    causal: bool,
) -> Result<Var, NumError> {
    let p = |n: &str| bound.var(&format!("{prefix}.{n}"));

    let normed = tape.layer_norm(tokens, p("ln1.g"), p("ln1.b"))?;
    let attended = tape.multi_head_attention(
        normed,
        p("wq.w"),
        p("wq.b"),
        p("wk.w"),
        p("wv.w"),
        p("wv.b"),
        p("wo.w"),
        p("wo.b"),
        heads,
        causal,
    )?;
    let h = tape.add(tokens, attended)?;

    let normed2 = tape.layer_norm(h, p("ln2.g"), p("ln2.b"))?;
    let ff = tape.affine(normed2, p("ff0.w"), p("ff0.b"))?;
    let ff = tape.gelu(ff)?;
    let ff = tape.affine(ff, p("ff1.w"), p("ff1.b"))?;
    tape.add(h, ff)
}
