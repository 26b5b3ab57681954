//! Combining the pooled text vector with the sentence graph vector.

use crate::autodiff::{concat_cols, Var};
use crate::error::{Error, Result};

fn same_width(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

/// `[h_seq | h_g] W + b`.
pub fn fuse_cat<'t>(h_seq: Var<'t>, h_g: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_width("fuse_cat", h_seq, h_g)?;
    concat_cols(&[h_seq, h_g])?.matmul(w)?.add_row(b)
}

/// `g * h_seq + (1 - g) * h_g` with `g = sigmoid([h_seq | h_g] W + b)`.
/// Returns the fused vector and the gate.
pub fn fuse_gate<'t>(h_seq: Var<'t>, h_g: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    same_width("fuse_gate", h_seq, h_g)?;
    let g = concat_cols(&[h_seq, h_g])?.matmul(w)?.add_row(b)?.sigmoid()?;
    let fused = g.mul(h_seq)?.add(g.scale(-1.0)?.add_scalar(1.0)?.mul(h_g)?)?;
    Ok((fused, g))
}

/// Scaled dot-product attention with the graph vector as the query over token states.
pub fn fuse_attn<'t>(h_g: Var<'t>, tokens: Var<'t>) -> Result<Var<'t>> {
    if h_g.cols() != tokens.cols() {
        return Err(Error::dim("fuse_attn", &h_g.shape(), &tokens.shape()));
    }
    let scale = 1.0 / (h_g.cols() as f64).sqrt();
    h_g.matmul(tokens.transpose()?)?.scale(scale)?.softmax()?.matmul(tokens)
}

/// `h_seq + alpha * h_f`.
pub fn residual<'t>(h_seq: Var<'t>, h_f: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    same_width("residual", h_seq, h_f)?;
    h_seq.add(h_f.scale(alpha)?)
}

/// Linear head `x W + b`.
pub fn classify<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    x.matmul(w)?.add_row(b)
}
