//! Class-token driven gating of projected text tokens.

use crate::error::{shape_err, Result};
use crate::numcore::ops::{broadcast_scale, broadcast_scale_backward, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward};
use crate::numcore::{Axis, Tensor};

/// Gated text tokens plus the two gates.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidedText {
    /// `N_t × d`.
    pub tokens: Tensor,
    /// Token gate, `1 × N_t`.
    pub alpha: Tensor,
    /// Channel gate, `1 × d`.
    pub beta: Tensor,
}

#[derive(Clone, Debug)]
pub struct GateCache {
    u: Tensor,
    u1: Tensor,
    q_tok: Tensor,
    q_ch: Tensor,
    alpha: Tensor,
    beta: Tensor,
}

/// `α = softmax(q_ch Uᵀ)` scales the rows of `U`; `β = softmax(q_tok U⁽¹⁾)`
/// then scales the columns.
pub fn cmg_gates(u: &Tensor, q_tok: &Tensor, q_ch: &Tensor) -> Result<(GuidedText, GateCache)> {
    let (n_t, d) = u.expect_2d("projected text")?;
    if q_tok.shape() != [1, n_t] || q_ch.shape() != [1, d] {
        return Err(shape_err(format!(
            "gate queries {:?} and {:?} for {n_t}x{d} text",
            q_tok.shape(),
            q_ch.shape()
        )));
    }
    let alpha = softmax_rows(&matmul_nt(q_ch, u)?)?;
    let u1 = broadcast_scale(u, &alpha, Axis::Rows)?;
    let beta = softmax_rows(&matmul(q_tok, &u1)?)?;
    let tokens = broadcast_scale(&u1, &beta, Axis::Cols)?;
    Ok((
        GuidedText {
            tokens,
            alpha: alpha.clone(),
            beta: beta.clone(),
        },
        GateCache {
            u: u.clone(),
            u1,
            q_tok: q_tok.clone(),
            q_ch: q_ch.clone(),
            alpha,
            beta,
        },
    ))
}

/// Returns `(dU, dq_tok, dq_ch)`.
pub fn cmg_gates_backward(c: &GateCache, dtokens: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (mut du1, dbeta) = broadcast_scale_backward(&c.u1, &c.beta, Axis::Cols, dtokens);
    let ds_b = softmax_rows_backward(&c.beta, &dbeta);
    let dq_tok = matmul_nt(&ds_b, &c.u1)?;
    du1.add_assign(&matmul_tn(&c.q_tok, &ds_b)?)?;
    let (mut du, dalpha) = broadcast_scale_backward(&c.u, &c.alpha, Axis::Rows, &du1);
    let ds_a = softmax_rows_backward(&c.alpha, &dalpha);
    let dq_ch = matmul(&ds_a, &c.u)?;
    du.add_assign(&matmul_tn(&ds_a, &c.q_ch)?)?;
    Ok((du, dq_tok, dq_ch))
}
