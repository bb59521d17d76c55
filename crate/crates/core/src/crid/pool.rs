//! Multi-scale region tokens and query-based attention pooling.

use crate::error::{shape_err, Error, Result};
use crate::numcore::ops::{avg_pool_grid, avg_pool_grid_backward, concat_rows, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward};
use crate::numcore::Tensor;

/// Side of the square token grid holding `n` tokens.
pub fn grid_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(shape_err(format!("{n} patch tokens do not form a square grid")));
    }
    Ok(side)
}

pub fn num_region_tokens(side: usize, scales: &[usize]) -> Result<usize> {
    scales.iter().try_fold(0, |acc, &s| {
        if s == 0 || side % s != 0 {
            return Err(shape_err(format!("region scale {s} does not divide token grid side {side}")));
        }
        Ok(acc + (side / s) * (side / s))
    })
}

/// Average-pools the token grid at every scale, concatenated in ascending
/// scale order.
pub fn region_tokens(p: &Tensor, scales: &[usize]) -> Result<Tensor> {
    let (n, d) = p.expect_2d("patch tokens")?;
    let side = grid_side(n)?;
    num_region_tokens(side, scales)?;
    let mut sorted = scales.to_vec();
    sorted.sort_unstable();
    let grid = p.clone().reshape(&[side, side, d])?;
    let mut parts = Vec::with_capacity(sorted.len());
    for s in sorted {
        let pooled = avg_pool_grid(&grid, s)?;
        let k = (side / s) * (side / s);
        parts.push(pooled.reshape(&[k, d])?);
    }
    concat_rows(&parts.iter().collect::<Vec<_>>())
}

pub fn region_tokens_backward(dr: &Tensor, n: usize, scales: &[usize]) -> Result<Tensor> {
    let d = dr.cols();
    let side = grid_side(n)?;
    let mut sorted = scales.to_vec();
    sorted.sort_unstable();
    let mut dp = Tensor::zeros(&[n, d]);
    let mut row = 0;
    for s in sorted {
        let k = (side / s) * (side / s);
        let block = dr.slice_rows(row, row + k).reshape(&[side / s, side / s, d])?;
        row += k;
        dp.add_assign(&avg_pool_grid_backward(&block, side, side, s).reshape(&[n, d])?)?;
    }
    Ok(dp)
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    q: Tensor,
    keys: Tensor,
    values: Tensor,
    weights: Tensor,
}

impl PoolCache {
    /// Attention of each memory query over the context rows.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

/// `Z = softmax(β · Q Kᵀ) V` for already projected keys and values.
pub fn attention_pool(q: &Tensor, keys: &Tensor, values: &Tensor, beta: f64) -> Result<(Tensor, PoolCache)> {
    let weights = softmax_rows(&matmul_nt(q, keys)?.scale(beta))?;
    let z = matmul(&weights, values)?;
    Ok((
        z,
        PoolCache {
            q: q.clone(),
            keys: keys.clone(),
            values: values.clone(),
            weights,
        },
    ))
}

/// Returns `(dQ, dKeys, dValues)`.
pub fn attention_pool_backward(c: &PoolCache, dz: &Tensor, beta: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let da = matmul_nt(dz, &c.values)?;
    let dvalues = matmul_tn(&c.weights, dz)?;
    let ds = softmax_rows_backward(&c.weights, &da).scale(beta);
    Ok((matmul(&ds, &c.keys)?, matmul_tn(&ds, &c.q)?, dvalues))
}

/// Projection-free pooling of `x` onto the memory queries `q`: every output
/// row is a convex combination of rows of `x`.
pub fn hopfield_pool(q: &Tensor, x: &Tensor, beta: f64) -> Result<Tensor> {
    let (m, d) = q.expect_2d("pooling queries")?;
    let (l, dx) = x.expect_2d("pooling context")?;
    if d != dx {
        return Err(shape_err(format!("pooling queries of width {d} over context of width {dx}")));
    }
    check_memory_size(m, l)?;
    Ok(attention_pool(q, x, x, beta)?.0)
}

pub fn check_memory_size(m: usize, l: usize) -> Result<()> {
    if 4 * m > l {
        return Err(Error::Config(format!(
            "{m} memory tokens for a context of {l} rows; at most {} allowed",
            l / 4
        )));
    }
    Ok(())
}
