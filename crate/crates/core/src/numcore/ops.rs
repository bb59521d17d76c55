//! Differentiable primitives. Every reduction runs in a fixed left-to-right
//! order so repeated calls are bitwise identical.

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Which axis a weight vector is broadcast along in [`broadcast_scale`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One weight per row: `out[i][j] = w[i] * m[i][j]`.
    Rows,
    /// One weight per column: `out[i][j] = w[j] * m[i][j]`.
    Cols,
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.expect_2d("matmul lhs")?;
    let (k2, n) = b.expect_2d("matmul rhs")?;
    if k != k2 {
        return Err(shape_err(format!(
            "matmul: inner dimensions disagree ({:?} x {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.expect_2d("matmul_nt rhs")?;
    matmul(a, &b.transpose())
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_2d("matmul_tn lhs")?;
    matmul(&a.transpose(), b)
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.expect_2d("softmax_rows")?;
    m.ensure_finite("softmax_rows")?;
    let mut out = m.clone();
    for i in 0..r {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
        debug_assert_eq!(row.len(), c);
    }
    Ok(out)
}

/// Gradient of [`softmax_rows`] given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (r, c) = (y.rows(), y.cols());
    let mut dx = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let (yr, gr) = (y.row(i), dy.row(i));
        let dot = yr.iter().zip(gr).fold(0.0, |a, (p, g)| a + p * g);
        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = yr[j] * (gr[j] - dot);
        }
    }
    dx
}

/// Block average over an `h × w × d` grid with non-overlapping `s × s` windows.
pub fn avg_pool_grid(g: &Tensor, s: usize) -> Result<Tensor> {
    let &[h, w, d] = g.shape() else {
        return Err(shape_err(format!(
            "avg_pool_grid: expected h x w x d, got {:?}",
            g.shape()
        )));
    };
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(shape_err(format!(
            "avg_pool_grid: window {s} does not divide grid {h}x{w}"
        )));
    }
    let (ho, wo) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f64;
    let src = g.data();
    let mut out = vec![0.0; ho * wo * d];
    for bi in 0..ho {
        for bj in 0..wo {
            let cell = &mut out[(bi * wo + bj) * d..(bi * wo + bj + 1) * d];
            for i in bi * s..(bi + 1) * s {
                for j in bj * s..(bj + 1) * s {
                    let px = &src[(i * w + j) * d..(i * w + j + 1) * d];
                    for (c, v) in cell.iter_mut().zip(px) {
                        *c += v;
                    }
                }
            }
            cell.iter_mut().for_each(|c| *c *= inv);
        }
    }
    Tensor::new(&[ho, wo, d], out)
}

/// Gradient of [`avg_pool_grid`]: spreads each pooled gradient evenly over its block.
pub fn avg_pool_grid_backward(dout: &Tensor, h: usize, w: usize, s: usize) -> Tensor {
    let d = dout.shape()[2];
    let wo = w / s;
    let inv = 1.0 / (s * s) as f64;
    let mut dg = vec![0.0; h * w * d];
    let src = dout.data();
    for i in 0..h {
        for j in 0..w {
            let cell = &src[((i / s) * wo + j / s) * d..((i / s) * wo + j / s + 1) * d];
            for (o, v) in dg[(i * w + j) * d..(i * w + j + 1) * d].iter_mut().zip(cell) {
                *o = v * inv;
            }
        }
    }
    Tensor::new(&[h, w, d], dg).expect("pool backward shape")
}

pub fn broadcast_scale(m: &Tensor, w: &Tensor, axis: Axis) -> Result<Tensor> {
    let (r, c) = m.expect_2d("broadcast_scale")?;
    let want = match axis {
        Axis::Rows => r,
        Axis::Cols => c,
    };
    if w.len() != want {
        return Err(shape_err(format!(
            "broadcast_scale: {} weights for {axis:?} of a {r}x{c} matrix",
            w.len()
        )));
    }
    let wv = w.data();
    let mut out = m.clone();
    for i in 0..r {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v *= match axis {
                Axis::Rows => wv[i],
                Axis::Cols => wv[j],
            };
        }
    }
    Ok(out)
}

/// Gradients of [`broadcast_scale`] with respect to the matrix and the weights.
pub fn broadcast_scale_backward(
    m: &Tensor,
    w: &Tensor,
    axis: Axis,
    dout: &Tensor,
) -> (Tensor, Tensor) {
    let (r, c) = (m.rows(), m.cols());
    let dm = broadcast_scale(dout, w, axis).expect("shapes checked in forward");
    let mut dw = vec![0.0; w.len()];
    for i in 0..r {
        for j in 0..c {
            let g = m.at(i, j) * dout.at(i, j);
            match axis {
                Axis::Rows => dw[i] += g,
                Axis::Cols => dw[j] += g,
            }
        }
    }
    (dm, Tensor::new(w.shape(), dw).expect("weight shape"))
}

/// Stacks matrices with equal column counts on top of each other.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
    let c = first.expect_2d("concat_rows")?.1;
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let (pr, pc) = p.expect_2d("concat_rows")?;
        if pc != c {
            return Err(shape_err(format!(
                "concat_rows: column counts {c} and {pc} differ"
            )));
        }
        rows += pr;
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[rows, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity_and_product() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &a).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Shape(_)));
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = Tensor::from_rows(&[&[1.0, -2.0, 0.5], &[3.0, 4.0, -1.0]]);
        let b = Tensor::from_rows(&[&[0.0, 1.0, 2.0], &[-3.0, 2.0, 1.0]]);
        assert_eq!(
            matmul_nt(&a, &b).unwrap(),
            matmul(&a, &b.transpose()).unwrap()
        );
        assert_eq!(
            matmul_tn(&a, &b).unwrap(),
            matmul(&a.transpose(), &b).unwrap()
        );
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&Tensor::from_rows(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(u.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[&[2f64.ln(), 0.0]])).unwrap();
        assert!((s.at(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.at(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let m = Tensor::from_rows(&[&[f64::NAN, 0.0]]);
        assert!(matches!(softmax_rows(&m), Err(Error::Numeric(_))));
    }

    fn grid_1_to_16() -> Tensor {
        Tensor::new(&[4, 4, 1], (1..=16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn avg_pool_examples() {
        let g = grid_1_to_16();
        assert_eq!(avg_pool_grid(&g, 2).unwrap().data(), &[3.5, 5.5, 11.5, 13.5]);
        assert_eq!(avg_pool_grid(&g, 4).unwrap().data(), &[8.5]);
        let c = Tensor::full(&[4, 4, 3], 2.5);
        assert!(avg_pool_grid(&c, 2).unwrap().data().iter().all(|&v| v == 2.5));
        assert!(matches!(avg_pool_grid(&g, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn broadcast_scale_examples() {
        let i2 = Tensor::identity(2);
        let half = Tensor::row_vector(&[0.5, 0.5]);
        assert_eq!(
            broadcast_scale(&i2, &half, Axis::Rows).unwrap(),
            Tensor::from_rows(&[&[0.5, 0.0], &[0.0, 0.5]])
        );
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mask = Tensor::row_vector(&[1.0, 0.0]);
        assert_eq!(
            broadcast_scale(&m, &mask, Axis::Cols).unwrap(),
            Tensor::from_rows(&[&[1.0, 0.0], &[3.0, 0.0]])
        );
        let ones = Tensor::row_vector(&[1.0, 1.0]);
        assert_eq!(broadcast_scale(&m, &ones, Axis::Rows).unwrap(), m);
        let bad = Tensor::row_vector(&[1.0, 1.0, 1.0]);
        assert!(broadcast_scale(&m, &bad, Axis::Cols).is_err());
    }

    #[test]
    fn ops_are_bitwise_repeatable() {
        let a = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b = Tensor::new(&[4, 2], (0..8).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let first = matmul(&a, &b).unwrap();
        for _ in 0..5 {
            assert_eq!(matmul(&a, &b).unwrap().data(), first.data());
        }
        assert_eq!(softmax_rows(&a).unwrap(), softmax_rows(&a).unwrap());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let m = Tensor::new(&[3, 4], vals).unwrap();
            let s = softmax_rows(&m).unwrap();
            for i in 0..3 {
                let total: f64 = s.row(i).iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(i).iter().all(|&p| p > 0.0));
            }
        }

        #[test]
        fn avg_pool_preserves_global_mean(vals in proptest::collection::vec(-10.0f64..10.0, 32), s in prop_oneof![Just(1usize), Just(2), Just(4)]) {
            let g = Tensor::new(&[4, 4, 2], vals).unwrap();
            let pooled = avg_pool_grid(&g, s).unwrap();
            prop_assert!((pooled.mean() - g.mean()).abs() <= 1e-12);
        }
    }
}
