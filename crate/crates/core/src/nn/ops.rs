//! Non-affine operators with hand-written adjoints: row max-pooling,
//! unit normalization, L2 norm, concatenation and the max-form Chamfer loss.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::spatial::dist2;

/// Column-wise max over rows; ties go to the lowest row index.
pub fn max_pool_rows(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let rows = x.rows();
    if x.is_empty() || rows == 0 {
        return Err(Error::EmptyInput);
    }
    let cols = x.cols();
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; cols];
    for r in 1..rows {
        for (c, v) in x.row(r).iter().enumerate() {
            if *v > best[c] {
                best[c] = *v;
                arg[c] = r;
            }
        }
    }
    Ok((Tensor::row_vector(best), arg))
}

/// Routes `upstream` (`[1, cols]`) to the argmax rows only.
pub fn max_pool_backward(argmax: &[usize], rows: usize, upstream: &[f64]) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "max-pool upstream {} vs {} columns",
            upstream.len(),
            argmax.len()
        )));
    }
    let cols = argmax.len();
    let mut g = Tensor::zeros(&[rows, cols]);
    for (c, (&r, u)) in argmax.iter().zip(upstream).enumerate() {
        g.data_mut()[r * cols + c] += u;
    }
    Ok(g)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Gradient of `|v|`; zero at the origin.
pub fn l2_norm_backward(v: &[f64], norm: f64, upstream: f64) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|a| upstream * a / norm).collect()
}

/// Returns `(v / |v|, |v|)`.
pub fn unit_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = l2_norm(v);
    if !(n >= 1e-12) {
        return Err(Error::ZeroQuaternion);
    }
    Ok((v.iter().map(|a| a / n).collect(), n))
}

pub fn unit_normalize_backward(y: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum();
    y.iter()
        .zip(upstream)
        .map(|(yv, u)| (u - yv * dot) / norm)
        .collect()
}

pub fn subtract(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("subtract {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Splits a concatenated gradient back into its parts.
pub fn concat_backward(upstream: &[f64], left: usize) -> (&[f64], &[f64]) {
    upstream.split_at(left)
}

/// Nearest-neighbor bookkeeping of one Chamfer evaluation.
#[derive(Debug, Clone)]
pub struct ChamferTape {
    /// For each row of `x`, its nearest row of `y` and the distance.
    x_to_y: Vec<(usize, f64)>,
    y_to_x: Vec<(usize, f64)>,
    /// Which directed term attained the max (`true` = x -> y).
    forward_active: bool,
}

/// `max(mean_x min_y |x - y|, mean_y min_x |x - y|)` over matrix rows.
pub fn chamfer_forward(x: &Tensor, y: &Tensor) -> Result<(f64, ChamferTape)> {
    if x.rows() == 0 || y.rows() == 0 || x.is_empty() || y.is_empty() {
        return Err(Error::EmptySet);
    }
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch(format!(
            "chamfer widths {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    let (nx, ny) = (x.rows(), y.rows());
    let mut x_best = vec![(0usize, f64::INFINITY); nx];
    let mut y_best = vec![(0usize, f64::INFINITY); ny];
    for i in 0..nx {
        let xi = x.row(i);
        for (j, yb) in y_best.iter_mut().enumerate() {
            let d = dist2(xi, y.row(j));
            if d < x_best[i].1 {
                x_best[i] = (j, d);
            }
            if d < yb.1 {
                *yb = (i, d);
            }
        }
    }
    for b in x_best.iter_mut().chain(y_best.iter_mut()) {
        b.1 = b.1.sqrt();
    }
    let fwd = x_best.iter().map(|b| b.1).sum::<f64>() / nx as f64;
    let bwd = y_best.iter().map(|b| b.1).sum::<f64>() / ny as f64;
    let forward_active = fwd >= bwd;
    Ok((
        fwd.max(bwd),
        ChamferTape {
            x_to_y: x_best,
            y_to_x: y_best,
            forward_active,
        },
    ))
}

/// Gradients of the Chamfer value with respect to `x` and `y`.
pub fn chamfer_backward(tape: &ChamferTape, x: &Tensor, y: &Tensor, upstream: f64) -> (Tensor, Tensor) {
    let mut gx = Tensor::zeros(x.shape());
    let mut gy = Tensor::zeros(y.shape());
    let cols = x.cols();
    let push = |from: &Tensor, gfrom: &mut Tensor, to: &Tensor, gto: &mut Tensor, pairs: &[(usize, f64)]| {
        let scale = upstream / pairs.len() as f64;
        for (i, &(j, d)) in pairs.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let (a, b) = (from.row(i), to.row(j));
            for c in 0..cols {
                let g = scale * (a[c] - b[c]) / d;
                gfrom.data_mut()[i * cols + c] += g;
                gto.data_mut()[j * cols + c] -= g;
            }
        }
    };
    if tape.forward_active {
        push(x, &mut gx, y, &mut gy, &tape.x_to_y);
    } else {
        push(y, &mut gy, x, &mut gx, &tape.y_to_x);
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chamfer_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_pool_examples() {
        let x = Tensor::matrix(1, 2, vec![4.0, -1.0]).unwrap();
        let (p, a) = max_pool_rows(&x).unwrap();
        assert_eq!(p.data(), &[4.0, -1.0]);
        assert_eq!(a, vec![0, 0]);
        let x = Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (p, a) = max_pool_rows(&x).unwrap();
        assert_eq!(p.data(), &[3.0, 5.0]);
        assert_eq!(a, vec![1, 0]);
        let tie = Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap();
        assert_eq!(max_pool_rows(&tie).unwrap().1, vec![0]);
        assert!(matches!(max_pool_rows(&Tensor::zeros(&[0, 3])), Err(Error::EmptyInput)));
    }

    #[test]
    fn max_pool_gradient_is_zero_off_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::matrix(6, 4, (0..24).map(|_| rng.random()).collect()).unwrap();
        let (_, arg) = max_pool_rows(&x).unwrap();
        let g = max_pool_backward(&arg, 6, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for r in 0..6 {
            for c in 0..4 {
                let v = g.data()[r * 4 + c];
                if arg[c] == r {
                    assert_eq!(v, (c + 1) as f64);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn chamfer_forward_agrees_with_geometry_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a: Vec<[f64; 4]> = (0..13).map(|_| [rng.random(), rng.random(), rng.random(), rng.random()]).collect();
            let b: Vec<[f64; 4]> = (0..9).map(|_| [rng.random(), rng.random(), rng.random(), rng.random()]).collect();
            let (v, _) = chamfer_forward(&Tensor::from_rows(&a).unwrap(), &Tensor::from_rows(&b).unwrap()).unwrap();
            assert!((v - chamfer_distance(&a, &b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_norm_gradient_at_origin_is_zero() {
        assert_eq!(l2_norm_backward(&[0.0, 0.0], 0.0, 1.0), vec![0.0, 0.0]);
        assert_eq!(l2_norm_backward(&[3.0, 4.0], 5.0, 1.0), vec![0.6, 0.8]);
    }

    #[test]
    fn unit_normalize_rejects_zero() {
        assert!(unit_normalize(&[0.0; 4]).is_err());
        let (y, n) = unit_normalize(&[0.0, 3.0, 4.0]).unwrap();
        assert_eq!((y, n), (vec![0.0, 0.6, 0.8], 5.0));
    }
}
