//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::DMatrix;

/// Builds a matrix from row vectors. All rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

/// Numerical rank by Gaussian elimination with full pivoting.
///
/// A pivot counts when its magnitude exceeds `tol` times the largest entry of
/// the input.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (nr, nc) = a.shape();
    let scale = a.amax();
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    for step in 0..nr.min(nc) {
        let mut best = (step, step, 0.0_f64);
        for r in step..nr {
            for c in step..nc {
                let v = a[(r, c)].abs();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        if best.2 <= tol * scale {
            break;
        }
        a.swap_rows(step, best.0);
        a.swap_columns(step, best.1);
        let pivot = a[(step, step)];
        for r in step + 1..nr {
            let f = a[(r, step)] / pivot;
            if f != 0.0 {
                for c in step..nc {
                    let v = a[(step, c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
        rank += 1;
    }
    rank
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Euclidean distance between two equal-length vectors.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}

/// `m' v`.
pub fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|c| (0..m.nrows()).map(|r| m[(r, c)] * v[r]).sum())
        .collect()
}

/// Solves `m x = b` for symmetric positive definite `m`, with a small
/// Tikhonov shift retried when the Cholesky factorisation fails.
pub fn solve_spd_regularized(m: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = m.nrows();
    let trace_scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut mm = m.clone();
        for i in 0..n {
            mm[(i, i)] += shift;
        }
        if let Some(ch) = mm.cholesky() {
            let rhs = nalgebra::DVector::from_column_slice(b);
            let x = ch.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x.iter().copied().collect());
            }
        }
        shift = if shift == 0.0 { 1e-14 * trace_scale } else { shift * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_detects_duplicate_rows() {
        let a = from_rows(&[vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]]);
        assert_eq!(rank(&a, 1e-10), 1);
        let b = from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]);
        assert_eq!(rank(&b, 1e-10), 2);
    }

    #[test]
    fn rank_of_zero_matrix() {
        assert_eq!(rank(&DMatrix::zeros(3, 2), 1e-10), 0);
    }

    #[test]
    fn spd_solve() {
        let m = from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let x = solve_spd_regularized(&m, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 2.0 / 3.0).abs() < 1e-14);
    }
}
