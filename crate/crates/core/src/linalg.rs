//! Dense helpers for the small matrices of the darning chain (N ≤ 16).

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for (k, &aik) in a[i].iter().enumerate() {
            if aik != 0.0 {
                for j in 0..m {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
    }
    out
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum()).collect()
}

/// Maximum absolute column sum.
pub fn norm_one(a: &Matrix) -> f64 {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| a.iter().map(|r| r[j].abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Gauss-Jordan elimination with partial pivoting; `None` if singular.
pub fn invert(a: &Matrix) -> Option<Matrix> {
    let n = a.len();
    let mut w: Matrix = a
        .iter()
        .zip(identity(n))
        .map(|(r, e)| r.iter().copied().chain(e).collect())
        .collect();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| w[i][col].abs().total_cmp(&w[j][col].abs()))?;
        if w[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        w.swap(col, piv);
        let d = w[col][col];
        w[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = w[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        w[r][c] -= f * w[col][c];
                    }
                }
            }
        }
    }
    Some(w.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Spectral radius from Gelfand's formula `ρ = lim ‖A^k‖^{1/k}`, with
/// `k = 2^40` reached by renormalized repeated squaring. Unlike power
/// iteration this does not stall on periodic chains.
pub fn spectral_radius(a: &Matrix) -> f64 {
    let mut b = a.clone();
    let mut log_norm = 0.0;
    let squarings = 40;
    for _ in 0..squarings {
        let nrm = norm_one(&b);
        if nrm == 0.0 || !nrm.is_finite() {
            return if nrm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        b.iter_mut().flatten().for_each(|v| *v /= nrm);
        log_norm = 2.0 * (log_norm + nrm.ln());
        b = mat_mul(&b, &b);
    }
    let nrm = norm_one(&b);
    if nrm == 0.0 {
        return 0.0;
    }
    ((log_norm + nrm.ln()) / 2f64.powi(squarings)).exp()
}

/// `Σ_{m=0}^{terms} A^m`
pub fn neumann_sum(a: &Matrix, terms: usize) -> Matrix {
    let n = a.len();
    let mut sum = identity(n);
    let mut pow = identity(n);
    for _ in 0..terms {
        pow = mat_mul(&pow, a);
        for i in 0..n {
            for j in 0..n {
                sum[i][j] += pow[i][j];
            }
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_of_small_matrix() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let m = invert(&a).unwrap();
        assert!(max_abs_diff(&mat_mul(&a, &m), &identity(2)) < 1e-15);
        assert!(invert(&vec![vec![1.0, 2.0], vec![2.0, 4.0]]).is_none());
    }

    #[test]
    fn radius_of_known_matrix() {
        // eigenvalues of [[0, .5], [.2, 0]] are ±√0.1
        let r = spectral_radius(&vec![vec![0.0, 0.5], vec![0.2, 0.0]]);
        assert!((r - 0.1f64.sqrt()).abs() < 1e-9, "{r}");
        assert_eq!(spectral_radius(&vec![vec![0.0]]), 0.0);
    }

    proptest! {
        #[test]
        fn neumann_matches_inverse(entries in proptest::collection::vec(0.0..0.2f64, 9)) {
            let q: Matrix = entries.chunks(3).map(|r| r.to_vec()).collect();
            let mut a = identity(3);
            for i in 0..3 { for j in 0..3 { a[i][j] -= q[i][j]; } }
            let m = invert(&a).unwrap();
            prop_assert!(max_abs_diff(&m, &neumann_sum(&q, 80)) < 1e-12);
        }
    }
}
