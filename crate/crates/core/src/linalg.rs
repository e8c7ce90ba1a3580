//! Dense helpers for the tiny systems that arise in local polynomial fits.

/// Solves `a x = b` for a `d × d` row-major matrix by Gaussian elimination
/// with partial pivoting. Returns `None` when a pivot falls below
/// `rel_tol` times the largest absolute entry of `a`.
pub(crate) fn solve(a: &[f64], b: &[f64], d: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..d {
        let (piv, pval) =
            (col..d)
                .map(|r| (r, m[r * d + col].abs()))
                .fold((col, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pval <= rel_tol * scale {
            return None;
        }
        if piv != col {
            for c in 0..d {
                m.swap(col * d + c, piv * d + c);
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..d {
            let f = m[r * d + col] / m[col * d + col];
            if f != 0.0 {
                for c in col..d {
                    m[r * d + c] -= f * m[col * d + c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for col in (0..d).rev() {
        let mut acc = x[col];
        for c in (col + 1)..d {
            acc -= m[col * d + c] * x[c];
        }
        x[col] = acc / m[col * d + col];
    }
    Some(x)
}

/// Inverse of a `d × d` row-major matrix, column by column.
pub(crate) fn inverse(a: &[f64], d: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = solve(a, &e, d, rel_tol)?;
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = solve(&a, &[3.0, 5.0], 2, 1e-14).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2, 1e-12).is_none());
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = inverse(&a, 3, 1e-14).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
    }
}
