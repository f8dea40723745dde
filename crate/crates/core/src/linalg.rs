//! Dense K x K solves for small K. Matrices are row-major slices.

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky factorization.
///
/// Fails with the offending pivot when a diagonal pivot drops below
/// `rel_tol * max(diag(A))`.
pub fn cholesky_solve(a: &[f64], b: &[f64], rel_tol: f64) -> Result<Vec<f64>, f64> {
    let k = b.len();
    assert_eq!(a.len(), k * k);
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= l[j * k + p] * l[j * k + p];
        }
        if d.is_nan() || d <= rel_tol * scale || !d.is_finite() {
            return Err(d);
        }
        let d = d.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = s / d;
        }
    }
    // L y = b, then L' x = y.
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting; `None` when singular to `rel_tol`.
pub fn solve(a: &[f64], b: &[f64], rel_tol: f64) -> Option<Vec<f64>> {
    let k = b.len();
    assert_eq!(a.len(), k * k);
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| m[i * k + col].abs().total_cmp(&m[j * k + col].abs()))
            .unwrap();
        if m[piv * k + col].abs() <= rel_tol * scale {
            return None;
        }
        if piv != col {
            for c in 0..k {
                m.swap(piv * k + c, col * k + c);
            }
            rhs.swap(piv, col);
        }
        for r in col + 1..k {
            let f = m[r * k + col] / m[col * k + col];
            for c in col..k {
                m[r * k + c] -= f * m[col * k + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = rhs[i];
        for c in i + 1..k {
            s -= m[i * k + c] * x[c];
        }
        x[i] = s / m[i * k + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_system() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0], 1e-12).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
        let y = solve(&a, &[2.0, 1.0], 1e-12).unwrap();
        assert_eq!(x.len(), y.len());
    }

    #[test]
    fn singular_systems_fail() {
        assert!(cholesky_solve(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0], 1e-12).is_err());
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 1e-12).is_none());
        assert!(solve(&[0.0; 4], &[1.0, 1.0], 1e-12).is_none());
    }

    proptest! {
        #[test]
        fn both_solvers_agree_on_spd(m in prop::array::uniform9(-3.0f64..3.0), b in prop::array::uniform3(-5.0f64..5.0)) {
            // A = M'M + I is SPD.
            let mut a = vec![0.0; 9];
            for i in 0..3 { for j in 0..3 {
                a[i * 3 + j] = (0..3).map(|p| m[p * 3 + i] * m[p * 3 + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }}
            let x = cholesky_solve(&a, &b, 1e-12).unwrap();
            let y = solve(&a, &b, 1e-12).unwrap();
            for i in 0..3 {
                let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum::<f64>() - b[i];
                prop_assert!(r.abs() < 1e-9);
                prop_assert!((x[i] - y[i]).abs() < 1e-8);
            }
        }
    }
}
