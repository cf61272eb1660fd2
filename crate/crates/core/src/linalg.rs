//! Small dense complex linear algebra used by the per-mode implicit solves.

use num_complex::Complex64;

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot underflows, i.e. the matrix is numerically
/// singular.
pub fn solve_dense<const N: usize>(
    mut a: [[Complex64; N]; N],
    mut b: [Complex64; N],
) -> Option<[Complex64; N]> {
    for col in 0..N {
        let mut piv = col;
        let mut best = a[col][col].norm();
        for row in col + 1..N {
            let v = a[row][col].norm();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].inv();
        for row in col + 1..N {
            let f = a[row][col] * inv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..N {
                let t = a[col][k];
                a[row][k] -= f * t;
            }
            let t = b[col];
            b[row] -= f * t;
        }
    }
    let mut x = [Complex64::new(0.0, 0.0); N];
    for row in (0..N).rev() {
        let mut s = b[row];
        for k in row + 1..N {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

pub fn mat_vec<const N: usize>(a: &[[Complex64; N]; N], x: &[Complex64; N]) -> [Complex64; N] {
    let mut y = [Complex64::new(0.0, 0.0); N];
    for (yi, row) in y.iter_mut().zip(a.iter()) {
        *yi = row.iter().zip(x.iter()).map(|(aij, xj)| aij * xj).sum();
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solves_pivoted_system() {
        let a = [
            [c(0.0, 0.0), c(2.0, 1.0), c(1.0, 0.0)],
            [c(1.0, -1.0), c(0.0, 0.0), c(3.0, 0.0)],
            [c(4.0, 0.0), c(1.0, 0.0), c(0.0, 2.0)],
        ];
        let x_true = [c(1.0, 2.0), c(-0.5, 0.0), c(0.0, -3.0)];
        let b = mat_vec(&a, &x_true);
        let x = solve_dense(a, b).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).norm() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [[c(1.0, 0.0), c(2.0, 0.0)], [c(2.0, 0.0), c(4.0, 0.0)]];
        assert!(solve_dense(a, [c(1.0, 0.0), c(1.0, 0.0)]).is_none());
    }
}
