//! Shared fixtures and small dense oracles for unit tests.

use crate::model::{Edge, NetworkInstance};

pub fn single_node(lambda: f64, delta: f64, cost: f64, kappa: f64) -> NetworkInstance {
    NetworkInstance::new(
        1,
        vec![],
        vec![lambda],
        vec![delta],
        vec![kappa],
        vec![cost],
        vec![1.0],
    )
    .unwrap()
}

/// Symmetric 2-cycle with rate `beta` both ways, delta = 0.1, alpha = 1.
pub fn two_cycle(beta: f64, lambda: (f64, f64), cost: f64) -> NetworkInstance {
    NetworkInstance::new(
        2,
        vec![Edge { src: 0, dst: 1, beta }, Edge { src: 1, dst: 0, beta }],
        vec![lambda.0, lambda.1],
        vec![0.1, 0.1],
        vec![10.0, 10.0],
        vec![cost, cost],
        vec![1.0, 1.0],
    )
    .unwrap()
}

/// Dense LU solve with partial pivoting; `a` is row-major n×n. Returns None
/// on (numerical) singularity. Test oracle only.
pub fn dense_solve(a: &[f64], n: usize, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = rhs.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, m[perm[r] * n + col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if pivot_val < 1e-14 {
            return None;
        }
        perm.swap(col, pivot_row);
        let prow = perm[col];
        for r in col + 1..n {
            let row = perm[r];
            let f = m[row * n + col] / m[prow * n + col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[row * n + c] -= f * m[prow * n + c];
            }
            x[row] -= f * x[prow];
        }
    }
    let mut out = vec![0.0; n];
    for col in (0..n).rev() {
        let row = perm[col];
        let mut acc = x[row];
        for c in col + 1..n {
            acc -= m[row * n + c] * out[c];
        }
        out[col] = acc / m[row * n + col];
    }
    Some(out)
}

/// Dense inverse via column-by-column solves. Test oracle only.
pub fn dense_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = dense_solve(a, n, &e)?;
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_a_known_system() {
        // [[2,1],[1,3]] x = [5, 10] → x = [1, 3]
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = dense_solve(&a, 2, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_detected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(dense_solve(&a, 2, &[1.0, 2.0]).is_none());
    }
}
