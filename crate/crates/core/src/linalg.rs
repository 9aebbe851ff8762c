//! Small linear solvers for absorbing-chain systems.

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `None` when the matrix is singular to
/// working precision.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n);
    for col in 0..n {
        let (piv, max) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in r + 1..n {
            acc -= a[r * n + k] * x[k];
        }
        x[r] = acc / a[r * n + r];
    }
    Some(x)
}

/// Symmetric sparse matrix with a diagonal and off-diagonal entries stored
/// per row.
#[derive(Debug, Clone)]
pub struct SparseSymmetric {
    pub diag: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetric {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &(j, v) in row {
                acc += v * x[j];
            }
            out[i] = acc;
        }
    }
}

/// Conjugate gradients for a symmetric positive definite system. Stops when
/// the residual norm falls below `rel_tol * |b|`.
pub fn solve_cg(m: &SparseSymmetric, b: &[f64], rel_tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Some(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * bnorm {
            return Some(x);
        }
        m.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return None;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = r.iter().map(|v| v * v).sum::<f64>();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    (rr.sqrt() <= rel_tol * bnorm * 1e3).then_some(x)
}
