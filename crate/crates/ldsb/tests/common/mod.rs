#![allow(dead_code)] // each test binary uses a subset of these oracles

//! Shared brute-force oracles for the kernel max-margin tests.
//!
//! Everything here recomputes quantities from materialized data with plain
//! linear algebra, deliberately avoiding the closed-form code paths under
//! test (binomial weights, log-space sums, the two-multiplier ansatz).

use ldsb::datasets::LabeledDataset;
use ldsb::linalg::Matrix;
use ldsb::ntk::kappa;
use ndarray::s;

/// Kernel value from raw coordinates: `‖x‖‖x'‖ κ(cos∠)`.
pub fn kernel(xi: ndarray::ArrayView1<'_, f64>, xj: ndarray::ArrayView1<'_, f64>) -> f64 {
    let ni = xi.dot(&xi).sqrt();
    let nj = xj.dot(&xj).sqrt();
    let cos = (xi.dot(&xj) / (ni * nj)).clamp(-1.0, 1.0);
    ni * nj * kappa(cos).unwrap()
}

/// Materializes the full Gram matrix with one GEMM plus an elementwise κ.
pub fn gram_matrix(ds: &LabeledDataset) -> Matrix {
    let inner = ds.x.dot(&ds.x.t());
    let norms: Vec<f64> = (0..ds.n()).map(|i| inner[[i, i]].sqrt()).collect();
    let mut k = inner;
    for i in 0..ds.n() {
        for j in 0..ds.n() {
            let scale = norms[i] * norms[j];
            let cos = (k[[i, j]] / scale).clamp(-1.0, 1.0);
            k[[i, j]] = scale * kappa(cos).unwrap();
        }
    }
    k
}

/// Solves the SPD system `A x = y` by a blocked Cholesky factorization and
/// two triangular solves. Panics when `A` is not positive definite.
pub fn cholesky_solve(a: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, y.len());
    let mut l = a.clone();
    let bs = 128usize;

    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + bs).min(n);
        // Unblocked factorization of the diagonal block.
        for j in k0..k1 {
            let mut diag = l[[j, j]];
            for p in k0..j {
                diag -= l[[j, p]] * l[[j, p]];
            }
            assert!(diag > 0.0, "matrix not positive definite at column {j}");
            let diag = diag.sqrt();
            l[[j, j]] = diag;
            for r in j + 1..k1 {
                let mut v = l[[r, j]];
                for p in k0..j {
                    v -= l[[r, p]] * l[[j, p]];
                }
                l[[r, j]] = v / diag;
            }
        }
        if k1 < n {
            // Panel solve: rows below the block against L11ᵀ.
            for r in k1..n {
                for j in k0..k1 {
                    let mut v = l[[r, j]];
                    for p in k0..j {
                        v -= l[[r, p]] * l[[j, p]];
                    }
                    l[[r, j]] = v / l[[j, j]];
                }
            }
            // Trailing update, block column by block column so only the
            // lower triangle is touched.
            let panel = l.slice(s![k1..n, k0..k1]).to_owned();
            let mut j0 = k1;
            while j0 < n {
                let j1 = (j0 + bs).min(n);
                let left = panel.slice(s![j0 - k1..n - k1, ..]);
                let right = panel.slice(s![j0 - k1..j1 - k1, ..]);
                let update = left.dot(&right.t());
                let mut target = l.slice_mut(s![j0..n, j0..j1]);
                target -= &update;
                j0 = j1;
            }
        }
        k0 = k1;
    }

    // L z = y, then Lᵀ x = z.
    let mut z = y.to_vec();
    for i in 0..n {
        let mut v = z[i];
        for p in 0..i {
            v -= l[[i, p]] * z[p];
        }
        z[i] = v / l[[i, i]];
    }
    let mut x = z;
    for i in (0..n).rev() {
        let mut v = x[i];
        for p in i + 1..n {
            v -= l[[p, i]] * x[p];
        }
        x[i] = v / l[[i, i]];
    }
    x
}

/// Dual pair `(a_tilde, b)` from direct enumeration of the positive
/// pattern block: the κ sum runs over all `2^{d−1}` patterns via popcounts
/// (no binomial coefficients, no log-space weights), then the reduced 2×2
/// system is solved exactly.
pub fn enumerated_duals(d: usize, gamma: f64) -> (f64, f64) {
    assert!((2..=21).contains(&d));
    let df = d as f64;
    let g2 = gamma * gamma;
    let rho1 = (df + g2).sqrt();
    let rho2 = (1.0 + g2).sqrt();
    let patterns = 1u64 << (d - 1);
    let mut sum = 0.0;
    for q in 0..patterns {
        let i = q.count_ones() as f64;
        sum += kappa((df - 2.0 * i + g2) / (df + g2)).unwrap();
    }
    let mean_pos = sum / patterns as f64;
    let beta_d = kappa((1.0 - g2) / (rho1 * rho2)).unwrap();
    let kappa1 = kappa(1.0).unwrap();

    // [ρ1²·mean_pos, ρ1ρ2β_d; ρ1ρ2β_d, ρ2²κ(1)] · [a_tilde, b] = [1, −1]
    let m11 = rho1 * rho1 * mean_pos;
    let m12 = rho1 * rho2 * beta_d;
    let m22 = rho2 * rho2 * kappa1;
    let det = m11 * m22 - m12 * m12;
    let a_tilde = (m22 + m12) / det;
    let b = (-m11 - m12) / det;
    (a_tilde, b)
}

/// `f(x) = Σ_s α_s K(x, x_s)` evaluated literally over the dataset rows.
pub fn kernel_expansion(
    alpha: &[f64],
    support: &LabeledDataset,
    x: ndarray::ArrayView1<'_, f64>,
) -> f64 {
    support
        .x
        .rows()
        .into_iter()
        .zip(alpha.iter())
        .map(|(row, &a)| a * kernel(x, row))
        .sum()
}
