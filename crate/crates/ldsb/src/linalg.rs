//! Dense linear algebra and randomness primitives shared by every module.
//!
//! Matrices are `ndarray::Array2<f64>` in row-major layout. The SVD is a
//! one-sided Jacobi iteration: the matrices in this crate top out at a few
//! thousand rows, where an O(mn·min(m,n)) dense routine with high relative
//! accuracy is the right trade. All randomness flows through [`RngState`],
//! a counter-based generator that mints independent named streams from one
//! master seed, so dataset draws, initialization and batch shuffling never
//! interleave.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
pub type Matrix = Array2<f64>;

/// Thin singular value decomposition `M = U · diag(S) · Vt`.
///
/// `U` has orthonormal columns, `Vt` orthonormal rows, and `s` is sorted
/// nonincreasing. Each right singular vector is oriented so its
/// largest-magnitude entry is positive, which keeps subspace tests stable
/// across runs.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-14;

/// Thin SVD by one-sided Jacobi on the wider side.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("svd input has non-finite entries".into()));
    }

    let transposed = m.nrows() < m.ncols();
    let work = if transposed { m.t().to_owned() } else { m.clone() };
    let (u, s, v) = jacobi_svd(work);

    // For M = U S Vᵀ, the transposed problem swaps the roles of U and V.
    let (mut u, mut vt) = if transposed { (v, u.reversed_axes()) } else { (u, v.reversed_axes()) };

    for (j, mut row) in vt.rows_mut().into_iter().enumerate() {
        let lead = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if row[lead] < 0.0 {
            row.mapv_inplace(|v| -v);
            u.column_mut(j).mapv_inplace(|v| -v);
        }
    }

    Ok(SvdResult { u, s, vt })
}

/// One-sided Jacobi on `b` with `nrows >= ncols`. Returns `(U, s, V)` with
/// `b = U diag(s) Vᵀ`, `s` sorted nonincreasing.
fn jacobi_svd(mut b: Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let n = b.ncols();
    let mut v = Matrix::eye(n);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..b.nrows() {
                    let (bp, bq) = (b[[r, p]], b[[r, q]]);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..b.nrows() {
                    let (bp, bq) = (b[[r, p]], b[[r, q]]);
                    b[[r, p]] = c * bp - s * bq;
                    b[[r, q]] = s * bp + c * bq;
                }
                for r in 0..n {
                    let (vp, vq) = (v[[r, p]], v[[r, q]]);
                    v[[r, p]] = c * vp - s * vq;
                    v[[r, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| b.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Matrix::zeros((b.nrows(), n));
    let mut v_sorted = Matrix::zeros((n, n));
    let mut s = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        for r in 0..n {
            v_sorted[[r, dst]] = v[[r, src]];
        }
        if norms[src] > 0.0 {
            for r in 0..b.nrows() {
                u[[r, dst]] = b[[r, src]] / norms[src];
            }
        }
    }

    // Columns with vanishing singular value get a deterministic orthonormal
    // completion (best standard basis vector after projecting out the fixed
    // columns) so UᵀU = I still holds for the thin factor.
    let null_tol = s[0] * 1e-13;
    for j in 0..n {
        if s[j] > null_tol {
            continue;
        }
        let mut best: Option<(f64, Array1<f64>)> = None;
        for k in 0..b.nrows() {
            let mut cand = Array1::zeros(b.nrows());
            cand[k] = 1.0;
            for i in 0..n {
                if i != j {
                    let proj = u.column(i).dot(&cand);
                    cand.scaled_add(-proj, &u.column(i));
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.unwrap();
        u.column_mut(j).assign(&(&cand / norm));
    }

    (u, s, v_sorted)
}

/// Orthonormalizes the columns of `q` by modified Gram–Schmidt with one
/// reorthogonalization pass. The result spans the same column space and the
/// implicit R factor has positive diagonal, so the output is unique.
pub fn orthonormalize(q: &Matrix) -> Result<Matrix> {
    let (rows, cols) = (q.nrows(), q.ncols());
    if rows < cols {
        return Err(Error::DegenerateBasis(format!(
            "{rows} rows cannot carry {cols} independent columns"
        )));
    }
    let scale = q.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mut out = q.clone();
    for j in 0..cols {
        for _pass in 0..2 {
            for i in 0..j {
                let proj = {
                    let (ui, vj) = (out.column(i), out.column(j));
                    ui.dot(&vj)
                };
                let ui = out.column(i).to_owned();
                out.column_mut(j).scaled_add(-proj, &ui);
            }
        }
        let norm = out.column(j).dot(&out.column(j)).sqrt();
        if norm <= 1e-10 * scale {
            return Err(Error::DegenerateBasis(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        out.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Master seed for all randomness in a run.
///
/// Streams are ChaCha8 instances whose 64-bit stream id is a hash of the
/// stream name, so `stream("data.train")` and `stream("init")` are
/// statistically independent yet both reproducible from `seed` alone.
/// Equal seeds yield bit-identical byte streams across platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
}

/// Identifies the generator family; recorded in manifests.
pub const RNG_ALGORITHM: &str = "chacha8-named-streams";

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Mints the named substream.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Raw bytes from a named stream; used by determinism tests.
    pub fn bytes(&self, name: &str, len: usize) -> Vec<u8> {
        let mut buf = vec![0u8; len];
        self.stream(name).fill_bytes(&mut buf);
        buf
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform sample from the unit sphere in `R^dim` (Gaussian, normalized).
pub fn sample_unit_sphere(dim: usize, rng: &mut impl Rng) -> Result<Array1<f64>> {
    if dim == 0 {
        return Err(Error::InvalidInput("sphere dimension must be >= 1".into()));
    }
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return Ok(v / norm);
        }
    }
}

/// Frobenius norm.
pub fn fro_norm(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean norm of a vector view.
pub fn vec_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn reconstruct(svd: &SvdResult) -> Matrix {
        let k = svd.s.len();
        let mut us = svd.u.clone();
        for (j, &sv) in svd.s.iter().enumerate().take(k) {
            us.column_mut(j).mapv_inplace(|v| v * sv);
        }
        us.dot(&svd.vt)
    }

    #[test]
    fn svd_identity() {
        let m = Matrix::eye(3);
        let r = svd(&m).unwrap();
        for &s in &r.s {
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn svd_diagonal() {
        let m = Array2::from_diag(&array![3.0, 2.0, 1.0]);
        let r = svd(&m).unwrap();
        assert_relative_eq!(r.s[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.s[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.s[2], 1.0, epsilon = 1e-12);
        // Signed permutation of the identity: every entry is 0 or ±1.
        for v in r.u.iter().chain(r.vt.iter()) {
            assert!(v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_reconstruction_random() {
        let mut rng = RngState::new(7).stream("svd.test");
        for (rows, cols) in [(5, 3), (3, 5), (8, 8), (12, 2)] {
            let m: Matrix =
                Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal));
            let r = svd(&m).unwrap();
            let err = fro_norm(&(&reconstruct(&r) - &m)) / fro_norm(&m);
            assert!(err < 1e-8, "reconstruction error {err}");
            // Orthonormality of both factors.
            let utu = r.u.t().dot(&r.u);
            let vvt = r.vt.dot(&r.vt.t());
            let k = r.s.len();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((utu[[i, j]] - expect).abs() < 1e-8);
                    assert!((vvt[[i, j]] - expect).abs() < 1e-8);
                }
            }
            // Nonincreasing spectrum.
            for w in r.s.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_u() {
        // Rank-1: all rows proportional to e0.
        let mut m = Matrix::zeros((6, 4));
        for i in 0..6 {
            m[[i, 0]] = (i as f64) + 1.0;
        }
        let r = svd(&m).unwrap();
        assert!(r.s[1] < 1e-10);
        let utu = r.u.t().dot(&r.u);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((utu[[i, j]] - expect).abs() < 1e-8, "UtU[{i},{j}]={}", utu[[i, j]]);
            }
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let m = array![[1.0, f64::NAN], [0.0, 1.0]];
        assert!(matches!(svd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn orthonormalize_is_idempotent() {
        let mut rng = RngState::new(3).stream("ortho.test");
        let q: Matrix = Array2::from_shape_fn((6, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let q1 = orthonormalize(&q).unwrap();
        let q2 = orthonormalize(&q1).unwrap();
        assert!(fro_norm(&(&q2 - &q1)) < 1e-12);
        let qtq = q1.t().dot(&q1);
        assert!((qtq[[0, 0]] - 1.0).abs() < 1e-10);
        assert!((qtq[[1, 1]] - 1.0).abs() < 1e-10);
        assert!(qtq[[0, 1]].abs() < 1e-10);
    }

    #[test]
    fn orthonormalize_axis_rescale() {
        let q = array![[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]];
        let out = orthonormalize(&q).unwrap();
        assert_relative_eq!(out[[0, 0]], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[[1, 1]], 1.0, epsilon = 1e-12);
        assert!(out[[2, 0]].abs() < 1e-12 && out[[2, 1]].abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_preserves_span() {
        let mut rng = RngState::new(11).stream("ortho.span");
        let q: Matrix = Array2::from_shape_fn((6, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let out = orthonormalize(&q).unwrap();
        // Each original column must be reproduced by its projection onto the
        // new basis: residual ‖q_j − QQᵀq_j‖ below 1e-10.
        for j in 0..2 {
            let col = q.column(j).to_owned();
            let coeff = out.t().dot(&col);
            let recon = out.dot(&coeff);
            let resid = (&col - &recon).dot(&(&col - &recon)).sqrt();
            assert!(resid < 1e-10, "span residual {resid}");
        }
    }

    #[test]
    fn orthonormalize_rejects_rank_deficient() {
        let q = array![[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]];
        assert!(matches!(orthonormalize(&q), Err(Error::DegenerateBasis(_))));
    }

    #[test]
    fn sphere_dim_one_is_sign() {
        let mut rng = RngState::new(5).stream("sphere");
        for _ in 0..20 {
            let v = sample_unit_sphere(1, &mut rng).unwrap();
            assert!((v[0].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_unit_norm_and_mean() {
        let mut rng = RngState::new(5).stream("sphere.mc");
        let n = 100_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let v = sample_unit_sphere(3, &mut rng).unwrap();
            assert!((vec_norm(v.view()) - 1.0).abs() < 1e-12);
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        for m in mean {
            assert!((m / n as f64).abs() < 0.02);
        }
    }

    #[test]
    fn sphere_rejects_dim_zero() {
        let mut rng = RngState::new(5).stream("sphere.err");
        assert!(sample_unit_sphere(0, &mut rng).is_err());
    }

    #[test]
    fn rng_streams_are_deterministic_and_distinct() {
        let a = RngState::new(42);
        let b = RngState::new(42);
        assert_eq!(a.bytes("data.train", 64), b.bytes("data.train", 64));
        assert_ne!(a.bytes("data.train", 64), a.bytes("data.val", 64));
        assert_ne!(a.bytes("data.train", 64), RngState::new(43).bytes("data.train", 64));
    }
}
