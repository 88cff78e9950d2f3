//! Dense linear-algebra helpers shared by the identification pipeline.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. SVDs and eigenvalues
//! go through faer: nalgebra's iterations lose accuracy or stall on the
//! sparse block-cyclic matrices every cycled system produces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Complex64 = nalgebra::Complex<f64>;

pub fn frob(m: &Mat) -> f64 {
    m.norm()
}

/// Singular values sorted in descending order.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    svd_sorted(m).s
}

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v_t: Mat,
}

pub fn svd_sorted(m: &Mat) -> SortedSvd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return SortedSvd { u: Mat::zeros(r, 0), s: Vec::new(), v_t: Mat::zeros(0, c) };
    }
    // nalgebra's bidiagonal SVD can lose accuracy on sparse block-structured
    // matrices; faer's thin SVD is used instead.
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().expect("SVD did not converge");
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let u = Mat::from_fn(r, k, |i, j| fu[(i, j)]);
    let v_t = Mat::from_fn(k, c, |i, j| fv[(j, i)]);
    let s = (0..k).map(|i| fs[i]).collect();
    SortedSvd { u, s, v_t }
}

/// Default rank threshold `max_dim * eps * sigma_max`.
pub fn default_rank_tol(m: &Mat, sigma_max: f64) -> f64 {
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max
}

pub fn numerical_rank(m: &Mat, tol: Option<f64>) -> usize {
    let sv = singular_values(m);
    let Some(&smax) = sv.first() else { return 0 };
    let tol = tol.unwrap_or_else(|| default_rank_tol(m, smax));
    sv.iter().filter(|&&s| s > tol).count()
}

/// 2-norm condition number; infinite for singular or empty matrices.
pub fn cond(m: &Mat) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 && sv.len() == m.nrows().min(m.ncols()) => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Solve `a x = b` for square `a` by LU with partial pivoting.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve: {}x{} system with {}x{} right-hand side",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular matrix in linear solve".into()))
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD.
pub fn lstsq(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "least squares: {} rows in a, {} in b",
            a.nrows(),
            b.nrows()
        )));
    }
    let svd = svd_sorted(a);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let tol = default_rank_tol(a, smax);
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    let mut x = Mat::zeros(a.ncols(), b.ncols());
    if rank == 0 {
        return Ok(x);
    }
    let mut ub = svd.u.columns(0, rank).transpose() * b;
    for i in 0..rank {
        ub.row_mut(i).scale_mut(1.0 / svd.s[i]);
    }
    x += svd.v_t.rows(0, rank).transpose() * ub;
    Ok(x)
}

/// Least squares for tall, full-column-rank `a` via Householder QR.
/// The orthogonal factor is never formed.
pub fn lstsq_qr(a: &Mat, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    if a.nrows() < n {
        return Err(Error::DimensionMismatch(format!(
            "least squares needs at least {n} rows, got {}",
            a.nrows()
        )));
    }
    let qr = a.clone().qr();
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let rmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..n).any(|i| r[(i, i)].abs() <= rmax * 1e-14 * n as f64) {
        return Err(Error::RankDeficientData(
            "regressor matrix is numerically rank deficient".into(),
        ));
    }
    let top = rhs.rows(0, n).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(top: &Mat, bottom: &Mat) -> Mat {
    assert_eq!(top.ncols(), bottom.ncols(), "vstack column mismatch");
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

pub fn hstack(left: &Mat, right: &Mat) -> Mat {
    assert_eq!(left.nrows(), right.nrows(), "hstack row mismatch");
    let mut out = Mat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

pub fn mat_pow(a: &Mat, k: usize) -> Mat {
    let mut out = Mat::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = a * &out;
    }
    out
}

pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Eigenvalues of a real square matrix: diagonal balancing followed by
/// faer's Schur-based solver. Complex eigenvalues come in conjugate pairs.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigenvalues of a non-finite matrix".into()));
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    balance(&mut h);
    let fm = faer::Mat::from_fn(n, n, |i, j| h[i][j]);
    let ev = fm
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

fn balance(h: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let n = h.len();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += h[j][i].abs();
                    r += h[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for v in h[i].iter_mut() {
                    *v *= g;
                }
                for row in h.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

/// Greedy nearest-neighbour matching of two eigenvalue multisets.
/// Returns the largest pairwise distance, or infinity on size mismatch.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[idx] = true;
        worst = worst.max(d);
    }
    worst
}
