//! Markov parameters of cycled systems and the shifted block-diagonal
//! sparsity they obey.

use crate::linalg::Mat;
use crate::system::{LtiStateSpace, PeriodicStateSpace};

/// `[H(0), ..., H(h_max)]` with `H(0) = D`, `H(i) = C A^{i-1} B`.
pub fn markov_parameters(sys: &LtiStateSpace, h_max: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(h_max + 1);
    out.push(sys.d.clone());
    let mut ab = sys.b.clone();
    for _ in 1..=h_max {
        out.push(&sys.c * &ab);
        ab = &sys.a * ab;
    }
    out
}

/// `H_k^{(h)}`: `D_k` for `h = 0`, otherwise
/// `C_{k+h} A_{k+h-1} ... A_{k+1} B_k` (indices mod `M`).
pub fn periodic_markov_block(sys: &PeriodicStateSpace, k: usize, h: usize) -> Mat {
    let k = k as i64;
    if h == 0 {
        return sys.d(k).clone();
    }
    sys.c(k + h as i64) * sys.transition(k + 1, h - 1) * sys.b(k)
}

/// Block cyclic shift `Š_q` of size `Mq x Mq`: identity blocks at
/// `(i, i+1)` and `(M-1, 0)` (0-based block indices).
pub fn block_shift_matrix(q: usize, m: usize) -> Mat {
    let mut s = Mat::zeros(m * q, m * q);
    for i in 0..m {
        let j = (i + 1) % m;
        for d in 0..q {
            s[(i * q + d, j * q + d)] = 1.0;
        }
    }
    s
}

/// Cycled Markov parameters assembled from the periodic blocks:
/// block `(k+h mod M, k)` of `H(h)` is `H_k^{(h)}`.
pub fn cycled_markov_from_periodic(sys: &PeriodicStateSpace, h_max: usize) -> Vec<Mat> {
    let m = sys.period();
    let (p, q) = (sys.n_outputs(), sys.n_inputs());
    (0..=h_max)
        .map(|h| {
            let mut out = Mat::zeros(m * p, m * q);
            for k in 0..m {
                let r = (k + h) % m;
                out.view_mut((r * p, k * q), (p, q))
                    .copy_from(&periodic_markov_block(sys, k, h));
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SparsityReport {
    /// `‖off-diagonal part of Š^h H(h)‖_F` for each `h`.
    pub residuals: Vec<f64>,
    /// Diagonal blocks of `Š^h H(h)`, i.e. the estimated `H_k^{(h)}`,
    /// indexed `[h][k]`.
    pub diagonal_blocks: Vec<Vec<Mat>>,
    pub tol: f64,
    /// Lags whose residual exceeds `tol`.
    pub violations: Vec<usize>,
}

impl SparsityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Verify that `Š_{q_out}^h H(h)` is block diagonal for `0 <= h <= h_max`.
///
/// Requires `sys.n_outputs() == M * q_out` and an input dimension
/// divisible by `M`.
pub fn check_shifted_sparsity(
    sys: &LtiStateSpace,
    m: usize,
    q_out: usize,
    h_max: usize,
    tol: f64,
) -> crate::Result<SparsityReport> {
    if sys.n_outputs() != m * q_out || sys.n_inputs() % m != 0 {
        return Err(crate::Error::DimensionMismatch(format!(
            "cycled system has {} outputs and {} inputs; period {m} with {q_out} outputs per phase",
            sys.n_outputs(),
            sys.n_inputs()
        )));
    }
    let q_in = sys.n_inputs() / m;
    let shift = block_shift_matrix(q_out, m);
    let mut shift_h = Mat::identity(m * q_out, m * q_out);
    let mut residuals = Vec::with_capacity(h_max + 1);
    let mut diagonal_blocks = Vec::with_capacity(h_max + 1);
    for h in markov_parameters(sys, h_max) {
        let shifted = &shift_h * h;
        let mut off = shifted.clone();
        let mut blocks = Vec::with_capacity(m);
        for k in 0..m {
            let blk = shifted.view((k * q_out, k * q_in), (q_out, q_in)).into_owned();
            off.view_mut((k * q_out, k * q_in), (q_out, q_in)).fill(0.0);
            blocks.push(blk);
        }
        residuals.push(off.norm());
        diagonal_blocks.push(blocks);
        shift_h = &shift * shift_h;
    }
    let violations = residuals
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > tol)
        .map(|(h, _)| h)
        .collect();
    Ok(SparsityReport {
        residuals,
        diagonal_blocks,
        tol,
        violations,
    })
}

/// Markov parameters of the series connection `G(z) F(z)`:
/// `(GF)(h) = sum_{i=0}^{h} G(i) F(h-i)`, truncated to the shorter input.
pub fn convolve_markov(g: &[Mat], f: &[Mat]) -> Vec<Mat> {
    let len = g.len().min(f.len());
    (0..len)
        .map(|h| {
            let mut acc = &g[0] * &f[h];
            for i in 1..=h {
                acc += &g[i] * &f[h - i];
            }
            acc
        })
        .collect()
}

/// Largest Frobenius distance between two Markov sequences.
pub fn max_markov_distance(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
