//! Subspace identification of the cycled closed loop from `(ř, ž)` with the
//! feedthrough pinned to zero.
//!
//! The column space of the extended observability matrix comes from an LQ
//! factorization of the stacked block-Hankel data with past inputs and
//! outputs as instruments (PO-MOESP). `A` and `C` follow from shift
//! invariance; `B` and the initial state are then fitted by linear least
//! squares on the output error with `D = 0`.

use nalgebra::DVector;

use crate::closed_loop::SharedARealization;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, lstsq_qr, numerical_rank, svd_sorted, Mat};
use crate::signal::CycledSignal;
use crate::simulate::simulate_lti;

/// Ratio below the model order that triggers an order-gap warning.
pub const ORDER_GAP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct SubspaceConfig {
    pub model_order: usize,
    /// Block rows `i` of the past and future Hankel matrices; `None` picks
    /// `2 * ceil(order / output_dim) + 2`.
    pub horizon: Option<usize>,
    /// Threshold for the input-excitation rank test; `None` uses the default.
    pub rank_tol: Option<f64>,
    pub estimate_x0: bool,
    /// Replace the model order by the gap location when a clear gap appears
    /// below it.
    pub auto_order: bool,
}

impl SubspaceConfig {
    pub fn new(model_order: usize) -> Self {
        Self { model_order, horizon: None, rank_tol: None, estimate_x0: true, auto_order: false }
    }

    pub fn default_horizon(order: usize, output_dim: usize) -> usize {
        2 * order.div_ceil(output_dim.max(1)) + 2
    }

    pub fn horizon_for(&self, output_dim: usize) -> usize {
        self.horizon.unwrap_or_else(|| Self::default_horizon(self.model_order, output_dim))
    }
}

/// Sorted singular values and the location of their largest ratio.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SpectrumReport {
    pub values: Vec<f64>,
    /// Number of values before the largest ratio `σ_k / σ_{k+1}`.
    pub gap_index: Option<usize>,
    pub gap_ratio: Option<f64>,
}

impl SpectrumReport {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        let smax = values.first().copied().unwrap_or(0.0);
        if smax <= 0.0 || values.len() < 2 {
            return Self { values, gap_index: None, gap_ratio: None };
        }
        // Values below roundoff level are treated as equal so that the noise
        // floor cannot produce a spurious infinite ratio.
        let floor = smax * f64::EPSILON;
        let clamped: Vec<f64> = values.iter().map(|&s| s.max(floor)).collect();
        let (idx, ratio) = clamped
            .windows(2)
            .map(|w| w[0] / w[1])
            .enumerate()
            .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
        Self { values, gap_index: Some(idx + 1), gap_ratio: Some(ratio) }
    }

    /// `σ_k / σ_{k+1}` for a 1-based `k`, with zero denominators clamped at
    /// the roundoff floor.
    pub fn ratio_at(&self, k: usize) -> Option<f64> {
        if k == 0 || k >= self.values.len() {
            return None;
        }
        let floor = self.values[0] * f64::EPSILON;
        Some(self.values[k - 1].max(floor) / self.values[k].max(floor))
    }
}

#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub realization: SharedARealization,
    pub x0: DVector<f64>,
    /// Singular values of the projected future outputs.
    pub singular_values: Vec<f64>,
    pub horizon: usize,
    pub order: usize,
    /// Set when the spectrum shows a clear gap below the requested order.
    pub order_gap: Option<usize>,
}

impl IdentificationResult {
    /// Simulate the joint model (with the estimated initial state) on `ř`.
    pub fn simulate(&self, r: &CycledSignal) -> Result<Mat> {
        let sys = self.realization.joint();
        Ok(simulate_lti(&sys, &r.as_record(), Some(&self.x0))?.samples().clone())
    }
}

pub fn singular_spectrum_report(result: &IdentificationResult) -> SpectrumReport {
    SpectrumReport::from_values(result.singular_values.clone())
}

/// Block Hankel matrix with `rows` block rows starting at sample `start`,
/// `cols` columns. Data are `N x q`, rows are time.
fn block_hankel(data: &Mat, start: usize, rows: usize, cols: usize) -> Mat {
    let q = data.ncols();
    let mut h = Mat::zeros(rows * q, cols);
    for i in 0..rows {
        for j in 0..cols {
            for c in 0..q {
                h[(i * q + c, j)] = data[(start + i + j, c)];
            }
        }
    }
    h
}

/// `A`, `C` of the given order from PO-MOESP, plus the singular values.
fn estimate_ac(u: &Mat, y: &Mat, order: usize, i: usize, rank_tol: Option<f64>) -> Result<(Mat, Mat, Vec<f64>)> {
    let (q, p) = (u.ncols(), y.ncols());
    let n_samples = u.nrows();
    let j = n_samples + 1 - 2 * i;
    // Rows: U_f, [U_p; Y_p], Y_f.
    let rows = 2 * i * (q + p);
    let mut h = Mat::zeros(rows, j);
    h.rows_mut(0, i * q).copy_from(&block_hankel(u, i, i, j));
    h.rows_mut(i * q, i * q).copy_from(&block_hankel(u, 0, i, j));
    h.rows_mut(2 * i * q, i * p).copy_from(&block_hankel(y, 0, i, j));
    h.rows_mut(2 * i * q + i * p, i * p).copy_from(&block_hankel(y, i, i, j));
    // H = L Q^T through the QR of H^T; only the triangular factor is needed.
    let l = h.transpose().qr().r().transpose();
    let l11 = l.view((0, 0), (i * q, i * q)).into_owned();
    let rank = numerical_rank(&l11, rank_tol);
    if rank < i * q {
        return Err(Error::RankDeficientData(format!(
            "future input block has rank {rank} of {}; the reference is not persistently exciting",
            i * q
        )));
    }
    let inst = i * (q + p);
    let l32 = l.view((i * q + inst, i * q), (i * p, inst)).into_owned();
    let svd = svd_sorted(&l32);
    if order > svd.s.len() {
        return Err(Error::InvalidConfig(format!(
            "model order {order} exceeds the {} available singular values",
            svd.s.len()
        )));
    }
    let mut gamma = svd.u.columns(0, order).into_owned();
    for (c, s) in svd.s.iter().take(order).enumerate() {
        gamma.column_mut(c).scale_mut(s.sqrt());
    }
    let c = gamma.rows(0, p).into_owned();
    let upper = gamma.rows(0, (i - 1) * p).into_owned();
    let lower = gamma.rows(p, (i - 1) * p).into_owned();
    let a = lstsq(&upper, &lower)?;
    Ok((a, c, svd.s))
}

/// Fit `B` (and optionally `x0`) by least squares with `A`, `C` fixed and
/// `D = 0`.
fn estimate_b_x0(a: &Mat, c: &Mat, u: &Mat, y: &Mat, with_x0: bool) -> Result<(Mat, DVector<f64>)> {
    let (n, q, p) = (a.nrows(), u.ncols(), c.nrows());
    let n_samples = u.nrows();
    let nb = n * q;
    let cols = nb + if with_x0 { n } else { 0 };
    let mut reg = Mat::zeros(n_samples * p, cols);
    let mut rhs = DVector::zeros(n_samples * p);
    // s(k) = sum_{t<k} u(t)^T ⊗ A^{k-1-t}, so that the noise-free output is
    // C s(k) vec(B) + C A^k x0.
    let mut s = Mat::zeros(n, nb);
    let mut ak = Mat::identity(n, n);
    for k in 0..n_samples {
        reg.view_mut((k * p, 0), (p, nb)).copy_from(&(c * &s));
        if with_x0 {
            reg.view_mut((k * p, nb), (p, n)).copy_from(&(c * &ak));
            ak = a * ak;
        }
        for r in 0..p {
            rhs[k * p + r] = y[(k, r)];
        }
        s = a * s;
        for col in 0..q {
            let uk = u[(k, col)];
            if uk != 0.0 {
                for d in 0..n {
                    s[(d, col * n + d)] += uk;
                }
            }
        }
    }
    let theta = lstsq_qr(&reg, &rhs)?;
    let b = Mat::from_column_slice(n, q, theta.rows(0, nb).as_slice());
    let x0 = if with_x0 { theta.rows(nb, n).into_owned() } else { DVector::zeros(n) };
    Ok((b, x0))
}

/// Identify `(A, B, C_y, C_u)` from the cycled reference and the stacked
/// cycled joint output `[y̌; ǔ]`.
pub fn identify_cycled_closed_loop(
    r: &CycledSignal,
    z: &CycledSignal,
    cfg: &SubspaceConfig,
) -> Result<IdentificationResult> {
    if r.len() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} samples, output {}",
            r.len(),
            z.len()
        )));
    }
    let segs = z.segments();
    if segs.len() != 2 {
        return Err(Error::DimensionMismatch(
            "joint output must stack exactly two cycled segments [y; u]".into(),
        ));
    }
    let n_y = segs[0] * z.period();
    let (u, y) = (r.samples(), z.samples());
    let p = y.ncols();
    let mut order = cfg.model_order;
    if order == 0 {
        return Err(Error::InvalidConfig("model order must be positive".into()));
    }
    let i = cfg.horizon_for(p);
    if i < 2 || (i - 1) * p < order {
        return Err(Error::InvalidConfig(format!(
            "horizon {i} with {p} outputs cannot resolve order {order}"
        )));
    }
    let n_samples = u.nrows();
    if n_samples < 2 * i + 1 {
        return Err(Error::InvalidConfig(format!("{n_samples} samples are too few for horizon {i}")));
    }
    if n_samples < 10 * order {
        log::warn!("only {n_samples} samples for model order {order}; estimates may be poor");
    }

    let (mut a, mut c, sv) = estimate_ac(u, y, order, i, cfg.rank_tol)?;
    let spectrum = SpectrumReport::from_values(sv.clone());
    let mut order_gap = None;
    if let (Some(g), Some(ratio)) = (spectrum.gap_index, spectrum.gap_ratio) {
        if g < order && ratio >= ORDER_GAP_FACTOR {
            log::warn!(
                "singular spectrum has a gap at {g} below the requested order {order} (ratio {ratio:.2e}); \
                 the loop may be non-minimal"
            );
            order_gap = Some(g);
            if cfg.auto_order {
                order = g;
                (a, c, _) = estimate_ac(u, y, order, i, cfg.rank_tol)?;
            }
        }
    }
    let (b, x0) = estimate_b_x0(&a, &c, u, y, cfg.estimate_x0)?;
    let realization = SharedARealization::from_stacked(a, b, &c, n_y)?;
    Ok(IdentificationResult { realization, x0, singular_values: sv, horizon: i, order, order_gap })
}
