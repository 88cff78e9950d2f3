//! Algebraic extraction of the cycled plant from a shared-A closed-loop
//! realization.
//!
//! With `Λ = (C_u B)^{-1}` the plant `P̌ = T_yr T_ur^{-1}` is realized by
//!
//! ```text
//! A_p = A - A B Λ C_u      B_p = A B Λ
//! C_p = C_y (I - B Λ C_u)  D_p = C_y B Λ
//! ```
//!
//! of the same order as `A`. For a controller path of relative degree `d`,
//! `A B`, `C_y B` and `C_u B` become `A^d B`, `C_y A^{d-1} B` and
//! `C_u A^{d-1} B`.

use crate::closed_loop::SharedARealization;
use crate::error::{Error, Result};
use crate::linalg::{cond, hstack, mat_pow, solve, spectral_radius, vstack, Mat};
use crate::markov::{markov_parameters, max_markov_distance};
use crate::system::LtiStateSpace;

#[derive(Debug, Clone, Copy)]
pub struct ExtractionConfig {
    /// Condition number of the controller-path matrix above which a warning
    /// is logged.
    pub warn_cond: f64,
    /// Condition number above which extraction is refused.
    pub max_cond: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { warn_cond: 1e4, max_cond: 1e8 }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractedPlant {
    pub realization: LtiStateSpace,
    /// Condition number of `C_u A^{d-1} B`.
    pub lambda_cond: f64,
    pub spectral_radius: f64,
    pub relative_degree: usize,
    /// Largest `‖C_u A^j B‖_F` for `j < d - 1`, relative to the pivot
    /// matrix; zero for `d = 1`.
    pub lower_path_residual: f64,
    pub warnings: Vec<String>,
}

impl ExtractedPlant {
    pub fn order(&self) -> usize {
        self.realization.order()
    }

    pub fn feedthrough_norm(&self) -> f64 {
        self.realization.d.norm()
    }

    /// The extracted realization with `D_p` set to zero.
    pub fn with_zero_feedthrough(&self) -> LtiStateSpace {
        let mut sys = self.realization.clone();
        sys.d.fill(0.0);
        sys
    }
}

pub fn extract_plant(sr: &SharedARealization) -> Result<ExtractedPlant> {
    extract_plant_with(sr, 1, &ExtractionConfig::default())
}

pub fn extract_plant_general(sr: &SharedARealization, d: usize) -> Result<ExtractedPlant> {
    extract_plant_with(sr, d, &ExtractionConfig::default())
}

/// `Λ = (C_u A^{d-1} B)^{-1}` by an LU solve, with its condition number.
fn controller_path_inverse(sr: &SharedARealization, d: usize, cfg: &ExtractionConfig) -> Result<(Mat, f64, Mat)> {
    let ad1 = mat_pow(&sr.a, d - 1);
    let pivot = &sr.c_u * &ad1 * &sr.b;
    if !pivot.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "controller path matrix is {}x{}; the plant must be square",
            pivot.nrows(),
            pivot.ncols()
        )));
    }
    let c = cond(&pivot);
    if !c.is_finite() || c > cfg.max_cond {
        return Err(Error::SingularControllerPath { cond: c });
    }
    let n = pivot.nrows();
    let lambda = solve(&pivot, &Mat::identity(n, n)).map_err(|_| Error::SingularControllerPath { cond: c })?;
    Ok((lambda, c, ad1))
}

pub fn extract_plant_with(sr: &SharedARealization, d: usize, cfg: &ExtractionConfig) -> Result<ExtractedPlant> {
    if d == 0 {
        return Err(Error::InvalidConfig("relative degree must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    let (lambda, lambda_cond, ad1) = controller_path_inverse(sr, d, cfg)?;
    if lambda_cond > cfg.warn_cond {
        let msg = format!("controller-path matrix is ill-conditioned (cond {lambda_cond:.3e}); extraction may be unreliable");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let pivot_norm = (&sr.c_u * &ad1 * &sr.b).norm();
    let mut lower_path_residual: f64 = 0.0;
    let mut ajb = sr.b.clone();
    for _ in 0..d.saturating_sub(1) {
        lower_path_residual = lower_path_residual.max((&sr.c_u * &ajb).norm() / pivot_norm);
        ajb = &sr.a * ajb;
    }
    if lower_path_residual > 1e-6 {
        let msg = format!(
            "controller path is not of relative degree {d}: lower Markov terms have relative size {lower_path_residual:.3e}"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let n = sr.order();
    let adb = &sr.a * &ad1 * &sr.b;
    let bl = &ad1 * &sr.b * &lambda;
    let a = &sr.a - &adb * &lambda * &sr.c_u;
    let b = &adb * &lambda;
    let c = &sr.c_y * (Mat::identity(n, n) - &bl * &sr.c_u);
    let dmat = &sr.c_y * &bl;
    let realization = LtiStateSpace::new(a, b, c, dmat)?;
    let spectral_radius = spectral_radius(&realization.a)?;
    Ok(ExtractedPlant {
        realization,
        lambda_cond,
        spectral_radius,
        relative_degree: d,
        lower_path_residual,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct CascadeReport {
    /// The `2n` series connection of the inverse controller path and the
    /// output path.
    pub cascade: LtiStateSpace,
    /// `‖lower block of T^{-1} B_cas‖_F` after `T = [[I, 0], [I, I]]`.
    pub lower_input_norm: f64,
    /// `‖T^{-1} A_cas T - blockdiag(A_p, A)‖_F`.
    pub block_diagonal_residual: f64,
    /// Reference magnitude for the tolerances.
    pub scale: f64,
    /// Largest Markov-parameter distance between cascade and extraction.
    pub markov_residual: f64,
    pub passed: bool,
}

/// Build the cascade, change coordinates and confirm that the second half
/// of the state is unreachable (`tol` is relative to `scale`).
pub fn verify_cascade_cancellation(sr: &SharedARealization, h_max: usize, tol: f64) -> Result<CascadeReport> {
    let ep = extract_plant(sr)?;
    let n = sr.order();
    let (lambda, _, _) = controller_path_inverse(sr, 1, &ExtractionConfig::default())?;
    let p = &ep.realization;
    let abl = &sr.a * &sr.b * &lambda;
    let a_cas = vstack(
        &hstack(&p.a, &Mat::zeros(n, n)),
        &hstack(&(-(&abl * &sr.c_u)), &sr.a),
    );
    let b_cas = vstack(&p.b, &p.b);
    let c_cas = hstack(&(-(&sr.c_y * &sr.b * &lambda * &sr.c_u)), &sr.c_y);
    let cascade = LtiStateSpace::new(a_cas, b_cas, c_cas, p.d.clone())?;

    let eye = Mat::identity(n, n);
    let zero = Mat::zeros(n, n);
    let t = vstack(&hstack(&eye, &zero), &hstack(&eye, &eye));
    let t_inv = vstack(&hstack(&eye, &zero), &hstack(&(-&eye), &eye));
    let bt = &t_inv * &cascade.b;
    let at = &t_inv * &cascade.a * &t;
    let lower_input_norm = bt.rows(n, n).norm();
    let want = vstack(&hstack(&p.a, &zero), &hstack(&zero, &sr.a));
    let block_diagonal_residual = (at - want).norm();
    let scale = 1.0_f64.max(sr.a.norm()).max(p.b.norm()).max(abl.norm());
    let markov_residual = max_markov_distance(&markov_parameters(&cascade, h_max), &markov_parameters(p, h_max));
    let passed = lower_input_norm <= tol * scale && block_diagonal_residual <= tol * scale;
    Ok(CascadeReport {
        cascade,
        lower_input_norm,
        block_diagonal_residual,
        scale,
        markov_residual,
        passed,
    })
}
