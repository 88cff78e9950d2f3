//! Order reduction of the extracted plant: ERA on its Markov sequence
//! (default) or balanced truncation of the stable part after a
//! stable/antistable split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, hstack, lstsq, solve, svd_sorted, vstack, Complex64, Mat};
use crate::markov::markov_parameters;
use crate::subspace::SpectrumReport;
use crate::system::LtiStateSpace;

pub const DEFAULT_GAP_FACTOR: f64 = 1e3;
/// Retained values below this fraction of the largest one count as noise.
const NEGLIGIBLE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMethod {
    #[default]
    Era,
    Bt,
}

impl std::str::FromStr for ReductionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "era" => Ok(Self::Era),
            "bt" => Ok(Self::Bt),
            other => Err(Error::InvalidConfig(format!("unknown reduction method '{other}' (era|bt)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionConfig {
    pub target_order: usize,
    pub method: ReductionMethod,
    /// Number of Markov parameters used by ERA; `None` means `4 n`.
    pub markov_depth: Option<usize>,
    pub gap_factor: f64,
}

impl ReductionConfig {
    pub fn new(target_order: usize) -> Self {
        Self { target_order, method: ReductionMethod::Era, markov_depth: None, gap_factor: DEFAULT_GAP_FACTOR }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedPlant {
    pub sys: LtiStateSpace,
    /// Singular values that decided the truncation (Hankel matrix for ERA,
    /// stable-part Hankel singular values for balanced truncation).
    pub spectrum: SpectrumReport,
    /// Index in `spectrum` at which the truncation happened.
    pub cut: usize,
    pub method: ReductionMethod,
    /// Modes kept untouched because they lie outside the unit circle.
    pub n_unstable: usize,
}

fn check_gap(spectrum: &SpectrumReport, cut: usize, factor: f64) -> Result<()> {
    let values = &spectrum.values;
    let fail = |ratio: f64| Error::GapNotFound { index: cut, ratio, factor, spectrum: values.clone() };
    if cut == 0 || cut >= values.len() {
        // Nothing to truncate (or nothing to keep): no gap to check.
        if cut > values.len() {
            return Err(fail(f64::NAN));
        }
        return Ok(());
    }
    let ratio = spectrum.ratio_at(cut).unwrap_or(f64::NAN);
    if values[cut - 1] <= NEGLIGIBLE * values[0] || ratio.is_nan() || ratio < factor {
        return Err(fail(ratio));
    }
    Ok(())
}

/// Reduce `sys` to `cfg.target_order` states.
pub fn reduce_to_plant_order(sys: &LtiStateSpace, cfg: &ReductionConfig) -> Result<ReducedPlant> {
    match cfg.method {
        ReductionMethod::Era => era(sys, cfg),
        ReductionMethod::Bt => balanced_truncation(sys, cfg),
    }
}

fn era(sys: &LtiStateSpace, cfg: &ReductionConfig) -> Result<ReducedPlant> {
    let n = sys.order();
    let r = cfg.target_order;
    let depth = cfg.markov_depth.unwrap_or(4 * n).max(2 * r + 2);
    let k = depth / 2;
    let (p, q) = (sys.n_outputs(), sys.n_inputs());
    let h = markov_parameters(sys, 2 * k + 1);
    let mut h0 = Mat::zeros(k * p, k * q);
    let mut h1 = Mat::zeros(k * p, k * q);
    for i in 0..k {
        for j in 0..k {
            h0.view_mut((i * p, j * q), (p, q)).copy_from(&h[i + j + 1]);
            h1.view_mut((i * p, j * q), (p, q)).copy_from(&h[i + j + 2]);
        }
    }
    let svd = svd_sorted(&h0);
    let spectrum = SpectrumReport::from_values(svd.s.clone());
    check_gap(&spectrum, r, cfg.gap_factor)?;
    let s_half: Vec<f64> = svd.s.iter().take(r).map(|s| s.sqrt()).collect();
    let mut obs = svd.u.columns(0, r).into_owned();
    let mut ctr = svd.v_t.rows(0, r).into_owned();
    for (i, sh) in s_half.iter().enumerate() {
        obs.column_mut(i).scale_mut(*sh);
        ctr.row_mut(i).scale_mut(*sh);
    }
    // A = Γ^+ H1 Ω^+, computed as least-squares solves.
    let left = lstsq(&obs, &h1)?;
    let a = lstsq(&ctr.transpose(), &left.transpose())?.transpose();
    let b = ctr.columns(0, q).into_owned();
    let c = obs.rows(0, p).into_owned();
    let reduced = LtiStateSpace::new(a, b, c, sys.d.clone())?;
    let n_unstable = count_unstable(&eigenvalues(&reduced.a)?);
    Ok(ReducedPlant { sys: reduced, spectrum, cut: r, method: ReductionMethod::Era, n_unstable })
}

fn count_unstable(ev: &[Complex64]) -> usize {
    ev.iter().filter(|z| z.norm() > 1.0).count()
}

/// Solve the Stein equation `X = A X A^T + Q` by doubling. Requires a
/// Schur-stable `A`.
pub fn stein(a: &Mat, q: &Mat) -> Result<Mat> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let next = &x + &ak * &x * ak.transpose();
        let delta = (&next - &x).norm();
        x = next;
        ak = &ak * &ak;
        if delta <= 1e-15 * x.norm().max(f64::MIN_POSITIVE) || ak.amax() < 1e-300 {
            return Ok(x);
        }
        if !ak.amax().is_finite() {
            break;
        }
    }
    Err(Error::Numerical("Stein iteration did not converge; is A Schur stable?".into()))
}

/// Symmetric square-root factor `L` with `X = L L^T`, clipping tiny
/// negative eigenvalues caused by roundoff.
fn psd_factor(x: &Mat) -> Mat {
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        l.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    l
}

/// Hankel singular values of a Schur-stable system, sorted descending.
pub fn hankel_singular_values(sys: &LtiStateSpace) -> Result<Vec<f64>> {
    let p = stein(&sys.a, &(&sys.b * sys.b.transpose()))?;
    let q = stein(&sys.a.transpose(), &(sys.c.transpose() * &sys.c))?;
    let lp = psd_factor(&p);
    let lq = psd_factor(&q);
    Ok(svd_sorted(&(lq.transpose() * lp)).s)
}

/// Orthonormal basis of the column space of `x` with the given dimension.
fn range_basis(x: &Mat, dim: usize) -> Mat {
    svd_sorted(x).u.columns(0, dim).into_owned()
}

/// Split `A` into its stable and antistable parts through the matrix sign
/// function of the Cayley transform `(A + I)(A - I)^{-1}`. Returns the
/// coordinate change `V` (stable columns first) and the stable dimension.
pub fn stable_antistable_split(a: &Mat) -> Result<(Mat, usize)> {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let ev = eigenvalues(a)?;
    if ev.iter().any(|z| (z.norm() - 1.0).abs() < 1e-10) {
        return Err(Error::Numerical("eigenvalue on the unit circle; no stable/antistable split".into()));
    }
    let n_stable = ev.iter().filter(|z| z.norm() < 1.0).count();
    if n_stable == n || n_stable == 0 {
        return Ok((eye, n_stable));
    }
    let mut z = solve(&(a - &eye).transpose(), &(a + &eye).transpose())?.transpose();
    // Quadratic convergence: once the step is small, two more steps reach
    // roundoff level.
    let mut extra = 2;
    for _ in 0..100 {
        let z_inv = z.clone().try_inverse().ok_or_else(|| Error::Numerical("sign iteration hit a singular matrix".into()))?;
        let next = (&z + z_inv) * 0.5;
        let delta = (&next - &z).norm();
        z = next;
        if delta <= 1e-8 * z.norm() {
            if extra == 0 {
                break;
            }
            extra -= 1;
        }
    }
    let stable = range_basis(&((&eye - &z) * 0.5), n_stable);
    let unstable = range_basis(&((&eye + &z) * 0.5), n - n_stable);
    Ok((hstack(&stable, &unstable), n_stable))
}

fn balanced_truncation(sys: &LtiStateSpace, cfg: &ReductionConfig) -> Result<ReducedPlant> {
    let (v, ns) = stable_antistable_split(&sys.a)?;
    let n = sys.order();
    let nu = n - ns;
    let r = cfg.target_order;
    if r < nu {
        return Err(Error::GapNotFound {
            index: r,
            ratio: f64::NAN,
            factor: cfg.gap_factor,
            spectrum: Vec::new(),
        });
    }
    let t = sys.similarity(&v)?;
    let a_s = t.a.view((0, 0), (ns, ns)).into_owned();
    let b_s = t.b.rows(0, ns).into_owned();
    let c_s = t.c.columns(0, ns).into_owned();
    let keep = r - nu;

    let (a_r, b_r, c_r, spectrum) = if ns == 0 {
        (Mat::zeros(0, 0), Mat::zeros(0, sys.n_inputs()), Mat::zeros(sys.n_outputs(), 0), SpectrumReport::from_values(vec![]))
    } else {
        let p = stein(&a_s, &(&b_s * b_s.transpose()))?;
        let q = stein(&a_s.transpose(), &(c_s.transpose() * &c_s))?;
        let lp = psd_factor(&p);
        let lq = psd_factor(&q);
        let svd = svd_sorted(&(lq.transpose() * &lp));
        let spectrum = SpectrumReport::from_values(svd.s.clone());
        check_gap(&spectrum, keep, cfg.gap_factor)?;
        let mut tr = &lp * svd.v_t.rows(0, keep).transpose();
        let mut wr = &lq * svd.u.columns(0, keep);
        for i in 0..keep {
            let f = 1.0 / svd.s[i].sqrt();
            tr.column_mut(i).scale_mut(f);
            wr.column_mut(i).scale_mut(f);
        }
        (wr.transpose() * &a_s * &tr, wr.transpose() * &b_s, &c_s * &tr, spectrum)
    };

    // Reassemble with the antistable block kept whole.
    let a_us = t.a.view((0, ns), (ns, nu)).into_owned();
    let a_su = t.a.view((ns, 0), (nu, ns)).into_owned();
    if a_us.amax().max(a_su.amax()) > 1e-8 * t.a.norm().max(1.0) {
        log::warn!("stable/antistable split left coupling of size {:.2e}", a_us.amax().max(a_su.amax()));
    }
    let a_u = t.a.view((ns, ns), (nu, nu)).into_owned();
    let b_u = t.b.rows(ns, nu).into_owned();
    let c_u = t.c.columns(ns, nu).into_owned();
    let a = vstack(
        &hstack(&a_r, &Mat::zeros(keep, nu)),
        &hstack(&Mat::zeros(nu, keep), &a_u),
    );
    let b = vstack(&b_r, &b_u);
    let c = hstack(&c_r, &c_u);
    let reduced = LtiStateSpace::new(a, b, c, sys.d.clone())?;
    Ok(ReducedPlant { sys: reduced, spectrum, cut: keep, method: ReductionMethod::Bt, n_unstable: nu })
}
