//! Feedback interconnection of a periodic plant and controller, its cycled
//! shared-A realization, and the structural checks the extraction relies on.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, cond, hstack, numerical_rank, spectral_radius, vstack, Mat};
use crate::system::{LtiStateSpace, PeriodicStateSpace};

/// Spectral radius above which a stable loop is flagged as near-marginal.
pub const MARGINAL_STABILITY: f64 = 0.999;

/// Augmented closed loop with state `[x_p; x_c]`, input `r` and output
/// `z = [y; u]`.
#[derive(Debug, Clone)]
pub struct AugmentedClosedLoop {
    pub sys: PeriodicStateSpace,
    /// Disturbance input matrices acting on `[w; v]`.
    pub b_eta: Vec<Mat>,
    /// Number of plant outputs `l`; the first `l` rows of `z` are `y`.
    pub n_plant_outputs: usize,
    pub n_plant_states: usize,
    pub n_controller_states: usize,
}

impl AugmentedClosedLoop {
    pub fn period(&self) -> usize {
        self.sys.period()
    }

    pub fn n_states(&self) -> usize {
        self.sys.n_states()
    }

    pub fn n_process_noise(&self) -> usize {
        self.b_eta[0].ncols() - self.n_plant_outputs
    }
}

fn dims_error(what: &str) -> Error {
    Error::DimensionMismatch(what.to_string())
}

/// Check the structural requirements shared by every loop: equal periods,
/// square strictly proper plant and strictly proper controller.
fn check_structure(plant: &PeriodicStateSpace, controller: &PeriodicStateSpace) -> Result<()> {
    if plant.period() != controller.period() {
        return Err(dims_error(&format!(
            "plant period {} differs from controller period {}",
            plant.period(),
            controller.period()
        )));
    }
    if controller.n_inputs() != plant.n_outputs() || controller.n_outputs() != plant.n_inputs() {
        return Err(dims_error(&format!(
            "controller is {}x{} (out x in) but plant is {}x{}",
            controller.n_outputs(),
            controller.n_inputs(),
            plant.n_outputs(),
            plant.n_inputs()
        )));
    }
    if plant.n_inputs() != plant.n_outputs() {
        return Err(Error::AssumptionViolation {
            assumption: 1,
            phase: None,
            detail: format!(
                "plant must be square, has {} outputs and {} inputs",
                plant.n_outputs(),
                plant.n_inputs()
            ),
        });
    }
    if let Some(k) = plant.d_all().iter().position(|d| d.amax() != 0.0) {
        return Err(Error::AssumptionViolation {
            assumption: 1,
            phase: Some(k),
            detail: "plant has direct feedthrough".into(),
        });
    }
    if let Some(k) = controller.d_all().iter().position(|d| d.amax() != 0.0) {
        return Err(Error::AssumptionViolation {
            assumption: 2,
            phase: Some(k),
            detail: "controller has direct feedthrough".into(),
        });
    }
    Ok(())
}

/// Form the augmented closed loop driven by `r` with error `e = r - y`.
///
/// `b_w` are the per-phase process-noise input matrices (`n_p x m_w`); pass
/// `None` for no process noise (`m_w = 0`).
pub fn build_augmented(
    plant: &PeriodicStateSpace,
    controller: &PeriodicStateSpace,
    b_w: Option<&[Mat]>,
) -> Result<AugmentedClosedLoop> {
    check_structure(plant, controller)?;
    let m = plant.period();
    let (np, nc, l) = (plant.n_states(), controller.n_states(), plant.n_outputs());
    let m_in = plant.n_inputs();
    let m_w = match b_w {
        Some(bw) => {
            if bw.len() != m || bw.iter().any(|b| b.nrows() != np || b.ncols() != bw[0].ncols()) {
                return Err(dims_error("process-noise matrices must be n_p x m_w for every phase"));
            }
            bw[0].ncols()
        }
        None => 0,
    };
    let (mut a, mut b, mut c, mut d, mut b_eta) = (vec![], vec![], vec![], vec![], vec![]);
    for k in 0..m as i64 {
        let (ap, bp, cp) = (plant.a(k), plant.b(k), plant.c(k));
        let (ac, bc, cc) = (controller.a(k), controller.b(k), controller.c(k));
        a.push(vstack(
            &hstack(ap, &(bp * cc)),
            &hstack(&(-(bc * cp)), ac),
        ));
        b.push(vstack(&Mat::zeros(np, l), bc));
        c.push(block_diag(&[cp.clone(), cc.clone()]));
        d.push(Mat::zeros(l + m_in, l));
        let mut be = Mat::zeros(np + nc, m_w + l);
        if let Some(bw) = b_w {
            be.view_mut((0, 0), (np, m_w)).copy_from(&bw[k as usize]);
        }
        be.view_mut((np, m_w), (nc, l)).copy_from(&(-bc));
        b_eta.push(be);
    }
    Ok(AugmentedClosedLoop {
        sys: PeriodicStateSpace::new(a, b, c, d)?,
        b_eta,
        n_plant_outputs: l,
        n_plant_states: np,
        n_controller_states: nc,
    })
}

/// Shared-state realization `(A, B, C_y, C_u)` with zero feedthrough.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedARealization {
    pub a: Mat,
    pub b: Mat,
    pub c_y: Mat,
    pub c_u: Mat,
}

impl SharedARealization {
    pub fn new(a: Mat, b: Mat, c_y: Mat, c_u: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c_y.ncols() != n || c_u.ncols() != n {
            return Err(dims_error(&format!(
                "A {}x{}, B {}x{}, C_y {}x{}, C_u {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c_y.nrows(),
                c_y.ncols(),
                c_u.nrows(),
                c_u.ncols()
            )));
        }
        Ok(Self { a, b, c_y, c_u })
    }

    /// Split a stacked `C = [C_y; C_u]` after the first `n_y` rows.
    pub fn from_stacked(a: Mat, b: Mat, c: &Mat, n_y: usize) -> Result<Self> {
        if n_y > c.nrows() {
            return Err(dims_error("output split exceeds the number of rows of C"));
        }
        let c_y = c.rows(0, n_y).into_owned();
        let c_u = c.rows(n_y, c.nrows() - n_y).into_owned();
        Self::new(a, b, c_y, c_u)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn c(&self) -> Mat {
        vstack(&self.c_y, &self.c_u)
    }

    /// The joint system `r -> [y; u]`.
    pub fn joint(&self) -> LtiStateSpace {
        let c = self.c();
        let d = Mat::zeros(c.nrows(), self.b.ncols());
        LtiStateSpace { a: self.a.clone(), b: self.b.clone(), c, d }
    }

    /// `r -> y` only.
    pub fn to_y(&self) -> LtiStateSpace {
        LtiStateSpace::strictly_proper(self.a.clone(), self.b.clone(), self.c_y.clone())
            .expect("validated at construction")
    }

    /// `r -> u` only.
    pub fn to_u(&self) -> LtiStateSpace {
        LtiStateSpace::strictly_proper(self.a.clone(), self.b.clone(), self.c_u.clone())
            .expect("validated at construction")
    }

    /// State coordinates `x = T x'`.
    pub fn similarity(&self, t: &Mat) -> Result<Self> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("similarity transform is singular".into()))?;
        Ok(Self {
            a: &t_inv * &self.a * t,
            b: &t_inv * &self.b,
            c_y: &self.c_y * t,
            c_u: &self.c_u * t,
        })
    }
}

/// Cycle the augmented loop and reorder the output as `[y̌; ǔ]`: the first
/// `Ml` rows carry the plant output of every phase, the last `Mm` rows the
/// control input.
pub fn cycled_closed_loop(acl: &AugmentedClosedLoop) -> SharedARealization {
    let cyc = acl.sys.cyclic_reformulate();
    let m = acl.period();
    let l = acl.n_plant_outputs;
    let q = acl.sys.n_outputs();
    let mu = q - l;
    let n = cyc.a.nrows();
    let mut c_y = Mat::zeros(m * l, n);
    let mut c_u = Mat::zeros(m * mu, n);
    for k in 0..m {
        c_y.rows_mut(k * l, l).copy_from(&cyc.c.rows(k * q, l));
        c_u.rows_mut(k * mu, mu).copy_from(&cyc.c.rows(k * q + l, mu));
    }
    SharedARealization { a: cyc.a, b: cyc.b, c_y, c_u }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseProduct {
    pub phase: usize,
    /// `C_{c,k} B_{c,k-1}`, row-major.
    pub product: Vec<Vec<f64>>,
    pub det: f64,
    pub cond: f64,
    /// Full numerical rank at the default rank tolerance.
    pub invertible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub period: usize,
    pub square: bool,
    pub plant_strictly_proper: bool,
    pub controller_strictly_proper: bool,
    pub relative_degree_products: Vec<PhaseProduct>,
    /// `None` when the loop could not be formed.
    pub closed_loop_spectral_radius: Option<f64>,
    pub cycled_order: usize,
    pub reachability_rank: usize,
    pub observability_rank: usize,
    pub warnings: Vec<String>,
}

fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl AssumptionReport {
    /// Whether assumption `n` (1 to 4) holds.
    pub fn holds(&self, n: u8) -> bool {
        match n {
            1 => self.square && self.plant_strictly_proper,
            2 => {
                self.controller_strictly_proper
                    && !self.relative_degree_products.is_empty()
                    && self.relative_degree_products.iter().all(|p| p.invertible)
            }
            3 => self.closed_loop_spectral_radius.is_some_and(|r| r < 1.0),
            4 => {
                self.cycled_order > 0
                    && self.reachability_rank == self.cycled_order
                    && self.observability_rank == self.cycled_order
            }
            _ => false,
        }
    }

    pub fn all_hold(&self) -> bool {
        (1..=4).all(|n| self.holds(n))
    }

    /// The first failing assumption as an error, if any.
    pub fn first_failure(&self) -> Option<Error> {
        let n = (1..=4).find(|&n| !self.holds(n))?;
        let (phase, detail) = match n {
            1 if !self.square => (None, "plant is not square".to_string()),
            1 => (None, "plant has direct feedthrough".to_string()),
            2 => match self.relative_degree_products.iter().find(|p| !p.invertible) {
                Some(p) => (Some(p.phase), "C_{c,k} B_{c,k-1} is singular".to_string()),
                None => (None, "controller has direct feedthrough".to_string()),
            },
            3 => (
                None,
                format!(
                    "closed loop is not internally stable (spectral radius {:?})",
                    self.closed_loop_spectral_radius
                ),
            ),
            _ => (
                None,
                format!(
                    "cycled closed loop is not minimal: reachability rank {}, observability rank {}, order {}",
                    self.reachability_rank, self.observability_rank, self.cycled_order
                ),
            ),
        };
        Some(Error::AssumptionViolation { assumption: n, phase, detail })
    }

    pub fn to_text(&self) -> String {
        let mark = |b: bool| if b { "ok" } else { "FAILED" };
        let mut s = String::new();
        s.push_str(&format!("period M = {}\n", self.period));
        s.push_str(&format!(
            "assumption 1 (square, strictly proper plant): {}\n",
            mark(self.holds(1))
        ));
        s.push_str(&format!(
            "assumption 2 (relative degree one controller): {}\n",
            mark(self.holds(2))
        ));
        for p in &self.relative_degree_products {
            s.push_str(&format!(
                "  k={}: C_c,k B_c,k-1 = {:?}, det = {:.6}, cond = {:.4}\n",
                p.phase, p.product, p.det, p.cond
            ));
        }
        s.push_str(&format!(
            "assumption 3 (internal stability): {} (spectral radius {})\n",
            mark(self.holds(3)),
            self.closed_loop_spectral_radius
                .map_or("n/a".to_string(), |r| format!("{r:.6}"))
        ));
        s.push_str(&format!(
            "assumption 4 (minimal cycled loop): {} (reachability {}, observability {}, order {})\n",
            mark(self.holds(4)),
            self.reachability_rank,
            self.observability_rank,
            self.cycled_order
        ));
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

/// Reachability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn reachability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut out = Mat::zeros(n, n * b.ncols());
    let mut blk = b.clone();
    for i in 0..n {
        out.columns_mut(i * b.ncols(), b.ncols()).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// Observability matrix `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &Mat, c: &Mat) -> Mat {
    reachability_matrix(&a.transpose(), &c.transpose()).transpose()
}

pub fn check_assumptions(plant: &PeriodicStateSpace, controller: &PeriodicStateSpace) -> AssumptionReport {
    check_assumptions_with(plant, controller, None)
}

/// Evaluate the four structural assumptions. `rank_tol` overrides the
/// default singular-value threshold used for the minimality ranks.
pub fn check_assumptions_with(
    plant: &PeriodicStateSpace,
    controller: &PeriodicStateSpace,
    rank_tol: Option<f64>,
) -> AssumptionReport {
    let m = plant.period();
    let mut warnings = Vec::new();
    let square = plant.n_inputs() == plant.n_outputs();
    let plant_strictly_proper = plant.d_all().iter().all(|d| d.amax() == 0.0);
    let controller_strictly_proper = controller.d_all().iter().all(|d| d.amax() == 0.0);

    let shapes_ok = controller.period() == m
        && controller.n_inputs() == plant.n_outputs()
        && controller.n_outputs() == plant.n_inputs();
    let mut products = Vec::new();
    if shapes_ok {
        for k in 0..m {
            let prod = controller.c(k as i64) * controller.b(k as i64 - 1);
            let (det, c, invertible) = if prod.is_square() {
                (prod.determinant(), cond(&prod), numerical_rank(&prod, None) == prod.nrows())
            } else {
                (f64::NAN, f64::INFINITY, false)
            };
            products.push(PhaseProduct { phase: k, product: to_rows(&prod), det, cond: c, invertible });
        }
    } else {
        warnings.push("plant and controller dimensions or periods do not match".into());
    }

    let mut report = AssumptionReport {
        period: m,
        square,
        plant_strictly_proper,
        controller_strictly_proper,
        relative_degree_products: products,
        closed_loop_spectral_radius: None,
        cycled_order: 0,
        reachability_rank: 0,
        observability_rank: 0,
        warnings,
    };

    let acl = match build_augmented(plant, controller, None) {
        Ok(acl) => acl,
        Err(e) => {
            report.warnings.push(format!("closed loop not formed: {e}"));
            return report;
        }
    };
    match spectral_radius(&acl.sys.monodromy()) {
        Ok(rho) => {
            if rho > MARGINAL_STABILITY && rho < 1.0 {
                let msg = format!("closed loop is near-marginal: spectral radius {rho:.6}");
                log::warn!("{msg}");
                report.warnings.push(msg);
            }
            report.closed_loop_spectral_radius = Some(rho);
        }
        Err(e) => report.warnings.push(format!("eigenvalue computation failed: {e}")),
    }
    let cyc = cycled_closed_loop(&acl);
    report.cycled_order = cyc.order();
    report.reachability_rank = numerical_rank(&reachability_matrix(&cyc.a, &cyc.b), rank_tol);
    report.observability_rank = numerical_rank(&observability_matrix(&cyc.a, &cyc.c()), rank_tol);
    report
}
