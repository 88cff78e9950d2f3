//! State recursions for time-invariant and periodic systems.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::signal::SignalRecord;
use crate::system::{LtiStateSpace, PeriodicStateSpace};

fn initial_state(n: usize, x0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    match x0 {
        Some(x) if x.len() != n => Err(Error::DimensionMismatch(format!(
            "initial state has length {}, system order is {n}",
            x.len()
        ))),
        Some(x) => Ok(x.clone()),
        None => Ok(DVector::zeros(n)),
    }
}

fn check_input(expected: usize, input: &SignalRecord) -> Result<()> {
    if input.dim() != expected {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, system expects {expected}",
            input.dim()
        )));
    }
    Ok(())
}

/// Simulate `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k) + D u(k)`.
/// Returns the output record and the `N x n` state trajectory.
pub fn simulate_lti_states(
    sys: &LtiStateSpace,
    input: &SignalRecord,
    x0: Option<&DVector<f64>>,
) -> Result<(SignalRecord, Mat)> {
    check_input(sys.n_inputs(), input)?;
    let mut x = initial_state(sys.order(), x0)?;
    let n = input.len();
    let mut y = Mat::zeros(n, sys.n_outputs());
    let mut states = Mat::zeros(n, sys.order());
    for k in 0..n {
        let u = input.at(k);
        let yk = &sys.c * &x + &sys.d * &u;
        y.set_row(k, &yk.transpose());
        states.set_row(k, &x.transpose());
        x = &sys.a * &x + &sys.b * &u;
    }
    Ok((SignalRecord::from_matrix(y)?, states))
}

pub fn simulate_lti(
    sys: &LtiStateSpace,
    input: &SignalRecord,
    x0: Option<&DVector<f64>>,
) -> Result<SignalRecord> {
    simulate_lti_states(sys, input, x0).map(|(y, _)| y)
}

/// Additive disturbances for [`simulate_lptv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Disturbances<'a> {
    /// Periodic input matrices `B_{w,k}` and the process-noise record `w`.
    pub process: Option<(&'a [Mat], &'a SignalRecord)>,
    /// Measurement noise `v`, added to the output.
    pub measurement: Option<&'a SignalRecord>,
}

/// Simulate the periodic recursion
/// `x(k+1) = A_k x(k) + B_k u(k) + B_{w,k} w(k)`,
/// `y(k) = C_k x(k) + D_k u(k) + v(k)`, starting at phase 0.
pub fn simulate_lptv(
    sys: &PeriodicStateSpace,
    input: &SignalRecord,
    x0: Option<&DVector<f64>>,
    noise: Disturbances<'_>,
) -> Result<SignalRecord> {
    check_input(sys.n_inputs(), input)?;
    let n = input.len();
    if let Some((bw, w)) = noise.process {
        if bw.len() != sys.period() || w.len() != n {
            return Err(Error::DimensionMismatch(
                "process noise must cover every phase and sample".into(),
            ));
        }
        if bw.iter().any(|b| b.nrows() != sys.n_states() || b.ncols() != w.dim()) {
            return Err(Error::DimensionMismatch("B_w shape does not match w".into()));
        }
    }
    if let Some(v) = noise.measurement {
        if v.len() != n || v.dim() != sys.n_outputs() {
            return Err(Error::DimensionMismatch(
                "measurement noise must match output dimension and length".into(),
            ));
        }
    }
    let mut x = initial_state(sys.n_states(), x0)?;
    let mut y = Mat::zeros(n, sys.n_outputs());
    for k in 0..n {
        let ph = k as i64;
        let u = input.at(k);
        let mut yk = sys.c(ph) * &x + sys.d(ph) * &u;
        if let Some(v) = noise.measurement {
            yk += v.at(k);
        }
        y.set_row(k, &yk.transpose());
        let mut next = sys.a(ph) * &x + sys.b(ph) * &u;
        if let Some((bw, w)) = noise.process {
            next += &bw[k % sys.period()] * w.at(k);
        }
        x = next;
    }
    SignalRecord::from_matrix(y)
}
