//! Closed-loop experiments: white reference excitation, measurement and
//! process noise at a prescribed SNR, and the recorded `{r, y, u}` data.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::closed_loop::check_assumptions;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::signal::SignalRecord;
use crate::system::PeriodicStateSpace;

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e9;

const REFERENCE_STREAM: u64 = 0;
const MEASUREMENT_STREAM: u64 = 1;
const PROCESS_STREAM: u64 = 2;

fn gaussian_matrix(n: usize, dim: usize, seed: u64, stream: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // Row-major fill so that the sequence does not depend on the channel count.
    let mut m = Mat::zeros(n, dim);
    for k in 0..n {
        for j in 0..dim {
            m[(k, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

/// Zero-mean unit-variance white Gaussian reference, reproducible from `seed`.
pub fn generate_reference(n: usize, dim: usize, seed: u64) -> Result<SignalRecord> {
    if n == 0 {
        return Err(Error::InvalidConfig("reference length must be at least 1".into()));
    }
    Ok(SignalRecord::from_matrix(gaussian_matrix(n, dim, seed, REFERENCE_STREAM))?.with_labels("r"))
}

/// Process noise `w` entering the plant state through `B_{w,k}`.
#[derive(Debug, Clone)]
pub struct ProcessNoise {
    pub b_w: Vec<Mat>,
    pub std_dev: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseConfig {
    /// Per-channel output SNR in dB; `f64::INFINITY` disables measurement noise.
    pub snr_db: f64,
    pub process: Option<ProcessNoise>,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noise_free(seed: u64) -> Self {
        Self { snr_db: f64::INFINITY, process: None, seed }
    }

    pub fn with_snr(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, process: None, seed }
    }

    pub fn is_noise_free(&self) -> bool {
        self.snr_db == f64::INFINITY && self.process.is_none()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    pub x0_plant: Option<DVector<f64>>,
    pub x0_controller: Option<DVector<f64>>,
    /// Magnitude above which the run is declared divergent (default 1e9).
    pub divergence_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    /// `None` for noise-free data.
    pub snr_db: Option<f64>,
    pub period: usize,
    pub n_samples: usize,
    pub phase_origin: i64,
    #[serde(default)]
    pub plant: String,
    #[serde(default)]
    pub controller: String,
    #[serde(default)]
    pub process_noise_dim: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentDataset {
    pub r: SignalRecord,
    pub y: SignalRecord,
    pub u: SignalRecord,
    /// Measurement noise actually injected, kept for diagnostics.
    pub measurement_noise: Option<SignalRecord>,
    pub metadata: DatasetMetadata,
}

impl ExperimentDataset {
    pub fn new(r: SignalRecord, y: SignalRecord, u: SignalRecord, metadata: DatasetMetadata) -> Result<Self> {
        if r.len() != y.len() || r.len() != u.len() {
            return Err(Error::DimensionMismatch(format!(
                "r, y, u lengths differ: {}, {}, {}",
                r.len(),
                y.len(),
                u.len()
            )));
        }
        if metadata.period == 0 {
            return Err(Error::InvalidConfig("period must be at least 1".into()));
        }
        Ok(Self { r, y, u, measurement_noise: None, metadata })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn period(&self) -> usize {
        self.metadata.period
    }

    pub fn phase_origin(&self) -> i64 {
        self.metadata.phase_origin
    }

    /// Joint output `z = [y u]` per sample.
    pub fn z(&self) -> SignalRecord {
        self.y.concat_channels(&self.u).expect("equal lengths checked at construction")
    }
}

struct LoopTrace {
    y_clean: Mat,
    u: Mat,
}

#[allow(clippy::too_many_arguments)]
fn simulate_loop(
    plant: &PeriodicStateSpace,
    controller: &PeriodicStateSpace,
    r: &SignalRecord,
    v: Option<&Mat>,
    w: Option<(&[Mat], &Mat)>,
    opts: &ExperimentOptions,
) -> Result<LoopTrace> {
    let n = r.len();
    let bound = opts.divergence_bound.unwrap_or(DEFAULT_DIVERGENCE_BOUND);
    let init = |x: &Option<DVector<f64>>, dim: usize, what: &str| -> Result<DVector<f64>> {
        match x {
            Some(x) if x.len() != dim => Err(Error::DimensionMismatch(format!(
                "{what} initial state has length {}, expected {dim}",
                x.len()
            ))),
            Some(x) => Ok(x.clone()),
            None => Ok(DVector::zeros(dim)),
        }
    };
    let mut xp = init(&opts.x0_plant, plant.n_states(), "plant")?;
    let mut xc = init(&opts.x0_controller, controller.n_states(), "controller")?;
    let mut y_clean = Mat::zeros(n, plant.n_outputs());
    let mut u_out = Mat::zeros(n, plant.n_inputs());
    for k in 0..n {
        let ph = k as i64;
        let y = plant.c(ph) * &xp;
        let u = controller.c(ph) * &xc;
        let mut y_meas = y.clone();
        if let Some(v) = v {
            y_meas += v.row(k).transpose();
        }
        let e = r.at(k) - y_meas;
        let mut xp_next = plant.a(ph) * &xp + plant.b(ph) * &u;
        if let Some((bw, w)) = w {
            xp_next += &bw[k % plant.period()] * w.row(k).transpose();
        }
        xc = controller.a(ph) * &xc + controller.b(ph) * e;
        xp = xp_next;
        let magnitude = y.amax().max(u.amax()).max(xp.amax()).max(xc.amax());
        if !magnitude.is_finite() || magnitude > bound {
            return Err(Error::DivergenceDetected { sample: k, magnitude, bound });
        }
        y_clean.set_row(k, &y.transpose());
        u_out.set_row(k, &u.transpose());
    }
    Ok(LoopTrace { y_clean, u: u_out })
}

/// Run the feedback loop `e = r - (y + v)`, `u = K e`, `y = P u` with zero
/// (or given) initial states and record `r`, the measured `y` and `u`.
///
/// Measurement noise is scaled per output channel so that the noise-free
/// output power over a preliminary pass divided by the noise variance
/// equals the target SNR.
pub fn run_closed_loop_experiment(
    plant: &PeriodicStateSpace,
    controller: &PeriodicStateSpace,
    r: &SignalRecord,
    noise: &NoiseConfig,
    opts: &ExperimentOptions,
) -> Result<ExperimentDataset> {
    let report = check_assumptions(plant, controller);
    for n in 1..=3 {
        if !report.holds(n) {
            return Err(report.first_failure().expect("an assumption failed"));
        }
    }
    if r.dim() != plant.n_outputs() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} channels, plant has {} outputs",
            r.dim(),
            plant.n_outputs()
        )));
    }
    let n = r.len();
    let l = plant.n_outputs();

    let w = match &noise.process {
        Some(p) => {
            if p.b_w.len() != plant.period() || p.b_w.iter().any(|b| b.nrows() != plant.n_states()) {
                return Err(Error::DimensionMismatch("B_w must be n_p x m_w for every phase".into()));
            }
            let m_w = p.b_w[0].ncols();
            Some(gaussian_matrix(n, m_w, noise.seed, PROCESS_STREAM) * p.std_dev)
        }
        None => None,
    };
    let w_arg = noise.process.as_ref().zip(w.as_ref()).map(|(p, w)| (p.b_w.as_slice(), w));

    let v = if noise.snr_db.is_finite() {
        let clean = simulate_loop(plant, controller, r, None, w_arg, opts)?;
        let mut v = gaussian_matrix(n, l, noise.seed, MEASUREMENT_STREAM);
        for j in 0..l {
            let power = clean.y_clean.column(j).norm_squared() / n as f64;
            let std = (power / 10f64.powf(noise.snr_db / 10.0)).sqrt();
            v.column_mut(j).scale_mut(std);
        }
        Some(v)
    } else {
        None
    };

    let trace = simulate_loop(plant, controller, r, v.as_ref(), w_arg, opts)?;
    let mut y = trace.y_clean;
    if let Some(v) = &v {
        y += v;
    }
    let metadata = DatasetMetadata {
        seed: noise.seed,
        snr_db: noise.snr_db.is_finite().then_some(noise.snr_db),
        period: plant.period(),
        n_samples: n,
        phase_origin: 0,
        plant: String::new(),
        controller: String::new(),
        process_noise_dim: noise.process.as_ref().map_or(0, |p| p.b_w[0].ncols()),
    };
    let mut ds = ExperimentDataset::new(
        r.clone(),
        SignalRecord::from_matrix(y)?.with_labels("y"),
        SignalRecord::from_matrix(trace.u)?.with_labels("u"),
        metadata,
    )?;
    ds.measurement_noise = v.map(|v| SignalRecord::from_matrix(v).map(|s| s.with_labels("v"))).transpose()?;
    Ok(ds)
}
