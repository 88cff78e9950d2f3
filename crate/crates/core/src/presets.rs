//! Built-in experiment setups: plant, controller and run parameters for the
//! three reference examples.

use crate::linalg::Mat;
use crate::system::PeriodicStateSpace;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub plant: PeriodicStateSpace,
    pub controller: PeriodicStateSpace,
    pub n_p: usize,
    pub n_c: usize,
    pub n_samples: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl Preset {
    pub fn period(&self) -> usize {
        self.plant.period()
    }
}

pub const PRESET_NAMES: [&str; 3] = ["ex1", "ex2", "ex3"];

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "ex1" => Some(example1()),
        "ex2" => Some(example2()),
        "ex3" => Some(example3()),
        _ => None,
    }
}

fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, data)
}

fn scalar_controller(a: [f64; 3], b: f64, c: f64) -> PeriodicStateSpace {
    PeriodicStateSpace::strictly_proper(
        a.iter().map(|&v| m(1, 1, &[v])).collect(),
        vec![m(1, 1, &[b]); 3],
        vec![m(1, 1, &[c]); 3],
    )
    .expect("scalar controller is consistent")
}

/// Stable second-order SISO plant, time-invariant first-order controller.
pub fn example1() -> Preset {
    let plant = PeriodicStateSpace::strictly_proper(
        vec![
            m(2, 2, &[0.0, 1.0, 0.5, 1.0]),
            m(2, 2, &[0.0, 1.0, 0.9, -0.95]),
            m(2, 2, &[0.0, 1.0, 1.0, 0.5]),
        ],
        vec![m(2, 1, &[1.0, 2.0]), m(2, 1, &[1.5, 2.0]), m(2, 1, &[1.0, 0.5])],
        vec![m(1, 2, &[1.0, 0.0]); 3],
    )
    .expect("example 1 plant is consistent");
    Preset {
        name: "ex1",
        plant,
        controller: scalar_controller([0.3; 3], 0.8, 0.05),
        n_p: 2,
        n_c: 1,
        n_samples: 3000,
        snr_db: 40.0,
        seed: 1,
    }
}

/// Open-loop unstable SISO plant with a periodic first-order controller.
pub fn example2() -> Preset {
    let plant = PeriodicStateSpace::strictly_proper(
        vec![
            m(2, 2, &[0.0, 1.0, 0.8, 1.2]),
            m(2, 2, &[0.0, 1.0, 1.1, -0.5]),
            m(2, 2, &[0.0, 1.0, 0.9, 0.8]),
        ],
        vec![m(2, 1, &[1.0, 2.0]), m(2, 1, &[1.5, 1.0]), m(2, 1, &[1.0, 1.5])],
        vec![m(1, 2, &[1.0, 0.0]); 3],
    )
    .expect("example 2 plant is consistent");
    Preset {
        name: "ex2",
        plant,
        controller: scalar_controller([0.2, -0.5, 0.5], 0.8, 0.3),
        n_p: 2,
        n_c: 1,
        n_samples: 5000,
        snr_db: 40.0,
        seed: 2,
    }
}

/// Third-order two-input two-output plant. The controller matrices are our
/// own: a second-order periodic design with well-conditioned
/// `C_{c,k} B_{c,k-1}` and closed-loop spectral radius about 0.855.
pub fn example3() -> Preset {
    let a = |a33: f64| m(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -0.3, -0.5, a33]);
    let plant = PeriodicStateSpace::strictly_proper(
        vec![a(0.2), a(-0.1), a(0.4)],
        vec![
            m(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 0.5]),
            m(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.1, 0.4]),
            m(3, 2, &[0.8, 0.1, 0.6, 0.8, 0.0, 0.6]),
        ],
        vec![m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]); 3],
    )
    .expect("example 3 plant is consistent");
    let controller = PeriodicStateSpace::strictly_proper(
        vec![
            m(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            m(2, 2, &[0.4, 0.0, 0.1, 0.5]),
            m(2, 2, &[0.6, -0.1, 0.0, 0.2]),
        ],
        vec![
            m(2, 2, &[0.8, 0.1, 0.0, 0.6]),
            m(2, 2, &[0.7, 0.0, 0.2, 0.8]),
            m(2, 2, &[0.9, -0.1, 0.1, 0.5]),
        ],
        vec![
            m(2, 2, &[0.15, 0.025, 0.0, 0.125]),
            m(2, 2, &[0.125, 0.0, 0.025, 0.15]),
            m(2, 2, &[0.175, -0.025, 0.0, 0.1]),
        ],
    )
    .expect("example 3 controller is consistent");
    Preset {
        name: "ex3",
        plant,
        controller,
        n_p: 3,
        n_c: 2,
        n_samples: 9000,
        snr_db: 40.0,
        seed: 3,
    }
}
