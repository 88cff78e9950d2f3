//! Recovery of the periodic plant matrices from a minimal cycled-plant
//! realization: a coordinate change into block-cyclic form, then a
//! read-off of the cyclic and diagonal blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cond, solve, Mat};
use crate::markov::block_shift_matrix;
use crate::system::{LtiStateSpace, PeriodicStateSpace};

pub const DEFAULT_STRUCTURE_TOL: f64 = 1e-6;
pub const NOISY_STRUCTURE_TOL: f64 = 1e-2;
/// `cond(T)` above this is treated as singular.
pub const MAX_TRANSFORM_COND: f64 = 1e10;
const MAX_SELECTION_ATTEMPTS: usize = 10;

#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub period: usize,
    pub n_states: usize,
    /// Selection blocks, each `n_states x n_outputs`. `None` picks unit
    /// vectors for single-output plants and pseudo-random blocks otherwise.
    pub selection: Option<Vec<Mat>>,
    pub structure_tol: f64,
    /// Phase of the first block of the cycled signals.
    pub phase_origin: usize,
    pub seed: u64,
}

impl RecoveryConfig {
    pub fn new(period: usize, n_states: usize) -> Self {
        Self {
            period,
            n_states,
            selection: None,
            structure_tol: DEFAULT_STRUCTURE_TOL,
            phase_origin: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StructureResidual {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Off-pattern mass of `(A, B, C)` relative to the on-pattern mass.
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveredPlant {
    pub cyclic: LtiStateSpace,
    pub periodic: PeriodicStateSpace,
    pub residual: StructureResidual,
    pub transform_cond: f64,
    pub selection: Vec<Mat>,
    /// Frobenius norm of the feedthrough dropped by strict properness.
    pub discarded_feedthrough: f64,
}

/// Unit-vector selection `F_j = e_j` (single-output plants).
pub fn unit_selection(n_states: usize) -> Vec<Mat> {
    (0..n_states)
        .map(|j| {
            let mut f = Mat::zeros(n_states, 1);
            f[(j, 0)] = 1.0;
            f
        })
        .collect()
}

fn random_selection(n_states: usize, n_outputs: usize, rng: &mut ChaCha8Rng) -> Vec<Mat> {
    (0..n_states)
        .map(|_| Mat::from_fn(n_states, n_outputs, |_, _| rng.random_range(-1.0..1.0)))
        .collect()
}

/// `T^{-1} = sum_j diag(F_j) S^{j-1} C A^{j-1}` for the reduced
/// realization. Fails with `SingularTransform` when `T^{-1}` is not
/// safely invertible.
pub fn build_recovery_transform(reduced: &LtiStateSpace, period: usize, selection: &[Mat]) -> Result<(Mat, f64)> {
    let n = reduced.order();
    if period == 0 || n % period != 0 || reduced.n_outputs() % period != 0 {
        return Err(Error::DimensionMismatch(format!(
            "order {n} and output dimension {} must be multiples of the period {period}",
            reduced.n_outputs()
        )));
    }
    let (np, l) = (n / period, reduced.n_outputs() / period);
    if selection.len() != np || selection.iter().any(|f| f.shape() != (np, l)) {
        return Err(Error::DimensionMismatch(format!("need {np} selection blocks of size {np}x{l}")));
    }
    let shift = block_shift_matrix(l, period);
    let mut t_inv = Mat::zeros(n, n);
    let mut shifted = Mat::identity(period * l, period * l);
    let mut obs_row = reduced.c.clone();
    for f in selection {
        let mut f_blk = Mat::zeros(n, period * l);
        for k in 0..period {
            f_blk.view_mut((k * np, k * l), (np, l)).copy_from(f);
        }
        t_inv += &f_blk * &shifted * &obs_row;
        shifted = &shifted * &shift;
        obs_row = &obs_row * &reduced.a;
    }
    let c = cond(&t_inv);
    if !c.is_finite() || c > MAX_TRANSFORM_COND {
        return Err(Error::SingularTransform { cond: c });
    }
    Ok((t_inv, c))
}

/// Split `m` (blocks of `rb x cb`) into on- and off-pattern Frobenius
/// mass, the pattern being the blocks `(k + offset mod M, k)`.
fn pattern_mass(m: &Mat, period: usize, rb: usize, cb: usize, offset: usize) -> (f64, f64) {
    let (mut on, mut off) = (0.0, 0.0);
    for i in 0..period {
        for k in 0..period {
            let mass = m.view((i * rb, k * cb), (rb, cb)).norm_squared();
            if i == (k + offset) % period {
                on += mass;
            } else {
                off += mass;
            }
        }
    }
    (on, off)
}

fn ratio(on: f64, off: f64) -> f64 {
    if on > 0.0 {
        (off / on).sqrt()
    } else if off > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Transform into block-cyclic form and read off the periodic matrices.
pub fn recover_lptv(reduced: &LtiStateSpace, cfg: &RecoveryConfig) -> Result<RecoveredPlant> {
    let m = cfg.period;
    let np = cfg.n_states;
    if reduced.order() != m * np {
        return Err(Error::DimensionMismatch(format!(
            "reduced order {} differs from period x plant order = {}",
            reduced.order(),
            m * np
        )));
    }
    let l = reduced.n_outputs() / m.max(1);
    let q = reduced.n_inputs() / m.max(1);

    let (selection, t_inv, transform_cond) = match &cfg.selection {
        Some(f) => {
            let (t, c) = build_recovery_transform(reduced, m, f)?;
            (f.clone(), t, c)
        }
        None if l == 1 => {
            let f = unit_selection(np);
            let (t, c) = build_recovery_transform(reduced, m, &f)?;
            (f, t, c)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut last = Error::SingularTransform { cond: f64::INFINITY };
            let mut found = None;
            for attempt in 0..MAX_SELECTION_ATTEMPTS {
                let f = random_selection(np, l, &mut rng);
                match build_recovery_transform(reduced, m, &f) {
                    Ok((t, c)) => {
                        found = Some((f, t, c));
                        break;
                    }
                    Err(e @ Error::SingularTransform { .. }) => {
                        log::debug!("selection attempt {} rejected: {e}", attempt + 1);
                        last = e;
                    }
                    Err(e) => return Err(e),
                }
            }
            found.ok_or(last)?
        }
    };

    let t = solve(&t_inv, &Mat::identity(m * np, m * np))?;
    let cyclic = LtiStateSpace::new(&t_inv * &reduced.a * &t, &t_inv * &reduced.b, &reduced.c * &t, reduced.d.clone())?;

    let (a_on, a_off) = pattern_mass(&cyclic.a, m, np, np, 1);
    let (b_on, b_off) = pattern_mass(&cyclic.b, m, np, q, 1);
    let (c_on, c_off) = pattern_mass(&cyclic.c, m, l, np, 0);
    let (d_on, d_off) = pattern_mass(&cyclic.d, m, l, q, 0);
    let residual = StructureResidual {
        a: ratio(a_on, a_off),
        b: ratio(b_on, b_off),
        c: ratio(c_on, c_off),
        d: ratio(d_on, d_off),
        total: ratio(a_on + b_on + c_on, a_off + b_off + c_off),
    };
    if residual.total > cfg.structure_tol {
        return Err(Error::StructureResidualExceeded { residual: residual.total, tol: cfg.structure_tol });
    }

    // Block k of the cycled state belongs to phase k + phase_origin.
    let phase = |k: usize| (k + cfg.phase_origin) % m;
    let mut a = vec![Mat::zeros(np, np); m];
    let mut b = vec![Mat::zeros(np, q); m];
    let mut c = vec![Mat::zeros(l, np); m];
    for k in 0..m {
        let next = (k + 1) % m;
        a[phase(k)] = cyclic.a.view((next * np, k * np), (np, np)).into_owned();
        b[phase(k)] = cyclic.b.view((next * np, k * q), (np, q)).into_owned();
        c[phase(k)] = cyclic.c.view((k * l, k * np), (l, np)).into_owned();
    }
    let discarded_feedthrough = cyclic.d.norm();
    if discarded_feedthrough > 0.0 {
        log::info!("recovered feedthrough set to zero (discarded mass {discarded_feedthrough:.3e})");
    }
    let periodic = PeriodicStateSpace::strictly_proper(a, b, c)?;
    Ok(RecoveredPlant { cyclic, periodic, residual, transform_cond, selection, discarded_feedthrough })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::{build_augmented, cycled_closed_loop};
    use crate::extraction::extract_plant;
    use crate::linalg::block_diag;
    use crate::markov::{markov_parameters, max_markov_distance};
    use crate::presets;
    use crate::reduction::{reduce_to_plant_order, ReductionConfig};

    fn pipeline(p: &presets::Preset) -> LtiStateSpace {
        let ex = extract_plant(&cycled_closed_loop(&build_augmented(&p.plant, &p.controller, None).unwrap()))
            .unwrap()
            .with_zero_feedthrough();
        reduce_to_plant_order(&ex, &ReductionConfig::new(p.period() * p.n_p)).unwrap().sys
    }

    #[test]
    fn canonical_cyclic_form_gives_identity_transform() {
        let p = presets::example1();
        let sys = p.plant.cyclic_reformulate();
        let (t_inv, c) = build_recovery_transform(&sys, 3, &unit_selection(2)).unwrap();
        assert!((t_inv - Mat::identity(6, 6)).amax() < 1e-15);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_term_sum_for_second_order_siso() {
        let p = presets::example1();
        let sys = p.plant.cyclic_reformulate();
        let s = block_shift_matrix(1, 3);
        let f1 = block_diag(&vec![Mat::from_row_slice(2, 1, &[1.0, 0.0]); 3]);
        let f2 = block_diag(&vec![Mat::from_row_slice(2, 1, &[0.0, 1.0]); 3]);
        let expected = &f1 * &sys.c + &f2 * &s * &sys.c * &sys.a;
        let (t_inv, _) = build_recovery_transform(&sys, 3, &unit_selection(2)).unwrap();
        assert!((t_inv - expected).amax() < 1e-15);
    }

    #[test]
    fn rank_deficient_selection_is_singular() {
        let sys = presets::example1().plant.cyclic_reformulate();
        let f = vec![Mat::from_row_slice(2, 1, &[1.0, 0.0]); 2];
        assert!(matches!(build_recovery_transform(&sys, 3, &f), Err(Error::SingularTransform { .. })));
    }

    #[test]
    fn noise_free_example1_round_trip() {
        let p = presets::example1();
        let rec = recover_lptv(&pipeline(&p), &RecoveryConfig::new(3, 2)).unwrap();
        let truth = p.plant.cyclic_reformulate();
        let err = max_markov_distance(
            &markov_parameters(&rec.periodic.cyclic_reformulate(), 16),
            &markov_parameters(&truth, 16),
        );
        assert!(err < 1e-10, "{err}");
        assert!(rec.residual.total < 1e-10, "{:?}", rec.residual);
        for k in 0..3 {
            assert!((rec.periodic.c(k) - p.plant.c(k)).amax() < 1e-12);
            assert!((rec.periodic.a(k) - p.plant.a(k)).amax() < 1e-9);
            assert!((rec.periodic.b(k) - p.plant.b(k)).amax() < 1e-9);
        }
    }

    #[test]
    fn unstable_example2_round_trip() {
        let p = presets::example2();
        let rec = recover_lptv(&pipeline(&p), &RecoveryConfig::new(3, 2)).unwrap();
        for k in 0..3 {
            assert!((rec.periodic.a(k) - p.plant.a(k)).amax() < 1e-9, "{k}");
        }
    }

    #[test]
    fn mimo_example3_round_trip() {
        let p = presets::example3();
        let rec = recover_lptv(&pipeline(&p), &RecoveryConfig::new(3, p.n_p)).unwrap();
        let err = max_markov_distance(
            &markov_parameters(&rec.periodic.cyclic_reformulate(), 16),
            &markov_parameters(&p.plant.cyclic_reformulate(), 16),
        );
        assert!(err < 1e-9, "{err}");
        assert!(rec.transform_cond.is_finite());
    }

    #[test]
    fn phase_origin_rotates_readout() {
        let p = presets::example1();
        let sys = p.plant.cyclic_reformulate();
        let mut cfg = RecoveryConfig::new(3, 2);
        cfg.phase_origin = 1;
        let rec = recover_lptv(&sys, &cfg).unwrap();
        assert!((rec.periodic.a(1) - p.plant.a(0)).amax() < 1e-14);
    }

    #[test]
    fn off_pattern_mass_is_reported() {
        let p = presets::example1();
        let mut sys = p.plant.cyclic_reformulate();
        sys.b[(0, 0)] += 1e-3;
        let err = recover_lptv(&sys, &RecoveryConfig::new(3, 2)).unwrap_err();
        assert!(matches!(err, Error::StructureResidualExceeded { .. }));
    }
}
