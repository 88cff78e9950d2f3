//! Random instances and residual checks shared by the property suite and
//! the acceptance target. Every check returns the residual it measured so
//! callers can compare against their own tolerance.
#![allow(dead_code)]

use lptv_ident::closed_loop::{build_augmented, cycled_closed_loop, SharedARealization};
use lptv_ident::extraction::{extract_plant, extract_plant_general, verify_cascade_cancellation};
use lptv_ident::linalg::{cond, eigenvalues, multiset_distance, spectral_radius, Complex64, Mat};
use lptv_ident::markov::{check_shifted_sparsity, convolve_markov, cycled_markov_from_periodic, markov_parameters, max_markov_distance};
use lptv_ident::recovery::{recover_lptv, RecoveryConfig};
use lptv_ident::reduction::{reduce_to_plant_order, ReductionConfig};
use lptv_ident::simulate::{simulate_lptv, simulate_lti, Disturbances};
use lptv_ident::{cycle_signal, uncycle_signal, CycledSignal, PeriodicStateSpace, SignalRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_PERIOD: usize = 5;
pub const MAX_STATES: usize = 4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix rescaled to spectral norm `norm`.
fn with_norm(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> Mat {
    let a = uniform(rng, n, n);
    let s = a.norm().max(1e-3);
    a * (norm / s)
}

/// `I + 0.3 X`, well conditioned by construction for small `n`.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    loop {
        let t = Mat::identity(n, n) + uniform(rng, n, n) * (0.3 / (n as f64).sqrt());
        if cond(&t) < 10.0 {
            return t;
        }
    }
}

/// Random strictly proper periodic system with `‖A_k‖_F = a_norm`.
pub fn random_periodic(rng: &mut ChaCha8Rng, m: usize, n: usize, n_in: usize, n_out: usize, a_norm: f64) -> PeriodicStateSpace {
    let a = (0..m).map(|_| with_norm(rng, n, a_norm)).collect();
    let b = (0..m).map(|_| uniform(rng, n, n_in)).collect();
    let c = (0..m).map(|_| uniform(rng, n_out, n)).collect();
    PeriodicStateSpace::strictly_proper(a, b, c).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let m = rng.random_range(1..=MAX_PERIOD);
    let n = rng.random_range(1..=MAX_STATES);
    (m, n, rng.random_range(1..=2), rng.random_range(1..=2))
}

/// A square plant and a controller of relative degree one with
/// well-conditioned `C_{c,k} B_{c,k-1}`, an internally stable loop and a
/// minimum-phase controller. Controller zeros become exactly cancelled
/// modes of the extraction; outside the unit circle they amplify roundoff
/// by `rho^h`, so such draws are rejected.
pub struct Loop {
    pub plant: PeriodicStateSpace,
    pub controller: PeriodicStateSpace,
    pub sr: SharedARealization,
}

pub fn random_loop(seed: u64) -> Loop {
    let mut r = rng(seed);
    let m = r.random_range(1..=MAX_PERIOD);
    let q = r.random_range(1..=2);
    let np = r.random_range(q.max(1)..=MAX_STATES);
    let nc = r.random_range(q..=MAX_STATES);
    loop {
        let plant = random_periodic(&mut r, m, np, q, q, 0.9);
        let controller = random_periodic(&mut r, m, nc, q, q, 0.9);
        let well_posed = (0..m as i64).all(|k| cond(&(controller.c(k) * controller.b(k - 1))) < 50.0);
        if !well_posed {
            continue;
        }
        let acl = build_augmented(&plant, &controller, None).unwrap();
        if spectral_radius(&acl.sys.monodromy()).unwrap() >= 1.0 {
            continue;
        }
        let sr = cycled_closed_loop(&acl);
        if extract_plant(&sr).unwrap().spectral_radius >= 1.0 {
            continue;
        }
        return Loop { plant, controller, sr };
    }
}

fn scale_of(sr: &SharedARealization) -> f64 {
    1.0_f64.max(sr.a.norm()).max(sr.b.norm()).max(sr.c_y.norm()).max(sr.c_u.norm())
}

/// Lifted simulation against the periodic recursion, from rest.
pub fn cyclic_equivalence(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, n, ni, no) = random_dims(&mut r);
    let p = random_periodic(&mut r, m, n, ni, no, 0.95);
    let len = r.random_range(m..=8 * m + 7);
    let u = SignalRecord::from_matrix(uniform(&mut r, len, ni)).unwrap();
    let direct = simulate_lptv(&p, &u, None, Disturbances::default()).unwrap();
    let cyc = p.cyclic_reformulate();
    let lifted = simulate_lti(&cyc, &cycle_signal(&u, m, 0).as_record(), None).unwrap();
    let cs = CycledSignal::from_samples(lifted.samples().clone(), m, 0, vec![no], 1e-12).unwrap();
    let back = uncycle_signal(&cs, 1e-12).unwrap();
    (back.samples() - direct.samples()).amax()
}

/// Distance between the cycled spectrum and the `M`-th roots of the
/// monodromy spectrum.
pub fn mth_root_spectrum(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, n, ni, no) = random_dims(&mut r);
    let p = random_periodic(&mut r, m, n, ni, no, 1.2);
    let cyc = eigenvalues(&p.cyclic_reformulate().a).unwrap();
    let roots: Vec<Complex64> = eigenvalues(&p.monodromy())
        .unwrap()
        .iter()
        .flat_map(|lam| {
            let (rad, th) = lam.to_polar();
            (0..m).map(move |j| {
                Complex64::from_polar(rad.powf(1.0 / m as f64), (th + 2.0 * std::f64::consts::PI * j as f64) / m as f64)
            })
        })
        .collect();
    multiset_distance(&cyc, &roots)
}

/// Off-pattern mass of `Š^h H(h)` for the cyclic realization and a
/// similarity-transformed copy.
pub fn shifted_sparsity(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, n, ni, no) = random_dims(&mut r);
    let p = random_periodic(&mut r, m, n, ni, no, 0.95);
    let cyc = p.cyclic_reformulate();
    let t = well_conditioned(&mut r, cyc.order());
    let moved = cyc.similarity(&t).unwrap();
    let a = check_shifted_sparsity(&cyc, m, no, 3 * m, f64::INFINITY).unwrap().max_residual();
    let b = check_shifted_sparsity(&moved, m, no, 3 * m, f64::INFINITY).unwrap().max_residual();
    a.max(b)
}

/// Periodic Markov blocks against the Markov parameters of the lift.
pub fn periodic_markov_blocks(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, n, ni, no) = random_dims(&mut r);
    let p = random_periodic(&mut r, m, n, ni, no, 0.95);
    max_markov_distance(&cycled_markov_from_periodic(&p, 3 * m), &markov_parameters(&p.cyclic_reformulate(), 3 * m))
}

/// Separate plant and controller recursions against the augmented system.
pub fn closed_loop_consistency(seed: u64) -> f64 {
    let l = random_loop(seed);
    let mut r = rng(seed ^ 0xA5A5);
    let (m, q) = (l.plant.period(), l.plant.n_outputs());
    let len = 6 * m + 5;
    let refs = uniform(&mut r, len, q);
    let acl = build_augmented(&l.plant, &l.controller, None).unwrap();
    let aug = simulate_lptv(&acl.sys, &SignalRecord::from_matrix(refs.clone()).unwrap(), None, Disturbances::default()).unwrap();
    let mut xp = Mat::zeros(l.plant.n_states(), 1);
    let mut xc = Mat::zeros(l.controller.n_states(), 1);
    let mut worst: f64 = 0.0;
    for k in 0..len {
        let ph = k as i64;
        let y = l.plant.c(ph) * &xp;
        let u = l.controller.c(ph) * &xc;
        let e = Mat::from_fn(q, 1, |j, _| refs[(k, j)]) - &y;
        for j in 0..q {
            worst = worst.max((aug.samples()[(k, j)] - y[(j, 0)]).abs());
            worst = worst.max((aug.samples()[(k, q + j)] - u[(j, 0)]).abs());
        }
        xp = l.plant.a(ph) * &xp + l.plant.b(ph) * &u;
        xc = l.controller.a(ph) * &xc + l.controller.b(ph) * e;
    }
    worst
}

/// `T_yr = P T_ur` on Markov parameters up to `3M`.
pub fn transfer_identity(seed: u64) -> f64 {
    let l = random_loop(seed);
    let h = 3 * l.plant.period();
    let p = markov_parameters(&l.plant.cyclic_reformulate(), h);
    let tur = markov_parameters(&l.sr.to_u(), h);
    let tyr = markov_parameters(&l.sr.to_y(), h);
    max_markov_distance(&convolve_markov(&p, &tur), &tyr)
}

/// Extracted plant against the true cycled plant, relative to the loop scale.
pub fn extraction_exactness(seed: u64) -> f64 {
    let l = random_loop(seed);
    let h = 3 * l.plant.period();
    let ep = extract_plant(&l.sr).unwrap();
    max_markov_distance(&markov_parameters(&ep.realization, h), &markov_parameters(&l.plant.cyclic_reformulate(), h))
        / scale_of(&l.sr)
}

/// Markov distance between extractions from similar realizations.
pub fn extraction_similarity_invariance(seed: u64) -> f64 {
    let l = random_loop(seed);
    let mut r = rng(seed ^ 0x5A5A);
    let t = well_conditioned(&mut r, l.sr.order());
    let h = 3 * l.plant.period();
    let a = extract_plant(&l.sr).unwrap();
    let b = extract_plant(&l.sr.similarity(&t).unwrap()).unwrap();
    max_markov_distance(&markov_parameters(&a.realization, h), &markov_parameters(&b.realization, h))
}

/// Largest of the zero-block norms of the cascade after the change of
/// coordinates, relative to its scale.
pub fn cascade_zero_block(seed: u64) -> f64 {
    let l = random_loop(seed);
    let rep = verify_cascade_cancellation(&l.sr, 3 * l.plant.period(), 1e-10).unwrap();
    rep.lower_input_norm.max(rep.block_diagonal_residual) / rep.scale
}

/// Extraction, reduction and recovery on an exact loop: Markov distance
/// of the recovered plant's lift from the true cycled plant.
pub fn round_trip_recovery(seed: u64) -> f64 {
    let l = random_loop(seed);
    let (m, np) = (l.plant.period(), l.plant.n_states());
    let ep = extract_plant(&l.sr).unwrap();
    let reduced = reduce_to_plant_order(&ep.with_zero_feedthrough(), &ReductionConfig::new(m * np)).unwrap();
    let mut cfg = RecoveryConfig::new(m, np);
    cfg.seed = seed;
    let rec = recover_lptv(&reduced.sys, &cfg).unwrap();
    let h = 3 * m;
    max_markov_distance(
        &markov_parameters(&rec.periodic.cyclic_reformulate(), h),
        &markov_parameters(&l.plant.cyclic_reformulate(), h),
    )
}

/// Controller whose first Markov parameter vanishes at every phase while
/// `C_{c,k+1} A_{c,k} B_{c,k-1}` stays invertible.
pub fn relative_degree_two_loop(seed: u64) -> Loop {
    let mut r = rng(seed);
    let m = r.random_range(1..=MAX_PERIOD);
    let q = r.random_range(1..=2);
    let np = r.random_range(q..=MAX_STATES);
    let plant = random_periodic(&mut r, m, np, q, q, 0.9);
    let nc = 2 * q;
    loop {
        let a: Vec<Mat> = (0..m).map(|_| with_norm(&mut r, nc, 0.9)).collect();
        let b: Vec<Mat> = (0..m)
            .map(|_| {
                let mut b = Mat::zeros(nc, q);
                b.rows_mut(q, q).copy_from(&uniform(&mut r, q, q));
                b
            })
            .collect();
        let c: Vec<Mat> = (0..m)
            .map(|_| {
                let mut c = Mat::zeros(q, nc);
                c.columns_mut(0, q).copy_from(&uniform(&mut r, q, q));
                c
            })
            .collect();
        let ok = (0..m).all(|k| {
            let km1 = (k + m - 1) % m;
            cond(&(&c[(k + 1) % m] * &a[k] * &b[km1])) < 50.0
        });
        if !ok {
            continue;
        }
        let controller = PeriodicStateSpace::strictly_proper(a, b, c).unwrap();
        let sr = cycled_closed_loop(&build_augmented(&plant, &controller, None).unwrap());
        return Loop { plant, controller, sr };
    }
}

/// Degree-two extraction against the true cycled plant.
pub fn relative_degree_two_extraction(seed: u64) -> f64 {
    let l = relative_degree_two_loop(seed);
    let h = 3 * l.plant.period();
    let ep = extract_plant_general(&l.sr, 2).unwrap();
    max_markov_distance(&markov_parameters(&ep.realization, h), &markov_parameters(&l.plant.cyclic_reformulate(), h))
}
