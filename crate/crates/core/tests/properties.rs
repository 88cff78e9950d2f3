mod common;

use common::*;
use lptv_ident::closed_loop::{build_augmented, check_assumptions, cycled_closed_loop};
use lptv_ident::extraction::extract_plant;
use lptv_ident::linalg::{eigenvalues, multiset_distance, numerical_rank, Complex64, Mat};
use lptv_ident::metrics::{fit_percent, max_markov_error};
use lptv_ident::presets;
use lptv_ident::recovery::{recover_lptv, RecoveryConfig};
use lptv_ident::reduction::{reduce_to_plant_order, ReductionConfig, ReductionMethod};
use lptv_ident::{PeriodicStateSpace, SignalRecord};
use proptest::prelude::*;
use rand::Rng;

fn cases() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn lifted_simulation_matches_periodic_recursion(seed in any::<u64>()) {
        let r = cyclic_equivalence(seed);
        prop_assert!(r <= 1e-12, "residual {r:e}");
    }

    #[test]
    fn cycled_spectrum_is_mth_roots_of_monodromy(seed in any::<u64>()) {
        let r = mth_root_spectrum(seed);
        prop_assert!(r <= 1e-10, "distance {r:e}");
    }

    #[test]
    fn shifted_markov_parameters_are_block_diagonal(seed in any::<u64>()) {
        let r = shifted_sparsity(seed);
        prop_assert!(r <= 1e-10, "off-pattern {r:e}");
    }

    #[test]
    fn periodic_blocks_match_lifted_markov_parameters(seed in any::<u64>()) {
        let r = periodic_markov_blocks(seed);
        prop_assert!(r <= 1e-12, "residual {r:e}");
    }

    #[test]
    fn augmented_loop_matches_separate_recursions(seed in any::<u64>()) {
        let r = closed_loop_consistency(seed);
        prop_assert!(r <= 1e-12, "residual {r:e}");
    }

    #[test]
    fn output_path_factors_through_the_plant(seed in any::<u64>()) {
        let r = transfer_identity(seed);
        prop_assert!(r <= 1e-10, "residual {r:e}");
    }

    #[test]
    fn extraction_is_exact(seed in any::<u64>()) {
        let r = extraction_exactness(seed);
        prop_assert!(r <= 1e-10, "relative residual {r:e}");
    }

    #[test]
    fn extraction_is_similarity_invariant(seed in any::<u64>()) {
        let r = extraction_similarity_invariance(seed);
        prop_assert!(r <= 1e-9, "distance {r:e}");
    }

    #[test]
    fn cascade_second_half_is_unreachable(seed in any::<u64>()) {
        let r = cascade_zero_block(seed);
        prop_assert!(r <= 1e-10, "relative zero-block norm {r:e}");
    }

    #[test]
    fn recovery_round_trip_preserves_markov_parameters(seed in any::<u64>()) {
        let r = round_trip_recovery(seed);
        prop_assert!(r <= 1e-9, "distance {r:e}");
    }

    #[test]
    fn relative_degree_two_extraction_is_exact(seed in any::<u64>()) {
        let r = relative_degree_two_extraction(seed);
        prop_assert!(r <= 1e-10, "residual {r:e}");
    }

    #[test]
    fn controller_path_singular_iff_some_phase_product_is(seed in any::<u64>(), kill in proptest::option::of(0usize..MAX_PERIOD)) {
        let l = random_loop(seed);
        let m = l.plant.period();
        let mut controller = l.controller.clone();
        if let Some(k) = kill {
            let k = k % m;
            let mut c = controller.c_all().to_vec();
            let row = c[k].row(0).into_owned();
            let last = c[k].nrows() - 1;
            if last == 0 {
                c[k].fill(0.0);
            } else {
                c[k].set_row(last, &row);
            }
            controller = PeriodicStateSpace::strictly_proper(controller.a_all().to_vec(), controller.b_all().to_vec(), c).unwrap();
        }
        let sr = cycled_closed_loop(&build_augmented(&l.plant, &controller, None).unwrap());
        let pivot = &sr.c_u * &sr.b;
        let pivot_ok = numerical_rank(&pivot, None) == pivot.nrows();
        let phases_ok = (0..m as i64).all(|k| {
            let p = controller.c(k) * controller.b(k - 1);
            numerical_rank(&p, None) == p.nrows()
        });
        prop_assert_eq!(pivot_ok, phases_ok);
        prop_assert_eq!(pivot_ok, kill.is_none());
        prop_assert_eq!(check_assumptions(&l.plant, &controller).holds(2), pivot_ok);
    }

    #[test]
    fn companion_form_plants_recover_canonical_output_rows(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.random_range(1..=MAX_PERIOD);
        let n = r.random_range(1..=3);
        let a: Vec<Mat> = (0..m)
            .map(|_| {
                let mut a = Mat::zeros(n, n);
                for i in 0..n - 1 {
                    a[(i, i + 1)] = 1.0;
                }
                for j in 0..n {
                    a[(n - 1, j)] = r.random_range(-0.5..0.5);
                }
                a
            })
            .collect();
        let b = (0..m).map(|_| uniform(&mut r, n, 1)).collect();
        let mut e1 = Mat::zeros(1, n);
        e1[(0, 0)] = 1.0;
        let plant = PeriodicStateSpace::strictly_proper(a, b, vec![e1.clone(); m]).unwrap();
        let ctrl = PeriodicStateSpace::strictly_proper(
            vec![Mat::from_element(1, 1, 0.3); m],
            vec![Mat::from_element(1, 1, 1.0); m],
            vec![Mat::from_element(1, 1, r.random_range(0.05..0.3)); m],
        ).unwrap();
        let sr = cycled_closed_loop(&build_augmented(&plant, &ctrl, None).unwrap());
        let ep = extract_plant(&sr).unwrap();
        let reduced = reduce_to_plant_order(&ep.with_zero_feedthrough(), &ReductionConfig::new(m * n));
        prop_assume!(reduced.is_ok());
        let rec = recover_lptv(&reduced.unwrap().sys, &RecoveryConfig::new(m, n)).unwrap();
        for k in 0..m as i64 {
            let err = (rec.periodic.c(k) - &e1).amax();
            prop_assert!(err <= 1e-12, "phase {k}: {err:e}");
        }
        prop_assert!(rec.residual.total <= 1e-10, "structure residual {:e}", rec.residual.total);
    }

    #[test]
    fn reduction_keeps_every_unstable_mode(seed in any::<u64>(), bt in any::<bool>()) {
        // Unstable SISO plant (first-order, period M) under a static-like
        // first-order controller: the cancelled modes sit at the origin.
        let mut r = rng(seed);
        let m = r.random_range(1..=MAX_PERIOD);
        let n = r.random_range(1..=2);
        let a_norm = r.random_range(0.8..1.6);
        let plant = random_periodic(&mut r, m, n, 1, 1, a_norm);
        let ctrl = PeriodicStateSpace::strictly_proper(
            vec![Mat::from_element(1, 1, 0.0); m],
            vec![Mat::from_element(1, 1, 1.0); m],
            vec![Mat::from_element(1, 1, r.random_range(0.2..1.0)); m],
        ).unwrap();
        let sr = cycled_closed_loop(&build_augmented(&plant, &ctrl, None).unwrap());
        let ep = extract_plant(&sr).unwrap();
        let outside = |ev: Vec<Complex64>| ev.into_iter().filter(|z| z.norm() > 1.0 + 1e-6).collect::<Vec<_>>();
        let before = outside(eigenvalues(&ep.realization.a).unwrap());
        let mut cfg = ReductionConfig::new(m * n);
        cfg.method = if bt { ReductionMethod::Bt } else { ReductionMethod::Era };
        let reduced = reduce_to_plant_order(&ep.with_zero_feedthrough(), &cfg);
        prop_assume!(reduced.is_ok());
        let reduced = reduced.unwrap();
        let after = outside(eigenvalues(&reduced.sys.a).unwrap());
        prop_assert_eq!(before.len(), after.len());
        let d = multiset_distance(&before, &after);
        prop_assert!(d <= 1e-8, "unstable modes moved by {d:e}");
        prop_assert_eq!(reduced.n_unstable, before.len());
    }

    #[test]
    fn fit_ignores_channel_order(seed in any::<u64>(), len in 5usize..80, dim in 1usize..4, perm_seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = uniform(&mut r, len, dim);
        let zh = &z + uniform(&mut r, len, dim) * 0.1;
        let mut order: Vec<usize> = (0..dim).collect();
        let mut pr = rng(perm_seed);
        for i in (1..dim).rev() {
            order.swap(i, pr.random_range(0..=i));
        }
        let permute = |m: &Mat| Mat::from_fn(len, dim, |i, j| m[(i, order[j])]);
        let a = fit_percent(&SignalRecord::from_matrix(z.clone()).unwrap(), &SignalRecord::from_matrix(zh.clone()).unwrap()).unwrap();
        let b = fit_percent(&SignalRecord::from_matrix(permute(&z)).unwrap(), &SignalRecord::from_matrix(permute(&zh)).unwrap()).unwrap();
        prop_assert!((a.mean - b.mean).abs() <= 1e-12);
        for (j, &o) in order.iter().enumerate() {
            prop_assert_eq!(b.per_channel[j], a.per_channel[o]);
        }
    }

    #[test]
    fn markov_error_ignores_state_coordinates(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, n, ni, no) = random_dims(&mut r);
        let truth = random_periodic(&mut r, m, n, ni, no, 0.9).cyclic_reformulate();
        let other = random_periodic(&mut r, m, n, ni, no, 0.9).cyclic_reformulate();
        let t1 = well_conditioned(&mut r, truth.order());
        let t2 = well_conditioned(&mut r, other.order());
        let moved_truth = truth.similarity(&t1).unwrap();
        let moved_other = other.similarity(&t2).unwrap();
        let self_err = max_markov_error(&truth, &moved_truth, 15).unwrap();
        prop_assert!(self_err <= 1e-10, "{self_err:e}");
        let base = max_markov_error(&truth, &other, 15).unwrap();
        let moved = max_markov_error(&moved_truth, &moved_other, 15).unwrap();
        prop_assert!((base - moved).abs() <= 1e-10 * base.max(1.0), "{base:e} vs {moved:e}");
    }
}

#[test]
fn example2_unstable_modes_survive_reduction() {
    let p = presets::example2();
    let sr = cycled_closed_loop(&build_augmented(&p.plant, &p.controller, None).unwrap());
    let ep = extract_plant(&sr).unwrap();
    for method in [ReductionMethod::Era, ReductionMethod::Bt] {
        let mut cfg = ReductionConfig::new(6);
        cfg.method = method;
        let red = reduce_to_plant_order(&ep.with_zero_feedthrough(), &cfg).unwrap();
        let outside = |a: &Mat| eigenvalues(a).unwrap().into_iter().filter(|z| z.norm() > 1.0).collect::<Vec<_>>();
        let before = outside(&ep.realization.a);
        let after = outside(&red.sys.a);
        assert_eq!(before.len(), 3);
        assert!(multiset_distance(&before, &after) <= 1e-8, "{method:?}");
    }
}
