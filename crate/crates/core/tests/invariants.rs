//! Property tests over the public API.

use num_complex::Complex64;
use proptest::prelude::*;

use hvsg_core::bell::{joint_born_probabilities, BipartiteState, WingSetting};
use hvsg_core::eigenbasis::{rotate_state, AngularLadder, AngularState, Axis};
use hvsg_core::measurement::{assign_outcome, born_estimate, Method, SupportPartition};
use hvsg_core::microdynamics::{effective_average, sample_deviation};
use hvsg_core::packets::{final_wave, overlap, GaussianPacket, SternGerlachSetup};
use hvsg_core::rng::stream;
use hvsg_core::trajectories::{run_ensemble, TrajectoryOptions};

fn two_j() -> impl Strategy<Value = u32> {
    1u32..=4
}

fn coeffs(dim: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
        .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn state() -> impl Strategy<Value = AngularState> {
    two_j().prop_flat_map(|tj| {
        coeffs(tj as usize + 1).prop_map(move |c| {
            AngularState::normalized(AngularLadder::new(tj as f64 / 2.0, 1.0).unwrap(), c).unwrap()
        })
    })
}

fn axis() -> impl Strategy<Value = Axis> {
    (0.0f64..std::f64::consts::PI, -3.2f64..3.2).prop_map(|(p, a)| Axis::from_angles(p, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deviation_follows_gamma_sign(gamma in prop_oneof![-5.0f64..-1e-3, 1e-3f64..5.0], seed in any::<u64>()) {
        let mut rng = stream(seed, 0);
        let d = sample_deviation(gamma, &mut rng).unwrap();
        prop_assert!(d.deviation * gamma >= 0.0);
        prop_assert_eq!(d.increment(1.5), 1.5 + d.deviation);
    }

    #[test]
    fn effective_average_splits_parity(xi in -3.0f64..3.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let h = |x: f64| a * x * x + b * x.sin() + 1.0;
        let (even, odd) = effective_average(h, xi);
        prop_assert!((even + odd - h(xi)).abs() < 1e-12);
        let (even_m, odd_m) = effective_average(h, -xi);
        prop_assert!((even - even_m).abs() < 1e-12);
        prop_assert!((odd + odd_m).abs() < 1e-12);
    }

    #[test]
    fn rotation_round_trips(s in state(), to in axis()) {
        let there = rotate_state(&s, &to);
        prop_assert!((there.norm_sqr() - 1.0).abs() < 1e-12);
        let back = rotate_state(&there, &Axis::z());
        for (x, y) in back.coeffs().iter().zip(s.coeffs()) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn overlap_is_bounded_and_hermitian(k1 in -5.0f64..5.0, k2 in -5.0f64..5.0, s1 in 0.3f64..3.0, s2 in 0.3f64..3.0, t in 0.0f64..5.0) {
        let p = GaussianPacket { kick: k1, ..GaussianPacket::at_rest(s1, 1.0, 1.0) }.evolved(t);
        let q = GaussianPacket { kick: k2, origin: 0.7, ..GaussianPacket::at_rest(s2, 1.0, 1.0) }.evolved(t);
        let pq = overlap(&p, &q);
        prop_assert!(pq.norm() <= 1.0 + 1e-12);
        prop_assert!((pq - overlap(&q, &p).conj()).norm() < 1e-12);
        prop_assert!((overlap(&p, &p) - 1.0).norm() < 1e-12);
    }

    #[test]
    fn global_phase_leaves_pointer_density(s in state(), alpha in -3.2f64..3.2, z in -60.0f64..60.0) {
        let setup = SternGerlachSetup::default();
        let a = final_wave(&setup, &s).density(z);
        let b = final_wave(&setup, &s.with_global_phase(alpha)).density(z);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn assignment_is_monotone(z1 in -80.0f64..80.0, z2 in -80.0f64..80.0, tj in two_j()) {
        let setup = SternGerlachSetup::default();
        let ladder = AngularLadder::new(tj as f64 / 2.0, 1.0).unwrap();
        let p = SupportPartition::for_ladder(&setup, &ladder, 1e-4).unwrap();
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(assign_outcome(lo, &p) <= assign_outcome(hi, &p));
        prop_assert!(assign_outcome(hi, &p) < ladder.dim());
    }

    #[test]
    fn frequencies_sum_to_one(s in state(), seed in any::<u64>()) {
        let est = born_estimate(&s, &SternGerlachSetup::default(), 500, seed, Method::StaticSampling).unwrap();
        prop_assert_eq!(est.counts.iter().sum::<u64>(), 500);
        prop_assert!((est.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_probabilities_are_a_distribution(
        tj1 in two_j(), tj2 in two_j(), seed in any::<u64>(), a1 in axis(), a2 in axis(), a2b in axis()
    ) {
        let l1 = AngularLadder::new(tj1 as f64 / 2.0, 1.0).unwrap();
        let l2 = AngularLadder::new(tj2 as f64 / 2.0, 1.0).unwrap();
        let mut rng = stream(seed, 0);
        use rand_distr::{Distribution, StandardNormal};
        let c = (0..l1.dim() * l2.dim())
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let st = BipartiteState::normalized(l1, l2, c).unwrap();
        let setup = SternGerlachSetup::default();
        let p = joint_born_probabilities(&st, &WingSetting::new(a1, setup), &WingSetting::new(a2, setup));
        prop_assert!(p.p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.total() - 1.0).abs() < 1e-12);
        // Wing-1 marginal does not depend on the wing-2 axis.
        let q = joint_born_probabilities(&st, &WingSetting::new(a1, setup), &WingSetting::new(a2b, setup));
        for (x, y) in p.marginal1().iter().zip(q.marginal1()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let setup = SternGerlachSetup::default();
    let s = AngularState::normalized(
        AngularLadder::new(0.5, 1.0).unwrap(),
        vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)],
    )
    .unwrap();
    let opts = TrajectoryOptions::default();
    let many = run_ensemble(&s, &setup, 64, 99, &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| run_ensemble(&s, &setup, 64, 99, &opts)).unwrap();
    assert_eq!(many, one);
    let est_many = born_estimate(&s, &setup, 20_000, 5, Method::StaticSampling).unwrap();
    let est_one = pool.install(|| born_estimate(&s, &setup, 20_000, 5, Method::StaticSampling)).unwrap();
    assert_eq!(est_many, est_one);
}
