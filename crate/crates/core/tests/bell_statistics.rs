//! Sampling statistics of the two-wing harness.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use hvsg_core::bell::{
    chsh, factorization_audit, joint_born_probabilities, no_signaling, sample_joint, sample_joint_trajectories,
    BipartiteState, ChshSettings, Dichotomizer, WingSetting,
};
use hvsg_core::eigenbasis::{AngularLadder, AngularState, Axis};
use hvsg_core::packets::SternGerlachSetup;
use hvsg_core::rng::subseed;
use hvsg_core::stats::{chi_square_gof, chi_square_homogeneity};
use num_complex::Complex64;

fn wing(theta: f64) -> WingSetting {
    WingSetting::new(Axis::in_xz_plane(theta), SternGerlachSetup::default())
}

#[test]
fn joint_frequencies_match_probabilities() {
    let s = BipartiteState::zero_total(1.0).unwrap();
    let (w1, w2) = (wing(0.4), wing(1.3));
    let n = 100_000;
    let run = sample_joint(&s, &w1, &w2, n, 1).unwrap();
    let p = joint_born_probabilities(&s, &w1, &w2);
    for (count, prob) in run.counts().iter().zip(&p.p) {
        let f = *count as f64 / n as f64;
        let sigma = (prob * (1.0 - prob) / n as f64).sqrt();
        assert!((f - prob).abs() < 3.0 * sigma + 1e-12, "{f} vs {prob}");
    }
    assert!(factorization_audit(&run).unwrap().pass);
}

#[test]
fn product_state_wing1_ignores_wing2_setting() {
    let a = AngularState::normalized(
        AngularLadder::new(1.0, 1.0).unwrap(),
        vec![Complex64::new(0.3, 0.2), Complex64::new(0.5, 0.0), Complex64::new(0.1, -0.6)],
    )
    .unwrap();
    let b = AngularState::normalized(
        AngularLadder::new(0.5, 1.0).unwrap(),
        vec![Complex64::new(0.8, 0.0), Complex64::new(0.0, 0.6)],
    )
    .unwrap();
    let s = BipartiteState::product(&a, &b).unwrap();
    let r = no_signaling(&s, &wing(0.7), &wing(0.0), &wing(2.2), 100_000, 2).unwrap();
    assert!(r.p_value > 0.01, "{r:?}");
}

#[test]
fn entangled_marginals_ignore_remote_setting() {
    for (k, s) in [BipartiteState::singlet(), BipartiteState::zero_total(1.0).unwrap()].iter().enumerate() {
        for (i, b2) in [FRAC_PI_4, FRAC_PI_2, 2.0].into_iter().enumerate() {
            let r = no_signaling(s, &wing(0.3), &wing(0.0), &wing(b2), 100_000, subseed(3, (k * 3 + i) as u64)).unwrap();
            assert!(r.p_value > 0.01, "{k} {b2}: {r:?}");
        }
    }
}

#[test]
fn chsh_error_shrinks_as_inverse_root_n() {
    let s = BipartiteState::singlet();
    let settings = ChshSettings::in_plane([0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4], SternGerlachSetup::default());
    let sizes = [1_000usize, 10_000, 100_000];
    let reps = 16;
    let rms: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let sq: f64 = (0..reps)
                .map(|r| {
                    let res = chsh(&s, &settings, n, subseed(n as u64, r), &Dichotomizer::default()).unwrap();
                    (res.s_sampled - res.s_exact).powi(2)
                })
                .sum();
            (sq / reps as f64).sqrt()
        })
        .collect();
    // Least-squares slope of log rms against log N.
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.15, "slope {slope}, rms {rms:?}");
}

#[test]
fn trajectory_mode_agrees_with_mixture_mode() {
    let s = BipartiteState::singlet();
    let (w1, w2) = (wing(0.0), wing(FRAC_PI_2 + 0.3));
    let n = 2000;
    let traj = sample_joint_trajectories(&s, &w1, &w2, n, 4).unwrap();
    assert!(traj.node_trapped <= n / 100, "{} trapped", traj.node_trapped);
    assert!(factorization_audit(&traj).unwrap().pass);
    let mix = sample_joint(&s, &w1, &w2, n, 5).unwrap();
    let r = chi_square_homogeneity(&traj.counts(), &mix.counts());
    assert!(r.p_value > 0.01, "{r:?}");
    let p = joint_born_probabilities(&s, &w1, &w2);
    let gof = chi_square_gof(&traj.counts(), &p.p, 5.0);
    assert!(gof.p_value > 0.01, "{gof:?}");
}
