//! The stochastic micro-law: exponentially distributed deviations from the
//! infinitesimal stationary action, the sign/envelope process driving them,
//! and the small algebraic identities the wave equations rely on.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Time scales of the fluctuating parameter `xi` and of `|gamma|`.
///
/// `sign(xi)` (and with it `sign(gamma)`) is redrawn every `dt`, the envelope
/// `||xi||` every `tau_xi` and `|gamma|` every `tau_gamma`. Envelope and
/// `|gamma|` are drawn log-uniformly from `range * nominal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationScales {
    pub dt: f64,
    pub tau_xi: f64,
    pub tau_gamma: f64,
    #[serde(default = "default_hierarchy")]
    pub hierarchy_factor: f64,
    #[serde(default = "one")]
    pub xi_nominal: f64,
    #[serde(default = "one")]
    pub gamma_nominal: f64,
    #[serde(default = "default_range")]
    pub range: (f64, f64),
}

fn default_hierarchy() -> f64 {
    100.0
}

fn one() -> f64 {
    1.0
}

fn default_range() -> (f64, f64) {
    (0.5, 2.0)
}

impl Default for FluctuationScales {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            tau_xi: 0.1,
            tau_gamma: 10.0,
            hierarchy_factor: default_hierarchy(),
            xi_nominal: 1.0,
            gamma_nominal: 1.0,
            range: default_range(),
        }
    }
}

impl FluctuationScales {
    pub fn new(dt: f64, tau_xi: f64, tau_gamma: f64) -> Result<Self> {
        let s = Self {
            dt,
            tau_xi,
            tau_gamma,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dt,
            self.tau_xi,
            self.tau_gamma,
            self.hierarchy_factor,
            self.xi_nominal,
            self.gamma_nominal,
            self.range.0,
            self.range.1,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("fluctuation scales must be finite and positive".into()));
        }
        if self.range.0 > self.range.1 {
            return Err(Error::Config("envelope range must be ordered".into()));
        }
        // Small relative slack so that e.g. 0.1 >= 100 * 1e-3 holds in floating point.
        let slack = 1.0 - 1e-9;
        if self.tau_xi < self.hierarchy_factor * self.dt * slack
            || self.tau_gamma < self.hierarchy_factor * self.tau_xi * slack
        {
            return Err(Error::Config(format!(
                "time scales violate tau_gamma >= {h} tau_xi >= {h}^2 dt (dt={}, tau_xi={}, tau_gamma={})",
                self.dt,
                self.tau_xi,
                self.tau_gamma,
                h = self.hierarchy_factor
            )));
        }
        Ok(())
    }

    fn steps(&self, tau: f64) -> usize {
        ((tau / self.dt).round() as usize).max(1)
    }
}

/// One draw of `dS - dA` together with the `gamma` it was drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub gamma: f64,
    pub deviation: f64,
}

impl DeviationSample {
    /// `dS` for a given stationary increment `dA`.
    pub fn increment(&self, d_a: f64) -> f64 {
        d_a + self.deviation
    }
}

/// Draws `dS - dA` from `P ∝ exp(-2 (dS - dA) / gamma)`: the magnitude is
/// exponential with mean `|gamma| / 2` and the sign follows `gamma`.
pub fn sample_deviation<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<DeviationSample> {
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(invalid("gamma must be finite and non-zero"));
    }
    let e: f64 = Exp1.sample(rng);
    Ok(DeviationSample {
        gamma,
        deviation: gamma * 0.5 * e,
    })
}

/// Draws deviations for two non-interacting subsystems sharing the global
/// `gamma`. The law depends on `dS - dA` only, so the stationary increments
/// do not enter the draw; they are accepted to make the decomposition explicit.
pub fn joint_deviation<R: Rng + ?Sized>(
    gamma: f64,
    d_a1: f64,
    d_a2: f64,
    rng: &mut R,
) -> Result<(DeviationSample, DeviationSample)> {
    if !(d_a1.is_finite() && d_a2.is_finite()) {
        return Err(invalid("action increments must be finite"));
    }
    let first = sample_deviation(gamma, rng)?;
    let second = sample_deviation(gamma, rng)?;
    Ok((first, second))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignSegment {
    pub start: f64,
    pub sign: i8,
    pub xi_norm: f64,
    pub gamma_abs: f64,
}

impl SignSegment {
    pub fn xi(&self) -> f64 {
        self.sign as f64 * self.xi_norm
    }

    pub fn gamma(&self) -> f64 {
        self.sign as f64 * self.gamma_abs
    }
}

/// Piecewise-constant realisation of `(sign(xi), ||xi||, |gamma|)`, one
/// segment per `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTrack {
    pub dt: f64,
    pub segments: Vec<SignSegment>,
}

impl SignTrack {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn fraction_positive(&self) -> f64 {
        let pos = self.segments.iter().filter(|s| s.sign > 0).count();
        pos as f64 / self.segments.len() as f64
    }

    /// Number of segment boundaries at which the sign actually changes.
    pub fn sign_flips(&self) -> usize {
        self.segments.windows(2).filter(|w| w[0].sign != w[1].sign).count()
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, nominal: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    nominal * (lo + (hi - lo) * rng.random::<f64>()).exp()
}

pub fn sample_sign_process<R: Rng + ?Sized>(
    scales: &FluctuationScales,
    duration: f64,
    rng: &mut R,
) -> Result<SignTrack> {
    scales.validate()?;
    if !(duration.is_finite() && duration >= scales.dt * (1.0 - 1e-12)) {
        return Err(invalid("duration must be at least dt"));
    }
    let n = ((duration / scales.dt) - 1e-9).ceil().max(1.0) as usize;
    let per_xi = scales.steps(scales.tau_xi);
    let per_gamma = scales.steps(scales.tau_gamma);
    let mut segments = Vec::with_capacity(n);
    let (mut xi_norm, mut gamma_abs) = (0.0, 0.0);
    for i in 0..n {
        if i % per_gamma == 0 {
            gamma_abs = log_uniform(rng, scales.gamma_nominal, scales.range);
        }
        if i % per_xi == 0 {
            xi_norm = log_uniform(rng, scales.xi_nominal, scales.range);
        }
        let sign = if rng.random::<bool>() { 1 } else { -1 };
        segments.push(SignSegment {
            start: i as f64 * scales.dt,
            sign,
            xi_norm,
            gamma_abs,
        });
    }
    Ok(SignTrack {
        dt: scales.dt,
        segments,
    })
}

/// Splits `h` into its even and odd parts in `xi`:
/// `((h(xi) + h(-xi)) / 2, (h(xi) - h(-xi)) / 2)`.
pub fn effective_average<F: Fn(f64) -> f64>(h: F, xi: f64) -> (f64, f64) {
    let (p, m) = (h(xi), h(-xi));
    (0.5 * (p + m), 0.5 * (p - m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OddProfile {
    Linear,
    Tanh,
    Sine,
}

/// `m(xi) = m0 + f(xi)` with `f` odd and `|f(xi)| <= amplitude |xi|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassFluctuation {
    pub m0: f64,
    pub amplitude: f64,
    pub profile: OddProfile,
}

impl MassFluctuation {
    pub fn new(m0: f64, amplitude: f64, profile: OddProfile) -> Result<Self> {
        if !(m0 > 0.0 && m0.is_finite() && amplitude.is_finite()) {
            return Err(invalid("mass must be positive and amplitude finite"));
        }
        Ok(Self {
            m0,
            amplitude,
            profile,
        })
    }

    pub fn perturbation(&self, xi: f64) -> f64 {
        let a = self.amplitude;
        match self.profile {
            OddProfile::Linear => a * xi,
            OddProfile::Tanh => a * xi.tanh(),
            OddProfile::Sine => a * xi.sin(),
        }
    }

    pub fn mass(&self, xi: f64) -> f64 {
        self.m0 + self.perturbation(xi)
    }

    /// Even/odd parts of `1 / m(xi)`.
    pub fn inverse_mass_average(&self, xi: f64) -> (f64, f64) {
        effective_average(|x| 1.0 / self.mass(x), xi)
    }
}

/// Checks `¼ (Ω'/Ω)² = ½ Ω''/Ω − R''/R` with `R = √Ω` on a uniform grid by
/// central differences; returns the max residual over interior points.
pub fn check_identity_fluctuation_decomposition(omega: &[f64], h: f64) -> Result<f64> {
    if omega.len() < 3 {
        return Err(invalid("need at least three grid points"));
    }
    if !(h > 0.0) {
        return Err(invalid("grid step must be positive"));
    }
    if omega.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Domain("omega must be strictly positive".into()));
    }
    let r: Vec<f64> = omega.iter().map(|w| w.sqrt()).collect();
    let mut worst: f64 = 0.0;
    for i in 1..omega.len() - 1 {
        let w = omega[i];
        let d1 = (omega[i + 1] - omega[i - 1]) / (2.0 * h);
        let d2 = (omega[i + 1] - 2.0 * w + omega[i - 1]) / (h * h);
        let r2 = (r[i + 1] - 2.0 * r[i] + r[i - 1]) / (h * h);
        let lhs = 0.25 * (d1 / w).powi(2);
        let rhs = 0.5 * d2 / w - r2 / r[i];
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::{ks_one_sample, ks_two_sample, mutual_information, pearson};

    #[test]
    fn zero_gamma_is_rejected() {
        let mut rng = stream(0, 0);
        assert!(matches!(
            sample_deviation(0.0, &mut rng),
            Err(Error::InvalidParameter(_))
        ));
        assert!(joint_deviation(0.0, 1.0, 2.0, &mut rng).is_err());
    }

    #[test]
    fn mean_deviation_is_half_gamma() {
        let mut rng = stream(11, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = sample_deviation(1.0, &mut rng).unwrap();
            assert!(s.deviation * s.gamma >= 0.0);
            sum += s.deviation.abs();
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn negative_gamma_gives_negative_deviation() {
        let mut rng = stream(12, 0);
        for _ in 0..1000 {
            let s = sample_deviation(-0.3, &mut rng).unwrap();
            assert!(s.deviation <= 0.0);
        }
    }

    #[test]
    fn classical_limit_shrinks_deviation() {
        let mut rng = stream(13, 0);
        let mut prev = f64::INFINITY;
        for g in [1e-1, 1e-3, 1e-6] {
            let mean: f64 = (0..10_000)
                .map(|_| sample_deviation(g, &mut rng).unwrap().deviation.abs())
                .sum::<f64>()
                / 10_000.0;
            assert!(mean < prev);
            assert!(mean < g);
            prev = mean;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn deviation_cdf_matches_exponential() {
        let mut rng = stream(14, 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_deviation(2.0, &mut rng).unwrap().deviation.abs())
            .collect();
        let ks = ks_one_sample(&draws, |x| 1.0 - (-2.0 * x / 2.0).exp());
        assert!(ks.statistic < 0.002, "D = {}", ks.statistic);
    }

    #[test]
    fn joint_deviations_are_independent() {
        let mut rng = stream(15, 0);
        let n = 1_000_000;
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (x, y) = joint_deviation(1.0, 0.3, -2.0, &mut rng).unwrap();
            a.push(x.deviation);
            b.push(y.deviation);
        }
        assert!(pearson(&a, &b).abs() < 0.003);
        let sum_mean = a.iter().zip(&b).map(|(x, y)| x + y).sum::<f64>() / n as f64;
        assert!((sum_mean - 1.0).abs() < 0.005, "sum mean {sum_mean}");
        // Shuffle-null comparison: pairing with a rotated copy breaks any
        // dependence without changing the marginals.
        let mut shifted = b.clone();
        shifted.rotate_left(n / 3);
        let mi = mutual_information(&a, &b, 20);
        let mi_null = mutual_information(&a, &shifted, 20);
        let floor = (19.0f64 * 19.0) / (2.0 * n as f64);
        assert!(mi < 3.0 * floor, "mi {mi} floor {floor}");
        assert!((mi - mi_null).abs() < 2.0 * floor);
    }

    #[test]
    fn marginal_ignores_other_action() {
        let mut rng = stream(16, 0);
        let a: Vec<f64> = (0..20_000)
            .map(|_| joint_deviation(1.0, 0.5, 0.0, &mut rng).unwrap().0.deviation)
            .collect();
        let b: Vec<f64> = (0..20_000)
            .map(|_| joint_deviation(1.0, 0.5, 1e3, &mut rng).unwrap().0.deviation)
            .collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
    }

    #[test]
    fn sign_process_is_unbiased() {
        let scales = FluctuationScales::default();
        let mut rng = stream(17, 0);
        let track = sample_sign_process(&scales, 1e5 * scales.dt, &mut rng).unwrap();
        assert_eq!(track.len(), 100_000);
        assert!((track.fraction_positive() - 0.5).abs() < 0.005);
    }

    #[test]
    fn single_step_track() {
        let scales = FluctuationScales::default();
        let mut rng = stream(18, 0);
        let track = sample_sign_process(&scales, scales.dt, &mut rng).unwrap();
        assert_eq!(track.len(), 1);
        assert!(sample_sign_process(&scales, 0.5 * scales.dt, &mut rng).is_err());
    }

    #[test]
    fn envelope_constant_within_tau_xi() {
        let scales = FluctuationScales::default();
        let per_xi = (scales.tau_xi / scales.dt).round() as usize;
        let mut rng = stream(19, 0);
        let track = sample_sign_process(&scales, 20.0 * scales.tau_xi, &mut rng).unwrap();
        for window in track.segments.chunks(per_xi) {
            assert!(window.iter().all(|s| s.xi_norm == window[0].xi_norm));
            assert!(window.iter().all(|s| s.gamma_abs == window[0].gamma_abs));
            // One redraw per dt; about half of them change the sign.
            assert_eq!(window.len(), per_xi);
            let flips = window.windows(2).filter(|w| w[0].sign != w[1].sign).count();
            let expected = (per_xi - 1) as f64 / 2.0;
            assert!((flips as f64 - expected).abs() < 4.0 * expected.sqrt());
        }
        for s in &track.segments {
            assert_eq!(s.gamma().signum(), s.xi().signum());
        }
        let distinct: std::collections::BTreeSet<u64> =
            track.segments.iter().map(|s| s.xi_norm.to_bits()).collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn hierarchy_is_enforced() {
        assert!(matches!(FluctuationScales::new(1e-3, 1e-2, 10.0), Err(Error::Config(_))));
        assert!(matches!(FluctuationScales::new(1e-3, 0.1, 1.0), Err(Error::Config(_))));
        assert!(FluctuationScales::new(0.0, 0.1, 10.0).is_err());
        assert!(FluctuationScales::new(1e-3, 0.1, 10.0).is_ok());
    }

    #[test]
    fn effective_average_parts() {
        let (t, d) = effective_average(|x| x.powi(3) - 2.0 * x, 0.7);
        assert_eq!(t, 0.0);
        assert!((d - (0.343 - 1.4)).abs() < 1e-15);
        let (t, d) = effective_average(|x| x.cos(), 0.3);
        assert_eq!(d, 0.0);
        assert_eq!(t, 0.3f64.cos());
        let h = |x: f64| x.exp();
        let (t, d) = effective_average(h, 0.4);
        assert!((t + d - h(0.4)).abs() < 1e-15);
        // Applying the projection to its own parts is a no-op.
        let (tt, _) = effective_average(|_| t, 0.4);
        let (_, dd) = effective_average(|x| d * x.signum(), 0.4);
        assert_eq!((tt, dd), (t, d));
    }

    #[test]
    fn inverse_mass_correction_is_second_order() {
        let mf = MassFluctuation::new(2.0, 0.5, OddProfile::Linear).unwrap();
        let err = |xi: f64| (mf.inverse_mass_average(xi).0 - 1.0 / mf.m0).abs();
        // Slope of log(err) against log(xi).
        let order = (err(1e-2) / err(1e-3)).log10();
        assert!((order - 2.0).abs() < 0.01, "order {order}");
        // Series coefficient a^2 / m0^3.
        let c = err(1e-3) / 1e-6;
        assert!((c - 0.25 / 8.0).abs() < 1e-4);
    }

    #[test]
    fn mass_profiles_are_odd_and_bounded() {
        for profile in [OddProfile::Linear, OddProfile::Tanh, OddProfile::Sine] {
            let mf = MassFluctuation::new(1.0, 0.1, profile).unwrap();
            for xi in [1e-4, 1e-2, 0.3, 1.7] {
                assert_eq!(mf.perturbation(-xi), -mf.perturbation(xi));
                assert!(mf.perturbation(xi).abs() <= 0.1 * xi + 1e-18);
            }
        }
    }

    fn grid(lo: f64, hi: f64, h: f64) -> Vec<f64> {
        let n = ((hi - lo) / h).round() as usize;
        (0..=n).map(|i| lo + i as f64 * h).collect()
    }

    #[test]
    fn identity_holds_for_gaussian() {
        let zs = grid(-3.0, 3.0, 1e-3);
        let omega: Vec<f64> = zs.iter().map(|z| (-z * z / 2.0).exp()).collect();
        let res = check_identity_fluctuation_decomposition(&omega, 1e-3).unwrap();
        assert!(res < 1e-5, "residual {res}");
        // Richardson halving: the residual is discretisation error only.
        let zs2 = grid(-3.0, 3.0, 5e-4);
        let omega2: Vec<f64> = zs2.iter().map(|z| (-z * z / 2.0).exp()).collect();
        let res2 = check_identity_fluctuation_decomposition(&omega2, 5e-4).unwrap();
        assert!(res2 < res / 3.0);
    }

    #[test]
    fn identity_is_exact_for_constant() {
        let omega = vec![2.5; 50];
        assert_eq!(check_identity_fluctuation_decomposition(&omega, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn identity_residual_is_second_order() {
        let pi = std::f64::consts::PI;
        let res = |n: usize| {
            let h = 2.0 * pi / n as f64;
            let omega: Vec<f64> = (0..=n).map(|i| (-pi + i as f64 * h).sin().exp()).collect();
            check_identity_fluctuation_decomposition(&omega, h).unwrap()
        };
        let (coarse, fine) = (res(200), res(400));
        let order = (coarse / fine).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn identity_rejects_non_positive() {
        assert!(matches!(
            check_identity_fluctuation_decomposition(&[1.0, 0.0, 1.0], 0.1),
            Err(Error::Domain(_))
        ));
    }
}
