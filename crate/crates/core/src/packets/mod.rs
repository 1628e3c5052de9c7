//! Pointer wave through the Stern-Gerlach magnet.
//!
//! The interaction is impulsive: for `0 <= t <= T` only `H_I = -g(z) l_z`
//! acts, with `g(z) = mu z`, so branch `m` picks up the phase
//! `exp(+i Δ_m z / ħ)` with `Δ_m = mu ω_m T`. Afterwards each branch evolves
//! as a free Gaussian whose centre moves to `Δ_m t_M / m_a` and whose complex
//! width is `σ0 (1 + i ħ t_M / (2 m_a σ0²))`.

pub mod grid;
pub mod madelung;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigenbasis::{AngularLadder, AngularState};
use crate::error::{domain, invalid, Result};

pub use grid::{grid_propagate, GridField, Potential, Propagation, Propagator, UniformGrid};
pub use madelung::{madelung_residuals, madelung_residuals_grid, MadelungReport};

/// Default threshold on the spatial overlap of adjacent branches.
pub const DEFAULT_EPS_OVERLAP: f64 = 1e-4;

/// Parameters of one Stern-Gerlach arm. Units default to `ħ = m_a = 1`.
/// Omitted JSON fields take the [`Default`] values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SternGerlachSetup {
    /// Coupling: `g(z) = mu z` is the angular frequency per unit eigenvalue.
    pub mu: f64,
    /// Interaction duration `T`.
    pub interaction_time: f64,
    /// Free-flight duration `t_M`.
    pub flight_time: f64,
    pub atom_mass: f64,
    pub sigma_x0: f64,
    pub sigma_z0: f64,
    pub hbar: f64,
    /// Length scale `s` of the electron eigenfunctions.
    pub electron_scale: f64,
}

impl Default for SternGerlachSetup {
    fn default() -> Self {
        Self {
            mu: 10.0,
            interaction_time: 1.0,
            flight_time: 4.0,
            atom_mass: 1.0,
            sigma_x0: 1.0,
            sigma_z0: 1.0,
            hbar: 1.0,
            electron_scale: 1.0,
        }
    }
}

impl SternGerlachSetup {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("atom_mass", self.atom_mass),
            ("sigma_x0", self.sigma_x0),
            ("sigma_z0", self.sigma_z0),
            ("hbar", self.hbar),
            ("electron_scale", self.electron_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("interaction_time", self.interaction_time), ("flight_time", self.flight_time)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `Δ = mu ω T`, the momentum imparted to the branch with eigenvalue `ω`.
    pub fn momentum_kick(&self, omega: f64) -> f64 {
        self.mu * omega * self.interaction_time
    }

    /// Branch centre at the end of free flight.
    pub fn branch_center(&self, omega: f64) -> f64 {
        self.momentum_kick(omega) * self.flight_time / self.atom_mass
    }

    pub fn with_flight_time(mut self, t: f64) -> Self {
        self.flight_time = t;
        self
    }
}

/// Free Gaussian packet
/// `φ(z, t) = (2πσ0²)^{-1/4} (1 + iα)^{-1/2}
///   exp(-(z - z0 - v t)² / (4 σ0 σ_t) + i k (z - z0 - v t / 2) + i phase0)`
/// with `v = ħ k / m`, `α = ħ t / (2 m σ0²)` and `σ_t = σ0 (1 + iα)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    /// Centre at `t = 0`.
    pub origin: f64,
    /// Wavenumber `k`.
    pub kick: f64,
    pub sigma0: f64,
    pub mass: f64,
    pub hbar: f64,
    pub time: f64,
    pub phase0: f64,
}

impl GaussianPacket {
    pub fn at_rest(sigma0: f64, mass: f64, hbar: f64) -> Self {
        Self {
            origin: 0.0,
            kick: 0.0,
            sigma0,
            mass,
            hbar,
            time: 0.0,
            phase0: 0.0,
        }
    }

    pub fn velocity(&self) -> f64 {
        self.hbar * self.kick / self.mass
    }

    pub fn center(&self) -> f64 {
        self.origin + self.velocity() * self.time
    }

    fn alpha(&self) -> f64 {
        self.hbar * self.time / (2.0 * self.mass * self.sigma0 * self.sigma0)
    }

    pub fn sigma_t(&self) -> Complex64 {
        Complex64::new(self.sigma0, self.sigma0 * self.alpha())
    }

    /// Standard deviation of `|φ|²`, equal to `|σ_t|`.
    pub fn width(&self) -> f64 {
        self.sigma_t().norm()
    }

    /// `(A, B, C)` with `ln φ(z) = -A z² + B z + C`.
    fn log_coefficients(&self) -> (Complex64, Complex64, Complex64) {
        let i = Complex64::i();
        let sigma_t = self.sigma_t();
        let a = 1.0 / (4.0 * self.sigma0 * sigma_t);
        let c = self.center();
        let ln_norm = -0.25 * (2.0 * std::f64::consts::PI * self.sigma0 * self.sigma0).ln();
        let spread = Complex64::new(1.0, self.alpha()).ln();
        let cc = ln_norm - 0.5 * spread - a * c * c
            - i * self.kick * (self.origin + 0.5 * self.velocity() * self.time)
            + i * self.phase0;
        (a, 2.0 * a * c + i * self.kick, cc)
    }

    pub fn log_value(&self, z: f64) -> Complex64 {
        let (a, b, c) = self.log_coefficients();
        -a * z * z + b * z + c
    }

    pub fn value(&self, z: f64) -> Complex64 {
        self.log_value(z).exp()
    }

    pub fn density(&self, z: f64) -> f64 {
        self.value(z).norm_sqr()
    }

    /// `∂_z φ / φ`.
    pub fn log_derivative(&self, z: f64) -> Complex64 {
        let (a, b, _) = self.log_coefficients();
        -2.0 * a * z + b
    }

    /// `(|φ|, arg φ)` with the phase continuous in `z` and `t`.
    pub fn amplitude_phase(&self, z: f64) -> (f64, f64) {
        let l = self.log_value(z);
        (l.re.exp(), l.im)
    }

    /// Packet after a further free evolution of `dt`.
    pub fn evolved(&self, dt: f64) -> Self {
        Self {
            time: self.time + dt,
            ..*self
        }
    }
}

/// `<p|q> = ∫ conj(p) q dz` in closed form.
pub fn overlap(p: &GaussianPacket, q: &GaussianPacket) -> Complex64 {
    let (ap, bp, cp) = p.log_coefficients();
    let (aq, bq, cq) = q.log_coefficients();
    let a = ap.conj() + aq;
    let b = bp.conj() + bq;
    let c = cp.conj() + cq;
    (Complex64::from(std::f64::consts::PI) / a).sqrt() * (b * b / (4.0 * a) + c).exp()
}

/// `∫ |p| |q| dz`: the overlap of the two position densities, blind to phases.
pub fn spatial_overlap(p: &GaussianPacket, q: &GaussianPacket) -> f64 {
    let (s1, s2) = (p.width(), q.width());
    let sum = s1 * s1 + s2 * s2;
    let d = p.center() - q.center();
    (2.0 * s1 * s2 / sum).sqrt() * (-d * d / (4.0 * sum)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub weight: Complex64,
    pub eigenvalue: f64,
    pub packet: GaussianPacket,
}

/// `χ(z) = Σ_m w_m φ_m(z; t_M)`, one branch per ladder level, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerWave {
    pub branches: Vec<Branch>,
    pub time: f64,
}

impl PointerWave {
    pub fn amplitude(&self, z: f64) -> Complex64 {
        self.branches.iter().map(|b| b.weight * b.packet.value(z)).sum()
    }

    /// `∂_z χ / χ`; also returns `|χ| / Σ |w_m φ_m|`, which is small near nodes.
    pub fn log_derivative(&self, z: f64) -> (Complex64, f64) {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for b in &self.branches {
            if b.weight == Complex64::new(0.0, 0.0) {
                continue;
            }
            let v = b.weight * b.packet.value(z);
            den += v;
            num += v * b.packet.log_derivative(z);
            scale += v.norm();
        }
        let cancellation = if scale > 0.0 { den.norm() / scale } else { 0.0 };
        (num / den, cancellation)
    }

    /// `|Σ_m w_m φ_m(z)|²`.
    pub fn density(&self, z: f64) -> f64 {
        self.amplitude(z).norm_sqr()
    }

    /// `Σ_m |w_m|² |φ_m(z)|²`.
    pub fn mixture_density(&self, z: f64) -> f64 {
        self.branches
            .iter()
            .map(|b| b.weight.norm_sqr() * b.packet.density(z))
            .sum()
    }

    pub fn weight_norm_sqr(&self) -> f64 {
        self.branches.iter().map(|b| b.weight.norm_sqr()).sum()
    }

    /// Same packets with new branch weights (the conditional wave).
    pub fn with_weights(&self, weights: &[Complex64]) -> Self {
        let mut out = self.clone();
        for (b, w) in out.branches.iter_mut().zip(weights) {
            b.weight = *w;
        }
        out
    }

    pub fn centers(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.packet.center()).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.packet.width()).collect()
    }

    /// The wave a further `dt` later, as a field of `z` and elapsed time.
    pub fn field(&self) -> impl Fn(f64, f64) -> Complex64 + '_ {
        move |z, dt| {
            self.branches
                .iter()
                .map(|b| b.weight * b.packet.evolved(dt).value(z))
                .sum()
        }
    }
}

/// Pointer wave just after the magnet: `φ0(z) e^{i Δ_m z / ħ}` per branch,
/// weighted by `c_m`.
pub fn interaction_phase(setup: &SternGerlachSetup, state: &AngularState) -> PointerWave {
    let ladder = state.ladder();
    let branches = state
        .coeffs()
        .iter()
        .zip(ladder.eigenvalues())
        .map(|(&c, &omega)| Branch {
            weight: c,
            eigenvalue: omega,
            packet: GaussianPacket {
                kick: setup.momentum_kick(omega) / setup.hbar,
                ..GaussianPacket::at_rest(setup.sigma_z0, setup.atom_mass, setup.hbar)
            },
        })
        .collect();
    PointerWave { branches, time: 0.0 }
}

pub fn free_evolve(wave: &PointerWave, t_m: f64) -> Result<PointerWave> {
    if !(t_m >= 0.0 && t_m.is_finite()) {
        return Err(domain(format!("free-flight time must be non-negative, got {t_m}")));
    }
    let mut out = wave.clone();
    for b in &mut out.branches {
        b.packet = b.packet.evolved(t_m);
    }
    out.time += t_m;
    Ok(out)
}

/// The pointer wave at the end of the setup's free flight.
pub fn final_wave(setup: &SternGerlachSetup, state: &AngularState) -> PointerWave {
    free_evolve(&interaction_phase(setup, state), setup.flight_time).expect("validated flight time")
}

/// `δ = (mu T t_M / m_a)(ω_1 - ω_0)`, the distance between neighbouring centres.
pub fn packet_separation(setup: &SternGerlachSetup, ladder: &AngularLadder) -> Result<f64> {
    let w = ladder.eigenvalues();
    if w.len() < 2 {
        return Err(domain("a single-level ladder has no neighbouring packets"));
    }
    Ok(setup.mu * setup.interaction_time * setup.flight_time / setup.atom_mass * (w[1] - w[0]))
}

/// Smallest adjacent centre distance over twice the largest width.
pub fn resolution_ratio(wave: &PointerWave) -> f64 {
    let c = wave.centers();
    if c.len() < 2 {
        return f64::INFINITY;
    }
    let min_gap = c.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);
    let max_width = wave.widths().into_iter().fold(0.0, f64::max);
    min_gap / (2.0 * max_width)
}

/// Every pair of adjacent branches has spatial overlap below `eps`.
pub fn is_resolved(wave: &PointerWave, eps: f64) -> bool {
    wave.branches
        .windows(2)
        .all(|w| spatial_overlap(&w[0].packet, &w[1].packet) < eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn spin(j: f64, coeffs: &[(f64, f64)]) -> AngularState {
        let l = AngularLadder::new(j, 1.0).unwrap();
        AngularState::normalized(l, coeffs.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn kicks_follow_eigenvalues() {
        let setup = SternGerlachSetup {
            mu: 1.0,
            interaction_time: 1.0,
            ..Default::default()
        };
        let wave = interaction_phase(&setup, &spin(1.0, &[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]));
        let kicks: Vec<f64> = wave.branches.iter().map(|b| b.packet.kick).collect();
        assert_eq!(kicks, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_interaction_time_gives_no_kick() {
        let setup = SternGerlachSetup {
            interaction_time: 0.0,
            ..Default::default()
        };
        let wave = interaction_phase(&setup, &spin(1.0, &[(1.0, 0.0), (0.5, 0.0), (0.2, 0.3)]));
        assert!(wave.branches.iter().all(|b| b.packet.kick == 0.0));
        let evolved = free_evolve(&wave, 3.0).unwrap();
        let c = evolved.centers();
        assert!(c.iter().all(|&x| x == c[0]));
    }

    #[test]
    fn phase_kick_leaves_density_unchanged() {
        let setup = SternGerlachSetup::default();
        let state = spin(1.0, &[(0.3, 0.2), (0.1, -0.5), (0.6, 0.0)]);
        let wave = interaction_phase(&setup, &state);
        let before = GaussianPacket::at_rest(setup.sigma_z0, setup.atom_mass, setup.hbar);
        for z in [-3.0, -0.4, 0.0, 1.2, 2.5] {
            assert!((wave.mixture_density(z) - before.density(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn free_evolution_geometry() {
        let setup = SternGerlachSetup {
            mu: 2.0,
            interaction_time: 3.0,
            flight_time: 5.0,
            ..Default::default()
        };
        let wave = final_wave(&setup, &spin(0.5, &[(1.0, 0.0), (1.0, 0.0)]));
        for b in &wave.branches {
            let expected = setup.mu * b.eigenvalue * setup.interaction_time * setup.flight_time / setup.atom_mass;
            assert!((b.packet.center() - expected).abs() < 1e-12);
            let st = b.packet.sigma_t();
            assert_eq!(st.re, setup.sigma_z0);
            assert!((st.im - setup.hbar * 5.0 / (2.0 * setup.sigma_z0)).abs() < 1e-12);
        }
        assert!(free_evolve(&wave, -1.0).is_err());
    }

    #[test]
    fn zero_flight_is_identity() {
        let setup = SternGerlachSetup::default();
        let wave = interaction_phase(&setup, &spin(0.5, &[(1.0, 0.0), (0.0, 1.0)]));
        assert_eq!(free_evolve(&wave, 0.0).unwrap(), wave);
    }

    #[test]
    fn packets_stay_normalised() {
        let mut rng = stream(3, 0);
        for _ in 0..20 {
            let p = GaussianPacket {
                origin: rng.random_range(-2.0..2.0),
                kick: rng.random_range(-3.0..3.0),
                sigma0: rng.random_range(0.3..2.0),
                mass: rng.random_range(0.5..3.0),
                hbar: 1.0,
                time: rng.random_range(0.0..4.0),
                phase0: rng.random_range(-3.0..3.0),
            };
            let (c, w) = (p.center(), p.width());
            let norm = simpson(|z| p.density(z), c - 14.0 * w, c + 14.0 * w, 4000);
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
            let ov = overlap(&p, &p);
            assert!((ov - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn overlap_closed_form_matches_quadrature_and_is_hermitian() {
        let p = GaussianPacket {
            origin: 0.3,
            kick: 1.5,
            time: 0.7,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        };
        let q = GaussianPacket {
            origin: -0.4,
            kick: -0.5,
            time: 0.7,
            phase0: 0.9,
            ..GaussianPacket::at_rest(0.8, 1.0, 1.0)
        };
        let re = simpson(|z| (p.value(z).conj() * q.value(z)).re, -15.0, 15.0, 6000);
        let im = simpson(|z| (p.value(z).conj() * q.value(z)).im, -15.0, 15.0, 6000);
        assert!((overlap(&p, &q) - Complex64::new(re, im)).norm() < 1e-10);
        assert!((overlap(&p, &q) - overlap(&q, &p).conj()).norm() < 1e-15);
    }

    #[test]
    fn far_apart_packets_do_not_overlap() {
        let p = GaussianPacket {
            time: 2.0,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        };
        let q = GaussianPacket {
            origin: 20.0 * p.width(),
            ..p
        };
        assert!(overlap(&p, &q).norm() < 1e-20);
        assert!(spatial_overlap(&p, &q) < 1e-20);
    }

    #[test]
    fn separation_formula() {
        let setup = SternGerlachSetup {
            mu: 2.0,
            interaction_time: 3.0,
            flight_time: 5.0,
            ..Default::default()
        };
        let ladder = AngularLadder::new(1.0, 1.0).unwrap();
        assert_eq!(packet_separation(&setup, &ladder).unwrap(), 30.0);
        assert_eq!(packet_separation(&setup.with_flight_time(0.0), &ladder).unwrap(), 0.0);
        let doubled = SternGerlachSetup { mu: 4.0, ..setup };
        assert_eq!(packet_separation(&doubled, &ladder).unwrap(), 60.0);
        let single = AngularLadder::new(0.0, 1.0).unwrap();
        assert!(packet_separation(&setup, &single).is_err());
    }

    #[test]
    fn densities_and_norms() {
        let setup = SternGerlachSetup::default();
        let single = final_wave(&setup, &spin(1.0, &[(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)]));
        for z in [-2.0, 0.0, 1.0] {
            assert!((single.density(z) - single.mixture_density(z)).abs() < 1e-15);
        }
        let wave = final_wave(&setup, &spin(1.0, &[(0.5, 0.1), (0.2, 0.7), (-0.3, 0.2)]));
        let total = simpson(|z| wave.mixture_density(z), -80.0, 80.0, 20_000);
        assert!((total - 1.0).abs() < 1e-9);
        assert!((wave.weight_norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_phase_changes_no_density() {
        let setup = SternGerlachSetup {
            flight_time: 0.3,
            ..Default::default()
        };
        let state = spin(0.5, &[(0.6, 0.2), (0.1, 0.7)]);
        let a = final_wave(&setup, &state);
        let b = final_wave(&setup, &state.with_global_phase(1.234));
        for z in [-1.5, -0.2, 0.4, 2.0] {
            assert!((a.density(z) - b.density(z)).abs() < 1e-14);
            assert!((a.mixture_density(z) - b.mixture_density(z)).abs() < 1e-14);
        }
    }

    #[test]
    fn resolution_grows_with_flight_time() {
        let state = spin(1.0, &[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]);
        for mu in [0.5, 2.0, 10.0] {
            for sigma in [0.5, 1.0, 2.0] {
                let setup = SternGerlachSetup {
                    mu,
                    sigma_z0: sigma,
                    ..Default::default()
                };
                // Beyond the spreading crossover t ~ 2 m σ0² / ħ.
                let t0 = 2.0 * sigma * sigma;
                let mut prev = 0.0;
                for k in 1..8 {
                    let r = resolution_ratio(&final_wave(&setup.with_flight_time(t0 * k as f64), &state));
                    assert!(r > prev);
                    prev = r;
                }
            }
        }
        let setup = SternGerlachSetup::default();
        assert!(is_resolved(&final_wave(&setup, &state), DEFAULT_EPS_OVERLAP));
        assert!(!is_resolved(&final_wave(&setup.with_flight_time(0.0), &state), DEFAULT_EPS_OVERLAP));
    }
}
