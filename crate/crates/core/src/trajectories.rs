//! Trajectories of the hidden configuration `λ = (x_e, y_e, z_a)`.
//!
//! During the impulsive interaction the pointer is frozen and the electron
//! turns rigidly at rate `g(z_a) = mu z_a` (clockwise under `H_I = -g l_z`).
//! At `t = T` the branch weights `w_m = c_m φ_m(x_e, y_e)` are frozen; during
//! free flight the electron rests and the pointer follows the effective
//! velocity `(ħ / m_a) Im(∂_z χ / χ)` of the conditional wave
//! `χ = Σ w_m φ_m(z; t_M)`.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigenbasis::{electron_eigenfunction, electron_radial_density_sup, electron_wavefunction, AngularState};
use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions};
use crate::packets::{final_wave, free_evolve, interaction_phase, PointerWave, SternGerlachSetup};
use crate::rng::per_item;
use crate::stats::{ks_one_sample, normal_cdf, KsResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub x_e: f64,
    pub y_e: f64,
    pub z_a: f64,
}

impl Configuration {
    pub fn electron_radius(&self) -> f64 {
        self.x_e.hypot(self.y_e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    /// Absolute tolerance on `z_a`.
    pub tol: f64,
    /// Multiplies the pointer velocity; 1 except in negative controls.
    pub velocity_scale: f64,
    /// Keep every accepted step instead of only the phase endpoints.
    pub record_path: bool,
    /// Relative cancellation `|χ| / Σ|w φ|` treated as a node.
    pub node_eps: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            velocity_scale: 1.0,
            record_path: false,
            node_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest `|χ| / Σ |w_m φ_m|` met at an accepted point.
    pub min_cancellation: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub node_rejections: usize,
    pub node_trapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub configs: Vec<Configuration>,
    pub frozen_weights: Vec<Complex64>,
    pub diagnostics: Diagnostics,
}

impl TrajectoryRecord {
    pub fn final_config(&self) -> Configuration {
        *self.configs.last().expect("record holds at least the start")
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "t,x_e,y_e,z_a")?;
        for (t, c) in self.times.iter().zip(&self.configs) {
            writeln!(w, "{t},{},{},{}", c.x_e, c.y_e, c.z_a)?;
        }
        Ok(())
    }
}

/// Draws `λ` from `|ψ0(x_e, y_e)|² |φ0(z_a)|²`.
///
/// The electron part uses rejection against an isotropic Gaussian that
/// dominates `Σ_m |φ_m|²` over the support of the state, which bounds
/// `|ψ0|²` by Cauchy-Schwarz.
pub fn sample_initial<R: Rng + ?Sized>(state: &AngularState, setup: &SternGerlachSetup, rng: &mut R) -> Result<Configuration> {
    let sampler = ElectronSampler::new(state, setup.electron_scale)?;
    let (x_e, y_e) = sampler.draw(state, rng)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(Configuration {
        x_e,
        y_e,
        z_a: z * setup.sigma_z0,
    })
}

pub(crate) struct ElectronSampler {
    scale: f64,
    proposal_std: f64,
    bound: f64,
}

const MAX_REJECTIONS: usize = 1_000_000;

impl ElectronSampler {
    pub(crate) fn new(state: &AngularState, scale: f64) -> Result<Self> {
        let ladder = state.ladder();
        let support: Vec<f64> = state
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(i, _)| ladder.m(i))
            .collect();
        let k_max = support.iter().fold(0.0f64, |a, m| a.max(m.abs()));
        let proposal_std = scale * (1.0 + k_max).sqrt();
        let bound: f64 = support
            .iter()
            .map(|&m| electron_radial_density_sup(m, scale, proposal_std))
            .sum();
        if !(bound.is_finite() && 1.0 / bound >= 1e-4) {
            return Err(Error::Sampler(format!("expected acceptance {} below 1e-4", 1.0 / bound)));
        }
        Ok(Self {
            scale,
            proposal_std,
            bound,
        })
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, state: &AngularState, rng: &mut R) -> Result<(f64, f64)> {
        let s2 = self.proposal_std * self.proposal_std;
        for _ in 0..MAX_REJECTIONS {
            let gx: f64 = StandardNormal.sample(rng);
            let gy: f64 = StandardNormal.sample(rng);
            let (x, y) = (gx * self.proposal_std, gy * self.proposal_std);
            let g = (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2);
            let f = electron_wavefunction(state, x, y, self.scale).norm_sqr();
            if rng.random::<f64>() * self.bound * g < f {
                return Ok((x, y));
            }
        }
        Err(Error::Sampler("rejection sampler exhausted its attempt budget".into()))
    }
}

/// `(ẋ_e, ẏ_e) = (g y_e, -g x_e)` with `g = mu z_a`.
pub fn electron_velocity(config: &Configuration, mu: f64) -> (f64, f64) {
    let g = mu * config.z_a;
    (g * config.y_e, -g * config.x_e)
}

/// Electron position after the interaction with the pointer held at `z_a`.
pub fn rotate_electron(config: &Configuration, mu: f64, duration: f64) -> Configuration {
    let angle = -mu * config.z_a * duration;
    let (s, c) = angle.sin_cos();
    Configuration {
        x_e: c * config.x_e - s * config.y_e,
        y_e: s * config.x_e + c * config.y_e,
        z_a: config.z_a,
    }
}

/// `(ħ / m_a) Im(∂_z χ / χ)` at free-flight time `t_m`, where `wave` holds the
/// conditional branches at `t_M = 0`. `None` inside the node threshold.
pub fn pointer_velocity(z_a: f64, conditional: &PointerWave, t_m: f64, node_eps: f64) -> Option<f64> {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    let mut prefactor = 0.0;
    for b in &conditional.branches {
        if b.weight == Complex64::new(0.0, 0.0) {
            continue;
        }
        let p = b.packet.evolved(t_m);
        let v = b.weight * p.value(z_a);
        den += v;
        num += v * p.log_derivative(z_a);
        scale += v.norm();
        prefactor = p.hbar / p.mass;
    }
    if !(scale > 0.0) || den.norm() <= node_eps * scale {
        return None;
    }
    Some(prefactor * (num / den).im)
}

/// Conditional branch weights `c_m φ_m(x_e, y_e)`.
pub fn conditional_weights(state: &AngularState, config: &Configuration, electron_scale: f64) -> Vec<Complex64> {
    let ladder = state.ladder();
    state
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.norm_sqr() == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                c * electron_eigenfunction(ladder.m(i), config.x_e, config.y_e, electron_scale)
            }
        })
        .collect()
}

pub fn integrate(
    config0: &Configuration,
    state: &AngularState,
    setup: &SternGerlachSetup,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord> {
    setup.validate()?;
    let t_int = setup.interaction_time;
    let after = rotate_electron(config0, setup.mu, t_int);
    let weights = conditional_weights(state, &after, setup.electron_scale);
    let conditional = interaction_phase(setup, state).with_weights(&weights);

    let mut times = vec![0.0, t_int];
    let mut configs = vec![*config0, after];
    let mut diagnostics = Diagnostics {
        min_cancellation: 1.0,
        accepted_steps: 0,
        rejected_steps: 0,
        node_rejections: 0,
        node_trapped: false,
    };
    if weights.iter().all(|w| w.norm_sqr() == 0.0) {
        diagnostics.node_trapped = true;
        return Ok(TrajectoryRecord {
            times,
            configs,
            frozen_weights: weights,
            diagnostics,
        });
    }

    let t_m = setup.flight_time;
    if t_m > 0.0 {
        let ode_opts = OdeOptions {
            abs_tol: opts.tol,
            max_step: t_m / 100.0,
            min_step: 1e-12 * t_m,
        };
        let mut min_cancel: f64 = 1.0;
        let rhs = |t: f64, y: &[f64; 1]| {
            pointer_velocity(y[0], &conditional, t, opts.node_eps).map(|v| [opts.velocity_scale * v])
        };
        let observe = |t: f64, y: &[f64; 1]| {
            let (_, cancel) = free_evolve(&conditional, t).expect("t >= 0").log_derivative(y[0]);
            min_cancel = min_cancel.min(cancel);
            if opts.record_path {
                times.push(t_int + t);
                configs.push(Configuration { z_a: y[0], ..after });
            }
        };
        match ode::integrate(rhs, 0.0, [after.z_a], t_m, &ode_opts, observe) {
            Ok((y, stats)) => {
                diagnostics.accepted_steps = stats.accepted;
                diagnostics.rejected_steps = stats.rejected;
                diagnostics.node_rejections = stats.refused;
                if !opts.record_path {
                    times.push(t_int + t_m);
                    configs.push(Configuration { z_a: y[0], ..after });
                }
            }
            Err(underflow) => {
                diagnostics.node_trapped = true;
                diagnostics.accepted_steps = underflow.stats.accepted;
                diagnostics.rejected_steps = underflow.stats.rejected;
                diagnostics.node_rejections = underflow.stats.refused;
            }
        }
        diagnostics.min_cancellation = min_cancel;
    }
    Ok(TrajectoryRecord {
        times,
        configs,
        frozen_weights: weights,
        diagnostics,
    })
}

/// Classical pointer reading `(mu / m_a) l_z T (t_M + T / 2)`, including the
/// displacement accrued inside the magnet.
pub fn classical_pointer(l_z: f64, setup: &SternGerlachSetup) -> f64 {
    let SternGerlachSetup {
        mu,
        interaction_time: t,
        flight_time: t_m,
        atom_mass: m,
        ..
    } = *setup;
    mu / m * l_z * t * t_m + 0.5 * mu / m * l_z * t * t
}

/// CDF of the exact pointer marginal `Σ |c_m|² |φ_m(z; t_M)|²`.
pub fn mixture_cdf(wave: &PointerWave) -> impl Fn(f64) -> f64 + '_ {
    move |z| {
        wave.branches
            .iter()
            .map(|b| b.weight.norm_sqr() * normal_cdf((z - b.packet.center()) / b.packet.width()))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub initial: Vec<Configuration>,
    pub records: Vec<TrajectoryRecord>,
}

impl Ensemble {
    pub fn node_trapped(&self) -> usize {
        self.records.iter().filter(|r| r.diagnostics.node_trapped).count()
    }

    /// Final pointer positions of the trajectories that completed.
    pub fn final_pointers(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| !r.diagnostics.node_trapped)
            .map(|r| r.final_config().z_a)
            .collect()
    }
}

/// `n` trajectories; member `i` draws from stream `(seed, i)`.
pub fn run_ensemble(
    state: &AngularState,
    setup: &SternGerlachSetup,
    n: usize,
    seed: u64,
    opts: &TrajectoryOptions,
) -> Result<Ensemble> {
    setup.validate()?;
    let results: Vec<Result<(Configuration, TrajectoryRecord)>> = per_item(seed, n, |rng, _| {
        let c0 = sample_initial(state, setup, rng)?;
        let rec = integrate(&c0, state, setup, opts)?;
        Ok((c0, rec))
    });
    let mut initial = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for r in results {
        let (c, rec) = r?;
        initial.push(c);
        records.push(rec);
    }
    Ok(Ensemble { initial, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub ks: f64,
    pub p_value: f64,
    pub samples: usize,
    pub node_trapped: usize,
    /// More than 1% of trajectories were node-trapped.
    pub unreliable: bool,
}

/// KS comparison of transported final pointers with the exact marginal.
pub fn equivariance_test(
    state: &AngularState,
    setup: &SternGerlachSetup,
    n: usize,
    seed: u64,
    opts: &TrajectoryOptions,
) -> Result<EquivarianceReport> {
    if n < 1000 {
        return Err(Error::InvalidParameter("equivariance test needs N >= 1000".into()));
    }
    let ensemble = run_ensemble(state, setup, n, seed, opts)?;
    let finals = ensemble.final_pointers();
    let wave = final_wave(setup, state);
    let KsResult { statistic, p_value } = ks_one_sample(&finals, mixture_cdf(&wave));
    let trapped = ensemble.node_trapped();
    Ok(EquivarianceReport {
        ks: statistic,
        p_value,
        samples: finals.len(),
        node_trapped: trapped,
        unreliable: trapped as f64 > 0.01 * n as f64,
    })
}
