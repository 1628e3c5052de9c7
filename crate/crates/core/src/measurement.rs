//! Outcome assignment from pointer positions and Born-frequency estimation.
//!
//! The support of each branch is taken to be its Voronoi cell among the
//! branch centres at the end of free flight. Gaussians have full-line support,
//! so every estimate carries the exactly computable leakage across cells.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::eigenbasis::{electron_eigenfunction, rotate_state, AngularLadder, AngularState, Axis};
use crate::error::{Error, Result};
use crate::packets::{final_wave, PointerWave, SternGerlachSetup, DEFAULT_EPS_OVERLAP};
use crate::rng::{batched, subseed, SimRng};
use crate::stats::mean_and_stderr;
use crate::trajectories::{run_ensemble, ElectronSampler, TrajectoryOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPartition {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// Midpoints between adjacent centres, ascending.
    pub boundaries: Vec<f64>,
    /// Per cell: the largest mass any foreign branch places inside it.
    pub leakage: Vec<f64>,
    /// Per branch: its own mass outside its cell.
    pub misassignment: Vec<f64>,
    pub eps: f64,
    pub resolved: bool,
}

impl SupportPartition {
    pub fn new(centers: Vec<f64>, widths: Vec<f64>, eps: f64) -> Result<Self> {
        if centers.is_empty() || centers.len() != widths.len() {
            return Err(Error::InvalidParameter("partition needs one width per centre".into()));
        }
        if centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("branch centres must be strictly ascending".into()));
        }
        let boundaries: Vec<f64> = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut p = Self {
            centers,
            widths,
            boundaries,
            leakage: Vec::new(),
            misassignment: Vec::new(),
            eps,
            resolved: false,
        };
        let n = p.centers.len();
        p.misassignment = (0..n).map(|k| p.outside_mass(k, k)).collect();
        p.leakage = (0..n)
            .map(|cell| {
                (0..n)
                    .filter(|&k| k != cell)
                    .map(|k| p.cell_mass(k, cell))
                    .fold(0.0, f64::max)
            })
            .collect();
        p.resolved = p.leakage.iter().chain(&p.misassignment).all(|&l| l < eps);
        Ok(p)
    }

    /// Partition of the branches of `wave`, which must ascend by centre.
    pub fn from_wave(wave: &PointerWave, eps: f64) -> Result<Self> {
        Self::new(wave.centers(), wave.widths(), eps)
    }

    pub fn for_setup(setup: &SternGerlachSetup, state: &AngularState, eps: f64) -> Result<Self> {
        setup.validate()?;
        if state.ladder().dim() > 1 && (setup.interaction_time == 0.0 || setup.flight_time == 0.0) {
            return Err(Error::InvalidParameter(
                "branches coincide without interaction time and flight time".into(),
            ));
        }
        Self::from_wave(&final_wave(setup, state), eps)
    }

    /// Partition for every level of `ladder`, whatever the state.
    pub fn for_ladder(setup: &SternGerlachSetup, ladder: &AngularLadder, eps: f64) -> Result<Self> {
        Self::for_setup(setup, &AngularState::basis(ladder.clone(), 0)?, eps)
    }

    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    /// Mass of branch `k` inside cell `cell`.
    pub fn cell_mass(&self, k: usize, cell: usize) -> f64 {
        let (c, w) = (self.centers[k], self.widths[k] * std::f64::consts::SQRT_2);
        let below = |b: f64| 0.5 * erfc((c - b) / w);
        let above = |b: f64| 0.5 * erfc((b - c) / w);
        let lo = cell.checked_sub(1).map(|i| self.boundaries[i]);
        let hi = self.boundaries.get(cell).copied();
        match (lo, hi) {
            (None, None) => 1.0,
            (None, Some(h)) => below(h),
            (Some(l), None) => above(l),
            (Some(l), Some(h)) if h <= c => below(h) - below(l),
            (Some(l), Some(h)) if l >= c => above(l) - above(h),
            (Some(l), Some(h)) => 1.0 - below(l) - above(h),
        }
    }

    /// Mass of branch `k` outside cell `cell`.
    pub fn outside_mass(&self, k: usize, cell: usize) -> f64 {
        let (c, w) = (self.centers[k], self.widths[k] * std::f64::consts::SQRT_2);
        let lo = cell.checked_sub(1).map(|i| self.boundaries[i]);
        let hi = self.boundaries.get(cell).copied();
        let below = lo.map_or(0.0, |l| 0.5 * erfc((c - l) / w));
        let above = hi.map_or(0.0, |h| 0.5 * erfc((h - c) / w));
        below + above
    }

    /// Expected outcome frequencies `Σ_k |c_k|² P_k(cell_m)`.
    pub fn expected_frequencies(&self, probs: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|cell| probs.iter().enumerate().map(|(k, p)| p * self.cell_mass(k, cell)).sum())
            .collect()
    }

    /// Bound on `|E[freq_m] - |c_m|²|` from mass crossing cell `m` either way.
    pub fn bias_bounds(&self, probs: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|cell| {
                probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        if k == cell {
                            p * self.misassignment[k]
                        } else {
                            p * self.cell_mass(k, cell)
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// Index of the cell holding `z_a`; a point on a boundary goes to the lower cell.
pub fn assign_outcome(z_a: f64, partition: &SupportPartition) -> usize {
    partition.boundaries.partition_point(|&b| b < z_a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub branch: usize,
    pub eigenvalue: f64,
    pub z_a: f64,
    pub axis: Axis,
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    StaticSampling,
    Trajectories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornEstimate {
    pub method: Method,
    pub axis: Axis,
    pub eigenvalues: Vec<f64>,
    /// `|c_m|²` in the measured basis.
    pub probabilities: Vec<f64>,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    /// Binomial standard errors of the frequencies.
    pub stderr: Vec<f64>,
    /// Per-outcome bound on the bias from leakage across cells.
    pub leakage: Vec<f64>,
    /// `stderr` alone when resolved, otherwise `stderr + leakage`.
    pub error_bars: Vec<f64>,
    pub resolved: bool,
    pub node_trapped: usize,
    pub samples: usize,
}

impl BornEstimate {
    fn from_counts(
        method: Method,
        state: &AngularState,
        partition: &SupportPartition,
        counts: Vec<u64>,
        node_trapped: usize,
    ) -> Self {
        let n: u64 = counts.iter().sum();
        let nf = n.max(1) as f64;
        let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
        let stderr: Vec<f64> = frequencies.iter().map(|f| (f * (1.0 - f) / nf).sqrt()).collect();
        let probabilities = state.probabilities();
        let leakage = partition.bias_bounds(&probabilities);
        let error_bars = if partition.resolved {
            stderr.clone()
        } else {
            stderr.iter().zip(&leakage).map(|(s, l)| s + l).collect()
        };
        Self {
            method,
            axis: state.axis(),
            eigenvalues: state.ladder().eigenvalues().to_vec(),
            probabilities,
            counts,
            frequencies,
            stderr,
            leakage,
            error_bars,
            resolved: partition.resolved,
            node_trapped,
            samples: n as usize,
        }
    }

    /// Largest `|freq_m - |c_m|²|`.
    pub fn max_deviation(&self) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.probabilities)
            .map(|(f, p)| (f - p).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_outcome(&self) -> (f64, f64) {
        let n = self.samples.max(1) as f64;
        let mean: f64 = self.frequencies.iter().zip(&self.eigenvalues).map(|(f, w)| f * w).sum();
        let second: f64 = self.frequencies.iter().zip(&self.eigenvalues).map(|(f, w)| f * w * w).sum();
        let var = (second - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}

fn check_samples(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidParameter(format!("need at least {min} samples, got {n}")));
    }
    Ok(())
}

/// Draws a branch by `|c_k|²` and then `z_a` from that branch's packet.
fn draw_static(rng: &mut SimRng, cumulative: &[f64], partition: &SupportPartition) -> (usize, f64) {
    let u: f64 = rng.random::<f64>() * cumulative.last().copied().unwrap_or(1.0);
    let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
    let g: f64 = StandardNormal.sample(rng);
    (k, partition.centers[k] + partition.widths[k] * g)
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Individual outcomes with the pointer drawn from the exact mixture.
pub fn sample_outcomes(state: &AngularState, setup: &SternGerlachSetup, n: usize, seed: u64) -> Result<Vec<OutcomeRecord>> {
    let partition = SupportPartition::for_setup(setup, state, DEFAULT_EPS_OVERLAP)?;
    let cum = cumulative(&state.probabilities());
    let omegas = state.ladder().eigenvalues();
    let axis = state.axis();
    Ok(batched(seed, n, |rng, _| {
        let (_, z) = draw_static(rng, &cum, &partition);
        let m = assign_outcome(z, &partition);
        OutcomeRecord {
            branch: m,
            eigenvalue: omegas[m],
            z_a: z,
            axis,
            resolved: partition.resolved,
        }
    }))
}

pub fn born_estimate(
    state: &AngularState,
    setup: &SternGerlachSetup,
    n: usize,
    seed: u64,
    method: Method,
) -> Result<BornEstimate> {
    check_samples(n, 100)?;
    let partition = SupportPartition::for_setup(setup, state, DEFAULT_EPS_OVERLAP)?;
    let mut counts = vec![0u64; partition.cells()];
    let mut trapped = 0;
    match method {
        Method::StaticSampling => {
            for r in sample_outcomes(state, setup, n, seed)? {
                counts[r.branch] += 1;
            }
        }
        Method::Trajectories => {
            let ens = run_ensemble(state, setup, n, seed, &TrajectoryOptions::default())?;
            trapped = ens.node_trapped();
            for z in ens.final_pointers() {
                counts[assign_outcome(z, &partition)] += 1;
            }
        }
    }
    Ok(BornEstimate::from_counts(method, state, &partition, counts, trapped))
}

/// Rotates the state into the eigenbasis of `axis` and estimates frequencies.
pub fn measure_along_axis(
    state: &AngularState,
    axis: &Axis,
    setup: &SternGerlachSetup,
    n: usize,
    seed: u64,
) -> Result<BornEstimate> {
    born_estimate(&rotate_state(state, axis), setup, n, seed, Method::StaticSampling)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageComparison {
    pub outcome_mean: f64,
    pub outcome_stderr: f64,
    /// Ensemble mean of `∂_θ S_Q` over `|ψ0|²`.
    pub actual_mean: f64,
    pub actual_stderr: f64,
    /// Ensemble mean of `(ħ/2) ∂_θ ln |ψ0|²`, reported separately.
    pub osmotic_mean: f64,
    pub osmotic_stderr: f64,
    pub excluded_nodes: usize,
    pub resolved: bool,
}

impl AverageComparison {
    pub fn combined_sigma(&self) -> f64 {
        self.outcome_stderr.hypot(self.actual_stderr)
    }
}

/// `(∂_θ S_Q, (ħ/2) ∂_θ ln ρ)` of `ψ0` at an electron position, or `None`
/// within `node_eps` of a node.
pub fn angular_momentum_density(state: &AngularState, x: f64, y: f64, scale: f64, node_eps: f64) -> Option<(f64, f64)> {
    let ladder = state.ladder();
    let hbar = ladder.hbar();
    let mut psi = Complex64::new(0.0, 0.0);
    let mut dtheta = Complex64::new(0.0, 0.0);
    let mut size = 0.0;
    for (i, c) in state.coeffs().iter().enumerate() {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let m = ladder.m(i);
        let v = c * electron_eigenfunction(m, x, y, scale);
        psi += v;
        dtheta += v * m;
        size += v.norm();
    }
    if !(size > 0.0) || psi.norm() <= node_eps * size {
        return None;
    }
    // ∂_θ ψ = i Σ m c_m φ_m.
    let ratio = dtheta / psi;
    Some((hbar * ratio.re, -hbar * ratio.im))
}

/// Mean measured eigenvalue against the prior mean of `∂_θ S_Q`. The
/// outcome side uses stream `seed`, the prior side an independent one.
pub fn actual_vs_outcome_average(
    state: &AngularState,
    setup: &SternGerlachSetup,
    n: usize,
    seed: u64,
) -> Result<AverageComparison> {
    check_samples(n, 1000)?;
    let born = born_estimate(state, setup, n, seed, Method::StaticSampling)?;
    let (outcome_mean, outcome_stderr) = born.mean_outcome();

    let sampler = ElectronSampler::new(state, setup.electron_scale)?;
    let prior_seed = subseed(seed, 1);
    let draws: Vec<Result<Option<(f64, f64)>>> = batched(prior_seed, n, |rng, _| {
        let (x, y) = sampler.draw(state, rng)?;
        Ok(angular_momentum_density(state, x, y, setup.electron_scale, 1e-10))
    });
    let mut actual = Vec::with_capacity(n);
    let mut osmotic = Vec::with_capacity(n);
    let mut excluded = 0;
    for d in draws {
        match d? {
            Some((a, o)) => {
                actual.push(a);
                osmotic.push(o);
            }
            None => excluded += 1,
        }
    }
    let (actual_mean, actual_stderr) = mean_and_stderr(&actual);
    let (osmotic_mean, osmotic_stderr) = mean_and_stderr(&osmotic);
    Ok(AverageComparison {
        outcome_mean,
        outcome_stderr,
        actual_mean,
        actual_stderr,
        osmotic_mean,
        osmotic_stderr,
        excluded_nodes: excluded,
        resolved: born.resolved,
    })
}

/// CSV with columns `sample,z_a,m,omega`.
pub fn write_outcomes_csv<W: Write>(mut w: W, outcomes: &[OutcomeRecord], header: &[String]) -> Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "sample,z_a,m,omega")?;
    for (i, r) in outcomes.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", r.z_a, r.branch, r.eigenvalue)?;
    }
    Ok(())
}
