//! Two-wing Stern-Gerlach runs on entangled angular states.
//!
//! Each wing has its own magnet axis and setup. Joint outcomes are drawn from
//! the exact bipartite pointer mixture, and each wing's outcome is read off
//! its own pointer by its own partition, so the outcome at one wing is a
//! function of that wing's configuration and setting alone.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigenbasis::{
    electron_eigenfunction, electron_radial_density_sup, rotate_pair, AngularLadder, AngularState, Axis,
};
use crate::error::{Error, Result};
use crate::measurement::{assign_outcome, SupportPartition};
use crate::ode::{self, OdeOptions};
use crate::packets::{interaction_phase, GaussianPacket, SternGerlachSetup, DEFAULT_EPS_OVERLAP};
use crate::rng::{batched, per_item, subseed, SimRng};
use crate::stats::{chi_square_homogeneity, ChiSquareResult};
use crate::trajectories::{rotate_electron, Configuration};

const NORM_TOLERANCE: f64 = 1e-12;

/// Coefficients `c_{m m'}` of a two-particle angular state in the z bases,
/// row-major with rows for wing 1, both in ascending `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BipartiteRepr", into = "BipartiteRepr")]
pub struct BipartiteState {
    ladder1: AngularLadder,
    ladder2: AngularLadder,
    coeffs: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BipartiteRepr {
    j1: f64,
    j2: f64,
    /// `coeffs[m][m'] = [re, im]`.
    coeffs: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hbar: Option<f64>,
}

impl TryFrom<BipartiteRepr> for BipartiteState {
    type Error = Error;

    fn try_from(r: BipartiteRepr) -> Result<Self> {
        let hbar = r.hbar.unwrap_or(1.0);
        let l1 = AngularLadder::new(r.j1, hbar)?;
        let l2 = AngularLadder::new(r.j2, hbar)?;
        if r.coeffs.len() != l1.dim() || r.coeffs.iter().any(|row| row.len() != l2.dim()) {
            return Err(Error::InvalidParameter(format!(
                "coefficient matrix must be {}x{}",
                l1.dim(),
                l2.dim()
            )));
        }
        let flat = r.coeffs.iter().flatten().map(|&[re, im]| Complex64::new(re, im)).collect();
        Self::new(l1, l2, flat)
    }
}

impl From<BipartiteState> for BipartiteRepr {
    fn from(s: BipartiteState) -> Self {
        let d2 = s.ladder2.dim();
        Self {
            j1: s.ladder1.j(),
            j2: s.ladder2.j(),
            coeffs: s.coeffs.chunks(d2).map(|row| row.iter().map(|c| [c.re, c.im]).collect()).collect(),
            hbar: (s.ladder1.hbar() != 1.0).then_some(s.ladder1.hbar()),
        }
    }
}

impl BipartiteState {
    pub fn new(ladder1: AngularLadder, ladder2: AngularLadder, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != ladder1.dim() * ladder2.dim() {
            return Err(Error::InvalidParameter("coefficient count does not match the ladders".into()));
        }
        if ladder1.hbar() != ladder2.hbar() {
            return Err(Error::InvalidParameter("both wings must share ħ".into()));
        }
        let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidParameter(format!("state norm² is {norm}, expected 1")));
        }
        Ok(Self { ladder1, ladder2, coeffs })
    }

    pub fn normalized(ladder1: AngularLadder, ladder2: AngularLadder, coeffs: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter("cannot normalise a zero state".into()));
        }
        Self::new(ladder1, ladder2, coeffs.into_iter().map(|c| c / norm).collect())
    }

    /// `Σ_m (-1)^{j-m} |m, -m> / sqrt(2j+1)`: the singlet for `j = 1/2`.
    pub fn zero_total(j: f64) -> Result<Self> {
        let ladder = AngularLadder::new(j, 1.0)?;
        let d = ladder.dim();
        let amp = 1.0 / (d as f64).sqrt();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            // Level i has m = i - j; j - m = 2j - i.
            let sign = if (d - 1 - i) % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[i * d + (d - 1 - i)] = Complex64::new(sign * amp, 0.0);
        }
        Self::normalized(ladder.clone(), ladder, coeffs)
    }

    pub fn singlet() -> Self {
        Self::zero_total(0.5).expect("j = 1/2 is valid")
    }

    /// `a ⊗ b`, both expressed in their z bases first.
    pub fn product(a: &AngularState, b: &AngularState) -> Result<Self> {
        let a = crate::eigenbasis::rotate_state(a, &Axis::z());
        let b = crate::eigenbasis::rotate_state(b, &Axis::z());
        let coeffs = a.coeffs().iter().flat_map(|x| b.coeffs().iter().map(move |y| x * y)).collect();
        Self::normalized(a.ladder().clone(), b.ladder().clone(), coeffs)
    }

    pub fn ladders(&self) -> (&AngularLadder, &AngularLadder) {
        (&self.ladder1, &self.ladder2)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_spin_analog(&self) -> bool {
        self.ladder1.is_spin_analog() || self.ladder2.is_spin_analog()
    }

    /// Coefficients in the eigenbases along `axis1` and `axis2`.
    pub fn rotated(&self, axis1: &Axis, axis2: &Axis) -> Vec<Complex64> {
        rotate_pair(self.ladder1.two_j(), self.ladder2.two_j(), &self.coeffs, axis1, axis2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WingSetting {
    pub axis: Axis,
    #[serde(default)]
    pub setup: SternGerlachSetup,
}

impl WingSetting {
    pub fn new(axis: Axis, setup: SternGerlachSetup) -> Self {
        Self { axis, setup }
    }

    pub fn partition(&self, ladder: &AngularLadder) -> Result<SupportPartition> {
        SupportPartition::for_ladder(&self.setup, ladder, DEFAULT_EPS_OVERLAP)
    }
}

/// `P(m, m')`, row-major with rows for wing 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProbabilities {
    pub rows: usize,
    pub cols: usize,
    pub p: Vec<f64>,
}

impl JointProbabilities {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.cols + b]
    }

    pub fn marginal1(&self) -> Vec<f64> {
        self.p.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn marginal2(&self) -> Vec<f64> {
        (0..self.cols).map(|b| (0..self.rows).map(|a| self.get(a, b)).sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

pub fn joint_born_probabilities(state: &BipartiteState, s1: &WingSetting, s2: &WingSetting) -> JointProbabilities {
    JointProbabilities {
        rows: state.ladder1.dim(),
        cols: state.ladder2.dim(),
        p: state.rotated(&s1.axis, &s2.axis).iter().map(|c| c.norm_sqr()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WingOutcome {
    pub config: Configuration,
    pub branch: usize,
    pub eigenvalue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOutcome {
    pub wing1: WingOutcome,
    pub wing2: WingOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRun {
    pub ladders: (f64, f64),
    pub hbar: f64,
    pub settings: (WingSetting, WingSetting),
    pub resolved: (bool, bool),
    pub outcomes: Vec<JointOutcome>,
    /// Trajectories that ended node-trapped (trajectory mode only).
    pub node_trapped: usize,
}

impl JointRun {
    pub fn resolved(&self) -> bool {
        self.resolved.0 && self.resolved.1
    }

    /// Joint counts, row-major over wing-1 then wing-2 branch.
    pub fn counts(&self) -> Vec<u64> {
        let d1 = (2.0 * self.ladders.0).round() as usize + 1;
        let d2 = (2.0 * self.ladders.1).round() as usize + 1;
        let mut c = vec![0u64; d1 * d2];
        for o in &self.outcomes {
            c[o.wing1.branch * d2 + o.wing2.branch] += 1;
        }
        c
    }

    pub fn wing1_counts(&self) -> Vec<u64> {
        let d1 = (2.0 * self.ladders.0).round() as usize + 1;
        let mut c = vec![0u64; d1];
        for o in &self.outcomes {
            c[o.wing1.branch] += 1;
        }
        c
    }

    pub fn wing2_counts(&self) -> Vec<u64> {
        let d2 = (2.0 * self.ladders.1).round() as usize + 1;
        let mut c = vec![0u64; d2];
        for o in &self.outcomes {
            c[o.wing2.branch] += 1;
        }
        c
    }

    /// CSV with columns `sample,m1,omega1,z1,m2,omega2,z2`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "sample,m1,omega1,z1,m2,omega2,z2")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{}",
                o.wing1.branch,
                o.wing1.eigenvalue,
                o.wing1.config.z_a,
                o.wing2.branch,
                o.wing2.eigenvalue,
                o.wing2.config.z_a
            )?;
        }
        Ok(())
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Electron position from `|φ_m|²`: `r²/(2s²)` is Gamma(|m|+1) and the angle
/// is uniform.
fn draw_electron<R: Rng + ?Sized>(m: f64, s: f64, rng: &mut R) -> (f64, f64) {
    let u = Gamma::new(m.abs() + 1.0, 1.0).expect("positive shape").sample(rng);
    let r = s * (2.0 * u).sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

fn wing_outcome(config: Configuration, partition: &SupportPartition, ladder: &AngularLadder) -> WingOutcome {
    let branch = assign_outcome(config.z_a, partition);
    WingOutcome {
        config,
        branch,
        eigenvalue: ladder.eigenvalues()[branch],
    }
}

/// Samples joint outcomes from the exact bipartite pointer mixture
/// `Σ P(a, b) |χ_a(z1)|² |χ_b(z2)|²`.
pub fn sample_joint(
    state: &BipartiteState,
    s1: &WingSetting,
    s2: &WingSetting,
    n: usize,
    seed: u64,
) -> Result<JointRun> {
    let (l1, l2) = state.ladders();
    let part1 = s1.partition(l1)?;
    let part2 = s2.partition(l2)?;
    let probs = joint_born_probabilities(state, s1, s2);
    let cum = cumulative(&probs.p);
    let d2 = probs.cols;
    let outcomes = batched(seed, n, |rng: &mut SimRng, _| {
        let u = rng.random::<f64>() * cum.last().copied().unwrap_or(1.0);
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let (a, b) = (k / d2, k % d2);
        let g1: f64 = StandardNormal.sample(rng);
        let g2: f64 = StandardNormal.sample(rng);
        let (x1, y1) = draw_electron(l1.m(a), s1.setup.electron_scale, rng);
        let (x2, y2) = draw_electron(l2.m(b), s2.setup.electron_scale, rng);
        let c1 = Configuration {
            x_e: x1,
            y_e: y1,
            z_a: part1.centers[a] + part1.widths[a] * g1,
        };
        let c2 = Configuration {
            x_e: x2,
            y_e: y2,
            z_a: part2.centers[b] + part2.widths[b] * g2,
        };
        JointOutcome {
            wing1: wing_outcome(c1, &part1, l1),
            wing2: wing_outcome(c2, &part2, l2),
        }
    });
    Ok(JointRun {
        ladders: (l1.j(), l2.j()),
        hbar: l1.hbar(),
        settings: (*s1, *s2),
        resolved: (part1.resolved, part2.resolved),
        outcomes,
        node_trapped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub mismatches: usize,
    pub pass: bool,
}

/// Re-derives each wing's outcome from that wing's configuration and setting
/// alone. Any disagreement is an integrity error listing the offending samples.
pub fn factorization_audit(run: &JointRun) -> Result<AuditReport> {
    let l1 = AngularLadder::new(run.ladders.0, run.hbar)?;
    let l2 = AngularLadder::new(run.ladders.1, run.hbar)?;
    let part1 = run.settings.0.partition(&l1)?;
    let part2 = run.settings.1.partition(&l2)?;
    let check = |w: &WingOutcome, part: &SupportPartition, ladder: &AngularLadder| {
        let m = assign_outcome(w.config.z_a, part);
        m == w.branch && w.eigenvalue == ladder.eigenvalues()[m]
    };
    let bad: Vec<usize> = run
        .outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| !(check(&o.wing1, &part1, &l1) && check(&o.wing2, &part2, &l2)))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        let dump: Vec<String> = bad
            .iter()
            .take(10)
            .map(|&i| format!("sample {i}: {:?}", run.outcomes[i]))
            .collect();
        return Err(Error::Integrity(format!(
            "{} of {} samples disagree with their own wing: {}",
            bad.len(),
            run.outcomes.len(),
            dump.join("; ")
        )));
    }
    Ok(AuditReport {
        checked: run.outcomes.len(),
        mismatches: 0,
        pass: true,
    })
}

/// Maps ladder outcomes to ±1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Dichotomizer {
    /// Sign of the eigenvalue, with `ω = 0` sent to `zero`.
    Sign { zero: i8 },
    /// Explicit value per branch, ascending `m`.
    Table(Vec<i8>),
}

impl Default for Dichotomizer {
    fn default() -> Self {
        Dichotomizer::Sign { zero: 1 }
    }
}

impl Dichotomizer {
    pub fn validate(&self, ladder: &AngularLadder) -> Result<()> {
        match self {
            Dichotomizer::Sign { zero } if zero.abs() != 1 => {
                Err(Error::InvalidParameter("dichotomizer zero value must be ±1".into()))
            }
            Dichotomizer::Table(t) if t.len() != ladder.dim() || t.iter().any(|v| v.abs() != 1) => Err(
                Error::InvalidParameter(format!("dichotomizer table needs {} entries of ±1", ladder.dim())),
            ),
            _ => Ok(()),
        }
    }

    pub fn value(&self, ladder: &AngularLadder, branch: usize) -> f64 {
        match self {
            Dichotomizer::Sign { zero } => {
                let m = ladder.m(branch);
                if m > 0.0 {
                    1.0
                } else if m < 0.0 {
                    -1.0
                } else {
                    *zero as f64
                }
            }
            Dichotomizer::Table(t) => t[branch] as f64,
        }
    }
}

pub fn exact_correlation(
    state: &BipartiteState,
    s1: &WingSetting,
    s2: &WingSetting,
    dich: &Dichotomizer,
) -> f64 {
    let (l1, l2) = state.ladders();
    let p = joint_born_probabilities(state, s1, s2);
    let mut e = 0.0;
    for a in 0..p.rows {
        for b in 0..p.cols {
            e += p.get(a, b) * dich.value(l1, a) * dich.value(l2, b);
        }
    }
    e
}

/// Sampled `E` and its standard error `sqrt((1 - E²) / N)`.
pub fn sampled_correlation(run: &JointRun, dich: &Dichotomizer) -> Result<(f64, f64)> {
    let l1 = AngularLadder::new(run.ladders.0, run.hbar)?;
    let l2 = AngularLadder::new(run.ladders.1, run.hbar)?;
    let n = run.outcomes.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let sum: f64 = run
        .outcomes
        .iter()
        .map(|o| dich.value(&l1, o.wing1.branch) * dich.value(&l2, o.wing2.branch))
        .sum();
    let e = sum / n as f64;
    Ok((e, ((1.0 - e * e).max(0.0) / n as f64).sqrt()))
}

/// The four settings `a, a'` (wing 1) and `b, b'` (wing 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: WingSetting,
    pub a_prime: WingSetting,
    pub b: WingSetting,
    pub b_prime: WingSetting,
}

impl ChshSettings {
    /// All four axes in the x-z plane at the given polar angles.
    pub fn in_plane(angles: [f64; 4], setup: SternGerlachSetup) -> Self {
        let w = |t: f64| WingSetting::new(Axis::in_xz_plane(t), setup);
        Self {
            a: w(angles[0]),
            a_prime: w(angles[1]),
            b: w(angles[2]),
            b_prime: w(angles[3]),
        }
    }

    /// `(wing 1, wing 2, sign)` for the terms of `S`.
    fn terms(&self) -> [(WingSetting, WingSetting, f64); 4] {
        [
            (self.a, self.b, 1.0),
            (self.a, self.b_prime, -1.0),
            (self.a_prime, self.b, 1.0),
            (self.a_prime, self.b_prime, 1.0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    #[serde(rename = "S_exact")]
    pub s_exact: f64,
    #[serde(rename = "S_sampled")]
    pub s_sampled: f64,
    pub stderr: f64,
    pub exact_correlations: [f64; 4],
    pub sampled_correlations: [f64; 4],
    pub audit_pass: bool,
    pub resolved: bool,
}

/// `S = E(a,b) - E(a,b') + E(a',b) + E(a',b')`, exact and from `N` samples
/// per setting pair. Every run is audited.
pub fn chsh(
    state: &BipartiteState,
    settings: &ChshSettings,
    n: usize,
    seed: u64,
    dich: &Dichotomizer,
) -> Result<ChshResult> {
    let (l1, l2) = state.ladders();
    dich.validate(l1)?;
    dich.validate(l2)?;
    let mut res = ChshResult {
        s_exact: 0.0,
        s_sampled: 0.0,
        stderr: 0.0,
        exact_correlations: [0.0; 4],
        sampled_correlations: [0.0; 4],
        audit_pass: true,
        resolved: true,
    };
    let mut var = 0.0;
    for (k, (w1, w2, sign)) in settings.terms().into_iter().enumerate() {
        let exact = exact_correlation(state, &w1, &w2, dich);
        let run = sample_joint(state, &w1, &w2, n, subseed(seed, k as u64))?;
        factorization_audit(&run)?;
        let (e, se) = sampled_correlation(&run, dich)?;
        res.exact_correlations[k] = exact;
        res.sampled_correlations[k] = e;
        res.s_exact += sign * exact;
        res.s_sampled += sign * e;
        var += se * se;
        res.resolved &= run.resolved();
    }
    res.stderr = var.sqrt();
    Ok(res)
}

/// Evaluation grid over both pointer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerGrid {
    pub z1: (f64, f64),
    pub z2: (f64, f64),
    pub points: usize,
}

impl PointerGrid {
    /// Covers every branch of both wings under all the given settings to ten widths.
    pub fn covering(state: &BipartiteState, settings: &[(WingSetting, WingSetting)], points: usize) -> Result<Self> {
        let (l1, l2) = state.ladders();
        let span = |parts: Vec<SupportPartition>| {
            parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let l = p.centers.iter().zip(&p.widths).map(|(c, w)| c - 10.0 * w).fold(lo, f64::min);
                let h = p.centers.iter().zip(&p.widths).map(|(c, w)| c + 10.0 * w).fold(hi, f64::max);
                (l, h)
            })
        };
        let p1 = settings.iter().map(|(s, _)| s.partition(l1)).collect::<Result<Vec<_>>>()?;
        let p2 = settings.iter().map(|(_, s)| s.partition(l2)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            z1: span(p1),
            z2: span(p2),
            points,
        })
    }

    fn nodes(range: (f64, f64), n: usize) -> (Vec<f64>, f64) {
        let h = (range.1 - range.0) / n as f64;
        ((0..n).map(|i| range.0 + (i as f64 + 0.5) * h).collect(), h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingsDependence {
    /// Total-variation distance of the joint pointer densities.
    pub joint: f64,
    pub wing1: f64,
    pub wing2: f64,
}

fn branch_densities(setting: &WingSetting, ladder: &AngularLadder, zs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let part = setting.partition(ladder)?;
    Ok(part
        .centers
        .iter()
        .zip(&part.widths)
        .map(|(c, w)| {
            zs.iter()
                .map(|z| (-(z - c).powi(2) / (2.0 * w * w)).exp() / (w * (std::f64::consts::TAU).sqrt()))
                .collect()
        })
        .collect())
}

fn pointer_density(
    state: &BipartiteState,
    s: &(WingSetting, WingSetting),
    z1: &[f64],
    z2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (l1, l2) = state.ladders();
    let p = joint_born_probabilities(state, &s.0, &s.1);
    let n1 = branch_densities(&s.0, l1, z1)?;
    let n2 = branch_densities(&s.1, l2, z2)?;
    let mut joint = vec![0.0; z1.len() * z2.len()];
    for a in 0..p.rows {
        for b in 0..p.cols {
            let w = p.get(a, b);
            if w == 0.0 {
                continue;
            }
            for (i, x) in n1[a].iter().enumerate() {
                let row = &mut joint[i * z2.len()..(i + 1) * z2.len()];
                for (cell, y) in row.iter_mut().zip(&n2[b]) {
                    *cell += w * x * y;
                }
            }
        }
    }
    let mix = |marg: Vec<f64>, dens: &[Vec<f64>], len: usize| {
        (0..len).map(|i| marg.iter().zip(dens).map(|(m, d)| m * d[i]).sum()).collect::<Vec<f64>>()
    };
    let m1 = mix(p.marginal1(), &n1, z1.len());
    let m2 = mix(p.marginal2(), &n2, z2.len());
    Ok((joint, m1, m2))
}

/// Total-variation distances between the post-interaction pointer densities
/// under setting pairs `s` and `s_prime`, by midpoint quadrature on `grid`.
pub fn settings_dependence(
    state: &BipartiteState,
    s: &(WingSetting, WingSetting),
    s_prime: &(WingSetting, WingSetting),
    grid: &PointerGrid,
) -> Result<SettingsDependence> {
    let (z1, h1) = PointerGrid::nodes(grid.z1, grid.points);
    let (z2, h2) = PointerGrid::nodes(grid.z2, grid.points);
    let (ja, m1a, m2a) = pointer_density(state, s, &z1, &z2)?;
    let (jb, m1b, m2b) = pointer_density(state, s_prime, &z1, &z2)?;
    let tv = |a: &[f64], b: &[f64], h: f64| 0.5 * h * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(SettingsDependence {
        joint: tv(&ja, &jb, h1 * h2),
        wing1: tv(&m1a, &m1b, h1),
        wing2: tv(&m2a, &m2b, h2),
    })
}

/// χ² homogeneity of the wing-1 outcome counts between two wing-2 settings.
pub fn no_signaling(
    state: &BipartiteState,
    s1: &WingSetting,
    s2: &WingSetting,
    s2_prime: &WingSetting,
    n: usize,
    seed: u64,
) -> Result<ChiSquareResult> {
    let a = sample_joint(state, s1, s2, n, subseed(seed, 0))?;
    let b = sample_joint(state, s1, s2_prime, n, subseed(seed, 1))?;
    Ok(chi_square_homogeneity(&a.wing1_counts(), &b.wing1_counts()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellSummary {
    #[serde(rename = "S_exact")]
    pub s_exact: f64,
    #[serde(rename = "S_sampled")]
    pub s_sampled: f64,
    pub stderr: f64,
    #[serde(rename = "TV")]
    pub tv: f64,
    pub audit_pass: bool,
}

/// Joint trajectories for spin-analog pairs.
///
/// Both electrons turn during the magnets; the branch weights
/// `c_ab φ_a(x1, y1) φ_b(x2, y2)` are then frozen and the two pointers follow
/// `(ħ / m_i) Im(∂_{z_i} χ / χ)` of the two-pointer conditional wave.
pub fn sample_joint_trajectories(
    state: &BipartiteState,
    s1: &WingSetting,
    s2: &WingSetting,
    n: usize,
    seed: u64,
) -> Result<JointRun> {
    let (l1, l2) = state.ladders();
    if l1.two_j() != 1 || l2.two_j() != 1 {
        return Err(Error::InvalidParameter("trajectory joint mode supports j = 1/2 only".into()));
    }
    let (u1, u2) = (&s1.setup, &s2.setup);
    u1.validate()?;
    u2.validate()?;
    if u1.flight_time != u2.flight_time {
        return Err(Error::InvalidParameter("both wings need the same flight time".into()));
    }
    let part1 = s1.partition(l1)?;
    let part2 = s2.partition(l2)?;
    let c = state.rotated(&s1.axis, &s2.axis);
    let d2 = l2.dim();
    let packets = |setup: &SternGerlachSetup, ladder: &AngularLadder| -> Result<Vec<GaussianPacket>> {
        Ok(interaction_phase(setup, &AngularState::basis(ladder.clone(), 0)?)
            .branches
            .iter()
            .map(|b| b.packet)
            .collect())
    };
    let p1 = packets(u1, l1)?;
    let p2 = packets(u2, l2)?;

    // Rejection bound from |Ψ|² ≤ Σ_a |φ_a(x1)|² Σ_b |φ_b(x2)|².
    let proposal = |s: f64, l: &AngularLadder| s * (1.0 + l.j()).sqrt();
    let (q1, q2) = (proposal(u1.electron_scale, l1), proposal(u2.electron_scale, l2));
    let bound = |s: f64, q: f64, l: &AngularLadder| {
        (0..l.dim()).map(|i| electron_radial_density_sup(l.m(i), s, q)).sum::<f64>()
    };
    let m_bound = bound(u1.electron_scale, q1, l1) * bound(u2.electron_scale, q2, l2);
    let t_m = u1.flight_time;

    let results: Vec<Result<(JointOutcome, bool)>> = per_item(seed, n, |rng, _| {
        let gauss = |rng: &mut SimRng, q: f64| {
            let x: f64 = StandardNormal.sample(rng);
            let y: f64 = StandardNormal.sample(rng);
            (q * x, q * y)
        };
        let g_density = |(x, y): (f64, f64), q: f64| {
            (-(x * x + y * y) / (2.0 * q * q)).exp() / (std::f64::consts::TAU * q * q)
        };
        let amp = |e1: (f64, f64), e2: (f64, f64)| {
            let mut psi = Complex64::new(0.0, 0.0);
            for a in 0..l1.dim() {
                let fa = electron_eigenfunction(l1.m(a), e1.0, e1.1, u1.electron_scale);
                for b in 0..d2 {
                    let fb = electron_eigenfunction(l2.m(b), e2.0, e2.1, u2.electron_scale);
                    psi += c[a * d2 + b] * fa * fb;
                }
            }
            psi
        };
        let mut drawn = None;
        for _ in 0..1_000_000 {
            let e1 = gauss(rng, q1);
            let e2 = gauss(rng, q2);
            let g = g_density(e1, q1) * g_density(e2, q2);
            if rng.random::<f64>() * m_bound * g < amp(e1, e2).norm_sqr() {
                drawn = Some((e1, e2));
                break;
            }
        }
        let (e1, e2) = drawn.ok_or_else(|| Error::Sampler("joint electron sampler exhausted".into()))?;
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let c1 = rotate_electron(
            &Configuration { x_e: e1.0, y_e: e1.1, z_a: z1 * u1.sigma_z0 },
            u1.mu,
            u1.interaction_time,
        );
        let c2 = rotate_electron(
            &Configuration { x_e: e2.0, y_e: e2.1, z_a: z2 * u2.sigma_z0 },
            u2.mu,
            u2.interaction_time,
        );
        let f1: Vec<Complex64> = (0..l1.dim()).map(|a| electron_eigenfunction(l1.m(a), c1.x_e, c1.y_e, u1.electron_scale)).collect();
        let f2: Vec<Complex64> = (0..d2).map(|b| electron_eigenfunction(l2.m(b), c2.x_e, c2.y_e, u2.electron_scale)).collect();
        let weights: Vec<Complex64> = (0..c.len()).map(|k| c[k] * f1[k / d2] * f2[k % d2]).collect();

        let rhs = |t: f64, y: &[f64; 2]| -> Option<[f64; 2]> {
            let e1: Vec<GaussianPacket> = p1.iter().map(|p| p.evolved(t)).collect();
            let e2: Vec<GaussianPacket> = p2.iter().map(|p| p.evolved(t)).collect();
            let mut chi = Complex64::new(0.0, 0.0);
            let mut d_1 = Complex64::new(0.0, 0.0);
            let mut d_2 = Complex64::new(0.0, 0.0);
            let mut size = 0.0;
            for (k, w) in weights.iter().enumerate() {
                if *w == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let (pa, pb) = (&e1[k / d2], &e2[k % d2]);
                let v = w * pa.value(y[0]) * pb.value(y[1]);
                chi += v;
                d_1 += v * pa.log_derivative(y[0]);
                d_2 += v * pb.log_derivative(y[1]);
                size += v.norm();
            }
            if !(size > 0.0) || chi.norm() <= 1e-8 * size {
                return None;
            }
            Some([u1.hbar / u1.atom_mass * (d_1 / chi).im, u2.hbar / u2.atom_mass * (d_2 / chi).im])
        };
        let mut trapped = false;
        let (mut z_end1, mut z_end2) = (c1.z_a, c2.z_a);
        if t_m > 0.0 {
            let opts = OdeOptions {
                abs_tol: 1e-8,
                max_step: t_m / 100.0,
                min_step: 1e-12 * t_m,
            };
            match ode::integrate(rhs, 0.0, [c1.z_a, c2.z_a], t_m, &opts, |_, _| {}) {
                Ok((y, _)) => {
                    z_end1 = y[0];
                    z_end2 = y[1];
                }
                Err(_) => trapped = true,
            }
        }
        let out = JointOutcome {
            wing1: wing_outcome(Configuration { z_a: z_end1, ..c1 }, &part1, l1),
            wing2: wing_outcome(Configuration { z_a: z_end2, ..c2 }, &part2, l2),
        };
        Ok((out, trapped))
    });
    let mut outcomes = Vec::with_capacity(n);
    let mut trapped = 0;
    for r in results {
        let (o, t) = r?;
        if t {
            trapped += 1;
        } else {
            outcomes.push(o);
        }
    }
    Ok(JointRun {
        ladders: (l1.j(), l2.j()),
        hbar: l1.hbar(),
        settings: (*s1, *s2),
        resolved: (part1.resolved, part2.resolved),
        outcomes,
        node_trapped: trapped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn wing(theta: f64) -> WingSetting {
        WingSetting::new(Axis::in_xz_plane(theta), SternGerlachSetup::default())
    }

    fn random_state(j: f64, rng: &mut SimRng) -> AngularState {
        let ladder = AngularLadder::new(j, 1.0).unwrap();
        let c = (0..ladder.dim())
            .map(|_| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect();
        AngularState::normalized(ladder, c).unwrap()
    }

    #[test]
    fn singlet_coefficients() {
        let s = BipartiteState::singlet();
        let c = s.coeffs();
        assert_eq!(c[0], Complex64::new(0.0, 0.0));
        assert_eq!(c[3], Complex64::new(0.0, 0.0));
        assert!((c[1] + c[2]).norm() < 1e-15);
        assert!(s.is_spin_analog());
        let z = BipartiteState::zero_total(1.0).unwrap();
        assert!(!z.is_spin_analog());
        assert_eq!(z.coeffs().iter().filter(|c| c.norm() > 0.0).count(), 3);
    }

    #[test]
    fn singlet_equal_axes_anticorrelated() {
        let s = BipartiteState::singlet();
        for theta in [0.0, 0.7, FRAC_PI_2] {
            let p = joint_born_probabilities(&s, &wing(theta), &wing(theta));
            assert!(p.get(0, 0) < 1e-15 && p.get(1, 1) < 1e-15);
            assert!((p.get(0, 1) - 0.5).abs() < 1e-12 && (p.get(1, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn singlet_correlation_is_minus_cosine() {
        let s = BipartiteState::singlet();
        let dich = Dichotomizer::default();
        for theta in [0.0, 0.3, FRAC_PI_4, 1.9, PI] {
            let e = exact_correlation(&s, &wing(0.0), &wing(theta), &dich);
            assert!((e + theta.cos()).abs() < 1e-12);
            let p = joint_born_probabilities(&s, &wing(0.0), &wing(theta));
            let same = p.get(0, 0) + p.get(1, 1);
            assert!((same - (theta / 2.0).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn product_state_factorizes() {
        let mut rng = stream(40, 0);
        for j in [0.5, 1.0, 1.5] {
            let a = random_state(j, &mut rng);
            let b = random_state(1.0, &mut rng);
            let s = BipartiteState::product(&a, &b).unwrap();
            let w1 = WingSetting::new(Axis::from_angles(0.4, 1.1), SternGerlachSetup::default());
            let w2 = WingSetting::new(Axis::from_angles(2.0, -0.5), SternGerlachSetup::default());
            let p = joint_born_probabilities(&s, &w1, &w2);
            let (m1, m2) = (p.marginal1(), p.marginal2());
            for x in 0..p.rows {
                for y in 0..p.cols {
                    assert!((p.get(x, y) - m1[x] * m2[y]).abs() < 1e-12);
                }
            }
            assert!((p.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn audit_passes_and_catches_swaps() {
        let s = BipartiteState::singlet();
        let mut run = sample_joint(&s, &wing(0.0), &wing(0.0), 1000, 41).unwrap();
        let rep = factorization_audit(&run).unwrap();
        assert_eq!(rep.checked, 1000);
        assert!(rep.pass);
        let o = &mut run.outcomes[17];
        std::mem::swap(&mut o.wing1.branch, &mut o.wing2.branch);
        std::mem::swap(&mut o.wing1.eigenvalue, &mut o.wing2.eigenvalue);
        assert!(matches!(factorization_audit(&run), Err(Error::Integrity(_))));
        run.outcomes.clear();
        assert_eq!(factorization_audit(&run).unwrap().checked, 0);
    }

    #[test]
    fn equal_axes_perfectly_anticorrelated_samples() {
        let s = BipartiteState::singlet();
        let run = sample_joint(&s, &wing(0.3), &wing(0.3), 20_000, 42).unwrap();
        assert!(run.resolved());
        assert!(run.outcomes.iter().all(|o| o.wing1.branch != o.wing2.branch));
    }

    #[test]
    fn all_settings_equal_gives_minus_two() {
        let s = BipartiteState::singlet();
        let settings = ChshSettings::in_plane([0.5; 4], SternGerlachSetup::default());
        let r = chsh(&s, &settings, 10_000, 43, &Dichotomizer::default()).unwrap();
        assert!((r.s_exact + 2.0).abs() < 1e-12);
        assert!((r.s_sampled + 2.0).abs() <= 3.0 * r.stderr + 1e-12);
    }

    #[test]
    fn product_state_respects_bound() {
        let mut rng = stream(44, 0);
        let a = random_state(0.5, &mut rng);
        let b = random_state(0.5, &mut rng);
        let s = BipartiteState::product(&a, &b).unwrap();
        let settings = ChshSettings::in_plane([0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4], SternGerlachSetup::default());
        let r = chsh(&s, &settings, 20_000, 45, &Dichotomizer::default()).unwrap();
        assert!(r.s_exact.abs() <= 2.0 + 1e-12);
        assert!(r.s_sampled.abs() <= 2.0 + 3.0 * r.stderr);
    }

    #[test]
    fn dichotomizer_conventions() {
        let l = AngularLadder::new(1.0, 1.0).unwrap();
        let d = Dichotomizer::default();
        assert_eq!((0..3).map(|i| d.value(&l, i)).collect::<Vec<_>>(), vec![-1.0, 1.0, 1.0]);
        let d = Dichotomizer::Sign { zero: -1 };
        assert_eq!(d.value(&l, 1), -1.0);
        assert!(Dichotomizer::Table(vec![1, 1]).validate(&l).is_err());
        assert!(Dichotomizer::Sign { zero: 0 }.validate(&l).is_err());
        let json = serde_json::to_string(&Dichotomizer::default()).unwrap();
        assert_eq!(serde_json::from_str::<Dichotomizer>(&json).unwrap(), Dichotomizer::default());
    }

    #[test]
    fn settings_dependence_values() {
        let s = BipartiteState::singlet();
        let same = (wing(0.0), wing(0.0));
        let other = (wing(FRAC_PI_2), wing(0.0));
        let grid = PointerGrid::covering(&s, &[same, other], 400).unwrap();
        let zero = settings_dependence(&s, &same, &same, &grid).unwrap();
        assert_eq!(zero.joint, 0.0);
        let tv = settings_dependence(&s, &same, &other, &grid).unwrap();
        assert!(tv.joint > 0.1, "{tv:?}");
        assert!(tv.wing1 < 1e-6 && tv.wing2 < 1e-6);

        let mut rng = stream(46, 0);
        let p = BipartiteState::product(&random_state(0.5, &mut rng), &random_state(0.5, &mut rng)).unwrap();
        let a = (wing(0.3), wing(0.0));
        let b = (wing(0.3), wing(2.0));
        let grid = PointerGrid::covering(&p, &[a, b], 400).unwrap();
        let tv = settings_dependence(&p, &a, &b, &grid).unwrap();
        assert!(tv.wing1 < 1e-9, "{tv:?}");
        assert!(tv.wing2 > 0.01);
    }

    #[test]
    fn json_round_trip_and_rejects_unknown_keys() {
        let s = BipartiteState::zero_total(1.0).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: BipartiteState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"j1":0.5,"j2":0.5,"coeffs":[[[0,0],[1,0]],[[0,0],[0,0]]],"extra":1}"#;
        assert!(serde_json::from_str::<BipartiteState>(bad).is_err());
        let unnormalized = r#"{"j1":0.5,"j2":0.5,"coeffs":[[[0,0],[1,0]],[[1,0],[0,0]]]}"#;
        assert!(serde_json::from_str::<BipartiteState>(unnormalized).is_err());
    }

    #[test]
    fn csv_columns() {
        let run = sample_joint(&BipartiteState::singlet(), &wing(0.0), &wing(1.0), 3, 47).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "sample,m1,omega1,z1,m2,omega2,z2");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn trajectory_mode_requires_spin_analog() {
        let s = BipartiteState::zero_total(1.0).unwrap();
        assert!(sample_joint_trajectories(&s, &wing(0.0), &wing(0.0), 10, 48).is_err());
    }
}
