//! Angular-momentum ladders, states expanded over them, rotations between
//! measurement axes and a concrete set of orthonormal electron eigenfunctions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

const NORM_TOL: f64 = 1e-12;

/// Eigenvalues `m·ħ` for `m = -j..=j`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularLadder {
    two_j: u32,
    hbar: f64,
    eigenvalues: Vec<f64>,
}

impl AngularLadder {
    pub fn new(j: f64, hbar: f64) -> Result<Self> {
        let two_j = (2.0 * j).round();
        if !(j >= 0.0 && (2.0 * j - two_j).abs() < 1e-9 && two_j < 200.0) {
            return Err(invalid(format!("j = {j} is not a non-negative half-integer")));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(invalid("hbar must be positive"));
        }
        let two_j = two_j as u32;
        let eigenvalues = (0..=two_j)
            .map(|i| (i as f64 - two_j as f64 / 2.0) * hbar)
            .collect();
        Ok(Self {
            two_j,
            hbar,
            eigenvalues,
        })
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    /// Magnetic quantum number of level `i` (0 is the lowest).
    pub fn m(&self, i: usize) -> f64 {
        i as f64 - self.j()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Half-integer ladders stand in for spin; orbital angular momentum is integer.
    pub fn is_spin_analog(&self) -> bool {
        self.two_j % 2 == 1
    }

    pub fn mode(&self) -> &'static str {
        if self.is_spin_analog() {
            "spin-analog"
        } else {
            "orbital"
        }
    }
}

/// Unit vector giving the direction of the magnetic field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Axis {
    b: [f64; 3],
}

impl TryFrom<[f64; 3]> for Axis {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Axis::new(v)
    }
}

impl From<Axis> for [f64; 3] {
    fn from(a: Axis) -> Self {
        a.b
    }
}

impl Axis {
    /// Normalises `v`; zero or non-finite vectors are rejected.
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("axis must be a finite non-zero vector"));
        }
        Ok(Self {
            b: [v[0] / n, v[1] / n, v[2] / n],
        })
    }

    pub fn z() -> Self {
        Self { b: [0.0, 0.0, 1.0] }
    }

    pub fn x() -> Self {
        Self { b: [1.0, 0.0, 0.0] }
    }

    /// Axis at polar angle `polar` from z and azimuth `azimuth` from x.
    pub fn from_angles(polar: f64, azimuth: f64) -> Self {
        let s = polar.sin();
        Self {
            b: [s * azimuth.cos(), s * azimuth.sin(), polar.cos()],
        }
    }

    /// Axis in the x-z plane at angle `theta` from z.
    pub fn in_xz_plane(theta: f64) -> Self {
        Self::from_angles(theta, 0.0)
    }

    pub fn vector(&self) -> [f64; 3] {
        self.b
    }

    pub fn polar(&self) -> f64 {
        self.b[2].clamp(-1.0, 1.0).acos()
    }

    pub fn azimuth(&self) -> f64 {
        if self.b[0] == 0.0 && self.b[1] == 0.0 {
            0.0
        } else {
            self.b[1].atan2(self.b[0])
        }
    }

    pub fn angle_to(&self, other: &Axis) -> f64 {
        let d: f64 = self.b.iter().zip(&other.b).map(|(a, b)| a * b).sum();
        d.clamp(-1.0, 1.0).acos()
    }
}

/// Coefficients `c_m` of a state over a ladder, expressed in the eigenbasis
/// of the angular-momentum component along `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct AngularState {
    ladder: AngularLadder,
    coeffs: Vec<Complex64>,
    axis: Axis,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRepr {
    j: f64,
    coeffs: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hbar: Option<f64>,
}

impl TryFrom<StateRepr> for AngularState {
    type Error = Error;

    fn try_from(r: StateRepr) -> Result<Self> {
        let ladder = AngularLadder::new(r.j, r.hbar.unwrap_or(1.0))?;
        let coeffs = r.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        let axis = match r.axis {
            Some(v) => Axis::new(v)?,
            None => Axis::z(),
        };
        AngularState::new(ladder, coeffs)?.with_axis(axis)
    }
}

impl From<AngularState> for StateRepr {
    fn from(s: AngularState) -> Self {
        StateRepr {
            j: s.ladder.j(),
            coeffs: s.coeffs.iter().map(|c| [c.re, c.im]).collect(),
            axis: (s.axis != Axis::z()).then(|| s.axis.vector()),
            hbar: (s.ladder.hbar != 1.0).then_some(s.ladder.hbar),
        }
    }
}

fn check_norm(coeffs: &[Complex64]) -> Result<()> {
    let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(invalid(format!("coefficients have norm² {norm}, expected 1")));
    }
    Ok(())
}

impl AngularState {
    /// Coefficients in the z eigenbasis; they must already be normalised.
    pub fn new(ladder: AngularLadder, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != ladder.dim() {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                ladder.dim(),
                coeffs.len()
            )));
        }
        check_norm(&coeffs)?;
        Ok(Self {
            ladder,
            coeffs,
            axis: Axis::z(),
        })
    }

    /// Normalises arbitrary non-zero coefficients.
    pub fn normalized(ladder: AngularLadder, coeffs: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("coefficients must not all vanish"));
        }
        Self::new(ladder, coeffs.into_iter().map(|c| c / norm).collect())
    }

    /// The eigenstate at ladder index `i`.
    pub fn basis(ladder: AngularLadder, i: usize) -> Result<Self> {
        if i >= ladder.dim() {
            return Err(invalid("ladder index out of range"));
        }
        let mut c = vec![Complex64::new(0.0, 0.0); ladder.dim()];
        c[i] = Complex64::new(1.0, 0.0);
        Self::new(ladder, c)
    }

    /// Reinterprets the coefficients as given in the eigenbasis along `axis`.
    pub fn with_axis(mut self, axis: Axis) -> Result<Self> {
        self.axis = axis;
        Ok(self)
    }

    pub fn ladder(&self) -> &AngularLadder {
        &self.ladder
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Multiplies every coefficient by `e^{i alpha}`.
    pub fn with_global_phase(&self, alpha: f64) -> Self {
        let p = Complex64::from_polar(1.0, alpha);
        Self {
            coeffs: self.coeffs.iter().map(|c| c * p).collect(),
            ..self.clone()
        }
    }

    pub fn mean_eigenvalue(&self) -> f64 {
        self.probabilities()
            .iter()
            .zip(self.ladder.eigenvalues())
            .map(|(p, w)| p * w)
            .sum()
    }
}

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Dense real matrix indexed `[row][col]` with rows and columns in ascending `m`.
pub type RealMatrix = Vec<Vec<f64>>;

/// `d^j_{m'm}(beta) = <j m'| exp(-i beta J_y) |j m>`, rows `m'`, columns `m`,
/// both in ascending order. Uses the finite sum over `k` of factorial ratios.
pub fn wigner_small_d(two_j: u32, beta: f64) -> RealMatrix {
    let dim = two_j as usize + 1;
    let (c, s) = ((beta / 2.0).cos(), (beta / 2.0).sin());
    let tj = two_j as i64;
    let mut d = vec![vec![0.0; dim]; dim];
    for (row, d_row) in d.iter_mut().enumerate() {
        // Work with 2m to stay in integers: j + m' = row, j - m' = tj - row.
        let jpmp = row as i64;
        let jmmp = tj - row as i64;
        for (col, entry) in d_row.iter_mut().enumerate() {
            let jpm = col as i64;
            let jmm = tj - col as i64;
            let mp_minus_m = jpmp - jpm;
            let pre = (factorial(jpmp) * factorial(jmmp) * factorial(jpm) * factorial(jmm)).sqrt();
            let k_lo = 0.max(-mp_minus_m);
            let k_hi = jpm.min(jmmp);
            let mut sum = 0.0;
            for k in k_lo..=k_hi {
                let sign = if (mp_minus_m + k) % 2 == 0 { 1.0 } else { -1.0 };
                let denom = factorial(jpm - k) * factorial(k) * factorial(mp_minus_m + k) * factorial(jmmp - k);
                let cpow = (tj - mp_minus_m - 2 * k) as i32;
                let spow = (mp_minus_m + 2 * k) as i32;
                sum += sign * c.powi(cpow) * s.powi(spow) / denom;
            }
            *entry = pre * sum;
        }
    }
    d
}

/// Unitary `U_{m m'} = <m| R(axis) |m'>` with `R = exp(-i phi J_z) exp(-i theta J_y)`,
/// whose columns are the eigenvectors of `J·b` in the z basis.
fn axis_unitary(two_j: u32, axis: &Axis) -> Vec<Vec<Complex64>> {
    let d = wigner_small_d(two_j, axis.polar());
    let phi = axis.azimuth();
    d.iter()
        .enumerate()
        .map(|(row, r)| {
            let m = row as f64 - two_j as f64 / 2.0;
            let ph = Complex64::from_polar(1.0, -m * phi);
            r.iter().map(|&v| ph * v).collect()
        })
        .collect()
}

/// Expresses `state` in the eigenbasis of the angular-momentum component
/// along `to_axis`.
pub fn rotate_state(state: &AngularState, to_axis: &Axis) -> AngularState {
    let two_j = state.ladder.two_j;
    let dim = state.ladder.dim();
    // Back to the z basis: c_z = U(from) c.
    let from = axis_unitary(two_j, &state.axis);
    let mut cz = vec![Complex64::new(0.0, 0.0); dim];
    for (m, out) in cz.iter_mut().enumerate() {
        for (mp, c) in state.coeffs.iter().enumerate() {
            *out += from[m][mp] * c;
        }
    }
    // Into the target basis: c_b = U(to)^† c_z.
    let to = axis_unitary(two_j, to_axis);
    let mut cb = vec![Complex64::new(0.0, 0.0); dim];
    for (mp, out) in cb.iter_mut().enumerate() {
        for (m, c) in cz.iter().enumerate() {
            *out += to[m][mp].conj() * c;
        }
    }
    AngularState {
        ladder: state.ladder.clone(),
        coeffs: cb,
        axis: *to_axis,
    }
}

/// Rotation of a two-index coefficient array into the eigenbases along
/// `axis1` (rows) and `axis2` (columns).
pub(crate) fn rotate_pair(
    two_j1: u32,
    two_j2: u32,
    coeffs: &[Complex64],
    axis1: &Axis,
    axis2: &Axis,
) -> Vec<Complex64> {
    let (d1, d2) = (two_j1 as usize + 1, two_j2 as usize + 1);
    let u1 = axis_unitary(two_j1, axis1);
    let u2 = axis_unitary(two_j2, axis2);
    // c' = U1^† C conj(U2)
    let mut tmp = vec![Complex64::new(0.0, 0.0); d1 * d2];
    for a in 0..d1 {
        for mp in 0..d2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..d1 {
                acc += u1[m][a].conj() * coeffs[m * d2 + mp];
            }
            tmp[a * d2 + mp] = acc;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); d1 * d2];
    for a in 0..d1 {
        for b in 0..d2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for mp in 0..d2 {
                acc += tmp[a * d2 + mp] * u2[mp][b].conj();
            }
            out[a * d2 + b] = acc;
        }
    }
    out
}

/// Normalisation of `r^{|m|} e^{-r²/(4s²)}` under the 2D area measure times the
/// angular factor `e^{i m θ}`.
fn electron_norm(m: f64, s: f64) -> f64 {
    let k = m.abs();
    let s2 = s * s;
    1.0 / (2.0 * std::f64::consts::PI * s2 * (2.0 * s2).powf(k) * gamma(k + 1.0)).sqrt()
}

/// `φ_m(x, y) = N_m r^{|m|} e^{i m θ} e^{-r²/(4s²)}` in the electron plane.
///
/// For half-integer `m` (spin-analog ladders) the angle is taken in `(-π, π]`;
/// only relative phases between levels enter any observable, and those are
/// single-valued.
pub fn electron_eigenfunction(m: f64, x: f64, y: f64, s: f64) -> Complex64 {
    let r2 = x * x + y * y;
    let radial = electron_norm(m, s) * r2.powf(0.5 * m.abs()) * (-r2 / (4.0 * s * s)).exp();
    if radial == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(radial, m * y.atan2(x))
}

/// `ψ0(x, y) = Σ c_m φ_m(x, y)`.
pub fn electron_wavefunction(state: &AngularState, x: f64, y: f64, s: f64) -> Complex64 {
    state
        .coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(i, c)| c * electron_eigenfunction(state.ladder.m(i), x, y, s))
        .sum()
}

pub(crate) fn electron_radial_density_sup(m: f64, s: f64, proposal_s: f64) -> f64 {
    // sup over r of |φ_m|² / g(r) with g the isotropic Gaussian of std proposal_s.
    let k = m.abs();
    let n2 = electron_norm(m, s).powi(2);
    let a = 1.0 / (2.0 * s * s) - 1.0 / (2.0 * proposal_s * proposal_s);
    let peak = if k == 0.0 { 1.0 } else { (k / (a * std::f64::consts::E)).powf(k) };
    n2 * 2.0 * std::f64::consts::PI * proposal_s * proposal_s * peak
}
