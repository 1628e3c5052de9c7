//! Split-step spectral propagation on a periodic 1D grid, plus the CSV and
//! binary field formats.
//!
//! Binary layout: the 8 ASCII bytes `SGWAVE01`, then one little-endian
//! `f64` triple `(z, re, im)` per grid point, nothing else.

use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"SGWAVE01";

/// Density allowed near the periodic boundary before a result is flagged.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        if !(step > 0.0 && start.is_finite() && step.is_finite()) || len < 2 {
            return Err(invalid("grid needs a positive step and at least two points"));
        }
        Ok(Self { start, step, len })
    }

    /// `len` points spanning `[lo, hi)` (periodic convention).
    pub fn spanning(lo: f64, hi: f64, len: usize) -> Result<Self> {
        Self::new(lo, (hi - lo) / len as f64, len)
    }

    pub fn point(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    fn wavenumber(&self, i: usize) -> f64 {
        let n = self.len as f64;
        let j = if i < self.len.div_ceil(2) { i as f64 } else { i as f64 - n };
        2.0 * std::f64::consts::PI * j / (n * self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: UniformGrid,
    pub values: Vec<Complex64>,
}

impl GridField {
    pub fn sample<F: Fn(f64) -> Complex64>(grid: UniformGrid, f: F) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.step
    }

    /// `(∫ |a - b|²)^{1/2}` on the shared grid.
    pub fn l2_distance(&self, other: &GridField) -> f64 {
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.grid.step)
            .sqrt()
    }

    /// Probability mass in the outer sixteenth of the grid on each side.
    pub fn boundary_mass(&self) -> f64 {
        let edge = (self.grid.len / 16).max(1);
        let n = self.values.len();
        let outer: f64 = self.values[..edge]
            .iter()
            .chain(&self.values[n - edge..])
            .map(|v| v.norm_sqr())
            .sum();
        outer * self.grid.step
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "z,re,im")?;
        for (z, v) in self.grid.points().zip(&self.values) {
            writeln!(w, "{z},{},{}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut triples = Vec::new();
        let mut seen_header = false;
        for line in BufReader::new(r).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != "z,re,im" {
                    return Err(Error::Format(format!("unexpected CSV header {line:?}")));
                }
                seen_header = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("expected three columns in {line:?}")));
            }
            let mut t = [0.0; 3];
            for (slot, p) in t.iter_mut().zip(parts) {
                *slot = p.parse().map_err(|_| Error::Format(format!("bad number {p:?}")))?;
            }
            triples.push(t);
        }
        Self::from_triples(&triples)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for (z, v) in self.grid.points().zip(&self.values) {
            for x in [z, v.re, v.im] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != BINARY_MAGIC {
            return Err(Error::Format("missing SGWAVE01 header".into()));
        }
        let body = &bytes[8..];
        if body.len() % 24 != 0 {
            return Err(Error::Format("payload is not a whole number of f64 triples".into()));
        }
        let triples: Vec<[f64; 3]> = body
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                [f(0), f(1), f(2)]
            })
            .collect();
        Self::from_triples(&triples)
    }

    fn from_triples(t: &[[f64; 3]]) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::Format("a field needs at least two points".into()));
        }
        let step = t[1][0] - t[0][0];
        let grid = UniformGrid::new(t[0][0], step, t.len())?;
        for (i, row) in t.iter().enumerate() {
            if (row[0] - grid.point(i)).abs() > 1e-9 * step.max(1.0) {
                return Err(Error::Format(format!("grid is not uniform at row {i}")));
            }
        }
        Ok(Self {
            grid,
            values: t.iter().map(|r| Complex64::new(r[1], r[2])).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Potential {
    Zero,
    /// `V(z) = slope · z`.
    Linear { slope: f64 },
}

impl Potential {
    /// `V = -mu ω z`, the interaction seen by the branch with eigenvalue `ω`.
    pub fn stern_gerlach(mu: f64, omega: f64) -> Self {
        Potential::Linear { slope: -mu * omega }
    }

    fn at(&self, z: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { slope } => slope * z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub potential: Potential,
    /// Include `-ħ²/(2m) ∂²`; disable for the impulsive interaction.
    pub kinetic: bool,
    pub mass: f64,
    pub hbar: f64,
}

impl Propagator {
    pub fn free(mass: f64, hbar: f64) -> Self {
        Self {
            potential: Potential::Zero,
            kinetic: true,
            mass,
            hbar,
        }
    }

    pub fn impulsive(potential: Potential, hbar: f64) -> Self {
        Self {
            potential,
            kinetic: false,
            mass: 1.0,
            hbar,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub field: GridField,
    /// Largest boundary mass seen at the start or end.
    pub boundary_mass: f64,
    pub accuracy_warning: bool,
}

/// Strang-split spectral propagation for `total_time` in `steps` steps.
pub fn grid_propagate(initial: &GridField, prop: &Propagator, total_time: f64, steps: usize) -> Result<Propagation> {
    if !(total_time >= 0.0 && total_time.is_finite()) {
        return Err(invalid("propagation time must be non-negative"));
    }
    if steps == 0 {
        return Err(invalid("need at least one step"));
    }
    if !(prop.mass > 0.0 && prop.hbar > 0.0) {
        return Err(invalid("mass and hbar must be positive"));
    }
    let grid = initial.grid;
    let mut psi = initial.values.clone();
    let start_mass = initial.boundary_mass();
    if total_time > 0.0 {
        let dt = total_time / steps as f64;
        if !prop.kinetic {
            // Pure potential: exact phase multiply.
            for (i, v) in psi.iter_mut().enumerate() {
                *v *= Complex64::from_polar(1.0, -prop.potential.at(grid.point(i)) * total_time / prop.hbar);
            }
        } else {
            let n = grid.len;
            let mut planner = FftPlanner::<f64>::new();
            let fwd = planner.plan_fft_forward(n);
            let inv = planner.plan_fft_inverse(n);
            let half_v: Vec<Complex64> = (0..n)
                .map(|i| Complex64::from_polar(1.0, -prop.potential.at(grid.point(i)) * dt / (2.0 * prop.hbar)))
                .collect();
            let kin: Vec<Complex64> = (0..n)
                .map(|i| {
                    let k = grid.wavenumber(i);
                    Complex64::from_polar(1.0, -prop.hbar * k * k * dt / (2.0 * prop.mass)) / n as f64
                })
                .collect();
            let has_potential = prop.potential != Potential::Zero;
            for _ in 0..steps {
                if has_potential {
                    psi.iter_mut().zip(&half_v).for_each(|(v, p)| *v *= p);
                }
                fwd.process(&mut psi);
                psi.iter_mut().zip(&kin).for_each(|(v, k)| *v *= k);
                inv.process(&mut psi);
                if has_potential {
                    psi.iter_mut().zip(&half_v).for_each(|(v, p)| *v *= p);
                }
            }
        }
    }
    let field = GridField { grid, values: psi };
    let boundary_mass = start_mass.max(field.boundary_mass());
    Ok(Propagation {
        field,
        boundary_mass,
        accuracy_warning: boundary_mass > BOUNDARY_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::GaussianPacket;

    fn packet() -> GaussianPacket {
        GaussianPacket {
            kick: 1.5,
            origin: -3.0,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        }
    }

    fn grid() -> UniformGrid {
        UniformGrid::spanning(-40.0, 40.0, 2048).unwrap()
    }

    #[test]
    fn free_gaussian_matches_closed_form() {
        let p = packet();
        let f0 = GridField::sample(grid(), |z| p.value(z));
        let out = grid_propagate(&f0, &Propagator::free(1.0, 1.0), 4.0, 1000).unwrap();
        let exact = GridField::sample(grid(), |z| p.evolved(4.0).value(z));
        assert!(out.field.l2_distance(&exact) < 1e-6);
        assert!(!out.accuracy_warning);
    }

    #[test]
    fn zero_time_is_identity() {
        let f0 = GridField::sample(grid(), |z| packet().value(z));
        let out = grid_propagate(&f0, &Propagator::free(1.0, 1.0), 0.0, 10).unwrap();
        assert_eq!(out.field, f0);
    }

    #[test]
    fn norm_is_conserved_over_many_steps() {
        let f0 = GridField::sample(grid(), |z| packet().value(z));
        let n0 = f0.norm_sqr();
        let prop = Propagator {
            potential: Potential::Linear { slope: 0.01 },
            ..Propagator::free(1.0, 1.0)
        };
        let out = grid_propagate(&f0, &prop, 2.0, 10_000).unwrap();
        assert!((out.field.norm_sqr() - n0).abs() < 1e-10);
    }

    #[test]
    fn impulsive_potential_is_a_phase_kick() {
        let rest = GaussianPacket::at_rest(1.0, 1.0, 1.0);
        let f0 = GridField::sample(grid(), |z| rest.value(z));
        let (mu, omega, t) = (2.0, 0.5, 1.5);
        let out = grid_propagate(&f0, &Propagator::impulsive(Potential::stern_gerlach(mu, omega), 1.0), t, 1).unwrap();
        let kicked = GaussianPacket {
            kick: mu * omega * t,
            ..rest
        };
        for (z, v) in grid().points().zip(&out.field.values) {
            assert!((v - kicked.value(z)).norm() < 1e-12);
        }
    }

    #[test]
    fn boundary_mass_is_flagged() {
        let wide = GaussianPacket::at_rest(15.0, 1.0, 1.0);
        let f0 = GridField::sample(grid(), |z| wide.value(z));
        let out = grid_propagate(&f0, &Propagator::free(1.0, 1.0), 1.0, 10).unwrap();
        assert!(out.accuracy_warning);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let f = GridField::sample(UniformGrid::spanning(-2.0, 2.0, 64).unwrap(), |z| packet().value(z));
        let mut csv = Vec::new();
        f.write_csv(&mut csv, &["seed=1".into()]).unwrap();
        let back = GridField::read_csv(csv.as_slice()).unwrap();
        assert_eq!(back.values, f.values);
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..8], b"SGWAVE01");
        assert_eq!(bin.len(), 8 + 24 * 64);
        assert_eq!(f64::from_le_bytes(bin[8..16].try_into().unwrap()), -2.0);
        let back = GridField::read_binary(bin.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(GridField::read_binary(&b"SGWAVE02"[..]).is_err());
        assert!(GridField::read_binary(&bin[..bin.len() - 1]).is_err());
    }
}
