//! Finite-difference residuals of the hydrodynamic pair
//!
//! ```text
//! ∂t Ω + ∂z (Ω ∂z S / m) = 0
//! ∂t S + (∂z S)² / (2m) - ħ²/(2m) ∂z² R / R = 0
//! ```
//!
//! with `R = |Ψ|`, `Ω = R²` and `S = ħ arg Ψ` unwrapped along `z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::GridField;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MadelungReport {
    pub continuity: f64,
    pub hamilton_jacobi: f64,
    pub evaluated: usize,
    /// Points dropped because a stencil value was within `node_eps` of a node.
    pub excluded: usize,
}

fn unwrap(phases: &mut [f64]) {
    let tau = 2.0 * std::f64::consts::PI;
    for i in 1..phases.len() {
        let d = phases[i] - phases[i - 1];
        phases[i] -= tau * (d / tau).round();
    }
}

#[derive(Clone, Copy)]
struct Steps {
    hz: f64,
    ht: f64,
    mass: f64,
    hbar: f64,
}

/// Residuals at one point from the five-point spatial stencil at `t` and the
/// values at `t ± ht`.
fn residual_at(stencil: &[Complex64; 5], earlier: Complex64, later: Complex64, s: Steps) -> (f64, f64) {
    let Steps { hz, ht, mass, hbar } = s;
    let r: Vec<f64> = stencil.iter().map(|v| v.norm()).collect();
    let omega: Vec<f64> = r.iter().map(|x| x * x).collect();
    let mut phase: Vec<f64> = stencil.iter().map(|v| v.arg()).collect();
    unwrap(&mut phase);
    let action: Vec<f64> = phase.iter().map(|p| hbar * p).collect();
    let grad = |k: usize| (action[k + 1] - action[k - 1]) / (2.0 * hz);
    let flux = |k: usize| omega[k] * grad(k) / mass;
    let div_flux = (flux(3) - flux(1)) / (2.0 * hz);
    let dt_omega = (later.norm_sqr() - earlier.norm_sqr()) / (2.0 * ht);
    // Phase increment over 2 ht without unwrapping in time.
    let dt_action = hbar * (later * earlier.conj()).arg() / (2.0 * ht);
    let lap_r = (r[3] - 2.0 * r[2] + r[1]) / (hz * hz);
    let s_z = grad(2);
    let continuity = dt_omega + div_flux;
    let hj = dt_action + s_z * s_z / (2.0 * mass) - hbar * hbar / (2.0 * mass) * lap_r / r[2];
    (continuity.abs(), hj.abs())
}

/// Max residuals of `field(z, t)` over the points `zs` at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn madelung_residuals<F: Fn(f64, f64) -> Complex64>(
    field: F,
    zs: &[f64],
    t: f64,
    hz: f64,
    ht: f64,
    mass: f64,
    hbar: f64,
    node_eps: f64,
) -> Result<MadelungReport> {
    if !(hz > 0.0 && ht > 0.0) {
        return Err(invalid("finite-difference steps must be positive"));
    }
    if !(t - ht >= 0.0) {
        return Err(invalid("time stencil must stay at t >= 0"));
    }
    let peak = zs.iter().map(|&z| field(z, t).norm()).fold(0.0, f64::max);
    let floor = node_eps * peak;
    let steps = Steps { hz, ht, mass, hbar };
    let mut report = MadelungReport {
        continuity: 0.0,
        hamilton_jacobi: 0.0,
        evaluated: 0,
        excluded: 0,
    };
    for &z in zs {
        let stencil: [Complex64; 5] = std::array::from_fn(|k| field(z + (k as f64 - 2.0) * hz, t));
        let (earlier, later) = (field(z, t - ht), field(z, t + ht));
        if stencil.iter().chain([&earlier, &later]).any(|v| v.norm() <= floor) {
            report.excluded += 1;
            continue;
        }
        let (c, h) = residual_at(&stencil, earlier, later, steps);
        report.continuity = report.continuity.max(c);
        report.hamilton_jacobi = report.hamilton_jacobi.max(h);
        report.evaluated += 1;
    }
    Ok(report)
}

/// Same residuals from three grid snapshots `ht` apart, over interior points.
pub fn madelung_residuals_grid(
    earlier: &GridField,
    current: &GridField,
    later: &GridField,
    ht: f64,
    mass: f64,
    hbar: f64,
    node_eps: f64,
) -> Result<MadelungReport> {
    let n = current.values.len();
    if earlier.values.len() != n || later.values.len() != n || n < 5 {
        return Err(invalid("snapshots must share a grid of at least five points"));
    }
    let peak = current.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let floor = node_eps * peak;
    let steps = Steps {
        hz: current.grid.step,
        ht,
        mass,
        hbar,
    };
    let mut report = MadelungReport {
        continuity: 0.0,
        hamilton_jacobi: 0.0,
        evaluated: 0,
        excluded: 0,
    };
    for i in 2..n - 2 {
        let stencil: [Complex64; 5] = std::array::from_fn(|k| current.values[i + k - 2]);
        let (e, l) = (earlier.values[i], later.values[i]);
        if stencil.iter().chain([&e, &l]).any(|v| v.norm() <= floor) {
            report.excluded += 1;
            continue;
        }
        let (c, h) = residual_at(&stencil, e, l, steps);
        report.continuity = report.continuity.max(c);
        report.hamilton_jacobi = report.hamilton_jacobi.max(h);
        report.evaluated += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::GaussianPacket;

    fn window(p: &GaussianPacket, t: f64, n: usize) -> Vec<f64> {
        let q = p.evolved(t);
        let (c, w) = (q.center(), q.width());
        (0..n).map(|i| c - 5.0 * w + 10.0 * w * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn free_gaussian_satisfies_pair_at_second_order() {
        let p = GaussianPacket {
            kick: 2.0,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        };
        let zs = window(&p, 1.0, 201);
        let field = |z: f64, t: f64| p.evolved(t).value(z);
        let coarse = madelung_residuals(field, &zs, 1.0, 2e-3, 2e-3, 1.0, 1.0, 1e-8).unwrap();
        let fine = madelung_residuals(field, &zs, 1.0, 1e-3, 1e-3, 1.0, 1.0, 1e-8).unwrap();
        assert!(fine.continuity < 1e-4 && fine.hamilton_jacobi < 1e-4, "{fine:?}");
        assert_eq!(fine.excluded, 0);
        let order_c = (coarse.continuity / fine.continuity).log2();
        let order_h = (coarse.hamilton_jacobi / fine.hamilton_jacobi).log2();
        assert!((order_c - 2.0).abs() < 0.2, "continuity order {order_c}");
        assert!((order_h - 2.0).abs() < 0.2, "HJ order {order_h}");
    }

    #[test]
    fn static_real_gaussian_has_no_flux() {
        let p = GaussianPacket::at_rest(1.0, 1.0, 1.0);
        let zs: Vec<f64> = (0..50).map(|i| -3.0 + 0.12 * i as f64).collect();
        let r = madelung_residuals(|z, _| p.value(z), &zs, 1.0, 1e-3, 1e-3, 1.0, 1.0, 1e-8).unwrap();
        assert_eq!(r.continuity, 0.0);
    }

    #[test]
    fn corrupted_phase_is_detected() {
        let p = GaussianPacket {
            kick: 2.0,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        };
        let zs = window(&p, 1.0, 201);
        let clean = madelung_residuals(|z, t| p.evolved(t).value(z), &zs, 1.0, 1e-3, 1e-3, 1.0, 1.0, 1e-8).unwrap();
        let corrupted = |z: f64, t: f64| {
            let (r, s) = p.evolved(t).amplitude_phase(z);
            Complex64::from_polar(r, 1.01 * s)
        };
        let bad = madelung_residuals(corrupted, &zs, 1.0, 1e-3, 1e-3, 1.0, 1.0, 1e-8).unwrap();
        assert!(bad.continuity > 10.0 * clean.continuity);
        assert!(bad.hamilton_jacobi > 10.0 * clean.hamilton_jacobi);
    }

    #[test]
    fn nodes_are_excluded_and_counted() {
        // Two counter-propagating packets interfere with exact zeros.
        let a = GaussianPacket {
            kick: 3.0,
            ..GaussianPacket::at_rest(1.0, 1.0, 1.0)
        };
        let b = GaussianPacket { kick: -3.0, ..a };
        let field = |z: f64, t: f64| a.evolved(t).value(z) - b.evolved(t).value(z);
        let zs = [0.0, 0.5];
        let r = madelung_residuals(field, &zs, 0.01, 1e-3, 1e-3, 1.0, 1.0, 1e-8).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.evaluated, 1);
    }
}
