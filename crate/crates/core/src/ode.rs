//! Adaptive Dormand-Prince 5(4) integration with step rejection.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections because the right-hand side refused to evaluate.
    pub refused: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepUnderflow {
    pub t: f64,
    pub stats: OdeStats,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1`. `f` may return `None` to
/// refuse an evaluation point (e.g. near a singularity); the step is then
/// halved. `observe` sees every accepted `(t, y)`.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: &OdeOptions,
    mut observe: O,
) -> Result<([f64; N], OdeStats), StepUnderflow>
where
    F: FnMut(f64, &[f64; N]) -> Option<[f64; N]>,
    O: FnMut(f64, &[f64; N]),
{
    let mut stats = OdeStats::default();
    let (mut t, mut y) = (t0, y0);
    let mut h = opts.max_step.min(t1 - t0);
    while t1 - t > 1e-15 * t1.abs().max(1.0) {
        h = h.min(t1 - t);
        if h < opts.min_step && t1 - t > opts.min_step {
            return Err(StepUnderflow { t, stats });
        }
        let mut k = [[0.0; N]; 7];
        let mut refused = false;
        for s in 0..7 {
            let mut ys = y;
            for (r, yr) in ys.iter_mut().enumerate() {
                for (q, kq) in k.iter().enumerate().take(s) {
                    *yr += h * A[s][q] * kq[r];
                }
            }
            match f(t + C[s] * h, &ys) {
                Some(v) => k[s] = v,
                None => {
                    refused = true;
                    break;
                }
            }
        }
        if refused {
            stats.refused += 1;
            stats.rejected += 1;
            h *= 0.5;
            continue;
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for r in 0..N {
            let (mut inc5, mut inc4) = (0.0, 0.0);
            for s in 0..7 {
                inc5 += B5[s] * k[s][r];
                inc4 += B4[s] * k[s][r];
            }
            y5[r] += h * inc5;
            err = err.max((h * (inc5 - inc4)).abs());
        }
        let ratio = err / opts.abs_tol;
        if ratio <= 1.0 && y5.iter().all(|v| v.is_finite()) {
            t += h;
            y = y5;
            stats.accepted += 1;
            observe(t, &y);
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * grow).min(opts.max_step);
        } else {
            stats.rejected += 1;
            let shrink = if ratio.is_finite() { (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.5) } else { 0.5 };
            h *= shrink;
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OdeOptions {
        OdeOptions {
            abs_tol: 1e-10,
            max_step: 0.1,
            min_step: 1e-12,
        }
    }

    #[test]
    fn exponential_decay() {
        let (y, stats) = integrate(|_, y: &[f64; 1]| Some([-y[0]]), 0.0, [1.0], 3.0, &opts(), |_, _| {}).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-9);
        assert!(stats.accepted >= 30);
    }

    #[test]
    fn harmonic_oscillator_phase() {
        let (y, _) = integrate(
            |_, y: &[f64; 2]| Some([y[1], -y[0]]),
            0.0,
            [1.0, 0.0],
            10.0,
            &opts(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - 10.0f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn refusals_shrink_then_underflow() {
        let res = integrate(
            |t, _y: &[f64; 1]| if t > 0.5 { None } else { Some([1.0]) },
            0.0,
            [0.0],
            1.0,
            &opts(),
            |_, _| {},
        );
        let err = res.unwrap_err();
        assert!((err.t - 0.5).abs() < 1e-9);
        assert!(err.stats.refused > 0);
    }
}
