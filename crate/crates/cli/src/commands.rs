//! The five subcommands. Each draws from `subseed(seed, label)` streams so
//! that sweep points are independent and reproducible one by one.

use num_complex::Complex64;
use rand::Rng;
use serde_json::json;

use hvsg_core::bell::{
    chsh, exact_correlation, factorization_audit, no_signaling, sample_joint, sampled_correlation, settings_dependence,
    BellSummary, ChshSettings, PointerGrid, WingSetting,
};
use hvsg_core::eigenbasis::{rotate_state, AngularState, Axis};
use hvsg_core::measurement::{born_estimate, sample_outcomes, write_outcomes_csv, SupportPartition};
use hvsg_core::microdynamics::{
    check_identity_fluctuation_decomposition, joint_deviation, sample_deviation, sample_sign_process,
};
use hvsg_core::packets::{
    final_wave, grid_propagate, interaction_phase, madelung_residuals, GaussianPacket, GridField, Potential,
    Propagator, UniformGrid, DEFAULT_EPS_OVERLAP,
};
use hvsg_core::rng::{batched, stream, subseed};
use hvsg_core::stats::{ks_one_sample, ks_two_sample, mutual_information, pearson};
use hvsg_core::trajectories::{classical_pointer, equivariance_test, run_ensemble, TrajectoryOptions};

use crate::config::{Experiment, RunConfig};
use crate::{Check, CliError, Extra, Report, Table};

const SIGMAS: f64 = 3.0;
const P_MIN: f64 = 0.01;

fn cell(x: f64) -> String {
    format!("{x:?}")
}

fn flag(b: bool) -> String {
    b.to_string()
}

fn require(cond: bool, msg: &str) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

fn quantity_table() -> Table {
    Table::new(vec!["quantity", "value", "reference", "tolerance", "pass"])
}

/// Adds a row and, when a tolerance is given, the matching check.
fn quantity(report: &mut Report, name: &str, value: f64, reference: f64, tol: Option<f64>) {
    let pass = tol.map(|t| (value - reference).abs() <= t);
    report.table.push(vec![
        name.into(),
        cell(value),
        cell(reference),
        tol.map(cell).unwrap_or_default(),
        pass.map(flag).unwrap_or_default(),
    ]);
    if let (Some(t), Some(p)) = (tol, pass) {
        report.checks.push(Check::new(name, p, format!("|{value} - {reference}| <= {t}")));
    }
}

pub fn fluct(cfg: &RunConfig) -> Result<Report, CliError> {
    let f = &cfg.fluct;
    require(f.samples >= 2, "fluct.samples must be at least 2")?;
    require(f.mi_bins >= 2, "fluct.mi_bins must be at least 2")?;
    let mut report = Report::new(Experiment::Fluct, quantity_table());
    let n = f.samples as f64;

    let dev = batched(subseed(cfg.seed, 0), f.samples, |rng, _| {
        sample_deviation(f.gamma, rng).map(|d| d.deviation.abs())
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    let mean_ref = f.gamma.abs() / 2.0;
    let mean = dev.iter().sum::<f64>() / n;
    quantity(&mut report, "mean_abs_deviation", mean, mean_ref, Some(0.01 * mean_ref));
    let ks = ks_one_sample(&dev, |x| 1.0 - (-x / mean_ref).exp());
    report.table.push(vec![
        "exponential_ks_p".into(),
        cell(ks.p_value),
        String::new(),
        String::new(),
        flag(ks.p_value > P_MIN),
    ]);
    report
        .checks
        .push(Check::new("exponential_ks_p", ks.p_value > P_MIN, format!("p = {} > {P_MIN}", ks.p_value)));

    let (d1, d2) = f.increments;
    let pairs = batched(subseed(cfg.seed, 1), f.samples, |rng, _| {
        joint_deviation(f.gamma, d1, d2, rng).map(|(a, b)| (a.deviation, b.deviation))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    quantity(&mut report, "pearson_r", pearson(&x, &y), 0.0, Some(0.003));
    quantity(&mut report, "mutual_information", mutual_information(&x, &y, f.mi_bins), 0.0, None);
    let alone = batched(subseed(cfg.seed, 2), f.samples, |rng, _| {
        sample_deviation(f.gamma, rng).map(|d| d.deviation)
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    let marginal = ks_two_sample(&x, &alone);
    report.table.push(vec![
        "marginal_ks_p".into(),
        cell(marginal.p_value),
        String::new(),
        String::new(),
        flag(marginal.p_value > P_MIN),
    ]);
    report.checks.push(Check::new(
        "marginal_ks_p",
        marginal.p_value > P_MIN,
        format!("p = {} > {P_MIN}", marginal.p_value),
    ));

    let track = sample_sign_process(&f.scales, f.duration, &mut stream(subseed(cfg.seed, 3), 0))?;
    let segs = track.len() as f64;
    quantity(
        &mut report,
        "sign_fraction_positive",
        track.fraction_positive(),
        0.5,
        Some(SIGMAS * 0.5 / segs.sqrt()),
    );
    if track.len() > 1 {
        quantity(
            &mut report,
            "sign_flip_rate",
            track.sign_flips() as f64 / (segs - 1.0),
            0.5,
            Some(SIGMAS * 0.5 / (segs - 1.0).sqrt()),
        );
    }

    // Two-component Gaussian mixture on [-4, 4].
    let h = f.identity_step;
    require(h > 0.0 && h < 0.1, "fluct.identity_step must be in (0, 0.1)")?;
    let pts = (8.0 / h).round() as usize + 1;
    let omega: Vec<f64> = (0..pts)
        .map(|i| {
            let z = -4.0 + i as f64 * h;
            0.6 * (-(z + 1.0).powi(2) / 0.5).exp() + 0.4 * (-(z - 1.0).powi(2) / 0.98).exp()
        })
        .collect();
    let residual = check_identity_fluctuation_decomposition(&omega, h)?;
    quantity(&mut report, "identity_residual", residual, 0.0, Some(1e-4));

    report.summary.push(("samples".into(), f.samples.to_string()));
    report.summary.push(("sign_segments".into(), track.len().to_string()));
    report.results = json!({
        "samples": f.samples,
        "gamma": f.gamma,
        "mean_abs_deviation": mean,
        "exponential_ks": ks,
        "marginal_ks": marginal,
        "sign_segments": track.len(),
        "sign_flips": track.sign_flips(),
    });
    Ok(report)
}

pub fn born(cfg: &RunConfig) -> Result<Report, CliError> {
    let b = &cfg.born;
    require(!b.axes.is_empty() && !b.sizes.is_empty(), "born.axes and born.sizes must be non-empty")?;
    let axes = b.axes.iter().map(|v| Axis::new(*v)).collect::<Result<Vec<_>, _>>()?;
    let mut report = Report::new(
        Experiment::Born,
        Table::new(vec![
            "axis_x",
            "axis_y",
            "axis_z",
            "samples",
            "m",
            "omega",
            "probability",
            "frequency",
            "stderr",
            "leakage",
            "error_bar",
            "resolved",
        ]),
    );
    let mut estimates = Vec::new();
    let mut idx = 0u64;
    for (ai, axis) in axes.iter().enumerate() {
        let rotated = rotate_state(&cfg.state, axis);
        for &n in &b.sizes {
            let est = born_estimate(&rotated, &cfg.setup, n, subseed(cfg.seed, idx), b.method)?;
            let v = axis.vector();
            let mut worst = f64::NEG_INFINITY;
            for k in 0..est.probabilities.len() {
                let p = est.probabilities[k];
                let f = est.frequencies[k];
                report.table.push(vec![
                    cell(v[0]),
                    cell(v[1]),
                    cell(v[2]),
                    n.to_string(),
                    cell(rotated.ladder().m(k)),
                    cell(est.eigenvalues[k]),
                    cell(p),
                    cell(f),
                    cell(est.stderr[k]),
                    cell(est.leakage[k]),
                    cell(est.error_bars[k]),
                    flag(est.resolved),
                ]);
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let allowed = SIGMAS * sigma + est.error_bars[k];
                let excess = (f - p).abs() - allowed;
                worst = worst.max(excess);
            }
            report.checks.push(Check::new(
                format!("born axis{ai} n{n}"),
                worst <= 0.0,
                format!("max |f - p| - (3 sigma + bias bound) = {worst}"),
            ));
            if !est.resolved {
                report
                    .warnings
                    .push(format!("axis{ai} n{n}: branches not resolved, frequencies carry leakage"));
            }
            if est.node_trapped > 0 {
                report.warnings.push(format!("axis{ai} n{n}: {} node-trapped trajectories", est.node_trapped));
            }
            estimates.push(est);
            idx += 1;
        }
    }
    if b.dump_outcomes {
        let rotated = rotate_state(&cfg.state, &axes[0]);
        let outcomes = sample_outcomes(&rotated, &cfg.setup, b.sizes[0], subseed(cfg.seed, 0))?;
        let mut body = Vec::new();
        write_outcomes_csv(&mut body, &outcomes, &[])?;
        report.extras.push(Extra::Csv {
            name: "born_outcomes.csv".into(),
            body,
        });
    }
    report.summary.push(("method".into(), json!(b.method).as_str().unwrap_or_default().to_string()));
    report.results = json!({ "estimates": estimates });
    Ok(report)
}

pub fn traj(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = &cfg.traj;
    let opts = TrajectoryOptions {
        tol: t.tol,
        velocity_scale: t.velocity_scale,
        record_path: false,
        node_eps: t.node_eps,
    };
    let partition = SupportPartition::for_setup(&cfg.setup, &cfg.state, DEFAULT_EPS_OVERLAP)?;
    let eq = equivariance_test(&cfg.state, &cfg.setup, t.samples, cfg.seed, &opts)?;
    // Same seed, so these are the first `paths` members of the ensemble above.
    let recorded = run_ensemble(
        &cfg.state,
        &cfg.setup,
        t.paths,
        cfg.seed,
        &TrajectoryOptions {
            record_path: true,
            ..opts
        },
    )?;
    let mut report = Report::new(Experiment::Traj, Table::new(vec!["trajectory", "t", "x_e", "y_e", "z_a"]));
    for (i, rec) in recorded.records.iter().enumerate() {
        for (time, c) in rec.times.iter().zip(&rec.configs) {
            report
                .table
                .push(vec![i.to_string(), cell(*time), cell(c.x_e), cell(c.y_e), cell(c.z_a)]);
        }
    }
    let pass = eq.p_value > P_MIN && !eq.unreliable;
    report.checks.push(Check::new(
        "equivariance",
        pass,
        format!("KS p = {} > {P_MIN}, {} node-trapped", eq.p_value, eq.node_trapped),
    ));
    if !partition.resolved {
        report
            .warnings
            .push("branches not resolved at the end of flight".to_string());
    }
    if eq.node_trapped > 0 {
        report.warnings.push(format!("{} node-trapped trajectories", eq.node_trapped));
    }
    let classical: Vec<f64> = cfg
        .state
        .ladder()
        .eigenvalues()
        .iter()
        .map(|&l| classical_pointer(l, &cfg.setup))
        .collect();
    for (k, v) in [
        ("ks", cell(eq.ks)),
        ("p_value", cell(eq.p_value)),
        ("samples", eq.samples.to_string()),
        ("node_trapped", eq.node_trapped.to_string()),
        ("resolved", flag(partition.resolved)),
    ] {
        report.summary.push((k.into(), v));
    }
    report.results = json!({
        "equivariance": eq,
        "resolved": partition.resolved,
        "branch_centers": partition.centers,
        "classical_pointer": classical,
        "paths": recorded.records.len(),
    });
    Ok(report)
}

pub fn bell(cfg: &RunConfig) -> Result<Report, CliError> {
    let b = &cfg.bell;
    let state = &b.state;
    let (l1, l2) = state.ladders();
    b.dichotomizer.validate(l1)?;
    b.dichotomizer.validate(l2)?;
    require(b.samples >= 1, "bell.samples must be positive")?;
    require(b.tv_points >= 2, "bell.tv_points must be at least 2")?;
    let setup = cfg.setup;
    let mut report = Report::new(
        Experiment::Bell,
        Table::new(vec!["theta", "E_exact", "E_sampled", "stderr", "z_score"]),
    );

    let w1 = WingSetting::new(Axis::z(), setup);
    let mut sweep_resolved = true;
    let mut sweep = Vec::new();
    for (k, &theta) in b.thetas.iter().enumerate() {
        let w2 = WingSetting::new(Axis::in_xz_plane(theta), setup);
        let run = sample_joint(state, &w1, &w2, b.samples, subseed(cfg.seed, 100 + k as u64))?;
        factorization_audit(&run)?;
        sweep_resolved &= run.resolved();
        let (e, se) = sampled_correlation(&run, &b.dichotomizer)?;
        let exact = exact_correlation(state, &w1, &w2, &b.dichotomizer);
        let z = if se > 0.0 { (e - exact) / se } else { 0.0 };
        let pass = (e - exact).abs() <= SIGMAS * se + 1e-12;
        report.table.push(vec![cell(theta), cell(exact), cell(e), cell(se), cell(z)]);
        report
            .checks
            .push(Check::new(format!("E(theta={theta})"), pass, format!("z = {z}")));
        sweep.push(json!({"theta": theta, "E_exact": exact, "E_sampled": e, "stderr": se}));
    }

    let settings = ChshSettings::in_plane(b.chsh_angles, setup);
    let chsh_seed = subseed(cfg.seed, 0);
    let res = chsh(state, &settings, b.samples, chsh_seed, &b.dichotomizer)?;
    let s = (settings.a, settings.b);
    let s_prime = (settings.a, settings.b_prime);
    let grid = PointerGrid::covering(state, &[s, s_prime], b.tv_points)?;
    let tv = settings_dependence(state, &s, &s_prime, &grid)?;
    let ns = no_signaling(state, &settings.a, &settings.b, &settings.b_prime, b.samples, subseed(cfg.seed, 1))?;

    let s_ok = (res.s_sampled - res.s_exact).abs() <= SIGMAS * res.stderr + 1e-12;
    report.checks.push(Check::new(
        "chsh",
        s_ok,
        format!("S = {} vs exact {} (stderr {})", res.s_sampled, res.s_exact, res.stderr),
    ));
    report.checks.push(Check::new(
        "no_signaling",
        ns.p_value > P_MIN,
        format!("wing-1 chi-square p = {}", ns.p_value),
    ));
    if !(res.resolved && sweep_resolved) {
        report
            .warnings
            .push("some wing partitions are not resolved".to_string());
    }
    let summary = BellSummary {
        s_exact: res.s_exact,
        s_sampled: res.s_sampled,
        stderr: res.stderr,
        tv: tv.joint,
        audit_pass: res.audit_pass,
    };
    for (k, v) in [
        ("S_exact", cell(summary.s_exact)),
        ("S_sampled", cell(summary.s_sampled)),
        ("stderr", cell(summary.stderr)),
        ("TV", cell(summary.tv)),
        ("audit_pass", flag(summary.audit_pass)),
        ("no_signaling_p", cell(ns.p_value)),
    ] {
        report.summary.push((k.into(), v));
    }
    if b.dump_joint {
        // The (a, b) run inside `chsh`.
        let run = sample_joint(state, &settings.a, &settings.b, b.samples, subseed(chsh_seed, 0))?;
        let mut body = Vec::new();
        run.write_csv(&mut body, &[])?;
        report.extras.push(Extra::Csv {
            name: "bell_joint.csv".into(),
            body,
        });
    }
    report.results = json!({
        "summary": summary,
        "chsh": res,
        "settings_dependence": tv,
        "no_signaling": ns,
        "sweep": sweep,
    });
    Ok(report)
}

fn random_state(j: f64, seed: u64, hbar: f64) -> Result<AngularState, CliError> {
    let ladder = hvsg_core::eigenbasis::AngularLadder::new(j, hbar)?;
    let mut rng = stream(seed, 0);
    let c = (0..ladder.dim())
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    Ok(AngularState::normalized(ladder, c)?)
}

pub fn oracle(cfg: &RunConfig) -> Result<Report, CliError> {
    let o = &cfg.oracle;
    let setup = cfg.setup;
    setup.validate()?;
    require(o.steps >= 1 && o.grid_points >= 16, "oracle needs steps >= 1 and grid_points >= 16")?;
    let grid = UniformGrid::spanning(o.span.0, o.span.1, o.grid_points)?;
    let mut report = Report::new(
        Experiment::Oracle,
        Table::new(vec!["check", "j", "value", "reference", "tolerance", "pass"]),
    );
    let push = |report: &mut Report, name: &str, j: f64, value: f64, reference: f64, tol: f64| {
        let pass = (value - reference).abs() <= tol;
        report
            .table
            .push(vec![name.into(), cell(j), cell(value), cell(reference), cell(tol), flag(pass)]);
        report
            .checks
            .push(Check::new(format!("{name} j={j}"), pass, format!("|{value} - {reference}| <= {tol}")));
    };

    let mut last_field = None;
    for (k, &j) in o.js.iter().enumerate() {
        let state = random_state(j, subseed(cfg.seed, k as u64), setup.hbar)?;
        let wave = final_wave(&setup, &state);
        let exact = GridField::sample(grid, |z| wave.amplitude(z));
        let rest = GaussianPacket::at_rest(setup.sigma_z0, setup.atom_mass, setup.hbar);
        let f0 = GridField::sample(grid, |z| rest.value(z));
        let mut total = GridField::sample(grid, |_| Complex64::new(0.0, 0.0));
        let mut inaccurate = false;
        for (c, &omega) in state.coeffs().iter().zip(state.ladder().eigenvalues()) {
            let kick = Propagator::impulsive(Potential::stern_gerlach(setup.mu, omega), setup.hbar);
            let kicked = grid_propagate(&f0, &kick, setup.interaction_time, 1)?;
            let free = Propagator::free(setup.atom_mass, setup.hbar);
            let out = grid_propagate(&kicked.field, &free, setup.flight_time, o.steps)?;
            inaccurate |= out.accuracy_warning;
            for (t, v) in total.values.iter_mut().zip(&out.field.values) {
                *t += c * v;
            }
        }
        if inaccurate {
            report
                .warnings
                .push(format!("j={j}: boundary mass above tolerance, widen oracle.span"));
        }
        push(&mut report, "grid_l2", j, total.l2_distance(&exact), 0.0, o.l2_max);
        last_field = Some(total);
    }

    let j = cfg.state.ladder().j();
    let field_wave = interaction_phase(&setup, &cfg.state);
    let field = field_wave.field();
    let at = final_wave(&setup.with_flight_time(o.madelung_time), &cfg.state);
    let zs: Vec<f64> = at
        .centers()
        .iter()
        .zip(at.widths())
        .flat_map(|(c, w)| (0..101).map(move |i| c + w * (-2.0 + 0.04 * i as f64)))
        .collect();
    let (coarse_h, fine_h) = o.madelung_steps;
    require(coarse_h > fine_h && fine_h > 0.0, "oracle.madelung_steps must be (coarse, fine) with coarse > fine > 0")?;
    let residuals = |h: f64| {
        madelung_residuals(&field, &zs, o.madelung_time, h, h, setup.atom_mass, setup.hbar, 1e-8)
    };
    let coarse = residuals(coarse_h)?;
    let fine = residuals(fine_h)?;
    let ratio = (coarse_h / fine_h).ln();
    push(&mut report, "madelung_continuity", j, fine.continuity, 0.0, o.madelung_max);
    push(&mut report, "madelung_hamilton_jacobi", j, fine.hamilton_jacobi, 0.0, o.madelung_max);
    push(
        &mut report,
        "madelung_continuity_order",
        j,
        (coarse.continuity / fine.continuity).ln() / ratio,
        2.0,
        0.2,
    );
    push(
        &mut report,
        "madelung_hamilton_jacobi_order",
        j,
        (coarse.hamilton_jacobi / fine.hamilton_jacobi).ln() / ratio,
        2.0,
        0.2,
    );
    if fine.excluded > 0 {
        report
            .warnings
            .push(format!("{} Madelung points dropped near nodes", fine.excluded));
    }

    if o.dump_field {
        if let Some(f) = &last_field {
            let mut body = Vec::new();
            f.write_csv(&mut body, &[])?;
            report.extras.push(Extra::Csv {
                name: "oracle_field.csv".into(),
                body,
            });
            let mut bytes = Vec::new();
            f.write_binary(&mut bytes)?;
            report.extras.push(Extra::Binary {
                name: "oracle_field.sgwave".into(),
                bytes,
            });
        }
    }
    report.results = json!({ "madelung": { "coarse": coarse, "fine": fine } });
    Ok(report)
}
