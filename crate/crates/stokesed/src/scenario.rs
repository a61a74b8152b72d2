//! Named experiments behind the CLI subcommands. Each scenario runs from a
//! [`Config`], writes its data files into the output directory, and returns
//! a report whose assertions decide the process exit code. Reports carry
//! the settling-speed index `mu = 1 - 3/p` for the configured exponent.

use crate::cloud::ParticleCloud;
use crate::config::Config;
use crate::control::{
    execute_control, follow_curve, greedy_covering, save_ledger_csv, staged_transport_plan,
    ControlRegion,
};
use crate::error::{Error, Result};
use crate::integrator::experiments::{picard_iterate, two_cloud_stability};
use crate::integrator::{
    analyticity_report, simulate, taylor_coefficients, DiagnosticsSpec, Stepper,
};
use crate::math::{stream_rng, unit_vector, Mat3, Vec3, E3};
use crate::velocity::{run_benchmark, write_benchmark_csv, Backend, Exclusion, VelocityField};
use crate::wasserstein::wasserstein1;
use serde::Serialize;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn check(name: &str, passed: bool, detail: String) -> Assertion {
        Assertion {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub p: f64,
    pub mu: f64,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub metrics: Value,
}

impl ScenarioReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("report.json"))?);
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    pub fn print(&self) {
        for a in &self.assertions {
            let tag = if a.passed { "PASS" } else { "FAIL" };
            println!("{tag} {}: {}", a.name, a.detail);
        }
        println!(
            "{}: scenario {} ({} of {} assertions passed)",
            if self.passed { "OK" } else { "FAILED" },
            self.scenario,
            self.assertions.iter().filter(|a| a.passed).count(),
            self.assertions.len()
        );
    }
}

pub const SCENARIOS: [&str; 7] = [
    "simulate",
    "stability",
    "analyticity",
    "picard",
    "hadamard",
    "control",
    "bench",
];

pub fn run(name: &str, cfg: &Config, out: &Path) -> Result<ScenarioReport> {
    std::fs::create_dir_all(out)?;
    let (metrics, assertions) = match name {
        "simulate" => simulate_scenario(cfg, out)?,
        "stability" => stability_scenario(cfg, out)?,
        "analyticity" => analyticity_scenario(cfg, out)?,
        "picard" => picard_scenario(cfg, out)?,
        "hadamard" => hadamard_scenario(cfg, out)?,
        "control" => control_scenario(cfg, out)?,
        "bench" => bench_scenario(cfg, out)?,
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; expected one of {SCENARIOS:?}"
            )))
        }
    };
    let passed = assertions.iter().all(|a| a.passed);
    let report = ScenarioReport {
        scenario: name.into(),
        seed: cfg.cloud.seed,
        p: cfg.report.p,
        mu: 1.0 - 3.0 / cfg.report.p,
        passed,
        assertions,
        metrics,
    };
    report.save(out)?;
    Ok(report)
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn cloud_from(cfg: &Config) -> Result<ParticleCloud> {
    ParticleCloud::sample_uniform_ball(
        vec3(cfg.cloud.center),
        cfg.cloud.radius,
        cfg.cloud.n,
        cfg.cloud.seed,
    )
}

fn diag_from(cfg: &Config) -> DiagnosticsSpec {
    DiagnosticsSpec {
        every: cfg.diagnostics.every,
        l3_bandwidth: cfg.diagnostics.l3_bandwidth,
        moduli_pairs: cfg.diagnostics.moduli_pairs,
        moduli_range: (cfg.diagnostics.moduli_range[0], cfg.diagnostics.moduli_range[1]),
        w1_vs_initial: cfg.diagnostics.w1_vs_initial,
        seed: cfg.cloud.seed.wrapping_add(0x5EED),
    }
}

fn write_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    f.flush()?;
    Ok(())
}

fn simulate_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    let cloud = cloud_from(cfg)?;
    let kernel = cfg.kernel_config()?;
    let traj = simulate(
        &cloud,
        &kernel,
        cfg.backend_config(),
        cfg.run.horizon,
        cfg.stepper.dt,
        cfg.stepper_config(),
        &diag_from(cfg),
    )?;
    traj.save(out)?;
    let mass_exact = traj.snapshots.iter().all(|s| s.weights == cloud.weights);
    let finite = traj.snapshots.iter().all(|s| {
        s.positions
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
    });
    let assertions = vec![
        Assertion::check(
            "positions_finite",
            finite,
            format!("{} snapshots scanned", traj.snapshots.len()),
        ),
        Assertion::check(
            "mass_bit_exact",
            mass_exact,
            "weights identical across all snapshots".into(),
        ),
    ];
    let metrics = json!({
        "n": cloud.len(),
        "snapshots": traj.snapshots.len(),
        "final_time": traj.times.last().copied().unwrap_or(0.0),
    });
    Ok((metrics, assertions))
}

fn stability_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    let a = cloud_from(cfg)?;
    let shift = vec3(cfg.stability.perturbation);
    let b = a.push_forward(|x| x + shift)?;
    let kernel = cfg.kernel_config()?;
    let report = two_cloud_stability(
        &a,
        &b,
        &kernel,
        cfg.backend_config(),
        cfg.run.horizon,
        cfg.stepper.dt,
        cfg.stability.moduli_pairs,
        cfg.cloud.seed.wrapping_add(1),
    )?;
    let rows: Vec<String> = report
        .times
        .iter()
        .zip(&report.w1)
        .map(|(t, d)| format!("{t:.12e},{d:.12e}"))
        .collect();
    write_rows(&out.join("w1.csv"), "t,w1", &rows)?;
    let rate_ok = report.fitted_rate.is_nan() || report.fitted_rate <= 1.1 * report.lip_modulus;
    let assertions = vec![
        Assertion::check(
            "transport_envelope",
            report.envelope_ok,
            format!(
                "max W1(t)/(W1(0) exp(lip t)) = {:.3} with lip = {:.3}",
                report.envelope_factor, report.lip_modulus
            ),
        ),
        Assertion::check(
            "growth_rate_bounded",
            rate_ok,
            format!(
                "fitted rate {:.4} vs 1.1 x modulus {:.4}",
                report.fitted_rate,
                1.1 * report.lip_modulus
            ),
        ),
    ];
    let metrics = json!({
        "w1_initial": report.w1.first(),
        "w1_final": report.w1.last(),
        "lip_modulus": report.lip_modulus,
        "fitted_rate": if report.fitted_rate.is_nan() { None } else { Some(report.fitted_rate) },
        "envelope_factor": report.envelope_factor,
    });
    Ok((metrics, assertions))
}

fn analyticity_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    if cfg.kernel.eps == 0.0 {
        return Err(Error::Config(
            "the analyticity scenario needs kernel.eps > 0 (trajectory series of the \
             singular kernel have no uniform radius)"
                .into(),
        ));
    }
    let cloud = cloud_from(cfg)?;
    let kernel = cfg.kernel_config()?;
    let order = cfg.analyticity.order;
    let jets = taylor_coefficients(&cloud, order, &kernel)?;
    let report = analyticity_report(&jets)?;
    let rows: Vec<String> = report
        .sup_ratios
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{},{:.12e}", i + 1, r))
        .collect();
    write_rows(&out.join("coefficients.csv"), "k,sup_ratio", &rows)?;

    // Analytic stepping vs a finely resolved RK4 run over the same span.
    let t_probe = 0.1f64.min(0.5 * report.radius_estimate);
    let taylor = simulate(
        &cloud,
        &kernel,
        Backend::Direct,
        t_probe,
        t_probe,
        Stepper::Taylor { order },
        &DiagnosticsSpec::default(),
    )?;
    let fine = simulate(
        &cloud,
        &kernel,
        Backend::Direct,
        t_probe,
        t_probe / 1000.0,
        Stepper::Rk4,
        &DiagnosticsSpec::default(),
    )?;
    let step_err = taylor
        .final_cloud()
        .positions
        .iter()
        .zip(&fine.final_cloud().positions)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);

    let lo = order / 2;
    let hi = order - 1;
    let mut worst_ratio_step = 0.0f64;
    for k in lo..=hi {
        let ratio = report.sup_ratios[k] / report.sup_ratios[k - 1];
        worst_ratio_step = worst_ratio_step.max((ratio - 1.0).abs());
    }
    let assertions = vec![
        Assertion::check(
            "taylor_matches_fine_rk4",
            step_err <= 1e-8,
            format!("max position gap {step_err:.3e} over t = {t_probe}"),
        ),
        Assertion::check(
            "coefficient_ratios_stabilize",
            worst_ratio_step <= 0.2,
            format!("max |r_(k+1)/r_k - 1| = {worst_ratio_step:.3} for k in [{lo}, {hi}]"),
        ),
        Assertion::check(
            "growth_bound_holds",
            report.bound_holds,
            format!("C0 = {:.4}, C1 = {:.4}", report.c0_hat, report.c1_hat),
        ),
    ];
    let metrics = json!({
        "order": order,
        "radius_estimate": report.radius_estimate,
        "c0_hat": report.c0_hat,
        "c1_hat": report.c1_hat,
        "taylor_step_error": step_err,
    });
    Ok((metrics, assertions))
}

fn picard_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    if cfg.kernel.eps == 0.0 {
        return Err(Error::Config(
            "the picard scenario needs kernel.eps > 0 (the transported copy starts on \
             top of its frozen sources)"
                .into(),
        ));
    }
    let cloud = cloud_from(cfg)?;
    let kernel = cfg.kernel_config()?;
    let backend = cfg.backend_config();
    let mut horizons = cfg.picard.horizons.clone();
    horizons.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sweep = Vec::new();
    for &t in &horizons {
        let probe = picard_iterate(&cloud, &kernel, backend, t, cfg.stepper.dt, 2)?;
        sweep.push((t, probe.ratios[0]));
    }
    let sweep_rows: Vec<String> = sweep
        .iter()
        .map(|(t, r)| format!("{t:.6e},{r:.6e}"))
        .collect();
    write_rows(&out.join("sweep.csv"), "horizon,ratio", &sweep_rows)?;

    let chosen = sweep
        .iter()
        .filter(|(_, r)| *r < 0.9)
        .map(|(t, _)| *t)
        .fold(horizons[0], f64::max);
    let threshold = sweep.iter().find(|(_, r)| *r >= 0.9).map(|(t, _)| *t);

    let full = picard_iterate(
        &cloud,
        &kernel,
        backend,
        chosen,
        cfg.stepper.dt,
        cfg.picard.iterations,
    )?;
    let iter_rows: Vec<String> = full
        .distances
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{i},{d:.12e}"))
        .collect();
    write_rows(&out.join("iterations.csv"), "iteration,distance", &iter_rows)?;

    let contracting = full
        .ratios
        .iter()
        .zip(&full.distances)
        .all(|(r, d)| *d <= 1e-14 || *r < 1.0);
    let monotone = sweep.windows(2).all(|w| w[1].1 >= w[0].1 - 0.02);
    let assertions = vec![
        Assertion::check(
            "iterates_contract",
            contracting,
            format!("ratios {:?} at horizon {chosen}", full.ratios),
        ),
        Assertion::check(
            "sweep_ratios_grow_with_horizon",
            monotone,
            format!("sweep {sweep:?}"),
        ),
    ];
    let metrics = json!({
        "chosen_horizon": chosen,
        "threshold_horizon": threshold,
        "distances": full.distances,
        "ratios": full.ratios,
        "sweep": sweep.iter().map(|(t, r)| json!({"horizon": t, "ratio": r})).collect::<Vec<_>>(),
    });
    Ok((metrics, assertions))
}

fn hadamard_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    let cloud = cloud_from(cfg)?;
    let kernel = cfg.kernel_config()?;
    let backend = cfg.backend_config();
    let center = vec3(cfg.cloud.center);
    let radius = cfg.cloud.radius;

    // Fit the traveling speed from boundary samples: minimize the RMS of
    // (u - v) . n over the sphere, a 3x3 normal-equations solve.
    let field = VelocityField::new(&cloud, kernel, backend)?;
    let m = cfg.hadamard.boundary_samples;
    let mut rng = stream_rng(cfg.cloud.seed.wrapping_add(23), 2);
    let normals: Vec<Vec3> = (0..m).map(|_| unit_vector(&mut rng)).collect();
    let points: Vec<Vec3> = normals.iter().map(|n| center + radius * n).collect();
    let u = field.eval_batch(&points, Exclusion::None)?;
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (n, ui) in normals.iter().zip(&u) {
        a += n * n.transpose();
        b += ui.dot(n) * n;
    }
    let v_hat = a
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("boundary normals are degenerate".into()))?
        * b;
    let speed = v_hat.norm();
    let rms = (normals
        .iter()
        .zip(&u)
        .map(|(n, ui)| {
            let r = (ui - v_hat).dot(n);
            r * r
        })
        .sum::<f64>()
        / m as f64)
        .sqrt();
    let boundary_rows: Vec<String> = normals
        .iter()
        .zip(&u)
        .map(|(n, ui)| {
            format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                n.x, n.y, n.z, ui.x, ui.y, ui.z
            )
        })
        .collect();
    write_rows(&out.join("boundary.csv"), "nx,ny,nz,ux,uy,uz", &boundary_rows)?;

    // Travel one radius and compare against the rigidly translated start.
    let settle_time = radius / speed;
    let traj = simulate(
        &cloud,
        &kernel,
        backend,
        settle_time,
        cfg.stepper.dt,
        cfg.stepper_config(),
        &DiagnosticsSpec::default(),
    )?;
    let translated = cloud.push_forward(|x| x + settle_time * v_hat)?;
    let drift = wasserstein1(traj.final_cloud(), &translated)?.value;

    // Center velocity against the closed-form mean-field value, sharpening
    // the blob radius at fixed sample size.
    let expected = -1.0 / (4.0 * PI * radius) * E3;
    let mut center_rows = Vec::new();
    let mut center_metrics = Vec::new();
    let mut final_center_err = f64::INFINITY;
    let big = ParticleCloud::sample_uniform_ball(
        center,
        radius,
        cfg.hadamard.center_n,
        cfg.cloud.seed.wrapping_add(37),
    )?;
    let mut eps_sweep = cfg.hadamard.center_eps.clone();
    eps_sweep.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for &eps_rel in &eps_sweep {
        let k = crate::kernel::KernelConfig::regularized(eps_rel * radius)?;
        let f = VelocityField::new(&big, k, Backend::Direct)?;
        let uc = f.eval(&center, None)?;
        let err = (uc - expected).norm() / expected.norm();
        final_center_err = err;
        center_rows.push(format!(
            "{:.6e},{:.9e},{:.9e}",
            eps_rel * radius,
            uc.z,
            expected.z
        ));
        center_metrics.push(json!({"eps": eps_rel * radius, "u_z": uc.z, "rel_err": err}));
    }
    write_rows(&out.join("center_sweep.csv"), "eps,u_z,expected_z", &center_rows)?;

    let assertions = vec![
        Assertion::check(
            "boundary_normal_residual",
            rms <= cfg.hadamard.residual_tolerance * speed,
            format!("RMS (u - v).n = {rms:.3e} vs {:.1}% of |v| = {speed:.4e}",
                100.0 * cfg.hadamard.residual_tolerance),
        ),
        Assertion::check(
            "shape_drift",
            drift <= cfg.hadamard.drift_tolerance * radius,
            format!(
                "W1 to the translated start {drift:.4e} over settle time {settle_time:.3} \
                 (tolerance {:.4e})",
                cfg.hadamard.drift_tolerance * radius
            ),
        ),
        Assertion::check(
            "center_velocity",
            final_center_err <= 0.05,
            format!(
                "relative error {final_center_err:.4} at the sharpest blob (expected u_z = {:.5e})",
                expected.z
            ),
        ),
    ];
    let metrics = json!({
        "v_hat": [v_hat.x, v_hat.y, v_hat.z],
        "normal_residual_rms": rms,
        "shape_drift_w1": drift,
        "settle_time": settle_time,
        "center_sweep": center_metrics,
    });
    Ok((metrics, assertions))
}

fn control_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    let cloud = cloud_from(cfg)?;
    let kernel = cfg.kernel_config()?;
    let backend = cfg.backend_config();
    let covering = greedy_covering(&cloud, cfg.control.covering_radius)?;
    let regions: Vec<ControlRegion> = cfg
        .control
        .region_centers
        .iter()
        .map(|c| ControlRegion::new(vec3(*c), cfg.control.region_radius))
        .collect::<Result<_>>()?;
    let mut plan = staged_transport_plan(
        &cloud,
        &covering,
        Vec3::zeros(),
        cfg.control.target_radius,
        cfg.run.horizon,
        &regions,
        cfg.control.schedule_dt,
    )?;
    if cfg.control.time_scale != 1.0 {
        plan = plan.scaled(cfg.control.time_scale)?;
    }
    plan.save_json(&out.join("plan.json"))?;
    let outcome = execute_control(
        &cloud,
        &plan,
        cfg.control.absorb,
        cfg.stepper.dt,
        cfg.control.self_induction,
        &kernel,
        backend,
    )?;
    save_ledger_csv(&out.join("ledger.csv"), &outcome.ledger)?;

    let mut assertions = Vec::new();

    // Closed-loop tracking sanity shared by every configuration: a unit
    // straight line followed at dt = 1e-3 stays within 1e-3.
    if let Some(region) = regions.first() {
        let start = Vec3::new(-0.5, 0.0, 0.0);
        let dir = Vec3::new(1.0, 0.0, 0.0);
        let gamma = move |t: f64| start + t * dir;
        let track = follow_curve(start, gamma, (0.0, 1.0), 1e-3, region, None, 0.1);
        match track {
            Ok(rep) => assertions.push(Assertion::check(
                "curve_tracking",
                rep.max_deviation <= 1e-3,
                format!("max deviation {:.3e} on a unit line", rep.max_deviation),
            )),
            Err(e) => assertions.push(Assertion::check(
                "curve_tracking",
                false,
                format!("tracking probe failed: {e}"),
            )),
        }
    }

    let initial = cloud.total_mass();
    assertions.push(Assertion::check(
        "mass_ledger_complement",
        (outcome.remaining_mass + outcome.absorbed_mass - initial).abs() <= 1e-12
            && outcome.ledger.windows(2).all(|w| w[1].1 <= w[0].1),
        format!(
            "remaining {:.6e} + absorbed {:.6e} vs initial {:.6e}",
            outcome.remaining_mass, outcome.absorbed_mass, initial
        ),
    ));

    let all_in_regions = plan.stages.iter().all(|s| {
        s.schedule
            .iter()
            .filter(|f| f.force.norm() > 0.0)
            .all(|f| regions.iter().any(|r| r.contains(&f.location)))
    });
    assertions.push(Assertion::check(
        "forces_inside_regions",
        all_in_regions,
        "every nonzero scheduled force sits inside a declared region".into(),
    ));

    if cfg.control.absorb {
        let threshold = if cfg.control.self_induction { 0.05 } else { 0.01 };
        assertions.push(Assertion::check(
            "absorption",
            outcome.remaining_mass <= threshold * initial,
            format!(
                "remaining mass {:.4e} vs threshold {threshold} x initial",
                outcome.remaining_mass
            ),
        ));
        let events_ok = outcome.events.iter().all(|e| {
            (e.position - plan.target_center).norm() <= plan.target_radius
                && plan
                    .stages
                    .iter()
                    .any(|s| e.t > s.absorption_window.0 && e.t < s.absorption_window.1)
        });
        assertions.push(Assertion::check(
            "absorption_events_in_target",
            events_ok,
            format!("{} events checked", outcome.events.len()),
        ));
    } else if !cfg.control.self_induction {
        let min_radius = covering
            .iter()
            .map(|&(_, r)| r)
            .fold(f64::INFINITY, f64::min);
        let tol = 1e-2 * min_radius;
        let mut worst = 0.0f64;
        for (t, snap) in outcome
            .trajectory
            .times
            .iter()
            .zip(&outcome.trajectory.snapshots)
        {
            let boundary = plan.stages.iter().any(|s| {
                (t - s.t_start).abs() <= cfg.stepper.dt || (t - s.t_end).abs() <= cfg.stepper.dt
            });
            if !boundary {
                continue;
            }
            let miss = snap
                .positions
                .iter()
                .zip(&cloud.positions)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            worst = worst.max(miss);
        }
        assertions.push(Assertion::check(
            "stage_boundary_reset",
            worst <= tol,
            format!("max boundary displacement {worst:.3e} vs {tol:.3e}"),
        ));
    }

    let metrics = json!({
        "stages": plan.stages.len(),
        "covering_balls": covering.len(),
        "remaining_mass": outcome.remaining_mass,
        "absorbed_mass": outcome.absorbed_mass,
        "absorption_events": outcome.events.len(),
        "blob_collisions": outcome.blob_collisions,
    });
    Ok((metrics, assertions))
}

fn bench_scenario(cfg: &Config, out: &Path) -> Result<(Value, Vec<Assertion>)> {
    let kernel = cfg.kernel_config()?;
    let mut rows = Vec::new();
    for (i, &n) in cfg.bench.ns.iter().enumerate() {
        let cloud = ParticleCloud::sample_uniform_ball(
            vec3(cfg.cloud.center),
            cfg.cloud.radius,
            n,
            cfg.cloud.seed.wrapping_add(i as u64),
        )?;
        // Evaluate at as many targets as sources so the direct backend
        // really pays its quadratic cost.
        rows.extend(run_benchmark(
            &cloud,
            kernel,
            &cfg.bench.thetas,
            cfg.bench.leaf_size,
            n,
            cfg.cloud.seed.wrapping_add(100 + i as u64),
        )?);
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("bench.csv"))?);
    write_benchmark_csv(&rows, &mut f)?;
    f.flush()?;
    drop(f);

    let mut assertions = Vec::new();
    let moderate: Vec<&crate::velocity::BenchRow> = rows
        .iter()
        .filter(|r| r.backend == "treecode" && r.theta <= 0.45)
        .collect();
    let worst_err = moderate.iter().map(|r| r.rel_err).fold(0.0f64, f64::max);
    assertions.push(Assertion::check(
        "treecode_accuracy",
        !moderate.is_empty() && worst_err <= 1e-3,
        format!("max rel l2 error {worst_err:.3e} over theta <= 0.45"),
    ));

    let direct: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.backend == "direct")
        .map(|r| (r.n as f64, r.seconds))
        .collect();
    if direct.len() >= 3 {
        let xs: Vec<f64> = direct.iter().map(|(n, _)| n.ln()).collect();
        let ys: Vec<f64> = direct.iter().map(|(_, s)| s.ln()).collect();
        let m = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / m;
        let ym = ys.iter().sum::<f64>() / m;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assertions.push(Assertion::check(
            "direct_quadratic_scaling",
            (1.7..=2.3).contains(&slope),
            format!("log-log slope {slope:.2}"),
        ));
    }

    if let Some(&n_max) = cfg.bench.ns.iter().max() {
        if n_max >= 100_000 {
            let d = rows
                .iter()
                .find(|r| r.backend == "direct" && r.n == n_max)
                .map(|r| r.seconds);
            let t = rows
                .iter()
                .filter(|r| r.backend == "treecode" && r.n == n_max && r.theta <= 0.45)
                .map(|r| r.seconds)
                .fold(f64::INFINITY, f64::min);
            if let Some(d) = d {
                let speedup = d / t;
                assertions.push(Assertion::check(
                    "treecode_speedup",
                    speedup >= 3.0,
                    format!("{speedup:.1}x at N = {n_max} (soft goal 10x, hard floor 3x)"),
                ));
            }
        }
    }

    let metrics = json!({
        "rows": rows.iter().map(|r| json!({
            "n": r.n, "backend": r.backend, "theta": r.theta,
            "seconds": r.seconds, "rel_err": r.rel_err,
        })).collect::<Vec<_>>(),
    });
    Ok((metrics, assertions))
}
