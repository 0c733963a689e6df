//! The experiment pipelines behind each subcommand. Every run writes
//! `results.jsonl` (machine-readable, deterministic for a given config and
//! seed: no timestamps, no absolute paths) and `summary.txt` (human-readable,
//! carries timings). Certificates and ball-system records go to append-only
//! files named by the experiment id.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::json;

use wanderlab::blowup::{
    build_ball_system, AmplitudeRule, BallSchedule, BallSystem, BallSystemParams,
    DistortionProfile, SyntheticField,
};
use wanderlab::confspace::{act, beltrami, conf_dist, dilatation, dist_to_base, ConformalStructure};
use wanderlab::distortion::{fit_per_ball_constant, lemma1_report, trace_cocycle_distortion};
use wanderlab::dynamics::denjoy::{DenjoyCircleMap, DenjoyParams};
use wanderlab::dynamics::{rotation_vector, TorusPoint, TranslationVector};
use wanderlab::plot::{ball_layout_svg, trap_geometry_svg, LinePlot};
use wanderlab::records::{append_jsonl, ball_system_to_string, BALL_SYSTEM_VERSION};
use wanderlab::trap::{certify_trap, contradiction_report, minimality_evidence, TrapCertificate};
use wanderlab::{sample, Error};

use crate::config::ResolvedConfig;

/// Collects records and summary lines for one run, then writes the report
/// files. Kept separate from pipeline logic so error paths still flush
/// everything gathered so far.
pub struct Runner {
    config: ResolvedConfig,
    out: PathBuf,
    plots: bool,
    records: Vec<serde_json::Value>,
    summary: Vec<String>,
    started: Instant,
    last_stage: Instant,
}

impl Runner {
    pub fn new(config: ResolvedConfig, out: PathBuf, plots: bool) -> std::io::Result<Self> {
        std::fs::create_dir_all(&out)?;
        let hash = config.sha256();
        let header = json!({
            "record": "run",
            "kind": config.kind,
            "config_sha256": hash,
            "seed": config.seed,
            "versions": {
                "wanderlab": wanderlab::VERSION,
                "cli": env!("CARGO_PKG_VERSION"),
                "ball_system_record": BALL_SYSTEM_VERSION,
            },
            "config": serde_json::to_value(&config).expect("config serializes"),
        });
        let summary = vec![
            format!("experiment {}", config.experiment_id()),
            format!("config sha256 {hash}"),
            format!(
                "versions: wanderlab {}, cli {}, ball-system record v{}",
                wanderlab::VERSION,
                env!("CARGO_PKG_VERSION"),
                BALL_SYSTEM_VERSION
            ),
        ];
        let now = Instant::now();
        Ok(Self {
            config,
            out,
            plots,
            records: vec![header],
            summary,
            started: now,
            last_stage: now,
        })
    }

    fn config(&self) -> &ResolvedConfig {
        &self.config
    }

    fn stage(&mut self, record: serde_json::Value, line: String) {
        let ms = self.last_stage.elapsed().as_secs_f64() * 1e3;
        self.last_stage = Instant::now();
        self.summary.push(format!("{line} [{ms:.0} ms]"));
        self.records.push(record);
    }

    fn side_file(&self, suffix: &str) -> PathBuf {
        self.out.join(format!("{}.{suffix}", self.config.experiment_id()))
    }

    fn plot(&mut self, suffix: &str, svg: String) -> std::io::Result<()> {
        if !self.plots {
            return Ok(());
        }
        let path = self.side_file(suffix);
        std::fs::write(&path, svg)?;
        self.summary.push(format!("plot {}", path.display()));
        Ok(())
    }

    /// Writes results.jsonl and summary.txt; called on both success and
    /// pipeline failure.
    pub fn flush(&mut self) -> std::io::Result<()> {
        let mut body = String::new();
        for r in &self.records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        std::fs::write(self.out.join("results.jsonl"), body)?;
        let total = self.started.elapsed().as_secs_f64();
        let mut text = self.summary.join("\n");
        text.push_str(&format!("\ntotal {total:.2} s\n"));
        std::fs::write(self.out.join("summary.txt"), text)
    }

    pub fn record_error(&mut self, e: &Error) {
        let code = match e {
            Error::TrapNotFound { .. } => "NotFound",
            Error::PerStepViolation { .. } => "PerStepViolation",
            Error::IncompleteEvidence { .. } => "IncompleteEvidence",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InfeasibleWindow { .. } => "InfeasibleWindow",
            Error::RationalOrbit { .. } => "RationalOrbit",
            _ => "PipelineError",
        };
        self.records.push(json!({
            "record": "error",
            "code": code,
            "message": e.to_string(),
        }));
        self.summary.push(format!("error {code}: {e}"));
    }
}

pub fn run_pipeline(runner: &mut Runner) -> Result<(), Error> {
    match runner.config().kind.as_str() {
        "conf" => conf(runner),
        "denjoy" => denjoy(runner),
        "blowup" => blowup(runner),
        "distort" => distort(runner),
        "trap" => trap(runner),
        "demo-theorem" => demo_theorem(runner),
        other => Err(Error::InvalidParameter(format!("unknown pipeline {other}"))),
    }
}

fn build_system(c: &ResolvedConfig) -> Result<BallSystem, Error> {
    let params = BallSystemParams {
        theta: TranslationVector::new(c.theta.clone(), true)?,
        seed: TorusPoint::origin(c.k),
        window: c.window,
        schedule: BallSchedule { c_r: c.c_r, exponent: c.p },
        volume_budget: c.volume_budget,
    };
    build_ball_system(&params)
}

fn profile_for(c: &ResolvedConfig) -> Result<DistortionProfile, Error> {
    let amplitude = match c.profile_rule.as_str() {
        "constant" => AmplitudeRule::Constant { eps: c.profile_eps0 },
        "volume-scaled" => AmplitudeRule::VolumeScaled { bound: c.profile_multiplier },
        "single-ball" => AmplitudeRule::SingleBall { index: 0, eps: c.profile_eps0 },
        other => return Err(Error::InvalidParameter(format!("unknown amplitude rule {other}"))),
    };
    DistortionProfile::new(c.profile_m, amplitude, DistortionProfile::diagonal_direction(c.k))
}

fn conf(runner: &mut Runner) -> Result<(), Error> {
    let c = runner.config().clone();
    let mut worst_sym = 0.0_f64;
    let mut worst_tri = f64::INFINITY;
    let mut worst_inv = 0.0_f64;
    for k in 2..=4usize {
        let mut r = sample::rng(c.seed, k as u64);
        let base = ConformalStructure::base(k);
        for _ in 0..c.conf_triples {
            let structure = |r: &mut _| -> Result<ConformalStructure, Error> {
                let a = sample::bounded_eccentricity_matrix(k, 1.2, r)?;
                act(&a, &base)
            };
            let p = structure(&mut r)?;
            let q = structure(&mut r)?;
            let s = structure(&mut r)?;
            let dpq = conf_dist(&p, &q)?;
            worst_sym = worst_sym.max((dpq - conf_dist(&q, &p)?).abs());
            worst_tri = worst_tri.min(dpq + conf_dist(&q, &s)? - conf_dist(&p, &s)?);
            let scale: f64 = r.gen_range(0.5..2.0);
            let a = sample::bounded_eccentricity_matrix(k, 1.0, &mut r)? * scale;
            let moved = conf_dist(&act(&a, &p)?, &act(&a, &q)?)?;
            worst_inv = worst_inv.max((moved - dpq).abs());
        }
    }
    let metric_pass = worst_sym <= 1e-10 && worst_tri >= -1e-9 && worst_inv <= 1e-8;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "metric-suite",
            "triples_per_dimension": c.conf_triples,
            "worst_symmetry": worst_sym,
            "worst_triangle_slack": worst_tri,
            "worst_invariance": worst_inv,
            "pass": metric_pass,
        }),
        format!(
            "metric suite: symmetry {worst_sym:.2e}, triangle slack {worst_tri:.2e}, invariance {worst_inv:.2e}"
        ),
    );

    let mut r = sample::rng(c.seed, 0x2d);
    let mut worst_mu = 0.0_f64;
    let mut worst_log = 0.0_f64;
    let mut done = 0usize;
    while done < c.conf_bridge_matrices {
        let a = DMatrix::<f64>::from_fn(2, 2, |_, _| r.gen_range(-1.0..1.0));
        let det = a.determinant();
        if det.abs() < 0.05 {
            continue;
        }
        let a = if det < 0.0 {
            let mut b = a;
            b[(0, 1)] = -b[(0, 1)];
            b[(1, 1)] = -b[(1, 1)];
            b
        } else {
            a
        };
        let dil = dilatation(&a)?;
        let mu = beltrami(&a)?.norm();
        worst_mu = worst_mu.max((dil - (1.0 + mu) / (1.0 - mu)).abs());
        worst_log = worst_log.max((dist_to_base(&a)? - 2f64.sqrt() * dil.ln()).abs());
        done += 1;
    }
    let bridge_pass = worst_mu <= 1e-9 && worst_log <= 1e-9;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "planar-bridge",
            "matrices": c.conf_bridge_matrices,
            "worst_dilatation_gap": worst_mu,
            "worst_distance_gap": worst_log,
            "pass": bridge_pass,
        }),
        format!("planar bridge: dilatation gap {worst_mu:.2e}, distance gap {worst_log:.2e}"),
    );
    Ok(())
}

fn denjoy(runner: &mut Runner) -> Result<(), Error> {
    let c = runner.config().clone();
    let map = DenjoyCircleMap::build(DenjoyParams {
        alpha: c.denjoy_alpha,
        c: c.denjoy_c,
        truncation: c.denjoy_truncation,
        tail_tol: c.denjoy_tail_tol,
        interval_exponent: c.denjoy_p,
    })?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "build",
            "alpha": c.denjoy_alpha,
            "inserted_length": map.inserted_length(),
            "tail_bound": map.tail_bound(),
            "cantor_measure": map.cantor_measure(),
            "gap_count": map.gap_count(),
        }),
        format!(
            "circle map: inserted length {:.9}, tail bound {:.2e}, {} gaps",
            map.inserted_length(),
            map.tail_bound(),
            map.gap_count()
        ),
    );

    let n = c.denjoy_rotation_iterations;
    let est = rotation_vector(&map, &TorusPoint::new(vec![0.37])?, n)?;
    let gap = (est.vector[0] - c.denjoy_alpha).abs();
    runner.stage(
        json!({
            "record": "stage",
            "stage": "rotation",
            "iterations": n,
            "estimate": est.vector[0],
            "error_bound": est.error_bound,
            "alpha_gap": gap,
        }),
        format!("rotation number: estimate gap {gap:.2e} after {n} steps"),
    );

    let (_, len0) = map.interval(0)?;
    let mut growth = Vec::new();
    for n in [10usize, 100, 1000] {
        let measured = map.seed_gap_log_growth(n, 256)?;
        let (_, lenn) = map.interval(n as i64)?;
        growth.push(json!({
            "n": n,
            "max_abs_log_derivative": measured,
            "mean_value_floor": (len0 / lenn).ln(),
        }));
    }
    runner.stage(
        json!({"record": "stage", "stage": "growth", "seed_interval_growth": growth}),
        "derivative growth measured at n = 10, 100, 1000".into(),
    );

    if runner.plots {
        let mut measured = Vec::new();
        let mut floor = Vec::new();
        let mut n = 1usize;
        while n <= 1024 {
            measured.push((n as f64, map.seed_gap_log_growth(n, 64)?));
            let (_, lenn) = map.interval(n as i64)?;
            floor.push((n as f64, (len0 / lenn).ln()));
            n *= 2;
        }
        let svg = LinePlot::new("seed-interval derivative growth", "n", "max |log Df^n|")
            .log_x()
            .series("measured", measured)
            .series("mean-value floor", floor)
            .render()?;
        runner.plot("growth.svg", svg)?;
    }
    Ok(())
}

fn blowup_stage(runner: &mut Runner) -> Result<BallSystem, Error> {
    let c = runner.config().clone();
    let system = build_system(&c)?;
    let record_path = runner.side_file("ball-system.txt");
    std::fs::write(&record_path, ball_system_to_string(&system)?).map_err(Error::from)?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "build",
            "k": system.dim(),
            "window": system.window(),
            "balls": 2 * system.window() + 1,
            "total_volume": system.total_volume(),
            "min_clearance": system.min_clearance(),
            "repair_events": system.repair_log().len(),
            "record_file": record_path.file_name().and_then(|s| s.to_str()),
        }),
        format!(
            "ball system: {} balls, volume {:.6e}, min clearance {:.2e}, {} repairs",
            2 * system.window() + 1,
            system.total_volume(),
            system.min_clearance(),
            system.repair_log().len()
        ),
    );
    let svg = ball_layout_svg(&system)?;
    runner.plot("balls.svg", svg).map_err(Error::from)?;
    Ok(system)
}

fn blowup(runner: &mut Runner) -> Result<(), Error> {
    blowup_stage(runner)?;
    Ok(())
}

fn distortion_stages(
    runner: &mut Runner,
    system: &BallSystem,
    field: &SyntheticField,
    multiplier: f64,
    stage_name: &str,
) -> Result<bool, Error> {
    let c = runner.config().clone();
    let start_ball = -(c.window as i64) / 2;
    let start = system
        .center(start_ball)
        .ok_or(Error::NotInSystem)?
        .clone();
    let trace = trace_cocycle_distortion(field, &start, c.window)?;
    let report = lemma1_report(&trace, multiplier)?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": stage_name,
            "start_ball": start_ball,
            "steps": trace.len(),
            "rule": c.profile_rule,
            "multiplier": multiplier,
            "sup_direct": report.sup_direct,
            "visited_volume": report.visited_volume,
            "bound": report.bound,
            "margin": report.margin,
            "per_step_ok": report.per_step_ok,
            "best_multiplier": report.best_multiplier,
            "distinct_balls": report.distinct_balls,
            "revisits": report.revisits,
            "pass": report.pass,
        }),
        format!(
            "{stage_name}: sup {:.4e} vs bound {:.4e} over {} steps ({})",
            report.sup_direct,
            report.bound,
            trace.len(),
            if report.pass { "holds" } else { "fails" }
        ),
    );

    if runner.plots {
        let direct: Vec<(f64, f64)> =
            trace.direct().iter().enumerate().map(|(i, d)| (i as f64, *d)).collect();
        let budget: Vec<(f64, f64)> =
            trace.telescoped().iter().enumerate().map(|(i, t)| (i as f64, *t)).collect();
        let svg = LinePlot::new("distortion along the orbit", "n", "distance to round")
            .series("direct D_n", direct)
            .series("telescoped T_n", budget)
            .render()?;
        runner.plot("distortion.svg", svg)?;
    }
    Ok(report.pass)
}

fn flatness_stage(runner: &mut Runner, system: &BallSystem, field: &SyntheticField) -> Result<(), Error> {
    let c = runner.config().clone();
    if c.window == 0 {
        // the only ball is the window edge; its field has no successor
        runner.stage(
            json!({"record": "stage", "stage": "flatness", "skipped": true}),
            "flatness: skipped (window 0)".into(),
        );
        return Ok(());
    }
    let fit = fit_per_ball_constant(field, 0, 500, c.seed)?;
    let ball = system.ball(0).ok_or(Error::NotInSystem)?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "flatness",
            "ball": 0,
            "radius": ball.radius,
            "samples": fit.samples,
            "c_sup": fit.c_sup,
            "log_log_slope": fit.slope,
        }),
        format!(
            "flatness on ball 0: C {:.4e}, slope {}",
            fit.c_sup,
            fit.slope.map_or("n/a".into(), |s| format!("{s:.3}"))
        ),
    );

    if runner.plots {
        let mut points = Vec::new();
        for t in 1..=100 {
            let l = ball.radius * t as f64 / 100.0;
            let offset = (ball.radius * ball.radius - l * l).max(0.0).sqrt();
            let mut coords = ball.center.coords().to_vec();
            coords[0] = (coords[0] + offset).rem_euclid(1.0);
            let x = TorusPoint::new(coords)?;
            let d = dist_to_base(&field.jacobian_at(&x)?)?;
            points.push((l, d));
        }
        let svg = LinePlot::new("per-ball flatness", "chord half-length", "distortion")
            .log_x()
            .log_y()
            .series("ball 0", points)
            .render()?;
        runner.plot("flatness.svg", svg)?;
    }
    Ok(())
}

fn distort(runner: &mut Runner) -> Result<(), Error> {
    let c = runner.config().clone();
    let system = build_system(&c)?;
    let field = SyntheticField::new(&system, profile_for(&c)?)?;
    distortion_stages(runner, &system, &field, c.profile_multiplier, "volume-bound")?;
    flatness_stage(runner, &system, &field)?;
    Ok(())
}

fn trap_stages(runner: &mut Runner, system: &BallSystem) -> Result<TrapCertificate, Error> {
    let c = runner.config().clone();
    let cert = certify_trap(system, c.lambda, c.horizon, c.samples, c.inclusion_margin, c.seed)?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "trap-search",
            "trap_time": cert.trap_time,
            "alpha0": cert.alpha0,
            "alpha_n": cert.alpha_n,
            "threshold_radius": cert.threshold_radius,
            "center_displacement": cert.center_displacement,
            "threshold_displacement": cert.threshold_displacement,
            "lambda": cert.lambda,
            "lambda_prime": cert.lambda_prime,
            "lambda_prime_raw": cert.lambda_prime_raw,
        }),
        format!(
            "trap at n = {}: radius {:.3e} < {:.3e}, displacement {:.4e} < {:.4e}, lambda' {:.3}",
            cert.trap_time,
            cert.alpha_n,
            cert.threshold_radius,
            cert.center_displacement,
            cert.threshold_displacement,
            cert.lambda_prime
        ),
    );
    runner.stage(
        json!({
            "record": "stage",
            "stage": "inclusion",
            "verified": cert.inclusion_verified,
            "worst_margin": cert.worst_margin,
            "samples": cert.inclusion_samples,
            "triangle_margin": cert.intermediate_inclusion_margin(),
        }),
        format!(
            "inclusion: margin {:.3e} over {} samples",
            cert.worst_margin, cert.inclusion_samples
        ),
    );
    runner.stage(
        json!({
            "record": "stage",
            "stage": "fixed-point",
            "point": cert.fixed_point,
            "residual": cert.fixed_point_residual,
            "converged": cert.fixed_point_converged,
            "closed_form_gap": cert.closed_form_gap,
        }),
        format!(
            "fixed point: residual {:.2e}, closed-form gap {:.2e}",
            cert.fixed_point_residual, cert.closed_form_gap
        ),
    );

    let evidence = minimality_evidence(system.theta(), c.horizon);
    let report = contradiction_report(system, &cert, &evidence)?;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "contradiction",
            "orbit_follows_translation": report.orbit_follows_translation,
            "max_orbit_deviation": report.max_orbit_deviation,
            "min_orbit_separation": report.minimality.min_separation,
            "closest_return": report.minimality.closest_n,
            "periodic_point_found": report.periodic_point_found,
            "period": report.period,
            "contradiction": report.contradiction,
        }),
        format!(
            "contradiction clauses {:?} -> {}",
            report.clauses(),
            report.contradiction
        ),
    );

    let certified = report.certificate.clone();
    append_jsonl(&runner.side_file("certs.jsonl"), &certified)?;
    let svg = trap_geometry_svg(system, &certified)?;
    runner.plot("trap.svg", svg).map_err(Error::from)?;
    Ok(certified)
}

fn trap(runner: &mut Runner) -> Result<(), Error> {
    let c = runner.config().clone();
    let system = build_system(&c)?;
    trap_stages(runner, &system)?;
    Ok(())
}

fn demo_theorem(runner: &mut Runner) -> Result<(), Error> {
    let c = runner.config().clone();
    let system = blowup_stage(runner)?;

    let field = SyntheticField::new(
        &system,
        DistortionProfile::new(
            c.profile_m,
            AmplitudeRule::VolumeScaled { bound: c.profile_multiplier },
            DistortionProfile::diagonal_direction(c.k),
        )?,
    )?;
    let bound_holds = distortion_stages(runner, &system, &field, c.profile_multiplier, "volume-bound")?;
    flatness_stage(runner, &system, &field)?;

    let cert = trap_stages(runner, &system)?;

    let demonstrated = bound_holds && cert.is_valid() && cert.contradiction;
    runner.stage(
        json!({
            "record": "stage",
            "stage": "verdict",
            "volume_bound": bound_holds,
            "certificate_valid": cert.is_valid(),
            "contradiction": cert.contradiction,
            "demonstrated": demonstrated,
        }),
        format!("demonstration {}", if demonstrated { "complete" } else { "FAILED" }),
    );
    if !demonstrated {
        return Err(Error::IncompleteEvidence {
            missing: "demonstration did not close; see the verdict stage".into(),
        });
    }
    Ok(())
}
