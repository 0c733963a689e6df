//! The demo operations behind the browser page, written against plain
//! types so they compile and test on any target. The bindings in the
//! crate root only translate errors at the boundary.

use serde_json::json;
use wanderlab::blowup::{
    build_ball_system, AmplitudeRule, BallSchedule, BallSystem, BallSystemParams,
    DistortionProfile, SyntheticField,
};
use wanderlab::distortion::{lemma1_report, trace_cocycle_distortion};
use wanderlab::dynamics::{TorusPoint, TranslationVector};
use wanderlab::plot::{ball_layout_svg, trap_geometry_svg, LinePlot};
use wanderlab::trap::{certify_trap, contradiction_report, minimality_evidence};
use wanderlab::{Error, Result};

/// Interactive rebuilds stay responsive below this window size.
const MAX_WINDOW: usize = 5000;

fn build(window: usize, c_r: f64, p: f64) -> Result<BallSystem> {
    if window > MAX_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "window {window} too large for the interactive demo (max {MAX_WINDOW})"
        )));
    }
    let params = BallSystemParams {
        theta: TranslationVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0], true)?,
        seed: TorusPoint::origin(2),
        window,
        schedule: BallSchedule { c_r, exponent: p },
        volume_budget: 0.5,
    };
    build_ball_system(&params)
}

/// Places the wandering-ball system on the 2-torus and draws its layout.
pub fn ball_layout(window: usize, c_r: f64, p: f64) -> Result<String> {
    ball_layout_svg(&build(window, c_r, p)?)
}

/// Traces the distortion cocycle from the earliest ball and plots the
/// direct distance against the telescoped per-ball budget.
pub fn distortion_plot(window: usize, rule: &str, amount: f64) -> Result<String> {
    let system = build(window, 0.05, 0.8)?;
    let amplitude = match rule {
        "constant" => AmplitudeRule::Constant { eps: amount },
        "volume-scaled" => AmplitudeRule::VolumeScaled { bound: amount },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown rule {other} (constant or volume-scaled)"
            )))
        }
    };
    let profile = DistortionProfile::new(2, amplitude, DistortionProfile::diagonal_direction(2))?;
    let field = SyntheticField::new(&system, profile)?;
    let start_ball = -(window as i64) / 2;
    let start = system.center(start_ball).ok_or(Error::NotInSystem)?.clone();
    let trace = trace_cocycle_distortion(&field, &start, window)?;
    let direct: Vec<(f64, f64)> =
        trace.direct().iter().enumerate().map(|(i, d)| (i as f64, *d)).collect();
    let budget: Vec<(f64, f64)> =
        trace.telescoped().iter().enumerate().map(|(i, t)| (i as f64, *t)).collect();
    let report = lemma1_report(&trace, if rule == "volume-scaled" { amount } else { 1.0 })?;
    let title = format!(
        "distortion along the orbit ({} rule, sup {:.3e})",
        rule, report.sup_direct
    );
    LinePlot::new(&title, "n", "distance to round")
        .series("direct D_n", direct)
        .series("telescoped T_n", budget)
        .render()
}

/// Certifies a contracting return trap and reports the geometry sketch,
/// the full certificate, and the contradiction clauses as one JSON payload.
pub fn trap_certificate(
    window: usize,
    lambda: f64,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<String> {
    let system = build(window, 0.05, 0.8)?;
    let cert = certify_trap(&system, lambda, horizon, samples, 0.0, seed)?;
    let evidence = minimality_evidence(system.theta(), horizon);
    let report = contradiction_report(&system, &cert, &evidence)?;
    let svg = trap_geometry_svg(&system, &report.certificate)?;
    let payload = json!({
        "svg": svg,
        "certificate": report.certificate,
        "clauses": {
            "orbit_follows_translation": report.orbit_follows_translation,
            "periodic_point_found": report.periodic_point_found,
            "contradiction": report.contradiction,
        },
        "minimality": {
            "min_separation": report.minimality.min_separation,
            "closest_n": report.minimality.closest_n,
        },
    });
    Ok(payload.to_string())
}
