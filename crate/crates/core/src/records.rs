//! Serialization of experiment artifacts: versioned ball-system records,
//! trap certificates, and distortion trace tables.
//!
//! Records are line-delimited structured text. Every float is written with
//! a shortest-exact formatter, so reading a record back reproduces the
//! original values bit for bit.

use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::blowup::{BallSchedule, BallSystem, RepairEvent};
use crate::distortion::DistortionTrace;
use crate::dynamics::{TorusPoint, TranslationVector};
use crate::error::Error;
use crate::trap::TrapCertificate;
use crate::Result;

pub const BALL_SYSTEM_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BallSystemHeader {
    record: String,
    version: u32,
    k: usize,
    #[serde(rename = "J")]
    window: usize,
    theta: Vec<f64>,
    theta_irrational: bool,
    seed: Vec<f64>,
    c_r: f64,
    p: f64,
    budget: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BallSystemCenters {
    centers: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BallSystemRadii {
    radii: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BallSystemRepairs {
    repair_log: Vec<RepairEvent>,
}

/// Writes the four-line ball-system record: header, centers, radii, repairs.
pub fn write_ball_system<W: Write>(mut w: W, system: &BallSystem) -> Result<()> {
    let header = BallSystemHeader {
        record: "ball_system".into(),
        version: BALL_SYSTEM_VERSION,
        k: system.dim(),
        window: system.window(),
        theta: system.theta().components().to_vec(),
        theta_irrational: system.theta().declared_irrational(),
        seed: system.seed().coords().to_vec(),
        c_r: system.schedule().c_r,
        p: system.schedule().exponent,
        budget: system.volume_budget(),
    };
    let centers = BallSystemCenters {
        centers: system.balls().map(|b| b.center.coords().to_vec()).collect(),
    };
    let radii = BallSystemRadii { radii: system.balls().map(|b| b.radius).collect() };
    let repairs = BallSystemRepairs { repair_log: system.repair_log().to_vec() };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    writeln!(w, "{}", serde_json::to_string(&centers)?)?;
    writeln!(w, "{}", serde_json::to_string(&radii)?)?;
    writeln!(w, "{}", serde_json::to_string(&repairs)?)?;
    Ok(())
}

pub fn ball_system_to_string(system: &BallSystem) -> Result<String> {
    let mut buf = Vec::new();
    write_ball_system(&mut buf, system)?;
    Ok(String::from_utf8(buf).expect("serializer emits utf-8"))
}

/// Reads a record produced by [`write_ball_system`], revalidating every
/// structural invariant before handing back a live system.
pub fn read_ball_system<R: BufRead>(r: R) -> Result<BallSystem> {
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::RecordFormat(format!("missing {what} line")))
    };
    let header: BallSystemHeader = serde_json::from_str(&next("header")?)?;
    if header.record != "ball_system" {
        return Err(Error::RecordFormat(format!(
            "expected a ball_system record, found {:?}",
            header.record
        )));
    }
    if header.version != BALL_SYSTEM_VERSION {
        return Err(Error::RecordFormat(format!(
            "unsupported ball_system version {}",
            header.version
        )));
    }
    let centers: BallSystemCenters = serde_json::from_str(&next("centers")?)?;
    let radii: BallSystemRadii = serde_json::from_str(&next("radii")?)?;
    let repairs: BallSystemRepairs = serde_json::from_str(&next("repair_log")?)?;

    let theta = TranslationVector::new(header.theta, header.theta_irrational)?;
    let seed = TorusPoint::new(header.seed)?;
    let centers = centers
        .centers
        .into_iter()
        .map(TorusPoint::new)
        .collect::<Result<Vec<_>>>()?;
    BallSystem::from_parts(
        theta,
        seed,
        header.window,
        BallSchedule { c_r: header.c_r, exponent: header.p },
        header.budget,
        centers,
        radii.radii,
        repairs.repair_log,
    )
}

pub fn ball_system_from_str(s: &str) -> Result<BallSystem> {
    read_ball_system(s.as_bytes())
}

/// One-line structured text form of a trap certificate.
pub fn certificate_to_string(cert: &TrapCertificate) -> Result<String> {
    Ok(serde_json::to_string(cert)?)
}

pub fn certificate_from_str(s: &str) -> Result<TrapCertificate> {
    Ok(serde_json::from_str(s.trim())?)
}

/// Appends one serialized record line to a file, creating it if needed.
/// Append-only by construction: existing content is never rewritten.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Reads every record line of a jsonl file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Writes the distortion trace as a tab-separated table with the columns
/// step, d_i, T_n, D_n, ball_index, vol. Row n covers the n-th step, so
/// T and D are the totals after it.
pub fn write_trace_table<W: Write>(mut w: W, trace: &DistortionTrace) -> Result<()> {
    writeln!(w, "step\td_i\tT_n\tD_n\tball_index\tvol")?;
    for (i, s) in trace.steps().iter().enumerate() {
        let ball = s.ball.map_or_else(|| "-".to_string(), |j| j.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            i,
            fmt(s.distance),
            fmt(trace.telescoped()[i + 1]),
            fmt(trace.direct()[i + 1]),
            ball,
            fmt(s.volume),
        )?;
    }
    Ok(())
}

pub fn trace_table_to_string(trace: &DistortionTrace) -> Result<String> {
    let mut buf = Vec::new();
    write_trace_table(&mut buf, trace)?;
    Ok(String::from_utf8(buf).expect("table is utf-8"))
}

/// The standard formatter is shortest-exact for f64, so the table parses
/// back to the stored bits.
fn fmt(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blowup::{
        build_ball_system, AmplitudeRule, BallSystemParams, DistortionProfile, SyntheticField,
    };
    use crate::distortion::trace_cocycle_distortion;
    use crate::trap::certify_trap;

    fn sample_system(window: usize) -> BallSystem {
        let params = BallSystemParams {
            theta: TranslationVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0], true)
                .unwrap(),
            seed: TorusPoint::origin(2),
            window,
            schedule: BallSchedule { c_r: 0.05, exponent: 0.8 },
            volume_budget: 0.5,
        };
        build_ball_system(&params).unwrap()
    }

    #[test]
    fn ball_system_round_trips_bit_exact() {
        let system = sample_system(25);
        let text = ball_system_to_string(&system).unwrap();
        let back = ball_system_from_str(&text).unwrap();
        assert_eq!(system.window(), back.window());
        for (a, b) in system.balls().zip(back.balls()) {
            assert_eq!(a.center.coords(), b.center.coords());
            assert!(a.radius == b.radius, "radius drifted in round trip");
        }
        assert_eq!(system.repair_log(), back.repair_log());
        // and the re-serialized text is identical
        assert_eq!(text, ball_system_to_string(&back).unwrap());
    }

    #[test]
    fn tampered_records_are_rejected() {
        let system = sample_system(5);
        let text = ball_system_to_string(&system).unwrap();
        // corrupt one radius so two balls overlap
        let big = text.replace("\"radii\":[", "\"radii\":[0.9,");
        let big = {
            // keep the count right: drop the last radius
            let lines: Vec<&str> = big.lines().collect();
            let radii_line = lines[2];
            let fixed = radii_line.rfind(',').map(|p| format!("{}]}}", &radii_line[..p]));
            format!("{}\n{}\n{}\n{}\n", lines[0], lines[1], fixed.unwrap(), lines[3])
        };
        assert!(ball_system_from_str(&big).is_err());

        let unversioned = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            ball_system_from_str(&unversioned),
            Err(Error::RecordFormat(_))
        ));

        let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            ball_system_from_str(&truncated),
            Err(Error::RecordFormat(_))
        ));
    }

    #[test]
    fn certificate_round_trips() {
        let system = sample_system(2000);
        let cert = certify_trap(&system, 2.0, 2000, 200, 0.0, 5).unwrap();
        let line = certificate_to_string(&cert).unwrap();
        assert!(!line.contains('\n'));
        let back = certificate_from_str(&line).unwrap();
        assert_eq!(cert, back);
        assert!(line.contains("rng_seed"));
        assert!(line.contains("threshold_radius"));
        assert!(line.contains("worst_margin"));
        assert!(line.contains("fixed_point_residual"));
    }

    #[test]
    fn trace_table_has_the_documented_columns() {
        let system = sample_system(10);
        let field = SyntheticField::new(
            &system,
            DistortionProfile::new(
                2,
                AmplitudeRule::Constant { eps: 0.1 },
                DistortionProfile::diagonal_direction(2),
            )
            .unwrap(),
        )
        .unwrap();
        let start = system.center(-5).unwrap().clone();
        let trace = trace_cocycle_distortion(&field, &start, 8).unwrap();
        let table = trace_table_to_string(&trace).unwrap();
        let mut lines = table.lines();
        assert_eq!(lines.next().unwrap(), "step\td_i\tT_n\tD_n\tball_index\tvol");
        assert_eq!(lines.count(), 8);
        // values parse back to the stored floats
        let row: Vec<&str> = table.lines().nth(2).unwrap().split('\t').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[1].parse::<f64>().unwrap(), trace.steps()[1].distance);
        assert_eq!(row[3].parse::<f64>().unwrap(), trace.direct()[2]);
    }

    #[test]
    fn jsonl_appends_and_reads_back() {
        let dir = std::env::temp_dir().join(format!("records-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("events.jsonl");
        let _ = std::fs::remove_file(&path);
        append_jsonl(&path, &serde_json::json!({"stage": "one", "value": 0.1})).unwrap();
        append_jsonl(&path, &serde_json::json!({"stage": "two", "value": 0.2})).unwrap();
        let rows: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1]["stage"], "two");
        std::fs::remove_file(&path).unwrap();
    }
}
