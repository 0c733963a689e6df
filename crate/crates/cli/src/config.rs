//! Experiment configuration: strict TOML sections, defaults, validation,
//! and the canonical hash embedded in every report.
//!
//! Unknown keys are rejected so a config file always means what it says;
//! misspelled knobs fail loudly instead of silently running defaults.

// validation guards are written `!(x > 0.0)` so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Output-directory override honored when `--out` is absent.
pub const OUT_ENV_VAR: &str = "WANDERLAB_OUT";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Raw config file: every field optional, every section strict.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub space: Option<SpaceSection>,
    pub translation: Option<TranslationSection>,
    pub schedule: Option<ScheduleSection>,
    pub profile: Option<ProfileSection>,
    pub trap: Option<TrapSection>,
    pub denjoy: Option<DenjoySection>,
    pub conf: Option<ConfSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationSection {
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub c_r: Option<f64>,
    pub p: Option<f64>,
    pub window: Option<usize>,
    pub volume_budget: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub m: Option<u32>,
    pub eps0: Option<f64>,
    pub rule: Option<String>,
    pub multiplier: Option<f64>,
    pub direction: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub lambda: Option<f64>,
    pub horizon: Option<usize>,
    pub samples: Option<usize>,
    pub inclusion_margin: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenjoySection {
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub truncation: Option<usize>,
    pub tail_tol: Option<f64>,
    pub p: Option<f64>,
    pub rotation_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfSection {
    pub triples: Option<usize>,
    pub bridge_matrices: Option<usize>,
}

/// Fully resolved experiment parameters. Serialization order is the canonical
/// form hashed into `config_sha256`; the output directory is deliberately not
/// part of it, so the same experiment hashes the same wherever it lands.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub kind: String,
    pub seed: u64,
    pub k: usize,
    pub theta: Vec<f64>,
    pub c_r: f64,
    pub p: f64,
    pub window: usize,
    pub volume_budget: f64,
    pub profile_m: u32,
    pub profile_eps0: f64,
    pub profile_rule: String,
    pub profile_multiplier: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub samples: usize,
    pub inclusion_margin: f64,
    pub denjoy_alpha: f64,
    pub denjoy_c: f64,
    pub denjoy_truncation: usize,
    pub denjoy_tail_tol: f64,
    pub denjoy_p: f64,
    pub denjoy_rotation_iterations: usize,
    pub conf_triples: usize,
    pub conf_bridge_matrices: usize,
}

impl ResolvedConfig {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Experiment id: kind plus the leading hash bytes, used to name
    /// append-only report files.
    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.kind, &self.sha256()[..8])
    }
}

pub fn parse_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Merges defaults, file values, and command-line overrides, then validates.
/// Returns the resolved experiment plus the output directory
/// (flag > environment > file > default `runs`).
pub fn resolve(
    kind: &str,
    file: &FileConfig,
    seed_flag: Option<u64>,
    out_flag: Option<PathBuf>,
) -> Result<(ResolvedConfig, PathBuf), ConfigError> {
    if let Some(stated) = &file.kind {
        // the historical alias for the structure-space check
        let normalized = if stated == "conf-check" { "conf" } else { stated.as_str() };
        if normalized != kind {
            return err(format!(
                "kind: config declares \"{stated}\" but the {kind} pipeline was invoked"
            ));
        }
    }

    let space = file.space.clone().unwrap_or_default();
    let translation = file.translation.clone().unwrap_or_default();
    let schedule = file.schedule.clone().unwrap_or_default();
    let profile = file.profile.clone().unwrap_or_default();
    let trap = file.trap.clone().unwrap_or_default();
    let denjoy = file.denjoy.clone().unwrap_or_default();
    let conf = file.conf.clone().unwrap_or_default();

    let theta = translation
        .theta
        .unwrap_or_else(|| vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]);
    let k = space.k.unwrap_or(theta.len());

    let resolved = ResolvedConfig {
        kind: kind.to_string(),
        seed: seed_flag.or(file.seed).unwrap_or(0),
        k,
        theta,
        c_r: schedule.c_r.unwrap_or(0.05),
        p: schedule.p.unwrap_or(0.8),
        window: schedule.window.unwrap_or(2000),
        volume_budget: schedule.volume_budget.unwrap_or(0.5),
        profile_m: profile.m.unwrap_or(2),
        profile_eps0: profile.eps0.unwrap_or(0.3),
        profile_rule: profile.rule.unwrap_or_else(|| "volume-scaled".into()),
        profile_multiplier: profile.multiplier.unwrap_or(1.0),
        lambda: trap.lambda.unwrap_or(2.0),
        horizon: trap.horizon.unwrap_or(2000),
        samples: trap.samples.unwrap_or(10_000),
        inclusion_margin: trap.inclusion_margin.unwrap_or(0.0),
        denjoy_alpha: denjoy.alpha.unwrap_or((5f64.sqrt() - 1.0) / 2.0),
        denjoy_c: denjoy.c.unwrap_or(0.1),
        denjoy_truncation: denjoy.truncation.unwrap_or(1_000_000),
        denjoy_tail_tol: denjoy.tail_tol.unwrap_or(1e-6),
        denjoy_p: denjoy.p.unwrap_or(1.0),
        denjoy_rotation_iterations: denjoy.rotation_iterations.unwrap_or(100_000),
        conf_triples: conf.triples.unwrap_or(1000),
        conf_bridge_matrices: conf.bridge_matrices.unwrap_or(10_000),
    };
    if let Some(direction) = &profile.direction {
        if direction != "diagonal" {
            return err(format!(
                "profile.direction: unknown direction \"{direction}\" (supported: diagonal)"
            ));
        }
    }
    validate(&resolved)?;

    let out = out_flag
        .or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .or(file.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((resolved, out))
}

fn validate(c: &ResolvedConfig) -> Result<(), ConfigError> {
    if !(2..=4).contains(&c.k) {
        return err(format!("space.k: dimension must be 2, 3, or 4 (got {})", c.k));
    }
    if c.theta.len() != c.k {
        return err(format!(
            "translation.theta: needs {} components for k = {}, got {}",
            c.k,
            c.k,
            c.theta.len()
        ));
    }
    for (i, t) in c.theta.iter().enumerate() {
        if !t.is_finite() || *t == 0.0 {
            return err(format!("translation.theta[{i}]: components must be finite and nonzero"));
        }
    }
    if !(c.c_r > 0.0 && c.c_r.is_finite()) {
        return err("schedule.c_r: radius amplitude must be positive");
    }
    if !(c.p >= 0.0 && c.p.is_finite()) {
        return err("schedule.p: radius exponent must be nonnegative");
    }
    if !(c.volume_budget > 0.0 && c.volume_budget.is_finite()) {
        return err("schedule.volume_budget: budget must be positive");
    }
    if c.profile_m == 0 {
        return err("profile.m: flatness order must be at least 1");
    }
    if !(c.profile_eps0 >= 0.0 && c.profile_eps0.is_finite()) {
        return err("profile.eps0: amplitude must be nonnegative");
    }
    match c.profile_rule.as_str() {
        "constant" | "volume-scaled" | "single-ball" => {}
        other => {
            return err(format!(
                "profile.rule: unknown rule \"{other}\" (supported: constant, volume-scaled, single-ball)"
            ))
        }
    }
    if !(c.profile_multiplier > 0.0 && c.profile_multiplier.is_finite()) {
        return err("profile.multiplier: volume-bound multiplier must be positive");
    }
    if !(c.lambda > 1.0) {
        return err("trap.lambda: lambda must exceed 1");
    }
    if c.horizon == 0 {
        return err("trap.horizon: horizon must be at least 1");
    }
    if c.samples == 0 {
        return err("trap.samples: boundary sample count must be at least 1");
    }
    if !(c.inclusion_margin >= 0.0 && c.inclusion_margin.is_finite()) {
        return err("trap.inclusion_margin: margin must be nonnegative");
    }
    if !(c.denjoy_alpha > 0.0 && c.denjoy_alpha < 1.0) {
        return err("denjoy.alpha: rotation number must lie strictly between 0 and 1");
    }
    if !(c.denjoy_c > 0.0 && c.denjoy_c.is_finite()) {
        return err("denjoy.c: schedule amplitude must be positive");
    }
    if c.denjoy_truncation < 2 {
        return err("denjoy.truncation: needs at least 2 orbit points");
    }
    if !(c.denjoy_tail_tol > 0.0) {
        return err("denjoy.tail_tol: tail tolerance must be positive");
    }
    if !(c.denjoy_p >= 1.0) {
        return err("denjoy.p: interval exponent must be at least 1");
    }
    if c.denjoy_rotation_iterations == 0 {
        return err("denjoy.rotation_iterations: needs at least 1 iteration");
    }
    if c.conf_triples == 0 || c.conf_bridge_matrices == 0 {
        return err("conf: triples and bridge_matrices must be at least 1");
    }
    Ok(())
}
