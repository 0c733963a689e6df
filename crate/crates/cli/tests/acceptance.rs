//! End-to-end checks of the built binary: determinism of the results
//! record and the exit-code contract on the shipped example configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use wanderlab::trap::TrapCertificate;

const BIN: &str = env!("CARGO_BIN_EXE_wanderlab");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wanderlab-cli-{}-{name}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("WANDERLAB_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn records(out_dir: &Path) -> Vec<Value> {
    let text = std::fs::read_to_string(out_dir.join("results.jsonl")).expect("results exist");
    text.lines().map(|l| serde_json::from_str(l).expect("valid record")).collect()
}

fn stage<'a>(records: &'a [Value], name: &str) -> &'a Value {
    records
        .iter()
        .find(|r| r["stage"] == name)
        .unwrap_or_else(|| panic!("stage {name} present"))
}

fn verdict(label: &str, ok: bool, detail: &str) {
    println!("ACCEPTANCE {label}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{label}: {detail}");
}

#[test]
fn c9_cli_determinism_and_exit_codes() {
    let start = Instant::now();
    let configs = configs_dir();
    let demo = configs.join("demo-theorem.toml");
    let demo = demo.to_str().unwrap();

    let dir_a = scratch("det-a");
    let dir_b = scratch("det-b");
    let out_a = run(
        &["demo-theorem", "--config", demo, "--seed", "42", "--out", dir_a.to_str().unwrap()],
        &[],
    );
    let out_b = run(
        &["demo-theorem", "--config", demo, "--seed", "42", "--out", dir_b.to_str().unwrap()],
        &[],
    );
    assert_eq!(out_a.status.code(), Some(0), "{}", String::from_utf8_lossy(&out_a.stderr));
    assert_eq!(out_b.status.code(), Some(0), "{}", String::from_utf8_lossy(&out_b.stderr));
    let bytes_a = std::fs::read(dir_a.join("results.jsonl")).unwrap();
    let bytes_b = std::fs::read(dir_b.join("results.jsonl")).unwrap();
    verdict(
        "C9 determinism",
        bytes_a == bytes_b,
        &format!("two seeded runs, {} bytes of records each", bytes_a.len()),
    );

    let recs = records(&dir_a);
    let header = &recs[0];
    assert_eq!(header["record"], "run");
    assert_eq!(header["config_sha256"].as_str().map(str::len), Some(64));
    assert!(header["versions"]["wanderlab"].is_string());
    let lemma_pass = stage(&recs, "volume-bound")["pass"] == Value::Bool(true);
    let v = stage(&recs, "verdict");
    let demonstrated = v["certificate_valid"] == Value::Bool(true)
        && v["contradiction"] == Value::Bool(true)
        && v["demonstrated"] == Value::Bool(true);
    let cert_file = std::fs::read_dir(&dir_a)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().ends_with(".certs.jsonl"))
        .expect("certificate file written");
    let cert_line = std::fs::read_to_string(cert_file.path()).unwrap();
    let cert: TrapCertificate = serde_json::from_str(cert_line.lines().next().unwrap()).unwrap();
    verdict(
        "C9 demo-theorem defaults",
        lemma_pass && demonstrated && cert.is_valid(),
        &format!("exit 0, volume bound holds, certificate valid at n = {}", cert.trap_time),
    );

    let dir_bad = scratch("invalid");
    let out = run(
        &[
            "trap",
            "--config",
            configs.join("invalid-lambda.toml").to_str().unwrap(),
            "--out",
            dir_bad.to_str().unwrap(),
        ],
        &[],
    );
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    verdict(
        "C9 validation exit code",
        out.status.code() == Some(1) && stderr.contains("lambda must exceed 1"),
        &format!("exit {:?}, stderr names the rule", out.status.code()),
    );

    let dir_nf = scratch("notfound");
    let out = run(
        &[
            "trap",
            "--config",
            configs.join("constant-radii-trap.toml").to_str().unwrap(),
            "--out",
            dir_nf.to_str().unwrap(),
        ],
        &[],
    );
    let recs = records(&dir_nf);
    let recorded = recs
        .iter()
        .any(|r| r["record"] == "error" && r["code"] == "NotFound");
    verdict(
        "C9 pipeline-error exit code",
        out.status.code() == Some(2) && recorded,
        &format!("exit {:?}, NotFound recorded in results", out.status.code()),
    );

    let elapsed = start.elapsed().as_secs_f64();
    verdict("C9 runtime", elapsed < 90.0, &format!("{elapsed:.2} s < 90 s"));

    for dir in [dir_a, dir_b, dir_bad, dir_nf] {
        let _ = std::fs::remove_dir_all(dir);
    }
}

#[test]
fn output_directory_precedence_and_plots() {
    let dir_env = scratch("env");
    let dir_flag = scratch("flag");
    let dir_decoy = scratch("decoy");
    let config = std::env::temp_dir()
        .join(format!("wanderlab-cli-{}-small.toml", std::process::id()));
    std::fs::write(&config, "kind = \"blowup\"\n\n[schedule]\nwindow = 50\n").unwrap();
    let config = config.to_str().unwrap().to_string();

    let out = run(
        &["blowup", "--config", &config],
        &[("WANDERLAB_OUT", dir_env.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir_env.join("results.jsonl").exists(), "env var steers output");
    assert!(dir_env.join("summary.txt").exists());

    let out = run(
        &["blowup", "--config", &config, "--out", dir_flag.to_str().unwrap(), "--plots"],
        &[("WANDERLAB_OUT", dir_decoy.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(dir_flag.join("results.jsonl").exists(), "flag beats the env var");
    assert!(!dir_decoy.exists(), "decoy directory untouched");
    let svg = std::fs::read_dir(&dir_flag)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().ends_with(".balls.svg"));
    assert!(svg.is_some(), "--plots writes the layout sketch");

    let recs = records(&dir_flag);
    assert!(recs.iter().any(|r| r["stage"] == "build"
        && r["record_file"].as_str().is_some_and(|n| n.ends_with(".ball-system.txt"))));

    for dir in [dir_env, dir_flag] {
        let _ = std::fs::remove_dir_all(dir);
    }
    let _ = std::fs::remove_file(config);
}
