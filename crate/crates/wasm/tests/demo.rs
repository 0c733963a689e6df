//! Host-side checks of the demo operations; the wasm bindings only
//! forward to these functions.

use serde_json::Value;
use wanderlab::trap::TrapCertificate;
use wanderlab_wasm::ops;

#[test]
fn ball_layout_renders_the_system() {
    let svg = ops::ball_layout(200, 0.05, 0.8).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 401);
}

#[test]
fn oversized_windows_are_rejected() {
    let e = ops::ball_layout(50_000, 0.05, 0.8).unwrap_err();
    assert!(e.to_string().contains("too large"));
}

#[test]
fn distortion_plot_supports_both_rules() {
    for rule in ["constant", "volume-scaled"] {
        let svg = ops::distortion_plot(300, rule, 0.02).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("direct D_n"));
        assert!(svg.contains("telescoped T_n"));
    }
    assert!(ops::distortion_plot(300, "quadratic", 0.02).is_err());
}

#[test]
fn trap_payload_carries_a_valid_certificate() {
    let payload = ops::trap_certificate(2000, 2.0, 2000, 500, 7).unwrap();
    let v: Value = serde_json::from_str(&payload).unwrap();
    assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
    let cert: TrapCertificate = serde_json::from_value(v["certificate"].clone()).unwrap();
    assert!(cert.is_valid());
    assert_eq!(v["clauses"]["contradiction"], Value::Bool(true));
}
