//! Browser demo bindings. The exported functions wrap [`ops`] one to one;
//! all numerics live in the library crates and run identically on native
//! targets, which is where the tests exercise them.

pub mod ops;

use wasm_bindgen::prelude::*;

fn boundary<T>(r: wanderlab::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// SVG layout of the wandering-ball system for the given schedule.
#[wasm_bindgen]
pub fn ball_layout(window: usize, c_r: f64, p: f64) -> Result<String, JsError> {
    boundary(ops::ball_layout(window, c_r, p))
}

/// SVG plot of direct vs telescoped distortion along the orbit.
/// `rule` is "constant" or "volume-scaled"; `amount` is the per-step
/// distortion or the volume-bound multiplier respectively.
#[wasm_bindgen]
pub fn distortion_plot(window: usize, rule: &str, amount: f64) -> Result<String, JsError> {
    boundary(ops::distortion_plot(window, rule, amount))
}

/// JSON payload with the trap geometry sketch, the certificate, and the
/// contradiction clauses.
#[wasm_bindgen]
pub fn trap_certificate(
    window: usize,
    lambda: f64,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<String, JsError> {
    boundary(ops::trap_certificate(window, lambda, horizon, samples, seed))
}
