//! The fixed time cutoff `η`: equal to 1 on `[0, 1]`, supported in `[-1, 2]`,
//! with a C² cosine taper on each side.

use std::f64::consts::PI;

pub const CUTOFF_NAME: &str =
    "eta = 1 on [0,1], 0 outside [-1,2], taper h(x) = x - sin(2 pi x)/(2 pi) on [-1,0] and [1,2] (C2)";

fn taper(x: f64) -> f64 {
    x - (2.0 * PI * x).sin() / (2.0 * PI)
}

pub fn eta(t: f64) -> f64 {
    if !(-1.0..2.0).contains(&t) {
        0.0
    } else if t < 0.0 {
        taper(t + 1.0)
    } else if t <= 1.0 {
        1.0
    } else {
        taper(2.0 - t)
    }
}

/// `η_T(t) = η(t / T)`.
pub fn eta_scaled(t: f64, window: f64) -> f64 {
    eta(t / window)
}
