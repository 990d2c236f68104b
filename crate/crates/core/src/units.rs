//! Physical constants and small unit helpers.

use std::f64::consts::PI;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const TWO_PI: f64 = 2.0 * PI;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TWO_PI);
    if r > PI {
        r -= TWO_PI;
    }
    r
}

/// Converts a frequency-noise PSD quoted in Hz²/Hz to the detuning PSD in (rad/s)²/Hz.
pub fn hz2_per_hz_to_rad2(s: f64) -> f64 {
    TWO_PI * TWO_PI * s
}
