//! Error function inverse and standard normal distribution helpers.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Inverse of the error function on (-1, 1).
///
/// A single-precision rational approximation (Giles, 2010) seeds two
/// Newton steps against a double-precision `erf`.
pub fn inverse_erf(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(Error::Domain {
            function: "inverse_erf",
            value: y,
        });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut x = initial_guess(y);
    let scale = 2.0 / PI.sqrt();
    for _ in 0..2 {
        let slope = scale * (-x * x).exp();
        if slope == 0.0 {
            break;
        }
        x -= (erf(x) - y) / slope;
    }
    Ok(x)
}

fn initial_guess(y: f64) -> f64 {
    let mut w = -((1.0 - y) * (1.0 + y)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        [
            3.43273939e-07,
            -3.5233877e-06,
            -4.39150654e-06,
            0.00021858087,
            -0.00125372503,
            -0.00417768164,
            0.246640727,
            1.50140941,
        ]
        .iter()
        .fold(2.81022636e-08, |acc, c| c + acc * w)
    } else {
        w = w.sqrt() - 3.0;
        [
            0.000100950558,
            0.00134934322,
            -0.00367342844,
            0.00573950773,
            -0.0076224613,
            0.00943887047,
            1.00167406,
            2.83297682,
        ]
        .iter()
        .fold(-0.000200214257, |acc, c| c + acc * w)
    };
    p * y
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile on (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            function: "normal_quantile",
            value: p,
        });
    }
    Ok(SQRT_2 * inverse_erf(2.0 * p - 1.0)?)
}
