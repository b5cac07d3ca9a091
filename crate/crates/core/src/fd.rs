//! Central finite differences of a value surface `z(x, s, t)`.

use crate::error::Result;

/// All partials entering the HJB equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub z: f64,
    pub z_t: f64,
    pub z_x: f64,
    pub z_s: f64,
    pub z_xx: f64,
    pub z_ss: f64,
    pub z_xs: f64,
}

/// Step `1e-4 (1 + |coordinate|)`.
pub fn default_step(coordinate: f64) -> f64 {
    1e-4 * (1.0 + coordinate.abs())
}

/// Partials of `z` at `(x, s, t)` by central differences.
///
/// `t_min` is the earliest time `z` accepts; closer to it than one step the
/// time derivative switches to the second-order forward difference.
/// `step` overrides the default per-coordinate step when given.
pub fn partials<F>(z: F, x: f64, s: f64, t: f64, t_min: f64, step: Option<f64>) -> Result<Partials>
where
    F: Fn(f64, f64, f64) -> Result<f64>,
{
    let hx = step.unwrap_or_else(|| default_step(x));
    let hs = step.unwrap_or_else(|| default_step(s));
    let ht = step.unwrap_or_else(|| default_step(t));

    let z0 = z(x, s, t)?;
    let zxp = z(x + hx, s, t)?;
    let zxm = z(x - hx, s, t)?;
    let zsp = z(x, s + hs, t)?;
    let zsm = z(x, s - hs, t)?;
    let zpp = z(x + hx, s + hs, t)?;
    let zpm = z(x + hx, s - hs, t)?;
    let zmp = z(x - hx, s + hs, t)?;
    let zmm = z(x - hx, s - hs, t)?;
    let z_t = if t - ht >= t_min {
        (z(x, s, t + ht)? - z(x, s, t - ht)?) / (2.0 * ht)
    } else {
        (-3.0 * z0 + 4.0 * z(x, s, t + ht)? - z(x, s, t + 2.0 * ht)?) / (2.0 * ht)
    };

    Ok(Partials {
        z: z0,
        z_t,
        z_x: (zxp - zxm) / (2.0 * hx),
        z_s: (zsp - zsm) / (2.0 * hs),
        z_xx: (zxp - 2.0 * z0 + zxm) / (hx * hx),
        z_ss: (zsp - 2.0 * z0 + zsm) / (hs * hs),
        z_xs: (zpp - zpm - zmp + zmm) / (4.0 * hx * hs),
    })
}
