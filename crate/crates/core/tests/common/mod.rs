//! Test oracles shared by the integration tests. Nothing here calls into the
//! library's geometry or sampler.

#![allow(dead_code)]

pub mod fd;

/// `E_z[Im Z_σF]` for the vertical slit `(0, ih]`: `Im z - Im g(z)` with
/// `g(z) = √(z² + h²)` taken in the upper half-plane.
pub fn slit_hit_value(x: f64, y: f64, h: f64) -> f64 {
    let (wr, wi) = (x * x - y * y + h * h, 2.0 * x * y);
    let m = wr.hypot(wi);
    let sr = ((m + wr) / 2.0).sqrt();
    let im_g = if sr > 1e-8 { wi.abs() / (2.0 * sr) } else { ((m - wr) / 2.0).sqrt() };
    y - im_g
}
