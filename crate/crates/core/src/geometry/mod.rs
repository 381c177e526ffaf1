//! Exact geometric predicates for hulls, slit domains and probe shapes.
//!
//! Walk-on-spheres is only unbiased when every jump radius is a lower bound
//! on the distance to the boundary, so every catalog shape here either has a
//! closed-form distance or a certified one.

mod hull;
mod profile;
mod raster;
mod slits;

pub use hull::Hull;
pub use profile::Profile;
pub use raster::{validate_hull, CellGrid, HullDiagnostics, Mask};
pub use slits::{Slit, SlitDomain};

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A point of the closed upper half-plane, `re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub re: f64,
    pub im: f64,
}

impl Point {
    pub const fn new(re: f64, im: f64) -> Self {
        Point { re, im }
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.re * rhs, self.im * rhs)
    }
}

/// Closest point of the closed segment `[a, b]` to `p`, with its distance.
pub fn closest_on_segment(p: Point, a: Point, b: Point) -> (f64, Point) {
    let ab = b - a;
    let len2 = ab.re * ab.re + ab.im * ab.im;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.re - a.re) * ab.re + (p.im - a.im) * ab.im) / len2).clamp(0.0, 1.0)
    };
    let q = a + ab * t;
    (p.dist(q), q)
}

pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    closest_on_segment(p, a, b).0
}

/// Closed disk `B(center, radius)`; also used as an absorbing probe circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn contains(&self, z: Point) -> bool {
        z.dist(self.center) <= self.radius
    }

    /// Distance to the bounding circle, from either side.
    pub fn dist_to_circle(&self, z: Point) -> f64 {
        (z.dist(self.center) - self.radius).abs()
    }
}

/// Axis-aligned rectangle; its perimeter serves as the Jordan curve around a
/// darned slit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Rect {
    pub fn contains(&self, z: Point) -> bool {
        z.re >= self.x_lo && z.re <= self.x_hi && z.im >= self.y_lo && z.im <= self.y_hi
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * ((self.x_hi - self.x_lo) + (self.y_hi - self.y_lo))
    }

    /// Distance to the perimeter, from either side, with the closest perimeter point.
    pub fn closest_on_boundary(&self, z: Point) -> (f64, Point) {
        let c = [
            Point::new(self.x_lo, self.y_lo),
            Point::new(self.x_hi, self.y_lo),
            Point::new(self.x_hi, self.y_hi),
            Point::new(self.x_lo, self.y_hi),
        ];
        let mut best = (f64::INFINITY, z);
        for i in 0..4 {
            let cand = closest_on_segment(z, c[i], c[(i + 1) % 4]);
            if cand.0 < best.0 {
                best = cand;
            }
        }
        best
    }

    pub fn dist_to_boundary(&self, z: Point) -> f64 {
        if self.contains(z) {
            (z.re - self.x_lo)
                .min(self.x_hi - z.re)
                .min(z.im - self.y_lo)
                .min(self.y_hi - z.im)
        } else {
            let dx = (self.x_lo - z.re).max(0.0).max(z.re - self.x_hi);
            let dy = (self.y_lo - z.im).max(0.0).max(z.im - self.y_hi);
            dx.hypot(dy)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(0.0, 1.0);
        assert_eq!(dist_to_segment(Point::new(1.0, 0.5), a, b), 1.0);
        assert!((dist_to_segment(Point::new(0.0, 3.0), a, b) - 2.0).abs() < 1e-15);
        assert_eq!(dist_to_segment(Point::new(3.0, 4.0), a, a), 5.0);
    }

    #[test]
    fn rect_boundary_distance_inside_and_outside() {
        let r = Rect { x_lo: 0.0, x_hi: 4.0, y_lo: 1.0, y_hi: 2.0 };
        assert!((r.dist_to_boundary(Point::new(1.0, 1.25)) - 0.25).abs() < 1e-15);
        assert!((r.dist_to_boundary(Point::new(7.0, 6.0)) - 5.0).abs() < 1e-15);
        let (d, q) = r.closest_on_boundary(Point::new(2.0, 1.75));
        assert!((d - 0.25).abs() < 1e-15);
        assert_eq!(q, Point::new(2.0, 2.0));
    }

    #[test]
    fn ball_circle_distance_is_symmetric_about_the_circle() {
        let b = Ball::new(Point::new(0.0, 1.0), 0.5);
        assert!((b.dist_to_circle(Point::new(0.0, 1.1)) - 0.4).abs() < 1e-12);
        assert!((b.dist_to_circle(Point::new(0.0, 2.0)) - 0.5).abs() < 1e-12);
    }
}
