use serde::{Deserialize, Serialize};

use super::{closest_on_segment, Hull, Point, Rect};
use crate::error::{Error, Result};

/// Horizontal segment `C = [x_lo, x_hi] + i·y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slit {
    pub y: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Slit {
    pub fn new(y: f64, x_lo: f64, x_hi: f64) -> Self {
        Slit { y, x_lo, x_hi }
    }

    pub fn len(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn midpoint(&self) -> Point {
        Point::new(0.5 * (self.x_lo + self.x_hi), self.y)
    }

    pub fn left(&self) -> Point {
        Point::new(self.x_lo, self.y)
    }

    pub fn right(&self) -> Point {
        Point::new(self.x_hi, self.y)
    }

    pub fn distance(&self, z: Point) -> f64 {
        let dx = (self.x_lo - z.re).max(0.0).max(z.re - self.x_hi);
        dx.hypot(z.im - self.y)
    }

    pub fn closest_point(&self, z: Point) -> Point {
        closest_on_segment(z, self.left(), self.right()).1
    }

    /// Distance between two horizontal segments.
    pub fn gap_to(&self, other: &Slit) -> f64 {
        let dx = (other.x_lo - self.x_hi).max(self.x_lo - other.x_hi).max(0.0);
        dx.hypot(self.y - other.y)
    }

    /// Lower bound on the distance from this segment to a hull, from a dense
    /// sample of the segment and the 1-Lipschitz property of the distance.
    pub fn gap_to_hull(&self, hull: &Hull) -> f64 {
        if hull.is_empty() {
            return f64::INFINITY;
        }
        let n = 512;
        let step = self.len() / n as f64;
        let min = (0..=n)
            .map(|i| hull.distance(Point::new(self.x_lo + step * i as f64, self.y)))
            .fold(f64::INFINITY, f64::min);
        (min - 0.5 * step).max(0.0)
    }

    /// Rectangle at margin `m` around the slit.
    pub fn surrounding_rect(&self, m: f64) -> Rect {
        Rect { x_lo: self.x_lo - m, x_hi: self.x_hi + m, y_lo: self.y - m, y_hi: self.y + m }
    }
}

/// A parallel slit half-plane `D = H \ ∪ C_j`, described by its slits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlitDomain {
    pub slits: Vec<Slit>,
}

impl SlitDomain {
    pub fn new(slits: Vec<Slit>) -> Self {
        SlitDomain { slits }
    }

    pub fn empty() -> Self {
        SlitDomain::default()
    }

    pub fn len(&self) -> usize {
        self.slits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slits.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        for (j, s) in self.slits.iter().enumerate() {
            if !(s.y.is_finite() && s.y > 0.0) {
                return Err(Error::invalid(format!("slit {j} must lie strictly inside H")));
            }
            if !(s.x_lo.is_finite() && s.x_hi.is_finite() && s.x_lo < s.x_hi) {
                return Err(Error::invalid(format!("slit {j} needs x_lo < x_hi")));
            }
        }
        for j in 0..self.slits.len() {
            for k in j + 1..self.slits.len() {
                if self.slits[j].gap_to(&self.slits[k]) <= 0.0 {
                    return Err(Error::invalid(format!("slits {j} and {k} intersect")));
                }
            }
        }
        Ok(())
    }

    /// Nearest slit and its distance; `(∞, None)` without slits.
    pub fn nearest(&self, z: Point) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for (j, s) in self.slits.iter().enumerate() {
            let d = s.distance(z);
            if d < best.0 {
                best = (d, Some(j));
            }
        }
        best
    }

    pub fn distance(&self, z: Point) -> f64 {
        self.nearest(z).0
    }

    pub fn max_height(&self) -> f64 {
        self.slits.iter().map(|s| s.y).fold(0.0, f64::max)
    }
}
