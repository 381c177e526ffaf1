use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{closest_on_segment, Point};
use crate::error::{Error, Result};

/// Height profile `f ≥ 0` of a ridge hull `{ξ + iη : 0 < η ≤ f(ξ)}`.
///
/// Only shapes with analytically known slope and curvature bounds are
/// allowed; those bounds are what make the distance certifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `height / (1 + ((ξ - center) / width)²)`
    Lorentzian { height: f64, center: f64, width: f64 },
    /// `height · exp(-((ξ - center) / width)² / 2)`
    Gaussian { height: f64, center: f64, width: f64 },
    /// Piecewise-linear interpolation of `[ξ, f]` knots, zero outside;
    /// the first and last knots must sit on the real line.
    Table { points: Vec<[f64; 2]> },
    /// Constant height everywhere: the horizontal strip `0 < η ≤ height`.
    Constant { height: f64 },
}

/// Relative gap at which the branch-and-bound distance search stops.
const DIST_RTOL: f64 = 1e-10;

impl Profile {
    pub fn check(&self) -> Result<()> {
        match self {
            Profile::Lorentzian { height, center, width }
            | Profile::Gaussian { height, center, width } => {
                if !(height.is_finite() && *height > 0.0) {
                    return Err(Error::invalid("ridge height must be positive and finite"));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::invalid("ridge width must be positive and finite"));
                }
                if !center.is_finite() {
                    return Err(Error::invalid("ridge center must be finite"));
                }
            }
            Profile::Constant { height } => {
                if !(height.is_finite() && *height > 0.0) {
                    return Err(Error::invalid("strip height must be positive and finite"));
                }
            }
            Profile::Table { points } => {
                if points.len() < 3 {
                    return Err(Error::invalid("table profile needs at least three knots"));
                }
                if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite() || p[1] < 0.0) {
                    return Err(Error::invalid("table knots must be finite with f >= 0"));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::invalid("table knots must be strictly increasing in ξ"));
                }
                if points[0][1] != 0.0 || points[points.len() - 1][1] != 0.0 {
                    return Err(Error::invalid("table profile must start and end on the real line"));
                }
                if points.iter().all(|p| p[1] == 0.0) {
                    return Err(Error::invalid("table profile is identically zero"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Lorentzian { height, center, width } => {
                let u = (x - center) / width;
                height / (1.0 + u * u)
            }
            Profile::Gaussian { height, center, width } => {
                let u = (x - center) / width;
                height * (-0.5 * u * u).exp()
            }
            Profile::Constant { height } => *height,
            Profile::Table { points } => {
                let first = points[0][0];
                let last = points[points.len() - 1][0];
                if x < first || x > last {
                    return 0.0;
                }
                let i = points.partition_point(|p| p[0] <= x).clamp(1, points.len() - 1);
                let [x0, f0] = points[i - 1];
                let [x1, f1] = points[i];
                f0 + (f1 - f0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            Profile::Lorentzian { height, .. }
            | Profile::Gaussian { height, .. }
            | Profile::Constant { height } => *height,
            Profile::Table { points } => points.iter().map(|p| p[1]).fold(0.0, f64::max),
        }
    }

    /// Horizontal position of the bulk of the profile.
    pub fn center(&self) -> f64 {
        match self {
            Profile::Lorentzian { center, .. } | Profile::Gaussian { center, .. } => *center,
            Profile::Constant { .. } => 0.0,
            Profile::Table { points } => 0.5 * (points[0][0] + points[points.len() - 1][0]),
        }
    }

    /// Bounding interval of `{ξ : f(ξ) ≥ level}`; may be infinite.
    pub fn level_range(&self, level: f64) -> Option<(f64, f64)> {
        let level = level.max(f64::MIN_POSITIVE);
        if level > self.max_value() {
            return None;
        }
        match self {
            Profile::Lorentzian { height, center, width } => {
                let half = width * (height / level - 1.0).max(0.0).sqrt();
                Some((center - half, center + half))
            }
            Profile::Gaussian { height, center, width } => {
                let half = width * (2.0 * (height / level).ln()).max(0.0).sqrt();
                Some((center - half, center + half))
            }
            Profile::Constant { .. } => Some((f64::NEG_INFINITY, f64::INFINITY)),
            Profile::Table { points } => {
                let lo = points.iter().find(|p| p[1] >= level)?[0];
                let hi = points.iter().rev().find(|p| p[1] >= level)?[0];
                // widen to the neighbouring knots, the crossing lies in between
                let i = points.iter().position(|p| p[0] == lo).unwrap_or(0);
                let j = points.iter().position(|p| p[0] == hi).unwrap_or(points.len() - 1);
                Some((points[i.saturating_sub(1)][0], points[(j + 1).min(points.len() - 1)][0]))
            }
        }
    }

    /// Bounds on `|f'|` and `|f''|` for the smooth shapes.
    fn smooth_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Profile::Lorentzian { height, width, .. } => Some((
                3.0 * 3f64.sqrt() / 8.0 * height / width,
                2.0 * height / (width * width),
            )),
            Profile::Gaussian { height, width, .. } => Some((
                (-0.5f64).exp() * height / width,
                height / (width * width),
            )),
            _ => None,
        }
    }

    pub fn region_contains(&self, z: Point) -> bool {
        z.im > 0.0 && z.im <= self.value(z.re)
    }

    /// Distance from `z` to the closed region under the graph.
    pub fn distance(&self, z: Point) -> f64 {
        if z.im <= self.value(z.re) {
            return 0.0;
        }
        match self {
            Profile::Constant { height } => z.im - height,
            Profile::Table { points } => points
                .windows(2)
                .map(|w| {
                    closest_on_segment(z, Point::new(w[0][0], w[0][1]), Point::new(w[1][0], w[1][1])).0
                })
                .fold(f64::INFINITY, f64::min),
            _ => self.smooth_graph_distance(z),
        }
    }

    /// A lower bound on [`Profile::distance`] that is exact for the
    /// piecewise-linear shapes and cheap for the smooth ones.
    pub fn distance_lower_bound(&self, z: Point) -> f64 {
        match self.smooth_bounds() {
            None => self.distance(z),
            Some((slope, _)) => {
                let gap = z.im - self.value(z.re);
                if gap <= 0.0 {
                    return 0.0;
                }
                (gap / (1.0 + slope * slope).sqrt()).max(z.im - self.max_value())
            }
        }
    }

    /// Branch and bound on `s(ξ) = |z - (ξ, f(ξ))|²` over the bracket
    /// `|ξ - Re z| ≤ Im z - f(Re z)`, using `|s''| ≤ K` to bound each piece.
    fn smooth_graph_distance(&self, z: Point) -> f64 {
        let (slope, curv) = self.smooth_bounds().expect("smooth profile");
        let gap = z.im - self.value(z.re);
        let k = 2.0 * (1.0 + slope * slope + (z.im + self.max_value()) * curv);
        let s = |xi: f64| {
            let dx = xi - z.re;
            let dy = self.value(xi) - z.im;
            dx * dx + dy * dy
        };

        let mut best = gap * gap;
        let mut heap = BinaryHeap::new();
        let pieces = 32;
        let (lo, hi) = (z.re - gap, z.re + gap);
        let w0 = (hi - lo) / pieces as f64;
        let mut prev = (lo, s(lo));
        best = best.min(prev.1);
        for i in 1..=pieces {
            let x = if i == pieces { hi } else { lo + w0 * i as f64 };
            let sx = s(x);
            best = best.min(sx);
            heap.push(Piece::new(prev, (x, sx), k));
            prev = (x, sx);
        }

        let mut iterations = 0usize;
        while let Some(piece) = heap.pop() {
            let d_best = best.sqrt();
            let d_lo = piece.lower.max(0.0).sqrt();
            if d_best - d_lo <= DIST_RTOL * d_best || iterations > 200_000 {
                return d_best;
            }
            iterations += 1;
            let mid = 0.5 * (piece.a.0 + piece.b.0);
            let sm = s(mid);
            best = best.min(sm);
            for half in [Piece::new(piece.a, (mid, sm), k), Piece::new((mid, sm), piece.b, k)] {
                if half.lower < best {
                    heap.push(half);
                }
            }
        }
        best.sqrt()
    }

    /// Points of the region, used for containment spot checks.
    pub fn sample_points(&self, k: usize) -> Vec<Point> {
        let (lo, hi) = match self.level_range(1e-3 * self.max_value()) {
            Some((lo, hi)) if lo.is_finite() && hi.is_finite() => (lo, hi),
            _ => (-8.0, 8.0),
        };
        let k = k.max(2);
        let mut out = Vec::with_capacity(2 * k);
        for i in 0..k {
            let x = lo + (hi - lo) * i as f64 / (k - 1) as f64;
            let f = self.value(x);
            if f > 0.0 {
                out.push(Point::new(x, f));
                out.push(Point::new(x, 0.5 * f));
            }
        }
        out
    }
}

struct Piece {
    a: (f64, f64),
    b: (f64, f64),
    lower: f64,
}

impl Piece {
    fn new(a: (f64, f64), b: (f64, f64), k: f64) -> Self {
        let w = b.0 - a.0;
        Piece { a, b, lower: a.1.min(b.1) - k * w * w / 8.0 }
    }
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.lower == other.lower
    }
}

impl Eq for Piece {}

impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Piece {
    // min-heap on the lower bound
    fn cmp(&self, other: &Self) -> Ordering {
        other.lower.total_cmp(&self.lower)
    }
}
