use serde::{Deserialize, Serialize};

use super::{closest_on_segment, dist_to_segment, Point, Profile};
use crate::error::{Error, Result};

/// Tolerance under which a point counts as lying on a one-dimensional piece.
const ON_CURVE_TOL: f64 = 1e-12;

/// A catalog H-hull: a relatively closed subset `F` of the upper half-plane.
///
/// The JSON form is tagged by `kind`, e.g.
/// `{"kind": "vertical_slit", "base": 0.0, "height": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hull {
    #[default]
    Empty,
    /// `{base + iy : 0 < y ≤ height}`
    VerticalSlit { base: f64, height: f64 },
    /// `H ∩ closed-disk(center, radius)`
    HalfDisk { center: f64, radius: f64 },
    /// Closed segment between two points of the closed half-plane, minus
    /// its points on the real line.
    Segment { a: Point, b: Point },
    /// `{ξ + iη : 0 < η ≤ f(ξ)}`
    Ridge { profile: Profile },
    Union { parts: Vec<Hull> },
    /// Horizontal translation by `by`.
    Shifted { hull: Box<Hull>, by: f64 },
    /// Homothety `z ↦ factor·z`.
    Scaled { hull: Box<Hull>, factor: f64 },
}

impl Hull {
    pub fn vertical_slit(base: f64, height: f64) -> Hull {
        Hull::VerticalSlit { base, height }
    }

    pub fn half_disk(center: f64, radius: f64) -> Hull {
        Hull::HalfDisk { center, radius }
    }

    pub fn segment(a: Point, b: Point) -> Hull {
        Hull::Segment { a, b }
    }

    pub fn ridge(profile: Profile) -> Hull {
        Hull::Ridge { profile }
    }

    pub fn lorentzian(height: f64, center: f64, width: f64) -> Hull {
        Hull::Ridge { profile: Profile::Lorentzian { height, center, width } }
    }

    pub fn union(parts: Vec<Hull>) -> Hull {
        Hull::Union { parts }
    }

    pub fn shifted(self, by: f64) -> Hull {
        Hull::Shifted { hull: Box::new(self), by }
    }

    pub fn scaled(self, factor: f64) -> Hull {
        Hull::Scaled { hull: Box::new(self), factor }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Hull::Empty => true,
            Hull::Union { parts } => parts.iter().all(Hull::is_empty),
            Hull::Shifted { hull, .. } | Hull::Scaled { hull, .. } => hull.is_empty(),
            _ => false,
        }
    }

    /// Parameter sanity: positive sizes, finite coordinates, segments in the
    /// closed half-plane. Topology is checked separately by
    /// [`validate_hull`](super::validate_hull).
    pub fn check(&self) -> Result<()> {
        match self {
            Hull::Empty => Ok(()),
            Hull::VerticalSlit { base, height } => {
                if !base.is_finite() || !(height.is_finite() && *height > 0.0) {
                    return Err(Error::invalid("vertical slit needs finite base and height > 0"));
                }
                Ok(())
            }
            Hull::HalfDisk { center, radius } => {
                if !center.is_finite() || !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::invalid("half disk needs finite center and radius > 0"));
                }
                Ok(())
            }
            Hull::Segment { a, b } => {
                if !a.is_finite() || !b.is_finite() || a.im < 0.0 || b.im < 0.0 {
                    return Err(Error::invalid("segment endpoints must be finite with im >= 0"));
                }
                if a == b {
                    return Err(Error::invalid("segment endpoints coincide"));
                }
                if a.im == 0.0 && b.im == 0.0 {
                    return Err(Error::invalid("segment lies on the real line"));
                }
                Ok(())
            }
            Hull::Ridge { profile } => profile.check(),
            Hull::Union { parts } => parts.iter().try_for_each(Hull::check),
            Hull::Shifted { hull, by } => {
                if !by.is_finite() {
                    return Err(Error::invalid("shift must be finite"));
                }
                hull.check()
            }
            Hull::Scaled { hull, factor } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::invalid("scale factor must be positive and finite"));
                }
                hull.check()
            }
        }
    }

    /// Membership in `F`; boundary points of the closed pieces count.
    pub fn contains(&self, z: Point) -> bool {
        if z.im <= 0.0 {
            return false;
        }
        match self {
            Hull::Empty => false,
            Hull::VerticalSlit { base, height } => {
                (z.re - base).abs() <= ON_CURVE_TOL * (1.0 + base.abs()) && z.im <= *height
            }
            Hull::HalfDisk { center, radius } => {
                z.dist(Point::new(*center, 0.0)) <= radius * (1.0 + ON_CURVE_TOL)
            }
            Hull::Segment { a, b } => {
                dist_to_segment(z, *a, *b) <= ON_CURVE_TOL * (1.0 + a.norm().max(b.norm()))
            }
            Hull::Ridge { profile } => profile.region_contains(z),
            Hull::Union { parts } => parts.iter().any(|p| p.contains(z)),
            Hull::Shifted { hull, by } => hull.contains(Point::new(z.re - by, z.im)),
            Hull::Scaled { hull, factor } => hull.contains(z * factor.recip()),
        }
    }

    /// Euclidean distance from `z` to the closure of `F`. Exact for the
    /// polygonal and disk pieces, within relative `1e-10` for smooth ridges.
    /// `+∞` for the empty hull.
    pub fn distance(&self, z: Point) -> f64 {
        match self {
            Hull::Empty => f64::INFINITY,
            Hull::VerticalSlit { base, height } => {
                dist_to_segment(z, Point::new(*base, 0.0), Point::new(*base, *height))
            }
            Hull::HalfDisk { center, radius } => {
                (z.dist(Point::new(*center, 0.0)) - radius).max(0.0)
            }
            Hull::Segment { a, b } => dist_to_segment(z, *a, *b),
            Hull::Ridge { profile } => profile.distance(z),
            Hull::Union { parts } => parts.iter().map(|p| p.distance(z)).fold(f64::INFINITY, f64::min),
            Hull::Shifted { hull, by } => hull.distance(Point::new(z.re - by, z.im)),
            Hull::Scaled { hull, factor } => factor * hull.distance(z * factor.recip()),
        }
    }

    /// Lower bound on [`Hull::distance`], tight at the boundary. Identical to
    /// the distance except for smooth ridges, where it trades sharpness for
    /// a constant-time evaluation. Any such bound keeps walk-on-spheres
    /// unbiased because the jump circle stays inside the domain.
    pub fn radius_bound(&self, z: Point) -> f64 {
        match self {
            Hull::Ridge { profile } => profile.distance_lower_bound(z),
            Hull::Union { parts } => {
                parts.iter().map(|p| p.radius_bound(z)).fold(f64::INFINITY, f64::min)
            }
            Hull::Shifted { hull, by } => hull.radius_bound(Point::new(z.re - by, z.im)),
            Hull::Scaled { hull, factor } => factor * hull.radius_bound(z * factor.recip()),
            _ => self.distance(z),
        }
    }

    /// Closest point of the closure of `F`; `None` for the empty hull or for
    /// smooth ridges, which only expose distances.
    pub fn closest_point(&self, z: Point) -> Option<Point> {
        match self {
            Hull::Empty => None,
            Hull::VerticalSlit { base, height } => {
                Some(closest_on_segment(z, Point::new(*base, 0.0), Point::new(*base, *height)).1)
            }
            Hull::HalfDisk { center, radius } => {
                let c = Point::new(*center, 0.0);
                let r = z.dist(c);
                if r <= *radius {
                    Some(z)
                } else {
                    Some(c + (z - c) * (radius / r))
                }
            }
            Hull::Segment { a, b } => Some(closest_on_segment(z, *a, *b).1),
            Hull::Ridge { .. } => None,
            Hull::Union { parts } => parts
                .iter()
                .filter_map(|p| p.closest_point(z))
                .min_by(|p, q| z.dist(*p).total_cmp(&z.dist(*q))),
            Hull::Shifted { hull, by } => hull
                .closest_point(Point::new(z.re - by, z.im))
                .map(|p| Point::new(p.re + by, p.im)),
            Hull::Scaled { hull, factor } => {
                hull.closest_point(z * factor.recip()).map(|p| p * *factor)
            }
        }
    }

    /// `sup {Im z : z ∈ F}`, zero for the empty hull.
    pub fn sup_im(&self) -> f64 {
        match self {
            Hull::Empty => 0.0,
            Hull::VerticalSlit { height, .. } => *height,
            Hull::HalfDisk { radius, .. } => *radius,
            Hull::Segment { a, b } => a.im.max(b.im),
            Hull::Ridge { profile } => profile.max_value(),
            Hull::Union { parts } => parts.iter().map(Hull::sup_im).fold(0.0, f64::max),
            Hull::Shifted { hull, .. } => hull.sup_im(),
            Hull::Scaled { hull, factor } => factor * hull.sup_im(),
        }
    }

    /// Bounding interval of the real parts of points of `F` with
    /// `Im ≥ level`; `None` when there are none. May be infinite for strips.
    pub fn x_range(&self, level: f64) -> Option<(f64, f64)> {
        match self {
            Hull::Empty => None,
            Hull::VerticalSlit { base, height } => (*height >= level).then_some((*base, *base)),
            Hull::HalfDisk { center, radius } => (*radius >= level).then(|| {
                let half = (radius * radius - level.max(0.0).powi(2)).max(0.0).sqrt();
                (center - half, center + half)
            }),
            Hull::Segment { a, b } => {
                if a.im.max(b.im) < level {
                    return None;
                }
                let lerp = |p: Point, q: Point| {
                    if p.im >= level {
                        p.re
                    } else {
                        p.re + (q.re - p.re) * (level - p.im) / (q.im - p.im)
                    }
                };
                let (x1, x2) = (lerp(*a, *b), lerp(*b, *a));
                Some((x1.min(x2), x1.max(x2)))
            }
            Hull::Ridge { profile } => profile.level_range(level),
            Hull::Union { parts } => parts
                .iter()
                .filter_map(|p| p.x_range(level))
                .reduce(|(a, b), (c, d)| (a.min(c), b.max(d))),
            Hull::Shifted { hull, by } => hull.x_range(level).map(|(a, b)| (a + by, b + by)),
            Hull::Scaled { hull, factor } => {
                hull.x_range(level / factor).map(|(a, b)| (a * factor, b * factor))
            }
        }
    }

    /// Horizontal center used to place quadrature windows.
    pub fn center_re(&self) -> f64 {
        match self {
            Hull::Ridge { profile } => profile.center(),
            Hull::Shifted { hull, by } => hull.center_re() + by,
            Hull::Scaled { hull, factor } => hull.center_re() * factor,
            _ => match self.x_range(0.0) {
                Some((a, b)) if a.is_finite() && b.is_finite() => 0.5 * (a + b),
                _ => 0.0,
            },
        }
    }

    /// Deterministic points of `F`, roughly `k` per piece.
    pub fn sample_points(&self, k: usize) -> Vec<Point> {
        let k = k.max(2);
        let frac = |i: usize| (i + 1) as f64 / k as f64;
        match self {
            Hull::Empty => Vec::new(),
            Hull::VerticalSlit { base, height } => {
                (0..k).map(|i| Point::new(*base, height * frac(i))).collect()
            }
            Hull::HalfDisk { center, radius } => {
                let mut out = Vec::with_capacity(2 * k);
                for i in 0..k {
                    let th = std::f64::consts::PI * (i as f64 + 0.5) / k as f64;
                    out.push(Point::new(center + radius * th.cos(), radius * th.sin()));
                    out.push(Point::new(center + 0.5 * radius * th.cos(), 0.5 * radius * th.sin()));
                }
                out
            }
            Hull::Segment { a, b } => (0..=k)
                .map(|i| *a + (*b - *a) * (i as f64 / k as f64))
                .filter(|p| p.im > 0.0)
                .collect(),
            Hull::Ridge { profile } => profile.sample_points(k),
            Hull::Union { parts } => parts.iter().flat_map(|p| p.sample_points(k)).collect(),
            Hull::Shifted { hull, by } => hull
                .sample_points(k)
                .into_iter()
                .map(|p| Point::new(p.re + by, p.im))
                .collect(),
            Hull::Scaled { hull, factor } => {
                hull.sample_points(k).into_iter().map(|p| p * *factor).collect()
            }
        }
    }

    /// Spot check of `self ⊂ other`: every sample point of `self` must lie
    /// in the closure of `other` up to `tol`. Evidence, not proof.
    pub fn is_subset_of(&self, other: &Hull, samples: usize, tol: f64) -> bool {
        self.sample_points(samples).into_iter().all(|p| other.distance(p) <= tol)
    }
}
