//! Walk-on-spheres simulation of absorbed Brownian motion in
//! `H \ (F ∪ K ∪ probe)`.
//!
//! From the current point the walk jumps to a uniform point on the largest
//! circle that stays inside the domain, and stops once that circle's radius
//! falls below `eps_absorb`. The exit is attributed to the nearest boundary
//! piece, ties going to the piece listed first in [`ExitTag`].
//!
//! Two hitting times share one notation in the literature; here they are
//! separated by [`HitMode`]: `Unconditional` is the first hit of `F` by the
//! walk in `H` (slits ignored), `BeforeSlits` the first hit of `F` by the
//! walk that is also killed on the slits.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Hull, Point, Rect, SlitDomain};
use crate::stats::{Estimate, Moments, TRUNCATION_LIMIT};
use crate::stream::{run_chunked, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    /// Shell thickness at which a walk is absorbed.
    pub eps_absorb: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub chunk_size: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { eps_absorb: 1e-4, max_steps: 1_000_000, seed: 0, chunk_size: 1000 }
    }
}

impl WalkConfig {
    pub fn with_seed(seed: u64) -> Self {
        WalkConfig { seed, ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eps_absorb.is_finite() && self.eps_absorb > 0.0) {
            return Err(Error::invalid("eps_absorb must be positive"));
        }
        if self.max_steps == 0 || self.chunk_size == 0 {
            return Err(Error::invalid("max_steps and chunk_size must be positive"));
        }
        Ok(())
    }
}

/// Boundary piece that absorbed a walk. Declaration order is the tie-break
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExitTag {
    RealLine,
    HullF,
    Slit(usize),
    ProbeSet,
    Truncated,
}

impl std::fmt::Display for ExitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitTag::RealLine => write!(f, "real_line"),
            ExitTag::HullF => write!(f, "hull"),
            ExitTag::Slit(j) => write!(f, "slit_{j}"),
            ExitTag::ProbeSet => write!(f, "probe"),
            ExitTag::Truncated => write!(f, "truncated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub point: Point,
    pub tag: ExitTag,
    pub steps: u64,
    /// The start point was already within `eps_absorb` of the boundary (or
    /// outside the domain) and the walk was absorbed without moving.
    pub start_violation: bool,
}

/// Extra absorbing curve: a probe circle (`B(z, ε)` targets and the disk
/// exits of regularity probes) or the rectangle around a darned slit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    Circle(Ball),
    Rect(Rect),
}

impl Probe {
    fn distance(&self, z: Point) -> f64 {
        match self {
            Probe::Circle(b) => b.dist_to_circle(z),
            Probe::Rect(r) => r.dist_to_boundary(z),
        }
    }
}

/// The region a walk lives in: `H` minus the hull, the slits and the probe.
#[derive(Debug, Clone, Copy)]
pub struct Domain<'a> {
    pub hull: &'a Hull,
    pub slits: &'a SlitDomain,
    pub probe: Option<Probe>,
}

impl<'a> Domain<'a> {
    pub fn new(hull: &'a Hull, slits: &'a SlitDomain) -> Self {
        Domain { hull, slits, probe: None }
    }

    pub fn with_probe(mut self, probe: Probe) -> Self {
        self.probe = Some(probe);
        self
    }

    /// Radius of the largest admissible jump and the piece attaining it.
    pub fn nearest(&self, z: Point) -> (f64, ExitTag) {
        let mut best = (z.im, ExitTag::RealLine);
        let d = self.hull.radius_bound(z);
        if d < best.0 {
            best = (d, ExitTag::HullF);
        }
        for (j, s) in self.slits.slits.iter().enumerate() {
            let d = s.distance(z);
            if d < best.0 {
                best = (d, ExitTag::Slit(j));
            }
        }
        if let Some(p) = &self.probe {
            let d = p.distance(z);
            if d < best.0 {
                best = (d, ExitTag::ProbeSet);
            }
        }
        best
    }

    /// Rejects start points outside the open domain.
    pub fn check_start(&self, z: Point) -> Result<()> {
        if !z.is_finite() || z.im <= 0.0 {
            return Err(Error::precondition(format!("start point {z:?} is not in the upper half-plane")));
        }
        if self.hull.contains(z) || self.hull.distance(z) == 0.0 {
            return Err(Error::precondition(format!("start point {z:?} lies in the hull F")));
        }
        if self.slits.distance(z) == 0.0 {
            return Err(Error::precondition(format!("start point {z:?} lies on a slit")));
        }
        Ok(())
    }
}

/// One walk-on-spheres path from `z` until absorption or `max_steps`.
pub fn wos_exit<R: Rng + ?Sized>(domain: &Domain, z: Point, cfg: &WalkConfig, rng: &mut R) -> ExitSample {
    let eps = cfg.eps_absorb;
    let (mut r, mut tag) = domain.nearest(z);
    if !(z.im > 0.0) || r <= eps {
        return ExitSample { point: z, tag, steps: 0, start_violation: true };
    }
    let mut z = z;
    let mut steps = 0u64;
    while steps < cfg.max_steps {
        let (s, c) = (TAU * rng.random::<f64>()).sin_cos();
        z = Point::new(z.re + r * c, z.im + r * s);
        steps += 1;
        (r, tag) = domain.nearest(z);
        if r <= eps {
            return ExitSample { point: z, tag, steps, start_violation: false };
        }
    }
    ExitSample { point: z, tag: ExitTag::Truncated, steps, start_violation: false }
}

/// A raw exit with its provenance, as exported to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub point: Point,
    pub tag: ExitTag,
    pub weight: f64,
    pub chunk: usize,
    pub steps: u64,
}

/// Empirical harmonic measure: unit-weight exit samples. Truncated walks are
/// counted but not part of the measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub samples: Vec<ExitRecord>,
    pub total_weight: f64,
    pub requested: usize,
    pub truncated: u64,
    pub truncated_fraction: f64,
    pub flagged: bool,
}

impl EmpiricalMeasure {
    pub fn from_records(records: Vec<ExitRecord>, requested: usize, truncated: u64) -> Self {
        let total_weight = records.iter().map(|r| r.weight).sum();
        let frac = if requested == 0 { 0.0 } else { truncated as f64 / requested as f64 };
        EmpiricalMeasure {
            samples: records,
            total_weight,
            requested,
            truncated,
            truncated_fraction: frac,
            flagged: frac > TRUNCATION_LIMIT,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Normalized mass of the samples satisfying `pred`, with its binomial
    /// standard error.
    pub fn mass_where(&self, pred: impl Fn(&ExitRecord) -> bool) -> Estimate {
        let mut m = Moments::default();
        for r in &self.samples {
            m.push(if pred(r) { 1.0 } else { 0.0 });
        }
        let mut e = Estimate::from_moments(&m, self.truncated, f64::NAN);
        e.bias_note = "fraction of exit samples".into();
        e
    }
}

/// `n` independent exits from `z`.
pub fn sample_harmonic_measure(
    domain: &Domain,
    z: Point,
    n: usize,
    cfg: &WalkConfig,
    stream: Stream,
) -> Result<EmpiricalMeasure> {
    cfg.check()?;
    domain.check_start(z)?;
    let chunks = run_chunked(stream, n, cfg.chunk_size, |spec, rng| {
        let mut out = Vec::with_capacity(spec.count);
        let mut truncated = 0u64;
        for _ in 0..spec.count {
            let e = wos_exit(domain, z, cfg, rng);
            if e.tag == ExitTag::Truncated {
                truncated += 1;
            } else {
                out.push(ExitRecord { point: e.point, tag: e.tag, weight: 1.0, chunk: spec.index, steps: e.steps });
            }
        }
        (out, truncated)
    });
    let mut records = Vec::with_capacity(n);
    let mut truncated = 0;
    for (r, t) in chunks {
        records.extend(r);
        truncated += t;
    }
    Ok(EmpiricalMeasure::from_records(records, n, truncated))
}

/// Monte Carlo mean of a per-exit functional over `n` walks from `z`.
/// Truncated walks are excluded and counted.
pub fn estimate_functional<G>(
    domain: &Domain,
    z: Point,
    n: usize,
    cfg: &WalkConfig,
    stream: Stream,
    g: G,
) -> Estimate
where
    G: Fn(&ExitSample) -> f64 + Sync,
{
    let parts = run_chunked(stream, n, cfg.chunk_size, |spec, rng| {
        let mut m = Moments::default();
        let mut truncated = 0u64;
        for _ in 0..spec.count {
            let e = wos_exit(domain, z, cfg, rng);
            if e.tag == ExitTag::Truncated {
                truncated += 1;
            } else {
                m.push(g(&e));
            }
        }
        (m, truncated)
    });
    let mut total = Moments::default();
    let mut truncated = 0;
    for (m, t) in &parts {
        total.merge(m);
        truncated += t;
    }
    Estimate::from_moments(&total, truncated, cfg.eps_absorb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// `E_z[Im Z_σF]` for absorbed Brownian motion in `H`.
    Unconditional,
    /// `E_z[Im Z_σF ; σF < σK]`: walks that reach a slit first contribute 0.
    BeforeSlits,
}

/// Value of `Im` at the hit of `F`; zero on every other exit.
pub fn im_on_hull(e: &ExitSample) -> f64 {
    if e.tag == ExitTag::HullF {
        e.point.im.max(0.0)
    } else {
        0.0
    }
}

pub fn expected_im_at_hit(
    z: Point,
    hull: &Hull,
    slits: &SlitDomain,
    mode: HitMode,
    n: usize,
    cfg: &WalkConfig,
    stream: Stream,
) -> Result<Estimate> {
    cfg.check()?;
    if hull.is_empty() {
        let domain = Domain::new(hull, slits);
        domain.check_start(z)?;
        return Ok(Estimate::exact(0.0, "empty hull: no walk can hit F"));
    }
    let none = SlitDomain::empty();
    let domain = match mode {
        HitMode::Unconditional => Domain::new(hull, &none),
        HitMode::BeforeSlits => {
            if slits.is_empty() {
                return Err(Error::invalid("mode before_slits needs at least one slit"));
            }
            Domain::new(hull, slits)
        }
    };
    domain.check_start(z)?;
    Ok(estimate_functional(&domain, z, n, cfg, stream, im_on_hull))
}
