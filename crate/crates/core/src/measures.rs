//! Distances between empirical harmonic measures and the small-ball
//! probes: regularity at a point, the projection bound near a slit, and
//! hitting probabilities of shrinking balls.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Hull, Point, Slit, SlitDomain};
use crate::sampler::{estimate_functional, Domain, EmpiricalMeasure, ExitTag, Probe, WalkConfig};
use crate::stats::Estimate;
use crate::stream::Stream;

const TAG_REGULARITY: u64 = 0x5245_4755;
const TAG_BEURLING: u64 = 0x4245_5552;
const TAG_HITTING: u64 = 0x4849_5454;

/// Failure probability of the simultaneous confidence radius.
pub const CONFIDENCE_ALPHA: f64 = 0.05;

/// Hat functions `f_{a,s}(z) = s/(s+1)·max(0, 1 - |z - a|/s)` on a regular
/// grid of centers, one copy per scale. Each has `sup f = s/(s+1)` and
/// Lipschitz constant `1/(s+1)`, so bounded-Lipschitz norm exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDictionary {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub scales: Vec<f64>,
}

impl TestDictionary {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize, scales: Vec<f64>) -> Result<Self> {
        let d = TestDictionary { x_range, y_range, nx, ny, scales };
        d.check()?;
        Ok(d)
    }

    /// 21 × 11 centers over the hull's bounding box joined with `[-L, L]`
    /// on `R`, scales `{1/4, 1, 4}`.
    pub fn default_for(hull: &Hull, half_width: f64) -> Result<Self> {
        let c = hull.center_re();
        let (lo, hi) = hull.x_range(0.0).unwrap_or((c, c));
        let lo = if lo.is_finite() { lo.min(-half_width) } else { -half_width };
        let hi = if hi.is_finite() { hi.max(half_width) } else { half_width };
        let top = hull.sup_im();
        let top = if top.is_finite() && top > 0.0 { top } else { 1.0 };
        TestDictionary::new((lo, hi), (0.0, top), 21, 11, vec![0.25, 1.0, 4.0])
    }

    pub fn check(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 1 || self.scales.is_empty() {
            return Err(Error::invalid("dictionary needs nx ≥ 2, ny ≥ 1 and at least one scale"));
        }
        if !(self.x_range.0 < self.x_range.1) || !(self.y_range.0 <= self.y_range.1) {
            return Err(Error::invalid("dictionary ranges must be ordered"));
        }
        for &s in &self.scales {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid("dictionary scales must be positive"));
            }
            let norm = s / (s + 1.0) + 1.0 / (s + 1.0);
            if norm > 1.0 + 1e-12 {
                return Err(Error::invalid(format!("member at scale {s} has norm {norm} > 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    fn dy(&self) -> f64 {
        if self.ny > 1 {
            (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64
        } else {
            0.0
        }
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new(self.x_range.0 + self.dx() * i as f64, self.y_range.0 + self.dy() * j as f64)
    }

    /// `(scale index, i, j)` of member `k`, scale-major.
    pub fn member(&self, k: usize) -> (usize, usize, usize) {
        let per = self.nx * self.ny;
        (k / per, (k % per) % self.nx, (k % per) / self.nx)
    }

    pub fn eval(&self, k: usize, z: Point) -> f64 {
        let (si, i, j) = self.member(k);
        hat(self.scales[si], self.center(i, j), z)
    }

    /// Adds `w·f_k(z)` to `acc` for every member not vanishing at `z`.
    fn accumulate(&self, z: Point, w: f64, acc: &mut [f64]) {
        let (dx, dy) = (self.dx(), self.dy());
        let per = self.nx * self.ny;
        for (si, &s) in self.scales.iter().enumerate() {
            let span = |v: f64, lo: f64, step: f64, n: usize| -> (usize, usize) {
                if step == 0.0 {
                    return (0, n - 1);
                }
                let a = ((v - s - lo) / step).ceil().max(0.0);
                let b = ((v + s - lo) / step).floor().min((n - 1) as f64);
                if a > b {
                    (1, 0)
                } else {
                    (a as usize, b as usize)
                }
            };
            let (i0, i1) = span(z.re, self.x_range.0, dx, self.nx);
            let (j0, j1) = span(z.im, self.y_range.0, dy, self.ny);
            if i0 > i1 || j0 > j1 {
                continue;
            }
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let v = hat(s, self.center(i, j), z);
                    if v > 0.0 {
                        acc[si * per + j * self.nx + i] += w * v;
                    }
                }
            }
        }
    }

    /// `∫ f_k dμ / μ(total)` for every member.
    pub fn integrals(&self, mu: &EmpiricalMeasure) -> Vec<f64> {
        let k = self.len();
        let parts: Vec<Vec<f64>> = mu
            .samples
            .par_chunks(4096)
            .map(|chunk| {
                let mut acc = vec![0.0; k];
                for r in chunk {
                    self.accumulate(r.point, r.weight, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; k];
        for p in &parts {
            total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let w = mu.total_weight;
        if w > 0.0 {
            total.iter_mut().for_each(|v| *v /= w);
        }
        total
    }

    /// Largest member range `sup f - inf f`.
    pub fn max_range(&self) -> f64 {
        self.scales.iter().map(|s| s / (s + 1.0)).fold(0.0, f64::max)
    }
}

fn hat(s: f64, a: Point, z: Point) -> f64 {
    s / (s + 1.0) * (1.0 - z.dist(a) / s).max(0.0)
}

/// Kish effective sample size `(Σw)² / Σw²`.
fn effective_n(mu: &EmpiricalMeasure) -> f64 {
    let s2: f64 = mu.samples.iter().map(|r| r.weight * r.weight).sum();
    if s2 > 0.0 {
        mu.total_weight * mu.total_weight / s2
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlDistance {
    /// `max_k |∫f_k dμ - ∫f_k dν|`, a lower bound for the bounded-Lipschitz
    /// distance of the two empirical measures.
    pub value: f64,
    pub argmax_center: Point,
    pub argmax_scale: f64,
    /// Hoeffding radius, simultaneous over the dictionary at level
    /// [`CONFIDENCE_ALPHA`], for the sampling error of `value` as an
    /// estimate of the same surrogate between the underlying laws.
    pub confidence_radius: f64,
    pub n_mu: usize,
    pub n_nu: usize,
}

pub fn confidence_radius(dict: &TestDictionary, n_mu: f64, n_nu: f64) -> f64 {
    if n_mu <= 0.0 || n_nu <= 0.0 {
        return f64::INFINITY;
    }
    let k = dict.len() as f64;
    dict.max_range() * ((1.0 / n_mu + 1.0 / n_nu) * (2.0 * k / CONFIDENCE_ALPHA).ln() / 2.0).sqrt()
}

pub fn bl_distance_surrogate(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, dict: &TestDictionary) -> Result<BlDistance> {
    dict.check()?;
    if mu.total_weight <= 0.0 || nu.total_weight <= 0.0 {
        return Err(Error::invalid("both measures need positive total weight"));
    }
    let a = dict.integrals(mu);
    let b = dict.integrals(nu);
    let (k, value) = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0, 0.0), |best, (k, d)| if d > best.1 { (k, d) } else { best });
    let (si, i, j) = dict.member(k);
    Ok(BlDistance {
        value,
        argmax_center: dict.center(i, j),
        argmax_scale: dict.scales[si],
        confidence_radius: confidence_radius(dict, effective_n(mu), effective_n(nu)),
        n_mu: mu.len(),
        n_nu: nu.len(),
    })
}

/// `Hm_D(z, B(z, eps))`: the fraction of walks from `z` in
/// `D = H \ (F ∪ K)` that exit within `eps` of `z`.
pub fn regularity_probe(hull: &Hull, slits: &SlitDomain, z: Point, eps: f64, n: usize, cfg: &WalkConfig) -> Result<Estimate> {
    cfg.check()?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let domain = Domain::new(hull, slits);
    domain.check_start(z)?;
    let stream = Stream::root(cfg.seed).child(TAG_REGULARITY);
    Ok(estimate_functional(&domain, z, n, cfg, stream, |e| if e.point.dist(z) <= eps { 1.0 } else { 0.0 }))
}

/// Projection lower bound for the probability that a walk from a point at
/// distance `rho` from a segment of length `> 2·eps` hits it before leaving
/// the disk of radius `eps` around the start.
pub fn beurling_bound(rho: f64, eps: f64) -> f64 {
    2.0 / PI * (0.5 * ((eps / rho).sqrt() - (rho / eps).sqrt())).atan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeurlingReport {
    pub point: Point,
    pub rho: f64,
    pub eps: f64,
    pub bound: f64,
    pub estimate: Estimate,
    /// `estimate ≥ bound - 3·stderr`
    pub passed: bool,
}

/// Walks from `z` inside `B(z, eps)` with the slit as the only obstacle;
/// compares the probability of hitting the slit first with
/// [`beurling_bound`]. `others` are obstacles the disk must not meet.
pub fn beurling_check(
    slit: &Slit,
    z: Point,
    eps: f64,
    others: (&Hull, &SlitDomain),
    n: usize,
    cfg: &WalkConfig,
) -> Result<BeurlingReport> {
    cfg.check()?;
    let rho = slit.distance(z);
    if !(rho > 0.0 && eps > rho) {
        return Err(Error::precondition(format!("need 0 < rho < eps, got rho = {rho}, eps = {eps}")));
    }
    if slit.len() <= 2.0 * eps {
        return Err(Error::precondition(format!(
            "the length of the slit ({}) must be greater than 2·eps = {}",
            slit.len(),
            2.0 * eps
        )));
    }
    if z.im <= eps {
        return Err(Error::precondition("the disk B(z, eps) meets the real line"));
    }
    let (hull, slits) = others;
    if !hull.is_empty() && hull.distance(z) <= eps {
        return Err(Error::precondition("the disk B(z, eps) meets the hull"));
    }
    for s in &slits.slits {
        if s != slit && s.distance(z) <= eps {
            return Err(Error::precondition("the disk B(z, eps) meets another slit"));
        }
    }
    let single = SlitDomain::new(vec![*slit]);
    let domain = Domain::new(&Hull::Empty, &single).with_probe(Probe::Circle(Ball::new(z, eps)));
    let stream = Stream::root(cfg.seed).child(TAG_BEURLING);
    let estimate = estimate_functional(&domain, z, n, cfg, stream, |e| if e.tag == ExitTag::Slit(0) { 1.0 } else { 0.0 });
    let bound = beurling_bound(rho, eps);
    let passed = estimate.mean >= bound - 3.0 * estimate.stderr;
    Ok(BeurlingReport { point: z, rho, eps, bound, estimate, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingCell {
    pub eps: f64,
    pub target: Point,
    pub start: Point,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub eps: f64,
    /// Largest cell estimate at this `eps`.
    pub max: f64,
    pub max_stderr: f64,
    pub argmax_target: Point,
    pub argmax_start: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTable {
    pub cells: Vec<HittingCell>,
    pub rows: Vec<HittingRow>,
    /// Each row is at most the previous (larger-eps) row plus 3 combined
    /// standard errors.
    pub monotone: bool,
}

/// Start points on each slit: `per_slit` evenly spaced points including
/// both ends.
pub fn slit_sample_points(slits: &SlitDomain, per_slit: usize) -> Vec<Point> {
    let k = per_slit.max(2);
    slits
        .slits
        .iter()
        .flat_map(|s| (0..k).map(move |i| Point::new(s.x_lo + s.len() * i as f64 / (k - 1) as f64, s.y)))
        .collect()
}

/// For each `eps`, the largest estimated probability over targets `z` and
/// start points `w` on the slits that a walk from `w` in `H` reaches
/// `B(z, eps)` before `R`.
pub fn hitting_probe(
    slits: &SlitDomain,
    targets: &[Point],
    eps_list: &[f64],
    starts_per_slit: usize,
    n: usize,
    cfg: &WalkConfig,
) -> Result<HittingTable> {
    cfg.check()?;
    slits.check()?;
    if slits.is_empty() || targets.is_empty() || eps_list.is_empty() {
        return Err(Error::invalid("hitting probe needs slits, targets and eps values"));
    }
    let gap = targets.iter().map(|&z| slits.distance(z)).fold(f64::INFINITY, f64::min);
    for &e in eps_list {
        if !(e > 0.0 && e < gap / 2.0) {
            return Err(Error::precondition(format!(
                "eps = {e} must lie in (0, dist(S, K)/2 = {})",
                gap / 2.0
            )));
        }
    }
    if targets.iter().any(|z| z.im < 0.0) {
        return Err(Error::invalid("targets must lie in the closed upper half-plane"));
    }
    let starts = slit_sample_points(slits, starts_per_slit);
    let none = SlitDomain::empty();
    let hull = Hull::Empty;
    let root = Stream::root(cfg.seed).child(TAG_HITTING);
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let mut best: Option<HittingRow> = None;
        for (ti, &z) in targets.iter().enumerate() {
            let domain = Domain::new(&hull, &none).with_probe(Probe::Circle(Ball::new(z, eps)));
            for (wi, &w) in starts.iter().enumerate() {
                // common random numbers across eps for each (target, start)
                let s = root.child(ti as u64).child(wi as u64);
                let estimate = estimate_functional(&domain, w, n, cfg, s, |e| if e.tag == ExitTag::ProbeSet { 1.0 } else { 0.0 });
                if best.as_ref().is_none_or(|b| estimate.mean > b.max) {
                    best = Some(HittingRow { eps, max: estimate.mean, max_stderr: estimate.stderr, argmax_target: z, argmax_start: w });
                }
                cells.push(HittingCell { eps, target: z, start: w, estimate });
            }
        }
        rows.extend(best);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].eps.total_cmp(&rows[a].eps));
    let monotone = order.windows(2).all(|w| {
        let (big, small) = (&rows[w[0]], &rows[w[1]]);
        small.max <= big.max + 3.0 * big.max_stderr.hypot(small.max_stderr)
    });
    Ok(HittingTable { cells, rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ExitRecord;

    fn point_mass(p: Point) -> EmpiricalMeasure {
        EmpiricalMeasure::from_records(
            vec![ExitRecord { point: p, tag: ExitTag::RealLine, weight: 1.0, chunk: 0, steps: 0 }],
            1,
            0,
        )
    }

    fn dict() -> TestDictionary {
        TestDictionary::new((-5.0, 5.0), (0.0, 1.0), 21, 11, vec![0.25, 1.0, 4.0]).unwrap()
    }

    #[test]
    fn members_have_unit_norm_and_fast_path_matches_direct_evaluation() {
        let d = dict();
        let z = Point::new(0.37, 0.21);
        let mut acc = vec![0.0; d.len()];
        d.accumulate(z, 1.0, &mut acc);
        for (k, &a) in acc.iter().enumerate() {
            assert!((a - d.eval(k, z)).abs() < 1e-15, "member {k}");
            assert!(a <= 0.8 + 1e-15);
        }
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let m = point_mass(Point::new(0.3, 0.0));
        assert_eq!(bl_distance_surrogate(&m, &m, &dict()).unwrap().value, 0.0);
    }

    #[test]
    fn point_masses_at_distance_t() {
        let d = TestDictionary::new((-5.0, 5.0), (0.0, 1.0), 21, 11, vec![1.0]).unwrap();
        for t in [0.1, 0.5, 1.0] {
            let v = bl_distance_surrogate(&point_mass(Point::new(0.0, 0.0)), &point_mass(Point::new(t, 0.0)), &d).unwrap();
            assert!(v.value >= t / 2.0 - 1e-12, "{t}: {v:?}");
            assert!(v.value <= 2.0);
        }
    }

    #[test]
    fn radius_shrinks_with_samples() {
        let d = dict();
        assert!(confidence_radius(&d, 4e4, 4e4) < confidence_radius(&d, 1e4, 1e4) / 1.9);
    }

    #[test]
    fn regularity_near_the_real_line() {
        let e = regularity_probe(&Hull::Empty, &SlitDomain::empty(), Point::new(0.0, 0.01), 0.1, 20_000, &WalkConfig::with_seed(4)).unwrap();
        let exact = 2.0 / PI * 99f64.sqrt().atan();
        assert!((e.mean - exact).abs() <= 3.0 * e.stderr + 1e-3, "{e:?} vs {exact}");
        let far = regularity_probe(&Hull::Empty, &SlitDomain::empty(), Point::new(0.0, 1.0), 0.1, 2000, &WalkConfig::default()).unwrap();
        assert_eq!(far.mean, 0.0);
    }

    #[test]
    fn beurling_values() {
        assert!(beurling_bound(1.0, 1.0).abs() < 1e-15);
        assert!((beurling_bound(0.01, 1.0) - 2.0 / PI * 4.95f64.atan()).abs() < 1e-12);
        assert!((beurling_bound(0.01, 1.0) - 0.873).abs() < 1e-3);
    }

    #[test]
    fn beurling_rejects_short_slits() {
        let s = Slit::new(1.0, 0.0, 0.1);
        let r = beurling_check(&s, Point::new(0.05, 1.01), 0.1, (&Hull::Empty, &SlitDomain::empty()), 10, &WalkConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn hitting_probe_rejects_large_eps() {
        let k = SlitDomain::new(vec![Slit::new(1.0, -1.0, 1.0)]);
        let r = hitting_probe(&k, &[Point::new(5.0, 0.0)], &[3.0], 3, 10, &WalkConfig::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
