//! Capacity in a parallel slit half-plane for Brownian motion with darning
//! (BMD): each slit `C_j` is collapsed to a single point `c*_j`, and the
//! process leaving `c*_j` enters the domain with the excursion law of the
//! slit.
//!
//! The BMD expectation `V*(z) = E*_z[Im Z*_σF]` reduces to absorbed walks
//! plus a finite Markov chain on the darned points. With `η_j` a rectangle
//! around `C_j`, `ν_j` the BMD hitting law of `η_j` from `c*_j`, and
//!
//! ```text
//! p_jk = P_{ν_j}(walk in H \ (F ∪ K) hits C_k first),   p_j0 = 1 - Σ_k p_jk,
//! I_j  = ∫ V dν_j,   V(z) = E_z[Im Z_σF ; σF < σK],
//! ```
//!
//! the values at the darned points are `V*(c*) = M·b` with
//! `q_jk = p_jk / (1 - p_jj)` off the diagonal, `M = (I - Q)⁻¹` and
//! `b_k = I_k / (1 - p_kk)`. Away from the slits
//! `V*(z) = V(z) + Σ_j φ_j(z)·V*(c*_j)`, where `φ_j(z)` is the probability
//! that the walk from `z` reaches `C_j` before `F ∪ R ∪ K \ C_j`.
//!
//! `ν_j` is approximated by starting walks on a contour close to `C_j` and
//! keeping those that reach `η_j` before falling back onto `C_j`. By Green's
//! identity `ν_j` is the flux measure `∂_n h ds` of `h = P(hit η_j before
//! C_j)`, and the accepted starts reproduce it when the start density is
//! flat in a coordinate where `h` is smooth up to the slit. The default
//! contour is the confocal ellipse around the slit, sampled uniformly in
//! the angle of the Joukowski coordinate, which straightens the square-root
//! behaviour at the slit ends; the bias is then `O(delta)`. Starting
//! uniformly by arclength at constant distance `delta` is kept as an
//! option; near the ends it converges more slowly.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Hull, Point, Rect, Slit, SlitDomain};
use crate::hcap::{check_eta, check_window, default_eta, finish, trapezoid, NodeValue, HcapEstimate};
use crate::linalg::{self, Matrix};
use crate::sampler::{im_on_hull, wos_exit, Domain, ExitTag, Probe, WalkConfig};
use crate::stats::{Estimate, Moments};
use crate::stream::{run_batches, Stream};

const TAG_NU: u64 = 0x4e55;
const TAG_CHAIN: u64 = 0x4348_4149;
const TAG_VSTAR: u64 = 0x5653;
const TAG_BMD_HCAP: u64 = 0x4248_4341;

/// Exit-law sampling gives up below this acceptance rate.
const MIN_ACCEPTANCE: f64 = 1e-4;
/// Above this 1-norm condition number `(I - Q)` is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;
/// Delete-one-group jackknife groups for the chain uncertainty.
pub const JACKKNIFE_GROUPS: usize = 10;
const NEUMANN_TERMS: usize = 50;

/// Slits, envelope `F̃` and the rectangles `η_j` used by the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSetup {
    pub slits: SlitDomain,
    pub envelope: Hull,
    /// Margin of the rectangle `η_j` around slit `j`.
    pub margins: Vec<f64>,
    /// Offset of the start contour used to sample `ν_j`.
    pub delta: f64,
    #[serde(default)]
    pub entrance: Entrance,
}

/// Start contour for the exit-law sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entrance {
    /// Confocal ellipse at minor semi-axis `delta`, uniform in the
    /// conformal angle.
    #[default]
    Confocal,
    /// Curve at constant distance `delta`, uniform by arclength.
    Offset,
}

impl ChainSetup {
    pub fn new(slits: SlitDomain, envelope: Hull, margins: Vec<f64>, delta: f64) -> Result<Self> {
        let s = ChainSetup { slits, envelope, margins, delta, entrance: Entrance::default() };
        s.check()?;
        Ok(s)
    }

    /// Margins at 80% of the largest admissible value for every slit and
    /// `delta` at a fifth of the smallest margin.
    pub fn with_default_margins(slits: SlitDomain, envelope: Hull) -> Result<Self> {
        slits.check()?;
        let margins: Vec<f64> = (0..slits.len()).map(|j| 0.8 * max_margin(&slits, &envelope, j)).collect();
        let delta = 0.2 * margins.iter().copied().fold(f64::INFINITY, f64::min);
        let delta = if delta.is_finite() { delta } else { 0.05 };
        ChainSetup::new(slits, envelope, margins, delta)
    }

    pub fn len(&self) -> usize {
        self.slits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slits.is_empty()
    }

    pub fn curve(&self, j: usize) -> Rect {
        self.slits.slits[j].surrounding_rect(self.margins[j])
    }

    pub fn with_margin_factor(&self, factor: f64) -> Result<Self> {
        let s = ChainSetup { margins: self.margins.iter().map(|m| m * factor).collect(), ..self.clone() };
        s.check()?;
        Ok(s)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let s = ChainSetup { delta, ..self.clone() };
        s.check()?;
        Ok(s)
    }

    pub fn with_entrance(&self, entrance: Entrance) -> Self {
        ChainSetup { entrance, ..self.clone() }
    }

    pub fn check(&self) -> Result<()> {
        self.slits.check()?;
        self.envelope.check()?;
        if self.margins.len() != self.slits.len() {
            return Err(Error::invalid(format!(
                "{} margins given for {} slits",
                self.margins.len(),
                self.slits.len()
            )));
        }
        for (j, &m) in self.margins.iter().enumerate() {
            let limit = max_margin(&self.slits, &self.envelope, j);
            if !(m > 0.0 && m < limit) {
                return Err(Error::precondition(format!(
                    "margin {m} of slit {j} must lie in (0, {limit:.6}): the curve around a slit \
                     has to stay closer to it than half the distance to the other slits, to F̃ \
                     and to R"
                )));
            }
        }
        if !self.slits.is_empty() {
            let min_m = self.margins.iter().copied().fold(f64::INFINITY, f64::min);
            if !(self.delta > 0.0 && self.delta < min_m / 4.0) {
                return Err(Error::precondition(format!(
                    "delta = {} must lie in (0, min margin / 4 = {})",
                    self.delta,
                    min_m / 4.0
                )));
            }
        }
        Ok(())
    }
}

/// Half of the distance from slit `j` to the other slits, to `F̃` and to `R`.
fn max_margin(slits: &SlitDomain, envelope: &Hull, j: usize) -> f64 {
    let s = &slits.slits[j];
    let others = slits
        .slits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, o)| s.gap_to(o))
        .fold(f64::INFINITY, f64::min);
    0.5 * others.min(s.gap_to_hull(envelope)).min(s.y)
}

/// Point at arclength `u` on the boundary of the `delta`-neighbourhood of a
/// horizontal slit (bottom edge, top edge, right cap, left cap).
fn offset_contour_point(s: &Slit, delta: f64, u: f64) -> Point {
    let len = s.len();
    if u < len {
        Point::new(s.x_lo + u, s.y - delta)
    } else if u < 2.0 * len {
        Point::new(s.x_lo + (u - len), s.y + delta)
    } else {
        let th = (u - 2.0 * len) / delta - FRAC_PI_2;
        let end = if th.cos() >= 0.0 { s.right() } else { s.left() };
        Point::new(end.re + delta * th.cos(), end.im + delta * th.sin())
    }
}

/// Point at conformal angle `theta` on the ellipse with foci at the slit
/// ends and minor semi-axis `delta`: the image of `|w| = ρ` under the
/// Joukowski map `w ↦ mid + (len/4)(w + 1/w)`, which sends the exterior of
/// the unit disk onto the exterior of the slit.
fn confocal_point(s: &Slit, delta: f64, theta: f64) -> Point {
    let q = 0.25 * s.len();
    let b = delta / q;
    let rho = 0.5 * (b + (b * b + 4.0).sqrt());
    let mid = s.midpoint();
    let (sn, cs) = theta.sin_cos();
    Point::new(mid.re + q * (rho + 1.0 / rho) * cs, mid.im + q * (rho - 1.0 / rho) * sn)
}

/// Closest approach of the start contour to the slit.
fn contour_gap(setup: &ChainSetup) -> f64 {
    match setup.entrance {
        Entrance::Offset => setup.delta,
        Entrance::Confocal => setup
            .slits
            .slits
            .iter()
            .map(|s| {
                let tip = confocal_point(s, setup.delta, 0.0);
                (tip.re - s.x_hi).min(setup.delta)
            })
            .fold(f64::INFINITY, f64::min),
    }
}

fn check_delta(setup: &ChainSetup, cfg: &WalkConfig) -> Result<()> {
    if contour_gap(setup) <= cfg.eps_absorb {
        return Err(Error::precondition(format!(
            "delta too small relative to eps_absorb: the start contour at delta = {} comes within \
             {:.3e} of a slit, inside the absorption shell eps = {}",
            setup.delta,
            contour_gap(setup),
            cfg.eps_absorb
        )));
    }
    Ok(())
}

/// One accepted draw from the approximate `ν_j`, with the number of starts
/// it took. `None` when the acceptance guard trips.
fn draw_nu<R: Rng + ?Sized>(setup: &ChainSetup, j: usize, cfg: &WalkConfig, rng: &mut R) -> Option<(Point, u64)> {
    let slit = setup.slits.slits[j];
    let rect = setup.curve(j);
    let single = SlitDomain::new(vec![slit]);
    let domain = Domain::new(&Hull::Empty, &single).with_probe(Probe::Rect(rect));
    let perimeter = offset_contour_len(&slit, setup.delta);
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        let u = rng.random::<f64>();
        let start = match setup.entrance {
            Entrance::Confocal => confocal_point(&slit, setup.delta, std::f64::consts::TAU * u),
            Entrance::Offset => offset_contour_point(&slit, setup.delta, perimeter * u),
        };
        let e = wos_exit(&domain, start, cfg, rng);
        if e.tag == ExitTag::ProbeSet {
            return Some((rect.closest_on_boundary(e.point).1, attempts));
        }
        if attempts >= 10_000 && (attempts as f64) * MIN_ACCEPTANCE > 1.0 {
            return None;
        }
    }
}

fn acceptance_error(j: usize) -> Error {
    Error::numerical(format!(
        "acceptance rate below 1e-4 while sampling the exit law of slit {j}: \
         delta too small relative to eps_absorb"
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSample {
    pub slit: usize,
    pub points: Vec<Point>,
    pub attempts: u64,
    pub acceptance: f64,
}

/// `n` accepted points of the approximate exit law `ν_j` on `η_j`.
pub fn sample_nu(setup: &ChainSetup, j: usize, n: usize, cfg: &WalkConfig) -> Result<NuSample> {
    cfg.check()?;
    setup.check()?;
    check_delta(setup, cfg)?;
    if j >= setup.len() {
        return Err(Error::invalid(format!("slit index {j} out of range")));
    }
    let stream = Stream::root(cfg.seed).child(TAG_NU).child(j as u64);
    let parts = run_batches(&[(stream, n)], cfg.chunk_size, |_, spec, rng| {
        let mut pts = Vec::with_capacity(spec.count);
        let mut attempts = 0;
        for _ in 0..spec.count {
            let (p, a) = draw_nu(setup, j, cfg, rng)?;
            pts.push(p);
            attempts += a;
        }
        Some((pts, attempts))
    });
    let mut points = Vec::with_capacity(n);
    let mut attempts = 0;
    for part in parts.into_iter().flatten() {
        let (p, a) = part.ok_or_else(|| acceptance_error(j))?;
        points.extend(p);
        attempts += a;
    }
    Ok(NuSample { slit: j, points, acceptance: n as f64 / attempts.max(1) as f64, attempts })
}

/// Raw tallies behind one chain estimate: for each slit `j`, exit counts of
/// the continued walks (index 0 for `F ∪ R`, `k + 1` for slit `k`) and the
/// sum of `Im` over hits of `F`.
#[derive(Debug, Clone, PartialEq, Default)]
struct Tally {
    counts: Vec<Vec<u64>>,
    v_sum: Vec<f64>,
    v_sq: Vec<f64>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally { counts: vec![vec![0; n + 1]; n], v_sum: vec![0.0; n], v_sq: vec![0.0; n] }
    }

    fn add(&mut self, other: &Tally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.v_sum.iter_mut().zip(&other.v_sum).for_each(|(x, y)| *x += y);
        self.v_sq.iter_mut().zip(&other.v_sq).for_each(|(x, y)| *x += y);
    }

    fn sub(&self, other: &Tally) -> Tally {
        let mut t = self.clone();
        for (a, b) in t.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
        }
        t.v_sum.iter_mut().zip(&other.v_sum).for_each(|(x, y)| *x -= y);
        t.v_sq.iter_mut().zip(&other.v_sq).for_each(|(x, y)| *x -= y);
        t
    }
}

/// Deterministic part of the chain: everything computed from one tally.
#[derive(Debug, Clone, PartialEq)]
struct Solved {
    p: Matrix,
    q: Matrix,
    m: Matrix,
    nu_integrals: Vec<f64>,
    darned: Vec<f64>,
    condition: f64,
}

fn not_substochastic(detail: &str) -> Error {
    Error::numerical(format!("chain not substochastic enough; check geometry ({detail})"))
}

fn solve(t: &Tally) -> Result<Solved> {
    let n = t.counts.len();
    let mut p = vec![vec![0.0; n + 1]; n + 1];
    p[0][0] = 1.0;
    let mut nu_integrals = vec![0.0; n];
    for j in 0..n {
        let total: u64 = t.counts[j].iter().sum();
        if total == 0 {
            return Err(Error::numerical(format!("no completed walks for slit {j}")));
        }
        for k in 0..=n {
            p[j + 1][k] = t.counts[j][k] as f64 / total as f64;
        }
        nu_integrals[j] = t.v_sum[j] / total as f64;
    }
    let leave: Vec<f64> = (0..n).map(|j| 1.0 - p[j + 1][j + 1]).collect();
    if let Some(j) = leave.iter().position(|&l| l <= 0.0) {
        return Err(not_substochastic(&format!("every walk from slit {j} returned to it")));
    }
    let q: Matrix = (0..n)
        .map(|j| (0..n).map(|k| if j == k { 0.0 } else { p[j + 1][k + 1] / leave[j] }).collect())
        .collect();
    let mut a = linalg::identity(n);
    for j in 0..n {
        for k in 0..n {
            a[j][k] -= q[j][k];
        }
    }
    let m = linalg::invert(&a).ok_or_else(|| not_substochastic("I - Q is singular"))?;
    let condition = linalg::norm_one(&a) * linalg::norm_one(&m);
    if !(condition <= MAX_CONDITION) {
        return Err(not_substochastic(&format!("condition number {condition:.3e}")));
    }
    let b: Vec<f64> = (0..n).map(|k| nu_integrals[k] / leave[k]).collect();
    let darned = linalg::mat_vec(&m, &b);
    Ok(Solved { p, q, m, nu_integrals, darned, condition })
}

/// Checks on the estimated chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInvariants {
    /// Largest deviation of a row sum of `p` from 1.
    pub row_sum_error: f64,
    pub spectral_radius: f64,
    pub m_nonnegative: bool,
    /// `max |M - Σ_{m≤50} Q^m|`
    pub neumann_gap: f64,
    /// `max |V*(c*) - (I + P·V*(c*))|` for `V*(c*) = M·b`, `P` including the
    /// diagonal.
    pub fixed_point_gap: f64,
    pub passed: bool,
}

/// Estimated chain on the darned points. Matrix indices: 0 is the cemetery
/// (`F ∪ R`) in `p`; slits are 1-based in `p` and 0-based in `q`, `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEstimates {
    pub p: Matrix,
    /// Binomial standard errors of the entries of `p`.
    pub p_stderr: Matrix,
    pub q: Matrix,
    pub m: Matrix,
    pub condition: f64,
    /// `I_k = ∫ V dν_k`
    pub nu_integrals: Vec<Estimate>,
    /// `V*(c*_j) = (M·b)_j`
    pub darned_values: Vec<f64>,
    /// Jackknife covariance of `darned_values`.
    pub darned_cov: Matrix,
    pub acceptance: Vec<f64>,
    pub n_per_slit: usize,
    pub truncated: u64,
    pub invariants: ChainInvariants,
}

impl ChainEstimates {
    pub fn empty() -> Self {
        ChainEstimates {
            p: vec![vec![1.0]],
            p_stderr: vec![vec![0.0]],
            q: Vec::new(),
            m: Vec::new(),
            condition: 1.0,
            nu_integrals: Vec::new(),
            darned_values: Vec::new(),
            darned_cov: Vec::new(),
            acceptance: Vec::new(),
            n_per_slit: 0,
            truncated: 0,
            invariants: ChainInvariants {
                row_sum_error: 0.0,
                spectral_radius: 0.0,
                m_nonnegative: true,
                neumann_gap: 0.0,
                fixed_point_gap: 0.0,
                passed: true,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.darned_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.darned_values.is_empty()
    }

    pub fn darned_stderr(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.darned_cov[j][j].max(0.0).sqrt()).collect()
    }

    /// `gᵀ·Cov(V*(c*))·g`
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        let cg = linalg::mat_vec(&self.darned_cov, g);
        g.iter().zip(cg).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    }
}

fn invariants(s: &Solved) -> ChainInvariants {
    let n = s.q.len();
    let row_sum_error = s.p.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let spectral_radius = linalg::spectral_radius(&s.q);
    let m_nonnegative = s.m.iter().flatten().all(|&v| v >= -1e-12);
    let neumann_gap = linalg::max_abs_diff(&s.m, &linalg::neumann_sum(&s.q, NEUMANN_TERMS));
    // V*(c*_j) = I_j + Σ_k p_jk V*(c*_k), iterated from zero
    let pj: Matrix = (0..n).map(|j| (0..n).map(|k| s.p[j + 1][k + 1]).collect()).collect();
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = linalg::mat_vec(&pj, &v).iter().zip(&s.nu_integrals).map(|(a, b)| a + b).collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change <= 1e-15 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
            break;
        }
    }
    let fixed_point_gap = v.iter().zip(&s.darned).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ChainInvariants {
        row_sum_error,
        spectral_radius,
        m_nonnegative,
        neumann_gap,
        fixed_point_gap,
        passed: row_sum_error <= 1e-12 && spectral_radius < 1.0 && m_nonnegative && neumann_gap <= 1e-10,
    }
}

/// Samples `n_per_slit` accepted `ν_j` points per slit, continues each as a
/// walk in `H \ (F ∪ K)`, and assembles the chain.
pub fn estimate_chain(setup: &ChainSetup, hull: &Hull, n_per_slit: usize, cfg: &WalkConfig) -> Result<ChainEstimates> {
    estimate_chain_on(setup, hull, n_per_slit, cfg, Stream::root(cfg.seed).child(TAG_CHAIN))
}

fn estimate_chain_on(
    setup: &ChainSetup,
    hull: &Hull,
    n_per_slit: usize,
    cfg: &WalkConfig,
    root: Stream,
) -> Result<ChainEstimates> {
    cfg.check()?;
    setup.check()?;
    hull.check()?;
    if setup.is_empty() {
        return Ok(ChainEstimates::empty());
    }
    check_delta(setup, cfg)?;
    if n_per_slit < JACKKNIFE_GROUPS * 2 {
        return Err(Error::invalid(format!("n_per_slit must be at least {}", JACKKNIFE_GROUPS * 2)));
    }
    if !hull.is_subset_of(&setup.envelope, 512, 1e-9) {
        return Err(Error::precondition("containment F ⊂ F̃ failed on sampled points of F"));
    }
    let n = setup.len();
    let domain = Domain::new(hull, &setup.slits);
    let batches: Vec<(Stream, usize)> = (0..n).map(|j| (root.child(j as u64), n_per_slit)).collect();
    let parts = run_batches(&batches, cfg.chunk_size, |j, spec, rng| {
        let mut groups = vec![Tally::new(n); JACKKNIFE_GROUPS];
        let mut attempts = 0u64;
        let mut truncated = 0u64;
        for i in 0..spec.count {
            let (w, a) = draw_nu(setup, j, cfg, rng)?;
            attempts += a;
            let e = wos_exit(&domain, w, cfg, rng);
            let g = &mut groups[(spec.start + i) % JACKKNIFE_GROUPS];
            match e.tag {
                ExitTag::Truncated => truncated += 1,
                ExitTag::Slit(k) => g.counts[j][k + 1] += 1,
                _ => {
                    let v = im_on_hull(&e);
                    g.counts[j][0] += 1;
                    g.v_sum[j] += v;
                    g.v_sq[j] += v * v;
                }
            }
        }
        Some((groups, attempts, truncated))
    });

    let mut groups = vec![Tally::new(n); JACKKNIFE_GROUPS];
    let mut attempts = vec![0u64; n];
    let mut truncated = 0;
    for (j, chunks) in parts.into_iter().enumerate() {
        for part in chunks {
            let (gs, a, t) = part.ok_or_else(|| acceptance_error(j))?;
            for (acc, g) in groups.iter_mut().zip(&gs) {
                acc.add(g);
            }
            attempts[j] += a;
            truncated += t;
        }
    }
    let mut total = Tally::new(n);
    groups.iter().for_each(|g| total.add(g));
    let full = solve(&total)?;

    let leave_out: Vec<Solved> = groups.iter().map(|g| solve(&total.sub(g))).collect::<Result<_>>()?;
    let gcount = JACKKNIFE_GROUPS as f64;
    let mean: Vec<f64> = (0..n).map(|j| leave_out.iter().map(|s| s.darned[j]).sum::<f64>() / gcount).collect();
    let mut cov = vec![vec![0.0; n]; n];
    for s in &leave_out {
        for a in 0..n {
            for b in 0..n {
                cov[a][b] += (s.darned[a] - mean[a]) * (s.darned[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v *= (gcount - 1.0) / gcount);

    let mut p_stderr = vec![vec![0.0; n + 1]; n + 1];
    let mut nu_integrals = Vec::with_capacity(n);
    for j in 0..n {
        let cnt: u64 = total.counts[j].iter().sum();
        let c = cnt as f64;
        for k in 0..=n {
            let pk = full.p[j + 1][k];
            p_stderr[j + 1][k] = (pk * (1.0 - pk) / c).sqrt();
        }
        let mean = total.v_sum[j] / c;
        let var = if cnt > 1 { ((total.v_sq[j] - c * mean * mean) / (c - 1.0)).max(0.0) } else { 0.0 };
        let trunc_j = n_per_slit as u64 - cnt;
        let m = Moments { n: cnt, mean, m2: var * (c - 1.0) };
        let mut e = Estimate::from_moments(&m, trunc_j, cfg.eps_absorb);
        e.bias_note.push_str(&format!("; exit law of the slit sampled at delta = {}", setup.delta));
        nu_integrals.push(e);
    }
    let inv = invariants(&full);
    Ok(ChainEstimates {
        p: full.p.clone(),
        p_stderr,
        q: full.q.clone(),
        m: full.m.clone(),
        condition: full.condition,
        nu_integrals,
        darned_values: full.darned.clone(),
        darned_cov: cov,
        acceptance: attempts.iter().map(|&a| n_per_slit as f64 / a.max(1) as f64).collect(),
        n_per_slit,
        truncated,
        invariants: inv,
    })
}

/// Per-walk BMD functional: `Im` on a hit of `F`, the darned value on a hit
/// of a slit, 0 on `R`.
fn darned_functional(e: &crate::sampler::ExitSample, darned: &[f64]) -> f64 {
    match e.tag {
        ExitTag::Slit(k) => darned[k],
        _ => im_on_hull(e),
    }
}

/// Walk tallies at one start point.
#[derive(Debug, Clone, PartialEq, Default)]
struct PointTally {
    x: Moments,
    v: Moments,
    slit_hits: Vec<u64>,
    truncated: u64,
}

impl PointTally {
    fn new(n: usize) -> Self {
        PointTally { slit_hits: vec![0; n], ..Default::default() }
    }

    fn merge(&mut self, o: &PointTally) {
        self.x.merge(&o.x);
        self.v.merge(&o.v);
        self.slit_hits.iter_mut().zip(&o.slit_hits).for_each(|(a, b)| *a += b);
        self.truncated += o.truncated;
    }

    fn phi(&self) -> Vec<f64> {
        self.slit_hits.iter().map(|&h| h as f64 / self.x.n.max(1) as f64).collect()
    }
}

fn tally_at<R: Rng + ?Sized>(
    domain: &Domain,
    z: Point,
    count: usize,
    darned: &[f64],
    cfg: &WalkConfig,
    rng: &mut R,
) -> PointTally {
    let mut t = PointTally::new(darned.len());
    for _ in 0..count {
        let e = wos_exit(domain, z, cfg, rng);
        match e.tag {
            ExitTag::Truncated => t.truncated += 1,
            tag => {
                t.x.push(darned_functional(&e, darned));
                t.v.push(im_on_hull(&e));
                if let ExitTag::Slit(k) = tag {
                    t.slit_hits[k] += 1;
                }
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VStar {
    pub point: Point,
    /// `V*(z)`, walk noise and chain noise combined.
    pub estimate: Estimate,
    /// `V(z) = E_z[Im Z_σF ; σF < σK]` from the same walks.
    pub v: Estimate,
    /// `φ_j(z)`
    pub phi: Vec<Estimate>,
}

/// `V*(z) = V(z) + Σ_j φ_j(z)·V*(c*_j)` from `n` fresh walks at `z`.
pub fn bmd_v_star(
    z: Point,
    hull: &Hull,
    setup: &ChainSetup,
    chain: &ChainEstimates,
    n: usize,
    cfg: &WalkConfig,
) -> Result<VStar> {
    bmd_v_star_on(z, hull, setup, chain, n, cfg, Stream::root(cfg.seed).child(TAG_VSTAR).child(z.re.to_bits() ^ z.im.to_bits().rotate_left(17)))
}

fn bmd_v_star_on(
    z: Point,
    hull: &Hull,
    setup: &ChainSetup,
    chain: &ChainEstimates,
    n: usize,
    cfg: &WalkConfig,
    stream: Stream,
) -> Result<VStar> {
    cfg.check()?;
    if chain.len() != setup.len() {
        return Err(Error::invalid("chain estimates do not match the slit setup"));
    }
    let domain = Domain::new(hull, &setup.slits);
    domain.check_start(z)?;
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let darned = &chain.darned_values;
    let parts = run_batches(&[(stream, n)], cfg.chunk_size, |_, spec, rng| tally_at(&domain, z, spec.count, darned, cfg, rng));
    let mut t = PointTally::new(setup.len());
    parts.iter().flatten().for_each(|p| t.merge(p));
    let phi = t.phi();
    let mut estimate = Estimate::from_moments(&t.x, t.truncated, cfg.eps_absorb);
    estimate.stderr = (estimate.stderr.powi(2) + chain.quadratic_form(&phi)).sqrt();
    if !setup.is_empty() {
        estimate.bias_note.push_str(&format!(
            "; darned values from {} exits per slit at delta = {}",
            chain.n_per_slit, setup.delta
        ));
    }
    let v = Estimate::from_moments(&t.v, t.truncated, cfg.eps_absorb);
    let phi = phi
        .iter()
        .map(|&f| {
            let m = Moments { n: t.x.n, mean: f, m2: f * (1.0 - f) * t.x.n as f64 };
            Estimate::from_moments(&m, t.truncated, cfg.eps_absorb)
        })
        .collect();
    Ok(VStar { point: z, estimate, v, phi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdJob {
    pub hull: Hull,
    pub setup: ChainSetup,
    /// Integration height; `None` selects the default above `F̃` and the slits.
    pub eta: Option<f64>,
    pub half_width: f64,
    pub xi_nodes: usize,
    pub n_per_node: usize,
    /// Accepted exit-law samples per slit for the chain.
    pub n_chain: usize,
    pub cfg: WalkConfig,
}

impl BmdJob {
    pub fn new(hull: Hull, setup: ChainSetup, cfg: WalkConfig) -> Self {
        BmdJob { hull, setup, eta: None, half_width: 60.0, xi_nodes: 64, n_per_node: 4000, n_chain: 20_000, cfg }
    }

    /// Height the integration line has to clear: `F̃` and every slit.
    pub fn obstacle_height(&self) -> f64 {
        self.setup.envelope.sup_im().max(self.setup.slits.max_height()).max(self.hull.sup_im())
    }

    pub fn resolved_eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| default_eta(self.obstacle_height()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdHcapEstimate {
    pub hcap: HcapEstimate,
    pub chain: ChainEstimates,
    /// Share of the variance coming from the chain.
    pub chain_variance_share: f64,
}

/// `hcap^D(F) = (1/π) ∫ V*(ξ + iη) dξ` with the trapezoid rule and tail
/// model of [`crate::hcap::hcap_integral`].
pub fn bmd_hcap(job: &BmdJob) -> Result<BmdHcapEstimate> {
    job.cfg.check()?;
    job.hull.check()?;
    job.setup.check()?;
    check_window(job.half_width, job.xi_nodes)?;
    if job.n_per_node == 0 {
        return Err(Error::invalid("n_per_node must be positive"));
    }
    let eta = job.resolved_eta();
    check_eta(eta, job.obstacle_height(), "max(Im F̃, slit heights)")?;
    if !job.hull.is_subset_of(&job.setup.envelope, 512, 1e-9) {
        return Err(Error::precondition("containment F ⊂ F̃ failed on sampled points of F"));
    }
    let center = job.hull.center_re();
    let grid = trapezoid(center, job.half_width, job.xi_nodes);
    let root = Stream::root(job.cfg.seed).child(TAG_BMD_HCAP);

    if job.hull.is_empty() {
        let nodes = grid
            .iter()
            .map(|&(xi, weight)| NodeValue { xi, weight, mean: 0.0, stderr: 0.0, n: 0, truncated: 0 })
            .collect();
        let mut h = finish(0.0, 0.0, 0, 0, eta, center, job.half_width, nodes, job.cfg.eps_absorb);
        h.estimate = Estimate::exact(0.0, "empty hull: V* vanishes identically");
        return Ok(BmdHcapEstimate { hcap: h, chain: ChainEstimates::empty(), chain_variance_share: 0.0 });
    }

    let chain = estimate_chain_on(&job.setup, &job.hull, job.n_chain, &job.cfg, root.child(0))?;
    let domain = Domain::new(&job.hull, &job.setup.slits);
    let node_root = root.child(1);
    let batches: Vec<(Stream, usize)> = (0..grid.len()).map(|i| (node_root.child(i as u64), job.n_per_node)).collect();
    let darned = &chain.darned_values;
    let cfg = job.cfg;
    let per_node = run_batches(&batches, cfg.chunk_size, |b, spec, rng| {
        tally_at(&domain, Point::new(grid[b].0, eta), spec.count, darned, &cfg, rng)
    });

    let n_slits = job.setup.len();
    let mut nodes = Vec::with_capacity(grid.len());
    let (mut sum, mut walk_var, mut n, mut truncated) = (0.0, 0.0, 0u64, 0u64);
    let mut g = vec![0.0; n_slits];
    for (&(xi, weight), chunks) in grid.iter().zip(per_node) {
        let mut t = PointTally::new(n_slits);
        chunks.iter().for_each(|c| t.merge(c));
        sum += weight * t.x.mean;
        walk_var += (weight * t.x.stderr()).powi(2);
        n += t.x.n;
        truncated += t.truncated;
        g.iter_mut().zip(t.phi()).for_each(|(a, f)| *a += weight * f);
        nodes.push(NodeValue { xi, weight, mean: t.x.mean, stderr: t.x.stderr(), n: t.x.n, truncated: t.truncated });
    }
    let chain_var = chain.quadratic_form(&g);
    let mut hcap = finish(sum, walk_var + chain_var, n, truncated, eta, center, job.half_width, nodes, cfg.eps_absorb);
    if n_slits > 0 {
        hcap.estimate.bias_note.push_str(&format!("; darning chain sampled at delta = {}", job.setup.delta));
    }
    let share = if walk_var + chain_var > 0.0 { chain_var / (walk_var + chain_var) } else { 0.0 };
    if chain.invariants.passed {
        Ok(BmdHcapEstimate { hcap, chain, chain_variance_share: share })
    } else {
        hcap.warnings.push("chain invariants failed; see chain.invariants".into());
        hcap.estimate.flagged = true;
        Ok(BmdHcapEstimate { hcap, chain, chain_variance_share: share })
    }
}

/// Least-squares fit of `value ≈ a + C·delta`; returns `(a, C)`.
pub fn fit_linear_in_delta(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - c * mx, c)
}

/// Mean real part of a point sample.
pub fn mean_re(points: &[Point]) -> Estimate {
    let mut m = Moments::default();
    points.iter().for_each(|p| m.push(p.re));
    Estimate::from_moments(&m, 0, 0.0)
}

fn offset_contour_len(s: &Slit, delta: f64) -> f64 {
    2.0 * s.len() + 2.0 * PI * delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_slit() -> ChainSetup {
        ChainSetup::new(
            SlitDomain::new(vec![Slit::new(1.5, 1.0, 3.0)]),
            Hull::vertical_slit(0.0, 1.0),
            vec![0.4],
            0.08,
        )
        .unwrap()
    }

    #[test]
    fn contour_points_are_at_offset() {
        let s = Slit::new(1.0, -1.0, 2.0);
        let d = 0.1;
        let len = offset_contour_len(&s, d);
        for i in 0..1000 {
            let p = offset_contour_point(&s, d, len * i as f64 / 1000.0);
            assert!((s.distance(p) - d).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn confocal_points_lie_on_ellipse_through_offset() {
        let s = Slit::new(1.0, -1.0, 2.0);
        let d = 0.1;
        let top = confocal_point(&s, d, FRAC_PI_2);
        assert!((s.distance(top) - d).abs() < 1e-12);
        let sum0 = confocal_point(&s, d, 0.0).dist(s.left()) + confocal_point(&s, d, 0.0).dist(s.right());
        for i in 0..100 {
            let p = confocal_point(&s, d, 0.0628 * i as f64);
            assert!((p.dist(s.left()) + p.dist(s.right()) - sum0).abs() < 1e-12);
            assert!(s.distance(p) > 0.0);
        }
    }

    #[test]
    fn setup_rejects_wide_margins_and_large_delta() {
        let slits = SlitDomain::new(vec![Slit::new(1.5, 1.0, 3.0)]);
        let env = Hull::vertical_slit(0.0, 1.0);
        assert!(ChainSetup::new(slits.clone(), env.clone(), vec![0.6], 0.05).is_err());
        assert!(ChainSetup::new(slits.clone(), env.clone(), vec![0.4], 0.2).is_err());
        assert!(ChainSetup::new(slits, env, vec![0.4], 0.05).is_ok());
    }

    #[test]
    fn nu_points_lie_on_curve_and_are_symmetric() {
        let setup = ChainSetup::new(SlitDomain::new(vec![Slit::new(2.0, -1.0, 1.0)]), Hull::Empty, vec![0.5], 0.05).unwrap();
        let s = sample_nu(&setup, 0, 20_000, &WalkConfig::with_seed(3)).unwrap();
        let rect = setup.curve(0);
        assert!(s.points.iter().all(|&p| rect.dist_to_boundary(p) <= 1e-4));
        let m = mean_re(&s.points);
        assert!(m.mean.abs() <= 3.0 * m.stderr, "{m:?}");
        assert!(s.acceptance > 0.01 && s.acceptance < 1.0, "{}", s.acceptance);
    }

    #[test]
    fn tiny_delta_is_rejected() {
        let setup = one_slit().with_delta(1e-4).unwrap();
        assert!(matches!(sample_nu(&setup, 0, 10, &WalkConfig::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn single_slit_chain_is_trivial() {
        let setup = one_slit();
        let c = estimate_chain(&setup, &Hull::vertical_slit(0.0, 1.0), 4000, &WalkConfig::with_seed(5)).unwrap();
        assert_eq!(c.q, vec![vec![0.0]]);
        assert_eq!(c.m, vec![vec![1.0]]);
        let expect = c.nu_integrals[0].mean / (1.0 - c.p[1][1]);
        assert!((c.darned_values[0] - expect).abs() < 1e-14);
        assert!(c.invariants.passed, "{:?}", c.invariants);
        assert!(c.invariants.fixed_point_gap < 1e-10);
        assert!(c.p.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn mirror_slits_have_symmetric_transitions() {
        let slits = SlitDomain::new(vec![Slit::new(1.0, -3.0, -1.0), Slit::new(1.0, 1.0, 3.0)]);
        let setup = ChainSetup::new(slits, Hull::vertical_slit(0.0, 0.5), vec![0.3, 0.3], 0.05).unwrap();
        let c = estimate_chain(&setup, &Hull::vertical_slit(0.0, 0.5), 8000, &WalkConfig::with_seed(8)).unwrap();
        let se = c.p_stderr[1][2].hypot(c.p_stderr[2][1]);
        assert!((c.p[1][2] - c.p[2][1]).abs() <= 3.0 * se, "{:?}", c.p);
        assert!(c.p[1][2] > 0.0);
        assert!(c.invariants.passed, "{:?}", c.invariants);
        assert!(c.invariants.fixed_point_gap < 1e-10);
    }

    #[test]
    fn no_slits_reduces_to_absorbed_walks() {
        let setup = ChainSetup::new(SlitDomain::empty(), Hull::vertical_slit(0.0, 1.0), vec![], 0.05).unwrap();
        let chain = estimate_chain(&setup, &Hull::vertical_slit(0.0, 1.0), 100, &WalkConfig::default()).unwrap();
        let v = bmd_v_star(Point::new(0.0, 2.0), &Hull::vertical_slit(0.0, 1.0), &setup, &chain, 40_000, &WalkConfig::with_seed(2)).unwrap();
        let exact = 2.0 - 3f64.sqrt();
        assert!((v.estimate.mean - exact).abs() <= 3.0 * v.estimate.stderr + 0.01, "{v:?}");
        assert_eq!(v.estimate.mean, v.v.mean);
    }

    #[test]
    fn v_star_dominates_v() {
        let setup = one_slit();
        let f = Hull::vertical_slit(0.0, 1.0);
        let cfg = WalkConfig::with_seed(9);
        let chain = estimate_chain(&setup, &f, 4000, &cfg).unwrap();
        let v = bmd_v_star(Point::new(2.0, 2.5), &f, &setup, &chain, 20_000, &cfg).unwrap();
        assert!(v.estimate.mean >= v.v.mean - 3.0 * v.v.stderr);
        assert!(v.phi[0].mean > 0.0);
    }

    #[test]
    fn empty_hull_gives_zero() {
        let setup = one_slit();
        let r = bmd_hcap(&BmdJob::new(Hull::Empty, setup, WalkConfig::default())).unwrap();
        assert_eq!(r.hcap.estimate.mean, 0.0);
        assert_eq!(r.hcap.estimate.stderr, 0.0);
    }

    #[test]
    fn low_eta_rejected() {
        let job = BmdJob { eta: Some(1.2), ..BmdJob::new(Hull::vertical_slit(0.0, 1.0), one_slit(), WalkConfig::default()) };
        assert!(matches!(bmd_hcap(&job), Err(Error::Precondition(_))));
    }

    #[test]
    fn linear_fit_recovers_line() {
        let (a, c) = fit_linear_in_delta(&[(0.1, 1.3), (0.05, 1.15), (0.025, 1.075)]);
        assert!((a - 1.0).abs() < 1e-12 && (c - 3.0).abs() < 1e-12);
    }
}
