use std::f64::consts::PI;

use hcap_core::geometry::{Hull, Point, Slit, SlitDomain};
use hcap_core::measures::{beurling_bound, beurling_check, bl_distance_surrogate, hitting_probe, regularity_probe, TestDictionary};
use hcap_core::sampler::{EmpiricalMeasure, ExitRecord, ExitTag, WalkConfig};
use proptest::prelude::*;

/// Probability that planar Brownian motion from `w` reaches the half-disk
/// `B(z, eps) ∩ H`, `z ∈ R`, before `R`: the map `ζ ↦ ζ + eps²/ζ` (with
/// `ζ = w - z`) sends `H` minus the half-disk onto `H` and the half-circle
/// onto `[-2eps, 2eps]`.
fn half_disk_hit(w: Point, z: f64, eps: f64) -> f64 {
    let (a, b) = (w.re - z, w.im);
    let r2 = a * a + b * b;
    let (x, y) = (a + eps * eps * a / r2, b - eps * eps * b / r2);
    (((2.0 * eps - x) / y).atan() + ((2.0 * eps + x) / y).atan()) / PI
}

#[test]
fn hitting_probability_of_half_disk_matches_closed_form() {
    let k = SlitDomain::new(vec![Slit::new(1.0, -1.0, 1.0)]);
    let t = hitting_probe(&k, &[Point::new(3.0, 0.0)], &[0.5], 2, 40_000, &WalkConfig::with_seed(31)).unwrap();
    for c in &t.cells {
        let exact = half_disk_hit(c.start, 3.0, 0.5);
        assert!((c.estimate.mean - exact).abs() <= 3.0 * c.estimate.stderr + 2e-3, "{c:?} vs {exact}");
    }
}

#[test]
fn reference_hitting_table_decays() {
    let k = SlitDomain::new(vec![Slit::new(1.0, -1.0, 1.0)]);
    let s = [Point::new(5.0, 0.0), Point::new(5.0, 0.25), Point::new(-5.0, 0.0), Point::new(-5.0, 0.25)];
    let eps = [0.4, 0.1, 0.01, 1e-3];
    let t = hitting_probe(&k, &s, &eps, 3, 20_000, &WalkConfig::with_seed(32)).unwrap();
    assert!(t.monotone, "{:?}", t.rows);
    let last = t.rows.last().unwrap();
    assert!(last.max < 0.05);
    // the closed form bounds the on-axis targets at the smallest eps
    assert!(half_disk_hit(Point::new(1.0, 1.0), 5.0, 1e-3) < 1e-3);
}

#[test]
fn beurling_bound_holds_on_grid() {
    let slit = Slit::new(2.0, -1.0, 1.0);
    let eps = 0.4;
    for ratio in [0.01, 0.1, 0.5] {
        let z = Point::new(0.0, 2.0 + ratio * eps);
        let r = beurling_check(&slit, z, eps, (&Hull::Empty, &SlitDomain::empty()), 20_000, &WalkConfig::with_seed(33)).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.bound - beurling_bound(ratio * eps, eps)).abs() < 1e-12);
    }
}

#[test]
fn regularity_dominates_projection_bound_near_slit() {
    let k = SlitDomain::new(vec![Slit::new(2.0, -1.0, 1.0)]);
    let (eps, rho) = (0.4, 0.04);
    let z = Point::new(0.0, 2.0 + rho);
    let r = regularity_probe(&Hull::Empty, &k, z, eps, 20_000, &WalkConfig::with_seed(34)).unwrap();
    assert!(r.mean >= beurling_bound(rho, eps) - 3.0 * r.stderr, "{r:?}");
}

#[test]
fn regularity_converges_as_shell_shrinks() {
    let z = Point::new(0.0, 0.01);
    let exact = 2.0 / PI * 99f64.sqrt().atan();
    for eps_absorb in [1e-3, 5e-4] {
        let cfg = WalkConfig { eps_absorb, ..WalkConfig::with_seed(35) };
        let e = regularity_probe(&Hull::Empty, &SlitDomain::empty(), z, 0.1, 40_000, &cfg).unwrap();
        assert!((e.mean - exact).abs() <= 3.0 * e.stderr + 2.0 * eps_absorb, "{e:?}");
    }
}

fn measure(points: &[(f64, f64)]) -> EmpiricalMeasure {
    let recs = points
        .iter()
        .map(|&(x, y)| ExitRecord { point: Point::new(x, y), tag: ExitTag::RealLine, weight: 1.0, chunk: 0, steps: 0 })
        .collect::<Vec<_>>();
    let n = recs.len();
    EmpiricalMeasure::from_records(recs, n, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surrogate_is_a_pseudometric(
        a in proptest::collection::vec((-6.0..6.0f64, 0.0..1.5f64), 1..40),
        b in proptest::collection::vec((-6.0..6.0f64, 0.0..1.5f64), 1..40),
        c in proptest::collection::vec((-6.0..6.0f64, 0.0..1.5f64), 1..40),
    ) {
        let d = TestDictionary::new((-5.0, 5.0), (0.0, 1.0), 21, 11, vec![0.25, 1.0, 4.0]).unwrap();
        let (ma, mb, mc) = (measure(&a), measure(&b), measure(&c));
        let ab = bl_distance_surrogate(&ma, &mb, &d).unwrap().value;
        let ba = bl_distance_surrogate(&mb, &ma, &d).unwrap().value;
        let bc = bl_distance_surrogate(&mb, &mc, &d).unwrap().value;
        let ac = bl_distance_surrogate(&ma, &mc, &d).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(ab <= 2.0);
    }
}
