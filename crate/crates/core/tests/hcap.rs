use hcap_core::geometry::{Hull, Point};
use hcap_core::hcap::{check_monotone, hcap_integral, hcap_vertical, HcapJob};
use hcap_core::sampler::WalkConfig;

fn estimate(hull: Hull, seed: u64) -> hcap_core::stats::Estimate {
    hcap_integral(&HcapJob::new(hull, WalkConfig::with_seed(seed))).unwrap().estimate
}

#[test]
fn translation_leaves_capacity_unchanged() {
    let a = estimate(Hull::half_disk(0.0, 1.0), 21);
    let b = estimate(Hull::half_disk(0.0, 1.0).shifted(7.5), 22);
    assert!(a.agrees_with(&b, 3.0), "{} vs {}", a.mean, b.mean);
}

#[test]
fn scaling_by_two_multiplies_capacity_by_four() {
    for hull in [Hull::vertical_slit(0.0, 1.0), Hull::half_disk(0.0, 1.0)] {
        let a = estimate(hull.clone(), 31);
        let b = estimate(hull.scaled(2.0), 32);
        let ratio = b.mean / a.mean;
        let rel = a.relative_stderr().hypot(b.relative_stderr());
        assert!((ratio - 4.0).abs() <= 3.0 * rel * 4.0, "ratio {ratio} ± {}", rel * 4.0);
    }
}

#[test]
fn window_width_does_not_move_the_estimate() {
    let hull = Hull::vertical_slit(0.0, 1.0);
    let narrow = hcap_integral(&HcapJob { half_width: 30.0, ..HcapJob::new(hull.clone(), WalkConfig::with_seed(41)) }).unwrap();
    let wide = hcap_integral(&HcapJob { half_width: 60.0, ..HcapJob::new(hull, WalkConfig::with_seed(42)) }).unwrap();
    assert!(narrow.estimate.agrees_with(&wide.estimate, 3.0));
    assert!(narrow.tail_correction > wide.tail_correction);
}

#[test]
fn line_integral_and_vertical_limit_agree_for_a_ridge() {
    let hull = Hull::lorentzian(0.3, 0.0, 1.0);
    let line = estimate(hull.clone(), 51);
    // The vertical estimator has an O(1/y) bias; two heights bracket it.
    let v = hcap_vertical(&hull, &[50.0, 100.0], 100_000, &WalkConfig::with_seed(52)).unwrap();
    let extrapolated = 2.0 * v[1].mean - v[0].mean;
    let se = (2.0 * v[1].stderr).hypot(v[0].stderr).hypot(line.stderr);
    assert!((line.mean - extrapolated).abs() <= 3.0 * se + 0.01, "{} vs {extrapolated} ± {se}", line.mean);
}

#[test]
fn nested_slits_are_strictly_ordered() {
    let probes = [Point::new(0.0, 2.0), Point::new(1.5, 0.5)];
    let r = check_monotone(
        &Hull::vertical_slit(0.0, 0.8),
        &Hull::vertical_slit(0.0, 1.0),
        &probes,
        4000,
        &WalkConfig::with_seed(61),
    )
    .unwrap();
    assert!(r.passed);
    assert!(r.separation_required && r.separated);
    let (s, b) = (&r.hcap_small.estimate, &r.hcap_big.estimate);
    assert!((s.mean - 0.32).abs() <= 3.0 * s.stderr, "{} ± {}", s.mean, s.stderr);
    assert!((b.mean - 0.5).abs() <= 3.0 * b.stderr, "{} ± {}", b.mean, b.stderr);
}

#[test]
fn containment_is_required() {
    let r = check_monotone(&Hull::vertical_slit(0.0, 1.0), &Hull::vertical_slit(0.0, 0.8), &[], 100, &WalkConfig::with_seed(1));
    assert!(matches!(r, Err(hcap_core::Error::Precondition(_))));
}

#[test]
fn same_seed_gives_identical_estimates() {
    let job = HcapJob { n_per_node: 500, ..HcapJob::new(Hull::half_disk(0.0, 1.0), WalkConfig::with_seed(9)) };
    let a = hcap_integral(&job).unwrap();
    let b = hcap_integral(&job).unwrap();
    assert_eq!(a, b);
}
