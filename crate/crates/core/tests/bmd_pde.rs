//! BMD values against the finite-difference solution with a darned slit
//! (unknown constant, zero net flux).

mod common;

use std::sync::OnceLock;

use common::fd::{extrapolated, extrapolated_slit_value, solve_levels, FdProblem, FdSolution};
use hcap_core::bmd::{bmd_v_star, estimate_chain, sample_nu, ChainSetup};
use hcap_core::geometry::{Hull, Point, Slit, SlitDomain};
use hcap_core::sampler::WalkConfig;

fn hull_slit(x: f64, y: f64) -> bool {
    x.abs() < 1e-9 && y <= 1.0 + 1e-9
}

fn oracle() -> &'static [FdSolution] {
    static LEVELS: OnceLock<Vec<FdSolution>> = OnceLock::new();
    LEVELS.get_or_init(|| {
        solve_levels(
            &FdProblem {
                on_hull: &hull_slit,
                slits: vec![(1.5, 1.0, 3.0)],
                fixed_slits: vec![],
                hull_scale: 1.0,
                far_coeff: 0.5,
                half_width: 24.0,
                height: 24.0,
                spacings: vec![0.1, 0.05],
            },
            1e-10,
        )
    })
}

fn setup(delta: f64) -> ChainSetup {
    ChainSetup::new(
        SlitDomain::new(vec![Slit::new(1.5, 1.0, 3.0)]),
        Hull::vertical_slit(0.0, 1.0),
        vec![0.4],
        delta,
    )
    .unwrap()
}

#[test]
fn v_star_matches_fd_with_darned_slit() {
    let levels = oracle();
    let f = Hull::vertical_slit(0.0, 1.0);
    let setup = setup(0.08);
    let cfg = WalkConfig::with_seed(77);
    let chain = estimate_chain(&setup, &f, 40_000, &cfg).unwrap();
    let fd_slit = extrapolated_slit_value(levels, 0);
    let se = chain.darned_stderr()[0];
    assert!((chain.darned_values[0] - fd_slit).abs() <= 3.0 * se + 2e-3, "{:?} vs {fd_slit}", chain.darned_values);
    for &(x, y) in &[(0.0, 2.0), (2.0, 0.75), (2.0, 2.5)] {
        let v = bmd_v_star(Point::new(x, y), &f, &setup, &chain, 40_000, &cfg).unwrap();
        let (fd, _) = extrapolated(levels, x, y);
        assert!((v.estimate.mean - fd).abs() <= 3.0 * v.estimate.stderr + 3e-3, "{x},{y}: {:?} vs {fd}", v.estimate);
    }
}

/// Green's identity: the darned value is the `ν`-average of the solution on
/// the surrounding curve.
#[test]
fn exit_law_averages_reproduce_the_slit_value() {
    let levels = oracle();
    let u_slit = extrapolated_slit_value(levels, 0);
    for delta in [0.08, 0.04] {
        let nu = sample_nu(&setup(delta), 0, 50_000, &WalkConfig::with_seed(3)).unwrap();
        let vals: Vec<f64> = nu.points.iter().map(|p| extrapolated(levels, p.re, p.im).0).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((mean - u_slit).abs() <= 3.0 * se + 5e-4, "delta {delta}: {mean} ± {se} vs {u_slit}");
    }
}

#[test]
fn undarned_values_match_fd() {
    // V (slit absorbing with value 0) and φ (slit at 1, hull at 0)
    let solve = |value: f64, scale: f64, far: f64| {
        solve_levels(
            &FdProblem {
                on_hull: &hull_slit,
                slits: vec![],
                fixed_slits: vec![(1.5, 1.0, 3.0, value)],
                hull_scale: scale,
                far_coeff: far,
                half_width: 24.0,
                height: 24.0,
                spacings: vec![0.1, 0.05],
            },
            1e-10,
        )
    };
    let v_fd = solve(0.0, 1.0, 0.5);
    let phi_fd = solve(1.0, 0.0, 1.0);
    let f = Hull::vertical_slit(0.0, 1.0);
    let setup = setup(0.08);
    let cfg = WalkConfig::with_seed(12);
    let chain = estimate_chain(&setup, &f, 2_000, &cfg).unwrap();
    for &(x, y) in &[(2.0, 1.9), (0.6, 1.5), (3.4, 1.5)] {
        let r = bmd_v_star(Point::new(x, y), &f, &setup, &chain, 100_000, &cfg).unwrap();
        let (v, _) = extrapolated(&v_fd, x, y);
        let (phi, _) = extrapolated(&phi_fd, x, y);
        assert!((r.v.mean - v).abs() <= 3.0 * r.v.stderr + 1e-3, "V at {x},{y}: {:?} vs {v}", r.v);
        assert!((r.phi[0].mean - phi).abs() <= 3.0 * r.phi[0].stderr + 1e-3, "φ at {x},{y}: {:?} vs {phi}", r.phi[0]);
    }
}
