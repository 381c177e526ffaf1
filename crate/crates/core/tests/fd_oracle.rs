//! The finite-difference oracle is checked against the closed-form slit
//! solution before other tests rely on it.

mod common;

use common::fd::{extrapolated, solve_levels, FdProblem};

fn slit(x: f64, y: f64) -> bool {
    x.abs() < 1e-9 && y <= 1.0 + 1e-9
}

#[test]
fn fd_matches_closed_form_slit_solution() {
    let levels = solve_levels(
        &FdProblem {
            on_hull: &slit,
            slits: vec![],
            fixed_slits: vec![], hull_scale: 1.0, far_coeff: 0.5,
            half_width: 12.0,
            height: 12.0,
            spacings: vec![0.1, 0.05, 0.025],
        },
        1e-10,
    );
    for &(x, y) in &[(0.0, 2.0), (2.0, 0.75), (2.0, 2.5), (0.5, 0.5)] {
        let exact = common::slit_hit_value(x, y, 1.0);
        let (fd, spread) = extrapolated(&levels, x, y);
        assert!((fd - exact).abs() < 1e-3, "{x},{y}: {fd} vs {exact}");
        assert!(spread < 2e-3, "{spread}");
    }
}

#[test]
fn closed_form_at_2i() {
    assert!((common::slit_hit_value(0.0, 2.0, 1.0) - (2.0 - 3f64.sqrt())).abs() < 1e-15);
    // boundary values: Im z on the slit, 0 on R
    assert!((common::slit_hit_value(0.0, 0.5, 1.0) - 0.5).abs() < 1e-12);
    assert!(common::slit_hit_value(3.0, 0.0, 1.0).abs() < 1e-12);
}
