//! Five-point finite differences for the Dirichlet problem that defines the
//! hitting functionals: harmonic off the obstacles, `Im z` on the hull, 0 on
//! `R`, a far-field model `a·y/|z|²` on the outer box, and on each darned
//! slit an unknown constant with zero net flux.
//!
//! Solved by red-black SOR with nested iteration from coarse grids.

#[derive(Clone, Copy, PartialEq, Debug)]
enum Node {
    Free,
    Fixed(f64),
    Slit(usize),
}

pub struct FdProblem<'a> {
    /// Grid nodes where this holds get the Dirichlet value `y`.
    pub on_hull: &'a dyn Fn(f64, f64) -> bool,
    /// Darned slits `(y, x_lo, x_hi)`; must sit on grid lines.
    pub slits: Vec<(f64, f64, f64)>,
    /// Slits `(y, x_lo, x_hi, value)` held at a fixed value.
    pub fixed_slits: Vec<(f64, f64, f64, f64)>,
    /// Multiplier on the hull data `Im z` (0 switches the hull to 0).
    pub hull_scale: f64,
    /// Initial guess for the far-field coefficient `a`; refined on the
    /// coarsest grid from the solution on the half-radius arc.
    pub far_coeff: f64,
    pub half_width: f64,
    pub height: f64,
    pub spacings: Vec<f64>,
}

pub struct FdSolution {
    h: f64,
    x0: f64,
    nx: usize,
    ny: usize,
    u: Vec<f64>,
    pub slit_values: Vec<f64>,
    pub sweeps: usize,
    pub far_coeff: f64,
}

impl FdSolution {
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let fx = (x - self.x0) / self.h;
        let fy = y / self.h;
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let at = |i: usize, j: usize| self.u[j * self.nx + i];
        (1.0 - tx) * (1.0 - ty) * at(i, j)
            + tx * (1.0 - ty) * at(i + 1, j)
            + (1.0 - tx) * ty * at(i, j + 1)
            + tx * ty * at(i + 1, j + 1)
    }
}

fn classify(p: &FdProblem, far: f64, h: f64, nx: usize, ny: usize) -> Vec<Node> {
    let x0 = -p.half_width;
    let mut nodes = vec![Node::Free; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (x0 + h * i as f64, h * j as f64);
            let k = j * nx + i;
            nodes[k] = if j == 0 {
                Node::Fixed(0.0)
            } else if i == 0 || i + 1 == nx || j + 1 == ny {
                Node::Fixed(far * y / (x * x + y * y))
            } else if (p.on_hull)(x, y) {
                Node::Fixed(p.hull_scale * y)
            } else if let Some(&(_, _, _, v)) = p
                .fixed_slits
                .iter()
                .find(|&&(sy, lo, hi, _)| (y - sy).abs() < 1e-9 && x >= lo - 1e-9 && x <= hi + 1e-9)
            {
                Node::Fixed(v)
            } else if let Some(s) = p
                .slits
                .iter()
                .position(|&(sy, lo, hi)| (y - sy).abs() < 1e-9 && x >= lo - 1e-9 && x <= hi + 1e-9)
            {
                Node::Slit(s)
            } else {
                Node::Free
            };
        }
    }
    nodes
}

pub fn solve(p: &FdProblem, tol: f64) -> FdSolution {
    solve_levels(p, tol).pop().expect("at least one spacing")
}

/// Solutions on every spacing of the nested iteration, coarsest first.
pub fn solve_levels(p: &FdProblem, tol: f64) -> Vec<FdSolution> {
    let mut levels: Vec<FdSolution> = Vec::new();
    let mut total_sweeps = 0;
    let mut far = p.far_coeff;
    let coarse = p.spacings[0];
    let schedule: Vec<f64> = std::iter::repeat_n(coarse, 4).chain(p.spacings[1..].iter().copied()).collect();
    for (pass, &h) in schedule.iter().enumerate() {
        if pass > 0 && pass < 4 {
            far = fit_far_field(levels.last().unwrap(), p.half_width.min(p.height) / 2.0);
            levels.clear();
        }
        let nx = (2.0 * p.half_width / h).round() as usize + 1;
        let ny = (p.height / h).round() as usize + 1;
        let x0 = -p.half_width;
        let nodes = classify(p, far, h, nx, ny);
        let mut u = vec![0.0; nx * ny];
        let mut slit_values = vec![0.0; p.slits.len()];
        if let Some(c) = levels.last() {
            slit_values = c.slit_values.clone();
            for j in 0..ny {
                for i in 0..nx {
                    let (x, y) = (x0 + h * i as f64, h * j as f64);
                    let xi = x.clamp(x0, -x0 - 1e-9);
                    let yi = y.clamp(0.0, p.height - 1e-9);
                    u[j * nx + i] = c.value_at(xi, yi);
                }
            }
        }
        for (k, n) in nodes.iter().enumerate() {
            match *n {
                Node::Fixed(v) => u[k] = v,
                Node::Slit(s) => u[k] = slit_values[s],
                Node::Free => {}
            }
        }
        let slit_nodes: Vec<Vec<usize>> = (0..p.slits.len())
            .map(|s| (0..nodes.len()).filter(|&k| nodes[k] == Node::Slit(s)).collect())
            .collect();
        let omega = 2.0 / (1.0 + (std::f64::consts::PI * h / (2.0 * p.half_width).min(p.height)).sin());
        let mut sweeps = 0;
        loop {
            let mut change = 0.0f64;
            for color in 0..2 {
                for j in 1..ny - 1 {
                    let start = 1 + (j + color + 1) % 2;
                    for i in (start..nx - 1).step_by(2) {
                        let k = j * nx + i;
                        if nodes[k] != Node::Free {
                            continue;
                        }
                        let avg = 0.25 * (u[k - 1] + u[k + 1] + u[k - nx] + u[k + nx]);
                        let d = omega * (avg - u[k]);
                        u[k] += d;
                        change = change.max(d.abs());
                    }
                }
            }
            // zero net flux: the slit value is the mean of its off-slit neighbours
            for (s, ks) in slit_nodes.iter().enumerate() {
                let (mut sum, mut cnt) = (0.0, 0.0);
                for &k in ks {
                    for nb in [k - 1, k + 1, k - nx, k + nx] {
                        if nodes[nb] != Node::Slit(s) {
                            sum += u[nb];
                            cnt += 1.0;
                        }
                    }
                }
                let v = sum / cnt;
                change = change.max((v - slit_values[s]).abs());
                slit_values[s] = v;
                ks.iter().for_each(|&k| u[k] = v);
            }
            sweeps += 1;
            if change < tol || sweeps > 200_000 {
                break;
            }
        }
        total_sweeps += sweeps;
        levels.push(FdSolution { h, x0, nx, ny, u, slit_values, sweeps: total_sweeps, far_coeff: far });
    }
    levels
}

/// `a` in `u ≈ a·y/|z|²`, averaged over the arc `|z| = r`, `π/4 ≤ arg z ≤ 3π/4`.
fn fit_far_field(s: &FdSolution, r: f64) -> f64 {
    let n = 64;
    (0..=n)
        .map(|k| {
            let th = std::f64::consts::FRAC_PI_4 * (1.0 + 2.0 * k as f64 / n as f64);
            s.value_at(r * th.cos(), r * th.sin()) * r / th.sin()
        })
        .sum::<f64>()
        / (n + 1) as f64
}

/// First-order Richardson extrapolation from the two finest levels, with
/// the change against the extrapolation from the two coarser ones as an
/// error indicator.
pub fn extrapolated(levels: &[FdSolution], x: f64, y: f64) -> (f64, f64) {
    let v: Vec<f64> = levels.iter().map(|s| s.value_at(x, y)).collect();
    let n = v.len();
    let fine = 2.0 * v[n - 1] - v[n - 2];
    let spread = if n >= 3 { (fine - (2.0 * v[n - 2] - v[n - 3])).abs() } else { f64::NAN };
    (fine, spread)
}

pub fn extrapolated_slit_value(levels: &[FdSolution], s: usize) -> f64 {
    let n = levels.len();
    2.0 * levels[n - 1].slit_values[s] - levels[n - 2].slit_values[s]
}
