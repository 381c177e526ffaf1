//! Grid rasterization of hulls and the flood-fill topology certifier.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Hull, Point};
use crate::error::{Error, Result};

const MAX_CELLS: usize = 40_000_000;

/// Square cells of side `res` covering `[x_lo, x_hi] × (0, y_hi]`. Cell
/// centers sit at `(i·res, (j + ½)·res)` for integer `i`, so vertical slits
/// at multiples of `res` pass through a column of centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub res: f64,
    pub i0: i64,
    pub nx: usize,
    pub ny: usize,
}

impl CellGrid {
    pub fn covering(x_lo: f64, x_hi: f64, y_hi: f64, res: f64) -> Result<Self> {
        if !(res.is_finite() && res > 0.0) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        if !(x_lo.is_finite() && x_hi.is_finite() && y_hi.is_finite()) || x_hi < x_lo || y_hi <= 0.0 {
            return Err(Error::invalid("grid box must be finite and non-degenerate"));
        }
        let i0 = (x_lo / res).floor() as i64;
        let i1 = (x_hi / res).ceil() as i64;
        let nx = (i1 - i0 + 1) as usize;
        let ny = ((y_hi / res).ceil() as usize).max(1);
        if nx.saturating_mul(ny) > MAX_CELLS {
            return Err(Error::invalid(format!(
                "grid of {nx}x{ny} cells exceeds the {MAX_CELLS} cell limit; coarsen the resolution"
            )));
        }
        Ok(CellGrid { res, i0, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new((self.i0 + i as i64) as f64 * self.res, (j as f64 + 0.5) * self.res)
    }

    pub fn center_of(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.center(i, j)
    }

    /// Cell containing `z`, if inside the grid.
    pub fn locate(&self, z: Point) -> Option<usize> {
        let i = (z.re / self.res).round() as i64 - self.i0;
        let j = (z.im / self.res).floor() as i64;
        (i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.ny)
            .then(|| self.index(i as usize, j as usize))
    }

    pub fn on_outer_frame(&self, i: usize, j: usize) -> bool {
        i == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    fn neighbours(&self, idx: usize, diagonal: bool, out: &mut Vec<usize>) {
        out.clear();
        let (i, j) = self.coords(idx);
        let (i, j) = (i as i64, j as i64);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if (di == 0 && dj == 0) || (!diagonal && di != 0 && dj != 0) {
                    continue;
                }
                let (a, b) = (i + di, j + dj);
                if a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny {
                    out.push(self.index(a as usize, b as usize));
                }
            }
        }
    }

    /// Connected components of the cells selected by `pred`; unselected
    /// cells get label `u32::MAX`.
    pub fn components(&self, pred: &[bool], diagonal: bool) -> (Vec<u32>, u32) {
        let mut label = vec![u32::MAX; self.len()];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        let mut nb = Vec::with_capacity(8);
        for start in 0..self.len() {
            if !pred[start] || label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(c) = queue.pop_front() {
                self.neighbours(c, diagonal, &mut nb);
                for &n in &nb {
                    if pred[n] && label[n] == u32::MAX {
                        label[n] = next;
                        queue.push_back(n);
                    }
                }
            }
            next += 1;
        }
        (label, next)
    }

    /// Cells selected by `pred` reachable from the `seeds` through selected
    /// cells (4-connectivity).
    pub fn reach(&self, pred: &[bool], seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::new();
        for s in seeds {
            if pred[s] && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        let mut nb = Vec::with_capacity(4);
        while let Some(c) = queue.pop_front() {
            self.neighbours(c, false, &mut nb);
            for &n in &nb {
                if pred[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    pub fn frame_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&idx| {
            let (i, j) = self.coords(idx);
            self.on_outer_frame(i, j)
        })
    }
}

/// A rasterized hull: `cells[idx]` is true when the cell meets the hull.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub grid: CellGrid,
    pub cells: Vec<bool>,
}

impl Mask {
    /// Cells whose center lies within half a cell diagonal of `hull`.
    pub fn of_hull(grid: CellGrid, hull: &Hull) -> Self {
        let touch = grid.res * std::f64::consts::FRAC_1_SQRT_2;
        let cells = (0..grid.len())
            .map(|idx| {
                let c = grid.center_of(idx);
                hull.radius_bound(c) <= touch && hull.distance(c) <= touch
            })
            .collect();
        Mask { grid, cells }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Hausdorff distance between the set of marked cell centers and a hull,
    /// using the hull's sample points for the reverse direction.
    pub fn hausdorff_to(&self, hull: &Hull) -> f64 {
        let marked: Vec<Point> = (0..self.grid.len())
            .filter(|&i| self.cells[i])
            .map(|i| self.grid.center_of(i))
            .collect();
        if marked.is_empty() {
            return if hull.is_empty() { 0.0 } else { f64::INFINITY };
        }
        let forward = marked.iter().map(|&p| hull.distance(p)).fold(0.0, f64::max);
        let backward = hull
            .sample_points(256)
            .into_iter()
            .map(|q| marked.iter().map(|&p| p.dist(q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        forward.max(backward)
    }
}

/// Outcome of the flood-fill topology check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullDiagnostics {
    pub passed: bool,
    pub reason: Option<String>,
    pub offending_cell: Option<Point>,
    pub resolution: f64,
    pub grid_cells: [usize; 2],
    pub note: String,
}

/// Grid certifier for "H \ F is connected and simply connected".
///
/// A domain of the Riemann sphere is simply connected iff its complement is
/// connected. For `H \ F` the complement is the closed lower half-plane
/// together with `F`, so the test reduces to two flood fills on a padded
/// grid: every free cell must connect to the outer frame, and every piece of
/// the hull must reach the real line. Valid at the given resolution only.
pub fn validate_hull(hull: &Hull, resolution: f64) -> Result<HullDiagnostics> {
    hull.check()?;
    let note = format!("flood-fill certificate at resolution {resolution}; evidence, not proof");
    if hull.is_empty() {
        return Ok(HullDiagnostics {
            passed: true,
            reason: None,
            offending_cell: None,
            resolution,
            grid_cells: [0, 0],
            note,
        });
    }
    let top = hull.sup_im();
    let (mut lo, mut hi) = hull.x_range(0.25 * resolution).unwrap_or((0.0, 0.0));
    if !lo.is_finite() || !hi.is_finite() {
        let half = 4.0 * top.max(1.0);
        lo = lo.max(-half);
        hi = hi.min(half);
    }
    let pad = top.max(4.0 * resolution);
    let grid = CellGrid::covering(lo - pad, hi + pad, top + pad, resolution)?;
    let blocked = Mask::of_hull(grid, hull).cells;
    let free: Vec<bool> = blocked.iter().map(|b| !b).collect();

    let reached = grid.reach(&free, grid.frame_cells());
    let fail = |reason: &str, idx: usize| HullDiagnostics {
        passed: false,
        reason: Some(reason.to_string()),
        offending_cell: Some(grid.center_of(idx)),
        resolution,
        grid_cells: [grid.nx, grid.ny],
        note: note.clone(),
    };
    if let Some(idx) = (0..grid.len()).find(|&i| free[i] && !reached[i]) {
        return Ok(fail("complement disconnected: region sealed off from infinity", idx));
    }

    let (labels, n) = grid.components(&blocked, true);
    let mut grounded = vec![false; n as usize];
    for i in 0..grid.nx {
        let l = labels[grid.index(i, 0)];
        if l != u32::MAX {
            grounded[l as usize] = true;
        }
    }
    if let Some(idx) = (0..grid.len()).find(|&i| labels[i] != u32::MAX && !grounded[labels[i] as usize]) {
        return Ok(fail("complement not simply connected: hull piece detached from the real line", idx));
    }

    Ok(HullDiagnostics {
        passed: true,
        reason: None,
        offending_cell: None,
        resolution,
        grid_cells: [grid.nx, grid.ny],
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Profile;

    fn arch() -> Hull {
        Hull::union(vec![
            Hull::vertical_slit(-1.0, 1.0),
            Hull::vertical_slit(1.0, 1.0),
            Hull::segment(Point::new(-1.0, 1.0), Point::new(1.0, 1.0)),
        ])
    }

    #[test]
    fn catalog_shapes_pass() {
        for h in [
            Hull::vertical_slit(0.0, 1.0),
            Hull::half_disk(0.0, 1.0),
            Hull::lorentzian(1.0, 0.0, 1.0),
            Hull::ridge(Profile::Constant { height: 1.0 }),
            Hull::union(vec![Hull::vertical_slit(-1.0, 1.0), Hull::vertical_slit(1.0, 1.0)]),
        ] {
            let d = validate_hull(&h, 0.01).unwrap();
            assert!(d.passed, "{h:?}: {:?}", d.reason);
        }
    }

    #[test]
    fn enclosed_pocket_fails() {
        let d = validate_hull(&arch(), 0.02).unwrap();
        assert!(!d.passed);
        assert!(d.reason.unwrap().contains("disconnected"));
        let p = d.offending_cell.unwrap();
        assert!(p.re.abs() < 1.0 && p.im < 1.0);
    }

    #[test]
    fn floating_piece_fails() {
        let h = Hull::union(vec![
            Hull::vertical_slit(0.0, 1.0),
            Hull::segment(Point::new(2.0, 1.0), Point::new(3.0, 1.0)),
        ]);
        let d = validate_hull(&h, 0.02).unwrap();
        assert!(!d.passed);
        assert!(d.reason.unwrap().contains("not simply connected"));
    }

    #[test]
    fn locate_inverts_center() {
        let g = CellGrid::covering(-1.0, 1.0, 1.0, 0.1).unwrap();
        for idx in [0, 5, 17, g.len() - 1] {
            assert_eq!(g.locate(g.center_of(idx)), Some(idx));
        }
        assert!(CellGrid::covering(-1e6, 1e6, 1e6, 1e-3).is_err());
    }
}
