//! H-plane scans at fixed small t: Lyapunov landscape, discrete Laplacian,
//! and the concentration of Laplacian mass near the circle |H| = |c||G|.
//!
//! Every node shares one master seed (common random numbers), so sampling
//! noise is correlated across nodes and partly cancels in the Laplacian,
//! which is a local contrast of neighboring values. The cancellation is
//! state dependent (orbit itineraries decorrelate where preimage branches
//! reorder), so concentration statistics gate each node against its own
//! propagated stderr rather than a single global floor.

use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::asymptotics::SampleBudget;
use crate::family::{FamilyParams, HenonBase};
use crate::lyapunov::qr_exponents_slotted;

/// Mass is counted only above this multiple of a node's noise scale.
const FLOOR_MULTIPLE: f64 = 3.0;
/// Fraction of the interior used as the far-field ring for the floor.
const RING_FRACTION: f64 = 0.1;
/// Scales a median absolute value to a robust standard deviation.
const MAD_SCALE: f64 = 1.4826;
/// Node failure budget before the whole scan is rejected.
const FAILURE_BUDGET: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum BifscanError {
    #[error("node evaluation failed on {failed} of {total} grid nodes")]
    TooManyFailures { failed: usize, total: usize },
    #[error("annulus contains no grid nodes")]
    EmptyAnnulus,
}

/// Axis-aligned square window in the H-plane, sampled on an nx x ny lattice.
#[derive(Clone, Copy, Debug)]
pub struct GridWindow {
    pub center: Complex64,
    pub halfwidth: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridWindow {
    pub fn h_min(&self) -> Complex64 {
        self.center - Complex64::new(self.halfwidth, self.halfwidth)
    }

    pub fn h_max(&self) -> Complex64 {
        self.center + Complex64::new(self.halfwidth, self.halfwidth)
    }

    fn dx(&self) -> f64 {
        2.0 * self.halfwidth / (self.nx - 1) as f64
    }

    fn dy(&self) -> f64 {
        2.0 * self.halfwidth / (self.ny - 1) as f64
    }

    /// Node coordinate; j walks the real axis, i the imaginary axis.
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        self.h_min() + Complex64::new(j as f64 * self.dx(), i as f64 * self.dy())
    }
}

/// Lyapunov landscape over an H-window at fixed t, with its 5-point
/// Laplacian on the interior. Failed nodes are NaN in `l_values` and
/// poison the adjacent Laplacian entries.
#[derive(Clone, Debug)]
pub struct ScanGrid {
    pub base: HenonBase,
    pub g2: Complex64,
    pub t: Complex64,
    pub window: GridWindow,
    /// Row-major ny x nx.
    pub l_values: Vec<f64>,
    pub l_stderr: Vec<f64>,
    /// Per-orbit L averages, node-major with budget.n_orbits() entries per
    /// node; NaN marks a dropped orbit or failed node. Orbit slot k shares
    /// its seed across all nodes, so slot-wise contrasts realize the actual
    /// common-random-number cancellation. Empty on synthetic grids.
    pub l_orbit: Vec<f64>,
    /// Nodes too close to the exceptional circle |H/G| = |c| for the limit
    /// formulas to apply; computed anyway.
    pub exceptional: Vec<bool>,
    /// Row-major (ny-2) x (nx-2), interior nodes only.
    pub laplacian: Vec<f64>,
    pub seed: u64,
    pub budget: SampleBudget,
}

/// 5-point Laplacian of a row-major ny x nx field, interior nodes only.
/// Exact on quadratics; NaN values poison their neighborhoods.
pub fn laplacian_5pt(values: &[f64], nx: usize, ny: usize, dx: f64, dy: f64) -> Vec<f64> {
    assert_eq!(values.len(), nx * ny, "field shape mismatch");
    assert!(nx >= 3 && ny >= 3, "interior requires a 3x3 grid at least");
    let mut out = Vec::with_capacity((nx - 2) * (ny - 2));
    for i in 1..ny - 1 {
        for j in 1..nx - 1 {
            let u = values[i * nx + j];
            let horiz = (values[i * nx + j - 1] + values[i * nx + j + 1] - 2.0 * u) / (dx * dx);
            let vert = (values[(i - 1) * nx + j] + values[(i + 1) * nx + j] - 2.0 * u) / (dy * dy);
            out.push(horiz + vert);
        }
    }
    out
}

/// Estimates L on every grid node with a shared seed, then differentiates.
/// Individual node failures are masked as NaN; more than 5% of them is an
/// error, as is t = 0 (every node fails there).
pub fn scan_h(
    base: HenonBase,
    g2: Complex64,
    t: Complex64,
    window: GridWindow,
    budget: SampleBudget,
    seed: u64,
) -> Result<ScanGrid, BifscanError> {
    assert!(window.nx >= 3 && window.ny >= 3, "scan needs an interior");
    assert!(window.halfwidth > 0.0, "window must have positive extent");
    let total = window.nx * window.ny;
    let n_orbits = budget.n_orbits();
    let nodes: Vec<(f64, f64, bool, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let h = window.node(idx / window.nx, idx % window.nx);
            let blank = vec![f64::NAN; n_orbits];
            let params = match FamilyParams::z2_coupled(base, t, g2, h) {
                Ok(p) => p,
                Err(_) => return (f64::NAN, f64::NAN, false, blank),
            };
            let flagged = !params.non_exceptional();
            match qr_exponents_slotted(&params, seed, n_orbits, budget.n_steps) {
                Ok((est, slots)) => {
                    let orbit_l = slots
                        .iter()
                        .map(|s| s.map_or(f64::NAN, |(a, b)| a + b))
                        .collect();
                    (est.l, est.stderr1.hypot(est.stderr2), flagged, orbit_l)
                }
                Err(_) => (f64::NAN, f64::NAN, flagged, blank),
            }
        })
        .collect();
    let failed = nodes.iter().filter(|n| !n.0.is_finite()).count();
    if failed as f64 > FAILURE_BUDGET * total as f64 {
        return Err(BifscanError::TooManyFailures { failed, total });
    }
    let l_values: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let laplacian = laplacian_5pt(&l_values, window.nx, window.ny, window.dx(), window.dy());
    Ok(ScanGrid {
        base,
        g2,
        t,
        window,
        l_values,
        l_stderr: nodes.iter().map(|n| n.1).collect(),
        l_orbit: nodes.iter().flat_map(|n| n.3.iter().copied()).collect(),
        exceptional: nodes.iter().map(|n| n.2).collect(),
        laplacian,
        seed,
        budget,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}

impl ScanGrid {
    fn interior_dims(&self) -> (usize, usize) {
        (self.window.nx - 2, self.window.ny - 2)
    }

    /// Robust noise level of the Laplacian, read off the outer ring of the
    /// interior where the landscape is expected flat.
    pub fn noise_floor(&self) -> f64 {
        let (inx, iny) = self.interior_dims();
        let band_x = (RING_FRACTION * inx as f64).ceil() as usize;
        let band_y = (RING_FRACTION * iny as f64).ceil() as usize;
        let mut ring = Vec::new();
        for li in 0..iny {
            for lj in 0..inx {
                let edge = li < band_y || li >= iny - band_y || lj < band_x || lj >= inx - band_x;
                let v = self.laplacian[li * inx + lj];
                if edge && v.is_finite() {
                    ring.push(v.abs());
                }
            }
        }
        MAD_SCALE * median(ring)
    }

    /// Standard error of the Laplacian at interior node (li, lj), measured
    /// pairwise: orbit slot k shares its seed across all five stencil nodes,
    /// so the stencil applied to slot k's values realizes exactly the noise
    /// cancellation that actually occurred, and the spread of the per-orbit
    /// stencil values estimates the residual noise. Returns 0 when no orbit
    /// detail is stored (synthetic grids) and infinity when fewer than two
    /// orbit slots are complete, which keeps an uncertifiable node out of
    /// the mass statistics.
    fn stencil_stderr(&self, li: usize, lj: usize) -> f64 {
        if self.l_orbit.is_empty() {
            return 0.0;
        }
        let nx = self.window.nx;
        let m = self.budget.n_orbits();
        let (i, j) = (li + 1, lj + 1);
        let (dx2, dy2) = (self.window.dx().powi(2), self.window.dy().powi(2));
        let at = |i: usize, j: usize, k: usize| self.l_orbit[(i * nx + j) * m + k];
        let mut laps = Vec::with_capacity(m);
        for k in 0..m {
            let c = at(i, j, k);
            let horiz = (at(i, j - 1, k) + at(i, j + 1, k) - 2.0 * c) / dx2;
            let vert = (at(i - 1, j, k) + at(i + 1, j, k) - 2.0 * c) / dy2;
            let lap = horiz + vert;
            if lap.is_finite() {
                laps.push(lap);
            }
        }
        if laps.len() < 2 {
            return f64::INFINITY;
        }
        let n = laps.len() as f64;
        let mean = laps.iter().sum::<f64>() / n;
        let var = laps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn failed_nodes(&self) -> usize {
        self.l_values.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn exceptional_nodes(&self) -> usize {
        self.exceptional.iter().filter(|e| **e).count()
    }
}

/// Fraction of above-noise |Laplacian| mass carried by interior nodes with
/// |H| in (r0(1-band), r0(1+band)). A node contributes only when its value
/// exceeds three times its own noise scale: the per-orbit stencil spread,
/// floored globally by the far-field ring estimate. A single global floor
/// would not do: the residual noise after common-random-number cancellation
/// varies by orders of magnitude across the window, and heavy-tailed nodes
/// (one orbit grazing a near-zero Jacobian determinant) are visible only in
/// their own orbit spread. Zero above-noise mass yields 0.
pub fn annulus_concentration(grid: &ScanGrid, r0: f64, band: f64) -> Result<f64, BifscanError> {
    assert!(r0 > 0.0 && band > 0.0, "annulus must have positive radius and width");
    let (inx, iny) = grid.interior_dims();
    let (lo, hi) = (r0 * (1.0 - band), r0 * (1.0 + band));
    let mut in_annulus = 0usize;
    let mut mass_total = 0.0;
    let mut mass_annulus = 0.0;
    let floor = grid.noise_floor();
    for li in 0..iny {
        for lj in 0..inx {
            let r = grid.window.node(li + 1, lj + 1).norm();
            let inside = r > lo && r < hi;
            in_annulus += inside as usize;
            let v = grid.laplacian[li * inx + lj];
            let threshold = FLOOR_MULTIPLE * grid.stencil_stderr(li, lj).max(floor);
            if v.is_finite() && v.abs() > threshold {
                mass_total += v.abs();
                if inside {
                    mass_annulus += v.abs();
                }
            }
        }
    }
    if in_annulus == 0 {
        return Err(BifscanError::EmptyAnnulus);
    }
    if mass_total == 0.0 {
        return Ok(0.0);
    }
    Ok(mass_annulus / mass_total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    L,
    Laplacian,
}

impl Channel {
    fn name(&self) -> &'static str {
        match self {
            Channel::L => "L",
            Channel::Laplacian => "laplacian",
        }
    }
}

/// Writes `<stem>.pgm` (8-bit grayscale, affine-normalized; a degenerate
/// range maps to all-zero), `<stem>.csv` with raw values, and a
/// `<stem>.meta` sidecar. The L channel covers the full grid, the
/// Laplacian channel its interior.
pub fn emit_heatmap(grid: &ScanGrid, channel: Channel, stem: &Path) -> std::io::Result<()> {
    let (values, nx, ny, offset) = match channel {
        Channel::L => (&grid.l_values, grid.window.nx, grid.window.ny, 0usize),
        Channel::Laplacian => {
            let (inx, iny) = grid.interior_dims();
            (&grid.laplacian, inx, iny, 1usize)
        }
    };

    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut pgm = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    pgm.extend(values.iter().map(|v| {
        if v.is_finite() && scale > 0.0 {
            ((v - lo) * scale).round().clamp(0.0, 255.0) as u8
        } else {
            0u8
        }
    }));
    std::fs::write(stem.with_extension("pgm"), pgm)?;

    let mut csv = String::from("i,j,h_re,h_im,value,exceptional\n");
    for i in 0..ny {
        for j in 0..nx {
            let (gi, gj) = (i + offset, j + offset);
            let h = grid.window.node(gi, gj);
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                gi,
                gj,
                h.re,
                h.im,
                values[i * nx + j],
                grid.exceptional[gi * grid.window.nx + gj] as u8
            ));
        }
    }
    std::fs::write(stem.with_extension("csv"), csv)?;

    let mut meta = std::fs::File::create(stem.with_extension("meta"))?;
    write!(
        meta,
        "c={},{}\nc1={},{}\nc2={},{}\nG={},{}\nt={},{}\n\
         h_center={},{}\nh_halfwidth={}\nnx={}\nny={}\n\
         n_points={}\nn_steps={}\nseed={}\nchannel={}\n\
         failed_nodes={}\nexceptional_nodes={}\n",
        grid.base.c.re,
        grid.base.c.im,
        grid.base.c1.re,
        grid.base.c1.im,
        grid.base.c2.re,
        grid.base.c2.im,
        grid.g2.re,
        grid.g2.im,
        grid.t.re,
        grid.t.im,
        grid.window.center.re,
        grid.window.center.im,
        grid.window.halfwidth,
        grid.window.nx,
        grid.window.ny,
        grid.budget.n_points,
        grid.budget.n_steps,
        grid.seed,
        channel.name(),
        grid.failed_nodes(),
        grid.exceptional_nodes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn base_half() -> HenonBase {
        HenonBase::new(c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)).unwrap()
    }

    fn window(center: Complex64, halfwidth: f64, n: usize) -> GridWindow {
        GridWindow { center, halfwidth, nx: n, ny: n }
    }

    fn fill(w: &GridWindow, f: impl Fn(Complex64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.nx * w.ny);
        for i in 0..w.ny {
            for j in 0..w.nx {
                out.push(f(w.node(i, j)));
            }
        }
        out
    }

    fn synthetic_grid(w: GridWindow, laplacian: Vec<f64>) -> ScanGrid {
        ScanGrid {
            base: base_half(),
            g2: c(1.0, 0.0),
            t: c(1e-3, 0.0),
            window: w,
            l_values: vec![0.0; w.nx * w.ny],
            l_stderr: vec![0.0; w.nx * w.ny],
            l_orbit: Vec::new(),
            exceptional: vec![false; w.nx * w.ny],
            laplacian,
            seed: 0,
            budget: SampleBudget { n_points: 0, n_steps: 1 },
        }
    }

    #[test]
    fn stencil_is_exact_on_quadratics() {
        let w = window(c(0.3, 0.1), 1.0, 11);
        let saddle = laplacian_5pt(&fill(&w, |h| h.re * h.re - h.im * h.im), 11, 11, w.dx(), w.dy());
        assert!(saddle.iter().all(|v| v.abs() < 1e-10));
        let bowl = laplacian_5pt(&fill(&w, |h| h.norm_sqr()), 11, 11, w.dx(), w.dy());
        assert!(bowl.iter().all(|v| (v - 4.0).abs() < 1e-9));
    }

    #[test]
    fn nan_nodes_poison_only_their_neighborhood() {
        let w = window(c(0.0, 0.0), 1.0, 7);
        let mut vals = fill(&w, |h| h.norm_sqr());
        vals[3 * 7 + 3] = f64::NAN;
        let lap = laplacian_5pt(&vals, 7, 7, w.dx(), w.dy());
        let bad: Vec<usize> = (0..25).filter(|&k: &usize| !lap[k].is_finite()).collect();
        assert_eq!(bad, vec![7, 11, 12, 13, 17]);
    }

    #[test]
    fn synthetic_circle_mass_is_fully_concentrated() {
        let w = window(c(0.0, 0.0), 0.8, 21);
        let mut lap = Vec::new();
        for i in 1..w.ny - 1 {
            for j in 1..w.nx - 1 {
                let r = w.node(i, j).norm();
                lap.push(if (r - 0.5).abs() < 0.5 * w.dx() { 1.0 } else { 0.0 });
            }
        }
        let grid = synthetic_grid(w, lap);
        assert!(grid.noise_floor() == 0.0);
        assert_eq!(annulus_concentration(&grid, 0.5, 0.2).unwrap(), 1.0);
        assert_eq!(annulus_concentration(&grid, 0.5, 1.0 - 1e-9).unwrap(), 1.0);
        assert_eq!(
            annulus_concentration(&grid, 10.0, 0.01).unwrap_err(),
            BifscanError::EmptyAnnulus
        );
    }

    #[test]
    fn degenerate_scan_reports_failure_budget() {
        let err = scan_h(
            base_half(),
            c(1.0, 0.0),
            c(0.0, 0.0),
            window(c(0.0, 0.0), 1.0, 5),
            SampleBudget { n_points: 100, n_steps: 50 },
            3,
        )
        .unwrap_err();
        assert_eq!(err, BifscanError::TooManyFailures { failed: 25, total: 25 });
        assert_eq!(err.to_string(), "node evaluation failed on 25 of 25 grid nodes");
    }

    #[test]
    fn reference_scan_concentrates_on_the_half_circle() {
        let budget = SampleBudget { n_points: 600, n_steps: 150 };
        let grid = scan_h(
            base_half(),
            c(1.0, 0.0),
            c(1e-3, 0.0),
            window(c(0.0, 0.0), 1.5, 13),
            budget,
            11,
        )
        .unwrap();
        assert_eq!(grid.failed_nodes(), 0);
        assert!(grid.laplacian.iter().all(|v| v.is_finite()));

        // the exceptional circle |H| = 0.5 crosses the grid
        let flagged = grid.exceptional_nodes();
        assert!(flagged > 0 && flagged < grid.l_values.len() / 4, "flagged {flagged}");
        for (idx, &e) in grid.exceptional.iter().enumerate() {
            let r = grid.window.node(idx / 13, idx % 13).norm();
            if e {
                assert!((r - 0.5).abs() < 0.1, "flag far off circle at |H| = {r}");
            }
        }

        let frac = annulus_concentration(&grid, 0.5, 0.2).unwrap();
        assert!(frac >= 0.5, "concentration {frac}");

        // plaquette mean-value deviations stay within noise off the circle
        let (inx, iny) = (11, 11);
        let mut off_circle = 0usize;
        let mut beyond = 0usize;
        for li in 0..iny {
            for lj in 0..inx {
                let (i, j) = (li + 1, lj + 1);
                let r = grid.window.node(i, j).norm();
                if (r - 0.5).abs() <= 0.3 * 0.5 {
                    continue;
                }
                off_circle += 1;
                let at = |ii: usize, jj: usize| grid.l_values[ii * 13 + jj];
                let se = |ii: usize, jj: usize| grid.l_stderr[ii * 13 + jj];
                let ring_mean =
                    0.25 * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1));
                let dev = (at(i, j) - ring_mean).abs();
                let sigma = (se(i, j).powi(2)
                    + (se(i - 1, j).powi(2)
                        + se(i + 1, j).powi(2)
                        + se(i, j - 1).powi(2)
                        + se(i, j + 1).powi(2))
                        / 16.0)
                    .sqrt();
                beyond += (dev > 3.0 * sigma) as usize;
            }
        }
        assert!(off_circle > 50);
        assert!(
            (beyond as f64) < 0.05 * off_circle as f64 + 1.0,
            "{beyond} of {off_circle} plaquettes beyond 3 sigma"
        );
    }

    #[test]
    fn heatmap_artifacts_have_the_documented_shape() {
        let dir = tempfile::tempdir().unwrap();
        let w = window(c(0.0, 0.0), 0.8, 9);
        let mut lap = vec![0.0; 49];
        lap[24] = 2.0;
        let mut grid = synthetic_grid(w, lap);
        grid.l_values = fill(&w, |h| h.norm_sqr());
        grid.exceptional[40] = true;

        let stem = dir.path().join("scan");
        emit_heatmap(&grid, Channel::L, &stem).unwrap();
        let pgm = std::fs::read(dir.path().join("scan.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n9 9\n255\n"));
        assert_eq!(pgm.len(), b"P5\n9 9\n255\n".len() + 81);
        let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
        assert_eq!(csv.lines().count(), 82);
        assert!(csv.starts_with("i,j,h_re,h_im,value,exceptional\n"));
        let meta = std::fs::read_to_string(dir.path().join("scan.meta")).unwrap();
        assert!(meta.contains("channel=L\n") && meta.contains("seed=0\n"));

        // corner pixel carries the max of |H|^2, center the min
        let body = &pgm[b"P5\n9 9\n255\n".len()..];
        assert_eq!(body[0], 255);
        assert_eq!(body[4 * 9 + 4], 0);

        let stem2 = dir.path().join("lap");
        emit_heatmap(&grid, Channel::Laplacian, &stem2).unwrap();
        let pgm2 = std::fs::read(dir.path().join("lap.pgm")).unwrap();
        assert!(pgm2.starts_with(b"P5\n7 7\n255\n"));
        let csv2 = std::fs::read_to_string(dir.path().join("lap.csv")).unwrap();
        assert_eq!(csv2.lines().count(), 50);

        // constant channel normalizes to all zeros, emission is repeatable
        let flat = synthetic_grid(w, vec![1.5; 49]);
        let stem3 = dir.path().join("flat");
        emit_heatmap(&flat, Channel::Laplacian, &stem3).unwrap();
        let pgm3 = std::fs::read(dir.path().join("flat.pgm")).unwrap();
        assert!(pgm3[b"P5\n7 7\n255\n".len()..].iter().all(|&b| b == 0));
        emit_heatmap(&grid, Channel::L, &stem).unwrap();
        assert_eq!(std::fs::read(dir.path().join("scan.pgm")).unwrap(), pgm);
    }
}
