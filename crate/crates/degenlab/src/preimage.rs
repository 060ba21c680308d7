//! Fiber solver: all solutions of f_t(z, w) = (u, v).
//!
//! A regular member with t != 0 has topological degree 4, so a generic target
//! has four preimages counted with multiplicity. Both component equations are
//! at most quadratic in w with coefficients polynomial in z, so eliminating w
//! through a Sylvester resultant leaves one univariate polynomial in z of
//! degree at most 4. Its roots are back-substituted into the two w-quadratics,
//! polished by Newton steps on the full 2x2 system, and clustered into
//! multiplicity classes. At t = 0 the base map is invertible and the unique
//! preimage comes from the closed-form inverse instead.

use arrayvec::ArrayVec;
use num_complex::Complex64;
use thiserror::Error;

use crate::family::{FamilyParams, HenonBase, PointC2};
use crate::polyroot;

/// Accepted sheets must reproduce the target to this tolerance, relative to
/// 1 + |target|.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Tolerance [`newton_refine`] drives the residual to, relative to
/// 1 + |target|.
pub const REFINE_TOLERANCE: f64 = 1e-12;

/// Solutions closer than this factor times (1 + max norm) merge into one
/// multiplicity class. Shared with the periodic-point dedup.
pub const CLUSTER_RADIUS_FACTOR: f64 = 1e-6;

/// The eliminant counts as identically zero when its largest coefficient is
/// below this fraction of the homogeneity scale of its inputs.
const ELIMINANT_ZERO_REL: f64 = 1e-14;

/// Newton budget spent polishing each back-substituted sheet.
const POLISH_ITERS: u32 = 12;

#[derive(Debug, Error, PartialEq)]
pub enum PreimageError {
    /// The eliminant vanished identically: the fiber is a curve, not points.
    #[error("degenerate fiber")]
    DegenerateFiber,
    /// Newton ran into a numerically singular Jacobian.
    #[error("critical fiber point")]
    CriticalFiberPoint,
    /// Refinement missed its tolerance within the iteration budget.
    #[error("newton refinement did not converge")]
    NonConvergence,
}

/// One solution cluster of a fiber.
#[derive(Clone, Copy, Debug)]
pub struct PreimageSolution {
    pub point: PointC2,
    pub multiplicity: u32,
    /// Forward deviation |f_t(point) - target| actually measured.
    pub residual: f64,
}

/// All located solutions of f_t(p) = target.
#[derive(Clone, Debug)]
pub struct PreimageSet {
    pub target: PointC2,
    /// Clusters in lexicographic order of their representative point.
    pub solutions: Vec<PreimageSolution>,
    /// Sheets lost to degree drops or failed polishing; total multiplicity
    /// plus this equals 4 for a regular member with t != 0.
    pub degree_defect: u32,
}

impl PreimageSet {
    pub fn total_multiplicity(&self) -> u32 {
        self.solutions.iter().map(|s| s.multiplicity).sum()
    }

    /// Distance from q to the closest solution; infinite when none were found.
    pub fn min_dist(&self, q: &PointC2) -> f64 {
        self.solutions.iter().map(|s| s.point.dist(q)).fold(f64::INFINITY, f64::min)
    }

    /// CSV block `z_re,z_im,w_re,w_im,mult,residual`, one line per cluster.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z_re,z_im,w_re,w_im,mult,residual\n");
        for s in &self.solutions {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.point.z.re, s.point.z.im, s.point.w.re, s.point.w.im, s.multiplicity, s.residual
            ));
        }
        out
    }
}

/// Closed-form inverse of the base map: f_0(z, w) = (w, c z + p(w)) = (u, v)
/// is solved by w = u, z = (v - p(u)) / c.
pub fn henon_inverse(base: &HenonBase, target: PointC2) -> PointC2 {
    PointC2::new((target.w - base.p(target.z)) / base.c, target.z)
}

/// All preimages of `target` under f_t, with multiplicities.
///
/// At t = 0 this returns the single closed-form inverse. For t != 0 the full
/// quartic fiber is solved; sheets whose polished residual stays above
/// [`RESIDUAL_TOLERANCE`] times (1 + |target|) are dropped into
/// `degree_defect` with a warning.
pub fn preimages(params: &FamilyParams, target: PointC2) -> Result<PreimageSet, PreimageError> {
    let accept = RESIDUAL_TOLERANCE * (1.0 + target.norm());
    let refine = REFINE_TOLERANCE * (1.0 + target.norm());
    if !target.is_finite() {
        return Ok(PreimageSet { target, solutions: Vec::new(), degree_defect: 4 });
    }
    if params.t.norm() == 0.0 {
        let point = henon_inverse(&params.base, target);
        let residual = residual_at(params, point, target);
        let solutions = vec![PreimageSolution { point, multiplicity: 1, residual }];
        return Ok(PreimageSet { target, solutions, degree_defect: 0 });
    }

    let sys = FiberSystem::of(params, target);
    let (d1, d2) = (sys.deg1(), sys.deg2());
    let mut raw: ArrayVec<PointC2, 4> = ArrayVec::new();
    match (d1, d2) {
        (0, 0) => return Err(PreimageError::DegenerateFiber),
        (0, _) | (_, 0) => {
            // one equation is w-free: its z-roots fix z, the other picks w
            let zpoly = if d1 == 0 { &sys.a0 } else { &sys.b0 };
            if zp_max(zpoly) == 0.0 {
                return Err(PreimageError::DegenerateFiber);
            }
            for z in polyroot::roots(zpoly).roots {
                let wc = if d1 == 0 { sys.w_roots_second(z) } else { sys.w_roots_first(z) };
                for w in wc {
                    if !raw.is_full() {
                        raw.push(PointC2::new(z, w));
                    }
                }
            }
        }
        _ => {
            let (res, scale) = sys.eliminant(d1, d2);
            if zp_max(&res) <= ELIMINANT_ZERO_REL * scale {
                return Err(PreimageError::DegenerateFiber);
            }
            let mut taken: ArrayVec<PointC2, 4> = ArrayVec::new();
            for z in polyroot::roots(&res).roots {
                // rank the w-candidates of both quadratics by joint residual,
                // then modulus, then coordinates for a deterministic pick
                let mut cands: ArrayVec<(f64, Complex64), 4> = ArrayVec::new();
                for w in sys.w_roots_first(z).into_iter().chain(sys.w_roots_second(z)) {
                    if !cands.is_full() {
                        cands.push((residual_at(params, PointC2::new(z, w), target), w));
                    }
                }
                if cands.is_empty() {
                    continue;
                }
                cands.sort_unstable_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then(a.1.norm().total_cmp(&b.1.norm()))
                        .then(a.1.re.total_cmp(&b.1.re))
                        .then(a.1.im.total_cmp(&b.1.im))
                });
                // repeated z-roots must not all grab the same w: prefer a
                // fresh near-solution, fall back to the best overall so a
                // genuine multiple point still counts twice
                let fresh = |w: Complex64| {
                    let p = PointC2::new(z, w);
                    !taken
                        .iter()
                        .any(|q| q.dist(&p) <= CLUSTER_RADIUS_FACTOR * (1.0 + q.norm().max(p.norm())))
                };
                let pick = cands
                    .iter()
                    .find(|(r, w)| *r <= accept && fresh(*w))
                    .unwrap_or(&cands[0])
                    .1;
                let p = PointC2::new(z, pick);
                if !taken.is_full() {
                    taken.push(p);
                }
                if !raw.is_full() {
                    raw.push(p);
                }
            }
        }
    }

    let mut accepted: ArrayVec<(PointC2, f64), 4> = ArrayVec::new();
    for start in raw {
        if !start.is_finite() {
            continue;
        }
        let (p, r) = match newton_core(params, target, start, POLISH_ITERS, refine) {
            NewtonOutcome::Converged(p, r)
            | NewtonOutcome::Singular(p, r)
            | NewtonOutcome::Exhausted(p, r) => (p, r),
        };
        if r <= accept && !accepted.is_full() {
            accepted.push((p, r));
        } else if r > accept {
            log::warn!("dropping fiber sheet near z = {}: residual {r:.3e} above {accept:.3e}", start.z);
        }
    }

    let max_norm = accepted.iter().map(|(p, _)| p.norm()).fold(0.0, f64::max);
    let radius = CLUSTER_RADIUS_FACTOR * (1.0 + max_norm);
    accepted.sort_unstable_by(|a, b| a.0.lex_cmp(&b.0));
    let mut clusters: ArrayVec<ArrayVec<(PointC2, f64), 4>, 4> = ArrayVec::new();
    for item in accepted {
        match clusters.iter_mut().find(|cl| cl.iter().any(|m| m.0.dist(&item.0) <= radius)) {
            Some(cl) => {
                if !cl.is_full() {
                    cl.push(item);
                }
            }
            None => {
                if !clusters.is_full() {
                    let mut cl = ArrayVec::new();
                    cl.push(item);
                    clusters.push(cl);
                }
            }
        }
    }
    let mut solutions: Vec<PreimageSolution> = clusters
        .iter()
        .map(|cl| {
            let rep = cl.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            PreimageSolution { point: rep.0, multiplicity: cl.len() as u32, residual: rep.1 }
        })
        .collect();
    solutions.sort_by(|a, b| a.point.lex_cmp(&b.point));
    let total: u32 = solutions.iter().map(|s| s.multiplicity).sum();
    Ok(PreimageSet { target, solutions, degree_defect: 4u32.saturating_sub(total) })
}

/// Newton iteration on f_t(p) = target from `guess` down to residual
/// 1e-12 * (1 + |target|). An exact guess is returned unchanged.
pub fn newton_refine(
    params: &FamilyParams,
    target: PointC2,
    guess: PointC2,
    max_iter: u32,
) -> Result<PointC2, PreimageError> {
    let tol = REFINE_TOLERANCE * (1.0 + target.norm());
    match newton_core(params, target, guess, max_iter, tol) {
        NewtonOutcome::Converged(p, _) => Ok(p),
        NewtonOutcome::Singular(_, _) => Err(PreimageError::CriticalFiberPoint),
        NewtonOutcome::Exhausted(_, _) => Err(PreimageError::NonConvergence),
    }
}

enum NewtonOutcome {
    Converged(PointC2, f64),
    Singular(PointC2, f64),
    Exhausted(PointC2, f64),
}

/// Undamped Newton on the 2x2 system; tracks the best residual seen so the
/// polishing caller keeps the most accurate point even on failure paths.
fn newton_core(
    params: &FamilyParams,
    target: PointC2,
    guess: PointC2,
    max_iter: u32,
    tol: f64,
) -> NewtonOutcome {
    let mut p = guess;
    let mut r = residual_at(params, p, target);
    let (mut best, mut best_r) = (p, r);
    for _ in 0..max_iter {
        if r <= tol {
            return NewtonOutcome::Converged(p, r);
        }
        let j = params.jacobian(p);
        let det = j.det();
        if det.norm() <= f64::EPSILON * j.norm().powi(2) {
            return NewtonOutcome::Singular(best, best_r);
        }
        let img = match params.evaluate(p) {
            Ok(v) => v,
            Err(_) => return NewtonOutcome::Exhausted(best, best_r),
        };
        let (fz, fw) = (img.z - target.z, img.w - target.w);
        let step_z = (fz * j.m22 - fw * j.m12) / det;
        let step_w = (fw * j.m11 - fz * j.m21) / det;
        p = PointC2::new(p.z - step_z, p.w - step_w);
        if !p.is_finite() {
            return NewtonOutcome::Exhausted(best, best_r);
        }
        r = residual_at(params, p, target);
        if r < best_r {
            best = p;
            best_r = r;
        }
    }
    if r <= tol {
        NewtonOutcome::Converged(p, r)
    } else {
        NewtonOutcome::Exhausted(best, best_r)
    }
}

/// |f_t(p) - target|; infinite when the forward image overflows.
fn residual_at(params: &FamilyParams, p: PointC2, target: PointC2) -> f64 {
    match params.evaluate(p) {
        Ok(img) => ((img.z - target.z).norm_sqr() + (img.w - target.w).norm_sqr()).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// Polynomial in z of degree at most 4, ascending coefficients.
type ZPoly = [Complex64; 5];

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn zp_from(parts: &[Complex64]) -> ZPoly {
    let mut out = [c0(); 5];
    out[..parts.len()].copy_from_slice(parts);
    out
}

fn zp_mul(a: &ZPoly, b: &ZPoly) -> ZPoly {
    let mut full = [c0(); 9];
    for i in 0..5 {
        for j in 0..5 {
            full[i + j] += a[i] * b[j];
        }
    }
    // callers never multiply past combined degree 4
    debug_assert!(full[5..].iter().all(|v| v.norm() == 0.0));
    zp_from(&full[..5])
}

fn zp_add(a: &ZPoly, b: &ZPoly) -> ZPoly {
    let mut out = *a;
    for (o, v) in out.iter_mut().zip(b) {
        *o += v;
    }
    out
}

fn zp_sub(a: &ZPoly, b: &ZPoly) -> ZPoly {
    let mut out = *a;
    for (o, v) in out.iter_mut().zip(b) {
        *o -= v;
    }
    out
}

fn zp_eval(a: &ZPoly, z: Complex64) -> Complex64 {
    a.iter().rev().fold(c0(), |acc, &c| acc * z + c)
}

fn zp_max(a: &ZPoly) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// The two component equations written as polynomials in w whose
/// coefficients are polynomials in z:
///
/// ```text
/// E1 = a2 w^2 + a1(z) w + a0(z) = t g(z, w) + w - u
/// E2 = b2 w^2 + b1(z) w + b0(z) = c z + p(w) + t h(z, w) - v
/// ```
struct FiberSystem {
    a2: Complex64,
    a1: ZPoly,
    a0: ZPoly,
    b2: Complex64,
    b1: ZPoly,
    b0: ZPoly,
}

impl FiberSystem {
    fn of(params: &FamilyParams, target: PointC2) -> Self {
        let t = params.t;
        let g = &params.g;
        let h = &params.h;
        let b = &params.base;
        let one = Complex64::new(1.0, 0.0);
        Self {
            a2: t * g.a02,
            a1: zp_from(&[one + t * g.a01, t * g.a11]),
            a0: zp_from(&[t * g.a00 - target.z, t * g.a10, t * g.a20]),
            b2: one + t * h.a02,
            b1: zp_from(&[b.c1 + t * h.a01, t * h.a11]),
            b0: zp_from(&[b.c2 + t * h.a00 - target.w, b.c + t * h.a10, t * h.a20]),
        }
    }

    /// w-degree of the first equation.
    fn deg1(&self) -> usize {
        if self.a2.norm() > 0.0 {
            2
        } else if zp_max(&self.a1) > 0.0 {
            1
        } else {
            0
        }
    }

    /// w-degree of the second equation.
    fn deg2(&self) -> usize {
        if self.b2.norm() > 0.0 {
            2
        } else if zp_max(&self.b1) > 0.0 {
            1
        } else {
            0
        }
    }

    fn w_roots_first(&self, z: Complex64) -> ArrayVec<Complex64, 4> {
        w_roots(self.a2, zp_eval(&self.a1, z), zp_eval(&self.a0, z))
    }

    fn w_roots_second(&self, z: Complex64) -> ArrayVec<Complex64, 4> {
        w_roots(self.b2, zp_eval(&self.b1, z), zp_eval(&self.b0, z))
    }

    /// Sylvester resultant in w for the effective degrees, plus the
    /// homogeneity scale (na^d2 * nb^d1) used by the identically-zero test.
    fn eliminant(&self, d1: usize, d2: usize) -> (ZPoly, f64) {
        let a2p = zp_from(&[self.a2]);
        let b2p = zp_from(&[self.b2]);
        let na = self.a2.norm().max(zp_max(&self.a1)).max(zp_max(&self.a0));
        let nb = self.b2.norm().max(zp_max(&self.b1)).max(zp_max(&self.b0));
        let res = match (d1, d2) {
            (2, 2) => {
                let p = zp_sub(&zp_mul(&a2p, &self.b0), &zp_mul(&self.a0, &b2p));
                let q = zp_sub(&zp_mul(&a2p, &self.b1), &zp_mul(&self.a1, &b2p));
                let r = zp_sub(&zp_mul(&self.a1, &self.b0), &zp_mul(&self.a0, &self.b1));
                zp_sub(&zp_mul(&p, &p), &zp_mul(&q, &r))
            }
            (1, 2) => zp_add(
                &zp_sub(
                    &zp_mul(&b2p, &zp_mul(&self.a0, &self.a0)),
                    &zp_mul(&self.b1, &zp_mul(&self.a1, &self.a0)),
                ),
                &zp_mul(&self.b0, &zp_mul(&self.a1, &self.a1)),
            ),
            (2, 1) => zp_add(
                &zp_sub(
                    &zp_mul(&a2p, &zp_mul(&self.b0, &self.b0)),
                    &zp_mul(&self.a1, &zp_mul(&self.b0, &self.b1)),
                ),
                &zp_mul(&self.a0, &zp_mul(&self.b1, &self.b1)),
            ),
            (1, 1) => zp_sub(&zp_mul(&self.a1, &self.b0), &zp_mul(&self.a0, &self.b1)),
            _ => unreachable!("w-free equations are handled before elimination"),
        };
        (res, na.powi(d2 as i32) * nb.powi(d1 as i32))
    }
}

/// Roots of q2 w^2 + q1 w + q0 with degree trimming.
fn w_roots(q2: Complex64, q1: Complex64, q0: Complex64) -> ArrayVec<Complex64, 4> {
    polyroot::roots(&[q0, q1, q2, c0(), c0()]).roots
}
