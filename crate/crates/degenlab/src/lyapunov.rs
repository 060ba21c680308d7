//! Lyapunov exponents along measure-generic orbits, cone-field checks, and a
//! periodic-point cross-estimator.
//!
//! Forward iteration on the Julia set is numerically repelling, so exponents
//! are accumulated along recorded backward orbits traversed forward: the
//! orbit stays on (an approximation of) the support of the measure. A QR
//! re-orthonormalization at every step keeps the two growth rates separated;
//! logs are accumulated in compensated sums because the entries span many
//! orders of magnitude.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::family::{FamilyParams, Jacobian2, PointC2};
use crate::measure::{backward_orbit, box_vt, MeasureError, SampleCloud, DEFAULT_BURN_IN};
use crate::preimage::{CLUSTER_RADIUS_FACTOR, RESIDUAL_TOLERANCE};
use crate::stats::{jackknife, mix64, KahanSum};

/// Cloud points inspected when calibrating the cone opening.
const PRESCAN_POINTS: usize = 1000;

/// Fraction of orbits allowed to hit a singular Jacobian before the whole
/// estimate is rejected.
const DROP_BUDGET: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum LyapunovError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("singular jacobian on {dropped} of {total} orbits")]
    SingularOrbits { dropped: usize, total: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExponentMethod {
    QrBackwardOrbit,
    BdmPeriodic,
}

/// Exponent pair chi1 >= chi2 with their sum and jackknife errors.
#[derive(Clone, Copy, Debug)]
pub struct LyapunovEstimate {
    pub chi1: f64,
    pub chi2: f64,
    /// Sum chi1 + chi2, stored exactly as the sum of the two fields.
    pub l: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    /// Orbits that survived the singular-Jacobian filter.
    pub n_orbits: usize,
    pub n_steps: usize,
    pub method: ExponentMethod,
}

/// QR exponent estimate plus per-orbit averages kept in their seed slots:
/// entry k belongs to the backward chain seeded with mix64(seed, k), None if
/// that orbit was dropped by the singular-Jacobian filter. Slot identity is
/// what makes estimates comparable orbit-by-orbit across nearby parameters
/// under a shared seed.
pub fn qr_exponents_slotted(
    params: &FamilyParams,
    seed: u64,
    n_orbits: usize,
    n_steps: usize,
) -> Result<(LyapunovEstimate, Vec<Option<(f64, f64)>>), LyapunovError> {
    assert!(n_orbits > 0 && n_steps > 0, "orbit request must be nonempty");
    let outs: Vec<Result<Option<(f64, f64)>, MeasureError>> = (0..n_orbits)
        .into_par_iter()
        .map(|k| {
            let orbit = backward_orbit(params, n_steps, DEFAULT_BURN_IN, mix64(seed, k as u64))?;
            Ok(exponents_along(params, &orbit))
        })
        .collect();

    let mut slots = Vec::with_capacity(n_orbits);
    let mut dropped = 0usize;
    for out in outs {
        let slot = out?;
        dropped += slot.is_none() as usize;
        slots.push(slot);
    }
    if dropped as f64 > DROP_BUDGET * n_orbits as f64 {
        return Err(LyapunovError::SingularOrbits { dropped, total: n_orbits });
    }

    let chi1s: Vec<f64> = slots.iter().flatten().map(|r| r.0).collect();
    let chi2s: Vec<f64> = slots.iter().flatten().map(|r| r.1).collect();
    let (chi1, stderr1) = orbit_mean(&chi1s);
    let (chi2, stderr2) = orbit_mean(&chi2s);
    let est = LyapunovEstimate {
        chi1,
        chi2,
        l: chi1 + chi2,
        stderr1,
        stderr2,
        n_orbits: chi1s.len(),
        n_steps,
        method: ExponentMethod::QrBackwardOrbit,
    };
    Ok((est, slots))
}

/// QR exponent estimate plus the surviving per-orbit averages, in orbit
/// order; see [`qr_exponents_slotted`] for the slot-preserving variant.
pub fn qr_exponents_detailed(
    params: &FamilyParams,
    seed: u64,
    n_orbits: usize,
    n_steps: usize,
) -> Result<(LyapunovEstimate, Vec<(f64, f64)>), LyapunovError> {
    let (est, slots) = qr_exponents_slotted(params, seed, n_orbits, n_steps)?;
    Ok((est, slots.into_iter().flatten().collect()))
}

/// QR exponent estimate; see [`qr_exponents_detailed`].
pub fn qr_exponents(
    params: &FamilyParams,
    seed: u64,
    n_orbits: usize,
    n_steps: usize,
) -> Result<LyapunovEstimate, LyapunovError> {
    qr_exponents_detailed(params, seed, n_orbits, n_steps).map(|(est, _)| est)
}

/// CSV block of per-orbit exponent averages.
pub fn per_orbit_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("orbit_id,chi1,chi2\n");
    for (i, (a, b)) in rows.iter().enumerate() {
        out.push_str(&format!("{i},{a},{b}\n"));
    }
    out
}

fn orbit_mean(values: &[f64]) -> (f64, f64) {
    if values.len() == 1 {
        return (values[0], 0.0);
    }
    jackknife(values, values.len().min(32))
}

/// Accumulates both growth rates along one recorded backward orbit traversed
/// forward. Returns None when a singular Jacobian collapses a QR column.
fn exponents_along(params: &FamilyParams, orbit: &[PointC2]) -> Option<(f64, f64)> {
    // the expanding direction lies in the vertical cone, so the first column
    // starts along w to keep the alignment transient short
    let mut q = Jacobian2 {
        m11: Complex64::new(0.0, 0.0),
        m12: Complex64::new(1.0, 0.0),
        m21: Complex64::new(1.0, 0.0),
        m22: Complex64::new(0.0, 0.0),
    };
    let mut l1 = KahanSum::new();
    let mut l2 = KahanSum::new();
    for p in orbit.iter().rev() {
        let b = params.jacobian(*p).mul(&q);
        let r11 = (b.m11.norm_sqr() + b.m21.norm_sqr()).sqrt();
        if !(r11 > 0.0 && r11.is_finite()) {
            return None;
        }
        let q11 = b.m11 / r11;
        let q21 = b.m21 / r11;
        let r12 = q11.conj() * b.m12 + q21.conj() * b.m22;
        let v2a = b.m12 - r12 * q11;
        let v2b = b.m22 - r12 * q21;
        let r22 = (v2a.norm_sqr() + v2b.norm_sqr()).sqrt();
        if !(r22 > 0.0 && r22.is_finite()) {
            return None;
        }
        l1.add(r11.ln());
        l2.add(r22.ln());
        q = Jacobian2 { m11: q11, m12: v2a / r22, m21: q21, m22: v2b / r22 };
    }
    let n = orbit.len() as f64;
    let a = l1.value() / n;
    let b = l2.value() / n;
    Some(if a >= b { (a, b) } else { (b, a) })
}

/// Cone-field verification counts over sampled (point, vector) pairs.
#[derive(Clone, Copy, Debug)]
pub struct ConeReport {
    pub eta0: f64,
    pub delta: f64,
    pub n_tested: usize,
    pub invariance_failures: usize,
    pub ratio_violations: usize,
}

/// Cone opening from a pre-scan of the cloud: 10 times the largest observed
/// ratio of the z-into-w coupling to the w-into-z coupling of the Jacobian.
pub fn calibrate_eta0(params: &FamilyParams, cloud: &SampleCloud) -> f64 {
    debug_assert_eq!(params, &cloud.params);
    assert!(!cloud.points.is_empty(), "cannot calibrate on an empty cloud");
    let mut worst = 0.0f64;
    for p in cloud.points.iter().take(PRESCAN_POINTS) {
        let j = params.jacobian(*p);
        let ratio = j.m21.norm() / j.m12.norm();
        if ratio.is_finite() {
            worst = worst.max(ratio);
        }
    }
    let eta0 = 10.0 * worst;
    assert!(eta0.is_finite() && eta0 > 0.0, "cone calibration degenerated: {eta0}");
    eta0
}

/// Tests cone invariance and the |2w| expansion band on random cone vectors
/// at every cloud point. Violations are counted, never raised as errors.
pub fn cone_check(
    params: &FamilyParams,
    cloud: &SampleCloud,
    eta0: f64,
    delta: f64,
    vectors_per_point: usize,
    seed: u64,
) -> ConeReport {
    debug_assert_eq!(params, &cloud.params);
    assert!(eta0 > 0.0, "cone opening must be positive");
    assert!(delta > 0.0 && delta < 1.0, "band width must lie in (0, 1)");
    assert!(vectors_per_point > 0, "need at least one vector per point");
    let tau = std::f64::consts::TAU;
    let counts: Vec<(usize, usize)> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(idx, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, idx as u64));
            let j = params.jacobian(*p);
            let scale = 2.0 * p.w.norm();
            let mut inv = 0usize;
            let mut rat = 0usize;
            for _ in 0..vectors_per_point {
                // vectors spread over the cone interior: |y| / |x| ranges
                // from just above eta0 up to 1e6 eta0
                let phase_x = Complex64::from_polar(1.0, rng.gen::<f64>() * tau);
                let phase_y = Complex64::from_polar(1.0, rng.gen::<f64>() * tau);
                let mag = eta0 * 10f64.powf(rng.gen_range(1e-6..6.0));
                let v = (phase_x, mag * phase_y);
                let (ix, iy) = j.apply(v);
                if iy.norm() <= eta0 * ix.norm() {
                    inv += 1;
                }
                let ratio = (ix.norm_sqr() + iy.norm_sqr()).sqrt()
                    / (v.0.norm_sqr() + v.1.norm_sqr()).sqrt();
                if ratio < (1.0 - delta) * scale || ratio > (1.0 + delta) * scale {
                    rat += 1;
                }
            }
            (inv, rat)
        })
        .collect();
    let mut report = ConeReport {
        eta0,
        delta,
        n_tested: cloud.points.len() * vectors_per_point,
        invariance_failures: 0,
        ratio_violations: 0,
    };
    for (inv, rat) in counts {
        report.invariance_failures += inv;
        report.ratio_violations += rat;
    }
    report
}

/// One fixed point of the n-th iterate with the eigenvalues of its cycle
/// derivative, |lambda1| >= |lambda2|.
#[derive(Clone, Copy, Debug)]
pub struct PeriodicPoint {
    pub point: PointC2,
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub repelling: bool,
}

/// Fixed points of the n-th iterate found by multi-start Newton.
#[derive(Clone, Debug)]
pub struct PeriodicOrbitSet {
    pub period: u32,
    pub points: Vec<PeriodicPoint>,
    /// Found count over the 4^n fixed points a regular map has, clamped to 1;
    /// an estimate only, completeness is not guaranteed.
    pub coverage_estimate: f64,
}

impl PeriodicOrbitSet {
    /// CSV block, one found point per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,z_re,z_im,w_re,w_im,abs_lambda1,abs_lambda2,repelling\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.period,
                p.point.z.re,
                p.point.z.im,
                p.point.w.re,
                p.point.w.im,
                p.lambda1.norm(),
                p.lambda2.norm(),
                p.repelling
            ));
        }
        out
    }
}

/// Searches for fixed points of the n-th iterate with Newton from `n_seeds`
/// random starts in V_t(0.3), deduplicated at the shared cluster radius.
///
/// Demands t != 0 and 1 <= n <= 4 (the 4^n count degrades fast beyond).
/// Deterministic: seed k draws its start from the stream mix64(seed, k) and
/// candidates merge in seed order.
pub fn find_periodic(params: &FamilyParams, n: u32, n_seeds: usize, seed: u64) -> PeriodicOrbitSet {
    assert!(params.t.norm() > 0.0, "periodic search requires t != 0");
    assert!((1..=4).contains(&n), "period must lie in 1..=4, got {n}");
    assert!(n_seeds > 0, "need at least one Newton seed");
    let bx = box_vt(params, 0.3);
    let tau = std::f64::consts::TAU;
    let candidates: Vec<Option<PointC2>> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, k as u64));
            let zr = rng.gen_range(bx.z_inner..bx.z_outer);
            let za = rng.gen::<f64>() * tau;
            let wr = if bx.w_inner < bx.w_outer {
                rng.gen_range(bx.w_inner..bx.w_outer)
            } else {
                bx.w_outer
            };
            let wa = rng.gen::<f64>() * tau;
            let start = PointC2::new(Complex64::from_polar(zr, za), Complex64::from_polar(wr, wa));
            newton_periodic(params, n, start)
        })
        .collect();

    let mut kept: Vec<PointC2> = Vec::new();
    for cand in candidates.into_iter().flatten() {
        let dup = kept.iter().any(|k| {
            cand.dist(k) <= CLUSTER_RADIUS_FACTOR * (1.0 + cand.norm().max(k.norm()))
        });
        if !dup {
            kept.push(cand);
        }
    }
    kept.sort_by(|a, b| a.lex_cmp(b));

    let points: Vec<PeriodicPoint> = kept
        .into_iter()
        .filter_map(|p| {
            let (_, jn) = orbit_map(params, p, n)?;
            let (lambda1, lambda2) = jn.eigenvalues();
            Some(PeriodicPoint { point: p, lambda1, lambda2, repelling: lambda2.norm() > 1.0 })
        })
        .collect();
    let coverage = points.len() as f64 / 4f64.powi(n as i32);
    PeriodicOrbitSet { period: n, points, coverage_estimate: coverage.min(1.0) }
}

/// n-fold image and the derivative of the n-th iterate along the orbit.
fn orbit_map(params: &FamilyParams, p: PointC2, n: u32) -> Option<(PointC2, Jacobian2)> {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut cur = p;
    let mut jtot = Jacobian2 { m11: one, m12: zero, m21: zero, m22: one };
    for _ in 0..n {
        jtot = params.jacobian(cur).mul(&jtot);
        cur = params.evaluate(cur).ok()?;
    }
    Some((cur, jtot))
}

fn newton_periodic(params: &FamilyParams, n: u32, start: PointC2) -> Option<PointC2> {
    let escape = 1e9 * (1.0 + start.norm());
    let mut p = start;
    let mut best = start;
    let mut best_res = f64::INFINITY;
    for _ in 0..50 {
        let (img, jn) = orbit_map(params, p, n)?;
        let fz = img.z - p.z;
        let fw = img.w - p.w;
        let res = (fz.norm_sqr() + fw.norm_sqr()).sqrt();
        if res < best_res {
            best_res = res;
            best = p;
        }
        if res <= 1e-13 * (1.0 + p.norm()) {
            break;
        }
        let a = jn.m11 - 1.0;
        let b = jn.m12;
        let c = jn.m21;
        let d = jn.m22 - 1.0;
        let det = a * d - b * c;
        if det.norm() < 1e-290 {
            return None;
        }
        p = PointC2::new(p.z + (-fz * d + fw * b) / det, p.w + (-fw * a + fz * c) / det);
        if !p.is_finite() || p.norm() > escape {
            return None;
        }
    }
    (best_res <= RESIDUAL_TOLERANCE * (1.0 + best.norm())).then_some(best)
}

/// Exponents from a repelling-periodic-point average.
#[derive(Clone, Copy, Debug)]
pub struct BdmEstimate {
    pub chi1_hat: f64,
    pub chi2_hat: f64,
    pub l_hat: f64,
    /// Points behind the average: repelling and inside V_t(0.3).
    pub n_used: usize,
    /// Set when coverage is below one half (or nothing usable was found);
    /// the values are then not trustworthy.
    pub unreliable: bool,
}

/// Averages (1/n) log of the eigenvalue moduli over the found points that are
/// repelling and inside V_t(0.3). A cross-check of the QR estimator, not the
/// primary exponent source.
pub fn bdm_estimate(params: &FamilyParams, orbits: &PeriodicOrbitSet) -> BdmEstimate {
    assert!(!orbits.points.is_empty(), "periodic orbit set is empty");
    let bx = box_vt(params, 0.3);
    let n = orbits.period as f64;
    let used: Vec<&PeriodicPoint> =
        orbits.points.iter().filter(|p| p.repelling && bx.contains(&p.point)).collect();
    let unreliable = orbits.coverage_estimate < 0.5 || used.is_empty();
    if used.is_empty() {
        return BdmEstimate {
            chi1_hat: f64::NAN,
            chi2_hat: f64::NAN,
            l_hat: f64::NAN,
            n_used: 0,
            unreliable,
        };
    }
    let m = used.len() as f64;
    let chi1_hat = used.iter().map(|p| p.lambda1.norm().ln()).sum::<f64>() / (n * m);
    let chi2_hat = used.iter().map(|p| p.lambda2.norm().ln()).sum::<f64>() / (n * m);
    BdmEstimate { chi1_hat, chi2_hat, l_hat: chi1_hat + chi2_hat, n_used: used.len(), unreliable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::HenonBase;
    use crate::measure::{integrate_log, sample_mu, LogIntegrand};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn base_half() -> HenonBase {
        HenonBase::new(c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)).unwrap()
    }

    fn reference(t: f64) -> FamilyParams {
        FamilyParams::z2_coupled(base_half(), c(t, 0.0), c(1.0, 0.0), c(0.0, 0.0)).unwrap()
    }

    fn with_h2(t: f64) -> FamilyParams {
        FamilyParams::z2_coupled(base_half(), c(t, 0.0), c(1.0, 0.0), c(2.0, 0.0)).unwrap()
    }

    /// Top singular value of a 2x2 complex matrix and the squared overlap of
    /// its top right-singular vector with e2, via the Hermitian form M* M.
    /// The small singular value is NOT taken from det(M): the determinant of
    /// an accumulated product cancels at the ratio s1/s2 and is meaningless
    /// in double precision beyond a handful of factors.
    fn svd_top(m: &Jacobian2) -> (f64, f64) {
        let a = m.m11.norm_sqr() + m.m21.norm_sqr();
        let d = m.m12.norm_sqr() + m.m22.norm_sqr();
        let b = m.m11.conj() * m.m12 + m.m21.conj() * m.m22;
        let disc = ((a - d) * (a - d) + 4.0 * b.norm_sqr()).sqrt();
        let s1_sqr = (a + d + disc) / 2.0;
        // top right-singular vector is proportional to (b, s1^2 - a)
        let overlap = if b.norm() > 0.0 {
            let vb = s1_sqr - a;
            vb * vb / (b.norm_sqr() + vb * vb)
        } else if a >= d {
            0.0
        } else {
            1.0
        };
        (s1_sqr.sqrt(), overlap)
    }

    fn dense_product(params: &FamilyParams, orbit: &[PointC2]) -> Jacobian2 {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut p = Jacobian2 { m11: one, m12: zero, m21: zero, m22: one };
        for pt in orbit.iter().rev() {
            p = params.jacobian(*pt).mul(&p);
        }
        p
    }

    #[test]
    fn qr_matches_svd_product_oracle_on_short_orbits() {
        for (params, seed) in [(reference(1e-3), 11u64), (with_h2(1e-3), 29u64)] {
            for n_steps in [5usize, 17, 30] {
                let (est, rows) = qr_exponents_detailed(&params, seed, 1, n_steps).unwrap();
                assert_eq!(rows.len(), 1);
                let orbit =
                    backward_orbit(&params, n_steps, DEFAULT_BURN_IN, mix64(seed, 0)).unwrap();
                let prod = dense_product(&params, &orbit);
                let (s1, overlap) = svd_top(&prod);
                let n = n_steps as f64;
                // log |det| of the product, factor by factor (each factor is
                // well-conditioned; the accumulated product's det is not)
                let log_det: f64 =
                    orbit.iter().map(|p| params.jacobian(*p).det().norm().ln()).sum();
                let ln_s2 = log_det - s1.ln();

                // the exponent sum equals the determinant functional exactly
                assert!((est.l - log_det / n).abs() < 1e-8, "sum mismatch at {n_steps}");

                // the SVD predicts the QR column growth through the overlap
                // of the start column e_w with the top singular direction
                let s_ratio_sqr = (2.0 * (ln_s2 - s1.ln())).exp();
                let ln_grow =
                    s1.ln() + 0.5 * (overlap + s_ratio_sqr * (1.0 - overlap)).ln();
                assert!((est.chi1 - ln_grow / n).abs() < 1e-8, "chi1 mismatch at {n_steps}");
                assert!(
                    (est.chi2 - (log_det - ln_grow) / n).abs() < 1e-8,
                    "chi2 mismatch at {n_steps}"
                );
                // second-column norm of the product is the same functional
                let col = (prod.m12.norm_sqr() + prod.m22.norm_sqr()).sqrt();
                assert!((ln_grow - col.ln()).abs() < 1e-8);

                // raw singular values agree up to the alignment defect
                // (1 - overlap) / 2n, far below the statistical tolerances
                assert!((est.chi1 - s1.ln() / n).abs() < 5e-4);
                assert!((est.chi2 - ln_s2 / n).abs() < 5e-4);
            }
        }
    }

    #[test]
    fn per_orbit_rows_export() {
        let (est, rows) = qr_exponents_detailed(&reference(1e-3), 4, 3, 40).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(est.n_orbits, 3);
        let csv = per_orbit_csv(&rows);
        assert!(csv.starts_with("orbit_id,chi1,chi2\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn exponents_split_at_small_t() {
        let est = qr_exponents(&reference(1e-5), 2, 12, 400).unwrap();
        assert_eq!(est.method, ExponentMethod::QrBackwardOrbit);
        assert!(est.chi1 >= est.chi2);
        assert_eq!(est.l, est.chi1 + est.chi2);
        assert!(est.stderr1 > 0.0 && est.stderr2 > 0.0);
        assert!((est.chi2 - 2.0f64.ln()).abs() < 0.03, "chi2 {}", est.chi2);
        let shift = est.chi1 - 0.5 * 1e5f64.ln();
        assert!((shift - 2.0f64.sqrt().ln()).abs() < 0.03, "chi1 shift {shift}");
        assert!(est.chi2 >= 2.0f64.sqrt().ln() - 3.0 * est.stderr2);
    }

    #[test]
    fn exponent_sum_matches_measure_integral() {
        let f = reference(1e-4);
        let est = qr_exponents(&f, 6, 8, 256).unwrap();
        let cloud = sample_mu(&f, 2000, DEFAULT_BURN_IN, 21).unwrap();
        let (v, sv) = integrate_log(&cloud, LogIntegrand::AbsDet).unwrap();
        let combined = (est.stderr1 * est.stderr1 + est.stderr2 * est.stderr2 + sv * sv).sqrt();
        assert!(
            (est.l - v).abs() < 3.0 * combined,
            "sum {} vs integral {} (combined stderr {combined})",
            est.l,
            v
        );
    }

    #[test]
    fn cone_calibration_and_invariance() {
        let f = reference(1e-4);
        let cloud = sample_mu(&f, 2000, DEFAULT_BURN_IN, 3).unwrap();
        // h = 0 pins the couplings at |m21| = |c|, |m12| = 1
        let eta0 = calibrate_eta0(&f, &cloud);
        assert!((eta0 - 5.0).abs() < 1e-12, "eta0 {eta0}");

        let rep = cone_check(&f, &cloud, eta0, 0.1, 50, 19);
        assert_eq!(rep.n_tested, 100_000);
        assert_eq!(rep.invariance_failures, 0);
        assert_eq!(rep.ratio_violations, 0);

        // the cone axis (0, 1) lands in the expansion band directly
        let p = cloud.points[0];
        let j = f.jacobian(p);
        let axis = (j.m12.norm_sqr() + j.m22.norm_sqr()).sqrt();
        let scale = 2.0 * p.w.norm();
        assert!(axis > 0.9 * scale && axis < 1.1 * scale);

        // the band is nested in delta: tightening it only adds violations
        let tight = cone_check(&f, &cloud, eta0, 1e-6, 5, 19);
        let mid = cone_check(&f, &cloud, eta0, 0.01, 5, 19);
        let wide = cone_check(&f, &cloud, eta0, 0.1, 5, 19);
        assert!(tight.ratio_violations > 0);
        assert!(tight.ratio_violations >= mid.ratio_violations);
        assert!(mid.ratio_violations >= wide.ratio_violations);
        assert_eq!(tight.invariance_failures, wide.invariance_failures);
    }

    #[test]
    fn periodic_points_converge_to_base_map_roots() {
        let f = reference(1e-3);
        let set = find_periodic(&f, 1, 800, 23);
        assert_eq!(set.points.len(), 4, "coverage {}", set.coverage_estimate);
        assert_eq!(set.coverage_estimate, 1.0);

        for p in &set.points {
            let (img, jn) = orbit_map(&f, p.point, 1).unwrap();
            let res = ((img.z - p.point.z).norm_sqr() + (img.w - p.point.w).norm_sqr()).sqrt();
            assert!(res <= 1e-9 * (1.0 + p.point.norm()));
            let prod = p.lambda1 * p.lambda2;
            assert!((prod - jn.det()).norm() <= 1e-10 * jn.det().norm());
            assert!(p.lambda1.norm() >= p.lambda2.norm());
        }

        // two sheets continue the invertible-limit fixed points, two diverge
        let near = |z: f64, w: f64| {
            set.points
                .iter()
                .any(|p| p.point.dist(&PointC2::new(c(z, 0.0), c(w, 0.0))) < 0.05)
        };
        assert!(near(0.0, 0.0));
        assert!(near(0.5, 0.5));
        let big: Vec<_> = set.points.iter().filter(|p| p.point.z.norm() > 500.0).collect();
        assert_eq!(big.len(), 2);
        assert!(big.iter().all(|p| p.repelling));
        assert_eq!(set.points.iter().filter(|p| p.repelling).count(), 2);

        let csv = set.to_csv();
        assert!(csv.starts_with("period,z_re,z_im,w_re,w_im,abs_lambda1,abs_lambda2,repelling\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn bdm_agrees_with_qr_at_period_three() {
        let f = reference(1e-3);
        let set = find_periodic(&f, 3, 3000, 13);
        assert!(set.coverage_estimate >= 0.8, "coverage {}", set.coverage_estimate);
        let bdm = bdm_estimate(&f, &set);
        assert!(!bdm.unreliable);
        assert!(bdm.n_used > 0);

        for p in set.points.iter().filter(|p| p.repelling) {
            assert!(p.lambda1.norm() > 1.0 && p.lambda2.norm() > 1.0);
            assert!((p.lambda1.norm() - p.lambda2.norm()).abs() > 1e-6 * p.lambda1.norm());
        }

        let est = qr_exponents(&f, 6, 8, 256).unwrap();
        assert!((bdm.l_hat - est.l).abs() < 0.1, "bdm {} vs qr {}", bdm.l_hat, est.l);
    }

    #[test]
    fn eigenvalue_split_sharpens_as_t_shrinks() {
        let mut mins = Vec::new();
        for t in [1e-3, 1e-4] {
            let f = reference(t);
            let set = find_periodic(&f, 2, 1500, 7);
            let bx = box_vt(&f, 0.3);
            let used: Vec<_> = set
                .points
                .iter()
                .filter(|p| p.repelling && bx.contains(&p.point))
                .collect();
            assert!(!used.is_empty());
            if t == 1e-4 {
                for p in &used {
                    let slow = p.lambda2.norm().powf(0.5);
                    assert!((1.7..=2.3).contains(&slow), "slow rate {slow}");
                }
            }
            mins.push(
                used.iter().map(|p| p.lambda1.norm().powf(0.5)).fold(f64::INFINITY, f64::min),
            );
        }
        assert!(mins[1] > mins[0], "fast rates {mins:?}");
        assert!(mins[1] > 30.0);
    }
}
