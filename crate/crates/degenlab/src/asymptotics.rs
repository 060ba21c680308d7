//! Small-t sweeps: exponent rows along t -> 0, closed-form limit targets,
//! slope and extrapolation fits, and a mean-value harmonicity probe.
//!
//! The natural convergence variable is |t|^(1/2) (the w-coordinate scale),
//! so extrapolation is 2-point Richardson in that variable. Sweeps default to
//! real positive t; the harmonicity probe walks a complex circle.

use num_complex::Complex64;
use thiserror::Error;

use crate::family::FamilyParams;
use crate::lyapunov::{qr_exponents, LyapunovError};
use crate::stats::linear_fit;

#[derive(Debug, Error, PartialEq)]
pub enum AsymptoticsError {
    #[error("limit formula requires |H/G| ≠ |c|")]
    Exceptional,
    #[error("alpha fit requires at least 3 rows spanning 2 decades of |t|")]
    InsufficientSpan,
    #[error("harmonic probe circle touches t = 0")]
    CircleTouchesOrigin,
    #[error("harmonic probe requires |H/G| ≠ |c|")]
    ProbeExceptional,
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

/// Closed-form limits and the preliminary band for one family member.
#[derive(Clone, Copy, Debug)]
pub struct LimitTargets {
    /// Limit of L - (1/2) log |t|^-1.
    pub l_limit: f64,
    /// Limit of chi1 - (1/2) log |t|^-1.
    pub chi1_limit: f64,
    /// Limit of chi2.
    pub chi2_limit: f64,
    pub beta: f64,
    /// Band bounds for the shifted exponent sum at small |t|.
    pub lower_bound: f64,
    pub upper_bound: f64,
}

/// Evaluates the limit formulas; errors on the exceptional locus where the
/// max in the formula is ambiguous-free but the proof is void.
pub fn limit_targets(params: &FamilyParams, beta: f64) -> Result<LimitTargets, AsymptoticsError> {
    assert!(beta > 0.0 && beta < 0.5, "beta must lie in (0, 1/2), got {beta}");
    if !params.non_exceptional() {
        return Err(AsymptoticsError::Exceptional);
    }
    let m = params.ratio().max(params.base.c.norm());
    let g = params.lead_g().norm();
    let half_scale = 0.5 * (m.ln() - g.ln());
    let l_limit = 4.0f64.ln() + half_scale;
    Ok(LimitTargets {
        l_limit,
        chi1_limit: 2.0f64.ln() + half_scale,
        chi2_limit: 2.0f64.ln(),
        beta,
        lower_bound: (1.0 - beta).ln() + l_limit,
        upper_bound: (1.0 + beta).ln() + l_limit,
    })
}

/// Per-row sampling effort: `n_points` total recorded backward steps split
/// into orbits of `n_steps`.
#[derive(Clone, Copy, Debug)]
pub struct SampleBudget {
    pub n_points: usize,
    pub n_steps: usize,
}

impl Default for SampleBudget {
    fn default() -> Self {
        Self { n_points: 20_000, n_steps: 2_000 }
    }
}

impl SampleBudget {
    /// Orbit count implied by the totals; at least 2 so a spread exists.
    pub fn n_orbits(&self) -> usize {
        (self.n_points / self.n_steps).max(2)
    }
}

/// One sweep row: exponents at a single t with the log-shifted columns.
#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub t: Complex64,
    pub l: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub l_shift: f64,
    pub chi1_shift: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    pub stderr_l: f64,
    /// Wall-clock seconds spent on the row; never serialized.
    pub wall_time: f64,
}

/// A sweep slot: a finished row, or the failure that replaced it.
#[derive(Clone, Debug)]
pub enum RowOutcome {
    Row(SweepRow),
    Failed { t: Complex64, message: String },
}

impl RowOutcome {
    pub fn row(&self) -> Option<&SweepRow> {
        match self {
            RowOutcome::Row(r) => Some(r),
            RowOutcome::Failed { .. } => None,
        }
    }
}

/// Runs one exponent estimate per t, largest |t| first. A failing row is
/// recorded as a failure marker and the sweep continues. Row k derives its
/// seed as mix64(seed, k) over the sorted order.
pub fn sweep_t(
    template: &FamilyParams,
    t_values: &[Complex64],
    budget: SampleBudget,
    seed: u64,
) -> Vec<RowOutcome> {
    assert!(!t_values.is_empty(), "sweep needs at least one t");
    let mut ts = t_values.to_vec();
    ts.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    ts.iter()
        .enumerate()
        .map(|(k, &t)| {
            let started = std::time::Instant::now();
            let params = template.with_t(t);
            match qr_exponents(
                &params,
                crate::stats::mix64(seed, k as u64),
                budget.n_orbits(),
                budget.n_steps,
            ) {
                Ok(est) => {
                    let half_log = 0.5 * t.norm().recip().ln();
                    RowOutcome::Row(SweepRow {
                        t,
                        l: est.l,
                        chi1: est.chi1,
                        chi2: est.chi2,
                        l_shift: est.l - half_log,
                        chi1_shift: est.chi1 - half_log,
                        stderr1: est.stderr1,
                        stderr2: est.stderr2,
                        stderr_l: est.stderr1.hypot(est.stderr2),
                        wall_time: started.elapsed().as_secs_f64(),
                    })
                }
                Err(e) => RowOutcome::Failed { t, message: e.to_string() },
            }
        })
        .collect()
}

/// Least-squares slope of L against log |t|^-1. Demands at least 3 rows
/// spanning at least 2 decades of |t|.
pub fn alpha_fit(rows: &[SweepRow]) -> Result<f64, AsymptoticsError> {
    if rows.len() < 3 {
        return Err(AsymptoticsError::InsufficientSpan);
    }
    let norms: Vec<f64> = rows.iter().map(|r| r.t.norm()).collect();
    let hi = norms.iter().cloned().fold(f64::MIN, f64::max);
    let lo = norms.iter().cloned().fold(f64::MAX, f64::min);
    if !(lo > 0.0) || hi / lo < 100.0 {
        return Err(AsymptoticsError::InsufficientSpan);
    }
    let x: Vec<f64> = norms.iter().map(|n| n.recip().ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.l).collect();
    Ok(linear_fit(&x, &y).0)
}

/// 2-point Richardson extrapolation to t = 0 in the variable |t|^(1/2).
pub fn richardson_sqrt(t_coarse: f64, f_coarse: f64, t_fine: f64, f_fine: f64) -> f64 {
    assert!(t_coarse > t_fine && t_fine > 0.0, "need two distinct positive scales");
    let (sa, sb) = (t_coarse.sqrt(), t_fine.sqrt());
    (f_fine * sa - f_coarse * sb) / (sa - sb)
}

fn extrapolate(rows: &[&SweepRow], pick: impl Fn(&SweepRow) -> f64) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    // rows are sorted |t| descending; extrapolate from the two finest
    let fine = rows[rows.len() - 1];
    let coarse = rows[rows.len() - 2];
    Some(richardson_sqrt(coarse.t.norm(), pick(coarse), fine.t.norm(), pick(fine)))
}

/// CSV block for a sweep, failures as comment markers in place, plus a
/// summary block with limit targets, extrapolations, and the slope fit.
pub fn sweep_csv(template: &FamilyParams, outcomes: &[RowOutcome]) -> String {
    let mut out = String::from(
        "abs_t,t_re,t_im,L,chi1,chi2,L_shift,chi1_shift,stderr_chi1,stderr_chi2,stderr_L\n",
    );
    for o in outcomes {
        match o {
            RowOutcome::Row(r) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t.norm(),
                r.t.re,
                r.t.im,
                r.l,
                r.chi1,
                r.chi2,
                r.l_shift,
                r.chi1_shift,
                r.stderr1,
                r.stderr2,
                r.stderr_l
            )),
            RowOutcome::Failed { t, message } => {
                out.push_str(&format!("# failed t={},{}: {}\n", t.re, t.im, message));
            }
        }
    }
    let ok: Vec<&SweepRow> = outcomes.iter().filter_map(|o| o.row()).collect();
    if let Ok(tg) = limit_targets(template, 0.1) {
        out.push_str(&format!("# L_limit={}\n", tg.l_limit));
        out.push_str(&format!("# chi1_limit={}\n", tg.chi1_limit));
        out.push_str(&format!("# chi2_limit={}\n", tg.chi2_limit));
    }
    if let Some(v) = extrapolate(&ok, |r| r.l_shift) {
        out.push_str(&format!("# L_shift_extrapolated={v}\n"));
    }
    if let Some(v) = extrapolate(&ok, |r| r.chi1_shift) {
        out.push_str(&format!("# chi1_shift_extrapolated={v}\n"));
    }
    if let Some(v) = extrapolate(&ok, |r| r.chi2) {
        out.push_str(&format!("# chi2_extrapolated={v}\n"));
    }
    let owned: Vec<SweepRow> = ok.iter().map(|r| **r).collect();
    if let Ok(alpha) = alpha_fit(&owned) {
        out.push_str(&format!("# alpha_fit={alpha}\n"));
    }
    out
}

fn circle_points(t0: Complex64, radius: f64, n_circle: usize) -> Vec<Complex64> {
    (0..n_circle)
        .map(|k| t0 + Complex64::from_polar(radius, std::f64::consts::TAU * k as f64 / n_circle as f64))
        .collect()
}

/// Deviation of the center value from the circle average, with the combined
/// standard error of that difference. First entry is the center.
fn mean_value_deviation(values: &[(f64, f64)]) -> (f64, f64) {
    let (center, center_err) = values[0];
    let ring = &values[1..];
    let n = ring.len() as f64;
    let mean = ring.iter().map(|v| v.0).sum::<f64>() / n;
    let ring_var = ring.iter().map(|v| v.1 * v.1).sum::<f64>() / (n * n);
    ((center - mean).abs(), (center_err * center_err + ring_var).sqrt())
}

/// Mean-value test of the shifted exponent sum L - (1/2) log |t|^-1 on a
/// circle around t0.
///
/// All evaluations share the same master seed (common random numbers), so
/// the sampling noise largely cancels out of the deviation. Returns
/// (deviation, combined stderr).
pub fn harmonic_probe_t(
    template: &FamilyParams,
    t0: Complex64,
    radius: f64,
    n_circle: usize,
    budget: SampleBudget,
    seed: u64,
) -> Result<(f64, f64), AsymptoticsError> {
    assert!(radius > 0.0, "probe radius must be positive");
    assert!(n_circle >= 4, "need at least 4 circle points");
    if radius >= t0.norm() {
        return Err(AsymptoticsError::CircleTouchesOrigin);
    }
    if !template.non_exceptional() {
        return Err(AsymptoticsError::ProbeExceptional);
    }
    let mut values = Vec::with_capacity(n_circle + 1);
    for t in std::iter::once(t0).chain(circle_points(t0, radius, n_circle)) {
        let params = template.with_t(t);
        let est = qr_exponents(&params, seed, budget.n_orbits(), budget.n_steps)?;
        let shift = est.l - 0.5 * t.norm().recip().ln();
        values.push((shift, est.stderr1.hypot(est.stderr2)));
    }
    Ok(mean_value_deviation(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::HenonBase;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn base_half() -> HenonBase {
        HenonBase::new(c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)).unwrap()
    }

    fn instance(t: f64, h: f64) -> FamilyParams {
        FamilyParams::z2_coupled(base_half(), c(t, 0.0), c(1.0, 0.0), c(h, 0.0)).unwrap()
    }

    fn small_budget() -> SampleBudget {
        SampleBudget { n_points: 4000, n_steps: 500 }
    }

    #[test]
    fn limit_targets_evaluate_the_closed_forms() {
        let tg = limit_targets(&instance(1e-3, 0.0), 0.1).unwrap();
        assert!((tg.l_limit - (2.0 * 2.0f64.sqrt()).ln()).abs() < 1e-15);
        assert!((tg.chi1_limit - 2.0f64.sqrt().ln()).abs() < 1e-15);
        assert!((tg.chi2_limit - 2.0f64.ln()).abs() < 1e-15);
        assert!((tg.l_limit - (tg.chi1_limit + tg.chi2_limit)).abs() < 1e-15);
        assert!((tg.lower_bound - (0.9 * 4.0 * 0.5f64.sqrt()).ln()).abs() < 1e-15);
        assert!((tg.upper_bound - (1.1 * 4.0 * 0.5f64.sqrt()).ln()).abs() < 1e-15);
        assert!((tg.lower_bound - 0.93444).abs() < 1e-3);
        assert!((tg.upper_bound - 1.13504).abs() < 1e-3);

        let th = limit_targets(&instance(1e-3, 2.0), 0.1).unwrap();
        assert!((th.l_limit - (4.0 * 2.0f64.sqrt()).ln()).abs() < 1e-15);

        let ex = limit_targets(&instance(1e-3, 0.5), 0.1).unwrap_err();
        assert_eq!(ex, AsymptoticsError::Exceptional);
        assert_eq!(ex.to_string(), "limit formula requires |H/G| ≠ |c|");
    }

    #[test]
    fn richardson_recovers_sqrt_model_exactly() {
        let f = |t: f64| 0.8 - 1.7 * t.sqrt();
        let f0 = richardson_sqrt(1e-3, f(1e-3), 1e-4, f(1e-4));
        assert!((f0 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sweep_reference_rows_band_extrapolation_and_slope() {
        let template = instance(1.0, 0.0);
        let ts: Vec<Complex64> = [1e-2, 1e-3, 1e-4, 1e-5].iter().map(|&t| c(t, 0.0)).collect();
        let outcomes = sweep_t(&template, &ts, small_budget(), 40);
        let rows: Vec<&SweepRow> = outcomes.iter().filter_map(|o| o.row()).collect();
        assert_eq!(rows.len(), 4);
        for pair in rows.windows(2) {
            assert!(pair[0].t.norm() > pair[1].t.norm());
        }
        let tg = limit_targets(&template, 0.1).unwrap();
        for r in &rows {
            assert_eq!(r.l, r.chi1 + r.chi2);
            if r.t.norm() <= 1e-3 {
                assert!(
                    r.l_shift >= tg.lower_bound - 3.0 * r.stderr_l
                        && r.l_shift <= tg.upper_bound + 3.0 * r.stderr_l,
                    "shift {} outside band at |t| = {}",
                    r.l_shift,
                    r.t.norm()
                );
            }
        }
        assert!((rows[3].chi2 - 2.0f64.ln()).abs() < 0.05);
        assert!((rows[3].chi1_shift - tg.chi1_limit).abs() < 0.05);

        // the shifted sum approaches its limit monotonically within noise
        for pair in rows.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let slack = 3.0 * (a.stderr_l + b.stderr_l);
            assert!(
                (b.l_shift - tg.l_limit).abs() <= (a.l_shift - tg.l_limit).abs() + slack,
                "approach not monotone: {} then {}",
                a.l_shift,
                b.l_shift
            );
        }

        let extrap = richardson_sqrt(
            rows[2].t.norm(),
            rows[2].l_shift,
            rows[3].t.norm(),
            rows[3].l_shift,
        );
        assert!((extrap - tg.l_limit).abs() < 0.05, "extrapolated {extrap}");

        let owned: Vec<SweepRow> = rows.iter().map(|r| **r).collect();
        let alpha = alpha_fit(&owned).unwrap();
        assert!((0.48..=0.52).contains(&alpha), "alpha {alpha}");

        let csv = sweep_csv(&template, &outcomes);
        assert!(csv.starts_with("abs_t,t_re,t_im,L,"));
        assert!(csv.contains("\n0.01,0.01,0,"));
        assert!(csv.contains("# L_limit="));
        assert!(csv.contains("# L_shift_extrapolated="));
        assert!(csv.contains("# alpha_fit="));
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let template = instance(1.0, 0.0);
        let outcomes = sweep_t(&template, &[c(1e-2, 0.0), c(0.0, 0.0)], small_budget(), 1);
        assert_eq!(outcomes.len(), 2);
        assert!(outcomes[0].row().is_some());
        match &outcomes[1] {
            RowOutcome::Failed { t, message } => {
                assert_eq!(t.norm(), 0.0);
                assert_eq!(message, "Henon map is not regular");
            }
            RowOutcome::Row(_) => panic!("t = 0 must fail"),
        }
        let csv = sweep_csv(&template, &outcomes);
        assert!(csv.contains("# failed t=0,0: Henon map is not regular"));
    }

    #[test]
    fn alpha_fit_contracts() {
        let mk = |t: f64, l: f64| SweepRow {
            t: c(t, 0.0),
            l,
            chi1: l - 0.5,
            chi2: 0.5,
            l_shift: 0.0,
            chi1_shift: 0.0,
            stderr1: 0.0,
            stderr2: 0.0,
            stderr_l: 0.0,
            wall_time: 0.0,
        };
        let exact: Vec<SweepRow> =
            [1e-2, 1e-3, 1e-4, 1e-5].iter().map(|&t| mk(t, 0.7 + 0.5 * (1.0 / t).ln())).collect();
        assert!((alpha_fit(&exact).unwrap() - 0.5).abs() < 1e-12);

        assert_eq!(alpha_fit(&exact[..2]).unwrap_err(), AsymptoticsError::InsufficientSpan);
        let narrow: Vec<SweepRow> =
            [1e-3, 2e-3, 4e-3].iter().map(|&t| mk(t, 0.5 * (1.0 / t).ln())).collect();
        assert_eq!(alpha_fit(&narrow).unwrap_err(), AsymptoticsError::InsufficientSpan);
    }

    #[test]
    fn slope_holds_on_the_exceptional_locus() {
        let template = instance(1.0, 0.5);
        assert!(!template.non_exceptional());
        let ts: Vec<Complex64> = [1e-2, 1e-3, 1e-4].iter().map(|&t| c(t, 0.0)).collect();
        let outcomes = sweep_t(&template, &ts, small_budget(), 8);
        let rows: Vec<SweepRow> =
            outcomes.iter().filter_map(|o| o.row()).copied().collect();
        assert_eq!(rows.len(), 3);
        let alpha = alpha_fit(&rows).unwrap();
        assert!((0.48..=0.52).contains(&alpha), "alpha {alpha}");
        // no limit lines for an exceptional instance, slope still reported
        let csv = sweep_csv(&template, &outcomes);
        assert!(!csv.contains("# L_limit="));
        assert!(csv.contains("# alpha_fit="));
    }

    #[test]
    fn synthetic_harmonic_data_has_zero_mean_value_deviation() {
        // harmonic away from its singularity at t = 5: real part of an
        // analytic polynomial plus a log-modulus term
        let u = |t: Complex64| (3.0 * t * t - 2.0 * t + c(1.0, 0.0)).re + (t - 5.0).norm().ln();
        let t0 = c(1e-3, 0.0);
        let mut values = vec![(u(t0), 0.0)];
        for t in circle_points(t0, 2e-4, 16) {
            values.push((u(t), 0.0));
        }
        let (dev, err) = mean_value_deviation(&values);
        assert!(dev < 1e-10, "deviation {dev}");
        assert_eq!(err, 0.0);
    }

    #[test]
    fn probe_confirms_mean_value_property_on_reference() {
        let template = instance(1.0, 0.0);
        let budget = SampleBudget { n_points: 2000, n_steps: 500 };
        let (dev, err) =
            harmonic_probe_t(&template, c(1e-3, 0.0), 2e-4, 16, budget, 77).unwrap();
        assert!(dev < 3.0 * err, "deviation {dev} vs stderr {err}");
    }

    #[test]
    fn probe_rejects_bad_discs() {
        let template = instance(1.0, 0.0);
        let b = small_budget();
        assert_eq!(
            harmonic_probe_t(&template, c(1e-3, 0.0), 2e-3, 16, b, 1).unwrap_err(),
            AsymptoticsError::CircleTouchesOrigin
        );
        let ex = instance(1.0, 0.5);
        assert_eq!(
            harmonic_probe_t(&ex, c(1e-3, 0.0), 2e-4, 16, b, 1).unwrap_err(),
            AsymptoticsError::ProbeExceptional
        );
    }
}
