//! Sampling of the balanced backward-iteration measure and integrals over it.
//!
//! Backward random iteration: starting inside the localization box, repeatedly
//! draw one preimage, weighted by multiplicity. After a burn-in the points
//! distribute like the measure of maximal entropy, which lives on the Julia
//! set confined to the box V_t. Recording happens in independent strands of
//! [`STRAND_LEN`] points to control serial correlation; every strand derives
//! its own RNG stream from the master seed, so clouds are bit-identical no
//! matter how strands are scheduled over workers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::family::{FamilyError, FamilyParams, PointC2};
use crate::preimage;
use crate::stats::{jackknife, mix64, Fnv64};

/// Backward steps discarded before recording starts, unless overridden.
pub const DEFAULT_BURN_IN: u32 = 50;

/// Recorded points per independent backward strand.
pub const STRAND_LEN: usize = 64;

/// Fraction of backward steps allowed to hit a degenerate fiber before the
/// sampling run is declared unreliable.
const DEGENERATE_BUDGET: f64 = 0.01;

/// Fraction of samples allowed to produce a non-finite integrand.
const EXCLUSION_BUDGET: f64 = 0.001;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("family member is not a regular endomorphism")]
    NotRegular,
    #[error("measure sampling unreliable")]
    SamplingUnreliable,
    #[error("integrand non-finite on {excluded} of {total} samples")]
    ExclusionBudget { excluded: usize, total: usize },
    #[error("sample cloud is empty")]
    EmptyCloud,
}

/// Localization box: V_t is a z-annulus times a w-annulus; the companion U_t
/// keeps the z-annulus but fills the whole w-disc. Preimages of U_t land
/// inside V_t, which is what confines backward orbits.
#[derive(Clone, Copy, Debug)]
pub struct BoxVt {
    pub beta: f64,
    pub z_inner: f64,
    pub z_outer: f64,
    pub w_inner: f64,
    pub w_outer: f64,
}

/// The localization box of one family member.
///
/// Demands t != 0 and beta in (0, 1/2); user input is validated upstream.
pub fn box_vt(params: &FamilyParams, beta: f64) -> BoxVt {
    assert!(beta > 0.0 && beta < 0.5, "beta must lie in (0, 1/2), got {beta}");
    let gt = (params.lead_g() * params.t).norm();
    assert!(gt > 0.0, "localization box requires t != 0");
    let ratio = params.ratio();
    let c = params.base.c.norm();
    BoxVt {
        beta,
        z_inner: (1.0 - beta) / gt,
        z_outer: (1.0 + beta) / gt,
        w_inner: (ratio - c).abs().sqrt() * (1.0 - 2.0 * beta) / gt.sqrt(),
        w_outer: (ratio + c).sqrt() * (1.0 + 2.0 * beta) / gt.sqrt(),
    }
}

impl BoxVt {
    /// Membership in V_t: both moduli inside their annuli.
    pub fn contains(&self, p: &PointC2) -> bool {
        let (zn, wn) = (p.z.norm(), p.w.norm());
        self.z_inner <= zn && zn <= self.z_outer && self.w_inner <= wn && wn <= self.w_outer
    }

    /// Membership in the companion U_t: same z-annulus, full w-disc.
    pub fn contains_u(&self, p: &PointC2) -> bool {
        let (zn, wn) = (p.z.norm(), p.w.norm());
        self.z_inner <= zn && zn <= self.z_outer && wn <= self.w_outer
    }

    /// Deterministic interior point: z on the central circle of its annulus,
    /// w at the geometric mean of the w radii.
    pub fn center(&self) -> PointC2 {
        PointC2::new(
            Complex64::new(0.5 * (self.z_inner + self.z_outer), 0.0),
            Complex64::new((self.w_inner * self.w_outer).sqrt(), 0.0),
        )
    }
}

/// Backward-iteration sample of the balanced measure.
#[derive(Clone, Debug)]
pub struct SampleCloud {
    /// Recorded points, in strand order then step order.
    pub points: Vec<PointC2>,
    pub params: FamilyParams,
    pub seed: u64,
    pub burn_in: u32,
    pub n_points: usize,
    /// FNV-1a digest of the branch-choice stream, for determinism audits.
    pub branch_log_hash: u64,
}

impl SampleCloud {
    /// CSV block with header `z_re,z_im,w_re,w_im`, one point per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z_re,z_im,w_re,w_im\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.z.re, p.z.im, p.w.re, p.w.im));
        }
        out
    }

    /// Metadata sidecar content: family parameters plus sampling settings.
    pub fn meta_block(&self) -> String {
        format!(
            "{}seed={}\nburn_in={}\nn_points={}\n",
            self.params.to_kv(),
            self.seed,
            self.burn_in,
            self.n_points
        )
    }
}

/// Draws `n_points` samples of the balanced measure by backward random
/// iteration from the center of V_t(0.25).
///
/// Deterministic for fixed (params, n_points, burn_in, seed): strand i uses
/// the RNG stream seeded with mix64(seed, i) and results merge in strand
/// order. Degenerate fibers restart the affected strand; more than 1% of
/// steps degenerating is an error.
pub fn sample_mu(
    params: &FamilyParams,
    n_points: usize,
    burn_in: u32,
    seed: u64,
) -> Result<SampleCloud, MeasureError> {
    if n_points == 0 {
        return Err(MeasureError::EmptyCloud);
    }
    if !params.is_regular()? {
        return Err(MeasureError::NotRegular);
    }
    let start = box_vt(params, 0.25).center();
    let n_strands = n_points.div_ceil(STRAND_LEN);
    let outs: Vec<Result<Strand, MeasureError>> = (0..n_strands)
        .into_par_iter()
        .map(|idx| {
            let record = STRAND_LEN.min(n_points - idx * STRAND_LEN);
            run_strand(params, start, burn_in, record, mix64(seed, idx as u64))
        })
        .collect();

    let mut points = Vec::with_capacity(n_points);
    let mut hash = Fnv64::new();
    let mut degenerate = 0usize;
    let mut steps = 0usize;
    for out in outs {
        let s = out?;
        points.extend_from_slice(&s.points);
        hash.write_u64(s.digest);
        degenerate += s.degenerate;
        steps += s.steps;
    }
    if degenerate as f64 > DEGENERATE_BUDGET * (steps + degenerate) as f64 {
        return Err(MeasureError::SamplingUnreliable);
    }
    debug_assert_eq!(points.len(), n_points);
    Ok(SampleCloud {
        points,
        params: *params,
        seed,
        burn_in,
        n_points,
        branch_log_hash: hash.finish(),
    })
}

/// One consecutive backward orbit of `n_record` points after the burn-in.
///
/// Successive entries are preimages of their predecessors, so reversing the
/// vector yields a forward orbit segment on (an approximation of) the Julia
/// set. Deterministic in (params, n_record, burn_in, seed).
pub fn backward_orbit(
    params: &FamilyParams,
    n_record: usize,
    burn_in: u32,
    seed: u64,
) -> Result<Vec<PointC2>, MeasureError> {
    if n_record == 0 {
        return Err(MeasureError::EmptyCloud);
    }
    if !params.is_regular()? {
        return Err(MeasureError::NotRegular);
    }
    let start = box_vt(params, 0.25).center();
    let s = run_strand(params, start, burn_in, n_record, seed)?;
    if s.degenerate as f64 > DEGENERATE_BUDGET * (s.steps + s.degenerate) as f64 {
        return Err(MeasureError::SamplingUnreliable);
    }
    Ok(s.points)
}

struct Strand {
    points: Vec<PointC2>,
    digest: u64,
    degenerate: usize,
    steps: usize,
}

fn run_strand(
    params: &FamilyParams,
    start: PointC2,
    burn_in: u32,
    record: usize,
    seed: u64,
) -> Result<Strand, MeasureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hash = Fnv64::new();
    let mut points = Vec::with_capacity(record);
    let mut cur = start;
    let mut burned = 0u32;
    let mut degenerate = 0usize;
    let mut steps = 0usize;
    // a degenerate fiber restarts the chain; a run of them far beyond any
    // plausible transient aborts the strand outright
    let cap = 8 * (burn_in as usize + record) + 64;
    while points.len() < record {
        let set = match preimage::preimages(params, cur) {
            Ok(set) if set.total_multiplicity() > 0 => set,
            _ => {
                degenerate += 1;
                log::warn!("degenerate fiber at {cur:?}; restarting strand");
                cur = start;
                burned = 0;
                if degenerate > cap {
                    return Err(MeasureError::SamplingUnreliable);
                }
                continue;
            }
        };
        let total = set.total_multiplicity();
        let draw = rng.gen_range(0..total);
        let mut acc = 0u32;
        let mut chosen = 0usize;
        for (i, s) in set.solutions.iter().enumerate() {
            acc += s.multiplicity;
            if draw < acc {
                chosen = i;
                break;
            }
        }
        hash.write_u64(chosen as u64);
        cur = set.solutions[chosen].point;
        steps += 1;
        if burned < burn_in {
            burned += 1;
        } else {
            points.push(cur);
        }
    }
    Ok(Strand { points, digest: hash.finish(), degenerate, steps })
}

/// Integrands of the measured integrals, all logarithmic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogIntegrand {
    /// log |det Df_t|, through the closed-form determinant.
    AbsDet,
    /// log |w|.
    AbsW,
    /// log |z|.
    AbsZ,
    /// log |c + t H z|, H the z^2 coefficient of the second coupling.
    AbsCPlusTHz,
}

/// Sample mean of the integrand over the cloud, with a 32-block jackknife
/// standard error.
///
/// Points where the integrand is not finite (det = 0 and friends) are
/// excluded; more than 0.1% exclusions is an error.
pub fn integrate_log(cloud: &SampleCloud, kind: LogIntegrand) -> Result<(f64, f64), MeasureError> {
    if cloud.points.is_empty() {
        return Err(MeasureError::EmptyCloud);
    }
    let f = &cloud.params;
    let mut vals = Vec::with_capacity(cloud.points.len());
    let mut excluded = 0usize;
    for p in &cloud.points {
        let v = match kind {
            LogIntegrand::AbsDet => f.det_closed_form(*p).norm().ln(),
            LogIntegrand::AbsW => p.w.norm().ln(),
            LogIntegrand::AbsZ => p.z.norm().ln(),
            LogIntegrand::AbsCPlusTHz => (f.base.c + f.t * f.lead_h() * p.z).norm().ln(),
        };
        if v.is_finite() {
            vals.push(v);
        } else {
            excluded += 1;
        }
    }
    let total = cloud.points.len();
    if excluded as f64 > EXCLUSION_BUDGET * total as f64 || vals.is_empty() {
        return Err(MeasureError::ExclusionBudget { excluded, total });
    }
    Ok(jackknife(&vals, 32))
}

/// Angles arg(Z) / 2pi in [0, 1) of the rescaled coordinate Z = G t z.
pub fn angle_distribution(cloud: &SampleCloud) -> Vec<f64> {
    let gt = cloud.params.lead_g() * cloud.params.t;
    cloud
        .points
        .iter()
        .map(|p| {
            let mut a = (gt * p.z).arg() / std::f64::consts::TAU;
            if a < 0.0 {
                a += 1.0;
            }
            // fold the rounding edge a = 1.0 back onto 0
            if a >= 1.0 {
                a = 0.0;
            }
            a
        })
        .collect()
}

/// Fraction of cloud points inside the box; 1 for an empty cloud.
pub fn containment_fraction(cloud: &SampleCloud, bx: &BoxVt) -> f64 {
    if cloud.points.is_empty() {
        return 1.0;
    }
    let inside = cloud.points.iter().filter(|p| bx.contains(p)).count();
    inside as f64 / cloud.points.len() as f64
}
