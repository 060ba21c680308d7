//! Roots of dense complex polynomials up to degree 4.
//!
//! Pipeline: trim numerically-zero leading coefficients, normalize to monic,
//! take eigenvalues of the balanced companion matrix by explicit single-shift
//! complex QR with deflation, then polish each root with Newton steps on the
//! polynomial itself. Degrees 1 and 2 use closed forms.
//!
//! The fiber solver feeds quartics whose coefficients span ~20 orders of
//! magnitude at small family parameters; balancing is what keeps the
//! eigenvalue extraction honest there.

use arrayvec::ArrayVec;
use num_complex::Complex64;

/// Highest degree the solver accepts.
pub const MAX_DEGREE: usize = 4;

/// A leading coefficient is trimmed when the Cauchy root bound it implies,
/// `max_k<d |c_k / c_d|`, exceeds this ratio: the corresponding root has left
/// for infinity as far as any downstream consumer is concerned. The bound is
/// deliberately enormous because genuine fiber quartics at small family
/// parameters carry leading coefficients ~|t|^2 against constant terms
/// ~|t|^-2 (ratio 1e32 at |t| = 1e-8) and those roots are wanted.
pub const LEAD_TRIM_RATIO: f64 = 1e60;

/// Roots of a polynomial plus the effective degree that was actually solved.
#[derive(Clone, Debug)]
pub struct RootSet {
    pub roots: ArrayVec<Complex64, MAX_DEGREE>,
    /// Degree after trimming; `MAX_DEGREE - effective_degree` roots escaped
    /// to infinity as far as the caller is concerned.
    pub effective_degree: usize,
}

/// All roots of `sum_k coeffs[k] z^k` (ascending powers, degree <= 4).
///
/// An identically-zero polynomial yields an empty root set of degree 0, as
/// does a nonzero constant; callers distinguish the two by inspecting the
/// coefficients.
pub fn roots(coeffs: &[Complex64; MAX_DEGREE + 1]) -> RootSet {
    let mut deg = MAX_DEGREE;
    while deg > 0 {
        let lead = coeffs[deg].norm();
        let rest = coeffs[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
        if lead > 0.0 && rest <= LEAD_TRIM_RATIO * lead {
            break;
        }
        deg -= 1;
    }
    if deg == 0 || coeffs[deg].norm() == 0.0 {
        deg = 0;
    }
    let mut out = RootSet { roots: ArrayVec::new(), effective_degree: deg };
    if deg == 0 {
        return out;
    }
    // monic trimmed copy, ascending: m[k] = coeffs[k] / coeffs[deg]
    let lead = coeffs[deg];
    let mut monic = [Complex64::new(0.0, 0.0); MAX_DEGREE + 1];
    for k in 0..deg {
        monic[k] = coeffs[k] / lead;
    }
    monic[deg] = Complex64::new(1.0, 0.0);

    match deg {
        1 => out.roots.push(-monic[0]),
        2 => {
            let (r1, r2) = quadratic_monic(monic[1], monic[0]);
            out.roots.push(r1);
            out.roots.push(r2);
        }
        _ => {
            let eigs = companion_eigenvalues(&monic[..=deg]);
            for e in eigs {
                out.roots.push(e);
            }
        }
    }
    for r in out.roots.iter_mut() {
        *r = newton_polish(&monic[..=deg], *r);
    }
    out
}

/// Roots of monic `z^2 + b z + c`, cancellation-safe: the larger root comes
/// from the stable sign choice, the smaller from Vieta.
fn quadratic_monic(b: Complex64, c: Complex64) -> (Complex64, Complex64) {
    let disc = (b * b - 4.0 * c).sqrt();
    // pick the sign that avoids cancellation in b +- disc
    let q = if (b + disc).norm() >= (b - disc).norm() { -(b + disc) / 2.0 } else { -(b - disc) / 2.0 };
    if q.norm() == 0.0 {
        (Complex64::new(0.0, 0.0), -b)
    } else {
        (q, c / q)
    }
}

/// Horner evaluation of `p` (ascending monic slice) and its derivative.
fn eval_with_derivative(p: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut d = Complex64::new(0.0, 0.0);
    for &c in p.iter().rev() {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// Up to two Newton steps; each is accepted only if it reduces |p|.
fn newton_polish(p: &[Complex64], mut z: Complex64) -> Complex64 {
    let (mut v, mut d) = eval_with_derivative(p, z);
    for _ in 0..2 {
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - v / d;
        if !(cand.re.is_finite() && cand.im.is_finite()) {
            break;
        }
        let (cv, cd) = eval_with_derivative(p, cand);
        if cv.norm() >= v.norm() {
            break;
        }
        z = cand;
        v = cv;
        d = cd;
    }
    z
}

const N: usize = MAX_DEGREE;
type Mat = [[Complex64; N]; N];

/// Eigenvalues of the companion matrix of a monic polynomial (ascending
/// coefficients, degree 3 or 4 here), via balancing plus explicit
/// single-shift complex QR with deflation.
fn companion_eigenvalues(monic: &[Complex64]) -> ArrayVec<Complex64, MAX_DEGREE> {
    let d = monic.len() - 1;
    debug_assert!((3..=MAX_DEGREE).contains(&d));
    let zero = Complex64::new(0.0, 0.0);
    let mut m: Mat = [[zero; N]; N];
    for i in 0..d {
        m[i][d - 1] = -monic[i];
        if i + 1 < d {
            m[i + 1][i] = Complex64::new(1.0, 0.0);
        }
    }
    balance(&mut m, d);
    qr_eigenvalues(m, d)
}

/// Parlett-Reinsch balancing restricted to powers of two, so eigenvalues are
/// preserved exactly in floating point.
fn balance(m: &mut Mat, d: usize) {
    for _pass in 0..32 {
        let mut converged = true;
        for i in 0..d {
            let mut r = 0.0f64;
            let mut c = 0.0f64;
            for j in 0..d {
                if j != i {
                    r += m[i][j].norm();
                    c += m[j][i].norm();
                }
            }
            if r == 0.0 || c == 0.0 {
                continue;
            }
            let mut f = 1.0f64;
            let (mut rr, mut cc) = (r, c);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * (c + r) {
                converged = false;
                for j in 0..d {
                    m[i][j] /= f;
                    m[j][i] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
}

/// Complex Givens pair (g1, g2) with unitary [[conj g1, conj g2], [-g2, g1]]
/// sending (x, y) to (r, 0).
fn givens(x: Complex64, y: Complex64) -> (Complex64, Complex64) {
    let n = (x.norm_sqr() + y.norm_sqr()).sqrt();
    if n == 0.0 {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else {
        (x / n, y / n)
    }
}

fn qr_eigenvalues(mut h: Mat, d: usize) -> ArrayVec<Complex64, MAX_DEGREE> {
    let mut eigs: ArrayVec<Complex64, MAX_DEGREE> = ArrayVec::new();
    let mut hi = d - 1;
    let mut iters_here = 0usize;
    let mut total = 0usize;
    const MAX_TOTAL: usize = 400;
    loop {
        // deflate negligible subdiagonals
        for k in 1..=hi {
            let small = f64::EPSILON * (h[k - 1][k - 1].norm() + h[k][k].norm() + 1e-300);
            if h[k][k - 1].norm() <= small {
                h[k][k - 1] = Complex64::new(0.0, 0.0);
            }
        }
        if hi == 0 || h[hi][hi - 1].norm() == 0.0 {
            eigs.push(h[hi][hi]);
            if hi == 0 {
                break;
            }
            hi -= 1;
            iters_here = 0;
            continue;
        }
        // active block [lo..=hi]
        let mut lo = hi;
        while lo > 0 && h[lo][lo - 1].norm() != 0.0 {
            lo -= 1;
        }
        if hi - lo == 1 && iters_here == 0 {
            // 2x2 block: closed form is both faster and exact
            let (a, b, c, dd) = (h[lo][lo], h[lo][hi], h[hi][lo], h[hi][hi]);
            let tr = a + dd;
            let disc = ((a - dd) * (a - dd) + 4.0 * b * c).sqrt();
            eigs.push((tr + disc) / 2.0);
            eigs.push((tr - disc) / 2.0);
            if lo == 0 {
                break;
            }
            hi = lo - 1;
            iters_here = 0;
            continue;
        }

        total += 1;
        iters_here += 1;
        if total > MAX_TOTAL {
            // surrender: report the diagonal; downstream residual checks and
            // Newton polish decide what survives
            for k in (lo..=hi).rev() {
                eigs.push(h[k][k]);
            }
            if lo == 0 {
                break;
            }
            hi = lo - 1;
            iters_here = 0;
            continue;
        }

        // Wilkinson shift from the trailing 2x2 of the active block, with an
        // exceptional kick every 12 stalls
        let (a, b, c, dd) = (h[hi - 1][hi - 1], h[hi - 1][hi], h[hi][hi - 1], h[hi][hi]);
        let mut mu = {
            let tr = a + dd;
            let disc = ((a - dd) * (a - dd) + 4.0 * b * c).sqrt();
            let l1 = (tr + disc) / 2.0;
            let l2 = (tr - disc) / 2.0;
            if (l1 - dd).norm() <= (l2 - dd).norm() {
                l1
            } else {
                l2
            }
        };
        if iters_here % 12 == 0 {
            mu += Complex64::new(1.5 * h[hi][hi - 1].norm(), 0.5 * h[hi][hi - 1].norm());
        }

        for k in lo..=hi {
            h[k][k] -= mu;
        }
        // QR by Givens on the subdiagonal of the active block, then RQ
        let mut rot: ArrayVec<(Complex64, Complex64), MAX_DEGREE> = ArrayVec::new();
        for k in lo..hi {
            let (g1, g2) = givens(h[k][k], h[k + 1][k]);
            rot.push((g1, g2));
            for j in lo..d {
                let x = h[k][j];
                let y = h[k + 1][j];
                h[k][j] = g1.conj() * x + g2.conj() * y;
                h[k + 1][j] = -g2 * x + g1 * y;
            }
        }
        for (k, (g1, g2)) in (lo..hi).zip(rot.iter()) {
            for row in h.iter_mut().take((k + 2).min(hi + 1)).skip(0) {
                let x = row[k];
                let y = row[k + 1];
                row[k] = x * g1 + y * g2;
                row[k + 1] = -x * g2.conj() + y * g1.conj();
            }
        }
        for k in lo..=hi {
            h[k][k] += mu;
        }
    }
    eigs
}
