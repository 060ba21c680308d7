//! The degenerating family itself.
//!
//! A member is built from a base map `(z, w) -> (w, c z + p(w))` with
//! `p(w) = w^2 + c1 w + c2` monic quadratic and `c != 0`, perturbed by two
//! quadratic couplings `g`, `h` scaled by the family parameter `t`:
//!
//! ```text
//! f_t(z, w) = (w + t g(z, w),  c z + p(w) + t h(z, w))
//! ```
//!
//! `g` must carry a nonzero `z^2` coefficient (called `G` below, `H` is the
//! `z^2` coefficient of `h`); at `t = 0` the perturbation vanishes and the
//! map drops to the base map, which is invertible and in particular not a
//! regular (finite) endomorphism of C^2. Everything quantitative downstream
//! lives in the regime `t != 0` small.

use num_complex::Complex64;
use thiserror::Error;

/// Relative band inside which |H/G| and |c| are considered equal, i.e. the
/// parameter counts as exceptional.
pub const EXCEPTIONAL_BAND: f64 = 1e-9;

/// Normalized-resultant threshold below which the leading forms are declared
/// to share a common root (map not regular).
pub const REGULARITY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FamilyError {
    #[error("orbit escaped representable range")]
    Overflow,
    #[error("Henon map is not regular")]
    HenonNotRegular,
    #[error("rescaled chart requires t != 0")]
    RescaleAtZero,
    #[error("base map requires c != 0")]
    ZeroC,
    #[error("coupling g requires a nonzero z^2 coefficient")]
    ZeroLeadG,
    #[error("family parameters must be finite")]
    NonFinite,
    #[error("missing key: {0}")]
    MissingKey(String),
    #[error("malformed line {0}: {1}")]
    Malformed(usize, String),
}

/// A point of C^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointC2 {
    pub z: Complex64,
    pub w: Complex64,
}

impl PointC2 {
    pub fn new(z: Complex64, w: Complex64) -> Self {
        Self { z, w }
    }

    pub fn is_finite(&self) -> bool {
        self.z.re.is_finite() && self.z.im.is_finite() && self.w.re.is_finite() && self.w.im.is_finite()
    }

    /// Euclidean norm of (z, w) as a vector in R^4.
    pub fn norm(&self) -> f64 {
        (self.z.norm_sqr() + self.w.norm_sqr()).sqrt()
    }

    /// Componentwise distance, Euclidean over both coordinates.
    pub fn dist(&self, other: &PointC2) -> f64 {
        ((self.z - other.z).norm_sqr() + (self.w - other.w).norm_sqr()).sqrt()
    }

    /// Lexicographic order on (re z, im z, re w, im w); total on finite points.
    pub fn lex_cmp(&self, other: &PointC2) -> std::cmp::Ordering {
        let key = |p: &PointC2| [p.z.re, p.z.im, p.w.re, p.w.im];
        key(self)
            .iter()
            .zip(key(other).iter())
            .map(|(a, b)| a.partial_cmp(b).expect("non-finite point in lex_cmp"))
            .find(|o| *o != std::cmp::Ordering::Equal)
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Dense quadratic polynomial in two complex variables,
/// `q(z, w) = a20 z^2 + a11 z w + a02 w^2 + a10 z + a01 w + a00`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct QuadPoly2 {
    pub a20: Complex64,
    pub a11: Complex64,
    pub a02: Complex64,
    pub a10: Complex64,
    pub a01: Complex64,
    pub a00: Complex64,
}

impl QuadPoly2 {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `k * z^2`.
    pub fn z2(k: Complex64) -> Self {
        Self { a20: k, ..Self::default() }
    }

    pub fn eval(&self, z: Complex64, w: Complex64) -> Complex64 {
        (self.a20 * z + self.a11 * w + self.a10) * z + (self.a02 * w + self.a01) * w + self.a00
    }

    /// Partial derivative in z at (z, w).
    pub fn dz(&self, z: Complex64, w: Complex64) -> Complex64 {
        2.0 * self.a20 * z + self.a11 * w + self.a10
    }

    /// Partial derivative in w at (z, w).
    pub fn dw(&self, z: Complex64, w: Complex64) -> Complex64 {
        self.a11 * z + 2.0 * self.a02 * w + self.a01
    }

    /// The polynomial with its z^2 term removed.
    pub fn without_z2(&self) -> Self {
        Self { a20: Complex64::new(0.0, 0.0), ..*self }
    }

    /// Coefficients (z^2, zw, w^2) of the degree-2 homogeneous part.
    pub fn homogeneous2(&self) -> [Complex64; 3] {
        [self.a20, self.a11, self.a02]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    fn coeffs(&self) -> [Complex64; 6] {
        [self.a20, self.a11, self.a02, self.a10, self.a01, self.a00]
    }
}

/// The invertible base map `(z, w) -> (w, c z + p(w))`, `p(w) = w^2 + c1 w + c2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HenonBase {
    pub c: Complex64,
    pub c1: Complex64,
    pub c2: Complex64,
}

impl HenonBase {
    pub fn new(c: Complex64, c1: Complex64, c2: Complex64) -> Result<Self, FamilyError> {
        if c.norm() == 0.0 {
            return Err(FamilyError::ZeroC);
        }
        let b = Self { c, c1, c2 };
        if ![c, c1, c2].iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(FamilyError::NonFinite);
        }
        Ok(b)
    }

    pub fn p(&self, w: Complex64) -> Complex64 {
        (w + self.c1) * w + self.c2
    }

    /// p'(w) = 2w + c1.
    pub fn dp(&self, w: Complex64) -> Complex64 {
        2.0 * w + self.c1
    }
}

/// One member of the family: base map, parameter t, quadratic couplings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyParams {
    pub base: HenonBase,
    pub t: Complex64,
    pub g: QuadPoly2,
    pub h: QuadPoly2,
}

impl FamilyParams {
    pub fn new(base: HenonBase, t: Complex64, g: QuadPoly2, h: QuadPoly2) -> Result<Self, FamilyError> {
        if g.a20.norm() == 0.0 {
            return Err(FamilyError::ZeroLeadG);
        }
        let p = Self { base, t, g, h };
        if !(t.re.is_finite() && t.im.is_finite() && g.is_finite() && h.is_finite()) {
            return Err(FamilyError::NonFinite);
        }
        Ok(p)
    }

    /// The pure-z^2 coupled subfamily `g = G z^2`, `h = H z^2`.
    pub fn z2_coupled(
        base: HenonBase,
        t: Complex64,
        g2: Complex64,
        h2: Complex64,
    ) -> Result<Self, FamilyError> {
        Self::new(base, t, QuadPoly2::z2(g2), QuadPoly2::z2(h2))
    }

    pub fn with_t(&self, t: Complex64) -> Self {
        Self { t, ..*self }
    }

    /// G: the z^2 coefficient of g. Nonzero by construction.
    pub fn lead_g(&self) -> Complex64 {
        self.g.a20
    }

    /// H: the z^2 coefficient of h.
    pub fn lead_h(&self) -> Complex64 {
        self.h.a20
    }

    /// |H/G|.
    pub fn ratio(&self) -> f64 {
        (self.h.a20 / self.g.a20).norm()
    }

    /// True when |H/G| and |c| are separated by more than the relative band;
    /// the asymptotic limit formulas require this.
    pub fn non_exceptional(&self) -> bool {
        let r = self.ratio();
        let c = self.base.c.norm();
        (r - c).abs() > EXCEPTIONAL_BAND * r.max(c)
    }

    /// f_t(z, w). Errors when a component overflows to a non-finite value.
    pub fn evaluate(&self, p: PointC2) -> Result<PointC2, FamilyError> {
        let img = PointC2 {
            z: p.w + self.t * self.g.eval(p.z, p.w),
            w: self.base.c * p.z + self.base.p(p.w) + self.t * self.h.eval(p.z, p.w),
        };
        if img.is_finite() {
            Ok(img)
        } else {
            Err(FamilyError::Overflow)
        }
    }

    /// Derivative of f_t at (z, w) as a 2x2 complex matrix.
    pub fn jacobian(&self, p: PointC2) -> Jacobian2 {
        Jacobian2 {
            m11: self.t * self.g.dz(p.z, p.w),
            m12: Complex64::new(1.0, 0.0) + self.t * self.g.dw(p.z, p.w),
            m21: self.base.c + self.t * self.h.dz(p.z, p.w),
            m22: self.base.dp(p.w) + self.t * self.h.dw(p.z, p.w),
        }
    }

    /// det Df_t at (z, w) in expanded form, grouping the dominant 4tGzw term
    /// first:
    ///
    /// ```text
    /// 4 t G z w + 2 t G z c1 + 2 t^2 G z h_w
    ///   + t gt_z (p'(w) + t h_w) - (1 + t g_w)(c + t h_z)
    /// ```
    ///
    /// where `gt = g - G z^2`. Algebraically identical to
    /// `jacobian(p).det()`; kept separate so the two routes cross-check each
    /// other and so the dominant term is explicit for asymptotics.
    pub fn det_closed_form(&self, p: PointC2) -> Complex64 {
        let t = self.t;
        let g_cap = self.g.a20;
        let gt = self.g.without_z2();
        let hw = self.h.dw(p.z, p.w);
        let hz = self.h.dz(p.z, p.w);
        let gw = self.g.dw(p.z, p.w);
        let one = Complex64::new(1.0, 0.0);
        4.0 * t * g_cap * p.z * p.w
            + 2.0 * t * g_cap * p.z * self.base.c1
            + 2.0 * t * t * g_cap * p.z * hw
            + t * gt.dz(p.z, p.w) * (self.base.dp(p.w) + t * hw)
            - (one + t * gw) * (self.base.c + t * hz)
    }

    /// Whether f_t is a regular endomorphism: the degree-2 homogeneous parts
    /// `t g2(z, w)` and `w^2 + t h2(z, w)` vanish simultaneously only at the
    /// origin. Decided by the normalized Sylvester resultant of the two
    /// binary quadratics against [`REGULARITY_THRESHOLD`].
    ///
    /// Errors at t = 0: the base map has first leading form identically zero.
    pub fn is_regular(&self) -> Result<bool, FamilyError> {
        if self.t.norm() == 0.0 {
            return Err(FamilyError::HenonNotRegular);
        }
        let [ga, gb, gc] = self.g.homogeneous2();
        let q1 = [self.t * ga, self.t * gb, self.t * gc];
        let [ha, hb, hc] = self.h.homogeneous2();
        let q2 = [
            self.t * ha,
            self.t * hb,
            Complex64::new(1.0, 0.0) + self.t * hc,
        ];
        let n1: f64 = q1.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let n2: f64 = q2.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if n1 == 0.0 || n2 == 0.0 {
            // a leading form vanished identically: every direction is common
            return Ok(false);
        }
        let r = binary_quadratic_resultant(q1, q2);
        // the resultant is bidegree (2, 2) in the two coefficient vectors
        Ok(r.norm() / (n1 * n1 * n2 * n2) > REGULARITY_THRESHOLD)
    }

    /// Chart (Z, W) = (G t z, t w) in which the family limits onto
    /// `(Z, W) -> (Z^2 + G W + o(1), ...)`. Errors at t = 0.
    pub fn rescale(&self, p: PointC2) -> Result<PointC2, FamilyError> {
        if self.t.norm() == 0.0 {
            return Err(FamilyError::RescaleAtZero);
        }
        Ok(PointC2 { z: self.g.a20 * self.t * p.z, w: self.t * p.w })
    }

    /// Inverse of [`Self::rescale`]. Errors at t = 0.
    pub fn unrescale(&self, p: PointC2) -> Result<PointC2, FamilyError> {
        if self.t.norm() == 0.0 {
            return Err(FamilyError::RescaleAtZero);
        }
        Ok(PointC2 { z: p.z / (self.g.a20 * self.t), w: p.w / self.t })
    }

    fn components(&self) -> [(&'static str, Complex64); 16] {
        [
            ("c", self.base.c),
            ("c1", self.base.c1),
            ("c2", self.base.c2),
            ("t", self.t),
            ("g_a20", self.g.a20),
            ("g_a11", self.g.a11),
            ("g_a02", self.g.a02),
            ("g_a10", self.g.a10),
            ("g_a01", self.g.a01),
            ("g_a00", self.g.a00),
            ("h_a20", self.h.a20),
            ("h_a11", self.h.a11),
            ("h_a02", self.h.a02),
            ("h_a10", self.h.a10),
            ("h_a01", self.h.a01),
            ("h_a00", self.h.a00),
        ]
    }

    /// Flat `key=value` block, one real component per line, shortest
    /// round-trip decimal formatting. Parsing the result reproduces the
    /// parameters bit for bit.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.components() {
            out.push_str(&format!("{name}_re={}\n{name}_im={}\n", v.re, v.im));
        }
        out
    }

    /// Parses a `key=value` block (lines, `#` comments). Unrelated keys are
    /// ignored so family parameters can live inside a larger config file.
    pub fn from_kv(text: &str) -> Result<Self, FamilyError> {
        let pairs = parse_kv(text)?;
        let lookup = |key: &str| -> Result<f64, FamilyError> {
            for (k, v) in &pairs {
                if k == key {
                    return v
                        .parse::<f64>()
                        .map_err(|_| FamilyError::Malformed(0, format!("bad float for {key}: {v}")));
                }
            }
            Err(FamilyError::MissingKey(key.to_string()))
        };
        let cx = |name: &str| -> Result<Complex64, FamilyError> {
            Ok(Complex64::new(lookup(&format!("{name}_re"))?, lookup(&format!("{name}_im"))?))
        };
        let base = HenonBase::new(cx("c")?, cx("c1")?, cx("c2")?)?;
        let g = QuadPoly2 {
            a20: cx("g_a20")?,
            a11: cx("g_a11")?,
            a02: cx("g_a02")?,
            a10: cx("g_a10")?,
            a01: cx("g_a01")?,
            a00: cx("g_a00")?,
        };
        let h = QuadPoly2 {
            a20: cx("h_a20")?,
            a11: cx("h_a11")?,
            a02: cx("h_a02")?,
            a10: cx("h_a10")?,
            a01: cx("h_a01")?,
            a00: cx("h_a00")?,
        };
        FamilyParams::new(base, cx("t")?, g, h)
    }
}

/// Splits `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, FamilyError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(cut) => &raw[..cut],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(FamilyError::Malformed(idx + 1, format!("expected key=value, got {line:?}")));
        };
        out.push((line[..eq].trim().to_string(), line[eq + 1..].trim().to_string()));
    }
    Ok(out)
}

/// 2x2 complex matrix (row major).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian2 {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
}

impl Jacobian2 {
    pub fn det(&self) -> Complex64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn apply(&self, v: (Complex64, Complex64)) -> (Complex64, Complex64) {
        (self.m11 * v.0 + self.m12 * v.1, self.m21 * v.0 + self.m22 * v.1)
    }

    pub fn mul(&self, rhs: &Jacobian2) -> Jacobian2 {
        Jacobian2 {
            m11: self.m11 * rhs.m11 + self.m12 * rhs.m21,
            m12: self.m11 * rhs.m12 + self.m12 * rhs.m22,
            m21: self.m21 * rhs.m11 + self.m22 * rhs.m21,
            m22: self.m21 * rhs.m12 + self.m22 * rhs.m22,
        }
    }

    /// Eigenvalues ordered by descending modulus.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        let tr = self.m11 + self.m22;
        let disc = (tr * tr - 4.0 * self.det()).sqrt();
        let l1 = (tr + disc) / 2.0;
        let l2 = (tr - disc) / 2.0;
        if l1.norm() >= l2.norm() {
            (l1, l2)
        } else {
            (l2, l1)
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.m11.norm_sqr() + self.m12.norm_sqr() + self.m21.norm_sqr() + self.m22.norm_sqr())
            .sqrt()
    }
}

/// Resultant of two binary quadratic forms `a z^2 + b zw + c w^2` via the 4x4
/// Sylvester determinant of the dehomogenized polynomials. Zero exactly when
/// the forms share a nontrivial common root.
pub fn binary_quadratic_resultant(q1: [Complex64; 3], q2: [Complex64; 3]) -> Complex64 {
    let z = Complex64::new(0.0, 0.0);
    let m = [
        [q1[0], q1[1], q1[2], z],
        [z, q1[0], q1[1], q1[2]],
        [q2[0], q2[1], q2[2], z],
        [z, q2[0], q2[1], q2[2]],
    ];
    det4(m)
}

/// Determinant of a 4x4 complex matrix by Gaussian elimination with partial
/// pivoting.
fn det4(mut m: [[Complex64; 4]; 4]) -> Complex64 {
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..4 {
        let (pivot, _) = (col..4)
            .map(|r| (r, m[r][col].norm()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if m[pivot][col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for r in col + 1..4 {
            let f = m[r][col] / m[col][col];
            for k in col..4 {
                let sub = f * m[col][k];
                m[r][k] -= sub;
            }
        }
    }
    det
}
