//! Small statistical helpers shared across the estimation modules:
//! compensated summation, seed mixing, jackknife errors, a Kolmogorov-Smirnov
//! distance against the uniform law, circular moments, and a least-squares
//! line fit.

/// Kahan-Neumaier compensated accumulator.
///
/// Sums of per-step log factors run to ~1e4 terms of mixed magnitude; plain
/// summation loses digits that the acceptance tolerances cannot spare.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mixes a master seed with a task index into an independent stream seed.
///
/// SplitMix64 finalizer over `master ^ (index * golden)`; bijective in the
/// index for a fixed master, so distinct tasks never collide.
pub fn mix64(master: u64, index: u64) -> u64 {
    let mut x = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over a word stream; used for the branch-choice digests that make
/// sampling runs auditable.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xCBF2_9CE4_8422_2325)
    }
}

impl Fnv64 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_u64(&mut self, word: u64) {
        let mut h = self.0;
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.0 = h;
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Delete-one-block jackknife mean and standard error.
///
/// `values` is split into `n_blocks` contiguous blocks (the last absorbs the
/// remainder). Returns `(mean, stderr)`. With serially correlated inputs the
/// block length must exceed the correlation time; callers arrange that.
pub fn jackknife(values: &[f64], n_blocks: usize) -> (f64, f64) {
    assert!(!values.is_empty(), "jackknife over an empty sample");
    let n = values.len();
    let b = n_blocks.clamp(2, n.max(2)).min(n);
    if n < 2 {
        return (values[0], 0.0);
    }
    let mut total = KahanSum::new();
    for &v in values {
        total.add(v);
    }
    let total = total.value();
    let mean = total / n as f64;

    let base = n / b;
    let rem = n % b;
    let mut leave_out = Vec::with_capacity(b);
    let mut start = 0usize;
    for i in 0..b {
        let len = base + usize::from(i < rem);
        let mut block = KahanSum::new();
        for &v in &values[start..start + len] {
            block.add(v);
        }
        leave_out.push((total - block.value()) / (n - len) as f64);
        start += len;
    }
    let jk_mean = leave_out.iter().sum::<f64>() / b as f64;
    let var = leave_out.iter().map(|&t| (t - jk_mean).powi(2)).sum::<f64>() * (b - 1) as f64
        / b as f64;
    (mean, var.sqrt())
}

/// Two-sided Kolmogorov-Smirnov distance of a sample in [0,1) against the
/// uniform law: sup_x |F_n(x) - x|.
pub fn ks_uniform(sample: &[f64]) -> f64 {
    assert!(!sample.is_empty(), "KS distance of an empty sample");
    let mut s: Vec<f64> = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("non-finite angle in KS input"));
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let hi = (i + 1) as f64 / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Modulus of the first circular moment |mean_k exp(2 pi i a_k)| of angles
/// given as fractions in [0,1). Zero for the uniform law; O(1/sqrt(n)) for
/// uniform samples.
pub fn circular_moment(angles: &[f64]) -> f64 {
    assert!(!angles.is_empty(), "circular moment of an empty sample");
    let mut re = KahanSum::new();
    let mut im = KahanSum::new();
    for &a in angles {
        let th = 2.0 * std::f64::consts::PI * a;
        re.add(th.cos());
        im.add(th.sin());
    }
    let n = angles.len() as f64;
    (re.value() / n).hypot(im.value() / n)
}

/// Ordinary least-squares line `y ~ slope * x + intercept`.
///
/// Returns `(slope, intercept)`. Panics on fewer than two points or zero
/// x-variance; callers validate before fitting.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len(), "linear_fit input length mismatch");
    assert!(x.len() >= 2, "linear_fit needs at least two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    assert!(sxx > 0.0, "linear_fit abscissae are all equal");
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
