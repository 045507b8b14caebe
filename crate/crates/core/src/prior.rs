//! Dirichlet prior on the normalized Fourier magnitudes of the object.
//!
//! With `x_k = |F(rho)_k| / sum_j |F(rho)_j|`, the log density (up to the
//! constant `-ln B(alpha)`) is `sum_k (c alpha_k - 1) ln x_k`, where `alpha`
//! is the normalized OTF modulus and `c` the total concentration (1 by
//! default, so the Dirichlet parameters are `alpha` itself). Only ratios of
//! magnitudes enter, so the density is invariant to rescaling the object.
//!
//! The density is evaluated over the full DFT grid. For a real object the
//! bins `k` and `-k` carry equal magnitudes and both count.
//!
//! Two evaluation routes exist: [`log_prior`] on a full [`SpectrumState`],
//! and [`IncrementalPrior`], which works on the half spectrum and updates it
//! by rank-one DFT corrections when a single pixel changes.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rustfft::num_complex::Complex64;

use crate::error::{check_shape, Error, Result};
use crate::fft::Fft2;
use crate::optics::OtfSpectrum;
use crate::rng::{self, domain};
use crate::special::{fast_ln, log_sum_exp};

pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-6;

/// Full complex spectrum of an object with cached magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumState {
    complex_spectrum: Array2<Complex64>,
    magnitudes: Array2<f64>,
    magnitude_sum: f64,
}

impl SpectrumState {
    pub fn from_object(object: ArrayView2<f64>) -> Self {
        let plan = Fft2::new(object.dim());
        Self::from_complex(plan.forward_real(object))
    }

    pub fn from_complex(complex_spectrum: Array2<Complex64>) -> Self {
        let magnitudes = complex_spectrum.mapv(|z| z.norm());
        let magnitude_sum = magnitudes.sum();
        Self {
            complex_spectrum,
            magnitudes,
            magnitude_sum,
        }
    }

    pub fn complex_spectrum(&self) -> &Array2<Complex64> {
        &self.complex_spectrum
    }

    pub fn magnitudes(&self) -> &Array2<f64> {
        &self.magnitudes
    }

    pub fn magnitude_sum(&self) -> f64 {
        self.magnitude_sum
    }

    pub fn shape(&self) -> (usize, usize) {
        self.magnitudes.dim()
    }
}

/// Dirichlet hyperparameters on the DFT grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOtfPrior {
    alpha: Array2<f64>,
    alpha_floor: f64,
    concentration: f64,
}

impl DirichletOtfPrior {
    /// Use `alpha` as given after flooring at `alpha_floor / K` and
    /// renormalizing.
    pub fn from_alpha(alpha: Array2<f64>, alpha_floor: f64) -> Result<Self> {
        if !(alpha_floor > 0.0) {
            return Err(Error::invalid("alpha floor must be positive"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        let total = alpha.sum();
        if !(total > 0.0) {
            return Err(Error::invalid("alpha is identically zero"));
        }
        let floor = alpha_floor / alpha.len() as f64;
        let mut alpha = alpha.mapv(|a| (a / total).max(floor));
        let total = alpha.sum();
        alpha.mapv_inplace(|a| a / total);
        Ok(Self {
            alpha,
            alpha_floor,
            concentration: 1.0,
        })
    }

    /// Symmetric Dirichlet, `alpha_k = 1/K`.
    pub fn uniform(shape: (usize, usize)) -> Self {
        let k = (shape.0 * shape.1) as f64;
        Self {
            alpha: Array2::from_elem(shape, 1.0 / k),
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            concentration: 1.0,
        }
    }

    /// Uniform alpha with total concentration K: every exponent is zero and
    /// the density is flat in the object.
    pub fn flat(shape: (usize, usize)) -> Self {
        let mut p = Self::uniform(shape);
        p.concentration = (shape.0 * shape.1) as f64;
        p
    }

    /// Scale all Dirichlet parameters to sum to `concentration`.
    pub fn with_concentration(mut self, concentration: f64) -> Result<Self> {
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::invalid("concentration must be positive"));
        }
        self.concentration = concentration;
        Ok(self)
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn alpha_floor(&self) -> f64 {
        self.alpha_floor
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn shape(&self) -> (usize, usize) {
        self.alpha.dim()
    }

    /// Exponent `c alpha_k - 1` of each magnitude.
    pub fn exponents(&self) -> Array2<f64> {
        self.alpha.mapv(|a| a * self.concentration - 1.0)
    }

    pub fn is_flat(&self) -> bool {
        self.exponents().iter().all(|e| *e == 0.0)
    }
}

/// `alpha` proportional to `max(|OTF|, floor)`, normalized to unit sum. For
/// band-limited optics the bins beyond the cutoff are set to the floor.
pub fn build_prior(otf: &OtfSpectrum, alpha_floor: f64) -> Result<DirichletOtfPrior> {
    let mut magnitudes = otf.magnitudes().clone();
    if magnitudes.iter().all(|m| *m == 0.0) {
        return Err(Error::invalid("OTF is identically zero"));
    }
    if otf.is_band_limited() {
        for (m, beyond) in magnitudes.iter_mut().zip(otf.beyond_cutoff().iter()) {
            if *beyond {
                *m = 0.0;
            }
        }
    }
    DirichletOtfPrior::from_alpha(magnitudes, alpha_floor)
}

/// Log density of the object's normalized spectrum, additive constant
/// dropped. A zero magnitude under a non-zero exponent is outside the
/// support and yields `-inf`.
pub fn log_prior(spectrum: &SpectrumState, prior: &DirichletOtfPrior) -> Result<f64> {
    check_shape(prior.shape(), spectrum.shape())?;
    let sum = spectrum.magnitude_sum();
    if !(sum > 0.0) {
        return Err(Error::invalid("spectrum is identically zero"));
    }
    let ln_sum = sum.ln();
    let c = prior.concentration();
    let mut acc = 0.0;
    for (&m, &a) in spectrum.magnitudes().iter().zip(prior.alpha().iter()) {
        let e = a * c - 1.0;
        if e == 0.0 {
            continue;
        }
        if m == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += e * (m.ln() - ln_sum);
    }
    Ok(acc)
}

/// Spectrum after adding `delta` to one object pixel:
/// `X'_k = X_k + delta exp(-2 pi i k . m / N)`.
pub fn propose_pixel_spectrum_delta(
    spectrum: &SpectrumState,
    pixel: (usize, usize),
    delta: f64,
) -> SpectrumState {
    let (rows, cols) = spectrum.shape();
    assert!(pixel.0 < rows && pixel.1 < cols, "pixel outside the grid");
    if delta == 0.0 {
        return spectrum.clone();
    }
    let mut z = spectrum.complex_spectrum().clone();
    let rt = twiddles(rows);
    let ct = twiddles(cols);
    for ((k0, k1), v) in z.indexed_iter_mut() {
        let u = rt[(k0 * pixel.0) % rows] * ct[(k1 * pixel.1) % cols];
        *v += u * delta;
    }
    SpectrumState::from_complex(z)
}

/// `exp(-2 pi i j / n)` for `j` in `0..n`.
fn twiddles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * j as f64 / n as f64))
        .collect()
}

/// One Dirichlet draw of the normalized magnitude vector.
pub fn sample_from_prior(prior: &DirichletOtfPrior, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, domain::PRIOR);
    sample_from_prior_with(prior, &mut rng)
}

/// Gamma-method Dirichlet draw, carried out in log space: for shape `a`,
/// `ln G = ln G' + ln(U) / a` with `G' ~ Gamma(1 + a)`, which stays finite
/// for the tiny parameters produced by the alpha floor.
pub fn sample_from_prior_with<R: Rng + ?Sized>(
    prior: &DirichletOtfPrior,
    rng: &mut R,
) -> Array2<f64> {
    let c = prior.concentration();
    let log_gammas: Vec<f64> = prior
        .alpha()
        .iter()
        .map(|&a| {
            let shape = a * c;
            let g = Gamma::new(1.0 + shape, 1.0).expect("valid gamma shape");
            let u: f64 = rng.random::<f64>();
            // U in (0, 1]
            let u = 1.0 - u;
            g.sample(rng).ln() + u.ln() / shape
        })
        .collect();
    let norm = log_sum_exp(&log_gammas);
    let mut out = Array2::from_shape_vec(
        prior.shape(),
        log_gammas.iter().map(|l| (l - norm).exp()).collect(),
    )
    .expect("shape matches alpha");
    // Remove the last ulp-level drift so the draw sums to one.
    let total = out.sum();
    out.mapv_inplace(|v| v / total);
    out
}

/// Half-spectrum evaluator of the log prior with O(K) single-pixel updates.
///
/// Stores bins `k1 in 0..=W/2` of every row. Interior columns stand for the
/// pair `{k, -k}` and are counted twice; the `k1 = 0` column (and `k1 = W/2`
/// for even W) holds its own partners and counts once.
#[derive(Debug, Clone)]
pub struct IncrementalPrior {
    rows: usize,
    cols: usize,
    half: usize,
    flat: bool,
    plan: Fft2,
    row_twiddle: Vec<Complex64>,
    col_twiddle: Vec<Complex64>,
    /// Summed exponent of the bins each entry stands for.
    weight: Vec<f64>,
    /// `sum_k (c alpha_k - 1)` over the full grid.
    total_exponent: f64,
    re: Vec<f64>,
    im: Vec<f64>,
    ln_mag2: Vec<f64>,
    mag_sum: f64,
    pending: Option<Pending>,
    next_ln_mag2: Vec<f64>,
    col_re: Vec<f64>,
    col_im: Vec<f64>,
    updates_since_rebuild: usize,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    pixel: (usize, usize),
    delta: f64,
    new_sum: f64,
}

impl IncrementalPrior {
    pub fn new(prior: &DirichletOtfPrior) -> Self {
        let (rows, cols) = prior.shape();
        let half = cols / 2 + 1;
        let n = rows * half;
        let exponents = prior.exponents();
        let mut weight = vec![0.0; n];
        for k0 in 0..rows {
            for k1 in 0..half {
                let idx = k0 * half + k1;
                weight[idx] = if is_self_paired(k1, cols) {
                    exponents[[k0, k1]]
                } else {
                    exponents[[k0, k1]] + exponents[[(rows - k0) % rows, cols - k1]]
                };
            }
        }
        Self {
            rows,
            cols,
            half,
            flat: prior.is_flat(),
            plan: Fft2::new((rows, cols)),
            row_twiddle: twiddles(rows),
            col_twiddle: twiddles(cols),
            weight,
            total_exponent: exponents.sum(),
            re: vec![0.0; n],
            im: vec![0.0; n],
            ln_mag2: vec![0.0; n],
            mag_sum: 0.0,
            pending: None,
            next_ln_mag2: vec![0.0; n],
            col_re: vec![0.0; half],
            col_im: vec![0.0; half],
            updates_since_rebuild: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    /// Accepted single-pixel updates since the last full transform.
    pub fn updates_since_rebuild(&self) -> usize {
        self.updates_since_rebuild
    }

    /// Recompute the cached spectrum from scratch.
    pub fn rebuild(&mut self, object: ArrayView2<f64>) {
        assert_eq!(object.dim(), (self.rows, self.cols), "prior grid mismatch");
        self.pending = None;
        self.updates_since_rebuild = 0;
        if self.flat {
            return;
        }
        let z = self.plan.forward_real(object);
        let mut sum = 0.0;
        for k0 in 0..self.rows {
            for k1 in 0..self.half {
                let idx = k0 * self.half + k1;
                let v = z[[k0, k1]];
                let m2 = v.norm_sqr();
                self.re[idx] = v.re;
                self.im[idx] = v.im;
                self.ln_mag2[idx] = m2.ln();
                sum += self.multiplicity(k1) * m2.sqrt();
            }
        }
        self.mag_sum = sum;
    }

    fn multiplicity(&self, k1: usize) -> f64 {
        if is_self_paired(k1, self.cols) {
            1.0
        } else {
            2.0
        }
    }

    /// Current log prior (same value as [`log_prior`] on the full grid).
    pub fn value(&self) -> f64 {
        if self.flat {
            return 0.0;
        }
        let mut acc = 0.0;
        for (&w, &l) in self.weight.iter().zip(&self.ln_mag2) {
            if w == 0.0 {
                continue;
            }
            if l == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            acc += w * l;
        }
        0.5 * acc - self.total_exponent * self.mag_sum.ln()
    }

    /// Change in log prior if `delta` were added to `pixel`. The proposal is
    /// kept until the next call and can be applied with [`Self::commit`].
    pub fn propose(&mut self, pixel: (usize, usize), delta: f64) -> f64 {
        if self.flat {
            self.pending = Some(Pending {
                pixel,
                delta,
                new_sum: 0.0,
            });
            return 0.0;
        }
        let half = self.half;
        for k1 in 0..half {
            let t = self.col_twiddle[(k1 * pixel.1) % self.cols];
            self.col_re[k1] = t.re;
            self.col_im[k1] = t.im;
        }
        let mut acc = Lanes::default();
        let mut self_paired_sum = 0.0;
        let last = if self.cols.is_multiple_of(2) {
            Some(self.cols / 2)
        } else {
            None
        };
        for k0 in 0..self.rows {
            let r = self.row_twiddle[(k0 * pixel.0) % self.rows];
            let span = k0 * half..(k0 + 1) * half;
            let row = RowView {
                re: &self.re[span.clone()],
                im: &self.im[span.clone()],
                ln_mag2: &self.ln_mag2[span.clone()],
                weight: &self.weight[span.clone()],
                col_re: &self.col_re[..half],
                col_im: &self.col_im[..half],
                dr: delta * r.re,
                di: delta * r.im,
            };
            let out = &mut self.next_ln_mag2[span];
            propose_row(&row, out, &mut acc);
            self_paired_sum += row.new_mag(0);
            if let Some(c) = last {
                self_paired_sum += row.new_mag(c);
            }
        }
        let (acc_ln, mag_total, dead) = acc.finish();
        // Every entry was counted twice above.
        let new_sum = 2.0 * mag_total - self_paired_sum;
        self.pending = Some(Pending {
            pixel,
            delta,
            new_sum,
        });
        if dead {
            return f64::NEG_INFINITY;
        }
        0.5 * acc_ln - self.total_exponent * (new_sum.ln() - self.mag_sum.ln())
    }

    /// Apply the last proposal.
    pub fn commit(&mut self) {
        let Some(p) = self.pending.take() else {
            return;
        };
        self.updates_since_rebuild += 1;
        if self.flat {
            return;
        }
        let half = self.half;
        for k0 in 0..self.rows {
            let r = self.row_twiddle[(k0 * p.pixel.0) % self.rows];
            let (dr, di) = (p.delta * r.re, p.delta * r.im);
            let re = &mut self.re[k0 * half..(k0 + 1) * half];
            let im = &mut self.im[k0 * half..(k0 + 1) * half];
            for k1 in 0..half {
                re[k1] += dr * self.col_re[k1] - di * self.col_im[k1];
                im[k1] += dr * self.col_im[k1] + di * self.col_re[k1];
            }
        }
        std::mem::swap(&mut self.ln_mag2, &mut self.next_ln_mag2);
        self.mag_sum = p.new_sum;
    }

    /// Largest deviation of the cached magnitudes from a fresh transform of
    /// `object`, relative to the largest magnitude.
    pub fn drift(&self, object: ArrayView2<f64>) -> f64 {
        if self.flat {
            return 0.0;
        }
        let z = self.plan.forward_real(object);
        let scale = z.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let mut worst = 0.0f64;
        for k0 in 0..self.rows {
            for k1 in 0..self.half {
                let idx = k0 * self.half + k1;
                let cached = self.re[idx].hypot(self.im[idx]);
                worst = worst.max((cached - z[[k0, k1]].norm()).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Cached magnitudes expanded back to the full grid.
    pub fn full_magnitudes(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for k0 in 0..self.rows {
            for k1 in 0..self.half {
                let idx = k0 * self.half + k1;
                let m = self.re[idx].hypot(self.im[idx]);
                out[[k0, k1]] = m;
                out[[(self.rows - k0) % self.rows, (self.cols - k1) % self.cols]] = m;
            }
        }
        out
    }
}

fn is_self_paired(k1: usize, cols: usize) -> bool {
    k1 == 0 || (cols.is_multiple_of(2) && k1 == cols / 2)
}

const LANES: usize = 4;

/// Lane-wise partial sums, so the row loop vectorizes.
#[derive(Default)]
struct Lanes {
    ln: [f64; LANES],
    mag: [f64; LANES],
    dead: [f64; LANES],
}

impl Lanes {
    fn finish(&self) -> (f64, f64, bool) {
        (
            self.ln.iter().sum(),
            self.mag.iter().sum(),
            self.dead.iter().any(|d| *d != 0.0),
        )
    }
}

struct RowView<'a> {
    re: &'a [f64],
    im: &'a [f64],
    ln_mag2: &'a [f64],
    weight: &'a [f64],
    col_re: &'a [f64],
    col_im: &'a [f64],
    /// Step size times the row twiddle.
    dr: f64,
    di: f64,
}

impl RowView<'_> {
    #[inline(always)]
    fn new_mag2(&self, k: usize) -> f64 {
        let nr = self.re[k] + (self.dr * self.col_re[k] - self.di * self.col_im[k]);
        let ni = self.im[k] + (self.dr * self.col_im[k] + self.di * self.col_re[k]);
        nr * nr + ni * ni
    }

    fn new_mag(&self, k: usize) -> f64 {
        self.new_mag2(k).sqrt()
    }
}

/// One spectrum row of a proposal: writes the new `ln |z|^2` and adds the
/// weighted log-ratio and the new magnitudes into `acc`.
fn propose_row(row: &RowView<'_>, out: &mut [f64], acc: &mut Lanes) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were just detected.
            unsafe { propose_row_avx2(row, out, acc) };
            return;
        }
    }
    propose_row_body::<false>(row, out, acc);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn propose_row_avx2(row: &RowView<'_>, out: &mut [f64], acc: &mut Lanes) {
    propose_row_body::<true>(row, out, acc);
}

/// `VECTOR_LN` selects the branch-free logarithm, which only pays off when
/// the loop is compiled for wide vectors.
#[inline(always)]
fn propose_row_body<const VECTOR_LN: bool>(row: &RowView<'_>, out: &mut [f64], acc: &mut Lanes) {
    let n = row.re.len();
    let (re, im, cr, ci) = (
        &row.re[..n],
        &row.im[..n],
        &row.col_re[..n],
        &row.col_im[..n],
    );
    let out = &mut out[..n];
    // Pass 1: new |z|^2 into `out`.
    for k in 0..n {
        let nr = re[k] + (row.dr * cr[k] - row.di * ci[k]);
        let ni = im[k] + (row.dr * ci[k] + row.di * cr[k]);
        out[k] = nr * nr + ni * ni;
    }
    // Pass 2: magnitudes and zero flags, lane-wise.
    let weight = &row.weight[..n];
    let mut chunks = out.chunks_exact(LANES).zip(weight.chunks_exact(LANES));
    for (m2, w) in &mut chunks {
        for lane in 0..LANES {
            acc.mag[lane] += m2[lane].sqrt();
            acc.dead[lane] += if (m2[lane] == 0.0) & (w[lane] != 0.0) {
                1.0
            } else {
                0.0
            };
        }
    }
    for k in n - n % LANES..n {
        acc.mag[0] += out[k].sqrt();
        acc.dead[0] += if (out[k] == 0.0) & (weight[k] != 0.0) {
            1.0
        } else {
            0.0
        };
    }
    // Pass 3: logarithms in place.
    for v in out.iter_mut() {
        *v = if VECTOR_LN { fast_ln(*v) } else { v.ln() };
    }
    // Pass 4: weighted log-ratio.
    let old = &row.ln_mag2[..n];
    let mut chunks = out
        .chunks_exact(LANES)
        .zip(old.chunks_exact(LANES))
        .zip(weight.chunks_exact(LANES));
    for ((l, o), w) in &mut chunks {
        for lane in 0..LANES {
            acc.ln[lane] += w[lane] * (l[lane] - o[lane]);
        }
    }
    for k in n - n % LANES..n {
        acc.ln[0] += weight[k] * (out[k] - old[k]);
    }
}
