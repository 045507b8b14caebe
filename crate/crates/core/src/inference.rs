//! Completed likelihood, latent photon counts and the Metropolis-within-Gibbs
//! sampler.
//!
//! A sweep over a chunk first redraws the photon count of every pixel from
//! its exact conditional, then visits the object pixels in raster order with
//! multiplicative log-normal proposals. Accepted values are used immediately
//! by the following pixels.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{adu_to_photon_estimate, CameraMap, PixelCalibration};
use crate::error::{check_shape, Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::optics::{otf_from_psf, Psf};
use crate::parallel::{self, Rect};
use crate::prior::{build_prior, DirichletOtfPrior, IncrementalPrior, DEFAULT_ALPHA_FLOOR};
use crate::rng::StreamRng;
use crate::special::{ln_factorial, ln_normal, log_sum_exp, MIN_VARIANCE};

/// Floor applied to the initial object, in photons.
pub const INIT_FLOOR: f64 = 1e-3;

/// Relative expected-image drift above which a sweep counts as a forced
/// refresh.
pub const CACHE_TOLERANCE: f64 = 1e-4;

fn check_finite(name: &str, values: &Array2<f64>) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid(format!("{name} contains NaN")));
    }
    Ok(())
}

#[inline]
fn ln_poisson_with_ln_rate(k: u64, rate: f64, ln_rate: f64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * ln_rate - rate - ln_factorial(k)
}

/// `sum_n [ln Normal(w_n; G_n phi_n + o_n, s_n^2) + ln Poisson(phi_n; mu_n)]`.
pub fn log_likelihood_completed(
    raw: &ImageGrid,
    photons: &ImageGrid,
    expected: &ImageGrid,
    camera: &CameraMap,
) -> Result<f64> {
    check_shape(raw.shape(), photons.shape())?;
    check_shape(raw.shape(), expected.shape())?;
    check_shape(raw.shape(), camera.shape())?;
    for (name, g) in [
        ("readout", raw),
        ("photons", photons),
        ("expected image", expected),
    ] {
        check_finite(name, g.values())?;
    }
    if photons
        .values()
        .iter()
        .any(|p| *p < 0.0 || p.fract() != 0.0)
    {
        return Err(Error::invalid(
            "photon counts must be non-negative integers",
        ));
    }
    if expected.values().iter().any(|m| *m < 0.0) {
        return Err(Error::invalid("expected image must be non-negative"));
    }
    let mut total = 0.0;
    for ((r, c), &w) in raw.values().indexed_iter() {
        let cal = camera.pixel(r, c);
        let phi = photons.values()[[r, c]];
        let mu = expected.values()[[r, c]];
        total += ln_normal(w, cal.gain * phi + cal.offset, cal.read_variance)
            + ln_poisson_with_ln_rate(phi as u64, mu, mu.ln());
    }
    Ok(total)
}

/// Photon counts enumerated for one pixel. The window spans eight standard
/// deviations plus eight counts around both the expected count and the
/// readout-implied count.
pub fn photon_window(w: f64, mu: f64, cal: PixelCalibration) -> (u64, u64) {
    let est = (w - cal.offset) / cal.gain;
    let top = mu.max(est);
    let spread = 8.0 * (top.max(0.0) + 1.0).sqrt() + 8.0;
    let lo = (mu.min(est) - spread).max(0.0).floor();
    let hi = (top + spread).max(0.0).ceil();
    (lo as u64, hi as u64)
}

/// Unnormalized log conditional `ln p(phi | w, mu)` over the window.
fn fill_conditional(w: f64, mu: f64, cal: PixelCalibration, lo: u64, hi: u64, buf: &mut Vec<f64>) {
    buf.clear();
    let ln_mu = mu.ln();
    let var = cal.read_variance.max(MIN_VARIANCE);
    let norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    for k in lo..=hi {
        let d = w - (cal.gain * k as f64 + cal.offset);
        buf.push(norm - 0.5 * d * d / var + ln_poisson_with_ln_rate(k, mu, ln_mu));
    }
}

fn fallback_count(w: f64, cal: PixelCalibration) -> u64 {
    ((w - cal.offset) / cal.gain).max(0.0).round() as u64
}

/// Reusable scratch for photon-count draws.
#[derive(Debug, Default, Clone)]
pub struct PhotonSampler {
    buf: Vec<f64>,
}

impl PhotonSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exact draw from `p(phi) ∝ Normal(w; G phi + o, s^2) Poisson(phi; mu)`
    /// by enumeration and inverse CDF.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        w: f64,
        mu: f64,
        cal: PixelCalibration,
        rng: &mut R,
    ) -> u64 {
        if mu <= 0.0 {
            return 0;
        }
        let (lo, hi) = photon_window(w, mu, cal);
        fill_conditional(w, mu, cal, lo, hi, &mut self.buf);
        let max = self.buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return fallback_count(w, cal);
        }
        let mut total = 0.0;
        for v in self.buf.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, v) in self.buf.iter().enumerate() {
            acc += v;
            if acc > target {
                return lo + i as u64;
            }
        }
        // Round-off left the target past the last cell.
        let last = self.buf.iter().rposition(|v| *v > 0.0).unwrap_or(0);
        lo + last as u64
    }
}

/// One draw of a pixel's photon count given its readout and expected count.
pub fn sample_photons_given_readout<R: Rng + ?Sized>(
    w: f64,
    mu: f64,
    cal: PixelCalibration,
    rng: &mut R,
) -> u64 {
    PhotonSampler::new().sample(w, mu, cal, rng)
}

/// Normalized conditional pmf over the photon window, as `(lo, pmf)`.
pub fn photon_conditional_pmf(w: f64, mu: f64, cal: PixelCalibration) -> (u64, Vec<f64>) {
    if mu <= 0.0 {
        return (0, vec![1.0]);
    }
    let (lo, hi) = photon_window(w, mu, cal);
    let mut buf = Vec::new();
    fill_conditional(w, mu, cal, lo, hi, &mut buf);
    let norm = log_sum_exp(&buf);
    if norm == f64::NEG_INFINITY {
        return (fallback_count(w, cal), vec![1.0]);
    }
    (lo, buf.iter().map(|v| (v - norm).exp()).collect())
}

/// `sum_n ln sum_phi Normal(w_n; G_n phi + o_n, s_n^2) Poisson(phi; mu_n)`,
/// the photon sum truncated to the sampler's window.
pub fn log_likelihood_marginal(
    raw: &ImageGrid,
    expected: &ImageGrid,
    camera: &CameraMap,
) -> Result<f64> {
    check_shape(raw.shape(), expected.shape())?;
    check_shape(raw.shape(), camera.shape())?;
    check_finite("readout", raw.values())?;
    check_finite("expected image", expected.values())?;
    let mut buf = Vec::new();
    let mut total = 0.0;
    for ((r, c), &w) in raw.values().indexed_iter() {
        let cal = camera.pixel(r, c);
        let mu = expected.values()[[r, c]];
        if mu <= 0.0 {
            total += ln_normal(w, cal.offset, cal.read_variance);
            continue;
        }
        let (lo, hi) = photon_window(w, mu, cal);
        fill_conditional(w, mu, cal, lo, hi, &mut buf);
        total += log_sum_exp(&buf);
    }
    Ok(total)
}

/// Run-length and engineering settings of the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Standard deviation of the log-space proposal step.
    pub proposal_sd: f64,
    /// Chunk interior side; `None` picks `max(32, 4 h + 1)`.
    pub chunk_side: Option<usize>,
    pub seed: u64,
    /// Accepted updates between full spectrum transforms.
    pub refresh_interval: usize,
    /// Keep every thinned sample in the summary.
    pub keep_samples: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            burn_in: 500,
            thin: 10,
            proposal_sd: 0.1,
            chunk_side: None,
            seed: 0,
            refresh_interval: 4096,
            keep_samples: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, half_support: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be positive"));
        }
        if !(self.proposal_sd >= 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::invalid(
                "proposal_sd must be finite and non-negative",
            ));
        }
        if self.refresh_interval == 0 {
            return Err(Error::invalid("refresh_interval must be positive"));
        }
        if let Some(side) = self.chunk_side {
            if side < 2 * half_support + 1 {
                return Err(Error::invalid(format!(
                    "chunk side {side} is below 2 * half_support + 1 = {}",
                    2 * half_support + 1
                )));
            }
        }
        Ok(())
    }

    pub fn default_chunk_side(half_support: usize) -> usize {
        32.max(4 * half_support + 1)
    }

    pub fn effective_chunk_side(&self, half_support: usize) -> usize {
        self.chunk_side
            .unwrap_or_else(|| Self::default_chunk_side(half_support))
    }

    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.n_samples * self.thin
    }

    /// True when the state after sweep `t` (1-based) is a retained sample.
    pub fn is_sample_sweep(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Everything the sampler conditions on.
#[derive(Debug, Clone)]
pub struct Model {
    raw: ImageGrid,
    psf: Psf,
    camera: CameraMap,
    prior: DirichletOtfPrior,
    kernel: Array2<f64>,
}

impl Model {
    /// Prior built from the PSF's OTF on the image grid.
    pub fn new(raw: ImageGrid, psf: Psf, camera: CameraMap) -> Result<Self> {
        let otf = otf_from_psf(&psf, raw.shape())?;
        let prior = build_prior(&otf, DEFAULT_ALPHA_FLOOR)?;
        Self::with_prior(raw, psf, camera, prior)
    }

    pub fn with_prior(
        raw: ImageGrid,
        psf: Psf,
        camera: CameraMap,
        prior: DirichletOtfPrior,
    ) -> Result<Self> {
        check_shape(raw.shape(), camera.shape())?;
        check_shape(raw.shape(), prior.shape())?;
        check_finite("readout", raw.values())?;
        let kernel = psf.support_kernel();
        Ok(Self {
            raw,
            psf,
            camera,
            prior,
            kernel,
        })
    }

    pub fn raw(&self) -> &ImageGrid {
        &self.raw
    }

    pub fn psf(&self) -> &Psf {
        &self.psf
    }

    pub fn camera(&self) -> &CameraMap {
        &self.camera
    }

    pub fn prior(&self) -> &DirichletOtfPrior {
        &self.prior
    }

    pub fn shape(&self) -> (usize, usize) {
        self.raw.shape()
    }

    /// Kernel truncated to the half support, as used by the sampler.
    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    pub fn half_support(&self) -> usize {
        self.kernel.nrows() / 2
    }

    /// Gain- and offset-corrected readout floored at [`INIT_FLOOR`].
    pub fn initial_object(&self) -> Result<Array2<f64>> {
        Ok(adu_to_photon_estimate(&self.raw, &self.camera)?
            .into_values()
            .mapv(|v| v.max(INIT_FLOOR)))
    }

    /// Rounded corrected readout.
    pub fn initial_photons(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape());
        for ((r, c), v) in out.indexed_iter_mut() {
            *v = fallback_count(self.raw.values()[[r, c]], self.camera.pixel(r, c)) as f64;
        }
        out
    }
}

/// Sampler health counters, summed over chunks.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub sweeps: usize,
    pub proposals: u64,
    pub accepted: u64,
    /// Sweeps whose incrementally maintained expected image drifted beyond
    /// [`CACHE_TOLERANCE`] before being recomputed.
    pub forced_refreshes: u64,
    pub max_cache_divergence: f64,
    pub spectrum_rebuilds: u64,
}

impl ChainDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub(crate) fn merge(&mut self, other: &ChainDiagnostics) {
        self.proposals += other.proposals;
        self.accepted += other.accepted;
        self.forced_refreshes += other.forced_refreshes;
        self.max_cache_divergence = self.max_cache_divergence.max(other.max_cache_divergence);
        self.spectrum_rebuilds += other.spectrum_rebuilds;
    }
}

/// Streaming posterior moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: ImageGrid,
    pub second_moment: ImageGrid,
    pub n_accumulated: usize,
    pub retained_samples: Vec<ImageGrid>,
    /// Population std over mean; NaN where the mean is not positive.
    pub cv: Array2<f64>,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorSummary {
    /// Population standard deviation per pixel.
    pub fn std(&self) -> Array2<f64> {
        Zip::from(self.mean.values())
            .and(self.second_moment.values())
            .map_collect(|&m, &s| (s - m * m).max(0.0).sqrt())
    }
}

/// Accumulates thinned samples.
#[derive(Debug, Clone)]
pub(crate) struct Accumulator {
    sum: Array2<f64>,
    sum_sq: Array2<f64>,
    n: usize,
    keep: bool,
    samples: Vec<Array2<f64>>,
}

impl Accumulator {
    pub(crate) fn new(shape: (usize, usize), keep: bool) -> Self {
        Self {
            sum: Array2::zeros(shape),
            sum_sq: Array2::zeros(shape),
            n: 0,
            keep,
            samples: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, sample: Array2<f64>) {
        Zip::from(&mut self.sum)
            .and(&mut self.sum_sq)
            .and(&sample)
            .for_each(|s, q, &v| {
                *s += v;
                *q += v * v;
            });
        self.n += 1;
        if self.keep {
            self.samples.push(sample);
        }
    }

    pub(crate) fn finish(
        self,
        pixel_pitch: f64,
        diagnostics: ChainDiagnostics,
    ) -> Result<PosteriorSummary> {
        if self.n == 0 {
            return Err(Error::invalid("no samples were accumulated"));
        }
        let n = self.n as f64;
        let mean = self.sum.mapv(|v| v / n);
        let second = self.sum_sq.mapv(|v| v / n);
        let cv = crate::metrics::coefficient_of_variation(mean.view(), second.view());
        let retained = self
            .samples
            .into_iter()
            .map(|s| ImageGrid::new(s, pixel_pitch, Role::Object))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorSummary {
            mean: ImageGrid::new(mean, pixel_pitch, Role::Object)?,
            second_moment: ImageGrid::new(second, pixel_pitch, Role::Object)?,
            n_accumulated: self.n,
            retained_samples: retained,
            cv,
            diagnostics,
        })
    }
}

/// State owned by one chunk: its interior plus halo copies of the
/// neighbouring object (out to `2h`) and photon counts (out to `h`).
#[derive(Debug, Clone)]
pub struct ChunkSampler {
    pub(crate) interior: Rect,
    /// Object window, `interior` grown by `2h` and clipped to the image.
    window: Rect,
    /// Pixels whose expected count depends on the interior, `interior`
    /// grown by `h`.
    band: Rect,
    rho: Array2<f64>,
    phi: Array2<f64>,
    mu: Array2<f64>,
    fresh_mu: Array2<f64>,
    raw: Array2<f64>,
    cal: Vec<PixelCalibration>,
    kernel: Array2<f64>,
    prior: IncrementalPrior,
    /// Whole-image object used for the spectrum: own interior live, other
    /// chunks as last loaded.
    composite: Array2<f64>,
    rng: StreamRng,
    photons: PhotonSampler,
    pub(crate) stats: ChainDiagnostics,
}

impl ChunkSampler {
    pub fn new(
        model: &Model,
        interior: Rect,
        rho0: ArrayView2<f64>,
        phi0: ArrayView2<f64>,
        rng: StreamRng,
    ) -> Self {
        let shape = model.shape();
        let h = model.half_support();
        let window = interior.grow(2 * h, shape);
        let band = interior.grow(h, shape);
        let rho = rho0.slice(window.slice()).to_owned();
        let phi = phi0.slice(window.slice()).to_owned();
        let raw = model.raw().values().slice(window.slice()).to_owned();
        let mut cal = Vec::with_capacity(window.len());
        for r in window.r0..window.r1 {
            for c in window.c0..window.c1 {
                cal.push(model.camera().pixel(r, c));
            }
        }
        Self {
            interior,
            window,
            band,
            mu: Array2::zeros(rho.dim()),
            fresh_mu: Array2::zeros(rho.dim()),
            rho,
            phi,
            raw,
            cal,
            kernel: model.kernel().clone(),
            prior: IncrementalPrior::new(model.prior()),
            composite: rho0.to_owned(),
            rng,
            photons: PhotonSampler::new(),
            stats: ChainDiagnostics::default(),
        }
    }

    pub fn interior(&self) -> Rect {
        self.interior
    }

    pub fn window(&self) -> Rect {
        self.window
    }

    pub fn band(&self) -> Rect {
        self.band
    }

    fn local(&self, r: usize, c: usize) -> (usize, usize) {
        (r - self.window.r0, c - self.window.c0)
    }

    /// Object values over the window (interior and halo).
    pub fn window_object(&self) -> ArrayView2<'_, f64> {
        self.rho.view()
    }

    /// Photon counts over the window; only the band is kept current.
    pub fn window_photons(&self) -> ArrayView2<'_, f64> {
        self.phi.view()
    }

    pub fn interior_object(&self) -> Array2<f64> {
        self.rho
            .slice(self.interior.relative_to(&self.window).slice())
            .to_owned()
    }

    pub fn interior_photons(&self) -> Array2<f64> {
        self.phi
            .slice(self.interior.relative_to(&self.window).slice())
            .to_owned()
    }

    /// Copy another chunk's published interior into the halos and the
    /// spectrum composite. `src` covers `rect` exactly.
    pub fn load_foreign(
        &mut self,
        rect: Rect,
        rho: ArrayView2<f64>,
        phi: ArrayView2<f64>,
        halo: bool,
    ) {
        self.composite.slice_mut(rect.slice()).assign(&rho);
        if !halo {
            return;
        }
        if let Some(overlap) = rect.intersect(&self.window) {
            let src = overlap.relative_to(&rect);
            let dst = overlap.relative_to(&self.window);
            self.rho
                .slice_mut(dst.slice())
                .assign(&rho.slice(src.slice()));
        }
        if let Some(overlap) = rect.intersect(&self.band) {
            let src = overlap.relative_to(&rect);
            let dst = overlap.relative_to(&self.window);
            self.phi
                .slice_mut(dst.slice())
                .assign(&phi.slice(src.slice()));
        }
    }

    /// Expected counts over the band from the window object.
    fn convolve_band(&self, out: &mut Array2<f64>) {
        let h = self.kernel.nrows() / 2;
        let band = self.band.relative_to(&self.window);
        let (rows, cols) = self.rho.dim();
        for r in band.r0..band.r1 {
            for c in band.c0..band.c1 {
                let mut acc = 0.0;
                let m0 = r.saturating_sub(h);
                let m1 = (r + h).min(rows - 1);
                let n0 = c.saturating_sub(h);
                let n1 = (c + h).min(cols - 1);
                for m in m0..=m1 {
                    let kr = r + h - m;
                    for n in n0..=n1 {
                        acc += self.rho[[m, n]] * self.kernel[[kr, c + h - n]];
                    }
                }
                out[[r, c]] = acc;
            }
        }
    }

    /// Relative drift between the maintained expected counts and a fresh
    /// convolution of the current window.
    fn check_cache(&mut self) {
        let mut fresh = std::mem::take(&mut self.fresh_mu);
        self.convolve_band(&mut fresh);
        let band = self.band.relative_to(&self.window);
        let cached = self.mu.slice(band.slice());
        let fresh_band = fresh.slice(band.slice());
        let scale = fresh_band.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = Zip::from(&cached)
            .and(&fresh_band)
            .fold(0.0f64, |m, a, b| m.max((a - b).abs()));
        let divergence = if scale > 0.0 { worst / scale } else { worst };
        self.stats.max_cache_divergence = self.stats.max_cache_divergence.max(divergence);
        if divergence > CACHE_TOLERANCE {
            self.stats.forced_refreshes += 1;
        }
        self.fresh_mu = fresh;
    }

    /// One Gibbs sweep over the interior. Halos must already hold the
    /// neighbours' previous-iteration state.
    pub fn sweep(&mut self, proposal_sd: f64, refresh_interval: usize) {
        let mut mu = std::mem::take(&mut self.mu);
        self.convolve_band(&mut mu);
        self.mu = mu;
        self.resample_photons();
        if !self.prior.is_flat() {
            self.prior.rebuild(self.composite.view());
            self.stats.spectrum_rebuilds += 1;
        }
        let h = self.kernel.nrows() / 2;
        let (wr, wc) = self.rho.dim();
        for gr in self.interior.r0..self.interior.r1 {
            for gc in self.interior.c0..self.interior.c1 {
                let (r, c) = self.local(gr, gc);
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let eps = proposal_sd * z;
                let old = self.rho[[r, c]];
                let new = old * eps.exp();
                let delta = new - old;
                self.stats.proposals += 1;

                let r0 = r.saturating_sub(h);
                let r1 = (r + h).min(wr - 1);
                let c0 = c.saturating_sub(h);
                let c1 = (c + h).min(wc - 1);
                let mut d_ll = 0.0;
                for n0 in r0..=r1 {
                    let kr = n0 + h - r;
                    for n1 in c0..=c1 {
                        let k = self.kernel[[kr, n1 + h - c]];
                        if k == 0.0 {
                            continue;
                        }
                        let mu = self.mu[[n0, n1]];
                        let mu_new = mu + delta * k;
                        let phi = self.phi[[n0, n1]];
                        if mu_new <= 0.0 {
                            if phi > 0.0 {
                                d_ll = f64::NEG_INFINITY;
                            }
                            continue;
                        }
                        if phi > 0.0 {
                            d_ll += phi * (mu_new / mu).ln();
                        }
                        d_ll -= mu_new - mu;
                    }
                }
                let d_lp = if d_ll == f64::NEG_INFINITY {
                    0.0
                } else {
                    self.prior.propose((gr, gc), delta)
                };
                let log_ratio = d_ll + d_lp + eps;
                let accept = if log_ratio >= 0.0 {
                    true
                } else if log_ratio.is_nan() {
                    false
                } else {
                    let u: f64 = self.rng.random();
                    u.ln() < log_ratio
                };
                if !accept {
                    continue;
                }
                self.stats.accepted += 1;
                self.rho[[r, c]] = new;
                self.composite[[gr, gc]] = new;
                for n0 in r0..=r1 {
                    let kr = n0 + h - r;
                    for n1 in c0..=c1 {
                        self.mu[[n0, n1]] += delta * self.kernel[[kr, n1 + h - c]];
                    }
                }
                self.prior.commit();
                if !self.prior.is_flat() && self.prior.updates_since_rebuild() >= refresh_interval {
                    self.prior.rebuild(self.composite.view());
                    self.stats.spectrum_rebuilds += 1;
                }
            }
        }
        self.check_cache();
    }

    fn resample_photons(&mut self) {
        let wc = self.window.cols();
        for gr in self.interior.r0..self.interior.r1 {
            for gc in self.interior.c0..self.interior.c1 {
                let (r, c) = self.local(gr, gc);
                let cal = self.cal[r * wc + c];
                let draw = self.photons.sample(
                    self.raw[[r, c]],
                    self.mu[[r, c]].max(0.0),
                    cal,
                    &mut self.rng,
                );
                self.phi[[r, c]] = draw as f64;
            }
        }
    }
}

/// Single-chunk sampler run: the sequential reference semantics.
pub fn run_chain(
    raw: &ImageGrid,
    psf: &Psf,
    camera: &CameraMap,
    config: &SamplerConfig,
) -> Result<PosteriorSummary> {
    let model = Model::new(raw.clone(), psf.clone(), camera.clone())?;
    run_model(&model, config)
}

/// [`run_chain`] for a prebuilt model.
pub fn run_model(model: &Model, config: &SamplerConfig) -> Result<PosteriorSummary> {
    config.validate(model.half_support())?;
    let layout = parallel::single_chunk_layout(model.shape(), model.half_support());
    parallel::run_layout(model, config, &layout, 1)
}

/// One sweep of a single chunk in isolation, without halo exchange.
pub fn gibbs_sweep_chunk(chunk: &mut ChunkSampler, config: &SamplerConfig) {
    chunk.sweep(config.proposal_sd, config.refresh_interval);
}
