//! Point spread functions, optical transfer functions and the convolution
//! operators of the forward model.
//!
//! Convolution uses zero padding: object pixels outside the grid are zero and
//! light blurred past the grid edge is lost. The forward operator is therefore
//! exactly linear, and [`correlate`] is its exact adjoint.

use ndarray::{s, Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::fft::Fft2;
use crate::grid::{ImageGrid, Role};
use crate::special::bessel_j1;

/// Gaussian width in units of wavelength / NA for the widefield approximation.
pub const GAUSSIAN_SIGMA_FACTOR: f64 = 0.21;

/// Fraction of kernel mass allowed outside the half support.
pub const SUPPORT_MASS_TOLERANCE: f64 = 1e-6;

// Zeros of J1 beyond the origin, used to size Airy kernels.
const J1_ZEROS: [f64; 3] = [
    3.831_705_970_207_512,
    7.015_586_669_815_619,
    10.173_468_135_062_722,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfModel {
    Gaussian,
    Airy,
    /// User-supplied or synthetic kernel with no analytic model.
    Custom,
}

/// Discretized, unit-mass point spread function with an odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    values: Array2<f64>,
    pixel_pitch: f64,
    half_support: usize,
    model: PsfModel,
    /// Incoherent cutoff 2 NA / lambda in cycles per nm, when known.
    cutoff_frequency: Option<f64>,
}

impl Psf {
    /// Build from raw kernel values. The kernel is normalized to unit mass.
    pub fn from_values(values: Array2<f64>, pixel_pitch: f64) -> Result<Self> {
        Self::build(values, pixel_pitch, PsfModel::Custom, None)
    }

    /// Single-pixel identity kernel.
    pub fn delta(pixel_pitch: f64) -> Result<Self> {
        Self::from_values(Array2::ones((1, 1)), pixel_pitch)
    }

    fn build(
        mut values: Array2<f64>,
        pixel_pitch: f64,
        model: PsfModel,
        cutoff_frequency: Option<f64>,
    ) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::invalid(format!(
                "PSF must be square with an odd side, got {r}x{c}"
            )));
        }
        if !(pixel_pitch > 0.0) {
            return Err(Error::invalid("PSF pixel pitch must be positive"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("PSF values must be finite and non-negative"));
        }
        let total = values.sum();
        if !(total > 0.0) {
            return Err(Error::invalid("PSF has zero mass"));
        }
        values.mapv_inplace(|v| v / total);
        let half_support = support_radius(&values);
        Ok(Self {
            values,
            pixel_pitch,
            half_support,
            model,
            cutoff_frequency,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    /// Geometric radius of the kernel array, `side / 2`.
    pub fn radius(&self) -> usize {
        self.side() / 2
    }

    /// Smallest centred square radius holding at least `1 - 1e-6` of the mass.
    pub fn half_support(&self) -> usize {
        self.half_support
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn model(&self) -> PsfModel {
        self.model
    }

    pub fn cutoff_frequency(&self) -> Option<f64> {
        self.cutoff_frequency
    }

    /// The kernel restricted to its half support, `(2h + 1)^2` values. Not
    /// renormalized; the discarded mass is below 1e-6.
    pub fn support_kernel(&self) -> Array2<f64> {
        let r = self.radius();
        let h = self.half_support;
        self.values
            .slice(s![r - h..=r + h, r - h..=r + h])
            .to_owned()
    }

    /// Kernel mirrored through its centre.
    pub fn mirrored(&self) -> Array2<f64> {
        self.values.slice(s![..;-1, ..;-1]).to_owned()
    }
}

/// Chebyshev radius around the centre enclosing `1 - SUPPORT_MASS_TOLERANCE`
/// of a unit-mass kernel.
fn support_radius(values: &Array2<f64>) -> usize {
    let r = values.nrows() / 2;
    for h in 0..r {
        let inner = values.slice(s![r - h..=r + h, r - h..=r + h]).sum();
        if inner >= 1.0 - SUPPORT_MASS_TOLERANCE {
            return h;
        }
    }
    r
}

fn check_optics(na: f64, wavelength: f64, pixel_pitch: f64, side: usize) -> Result<()> {
    if !(na > 0.0 && na <= 2.0) {
        return Err(Error::invalid(format!(
            "numerical aperture must lie in (0, 2], got {na}"
        )));
    }
    if !(wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    if !(pixel_pitch > 0.0) {
        return Err(Error::invalid(format!(
            "pixel pitch must be positive, got {pixel_pitch}"
        )));
    }
    if side.is_multiple_of(2) {
        return Err(Error::invalid(format!("PSF side must be odd, got {side}")));
    }
    Ok(())
}

/// Standard deviation of the widefield Gaussian PSF approximation in nm.
pub fn gaussian_sigma_nm(na: f64, wavelength: f64) -> f64 {
    GAUSSIAN_SIGMA_FACTOR * wavelength / na
}

/// Smallest odd side covering six standard deviations.
pub fn default_gaussian_side(na: f64, wavelength: f64, pixel_pitch: f64) -> usize {
    let span = 6.0 * gaussian_sigma_nm(na, wavelength) / pixel_pitch;
    odd_at_least(span)
}

/// Smallest odd side reaching the third dark Airy ring on both sides.
pub fn default_airy_side(na: f64, wavelength: f64, pixel_pitch: f64) -> usize {
    let ring = J1_ZEROS[2] * wavelength / (2.0 * std::f64::consts::PI * na);
    2 * (ring / pixel_pitch).ceil() as usize + 1
}

fn odd_at_least(x: f64) -> usize {
    let n = x.ceil().max(1.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

fn sample_radial(side: usize, pixel_pitch: f64, profile: impl Fn(f64) -> f64) -> Array2<f64> {
    let c = (side / 2) as f64;
    Array2::from_shape_fn((side, side), |(i, j)| {
        let dy = (i as f64 - c) * pixel_pitch;
        let dx = (j as f64 - c) * pixel_pitch;
        profile((dx * dx + dy * dy).sqrt())
    })
}

/// Isotropic Gaussian PSF with sigma = 0.21 lambda / NA, sampled at pixel
/// centres.
pub fn gaussian_psf(na: f64, wavelength: f64, pixel_pitch: f64, side: usize) -> Result<Psf> {
    check_optics(na, wavelength, pixel_pitch, side)?;
    let sigma = gaussian_sigma_nm(na, wavelength);
    if sigma < 0.5 * pixel_pitch {
        log::warn!(
            "PSF is undersampled: sigma {sigma:.1} nm is below half the pixel pitch {pixel_pitch} nm"
        );
    }
    let values = sample_radial(side, pixel_pitch, |r| (-0.5 * (r / sigma).powi(2)).exp());
    Psf::build(
        values,
        pixel_pitch,
        PsfModel::Gaussian,
        Some(2.0 * na / wavelength),
    )
}

/// Normalized Airy intensity `[2 J1(v) / v]^2` with `v = 2 pi NA r / lambda`;
/// equals 1 at the origin.
pub fn airy_intensity(r: f64, na: f64, wavelength: f64) -> f64 {
    let v = 2.0 * std::f64::consts::PI * na * r / wavelength;
    if v.abs() < 1e-8 {
        return 1.0;
    }
    let a = 2.0 * bessel_j1(v) / v;
    a * a
}

/// Airy-disk PSF sampled at pixel centres.
pub fn airy_psf(na: f64, wavelength: f64, pixel_pitch: f64, side: usize) -> Result<Psf> {
    check_optics(na, wavelength, pixel_pitch, side)?;
    let first_ring = J1_ZEROS[0] * wavelength / (2.0 * std::f64::consts::PI * na);
    // Nyquist for the incoherent cutoff 2 NA / lambda.
    if pixel_pitch > wavelength / (4.0 * na) {
        log::warn!(
            "PSF is undersampled: pixel pitch {pixel_pitch} nm exceeds Nyquist {:.1} nm (first ring at {first_ring:.1} nm)",
            wavelength / (4.0 * na)
        );
    }
    let values = sample_radial(side, pixel_pitch, |r| airy_intensity(r, na, wavelength));
    Psf::build(
        values,
        pixel_pitch,
        PsfModel::Airy,
        Some(2.0 * na / wavelength),
    )
}

/// Modulus of the PSF's DFT on an image-sized grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OtfSpectrum {
    magnitudes: Array2<f64>,
    /// Cycles per nm; `f64::INFINITY` when the PSF carries no optics.
    cutoff_frequency: f64,
    pixel_pitch: f64,
    /// True when the underlying optics pass nothing beyond the cutoff.
    band_limited: bool,
}

impl OtfSpectrum {
    pub fn new(magnitudes: Array2<f64>, pixel_pitch: f64, cutoff_frequency: f64) -> Result<Self> {
        if magnitudes.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "OTF magnitudes must be finite and non-negative",
            ));
        }
        Ok(Self {
            magnitudes,
            cutoff_frequency,
            pixel_pitch,
            band_limited: false,
        })
    }

    pub fn magnitudes(&self) -> &Array2<f64> {
        &self.magnitudes
    }

    pub fn cutoff_frequency(&self) -> f64 {
        self.cutoff_frequency
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn is_band_limited(&self) -> bool {
        self.band_limited
    }

    pub fn shape(&self) -> (usize, usize) {
        self.magnitudes.dim()
    }

    /// True for DFT bins whose radial frequency exceeds the cutoff.
    pub fn beyond_cutoff(&self) -> Array2<bool> {
        beyond_cutoff_mask(self.shape(), self.pixel_pitch, self.cutoff_frequency)
    }
}

/// Signed frequency of DFT bin `k` on an `n`-point axis, in cycles per sample.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k <= n_f / 2.0 {
        k / n_f
    } else {
        k / n_f - 1.0
    }
}

/// Radial frequency (cycles per nm) of every DFT bin.
pub fn radial_frequencies(shape: (usize, usize), pixel_pitch: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |(k0, k1)| {
        let f0 = bin_frequency(k0, shape.0);
        let f1 = bin_frequency(k1, shape.1);
        (f0 * f0 + f1 * f1).sqrt() / pixel_pitch
    })
}

pub fn beyond_cutoff_mask(shape: (usize, usize), pixel_pitch: f64, cutoff: f64) -> Array2<bool> {
    radial_frequencies(shape, pixel_pitch).mapv(|f| f > cutoff)
}

/// Zero-pad the PSF onto `grid_shape` with its centre at the origin bin and
/// return `|DFT|`.
pub fn otf_from_psf(psf: &Psf, grid_shape: (usize, usize)) -> Result<OtfSpectrum> {
    let side = psf.side();
    if grid_shape.0 < side || grid_shape.1 < side {
        return Err(Error::invalid(format!(
            "OTF grid {grid_shape:?} is smaller than the {side}x{side} PSF"
        )));
    }
    let plan = Fft2::new(grid_shape);
    let mut padded = wrapped_kernel(psf.values().view(), grid_shape);
    plan.forward(&mut padded);
    let magnitudes = padded.mapv(|z| z.norm());
    let cutoff = psf.cutoff_frequency().unwrap_or(f64::INFINITY);
    let mut otf = OtfSpectrum::new(magnitudes, psf.pixel_pitch(), cutoff)?;
    otf.band_limited = psf.model() == PsfModel::Airy;
    Ok(otf)
}

/// Place a centred odd kernel on a grid so its centre lands on index (0, 0),
/// wrapping negative offsets.
fn wrapped_kernel(kernel: ArrayView2<f64>, shape: (usize, usize)) -> Array2<Complex64> {
    let r = kernel.nrows() / 2;
    let mut out = Array2::<Complex64>::zeros(shape);
    for ((i, j), &v) in kernel.indexed_iter() {
        let di = (i as isize - r as isize).rem_euclid(shape.0 as isize) as usize;
        let dj = (j as isize - r as isize).rem_euclid(shape.1 as isize) as usize;
        out[[di, dj]] += Complex64::new(v, 0.0);
    }
    out
}

/// FFT convolution with zero boundaries, planned once for an image shape.
///
/// `convolve` computes `out[n] = sum_m x[m] psf[n - m + r]` and `correlate`
/// its adjoint `out[m] = sum_n y[n] psf[n - m + r]`, both on the image grid.
#[derive(Debug, Clone)]
pub struct Convolver {
    shape: (usize, usize),
    padded: (usize, usize),
    plan: Fft2,
    kernel_hat: Array2<Complex64>,
}

impl Convolver {
    pub fn new(psf: &Psf, shape: (usize, usize)) -> Self {
        let r = psf.radius();
        let padded = (shape.0 + 2 * r, shape.1 + 2 * r);
        let plan = Fft2::new(padded);
        let mut kernel_hat = wrapped_kernel(psf.values().view(), padded);
        plan.forward(&mut kernel_hat);
        Self {
            shape,
            padded,
            plan,
            kernel_hat,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn convolve(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.apply(x, false)
    }

    pub fn correlate(&self, y: ArrayView2<f64>) -> Array2<f64> {
        self.apply(y, true)
    }

    fn apply(&self, x: ArrayView2<f64>, adjoint: bool) -> Array2<f64> {
        assert_eq!(x.dim(), self.shape, "convolver shape mismatch");
        let (h, w) = self.shape;
        let mut buf = Array2::<Complex64>::zeros(self.padded);
        for ((i, j), &v) in x.indexed_iter() {
            buf[[i, j]] = Complex64::new(v, 0.0);
        }
        self.plan.forward(&mut buf);
        if adjoint {
            buf.zip_mut_with(&self.kernel_hat, |a, k| *a *= k.conj());
        } else {
            buf.zip_mut_with(&self.kernel_hat, |a, k| *a *= *k);
        }
        self.plan.inverse(&mut buf);
        buf.slice(s![..h, ..w]).mapv(|z| z.re)
    }
}

/// Replace round-off negatives by zero; real negative mass is an error.
fn clamp_roundoff(mut values: Array2<f64>) -> Result<Array2<f64>> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if -*v < tol {
                *v = 0.0;
            } else {
                return Err(Error::invalid(format!(
                    "convolution produced a negative value {v} beyond round-off"
                )));
            }
        }
    }
    Ok(values)
}

fn check_operand(image: &ImageGrid, psf: &Psf) -> Result<()> {
    if image.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            "convolution operand must be finite and non-negative",
        ));
    }
    if (image.pixel_pitch() - psf.pixel_pitch()).abs() > 1e-9 * psf.pixel_pitch() {
        return Err(Error::invalid(format!(
            "image pitch {} nm differs from PSF pitch {} nm",
            image.pixel_pitch(),
            psf.pixel_pitch()
        )));
    }
    Ok(())
}

/// Expected image `PSF (x) object`.
pub fn convolve(object: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    check_operand(object, psf)?;
    let out = Convolver::new(psf, object.shape()).convolve(object.view());
    ImageGrid::new(clamp_roundoff(out)?, object.pixel_pitch(), Role::Expected)
}

/// Adjoint of [`convolve`]: convolution with the mirrored PSF. The result
/// keeps the input's role.
pub fn correlate(image: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    check_operand(image, psf)?;
    let out = Convolver::new(psf, image.shape()).correlate(image.view());
    let role = match image.role() {
        Role::Photons | Role::Adu => Role::Expected,
        r => r,
    };
    ImageGrid::new(clamp_roundoff(out)?, image.pixel_pitch(), role)
}

/// Direct spatial convolution over the kernel support `(2h + 1)^2`, zero
/// boundaries. Used for local expected-image refreshes.
pub fn convolve_support_direct(x: ArrayView2<f64>, kernel: ArrayView2<f64>, out: &mut Array2<f64>) {
    check_shape(x.dim(), out.dim()).expect("direct convolution shape");
    let (rows, cols) = x.dim();
    let h = kernel.nrows() / 2;
    out.fill(0.0);
    for i in 0..rows {
        for j in 0..cols {
            let v = x[[i, j]];
            if v == 0.0 {
                continue;
            }
            let i0 = i.saturating_sub(h);
            let i1 = (i + h).min(rows - 1);
            let j0 = j.saturating_sub(h);
            let j1 = (j + h).min(cols - 1);
            for n0 in i0..=i1 {
                let kr = n0 + h - i;
                for n1 in j0..=j1 {
                    out[[n0, n1]] += v * kernel[[kr, n1 + h - j]];
                }
            }
        }
    }
}
