//! Image-quality metrics and posterior uncertainty summaries.
//!
//! PSNR takes its peak from the reference image unless one is given. Standard
//! deviations are population (divide by N) values, matching the streaming
//! moments kept by the sampler.

use ndarray::{Array2, ArrayView2, Zip};
use serde::Serialize;

use crate::error::{check_shape, Error, Result};
use crate::fft::Fft2;
use crate::grid::ImageGrid;
use crate::inference::PosteriorSummary;
use crate::optics::radial_frequencies;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Means below this are treated as zero when forming CV.
pub const CV_MEAN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub rmse: f64,
    pub n_pixels: usize,
    pub max_value_used: f64,
}

pub fn rmse_values(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_shape(a.dim(), b.dim())?;
    if a.is_empty() {
        return Err(Error::invalid("cannot compare empty images"));
    }
    let sum = Zip::from(&a)
        .and(&b)
        .fold(0.0, |acc, x, y| acc + (x - y) * (x - y));
    Ok((sum / a.len() as f64).sqrt())
}

pub fn rmse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    rmse_values(a.view(), b.view())
}

/// `20 log10(max / rmse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_rmse(rmse: f64, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(Error::invalid(format!(
            "PSNR peak must be positive, got {max_value}"
        )));
    }
    if rmse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (max_value / rmse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr_values(
    a: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    max_value: Option<f64>,
) -> Result<f64> {
    Ok(compare_values(a, reference, max_value)?.psnr_db)
}

pub fn psnr(a: &ImageGrid, reference: &ImageGrid, max_value: Option<f64>) -> Result<f64> {
    psnr_values(a.view(), reference.view(), max_value)
}

pub fn compare_values(
    a: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    max_value: Option<f64>,
) -> Result<MetricReport> {
    let rmse = rmse_values(a, reference)?;
    let max_value =
        max_value.unwrap_or_else(|| reference.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(MetricReport {
        psnr_db: psnr_from_rmse(rmse, max_value)?,
        rmse,
        n_pixels: a.len(),
        max_value_used: max_value,
    })
}

pub fn compare(
    a: &ImageGrid,
    reference: &ImageGrid,
    max_value: Option<f64>,
) -> Result<MetricReport> {
    compare_values(a.view(), reference.view(), max_value)
}

/// Per-pixel `sqrt(max(E[x^2] - E[x]^2, 0)) / E[x]`; NaN where the mean is
/// below [`CV_MEAN_FLOOR`].
pub fn coefficient_of_variation(
    mean: ArrayView2<f64>,
    second_moment: ArrayView2<f64>,
) -> Array2<f64> {
    Zip::from(&mean).and(&second_moment).map_collect(|&m, &s| {
        if m < CV_MEAN_FLOOR {
            f64::NAN
        } else {
            (s - m * m).max(0.0).sqrt() / m
        }
    })
}

/// CV map of a posterior summary. Needs at least two samples.
pub fn cv_map(summary: &PosteriorSummary) -> Result<Array2<f64>> {
    if summary.n_accumulated < 2 {
        return Err(Error::invalid(format!(
            "CV needs at least 2 samples, got {}",
            summary.n_accumulated
        )));
    }
    Ok(coefficient_of_variation(
        summary.mean.view(),
        summary.second_moment.view(),
    ))
}

/// Mean over the finite entries; NaN when there are none.
pub fn finite_mean(values: ArrayView2<f64>) -> f64 {
    let (sum, n) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean of `values` over the top and bottom tenth of pixels ranked by
/// `ranking`, as `(brightest, darkest)`. Non-finite values are skipped.
pub fn decile_means(values: ArrayView2<f64>, ranking: ArrayView2<f64>) -> Result<(f64, f64)> {
    check_shape(values.dim(), ranking.dim())?;
    let mut order: Vec<usize> = (0..ranking.len()).collect();
    let rank: Vec<f64> = ranking.iter().copied().collect();
    let vals: Vec<f64> = values.iter().copied().collect();
    order.sort_by(|&a, &b| rank[a].total_cmp(&rank[b]).then(a.cmp(&b)));
    let n = (order.len() / 10).max(1);
    let mean_of = |idx: &[usize]| {
        let (s, k) = idx
            .iter()
            .map(|&i| vals[i])
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
        if k == 0 {
            f64::NAN
        } else {
            s / k as f64
        }
    };
    let darkest = mean_of(&order[..n]);
    let brightest = mean_of(&order[order.len() - n..]);
    Ok((brightest, darkest))
}

/// Squared DFT magnitudes.
pub fn power_spectrum(image: ArrayView2<f64>) -> Array2<f64> {
    Fft2::new(image.dim())
        .forward_real(image)
        .mapv(|z| z.norm_sqr())
}

/// Fraction of `sum |F|^2` (DC included) in bins whose radial frequency
/// exceeds `cutoff` (cycles per nm).
pub fn energy_beyond_cutoff(image: ArrayView2<f64>, pixel_pitch: f64, cutoff: f64) -> f64 {
    energy_split(image, pixel_pitch, cutoff, true)
}

/// As [`energy_beyond_cutoff`] with the DC bin left out of both sums.
pub fn ac_energy_beyond_cutoff(image: ArrayView2<f64>, pixel_pitch: f64, cutoff: f64) -> f64 {
    energy_split(image, pixel_pitch, cutoff, false)
}

fn energy_split(image: ArrayView2<f64>, pixel_pitch: f64, cutoff: f64, with_dc: bool) -> f64 {
    let power = power_spectrum(image);
    let freq = radial_frequencies(image.dim(), pixel_pitch);
    let mut total = 0.0;
    let mut beyond = 0.0;
    for (((k0, k1), &p), &f) in power.indexed_iter().zip(freq.iter()) {
        if !with_dc && k0 == 0 && k1 == 0 {
            continue;
        }
        total += p;
        if f > cutoff {
            beyond += p;
        }
    }
    if total > 0.0 {
        beyond / total
    } else {
        0.0
    }
}

/// One ring of a radially averaged spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialBin {
    /// Ring centre in cycles per nm.
    pub frequency: f64,
    pub mean_magnitude: f64,
    pub mean_power: f64,
    pub count: usize,
}

/// Fourier magnitudes averaged over rings one frequency step wide, the step
/// being that of the longer image axis.
pub fn radial_spectrum(image: ArrayView2<f64>, pixel_pitch: f64) -> Vec<RadialBin> {
    let (rows, cols) = image.dim();
    let power = power_spectrum(image);
    let freq = radial_frequencies(image.dim(), pixel_pitch);
    let step = 1.0 / (rows.max(cols) as f64 * pixel_pitch);
    let n_bins = (freq.iter().copied().fold(0.0, f64::max) / step).round() as usize + 1;
    let mut mag = vec![0.0; n_bins];
    let mut pow = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &f) in power.iter().zip(freq.iter()) {
        let b = ((f / step).round() as usize).min(n_bins - 1);
        mag[b] += p.sqrt();
        pow[b] += p;
        count[b] += 1;
    }
    (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| RadialBin {
            frequency: b as f64 * step,
            mean_magnitude: mag[b] / count[b] as f64,
            mean_power: pow[b] / count[b] as f64,
            count: count[b],
        })
        .collect()
}

/// Lag-`lag` autocorrelation of a scalar series (biased estimator).
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n || n < 2 {
        return f64::NAN;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag)
        .map(|i| (series[i] - mean) * (series[i + lag] - mean))
        .sum();
    cov / var
}

/// One row of a metrics table: `method,step,psnr_db,rmse`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub step: usize,
    pub psnr_db: f64,
    pub rmse: f64,
}

impl MetricsRow {
    pub fn new(method: impl Into<String>, step: usize, report: &MetricReport) -> Self {
        Self {
            method: method.into(),
            step,
            psnr_db: report.psnr_db,
            rmse: report.rmse,
        }
    }
}
