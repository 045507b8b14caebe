//! Richardson-Lucy deconvolution.
//!
//! The update is `x' = x * correlate(y / (Hx + eps)) / correlate(1)`, where
//! `H` is convolution with zero boundaries. The normalizer equals one away
//! from the border; near the border it accounts for light blurred out of the
//! frame, which keeps the iteration an exact EM step for the Poisson
//! likelihood there too.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{check_shape, Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::metrics::{compare_values, MetricReport};
use crate::optics::{Convolver, Psf};
use crate::special::ln_factorial;

/// Guards the data/model ratio against division by zero.
pub const DIVISION_GUARD: f64 = 1e-12;

/// Iteration checkpoints of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RlTrace {
    /// Estimates at the requested iterations, in increasing order.
    pub snapshots: Vec<(usize, ImageGrid)>,
    /// Metrics against the reference after every iteration, if one was
    /// given; entry `i` belongs to iteration `i + 1`.
    pub metrics: Vec<MetricReport>,
    /// Poisson log-likelihood of the data after every iteration.
    pub log_likelihood: Vec<f64>,
    pub final_estimate: ImageGrid,
}

impl RlTrace {
    /// Iteration with the highest PSNR.
    pub fn best_iteration(&self) -> Option<usize> {
        self.metrics
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.psnr_db.total_cmp(&b.1.psnr_db))
            .map(|(i, _)| i + 1)
    }
}

/// Convolution plans reused across iterations.
#[derive(Debug, Clone)]
pub struct RlOperator {
    conv: Convolver,
    normalizer: Array2<f64>,
}

impl RlOperator {
    pub fn new(psf: &Psf, shape: (usize, usize)) -> Self {
        let conv = Convolver::new(psf, shape);
        let normalizer = conv.correlate(Array2::ones(shape).view());
        Self { conv, normalizer }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.normalizer.dim()
    }

    pub fn blur(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.conv.convolve(x).mapv(|v| v.max(0.0))
    }

    pub fn step(&self, estimate: ArrayView2<f64>, data: ArrayView2<f64>) -> Array2<f64> {
        let model = self.blur(estimate);
        let ratio = Zip::from(&data)
            .and(&model)
            .map_collect(|&y, &m| y / (m + DIVISION_GUARD));
        let back = self.conv.correlate(ratio.view());
        Zip::from(&estimate)
            .and(&back)
            .and(&self.normalizer)
            .map_collect(|&x, &b, &n| if n > 0.0 { (x * b / n).max(0.0) } else { x })
    }
}

fn check_inputs(estimate: &ImageGrid, data: &ImageGrid, psf: &Psf) -> Result<()> {
    check_shape(data.shape(), estimate.shape())?;
    if data.values().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(
            "Richardson-Lucy data must be non-negative; correct gain and offset and clamp first",
        ));
    }
    if estimate.values().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(
            "Richardson-Lucy estimate must be non-negative",
        ));
    }
    if (psf.pixel_pitch() - data.pixel_pitch()).abs() > 1e-9 * data.pixel_pitch() {
        return Err(Error::invalid("PSF and image pixel pitch differ"));
    }
    Ok(())
}

/// One multiplicative update.
pub fn rl_step(estimate: &ImageGrid, data: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    check_inputs(estimate, data, psf)?;
    let op = RlOperator::new(psf, data.shape());
    ImageGrid::new(
        op.step(estimate.view(), data.view()),
        data.pixel_pitch(),
        Role::Object,
    )
}

/// `sum_n [y_n ln m_n - m_n - ln y_n!]` with `m = Hx`; `y` is rounded to
/// whole counts for the factorial.
pub fn poisson_log_likelihood(
    estimate: ArrayView2<f64>,
    data: ArrayView2<f64>,
    op: &RlOperator,
) -> f64 {
    let model = op.blur(estimate);
    Zip::from(&data).and(&model).fold(0.0, |acc, &y, &m| {
        let term = if y == 0.0 {
            -m
        } else if m == 0.0 {
            f64::NEG_INFINITY
        } else {
            y * m.ln() - m
        };
        acc + term - ln_factorial(y.round().max(0.0) as u64)
    })
}

/// Iterate from a flat image at the data mean, keeping snapshots at
/// `checkpoints` and metrics against `reference`.
pub fn rl_run(
    data: &ImageGrid,
    psf: &Psf,
    n_iters: usize,
    checkpoints: &[usize],
    reference: Option<&ImageGrid>,
) -> Result<RlTrace> {
    if n_iters == 0 {
        return Err(Error::invalid(
            "Richardson-Lucy needs at least one iteration",
        ));
    }
    if let Some(r) = reference {
        check_shape(data.shape(), r.shape())?;
    }
    let start = ImageGrid::filled(data.shape(), data.mean(), data.pixel_pitch(), Role::Object)?;
    check_inputs(&start, data, psf)?;
    let mut wanted: Vec<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&c| c >= 1 && c <= n_iters)
        .collect();
    wanted.sort_unstable();
    wanted.dedup();

    let op = RlOperator::new(psf, data.shape());
    let mut x = start.into_values();
    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut metrics = Vec::new();
    let mut log_likelihood = Vec::with_capacity(n_iters);
    let mut next = wanted.iter().peekable();
    for it in 1..=n_iters {
        x = op.step(x.view(), data.view());
        log_likelihood.push(poisson_log_likelihood(x.view(), data.view(), &op));
        if let Some(r) = reference {
            metrics.push(compare_values(x.view(), r.view(), None)?);
        }
        if next.peek() == Some(&&it) {
            next.next();
            snapshots.push((
                it,
                ImageGrid::new(x.clone(), data.pixel_pitch(), Role::Object)?,
            ));
        }
    }
    Ok(RlTrace {
        snapshots,
        metrics,
        log_likelihood,
        final_estimate: ImageGrid::new(x, data.pixel_pitch(), Role::Object)?,
    })
}
