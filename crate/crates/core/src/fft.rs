//! Two-dimensional DFT on row-major complex arrays.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = sum_m x[m] exp(-2 pi i (k0 m0 / R + k1 m1 / C))`, and the inverse
//! carries the `1 / (R C)` factor. Under this convention Parseval reads
//! `sum |X|^2 = R C sum |x|^2`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Cached plans for one grid shape. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(shape: (usize, usize)) -> Self {
        let (rows, cols) = shape;
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, false);
    }

    /// Inverse transform including the 1/N normalization.
    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    /// Forward transform of a real array.
    pub fn forward_real(&self, data: ArrayView2<f64>) -> Array2<Complex64> {
        let mut out = data.mapv(|v| Complex64::new(v, 0.0));
        self.forward(&mut out);
        out
    }

    fn transform(&self, data: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(
            data.dim(),
            (self.rows, self.cols),
            "FFT plan shape mismatch"
        );
        let (row_plan, col_plan) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().into_owned();
        }
        let buf = data.as_slice_mut().expect("standard layout");
        row_plan.process(buf);

        // Columns: transpose, transform rows, transpose back.
        let mut t = vec![Complex64::default(); self.rows * self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[c * self.rows + r] = buf[r * self.cols + c];
            }
        }
        col_plan.process(&mut t);
        for c in 0..self.cols {
            for r in 0..self.rows {
                buf[r * self.cols + c] = t[c * self.rows + r];
            }
        }
    }
}
