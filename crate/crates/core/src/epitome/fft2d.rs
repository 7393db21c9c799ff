use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2-D DFT over a row-major `rows × cols` grid.
pub(crate) struct Fft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
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

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(buf, scratch, &*self.row_fwd, &*self.col_fwd);
    }

    /// Inverse transform without the `1 / (rows * cols)` factor.
    pub(crate) fn inverse(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(buf, scratch, &*self.row_inv, &*self.col_inv);
    }

    fn run(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>, row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        debug_assert_eq!(buf.len(), self.len());
        let (rows, cols) = (self.rows, self.cols);
        if cols > 1 {
            row.process(buf);
        }
        if rows > 1 {
            scratch.resize(self.len(), Complex64::default());
            for r in 0..rows {
                for c in 0..cols {
                    scratch[c * rows + r] = buf[r * cols + c];
                }
            }
            col.process(scratch);
            for r in 0..rows {
                for c in 0..cols {
                    buf[r * cols + c] = scratch[c * rows + r];
                }
            }
        }
    }
}
