//! Multi-dimensional FFT on cubic periodic grids and Fourier-multiplier
//! application.
//!
//! A field sampled on `res` points per axis is embedded in a periodic grid of
//! `2 * res` points per axis (zero padding). Frequencies follow the unitary
//! transform convention, so a multiplier `m(ξ)` acts as `f ↦ F⁻¹[m · F f]`
//! and `ξ_k = 2πk / (len · h)`.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// A periodic cube `len^dim` with grid spacing `spacing`.
#[derive(Clone)]
pub struct Torus {
    pub dim: usize,
    pub len: usize,
    pub spacing: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Torus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Torus")
            .field("dim", &self.dim)
            .field("len", &self.len)
            .field("spacing", &self.spacing)
            .finish()
    }
}

impl Torus {
    pub fn new(dim: usize, len: usize, spacing: f64) -> Self {
        let mut planner = FftPlanner::new();
        Torus {
            dim,
            len,
            spacing,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn total(&self) -> usize {
        self.len.pow(self.dim as u32)
    }

    /// Angular frequencies along one axis in FFT index order.
    pub fn axis_frequencies(&self) -> Vec<f64> {
        let n = self.len as i64;
        let scale = 2.0 * std::f64::consts::PI / (self.len as f64 * self.spacing);
        (0..n)
            .map(|k| {
                let kk = if k < n / 2 || n == 1 { k } else { k - n };
                kk as f64 * scale
            })
            .collect()
    }

    /// Squared frequency magnitude at every point of the spectral grid.
    pub fn frequency_norm_sq(&self) -> Vec<f64> {
        let axis = self.axis_frequencies();
        let mut out = vec![0.0; self.total()];
        for (idx, o) in out.iter_mut().enumerate() {
            let mut rem = idx;
            let mut s = 0.0;
            for _ in 0..self.dim {
                let k = rem % self.len;
                rem /= self.len;
                s += axis[k] * axis[k];
            }
            *o = s;
        }
        out
    }

    /// Frequency component `axis` (0 = slowest) at each spectral index.
    pub fn frequency_component(&self, axis_index: usize) -> Vec<f64> {
        let axis = self.axis_frequencies();
        let stride = self.len.pow((self.dim - 1 - axis_index) as u32);
        (0..self.total())
            .map(|idx| axis[(idx / stride) % self.len])
            .collect()
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the `1/total` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.total() as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.total());
        let len = self.len;
        // Last axis is contiguous.
        data.par_chunks_mut(len).for_each(|row| plan.process(row));
        for axis in 0..self.dim.saturating_sub(1) {
            let stride = len.pow((self.dim - 1 - axis) as u32);
            let block = stride * len;
            data.par_chunks_mut(block).for_each(|chunk| {
                let mut line = vec![Complex64::new(0.0, 0.0); len];
                let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
                for offset in 0..stride {
                    for k in 0..len {
                        line[k] = chunk[offset + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..len {
                        chunk[offset + k * stride] = line[k];
                    }
                }
            });
        }
    }
}
