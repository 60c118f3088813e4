//! Thin wrapper around rustfft plans plus the scratch buffers the hot
//! paths reuse between transforms.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward/inverse FFT plans for one signal length.
pub struct FftPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
    scratch_len: usize,
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        FftPlan {
            forward,
            inverse,
            len,
            scratch_len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn make_scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.scratch_len]
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process_with_scratch(buf, scratch);
    }

    /// In-place inverse transform, scaled by 1/len so that
    /// `inverse(forward(x)) == x`.
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process_with_scratch(buf, scratch);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real signal into a freshly scaled buffer.
    pub fn forward_real(&self, x: &[f64], scratch: &mut [Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf, scratch);
        buf
    }
}
