use std::cell::RefCell;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

pub use rustfft::num_complex::Complex64;

use crate::error::{FeatureError, FeatureResult};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Forward transform of a real signal, zero-padded to `len`.
pub(crate) fn real_fft_padded(signal: &[f64], len: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    forward_plan(len).process(&mut buf);
    buf
}

/// Unnormalized forward DFT, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
pub fn dft(signal: &[f64]) -> FeatureResult<Vec<Complex64>> {
    if signal.is_empty() {
        return Err(FeatureError::Shape("dft of an empty signal".into()));
    }
    Ok(real_fft_padded(signal, signal.len()))
}

pub fn dft_complex(signal: &[Complex64]) -> FeatureResult<Vec<Complex64>> {
    if signal.is_empty() {
        return Err(FeatureError::Shape("dft of an empty signal".into()));
    }
    let mut buf = signal.to_vec();
    forward_plan(buf.len()).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT with `1/N` scaling, so `idft(dft(x)) == x`.
pub fn idft(spectrum: &[Complex64]) -> FeatureResult<Vec<Complex64>> {
    if spectrum.is_empty() {
        return Err(FeatureError::Shape("idft of an empty spectrum".into()));
    }
    let mut buf = spectrum.to_vec();
    inverse_plan(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Real part of [`idft`].
pub fn idft_real(spectrum: &[Complex64]) -> FeatureResult<Vec<f64>> {
    Ok(idft(spectrum)?.into_iter().map(|v| v.re).collect())
}
