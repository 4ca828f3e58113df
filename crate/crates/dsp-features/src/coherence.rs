use crate::error::{FeatureError, FeatureResult};
use crate::welch::WelchSpectra;

/// Auto spectra below this fraction of their own maximum are floored to it
/// before dividing.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Magnitude-squared coherence of one pair per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceProfile {
    pub pair: (usize, usize),
    pub values: Vec<f64>,
    pub spectra: WelchSpectra,
}

impl CoherenceProfile {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn floor_for(psd: &[f64], side: &str) -> FeatureResult<f64> {
    let peak = psd.iter().copied().fold(0.0, f64::max);
    if !(peak.is_finite() && peak > 0.0) {
        return Err(FeatureError::DegenerateSignal(format!(
            "{side} channel has no power at any frequency"
        )));
    }
    Ok(DENOMINATOR_FLOOR * peak)
}

/// `|g_ij|^2 / (g_ii g_jj)` per bin, with each auto spectrum floored at a
/// small fraction of its maximum.
pub fn coherence(spectra: &WelchSpectra) -> FeatureResult<CoherenceProfile> {
    if spectra.psd_ii.len() != spectra.psd_jj.len() || spectra.psd_ii.len() != spectra.csd_ij.len() {
        return Err(FeatureError::Shape("spectra have different frequency grids".into()));
    }
    let floor_i = floor_for(&spectra.psd_ii, "first")?;
    let floor_j = floor_for(&spectra.psd_jj, "second")?;
    let values = spectra
        .csd_ij
        .iter()
        .zip(spectra.psd_ii.iter().zip(&spectra.psd_jj))
        .map(|(g, (gi, gj))| g.norm_sqr() / (gi.max(floor_i) * gj.max(floor_j)))
        .collect();
    Ok(CoherenceProfile {
        pair: spectra.pair,
        values,
        spectra: spectra.clone(),
    })
}
