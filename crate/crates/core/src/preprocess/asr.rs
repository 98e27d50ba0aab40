//! Artifact subspace reconstruction, simplified PCA form: principal axes and
//! per-component RMS statistics from clean calibration data; windows whose
//! component RMS blows past the threshold are projected back onto the
//! remaining subspace.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal_io::Recording;

const MIN_CALIBRATION_S: f64 = 30.0;

/// Calibration output: orthonormal principal axes plus the per-component
/// windowed-RMS distribution of the calibration data.
#[derive(Debug, Clone)]
pub struct AsrModel {
    /// [m x m]; column j is the j-th principal axis.
    components: Array2<f64>,
    rms_mean: Vec<f64>,
    rms_std: Vec<f64>,
    pub window_s: f64,
    channel_names: Vec<String>,
}

impl AsrModel {
    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn rms_mean(&self) -> &[f64] {
        &self.rms_mean
    }

    pub fn rms_std(&self) -> &[f64] {
        &self.rms_std
    }
}

/// Fit the ASR model on clean baseline data (>= 30 s of scalp signal).
pub fn asr_calibrate(baseline: &Recording, window_s: f64) -> Result<AsrModel> {
    if !(window_s > 0.0) {
        return Err(Error::config(format!("window_s must be positive, got {window_s}")));
    }
    if baseline.duration_s() < MIN_CALIBRATION_S {
        return Err(Error::data(format!(
            "ASR calibration needs >= {MIN_CALIBRATION_S} s, got {:.1} s",
            baseline.duration_s()
        )));
    }
    let scalp = baseline.scalp_indices();
    let m = scalp.len();
    if m < 2 {
        return Err(Error::data("ASR needs >= 2 scalp channels".to_string()));
    }
    let n = baseline.n_samples();

    // channel means, then covariance of the demeaned scalp data
    let mut means = vec![0.0f64; m];
    for (k, &c) in scalp.iter().enumerate() {
        means[k] = baseline.samples.column(c).sum() / n as f64;
    }
    let mut cov = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (baseline.samples[[i, scalp[a]]] - means[a])
                    * (baseline.samples[[i, scalp[b]]] - means[b]);
            }
            acc /= n as f64;
            cov[(a, b)] = acc;
            cov[(b, a)] = acc;
        }
    }
    let eig = cov.symmetric_eigen();
    // order by eigenvalue descending, fix polarity deterministically
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut components = Array2::zeros((m, m));
    for (jj, &j) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(j);
        let mut imax = 0;
        for i in 0..m {
            if col[i].abs() > col[imax].abs() {
                imax = i;
            }
        }
        let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            components[[i, jj]] = sign * col[i];
        }
    }

    // windowed RMS per component over the calibration data
    let win = (window_s * baseline.fs).round() as usize;
    let n_win = n / win;
    if n_win < 2 {
        return Err(Error::data("calibration too short for the RMS window".to_string()));
    }
    let mut rms = vec![vec![0.0f64; n_win]; m];
    for w in 0..n_win {
        let lo = w * win;
        for comp in 0..m {
            let mut acc = 0.0;
            for i in lo..lo + win {
                let mut y = 0.0;
                for (k, &c) in scalp.iter().enumerate() {
                    y += baseline.samples[[i, c]] * components[[k, comp]];
                }
                acc += y * y;
            }
            rms[comp][w] = (acc / win as f64).sqrt();
        }
    }
    let mut rms_mean = vec![0.0f64; m];
    let mut rms_std = vec![0.0f64; m];
    for comp in 0..m {
        let mean = rms[comp].iter().sum::<f64>() / n_win as f64;
        let var =
            rms[comp].iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n_win as f64;
        rms_mean[comp] = mean;
        rms_std[comp] = var.sqrt();
    }

    Ok(AsrModel {
        components,
        rms_mean,
        rms_std,
        window_s,
        channel_names: scalp.iter().map(|&c| baseline.channel_names[c].clone()).collect(),
    })
}

/// Repair high-amplitude bursts: in each window, components whose RMS exceeds
/// mean + cutoff * std of the calibration distribution are zeroed and the
/// window reconstructed from the remaining subspace.
pub fn asr_clean(rec: &Recording, model: &AsrModel, cutoff: f64) -> Result<Recording> {
    let scalp = rec.scalp_indices();
    let names: Vec<&String> = scalp.iter().map(|&c| &rec.channel_names[c]).collect();
    if names.len() != model.channel_names.len()
        || names.iter().zip(&model.channel_names).any(|(a, b)| *a != b)
    {
        return Err(Error::data(
            "recording scalp channels do not match the ASR calibration".to_string(),
        ));
    }
    let m = scalp.len();
    let n = rec.n_samples();
    let win = (model.window_s * rec.fs).round() as usize;
    let mut out = rec.clone();
    let mut lo = 0;
    while lo < n {
        let hi = (lo + win).min(n);
        let len = hi - lo;
        // project onto components
        let mut comps = vec![0.0f64; len * m];
        for comp in 0..m {
            for i in 0..len {
                let mut y = 0.0;
                for (k, &c) in scalp.iter().enumerate() {
                    y += rec.samples[[lo + i, c]] * model.components[[k, comp]];
                }
                comps[comp * len + i] = y;
            }
        }
        let mut flags = vec![false; m];
        let mut any = false;
        for comp in 0..m {
            let acc: f64 = comps[comp * len..(comp + 1) * len].iter().map(|y| y * y).sum();
            let rms = (acc / len as f64).sqrt();
            let thr = model.rms_mean[comp] + cutoff * model.rms_std[comp];
            if rms > thr {
                flags[comp] = true;
                any = true;
            }
        }
        // untouched windows are copied through bit-exactly
        if any {
            for i in 0..len {
                for (k, &c) in scalp.iter().enumerate() {
                    let mut v = 0.0;
                    for comp in 0..m {
                        if !flags[comp] {
                            v += model.components[[k, comp]] * comps[comp * len + i];
                        }
                    }
                    out.samples[[lo + i, c]] = v;
                }
            }
        }
        lo = hi;
    }
    Ok(out)
}
