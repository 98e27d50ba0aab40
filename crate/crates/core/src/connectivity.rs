//! MVAR model fitting, SBC order selection, and partial directed coherence
//! features over an electrode subset.

use nalgebra::{Complex, DMatrix};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureDesc, FeatureMatrix, RowLabel};
use crate::seeds;
use crate::signal_io::Window;
use crate::spectral::FrequencyBand;

/// Fitted vector autoregression: x_t = sum_r A_r x_{t-r} + e_t.
#[derive(Debug, Clone)]
pub struct MvarModel {
    pub order: usize,
    /// A_1..A_p, each [m x m]; row = sink channel, column = source channel.
    pub coeffs: Vec<Array2<f64>>,
    /// Residual covariance, [m x m].
    pub sigma: Array2<f64>,
    pub fs: f64,
    /// Spectral radius of the companion matrix; < 1 means stable.
    pub spectral_radius: f64,
}

impl MvarModel {
    pub fn n_channels(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }
}

/// Spectral radius of the [mp x mp] companion matrix of `coeffs`.
///
/// Small systems get an exact eigenvalue computation; large ones use a
/// growth-rate power iteration on the implicit companion operator.
pub fn companion_spectral_radius(coeffs: &[Array2<f64>]) -> f64 {
    let p = coeffs.len();
    if p == 0 {
        return 0.0;
    }
    let m = coeffs[0].nrows();
    let mp = m * p;
    if mp <= 128 {
        let mut c = DMatrix::<f64>::zeros(mp, mp);
        for (r, a) in coeffs.iter().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    c[(i, r * m + j)] = a[[i, j]];
                }
            }
        }
        for i in m..mp {
            c[(i, i - m)] = 1.0;
        }
        return c
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, l| acc.max(l.norm()));
    }

    // power iteration on the companion operator, radius from the average
    // log growth over the tail iterations
    let mut v: Vec<f64> = (0..mp)
        .map(|i| (seeds::splitmix64(i as u64 + 1) as f64 / u64::MAX as f64) - 0.5)
        .collect();
    let norm0 = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    v.iter_mut().for_each(|x| *x /= norm0);
    let iters = 800;
    let tail = 400;
    let mut log_growth = 0.0;
    let mut next = vec![0.0f64; mp];
    for it in 0..iters {
        for i in 0..m {
            let mut acc = 0.0;
            for (r, a) in coeffs.iter().enumerate() {
                for j in 0..m {
                    acc += a[[i, j]] * v[r * m + j];
                }
            }
            next[i] = acc;
        }
        for i in m..mp {
            next[i] = v[i - m];
        }
        let norm = (next.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if norm < 1e-290 {
            return 0.0; // nilpotent-like decay
        }
        if it >= iters - tail {
            log_growth += norm.ln();
        }
        for (vi, ni) in v.iter_mut().zip(&next) {
            *vi = ni / norm;
        }
    }
    (log_growth / tail as f64).exp()
}

/// Least-squares MVAR fit of one window (channel means removed internally).
///
/// Normal equations of the stacked lag regression, solved by Cholesky;
/// residual covariance uses the denominator n - p - m*p.
pub fn fit_mvar(window: &Array2<f64>, p: usize, fs: f64) -> Result<MvarModel> {
    let (n, m) = window.dim();
    if p == 0 {
        return Err(Error::config("MVAR order must be >= 1".to_string()));
    }
    if n <= m * p + 1 {
        return Err(Error::data(format!(
            "window of {n} samples too short for m = {m}, p = {p} (need > {})",
            m * p + 1
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite sample in MVAR window".to_string()));
    }
    let mut x = window.clone();
    for mut col in x.columns_mut() {
        let mean = col.sum() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }

    let rows = n - p;
    let k = m * p;
    let mut regress = Array2::zeros((rows, k));
    let mut targets = Array2::zeros((rows, m));
    for t in 0..rows {
        for r in 0..p {
            for j in 0..m {
                regress[[t, r * m + j]] = x[[t + p - 1 - r, j]];
            }
        }
        for j in 0..m {
            targets[[t, j]] = x[[t + p, j]];
        }
    }

    let gram = regress.t().dot(&regress);
    let cross = regress.t().dot(&targets);
    let gram_na = DMatrix::from_fn(k, k, |i, j| gram[[i, j]]);
    let chol = gram_na
        .cholesky()
        .ok_or_else(|| Error::numeric("rank-deficient MVAR regressor matrix".to_string()))?;
    let cross_na = DMatrix::from_fn(k, m, |i, j| cross[[i, j]]);
    let beta = chol.solve(&cross_na); // [k x m]

    let mut coeffs = Vec::with_capacity(p);
    for r in 0..p {
        let mut a = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                a[[i, j]] = beta[(r * m + j, i)];
            }
        }
        coeffs.push(a);
    }

    // residual covariance with denominator n - p - m*p
    let denom = (n as isize - p as isize - (m * p) as isize).max(1) as f64;
    let mut resid = targets;
    for t in 0..rows {
        for i in 0..m {
            let mut pred = 0.0;
            for r in 0..p {
                for j in 0..m {
                    pred += coeffs[r][[i, j]] * regress[[t, r * m + j]];
                }
            }
            resid[[t, i]] -= pred;
        }
    }
    let mut sigma = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let mut acc = 0.0;
            for t in 0..rows {
                acc += resid[[t, i]] * resid[[t, j]];
            }
            acc /= denom;
            sigma[[i, j]] = acc;
            sigma[[j, i]] = acc;
        }
    }

    let spectral_radius = companion_spectral_radius(&coeffs);
    Ok(MvarModel { order: p, coeffs, sigma, fs, spectral_radius })
}

/// Schwarz criterion over orders 1..=p_max on a common sample base
/// (targets start at p_max for every candidate order).
///
/// SBC(p) = ln det(Sigma_p) + p * m^2 * ln(n_eff) / n_eff, n_eff = n - p_max;
/// Sigma_p is the ML residual covariance E'E / n_eff. Ties pick the smaller
/// order.
pub fn select_order_sbc(window: &Array2<f64>, p_max: usize, fs: f64) -> Result<(usize, Vec<f64>)> {
    let (n, m) = window.dim();
    if p_max == 0 {
        return Err(Error::config("p_max must be >= 1".to_string()));
    }
    if n <= m * p_max + 1 {
        return Err(Error::data(format!(
            "window of {n} samples too short for m = {m}, p_max = {p_max}"
        )));
    }
    let _ = fs;
    let mut x = window.clone();
    for mut col in x.columns_mut() {
        let mean = col.sum() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    let n_eff = n - p_max;
    let k_max = m * p_max;
    let mut regress = Array2::zeros((n_eff, k_max));
    let mut targets = Array2::zeros((n_eff, m));
    for t in 0..n_eff {
        for r in 0..p_max {
            for j in 0..m {
                regress[[t, r * m + j]] = x[[t + p_max - 1 - r, j]];
            }
        }
        for j in 0..m {
            targets[[t, j]] = x[[t + p_max, j]];
        }
    }
    let gram_full = regress.t().dot(&regress);
    let cross_full = regress.t().dot(&targets);
    let yty = targets.t().dot(&targets);

    let nf = n_eff as f64;
    let penalty_unit = (m * m) as f64 * nf.ln() / nf;
    let mut sbc = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let k = m * p;
        let gram_na = DMatrix::from_fn(k, k, |i, j| gram_full[[i, j]]);
        let cross_na = DMatrix::from_fn(k, m, |i, j| cross_full[[i, j]]);
        let chol = gram_na
            .cholesky()
            .ok_or_else(|| Error::numeric("rank-deficient MVAR regressor matrix".to_string()))?;
        let beta = chol.solve(&cross_na);
        // E'E = Y'Y - C'B
        let mut ete = DMatrix::from_fn(m, m, |i, j| yty[[i, j]]);
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += cross_na[(t, i)] * beta[(t, j)];
                }
                ete[(i, j)] -= acc;
            }
        }
        // symmetrize against roundoff before the log-determinant
        let sigma = DMatrix::from_fn(m, m, |i, j| 0.5 * (ete[(i, j)] + ete[(j, i)]) / nf);
        let chol_sigma = sigma
            .cholesky()
            .ok_or_else(|| Error::numeric("singular residual covariance in SBC".to_string()))?;
        let ln_det: f64 = (0..m).map(|i| chol_sigma.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        sbc.push(ln_det + p as f64 * penalty_unit);
    }
    let mut best = 0;
    for (i, &v) in sbc.iter().enumerate() {
        if v < sbc[best] {
            best = i;
        }
    }
    Ok((best + 1, sbc))
}

/// Partial directed coherence over (sink, source, frequency).
#[derive(Debug, Clone)]
pub struct PdcTensor {
    /// values[[sink, source, f]] in [0, 1].
    pub values: Array3<f64>,
    pub freqs: Vec<f64>,
    pub channel_names: Vec<String>,
}

impl PdcTensor {
    /// Mean PDC source -> sink over grid points with lo <= f < hi.
    pub fn band_mean(&self, sink: usize, source: usize, band: &FrequencyBand) -> Result<f64> {
        let mut acc = 0.0;
        let mut count = 0;
        for (fi, &f) in self.freqs.iter().enumerate() {
            if f >= band.lo && f < band.hi {
                acc += self.values[[sink, source, fi]];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::config(format!(
                "frequency grid has no points in band [{}, {})",
                band.lo, band.hi
            )));
        }
        Ok(acc / count as f64)
    }
}

/// PDC from the MVAR coefficients:
/// pi_ij(f) = |Abar_ij(f)| / sqrt(sum_k |Abar_kj(f)|^2), with
/// Abar(f) = I - sum_r A_r exp(-i 2 pi f r / fs). Columns are normalized by
/// construction.
pub fn pdc(model: &MvarModel, freq_grid: &[f64], channel_names: &[String]) -> Result<PdcTensor> {
    let m = model.n_channels();
    if channel_names.len() != m {
        return Err(Error::data(format!(
            "{} channel names for a {m}-channel model",
            channel_names.len()
        )));
    }
    if !model.is_stable() {
        return Err(Error::numeric(format!(
            "unstable MVAR model (spectral radius {:.4})",
            model.spectral_radius
        )));
    }
    let nyq = model.fs / 2.0;
    if freq_grid.iter().any(|&f| f < 0.0 || f > nyq + 1e-9) {
        return Err(Error::config(format!("frequency grid outside [0, {nyq}]")));
    }
    let mut values = Array3::zeros((m, m, freq_grid.len()));
    let mut abar = vec![Complex::new(0.0, 0.0); m * m];
    for (fi, &f) in freq_grid.iter().enumerate() {
        let omega = -2.0 * std::f64::consts::PI * f / model.fs;
        for i in 0..m {
            for j in 0..m {
                abar[i * m + j] = Complex::new(if i == j { 1.0 } else { 0.0 }, 0.0);
            }
        }
        for (r, a) in model.coeffs.iter().enumerate() {
            let z = Complex::new(0.0, omega * (r as f64 + 1.0)).exp();
            for i in 0..m {
                for j in 0..m {
                    abar[i * m + j] -= a[[i, j]] * z;
                }
            }
        }
        for j in 0..m {
            let denom: f64 = (0..m).map(|i| abar[i * m + j].norm_sqr()).sum::<f64>().sqrt();
            for i in 0..m {
                values[[i, j, fi]] = abar[i * m + j].norm() / denom;
            }
        }
    }
    Ok(PdcTensor { values, freqs: freq_grid.to_vec(), channel_names: channel_names.to_vec() })
}

/// The bundled 28-electrode subset with uniform scalp coverage.
pub fn default_pdc_electrodes() -> Vec<String> {
    [
        "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FT7", "FC3", "FC4", "FT8", "T7", "C3",
        "Cz", "C4", "T8", "TP7", "CP3", "CP4", "TP8", "P7", "P3", "Pz", "P4", "P8", "O1",
        "Oz", "O2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Uniform frequency grid covering every band, `points` samples.
pub fn band_covering_grid(bands: &[FrequencyBand], points: usize) -> Result<Vec<f64>> {
    if bands.is_empty() || points < 2 {
        return Err(Error::config("need bands and >= 2 grid points".to_string()));
    }
    let lo = bands.iter().map(|b| b.lo).fold(f64::INFINITY, f64::min);
    let hi = bands.iter().map(|b| b.hi).fold(f64::NEG_INFINITY, f64::max);
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}

/// PDC band features: one MVAR fit per window on the electrode subset,
/// band-averaged PDC for every (source, sink, band) triple including
/// self-pairs, columns ordered (source, sink, band).
pub fn pdc_band_features(
    windows: &[Window],
    fs: f64,
    channel_names: &[String],
    electrode_subset: &[String],
    p: usize,
    bands: &[FrequencyBand],
    grid_points: usize,
) -> Result<FeatureMatrix> {
    if windows.is_empty() {
        return Err(Error::data("no windows to extract features from".to_string()));
    }
    let subset_idx: Vec<usize> = electrode_subset
        .iter()
        .map(|name| {
            channel_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::data(format!("electrode {name:?} not in channel set")))
        })
        .collect::<Result<_>>()?;
    let grid = band_covering_grid(bands, grid_points.max(64))?;
    let ms = subset_idx.len();
    let n_feat = ms * ms * bands.len();

    let rows: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| -> Result<Vec<f64>> {
            let sub = ndarray::Array2::from_shape_fn((w.data.nrows(), ms), |(t, c)| {
                w.data[[t, subset_idx[c]]]
            });
            let model = fit_mvar(&sub, p, fs)?;
            let tensor = pdc(&model, &grid, electrode_subset)?;
            let mut row = Vec::with_capacity(n_feat);
            for src in 0..ms {
                for sink in 0..ms {
                    for band in bands {
                        row.push(tensor.band_mean(sink, src, band)?);
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((windows.len(), n_feat));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let mut descriptors = Vec::with_capacity(n_feat);
    for src in electrode_subset {
        for sink in electrode_subset {
            for band in bands {
                descriptors.push(FeatureDesc::Pdc {
                    source: src.clone(),
                    sink: sink.clone(),
                    band: band.name.clone(),
                });
            }
        }
    }
    let labels = windows
        .iter()
        .map(|w| RowLabel {
            subject: w.subject_id.clone(),
            condition: w.condition.clone(),
            task: w.task.clone(),
            start_s: w.start_s,
        })
        .collect();
    FeatureMatrix::new(values, descriptors, labels)
}
