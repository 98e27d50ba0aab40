//! Multitaper power spectral density and band-power features, plus the
//! baseline normalization and cross-subject standardization applied to every
//! feature matrix.
//!
//! Tapers are discrete prolate spheroidal sequences obtained from the
//! symmetric tridiagonal commuting matrix (Slepian's trick): eigenvalues by
//! Sturm-sequence bisection, eigenvectors by shifted inverse iteration. The
//! in-band energy concentration of each taper is evaluated through the
//! Dirichlet-kernel quadratic form, computed in O(n log n) via the taper's
//! autocorrelation.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureDesc, FeatureMatrix, RowLabel};
use crate::signal_io::Window;

/// A named frequency band `[lo, hi)` in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyBand {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::config(format!("invalid band edges [{lo}, {hi})")));
        }
        Ok(FrequencyBand { name: name.into(), lo, hi })
    }
}

/// Delta through gamma, partitioning 1-40 Hz with half-open edges.
pub fn canonical_bands() -> Vec<FrequencyBand> {
    vec![
        FrequencyBand { name: "delta".into(), lo: 1.0, hi: 4.0 },
        FrequencyBand { name: "theta".into(), lo: 4.0, hi: 8.0 },
        FrequencyBand { name: "alpha".into(), lo: 8.0, hi: 12.0 },
        FrequencyBand { name: "beta".into(), lo: 12.0, hi: 30.0 },
        FrequencyBand { name: "gamma".into(), lo: 30.0, hi: 40.0 },
    ]
}

/// Multitaper settings: time-half-bandwidth product and taper count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaperConfig {
    pub nw: f64,
    pub k: usize,
}

impl Default for MultitaperConfig {
    fn default() -> Self {
        // k = 2*nw - 1 is the usual choice for nw = 4
        MultitaperConfig { nw: 4.0, k: 7 }
    }
}

impl MultitaperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nw >= 1.0) {
            return Err(Error::config(format!("nw must be >= 1, got {}", self.nw)));
        }
        if self.k < 1 || (self.k as f64) > 2.0 * self.nw - 1.0 + 1e-9 {
            return Err(Error::config(format!(
                "taper count {} outside 1..=2*nw-1 for nw = {}",
                self.k, self.nw
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// DPSS tapers
// ---------------------------------------------------------------------------

/// Number of eigenvalues of the symmetric tridiagonal (d, e) strictly below x.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for i in 0..d.len() {
        q = if i == 0 {
            d[0] - x
        } else {
            d[i] - x - e[i - 1] * e[i - 1] / q
        };
        if q.abs() < 1e-300 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// j-th largest eigenvalue (j = 0 is the top) by bisection.
fn bisect_eigenvalue(d: &[f64], e: &[f64], j: usize) -> f64 {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i == 0 { 0.0 } else { e[i - 1].abs() }
            + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let target = n - j; // want count(x) >= n - j from above
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(d, e, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solve (T - lambda I) x = rhs in place for tridiagonal T, with partial
/// pivoting and a pivot floor so inverse iteration tolerates near-singular
/// shifts.
fn solve_shifted_tridiag(d: &[f64], e: &[f64], lambda: f64, rhs: &mut [f64]) {
    let n = d.len();
    let mut diag: Vec<f64> = d.iter().map(|&x| x - lambda).collect();
    let mut upper = vec![0.0f64; n];
    upper[..n - 1].copy_from_slice(e);
    let mut upper2 = vec![0.0f64; n];
    let pivmin = 1e-30;

    for i in 0..n - 1 {
        let sub = e[i];
        if diag[i].abs() >= sub.abs() {
            let piv = if diag[i].abs() < pivmin {
                pivmin.copysign(if diag[i] == 0.0 { 1.0 } else { diag[i] })
            } else {
                diag[i]
            };
            diag[i] = piv;
            let fact = sub / piv;
            diag[i + 1] -= fact * upper[i];
            rhs[i + 1] -= fact * rhs[i];
            upper2[i] = 0.0;
        } else {
            // swap rows i and i+1
            let fact = diag[i] / sub;
            diag[i] = sub;
            let du_old = upper[i];
            upper[i] = diag[i + 1];
            upper2[i] = upper[i + 1];
            diag[i + 1] = du_old - fact * upper[i];
            upper[i + 1] = -fact * upper2[i];
            rhs.swap(i, i + 1);
            rhs[i + 1] -= fact * rhs[i];
        }
    }
    if diag[n - 1].abs() < pivmin {
        diag[n - 1] = pivmin.copysign(if diag[n - 1] == 0.0 { 1.0 } else { diag[n - 1] });
    }

    rhs[n - 1] /= diag[n - 1];
    if n >= 2 {
        rhs[n - 2] = (rhs[n - 2] - upper[n - 2] * rhs[n - 1]) / diag[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1] - upper2[i] * rhs[i + 2]) / diag[i];
    }
}

fn tridiag_mul(d: &[f64], e: &[f64], v: &[f64], out: &mut [f64]) {
    let n = d.len();
    for i in 0..n {
        let mut acc = d[i] * v[i];
        if i > 0 {
            acc += e[i - 1] * v[i - 1];
        }
        if i + 1 < n {
            acc += e[i] * v[i + 1];
        }
        out[i] = acc;
    }
}

/// Compute the top-k Slepian tapers for length `n` and half-bandwidth `nw`.
///
/// Returns tapers as rows of a `[k x n]` array (unit norm, ordered by
/// decreasing concentration) together with the in-band concentrations.
pub fn dpss_tapers(n: usize, nw: f64, k: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    if n < 8 {
        return Err(Error::config(format!("dpss needs n >= 8, got {n}")));
    }
    if !(nw >= 1.0) || k < 1 || (k as f64) > 2.0 * nw - 1.0 + 1e-9 {
        return Err(Error::config(format!("invalid dpss parameters nw={nw} k={k}")));
    }
    let w = nw / n as f64;
    let cos2pw = (2.0 * std::f64::consts::PI * w).cos();
    let d: Vec<f64> = (0..n)
        .map(|t| {
            let c = (n as f64 - 1.0 - 2.0 * t as f64) / 2.0;
            c * c * cos2pw
        })
        .collect();
    let e: Vec<f64> = (1..n).map(|t| (t as f64) * ((n - t) as f64) / 2.0).collect();

    let tnorm: f64 = d.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
        + 2.0 * e.iter().fold(0.0f64, |m, &x| m.max(x.abs()));

    let mut tapers = Array2::zeros((k, n));
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut scratch = vec![0.0f64; n];
    for j in 0..k {
        let lambda = bisect_eigenvalue(&d, &e, j);
        // deterministic pseudo-random start keeps ties reproducible
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let h = crate::seeds::splitmix64((j as u64) << 32 | i as u64);
                (h as f64 / u64::MAX as f64) - 0.5
            })
            .collect();
        normalize(&mut v);
        let mut ok = false;
        for attempt in 0..8u64 {
            solve_shifted_tridiag(&d, &e, lambda, &mut v);
            for prev in &found {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= dot * pi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-200 {
                // start vector collapsed onto earlier tapers; reseed
                for (i, x) in v.iter_mut().enumerate() {
                    let h = crate::seeds::splitmix64(
                        (attempt + 1) << 48 | (j as u64) << 32 | i as u64,
                    );
                    *x = (h as f64 / u64::MAX as f64) - 0.5;
                }
            }
            normalize(&mut v);
            tridiag_mul(&d, &e, &v, &mut scratch);
            let resid: f64 = scratch
                .iter()
                .zip(&v)
                .map(|(tv, vi)| (tv - lambda * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid <= 1e-11 * tnorm {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::numeric(format!(
                "dpss inverse iteration failed to converge for taper {j}"
            )));
        }
        // deterministic polarity: first element attaining max |v| is positive
        let mut imax = 0;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > v[imax].abs() {
                imax = i;
            }
        }
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        tapers.row_mut(j).assign(&ndarray::ArrayView1::from(&v[..]));
        found.push(v);
    }

    let concentrations: Vec<f64> =
        found.iter().map(|v| dirichlet_concentration(v, w)).collect();
    for j in 1..k {
        if concentrations[j] > concentrations[j - 1] + 1e-9 {
            return Err(Error::numeric(
                "dpss concentrations are not decreasing".to_string(),
            ));
        }
    }
    Ok((tapers, concentrations))
}

fn normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Fraction of a unit-norm taper's energy inside [-W, W]:
/// v' D v with D_ij = sin(2 pi W (i-j)) / (pi (i-j)), evaluated through the
/// taper autocorrelation so it costs O(n log n).
fn dirichlet_concentration(v: &[f64], w: f64) -> f64 {
    let n = v.len();
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex64> = v
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    // buf[tau].re / m is now the (unnormalized) autocorrelation at lag tau
    let scale = 1.0 / m as f64;
    let mut acc = 2.0 * w * buf[0].re * scale; // tau = 0 term, g(0) = 2W
    for tau in 1..n {
        let g = (2.0 * std::f64::consts::PI * w * tau as f64).sin()
            / (std::f64::consts::PI * tau as f64);
        acc += 2.0 * g * buf[tau].re * scale;
    }
    acc
}

// ---------------------------------------------------------------------------
// PSD estimation
// ---------------------------------------------------------------------------

/// One-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub fs: f64,
}

impl Psd {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 { self.freqs[1] - self.freqs[0] } else { 0.0 }
    }

    /// Trapezoidal integral of the full one-sided spectrum.
    pub fn total_power(&self) -> f64 {
        trapezoid(&self.freqs, &self.power, self.freqs[0], *self.freqs.last().unwrap())
    }
}

/// Reusable tapers + FFT plan for windows of a fixed length.
pub struct MultitaperPlan {
    n: usize,
    nfft: usize,
    tapers: Array2<f64>,
    concentrations: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MultitaperPlan {
    pub fn new(n: usize, cfg: MultitaperConfig) -> Result<Self> {
        cfg.validate()?;
        let (tapers, concentrations) = dpss_tapers(n, cfg.nw, cfg.k)?;
        let nfft = n.next_power_of_two().max(1024);
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(MultitaperPlan { n, nfft, tapers, concentrations, fft })
    }

    pub fn tapers(&self) -> &Array2<f64> {
        &self.tapers
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    /// Average of the tapered periodograms, one-sided, scaled so the
    /// integral over [0, fs/2] estimates the signal variance.
    pub fn psd(&self, x: ArrayView1<f64>, fs: f64) -> Result<Psd> {
        if x.len() != self.n {
            return Err(Error::data(format!(
                "window length {} does not match plan length {}",
                x.len(),
                self.n
            )));
        }
        if !(fs > 0.0) {
            return Err(Error::config(format!("fs must be positive, got {fs}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite input to psd".to_string()));
        }
        let half = self.nfft / 2;
        let mut acc = vec![0.0f64; half + 1];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let k = self.tapers.nrows();
        for t in 0..k {
            let taper = self.tapers.row(t);
            for i in 0..self.nfft {
                let v = if i < self.n { x[i] * taper[i] } else { 0.0 };
                buf[i] = Complex64::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += buf[j].norm_sqr();
            }
        }
        let norm = 1.0 / (k as f64 * fs);
        let power: Vec<f64> = acc
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let onesided = if j == 0 || j == half { 1.0 } else { 2.0 };
                onesided * a * norm
            })
            .collect();
        let freqs: Vec<f64> = (0..=half).map(|j| j as f64 * fs / self.nfft as f64).collect();
        Ok(Psd { freqs, power, fs })
    }
}

/// One-shot multitaper PSD of a single window.
pub fn multitaper_psd(x: ArrayView1<f64>, fs: f64, cfg: MultitaperConfig) -> Result<Psd> {
    if x.len() < 8 {
        return Err(Error::data(format!("psd needs n >= 8, got {}", x.len())));
    }
    MultitaperPlan::new(x.len(), cfg)?.psd(x, fs)
}

/// Piecewise-linear integral of (freqs, power) from lo to hi.
fn trapezoid(freqs: &[f64], power: &[f64], lo: f64, hi: f64) -> f64 {
    let interp = |f: f64| -> f64 {
        match freqs.binary_search_by(|x| x.partial_cmp(&f).unwrap()) {
            Ok(i) => power[i],
            Err(i) => {
                let (i0, i1) = (i - 1, i);
                let t = (f - freqs[i0]) / (freqs[i1] - freqs[i0]);
                power[i0] + t * (power[i1] - power[i0])
            }
        }
    };
    let mut acc = 0.0;
    let mut f_prev = lo;
    let mut p_prev = interp(lo);
    for (i, &f) in freqs.iter().enumerate() {
        if f <= lo {
            continue;
        }
        if f >= hi {
            break;
        }
        acc += 0.5 * (power[i] + p_prev) * (f - f_prev);
        f_prev = f;
        p_prev = power[i];
    }
    acc += 0.5 * (interp(hi) + p_prev) * (hi - f_prev);
    acc
}

/// Band power in V^2: trapezoidal integral of the PSD over [lo, hi].
pub fn band_power(psd: &Psd, band: &FrequencyBand) -> Result<f64> {
    if !(band.lo < band.hi) {
        return Err(Error::config(format!(
            "zero-width band [{}, {})",
            band.lo, band.hi
        )));
    }
    let nyq = psd.fs / 2.0;
    if band.lo < 0.0 || band.hi > nyq + 1e-9 {
        return Err(Error::config(format!(
            "band [{}, {}) outside spectrum [0, {nyq}]",
            band.lo, band.hi
        )));
    }
    Ok(trapezoid(&psd.freqs, &psd.power, band.lo, band.hi.min(nyq)))
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Band-power features: one row per window, columns = channels x bands.
pub fn band_power_features(
    windows: &[Window],
    fs: f64,
    channel_names: &[String],
    bands: &[FrequencyBand],
    cfg: MultitaperConfig,
) -> Result<FeatureMatrix> {
    if windows.is_empty() {
        return Err(Error::data("no windows to extract features from".to_string()));
    }
    let n = windows[0].data.nrows();
    let n_ch = channel_names.len();
    for (i, w) in windows.iter().enumerate() {
        if w.data.nrows() != n || w.data.ncols() != n_ch {
            return Err(Error::data(format!(
                "window {i} has shape {:?}, expected [{n}, {n_ch}]",
                w.data.dim()
            )));
        }
    }
    let plan = MultitaperPlan::new(n, cfg)?;
    let rows: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| -> Result<Vec<f64>> {
            let mut row = Vec::with_capacity(n_ch * bands.len());
            for c in 0..n_ch {
                let psd = plan.psd(w.data.column(c), fs)?;
                for b in bands {
                    row.push(band_power(&psd, b)?);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((windows.len(), n_ch * bands.len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let mut descriptors = Vec::with_capacity(n_ch * bands.len());
    for name in channel_names {
        for b in bands {
            descriptors.push(FeatureDesc::BandPower {
                channel: name.clone(),
                band: b.name.clone(),
            });
        }
    }
    let rows = windows
        .iter()
        .map(|w| RowLabel {
            subject: w.subject_id.clone(),
            condition: w.condition.clone(),
            task: w.task.clone(),
            start_s: w.start_s,
        })
        .collect();
    FeatureMatrix::new(values, descriptors, rows)
}

/// Express every feature as relative change from that subject's baseline mean.
pub fn normalize_to_baseline(
    fm: &FeatureMatrix,
    baseline: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    if fm.descriptors != baseline.descriptors {
        return Err(Error::data(
            "baseline feature descriptors do not match".to_string(),
        ));
    }
    let mut out = fm.values.clone();
    for subject in fm.subjects() {
        let base_rows: Vec<usize> = baseline
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.subject == subject)
            .map(|(i, _)| i)
            .collect();
        if base_rows.is_empty() {
            return Err(Error::data(format!(
                "no baseline rows for subject {subject:?}"
            )));
        }
        let subj_rows: Vec<usize> = fm
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.subject == subject)
            .map(|(i, _)| i)
            .collect();
        for j in 0..fm.n_features() {
            let mean: f64 = base_rows
                .iter()
                .map(|&i| baseline.values[[i, j]])
                .sum::<f64>()
                / base_rows.len() as f64;
            if mean == 0.0 {
                return Err(Error::numeric(format!(
                    "zero baseline mean for feature {} of subject {subject:?}",
                    fm.descriptors[j]
                )));
            }
            for &i in &subj_rows {
                out[[i, j]] = (fm.values[[i, j]] - mean) / mean;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value after baseline normalization"));
    }
    FeatureMatrix::new(out, fm.descriptors.clone(), fm.rows.clone())
}

/// Z-score each column over all rows (all subjects pooled, population std).
pub fn standardize_across_subjects(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = fm.n_rows();
    if n < 2 {
        return Err(Error::data(format!("standardize needs >= 2 rows, got {n}")));
    }
    let mut out = fm.values.clone();
    for j in 0..fm.n_features() {
        let col = fm.values.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std == 0.0 {
            return Err(Error::numeric(format!(
                "zero variance in feature column {}",
                fm.descriptors[j]
            )));
        }
        for i in 0..n {
            out[[i, j]] = (fm.values[[i, j]] - mean) / std;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value after standardization"));
    }
    FeatureMatrix::new(out, fm.descriptors.clone(), fm.rows.clone())
}
