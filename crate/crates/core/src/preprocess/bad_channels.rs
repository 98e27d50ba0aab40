//! Bad-channel detection: flat lines, outlier high-frequency variance, and a
//! RANSAC-style correlation-with-prediction rule over 1-second windows.

use nalgebra::DMatrix;
use rand::seq::index::sample as index_sample;

use crate::error::{Error, Result};
use crate::seeds;
use crate::signal_io::Recording;

/// Detection thresholds; the defaults are flat = 10 s, noise = 4 std,
/// correlation = 0.75.
#[derive(Debug, Clone, Copy)]
pub struct BadChannelParams {
    pub flat_s: f64,
    pub noise_z: f64,
    pub corr_thr: f64,
}

impl Default for BadChannelParams {
    fn default() -> Self {
        BadChannelParams { flat_s: 10.0, noise_z: 4.0, corr_thr: 0.75 }
    }
}

const FLAT_DELTA_V: f64 = 1e-8;
const CORR_WINDOW_S: f64 = 1.0;
const RANSAC_SUBSETS: usize = 8;
const RANSAC_PREDICTORS: usize = 8;
// Internal fixed seed: the operation exposes no seed parameter and must be
// deterministic.
const RANSAC_SEED: u64 = 0xbadc_0ffe;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flag scalp channels that are flat, have outlier high-frequency variance,
/// or correlate poorly with a prediction from other channels.
pub fn detect_bad_channels(rec: &Recording, params: BadChannelParams) -> Result<Vec<String>> {
    let scalp = rec.scalp_indices();
    if scalp.len() < 3 {
        return Err(Error::data(format!(
            "bad-channel detection needs >= 3 scalp channels, got {}",
            scalp.len()
        )));
    }
    let n = rec.n_samples();
    let mut flagged = vec![false; scalp.len()];

    // (a) flat runs
    let flat_run = (params.flat_s * rec.fs).round() as usize;
    for (k, &c) in scalp.iter().enumerate() {
        let x = rec.samples.column(c);
        let mut run = 1usize;
        for i in 1..n {
            if (x[i] - x[i - 1]).abs() < FLAT_DELTA_V {
                run += 1;
                if run >= flat_run {
                    flagged[k] = true;
                    break;
                }
            } else {
                run = 1;
            }
        }
    }

    // (b) robust z of high-frequency residual variance
    let mut hf_var = vec![0.0f64; scalp.len()];
    for (k, &c) in scalp.iter().enumerate() {
        let x = rec.samples.column(c);
        let mut acc = 0.0;
        for i in 1..n - 1 {
            let r = x[i] - (x[i - 1] + x[i] + x[i + 1]) / 3.0;
            acc += r * r;
        }
        hf_var[k] = acc / (n - 2) as f64;
    }
    let med = median(&mut hf_var.clone());
    let mut dev: Vec<f64> = hf_var.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let denom = 1.4826 * mad;
    for (k, &v) in hf_var.iter().enumerate() {
        let z = if denom > 0.0 {
            (v - med) / denom
        } else if v > med {
            f64::INFINITY
        } else {
            0.0
        };
        if z > params.noise_z {
            flagged[k] = true;
        }
    }

    // (c) correlation with a RANSAC-style least-squares prediction from
    // random channel subsets, evaluated over 1 s windows, majority vote
    let win = (CORR_WINDOW_S * rec.fs).round() as usize;
    let n_windows = n / win;
    if n_windows >= 1 && scalp.len() > RANSAC_PREDICTORS {
        let mut bad_windows = vec![0usize; scalp.len()];
        let mut rng = seeds::rng(RANSAC_SEED, &[]);
        for w in 0..n_windows {
            let lo = w * win;
            // centered Gram over scalp channels for this window
            let mut means = vec![0.0f64; scalp.len()];
            for (k, &c) in scalp.iter().enumerate() {
                means[k] = (lo..lo + win).map(|i| rec.samples[[i, c]]).sum::<f64>() / win as f64;
            }
            let mut gram = DMatrix::zeros(scalp.len(), scalp.len());
            for a in 0..scalp.len() {
                for b in a..scalp.len() {
                    let mut dot = 0.0;
                    for i in lo..lo + win {
                        dot += (rec.samples[[i, scalp[a]]] - means[a])
                            * (rec.samples[[i, scalp[b]]] - means[b]);
                    }
                    gram[(a, b)] = dot;
                    gram[(b, a)] = dot;
                }
            }
            let subsets: Vec<Vec<usize>> = (0..RANSAC_SUBSETS)
                .map(|_| {
                    index_sample(&mut rng, scalp.len(), RANSAC_PREDICTORS + 1).into_vec()
                })
                .collect();
            for k in 0..scalp.len() {
                let gkk = gram[(k, k)];
                if gkk <= 0.0 {
                    bad_windows[k] += 1;
                    continue;
                }
                let mut best = 0.0f64;
                for subset in &subsets {
                    let s: Vec<usize> =
                        subset.iter().copied().filter(|&j| j != k).take(RANSAC_PREDICTORS).collect();
                    let r2 = subset_r2(&gram, &s, k);
                    best = best.max(r2.max(0.0).min(1.0).sqrt());
                }
                if best < params.corr_thr {
                    bad_windows[k] += 1;
                }
            }
        }
        for (k, &bw) in bad_windows.iter().enumerate() {
            if bw * 2 > n_windows {
                flagged[k] = true;
            }
        }
    }

    Ok(scalp
        .iter()
        .enumerate()
        .filter(|(k, _)| flagged[*k])
        .map(|(_, &c)| rec.channel_names[c].clone())
        .collect())
}

/// R^2 of regressing channel `target` on `predictors`, from the centered Gram
/// matrix of one window. A tiny ridge keeps collinear subsets solvable.
fn subset_r2(gram: &DMatrix<f64>, predictors: &[usize], target: usize) -> f64 {
    let p = predictors.len();
    if p == 0 {
        return 0.0;
    }
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, 1);
    let mut trace = 0.0;
    for (i, &pi) in predictors.iter().enumerate() {
        trace += gram[(pi, pi)];
        b[(i, 0)] = gram[(pi, target)];
        for (j, &pj) in predictors.iter().enumerate() {
            a[(i, j)] = gram[(pi, pj)];
        }
    }
    let ridge = 1e-9 * (trace / p as f64).max(f64::MIN_POSITIVE);
    for i in 0..p {
        a[(i, i)] += ridge;
    }
    match a.cholesky() {
        Some(ch) => {
            let w = ch.solve(&b);
            let explained = (0..p).map(|i| w[(i, 0)] * b[(i, 0)]).sum::<f64>();
            explained / gram[(target, target)]
        }
        None => 0.0,
    }
}
