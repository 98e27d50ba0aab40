//! The cleaning chain: band-pass FIR, bad-channel handling, burst repair,
//! EOG regression, and common-average referencing.
//!
//! Every operation is a pure function `Recording -> Recording`; EOG channels
//! pass through untouched except where noted.

mod asr;
mod bad_channels;
mod fir;
mod interpolate;

pub use asr::{asr_calibrate, asr_clean, AsrModel};
pub use bad_channels::{detect_bad_channels, BadChannelParams};
pub use fir::{apply_filter_zero_phase, design_bandpass_fir, fft_convolve_full, FilterKernel};
pub use interpolate::interpolate_channels;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal_io::Recording;

/// Subtract the instantaneous scalp mean from every scalp channel.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    let scalp = rec.scalp_indices();
    if scalp.len() < 2 {
        return Err(Error::data(format!(
            "common average reference needs >= 2 scalp channels, got {}",
            scalp.len()
        )));
    }
    let mut out = rec.clone();
    let inv = 1.0 / scalp.len() as f64;
    for i in 0..rec.n_samples() {
        let mean: f64 = scalp.iter().map(|&c| rec.samples[[i, c]]).sum::<f64>() * inv;
        for &c in &scalp {
            out.samples[[i, c]] -= mean;
        }
    }
    Ok(out)
}

/// Regress every scalp channel on the EOG channels and keep the residuals.
///
/// Ordinary least squares through the pseudo-inverse of the EOG Gram matrix,
/// so identically-zero EOG channels leave the scalp untouched and the result
/// depends only on the EOG span, not on the particular channel mixing.
pub fn regress_out_eog(rec: &Recording) -> Result<Recording> {
    let eog = rec.eog_indices();
    if eog.is_empty() {
        return Err(Error::data("no EOG channels to regress out".to_string()));
    }
    let scalp = rec.scalp_indices();
    let n = rec.n_samples();
    let ne = eog.len();

    // gram = E'E, cross = E'S
    let mut gram = DMatrix::zeros(ne, ne);
    for (a, &ca) in eog.iter().enumerate() {
        for (b, &cb) in eog.iter().enumerate().skip(a) {
            let dot: f64 = (0..n).map(|i| rec.samples[[i, ca]] * rec.samples[[i, cb]]).sum();
            gram[(a, b)] = dot;
            gram[(b, a)] = dot;
        }
    }
    let pinv = sym_pinv(&gram, 1e-12);

    let mut out = rec.clone();
    for &cs in &scalp {
        let cross = DMatrix::from_fn(ne, 1, |a, _| {
            (0..n).map(|i| rec.samples[[i, eog[a]]] * rec.samples[[i, cs]]).sum()
        });
        let beta = &pinv * cross;
        for i in 0..n {
            let mut pred = 0.0;
            for (a, &ce) in eog.iter().enumerate() {
                pred += beta[(a, 0)] * rec.samples[[i, ce]];
            }
            out.samples[[i, cs]] -= pred;
        }
    }
    Ok(out)
}

/// Pseudo-inverse of a symmetric PSD matrix with a relative eigenvalue cutoff.
fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let k = m.nrows();
    let mut out = DMatrix::zeros(k, k);
    if max == 0.0 {
        return out;
    }
    for j in 0..k {
        let lambda = eig.eigenvalues[j];
        if lambda.abs() > rel_tol * max {
            let v = eig.eigenvectors.column(j);
            for a in 0..k {
                for b in 0..k {
                    out[(a, b)] += v[a] * v[b] / lambda;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::signal_io::ChannelRole;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn recording(samples: Array2<f64>, roles: Vec<ChannelRole>) -> Recording {
        let names = (0..samples.ncols()).map(|i| format!("ch{i}")).collect();
        Recording {
            samples,
            fs: 100.0,
            channel_names: names,
            channel_roles: roles,
            subject_id: "s".into(),
            annotations: vec![],
        }
    }

    #[test]
    fn car_subtracts_the_sample_mean() {
        let rec = recording(
            ndarray::array![[1.0e-6, 2.0e-6, 3.0e-6]],
            vec![ChannelRole::Scalp; 3],
        );
        let out = common_average_reference(&rec).unwrap();
        assert_abs_diff_eq!(out.samples[[0, 0]], -1.0e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(out.samples[[0, 1]], 0.0, epsilon = 1e-18);
        assert_abs_diff_eq!(out.samples[[0, 2]], 1.0e-6, epsilon = 1e-18);
    }

    #[test]
    fn car_zeroes_the_scalp_mean_and_is_idempotent() {
        let mut rng = seeds::rng(5, &[]);
        let samples = Array2::from_shape_fn((200, 5), |_| StandardNormal.sample(&mut rng));
        let mut roles = vec![ChannelRole::Scalp; 4];
        roles.push(ChannelRole::Eog);
        let rec = recording(samples, roles);
        let once = common_average_reference(&rec).unwrap();
        for i in 0..once.n_samples() {
            let mean: f64 = (0..4).map(|c| once.samples[[i, c]]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            // EOG channel untouched
            assert_eq!(once.samples[[i, 4]], rec.samples[[i, 4]]);
        }
        let twice = common_average_reference(&once).unwrap();
        for (a, b) in once.samples.iter().zip(twice.samples.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn car_commutes_with_channel_permutation() {
        let mut rng = seeds::rng(6, &[]);
        let samples = Array2::from_shape_fn((50, 4), |_| StandardNormal.sample(&mut rng));
        let rec = recording(samples.clone(), vec![ChannelRole::Scalp; 4]);
        let out = common_average_reference(&rec).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permuted = recording(
            Array2::from_shape_fn((50, 4), |(i, j)| samples[[i, perm[j]]]),
            vec![ChannelRole::Scalp; 4],
        );
        let out_perm = common_average_reference(&permuted).unwrap();
        for i in 0..50 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    out_perm.samples[[i, j]],
                    out.samples[[i, perm[j]]],
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn car_needs_two_scalp_channels() {
        let rec = recording(Array2::zeros((10, 1)), vec![ChannelRole::Scalp]);
        assert!(common_average_reference(&rec).is_err());
    }

    #[test]
    fn zero_eog_leaves_scalp_unchanged() {
        let mut rng = seeds::rng(7, &[]);
        let mut samples = Array2::from_shape_fn((300, 3), |_| StandardNormal.sample(&mut rng));
        for i in 0..300 {
            samples[[i, 2]] = 0.0;
        }
        let rec = recording(
            samples,
            vec![ChannelRole::Scalp, ChannelRole::Scalp, ChannelRole::Eog],
        );
        let out = regress_out_eog(&rec).unwrap();
        assert_eq!(out.samples, rec.samples);
    }

    #[test]
    fn planted_eog_leak_is_removed() {
        let mut rng = seeds::rng(8, &[]);
        let n = 2000;
        let brain: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eog: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut samples = Array2::zeros((n, 2));
        for i in 0..n {
            samples[[i, 0]] = brain[i] + 0.5 * eog[i];
            samples[[i, 1]] = eog[i];
        }
        let rec = recording(samples, vec![ChannelRole::Scalp, ChannelRole::Eog]);
        let out = regress_out_eog(&rec).unwrap();

        let corr = {
            let x: Vec<f64> = (0..n).map(|i| out.samples[[i, 0]]).collect();
            let mx = x.iter().sum::<f64>() / n as f64;
            let me = eog.iter().sum::<f64>() / n as f64;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut de = 0.0;
            for i in 0..n {
                num += (x[i] - mx) * (eog[i] - me);
                dx += (x[i] - mx).powi(2);
                de += (eog[i] - me).powi(2);
            }
            num / (dx * de).sqrt()
        };
        assert!(corr.abs() < 0.05, "correlation {corr}");

        // residual . eog normalized inner product vanishes (normal equations)
        let mut dot = 0.0;
        let mut nx = 0.0;
        let mut ne = 0.0;
        for i in 0..n {
            dot += out.samples[[i, 0]] * eog[i];
            nx += out.samples[[i, 0]].powi(2);
            ne += eog[i] * eog[i];
        }
        assert!((dot / (nx * ne).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn residuals_invariant_to_eog_remixing() {
        let mut rng = seeds::rng(9, &[]);
        let n = 500;
        let mut samples = Array2::from_shape_fn((n, 4), |_| StandardNormal.sample(&mut rng));
        // scalp leaks both EOG channels
        for i in 0..n {
            let (e1, e2) = (samples[[i, 2]], samples[[i, 3]]);
            samples[[i, 0]] += 0.4 * e1 - 0.2 * e2;
            samples[[i, 1]] += 0.1 * e1 + 0.7 * e2;
        }
        let roles = vec![
            ChannelRole::Scalp,
            ChannelRole::Scalp,
            ChannelRole::Eog,
            ChannelRole::Eog,
        ];
        let rec = recording(samples.clone(), roles.clone());
        let out = regress_out_eog(&rec).unwrap();

        // invertible remix of the EOG channels spans the same space
        let mut remixed = samples;
        for i in 0..n {
            let (e1, e2) = (remixed[[i, 2]], remixed[[i, 3]]);
            remixed[[i, 2]] = 2.0 * e1 + e2;
            remixed[[i, 3]] = e1 - 0.5 * e2;
        }
        let rec2 = recording(remixed, roles);
        let out2 = regress_out_eog(&rec2).unwrap();
        for i in 0..n {
            for c in 0..2 {
                assert_abs_diff_eq!(out.samples[[i, c]], out2.samples[[i, c]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn missing_eog_channels_error() {
        let rec = recording(Array2::zeros((10, 2)), vec![ChannelRole::Scalp; 2]);
        assert!(regress_out_eog(&rec).is_err());
    }
}
