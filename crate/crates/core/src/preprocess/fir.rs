//! Hamming-windowed sinc band-pass design and zero-phase application.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal_io::Recording;

/// Linear-phase FIR kernel.
#[derive(Debug, Clone)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    pub fs: f64,
    pub passband: (f64, f64),
    pub transition_bw: f64,
}

impl FilterKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Group delay in samples, (L-1)/2.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }
}

fn hamming(i: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len as f64 - 1.0)).cos()
}

/// Windowed-sinc lowpass with unit DC gain.
fn lowpass_taps(fc: f64, fs: f64, len: usize) -> Vec<f64> {
    let m = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - m;
            let x = 2.0 * fc / fs;
            let sinc = if t == 0.0 {
                x
            } else {
                (std::f64::consts::PI * x * t).sin() / (std::f64::consts::PI * t)
            };
            sinc * hamming(i, len)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// Hamming-windowed sinc band-pass; length is the smallest odd integer
/// >= 3.3 * fs / transition_bw, and the -6 dB points sit on the band edges.
pub fn design_bandpass_fir(low: f64, high: f64, fs: f64, transition_bw: f64) -> Result<FilterKernel> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::config(format!(
            "invalid band edges ({low}, {high}) for fs {fs}"
        )));
    }
    if !(transition_bw > 0.0) {
        return Err(Error::config(format!(
            "transition bandwidth must be positive, got {transition_bw}"
        )));
    }
    let mut len = (3.3 * fs / transition_bw).ceil() as usize;
    if len % 2 == 0 {
        len += 1;
    }
    let hp = lowpass_taps(high, fs, len);
    let lp = lowpass_taps(low, fs, len);
    let taps: Vec<f64> = hp.iter().zip(&lp).map(|(a, b)| a - b).collect();
    Ok(FilterKernel { taps, fs, passband: (low, high), transition_bw })
}

/// Full linear convolution by FFT overlap-add; output length x.len()+h.len()-1.
pub fn fft_convolve_full(x: &[f64], h: &[f64]) -> Vec<f64> {
    let lh = h.len();
    let out_len = x.len() + lh - 1;
    let nfft = (4 * lh.next_power_of_two()).max(4096).next_power_of_two();
    let chunk = nfft - (lh - 1);

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut hbuf = vec![Complex64::new(0.0, 0.0); nfft];
    for (i, &v) in h.iter().enumerate() {
        hbuf[i] = Complex64::new(v, 0.0);
    }
    fwd.process(&mut hbuf);

    let mut out = vec![0.0f64; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let scale = 1.0 / nfft as f64;
    let mut start = 0;
    while start < x.len() {
        let end = (start + chunk).min(x.len());
        for i in 0..nfft {
            let v = if start + i < end { x[start + i] } else { 0.0 };
            buf[i] = Complex64::new(v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, hc) in buf.iter_mut().zip(&hbuf) {
            *b *= *hc;
        }
        inv.process(&mut buf);
        let block_out = (end - start) + lh - 1;
        for i in 0..block_out {
            if start + i < out_len {
                out[start + i] += buf[i].re * scale;
            }
        }
        start = end;
    }
    out
}

/// Apply a linear-phase kernel with group-delay compensation and reflection
/// padding; output length equals input length.
pub fn apply_filter_zero_phase(rec: &Recording, kernel: &FilterKernel) -> Result<Recording> {
    if (kernel.fs - rec.fs).abs() > 1e-9 * rec.fs.max(1.0) {
        return Err(Error::data(format!(
            "kernel designed for fs {} applied to recording at {}",
            kernel.fs, rec.fs
        )));
    }
    let n = rec.n_samples();
    let lh = kernel.len();
    if n <= lh {
        return Err(Error::data(format!(
            "recording of {n} samples is shorter than the {lh}-tap kernel"
        )));
    }
    let m = kernel.group_delay();
    let mut out = rec.clone();
    for c in 0..rec.n_channels() {
        let x = rec.samples.column(c);
        // mirror padding: x[m], ..., x[1] | x | x[n-2], ..., x[n-1-m]
        let mut padded = Vec::with_capacity(n + 2 * m);
        for i in (1..=m).rev() {
            padded.push(x[i]);
        }
        padded.extend(x.iter().copied());
        for i in 0..m {
            padded.push(x[n - 2 - i]);
        }
        let full = fft_convolve_full(&padded, &kernel.taps);
        for i in 0..n {
            out.samples[[i, c]] = full[i + 2 * m];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::ChannelRole;
    use ndarray::Array2;
    use proptest::prelude::*;

    /// |H(f)| by direct DFT of the taps.
    fn gain_at(taps: &[f64], fs: f64, f: f64) -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (n, &h) in taps.iter().enumerate() {
            let phi = -2.0 * std::f64::consts::PI * f * n as f64 / fs;
            re += h * phi.cos();
            im += h * phi.sin();
        }
        (re * re + im * im).sqrt()
    }

    /// First frequency in [lo, hi] where |H| crosses 0.5, by fine scan.
    fn half_gain_crossing(taps: &[f64], fs: f64, lo: f64, hi: f64, rising: bool) -> f64 {
        let steps = 400;
        let mut prev = gain_at(taps, fs, lo);
        for s in 1..=steps {
            let f = lo + (hi - lo) * s as f64 / steps as f64;
            let g = gain_at(taps, fs, f);
            let crossed = if rising { prev < 0.5 && g >= 0.5 } else { prev >= 0.5 && g < 0.5 };
            if crossed {
                return f;
            }
            prev = g;
        }
        f64::NAN
    }

    fn mono_recording(x: Vec<f64>, fs: f64) -> Recording {
        let n = x.len();
        Recording {
            samples: Array2::from_shape_vec((n, 1), x).unwrap(),
            fs,
            channel_names: vec!["Cz".into()],
            channel_roles: vec![ChannelRole::Scalp],
            subject_id: "s".into(),
            annotations: vec![],
        }
    }

    #[test]
    fn paper_kernel_length_symmetry_and_cutoffs() {
        let k = design_bandpass_fir(0.5, 50.0, 500.0, 0.5).unwrap();
        assert_eq!(k.len(), 3301);
        assert_eq!(k.len() % 2, 1);
        for i in 0..k.len() / 2 {
            assert!((k.taps[i] - k.taps[k.len() - 1 - i]).abs() < 1e-12);
        }
        assert!(gain_at(&k.taps, 500.0, 0.0) < 1e-3);
        let lo_cross = half_gain_crossing(&k.taps, 500.0, 0.2, 0.8, true);
        let hi_cross = half_gain_crossing(&k.taps, 500.0, 49.5, 50.5, false);
        assert!((lo_cross - 0.5).abs() <= 0.25, "low -6 dB at {lo_cross}");
        assert!((hi_cross - 50.0).abs() <= 0.25, "high -6 dB at {hi_cross}");
    }

    #[test]
    fn invalid_band_edges_error() {
        assert!(design_bandpass_fir(0.0, 50.0, 500.0, 0.5).is_err());
        assert!(design_bandpass_fir(50.0, 0.5, 500.0, 0.5).is_err());
        assert!(design_bandpass_fir(0.5, 300.0, 500.0, 0.5).is_err());
        assert!(design_bandpass_fir(0.5, 50.0, 500.0, 0.0).is_err());
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let x: Vec<f64> = (0..257).map(|i| ((i * 37 + 11) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..33).map(|i| ((i * 13 + 5) % 29) as f64 / 29.0 - 0.5).collect();
        let fast = fft_convolve_full(&x, &h);
        assert_eq!(fast.len(), x.len() + h.len() - 1);
        for t in 0..fast.len() {
            let mut direct = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                if t >= k && t - k < x.len() {
                    direct += hk * x[t - k];
                }
            }
            assert!((fast[t] - direct).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn passband_tone_keeps_gain_and_phase() {
        let fs = 500.0;
        let k = design_bandpass_fir(0.5, 50.0, fs, 0.5).unwrap();
        let n = 10000;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 10.0 * t as f64 / fs).sin())
            .collect();
        let rec = mono_recording(x, fs);
        let out = apply_filter_zero_phase(&rec, &k).unwrap();
        // lock-in over the steady-state center
        let (mut s, mut c) = (0.0, 0.0);
        let (lo, hi) = (4000, 6000);
        for t in lo..hi {
            let phi = 2.0 * std::f64::consts::PI * 10.0 * t as f64 / fs;
            s += out.samples[[t, 0]] * phi.sin();
            c += out.samples[[t, 0]] * phi.cos();
        }
        let len = (hi - lo) as f64;
        let amp = 2.0 * (s * s + c * c).sqrt() / len;
        let phase_deg = c.atan2(s).to_degrees();
        assert!((amp - 1.0).abs() < 0.01, "gain {amp}");
        assert!(phase_deg.abs() < 1.0, "phase {phase_deg} deg");
    }

    #[test]
    fn stopband_tone_attenuated_40_db() {
        let fs = 500.0;
        let k = design_bandpass_fir(0.5, 50.0, fs, 0.5).unwrap();
        let n = 10000;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 60.0 * t as f64 / fs).sin())
            .collect();
        let rec = mono_recording(x.clone(), fs);
        let out = apply_filter_zero_phase(&rec, &k).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let input_rms = rms(&x[4000..6000]);
        let output: Vec<f64> = (4000..6000).map(|t| out.samples[[t, 0]]).collect();
        let ratio = rms(&output) / input_rms;
        assert!(ratio < 0.01, "attenuation only {} dB", -20.0 * ratio.log10());
    }

    #[test]
    fn filtering_twice_equals_the_squared_kernel() {
        let fs = 100.0;
        let k = design_bandpass_fir(5.0, 20.0, fs, 5.0).unwrap();
        let lh = k.len();
        let k2 = FilterKernel {
            taps: fft_convolve_full(&k.taps, &k.taps),
            fs,
            passband: k.passband,
            transition_bw: k.transition_bw,
        };
        assert_eq!(k2.len(), 2 * lh - 1);
        let n = 1200;
        let x: Vec<f64> = (0..n)
            .map(|t| {
                let tt = t as f64;
                (0.3 * tt).sin() + 0.5 * (0.93 * tt + 0.4).cos()
            })
            .collect();
        let rec = mono_recording(x, fs);
        let twice = apply_filter_zero_phase(&apply_filter_zero_phase(&rec, &k).unwrap(), &k).unwrap();
        let once = apply_filter_zero_phase(&rec, &k2).unwrap();
        // reflection padding differs near the ends; compare the interior
        let margin = k2.group_delay() + 8;
        let mut acc = 0.0;
        let mut count = 0;
        for t in margin..n - margin {
            acc += (twice.samples[[t, 0]] - once.samples[[t, 0]]).powi(2);
            count += 1;
        }
        let rms = (acc / count as f64).sqrt();
        assert!(rms < 1e-6, "interior RMS difference {rms}");
    }

    #[test]
    fn recording_shorter_than_kernel_errors() {
        let k = design_bandpass_fir(0.5, 50.0, 500.0, 0.5).unwrap();
        let rec = mono_recording(vec![0.0; 100], 500.0);
        assert!(apply_filter_zero_phase(&rec, &k).is_err());
    }

    #[test]
    fn sampling_rate_mismatch_errors() {
        let k = design_bandpass_fir(0.5, 50.0, 500.0, 0.5).unwrap();
        let rec = mono_recording(vec![0.0; 5000], 250.0);
        assert!(apply_filter_zero_phase(&rec, &k).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn randomized_designs_stay_symmetric_with_cutoffs_in_place(
            fs in 100.0f64..800.0,
            low_frac in 0.01f64..0.08,
            high_frac in 0.15f64..0.4,
            tbw in 1.0f64..4.0,
        ) {
            let low = low_frac * fs;
            let high = high_frac * fs;
            prop_assume!(high - low > 2.0 * tbw);
            let k = design_bandpass_fir(low, high, fs, tbw).unwrap();
            prop_assert_eq!(k.len() % 2, 1);
            for i in 0..k.len() / 2 {
                prop_assert!((k.taps[i] - k.taps[k.len() - 1 - i]).abs() < 1e-12);
            }
            let lo_cross = half_gain_crossing(&k.taps, fs, (low - tbw).max(0.01), low + tbw, true);
            let hi_cross = half_gain_crossing(&k.taps, fs, high - tbw, high + tbw, false);
            prop_assert!((lo_cross - low).abs() <= tbw / 2.0 + 1e-6);
            prop_assert!((hi_cross - high).abs() <= tbw / 2.0 + 1e-6);
        }
    }
}
