//! Seeded synthetic-study generation with planted ground truth.
//!
//! Background activity is a mixture of shared pink-noise sources (fixed
//! scalp-distributed directions, smooth spatial weights) plus per-channel
//! pink noise, so channels show realistic inter-channel correlation and a
//! 1/f spectrum. Planted effects add a calibrated narrowband component
//! (band-power effects) or a directed two-channel VAR pair (connectivity
//! effects) inside the designated condition's segments.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::connectivity::companion_spectral_radius;
use crate::error::{Error, Result};
use crate::preprocess::{design_bandpass_fir, fft_convolve_full};
use crate::seeds;
use crate::signal_io::{standard_montage, Annotation, ChannelRole, Recording};
use crate::spectral::FrequencyBand;

const SHARED_VARIANCE_FRACTION: f64 = 0.8;
const PINK_FLOOR_HZ: f64 = 0.5;
const EOG_RMS_FACTOR: f64 = 3.0;
const LINK_RMS_FACTOR: f64 = 0.6;

// per-subject sub-stream tags
const TAG_SOURCE: u64 = 100;
const TAG_LOCAL: u64 = 101;
const TAG_EOG: u64 = 102;
const TAG_OSC: u64 = 103;
const TAG_LINK: u64 = 104;

/// One planted difference between conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantedEffect {
    /// Relative band-power change at the listed channels in `condition`.
    Bandpower {
        channels: Vec<String>,
        band: FrequencyBand,
        effect_size: f64,
        condition: String,
    },
    /// Directed influence source -> sink in `condition`; `effect_size` is the
    /// band-mean PDC the generating coefficients must reach.
    PdcLink {
        source: String,
        sink: String,
        band: FrequencyBand,
        effect_size: f64,
        condition: String,
    },
}

fn default_jitter() -> f64 {
    0.2
}
fn default_noise_rms() -> f64 {
    1e-5
}
fn default_n_eog() -> usize {
    2
}

/// Study layout and planted ground truth; JSON-serializable, seed mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub fs: f64,
    /// Bundled montage id, e.g. "standard57".
    pub montage: String,
    pub conditions: Vec<String>,
    pub tasks: Vec<String>,
    /// Duration of each (task, condition) segment, seconds.
    pub segment_s: f64,
    /// Eyes-open rest segment at the start of each recording, seconds.
    pub baseline_s: f64,
    #[serde(default)]
    pub effects: Vec<PlantedEffect>,
    /// Lognormal sigma of the per-subject multiplicative effect jitter.
    #[serde(default = "default_jitter")]
    pub subject_jitter: f64,
    /// Background RMS per channel, volts.
    #[serde(default = "default_noise_rms")]
    pub noise_rms: f64,
    #[serde(default = "default_n_eog")]
    pub n_eog: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("n_subjects must be >= 1".to_string()));
        }
        if !(self.fs > 0.0) {
            return Err(Error::config("fs must be positive".to_string()));
        }
        if self.conditions.is_empty() || self.tasks.is_empty() {
            return Err(Error::config("need at least one condition and one task".to_string()));
        }
        if !(self.segment_s > 0.0) || self.baseline_s < 0.0 {
            return Err(Error::config("invalid segment durations".to_string()));
        }
        if !(self.noise_rms > 0.0) {
            return Err(Error::config("noise_rms must be positive".to_string()));
        }
        if self.subject_jitter < 0.0 {
            return Err(Error::config("subject_jitter must be >= 0".to_string()));
        }
        let montage = standard_montage(&self.montage)?;
        for e in &self.effects {
            let (channels, band, size, condition): (Vec<&String>, _, _, _) = match e {
                PlantedEffect::Bandpower { channels, band, effect_size, condition } => {
                    (channels.iter().collect(), band, *effect_size, condition)
                }
                PlantedEffect::PdcLink { source, sink, band, effect_size, condition } => {
                    (vec![source, sink], band, *effect_size, condition)
                }
            };
            if !(band.lo < band.hi) || band.lo <= 0.0 || band.hi >= self.fs / 2.0 {
                return Err(Error::config(format!(
                    "effect band [{}, {}) outside (0, fs/2)",
                    band.lo, band.hi
                )));
            }
            if size <= -1.0 {
                return Err(Error::config(format!("effect size {size} must be > -1")));
            }
            if matches!(e, PlantedEffect::PdcLink { .. }) && size <= 0.0 {
                return Err(Error::config("pdc_link effect size must be > 0".to_string()));
            }
            if !self.conditions.contains(condition) {
                return Err(Error::config(format!("effect condition {condition:?} not declared")));
            }
            for ch in channels {
                if montage.position(ch).is_none() {
                    return Err(Error::config(format!("effect channel {ch:?} not in montage")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub feature: String,
    pub condition: String,
    pub expected_sign: i8,
}

/// What the generator planted, feature by feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<GroundTruthEntry>,
}

// ---------------------------------------------------------------------------
// Primitive generators
// ---------------------------------------------------------------------------

/// Simulate a stable VAR process with Gaussian innovations of covariance
/// `sigma`; 1000 burn-in samples are discarded.
pub fn gen_var_process(
    coeffs: &[Array2<f64>],
    sigma: &Array2<f64>,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if coeffs.is_empty() {
        return Err(Error::config("need at least one coefficient matrix".to_string()));
    }
    let m = coeffs[0].nrows();
    for a in coeffs {
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::config("coefficient matrices must be square and equal"));
        }
    }
    if sigma.nrows() != m || sigma.ncols() != m {
        return Err(Error::config("sigma shape mismatch".to_string()));
    }
    let radius = companion_spectral_radius(coeffs);
    if radius >= 1.0 {
        return Err(Error::numeric(format!(
            "unstable VAR coefficients (spectral radius {radius:.4})"
        )));
    }
    let sigma_na = DMatrix::from_fn(m, m, |i, j| sigma[[i, j]]);
    let chol = sigma_na
        .cholesky()
        .ok_or_else(|| Error::numeric("innovation covariance is not SPD".to_string()))?;
    let l = chol.l();

    let burn = 1000;
    let total = n + burn;
    let mut rng = seeds::rng(seed, &[]);
    let mut out = Array2::zeros((total, m));
    let mut z = vec![0.0f64; m];
    for t in 0..total {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..m {
            let mut v = 0.0;
            for j in 0..=i {
                v += l[(i, j)] * z[j];
            }
            for (r, a) in coeffs.iter().enumerate() {
                if t > r {
                    for j in 0..m {
                        v += a[[i, j]] * out[[t - 1 - r, j]];
                    }
                }
            }
            out[[t, i]] = v;
        }
    }
    Ok(out.slice(ndarray::s![burn.., ..]).to_owned())
}

/// Narrowband noise with RMS scaled exactly to `amplitude`.
pub fn gen_oscillation(
    band: &FrequencyBand,
    amplitude: f64,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(band.lo > 0.0 && band.lo < band.hi && band.hi < fs / 2.0) {
        return Err(Error::config(format!(
            "oscillation band [{}, {}) outside (0, {})",
            band.lo,
            band.hi,
            fs / 2.0
        )));
    }
    if amplitude < 0.0 {
        return Err(Error::config("amplitude must be >= 0".to_string()));
    }
    let n = (duration_s * fs).round() as usize;
    if n == 0 {
        return Ok(Vec::new());
    }
    if amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tbw = (band.hi - band.lo).min(2.0);
    let kernel = design_bandpass_fir(band.lo, band.hi, fs, tbw)?;
    let lh = kernel.len();
    let mut rng = seeds::rng(seed, &[]);
    let white: Vec<f64> = (0..n + 2 * lh).map(|_| StandardNormal.sample(&mut rng)).collect();
    let full = fft_convolve_full(&white, &kernel.taps);
    // steady-state slice, filter transients discarded
    let mut x: Vec<f64> = full[lh + lh / 2..lh + lh / 2 + n].to_vec();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let scale = amplitude / rms;
        x.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(x)
}

/// Unit-RMS pink noise (1/f power above 0.5 Hz), frequency-domain shaped.
fn pink_noise(n: usize, fs: f64, seed: u64) -> Vec<f64> {
    let m = n.next_power_of_two().max(16);
    let mut rng = seeds::rng(seed, &[]);
    let mut spec = vec![Complex64::new(0.0, 0.0); m];
    for j in 1..m / 2 {
        let f = j as f64 * fs / m as f64;
        let g = 1.0 / f.max(PINK_FLOOR_HZ).sqrt();
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        spec[j] = Complex64::new(a * g, b * g);
        spec[m - j] = spec[j].conj();
    }
    let g_nyq = 1.0 / (fs / 2.0).max(PINK_FLOOR_HZ).sqrt();
    let a: f64 = StandardNormal.sample(&mut rng);
    spec[m / 2] = Complex64::new(a * g_nyq, 0.0);
    FftPlanner::new().plan_fft_inverse(m).process(&mut spec);
    let mut x: Vec<f64> = spec[..n].iter().map(|c| c.re).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Band power of one signal from a single periodogram; used to calibrate
/// planted band-power effects against the channel background.
fn periodogram_band_power(x: &[f64], fs: f64, band: &FrequencyBand) -> f64 {
    let n = x.len();
    let m = n.next_power_of_two();
    let mut buf: Vec<Complex64> = x
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let df = fs / m as f64;
    let mut acc = 0.0;
    for j in 1..m / 2 {
        let f = j as f64 * df;
        if f >= band.lo && f < band.hi {
            acc += 2.0 * buf[j].norm_sqr() / (fs * n as f64) * df;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Directed-pair construction
// ---------------------------------------------------------------------------

/// AR(2) coefficients resonant at the band center.
fn resonant_ar2(band: &FrequencyBand, fs: f64) -> (f64, f64, f64) {
    let f0 = 0.5 * (band.lo + band.hi);
    let r = (1.0 - std::f64::consts::PI * (band.hi - band.lo) / (4.0 * fs)).clamp(0.9, 0.99);
    let omega = 2.0 * std::f64::consts::PI * f0 / fs;
    (2.0 * r * omega.cos(), -r * r, r)
}

/// Band-mean analytic PDC source -> sink of the coupled pair, closed form:
/// pi(f) = c / sqrt(|1 - a1 z - a2 z^2|^2 + c^2).
fn pair_band_pdc(a1: f64, a2: f64, c: f64, band: &FrequencyBand, fs: f64) -> f64 {
    let points = 128;
    let mut acc = 0.0;
    for i in 0..points {
        let f = band.lo + (band.hi - band.lo) * i as f64 / points as f64;
        let omega = -2.0 * std::f64::consts::PI * f / fs;
        let z1 = Complex64::new(0.0, omega).exp();
        let z2 = Complex64::new(0.0, 2.0 * omega).exp();
        let a = Complex64::new(1.0, 0.0) - a1 * z1 - a2 * z2;
        acc += c / (a.norm_sqr() + c * c).sqrt();
    }
    acc / points as f64
}

/// The generating 2x2 VAR coefficients for a planted link, with the coupling
/// bisected so the band-mean analytic PDC reaches `effect_size`.
///
/// Row/column order: [source, sink].
pub fn pdc_link_coefficients(
    band: &FrequencyBand,
    effect_size: f64,
    fs: f64,
) -> Result<(Vec<Array2<f64>>, f64)> {
    if !(effect_size > 0.0 && effect_size < 0.95) {
        return Err(Error::config(format!(
            "pdc_link effect size must be in (0, 0.95), got {effect_size}"
        )));
    }
    let (a1, a2, _r) = resonant_ar2(band, fs);
    let target = (effect_size + 0.05).min(0.95);
    let (mut lo, mut hi) = (0.0f64, 50.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if pair_band_pdc(a1, a2, mid, band, fs) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let mut m1 = Array2::zeros((2, 2));
    m1[[0, 0]] = a1;
    m1[[1, 1]] = a1;
    m1[[1, 0]] = c;
    let mut m2 = Array2::zeros((2, 2));
    m2[[0, 0]] = a2;
    m2[[1, 1]] = a2;
    Ok((vec![m1, m2], c))
}

/// Generate the (source, sink) pair signals. When `coupled` is false the sink
/// is driven by a hidden third stream with the same statistics, so the two
/// observed marginals match the coupled case but carry no directed influence.
fn gen_link_pair(
    band: &FrequencyBand,
    c: f64,
    n: usize,
    fs: f64,
    seed: u64,
    coupled: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (a1, a2, _r) = resonant_ar2(band, fs);
    let burn = 1000;
    let total = n + burn;
    let mut rng = seeds::rng(seed, &[]);
    let mut src = vec![0.0f64; total];
    let mut hidden = vec![0.0f64; total];
    let mut sink = vec![0.0f64; total];
    for t in 0..total {
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let e3: f64 = StandardNormal.sample(&mut rng);
        let lag = |v: &Vec<f64>, k: usize| if t >= k { v[t - k] } else { 0.0 };
        src[t] = a1 * lag(&src, 1) + a2 * lag(&src, 2) + e1;
        hidden[t] = a1 * lag(&hidden, 1) + a2 * lag(&hidden, 2) + e3;
        let driver = if coupled { lag(&src, 1) } else { lag(&hidden, 1) };
        sink[t] = a1 * lag(&sink, 1) + a2 * lag(&sink, 2) + c * driver + e2;
    }
    (src[burn..].to_vec(), sink[burn..].to_vec())
}

// ---------------------------------------------------------------------------
// Study generation
// ---------------------------------------------------------------------------

fn source_directions() -> Vec<[f64; 3]> {
    let raw: [[f64; 3]; 8] = [
        [0.0, 1.0, 0.5],
        [0.0, -1.0, 0.5],
        [1.0, 0.0, 0.5],
        [-1.0, 0.0, 0.5],
        [0.7, 0.7, 0.4],
        [-0.7, 0.7, 0.4],
        [0.7, -0.7, 0.4],
        [-0.7, -0.7, 0.4],
    ];
    raw.iter()
        .map(|v| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect()
}

/// One recording per subject plus the planted-feature manifest.
pub fn gen_study(spec: &SynthSpec) -> Result<(Vec<Recording>, GroundTruth)> {
    spec.validate()?;
    let montage = standard_montage(&spec.montage)?;
    let scalp_names: Vec<String> = montage.names().to_vec();
    let n_scalp = scalp_names.len();
    let fs = spec.fs;

    // segment layout: baseline first, then task-major condition segments
    let mut annotations = vec![Annotation {
        start_s: 0.0,
        end_s: spec.baseline_s,
        condition: "baseline".to_string(),
        task: "rest".to_string(),
    }];
    let mut t0 = spec.baseline_s;
    for task in &spec.tasks {
        for cond in &spec.conditions {
            annotations.push(Annotation {
                start_s: t0,
                end_s: t0 + spec.segment_s,
                condition: cond.clone(),
                task: task.clone(),
            });
            t0 += spec.segment_s;
        }
    }
    let n_total = (t0 * fs).round() as usize;

    // spatial mixing weights for the shared sources
    let dirs = source_directions();
    let mut weights = vec![vec![0.0f64; dirs.len()]; n_scalp];
    for (ci, name) in scalp_names.iter().enumerate() {
        let pos = montage.position(name).unwrap();
        let mut w2 = 0.0;
        for (k, d) in dirs.iter().enumerate() {
            let dist2 = (pos[0] - d[0]).powi(2) + (pos[1] - d[1]).powi(2) + (pos[2] - d[2]).powi(2);
            let w = (-dist2 / (2.0 * 0.6 * 0.6)).exp();
            weights[ci][k] = w;
            w2 += w * w;
        }
        let scale = (SHARED_VARIANCE_FRACTION / w2).sqrt();
        weights[ci].iter_mut().for_each(|w| *w *= scale);
    }
    let local_std = (1.0 - SHARED_VARIANCE_FRACTION).sqrt();

    let mut recordings = Vec::with_capacity(spec.n_subjects);
    for subj in 0..spec.n_subjects {
        let subj_tag = subj as u64;
        let mut samples = Array2::zeros((n_total, n_scalp + spec.n_eog));

        // shared sources + per-channel local noise, all unit-RMS pink
        let sources: Vec<Vec<f64>> = (0..dirs.len())
            .map(|k| {
                pink_noise(
                    n_total,
                    fs,
                    seeds::derive(spec.seed, &[seeds::STREAM_SUBJECT, subj_tag, TAG_SOURCE, k as u64]),
                )
            })
            .collect();
        for ci in 0..n_scalp {
            let local = pink_noise(
                n_total,
                fs,
                seeds::derive(spec.seed, &[seeds::STREAM_SUBJECT, subj_tag, TAG_LOCAL, ci as u64]),
            );
            for t in 0..n_total {
                let mut v = local_std * local[t];
                for (k, src) in sources.iter().enumerate() {
                    v += weights[ci][k] * src[t];
                }
                samples[[t, ci]] = v * spec.noise_rms;
            }
        }
        for e in 0..spec.n_eog {
            let x = pink_noise(
                n_total,
                fs,
                seeds::derive(spec.seed, &[seeds::STREAM_SUBJECT, subj_tag, TAG_EOG, e as u64]),
            );
            for t in 0..n_total {
                samples[[t, n_scalp + e]] = x[t] * spec.noise_rms * EOG_RMS_FACTOR;
            }
        }

        // planted effects
        for (e_idx, effect) in spec.effects.iter().enumerate() {
            let mut jitter_rng =
                seeds::rng(spec.seed, &[seeds::STREAM_EFFECT, e_idx as u64, subj_tag]);
            let z: f64 = StandardNormal.sample(&mut jitter_rng);
            let sigma = spec.subject_jitter;
            let jitter = (sigma * z - sigma * sigma / 2.0).exp();

            match effect {
                PlantedEffect::Bandpower { channels, band, effect_size, condition } => {
                    let delta = effect_size * jitter;
                    if delta <= -1.0 {
                        return Err(Error::numeric(
                            "jittered band-power effect fell below -100%".to_string(),
                        ));
                    }
                    for ch in channels {
                        let ci = scalp_names.iter().position(|n| n == ch).unwrap();
                        let background: Vec<f64> = (0..n_total).map(|t| samples[[t, ci]]).collect();
                        let p0 = periodogram_band_power(&background, fs, band);
                        let amp = (delta.abs() * p0).sqrt();
                        for (seg_idx, a) in annotations.iter().enumerate() {
                            if &a.condition != condition {
                                continue;
                            }
                            let lo = (a.start_s * fs).round() as usize;
                            let hi = (a.end_s * fs).round() as usize;
                            let osc = gen_oscillation(
                                band,
                                amp,
                                (hi - lo) as f64 / fs,
                                fs,
                                seeds::derive(
                                    spec.seed,
                                    &[
                                        seeds::STREAM_EFFECT,
                                        e_idx as u64,
                                        subj_tag,
                                        TAG_OSC,
                                        seg_idx as u64,
                                        ci as u64,
                                    ],
                                ),
                            )?;
                            // a negative effect attenuates the band instead
                            let sign = if *effect_size >= 0.0 { 1.0 } else { -1.0 };
                            for (t, &v) in osc.iter().enumerate() {
                                samples[[lo + t, ci]] += sign * v;
                            }
                        }
                    }
                }
                PlantedEffect::PdcLink { source, sink, band, effect_size, condition } => {
                    let size = (effect_size * jitter).clamp(0.02, 0.9);
                    let (_coeffs, c) = pdc_link_coefficients(band, size, fs)?;
                    let si = scalp_names.iter().position(|n| n == source).unwrap();
                    let ki = scalp_names.iter().position(|n| n == sink).unwrap();
                    for (seg_idx, a) in annotations.iter().enumerate() {
                        let lo = (a.start_s * fs).round() as usize;
                        let hi = (a.end_s * fs).round() as usize;
                        let coupled = &a.condition == condition;
                        let (u_src, u_sink) = gen_link_pair(
                            band,
                            c,
                            hi - lo,
                            fs,
                            seeds::derive(
                                spec.seed,
                                &[
                                    seeds::STREAM_EFFECT,
                                    e_idx as u64,
                                    subj_tag,
                                    TAG_LINK,
                                    seg_idx as u64,
                                ],
                            ),
                            coupled,
                        );
                        let rms1 = (u_src.iter().map(|v| v * v).sum::<f64>()
                            / u_src.len() as f64)
                            .sqrt();
                        let rms2 = (u_sink.iter().map(|v| v * v).sum::<f64>()
                            / u_sink.len() as f64)
                            .sqrt();
                        // one common scale keeps the pair's PDC intact
                        let scale = LINK_RMS_FACTOR * spec.noise_rms
                            / (0.5 * (rms1 * rms1 + rms2 * rms2)).sqrt();
                        for t in 0..(hi - lo) {
                            samples[[lo + t, si]] += scale * u_src[t];
                            samples[[lo + t, ki]] += scale * u_sink[t];
                        }
                    }
                }
            }
        }

        // quantize to f32 so save/load round-trips are bit-exact
        samples.mapv_inplace(|v| v as f32 as f64);

        let mut channel_names = scalp_names.clone();
        let mut channel_roles = vec![ChannelRole::Scalp; n_scalp];
        for e in 0..spec.n_eog {
            channel_names.push(format!("EOG{}", e + 1));
            channel_roles.push(ChannelRole::Eog);
        }
        let rec = Recording {
            samples,
            fs,
            channel_names,
            channel_roles,
            subject_id: format!("s{:02}", subj + 1),
            annotations: annotations.clone(),
        };
        rec.validate()?;
        recordings.push(rec);
    }

    let mut entries = Vec::new();
    for effect in &spec.effects {
        match effect {
            PlantedEffect::Bandpower { channels, band, effect_size, condition } => {
                for ch in channels {
                    entries.push(GroundTruthEntry {
                        feature: format!("bp:{ch}:{}", band.name),
                        condition: condition.clone(),
                        expected_sign: if *effect_size >= 0.0 { 1 } else { -1 },
                    });
                }
            }
            PlantedEffect::PdcLink { source, sink, band, condition, .. } => {
                entries.push(GroundTruthEntry {
                    feature: format!("pdc:{source}->{sink}:{}", band.name),
                    condition: condition.clone(),
                    expected_sign: 1,
                });
            }
        }
    }
    Ok((recordings, GroundTruth { entries }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{fit_mvar, pdc, MvarModel};
    use crate::spectral::{multitaper_psd, MultitaperConfig};
    use approx::assert_abs_diff_eq;

    fn alpha() -> FrequencyBand {
        FrequencyBand { name: "alpha".into(), lo: 8.0, hi: 12.0 }
    }

    #[test]
    fn zero_coefficients_reproduce_the_innovation_covariance() {
        let mut sigma = Array2::eye(2);
        sigma[[0, 1]] = 0.4;
        sigma[[1, 0]] = 0.4;
        sigma[[1, 1]] = 2.0;
        let x = gen_var_process(&[Array2::zeros((2, 2))], &sigma, 100_000, 5).unwrap();
        let n = x.nrows() as f64;
        let mut cov = Array2::zeros((2, 2));
        for i in 0..2 {
            for j in 0..2 {
                cov[[i, j]] = x.column(i).dot(&x.column(j)) / n;
            }
        }
        let num: f64 = cov
            .iter()
            .zip(sigma.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 0.05, "relative Frobenius error {}", num / den);
    }

    #[test]
    fn unstable_coefficients_error() {
        let mut a = Array2::zeros((1, 1));
        a[[0, 0]] = 1.1;
        assert!(gen_var_process(&[a], &Array2::eye(1), 100, 0).is_err());
    }

    #[test]
    fn var_process_is_seed_deterministic() {
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 0.5;
        a[[1, 1]] = -0.3;
        let x1 = gen_var_process(&[a.clone()], &Array2::eye(2), 500, 9).unwrap();
        let x2 = gen_var_process(&[a.clone()], &Array2::eye(2), 500, 9).unwrap();
        assert_eq!(x1, x2);
        let x3 = gen_var_process(&[a], &Array2::eye(2), 500, 10).unwrap();
        assert_ne!(x1, x3);
    }

    #[test]
    fn oscillation_stays_in_band_with_exact_rms() {
        let fs = 500.0;
        let band = alpha();
        let x = gen_oscillation(&band, 2.5e-6, 30.0, fs, 3).unwrap();
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert_abs_diff_eq!(rms, 2.5e-6, epsilon = 2.5e-6 * 1e-9);

        let arr = ndarray::Array1::from(x);
        let psd = multitaper_psd(arr.view(), fs, MultitaperConfig::default()).unwrap();
        let inside = crate::spectral::band_power(
            &psd,
            &FrequencyBand::new("wide", band.lo - 1.0, band.hi + 1.0).unwrap(),
        )
        .unwrap();
        let total = psd.total_power();
        assert!(inside / total >= 0.90, "in-band fraction {}", inside / total);
    }

    #[test]
    fn zero_amplitude_oscillation_is_silence() {
        let x = gen_oscillation(&alpha(), 0.0, 5.0, 500.0, 1).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(x.len(), 2500);
    }

    #[test]
    fn oscillation_is_seed_deterministic() {
        let a = gen_oscillation(&alpha(), 1e-6, 4.0, 500.0, 7).unwrap();
        let b = gen_oscillation(&alpha(), 1e-6, 4.0, 500.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(gen_oscillation(&FrequencyBand { name: "x".into(), lo: 0.0, hi: 10.0 }, 1e-6, 1.0, 500.0, 0).is_err());
    }

    #[test]
    fn planted_link_reaches_the_requested_analytic_pdc() {
        // cross-checked through connectivity::pdc rather than the internal
        // closed form
        let band = alpha();
        let fs = 500.0;
        for effect in [0.2, 0.4, 0.6] {
            let (coeffs, c) = pdc_link_coefficients(&band, effect, fs).unwrap();
            assert!(c > 0.0);
            let radius = companion_spectral_radius(&coeffs);
            assert!(radius < 1.0, "radius {radius}");
            let model = MvarModel {
                order: coeffs.len(),
                coeffs,
                sigma: Array2::eye(2),
                fs,
                spectral_radius: radius,
            };
            let grid: Vec<f64> = (0..256).map(|i| 1.0 + 39.0 * i as f64 / 255.0).collect();
            let tensor = pdc(&model, &grid, &["src".into(), "sink".into()]).unwrap();
            let forward = tensor.band_mean(1, 0, &band).unwrap();
            let reverse = tensor.band_mean(0, 1, &band).unwrap();
            assert!(forward >= effect, "analytic band PDC {forward} < {effect}");
            assert_eq!(reverse, 0.0);
        }
        assert!(pdc_link_coefficients(&band, 0.99, fs).is_err());
    }

    #[test]
    fn coupled_pairs_show_directed_influence_uncoupled_pairs_do_not() {
        let band = alpha();
        let fs = 500.0;
        let (_, c) = pdc_link_coefficients(&band, 0.5, fs).unwrap();
        let n = 10_000;
        let grid: Vec<f64> = (0..128).map(|i| 1.0 + 39.0 * i as f64 / 127.0).collect();
        let fitted = |coupled: bool| -> (f64, f64) {
            let (src, sink) = gen_link_pair(&band, c, n, fs, 77, coupled);
            let mut data = Array2::zeros((n, 2));
            for t in 0..n {
                data[[t, 0]] = src[t];
                data[[t, 1]] = sink[t];
            }
            let model = fit_mvar(&data, 4, fs).unwrap();
            let tensor = pdc(&model, &grid, &["src".into(), "sink".into()]).unwrap();
            (
                tensor.band_mean(1, 0, &band).unwrap(),
                tensor.band_mean(0, 1, &band).unwrap(),
            )
        };
        let (fwd_coupled, rev_coupled) = fitted(true);
        let (fwd_uncoupled, _) = fitted(false);
        assert!(fwd_coupled > 0.3, "coupled forward PDC {fwd_coupled}");
        assert!(fwd_coupled > 5.0 * fwd_uncoupled, "uncoupled forward {fwd_uncoupled}");
        assert!(fwd_coupled > 5.0 * rev_coupled, "reverse {rev_coupled}");
    }

    fn small_spec(effects: Vec<PlantedEffect>, seed: u64) -> SynthSpec {
        SynthSpec {
            n_subjects: 3,
            fs: 250.0,
            montage: "standard57".into(),
            conditions: vec!["neutral".into(), "wide".into()],
            tasks: vec!["vmt".into()],
            segment_s: 10.0,
            baseline_s: 8.0,
            effects,
            subject_jitter: 0.2,
            noise_rms: 1e-5,
            n_eog: 2,
            seed,
        }
    }

    #[test]
    fn study_layout_and_determinism() {
        let spec = small_spec(vec![], 42);
        let (recs, truth) = gen_study(&spec).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(truth.entries.is_empty());
        for rec in &recs {
            assert_eq!(rec.n_channels(), 59);
            assert_eq!(rec.scalp_indices().len(), 57);
            assert_eq!(rec.eog_indices().len(), 2);
            assert_eq!(rec.annotations.len(), 1 + 2);
            assert_eq!(rec.annotations[0].condition, "baseline");
            assert_abs_diff_eq!(rec.duration_s(), 28.0, epsilon = 1e-9);
            // f32 quantization for bit-exact round trips
            for v in rec.samples.iter().take(500) {
                assert_eq!(*v, *v as f32 as f64);
            }
        }
        let (recs2, _) = gen_study(&spec).unwrap();
        assert_eq!(recs[0].samples, recs2[0].samples);
        let (recs3, _) = gen_study(&small_spec(vec![], 43)).unwrap();
        assert_ne!(recs[0].samples, recs3[0].samples);
    }

    #[test]
    fn planted_band_power_lands_near_the_requested_relative_change() {
        let band = alpha();
        let spec = SynthSpec {
            subject_jitter: 0.0,
            effects: vec![PlantedEffect::Bandpower {
                channels: vec!["Oz".into()],
                band: band.clone(),
                effect_size: 0.5,
                condition: "wide".into(),
            }],
            segment_s: 20.0,
            ..small_spec(vec![], 7)
        };
        let (recs, truth) = gen_study(&spec).unwrap();
        assert_eq!(truth.entries.len(), 1);
        assert_eq!(truth.entries[0].feature, "bp:Oz:alpha");

        let rec = &recs[0];
        let oz = rec.channel_index("Oz").unwrap();
        let fs = rec.fs;
        let seg_power = |cond: &str| -> f64 {
            let a = rec.annotations.iter().find(|a| a.condition == cond).unwrap();
            let lo = (a.start_s * fs) as usize;
            let hi = (a.end_s * fs) as usize;
            let x: Vec<f64> = (lo..hi).map(|t| rec.samples[[t, oz]]).collect();
            periodogram_band_power(&x, fs, &band)
        };
        let neutral = seg_power("neutral");
        let wide = seg_power("wide");
        let rel = wide / neutral - 1.0;
        assert!(
            (rel - 0.5).abs() < 0.35,
            "planted +50% produced {rel:+.2} relative change"
        );
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut spec = small_spec(vec![], 1);
        spec.conditions = vec![];
        assert!(spec.validate().is_err());

        let mut spec = small_spec(
            vec![PlantedEffect::Bandpower {
                channels: vec!["NotAChannel".into()],
                band: alpha(),
                effect_size: 0.5,
                condition: "wide".into(),
            }],
            1,
        );
        assert!(spec.validate().is_err());
        spec.effects = vec![PlantedEffect::Bandpower {
            channels: vec!["Oz".into()],
            band: alpha(),
            effect_size: 0.5,
            condition: "nope".into(),
        }];
        assert!(spec.validate().is_err());
        spec.effects = vec![PlantedEffect::Bandpower {
            channels: vec!["Oz".into()],
            band: alpha(),
            effect_size: -1.5,
            condition: "wide".into(),
        }];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn synth_spec_round_trips_through_json_and_rejects_unknown_keys() {
        let spec = small_spec(
            vec![PlantedEffect::PdcLink {
                source: "Fz".into(),
                sink: "Pz".into(),
                band: alpha(),
                effect_size: 0.4,
                condition: "wide".into(),
            }],
            11,
        );
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: SynthSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);

        let with_unknown = json.replacen('{', "{\n  \"unknown_key\": 1,", 1);
        assert!(serde_json::from_str::<SynthSpec>(&with_unknown).is_err());
        // seed is mandatory
        let without_seed = json.replace("\"seed\": 11", "\"n_eog\": 2");
        assert!(serde_json::from_str::<SynthSpec>(&without_seed).is_err());
    }
}
