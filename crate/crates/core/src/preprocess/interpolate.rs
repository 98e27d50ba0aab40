//! Spherical-spline interpolation of bad channels (Perrin et al. style,
//! order m = 4).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal_io::{Montage, Recording};

const SPLINE_ORDER: i32 = 4;
const SERIES_TOL: f64 = 1e-10;
const SERIES_MAX_DEGREE: usize = 50;

/// Spherical-spline kernel g(cos gamma): Legendre series with coefficients
/// (2n+1) / (n (n+1))^m, truncated when a term falls below 1e-10 or at n = 50.
fn spline_kernel(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    let mut p_prev = 1.0; // P_0
    let mut p = x; // P_1
    let mut acc = 0.0;
    for deg in 1..=SERIES_MAX_DEGREE {
        let nf = deg as f64;
        let coeff = (2.0 * nf + 1.0) / (nf * (nf + 1.0)).powi(SPLINE_ORDER);
        let term = coeff * p;
        acc += term;
        if coeff < SERIES_TOL {
            break;
        }
        // Legendre recurrence
        let p_next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = p_next;
    }
    acc / (4.0 * std::f64::consts::PI)
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Replace `bad` scalp channels with spherical-spline estimates from the
/// remaining good scalp channels. Good channels come through untouched.
pub fn interpolate_channels(rec: &Recording, montage: &Montage, bad: &[String]) -> Result<Recording> {
    if bad.is_empty() {
        return Ok(rec.clone());
    }
    let scalp = rec.scalp_indices();
    for name in bad {
        let idx = rec
            .channel_index(name)
            .ok_or_else(|| Error::data(format!("unknown channel {name:?}")))?;
        if !scalp.contains(&idx) {
            return Err(Error::data(format!("channel {name:?} is not a scalp channel")));
        }
    }
    montage.check_covers(rec)?;

    let good: Vec<usize> = scalp
        .iter()
        .copied()
        .filter(|&c| !bad.contains(&rec.channel_names[c]))
        .collect();
    if good.len() < 4 {
        return Err(Error::data(format!(
            "only {} good scalp channels remain, need >= 4",
            good.len()
        )));
    }

    let good_pos: Vec<[f64; 3]> = good
        .iter()
        .map(|&c| montage.position(&rec.channel_names[c]).unwrap())
        .collect();
    let k = good.len();

    // [[G, 1], [1', 0]] is symmetric; solving M alpha = [g_vec; 1] gives the
    // per-sample interpolation weights for one bad electrode.
    let mut m = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in i..k {
            let g = spline_kernel(dot3(good_pos[i], good_pos[j]));
            m[(i, j)] = g;
            m[(j, i)] = g;
        }
        m[(i, k)] = 1.0;
        m[(k, i)] = 1.0;
    }
    let lu = m.lu();

    let mut out = rec.clone();
    for name in bad {
        let target = rec.channel_index(name).unwrap();
        let pos = montage.position(name).unwrap();
        let mut rhs = DMatrix::zeros(k + 1, 1);
        for i in 0..k {
            rhs[(i, 0)] = spline_kernel(dot3(pos, good_pos[i]));
        }
        rhs[(k, 0)] = 1.0;
        let alpha = lu
            .solve(&rhs)
            .ok_or_else(|| Error::numeric("singular spherical-spline system".to_string()))?;
        for s in 0..rec.n_samples() {
            let mut v = 0.0;
            for (i, &c) in good.iter().enumerate() {
                v += alpha[(i, 0)] * rec.samples[[s, c]];
            }
            out.samples[[s, target]] = v;
        }
    }
    Ok(out)
}
