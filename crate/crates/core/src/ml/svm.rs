//! Soft-margin kernel SVM trained by sequential minimal optimization with
//! maximal-violating-pair working-set selection.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial-kernel SVM settings. The defaults are degree 2, coef0 1,
/// box constraint 1, KKT tolerance 1e-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub degree: u32,
    pub coef0: f64,
    pub c: f64,
    pub tolerance: f64,
    /// Cap on SMO pair updates before the solver reports divergence.
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { degree: 2, coef0: 1.0, c: 1.0, tolerance: 1e-3, max_passes: 2_000_000 }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::config("kernel degree must be >= 1".to_string()));
        }
        if !(self.c > 0.0) {
            return Err(Error::config(format!("box constraint must be > 0, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance must be > 0".to_string()));
        }
        Ok(())
    }

    /// K(u, v) = (u . v + coef0)^degree
    pub fn kernel(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        (u.dot(&v) + self.coef0).powi(self.degree as i32)
    }
}

/// Dual solution: support vectors, their multipliers and labels, and the bias.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub support_x: Array2<f64>,
    pub support_y: Vec<i8>,
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub config: SvmConfig,
    pub n_features: usize,
}

/// Train on rows of `x` with labels in {-1, +1}.
pub fn train_ksvm(x: ArrayView2<f64>, y: &[i8], cfg: &SvmConfig) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::data(format!("{n} rows but {} labels", y.len())));
    }
    if n < 2 {
        return Err(Error::data("need at least 2 training samples".to_string()));
    }
    if y.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::data("labels must be -1 or +1".to_string()));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::data("training data contains a single class".to_string()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite feature value".to_string()));
    }

    // full kernel matrix when it fits comfortably, otherwise rows on demand
    let cache_full = n <= 3000;
    let gram: Option<Vec<f64>> = if cache_full {
        let mut g = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let k = cfg.kernel(x.row(i), x.row(j));
                g[i * n + j] = k;
                g[j * n + i] = k;
            }
        }
        Some(g)
    } else {
        None
    };
    let kernel_row = |i: usize, buf: &mut Vec<f64>| {
        if let Some(g) = &gram {
            buf.copy_from_slice(&g[i * n..(i + 1) * n]);
        } else {
            for j in 0..n {
                buf[j] = cfg.kernel(x.row(i), x.row(j));
            }
        }
    };

    let c = cfg.c;
    let yq: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n]; // G = Q alpha - e
    let mut row_i = vec![0.0f64; n];
    let mut row_j = vec![0.0f64; n];

    let mut iterations = 0usize;
    loop {
        // maximal violating pair
        let mut i_sel = usize::MAX;
        let mut m_val = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let up = (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
            let low = (y[t] == 1 && alpha[t] > 0.0) || (y[t] == -1 && alpha[t] < c);
            let v = -yq[t] * grad[t];
            if up && v > m_val {
                m_val = v;
                i_sel = t;
            }
            if low && v < m_low {
                m_low = v;
                j_sel = t;
            }
        }
        if m_val - m_low <= cfg.tolerance || i_sel == usize::MAX || j_sel == usize::MAX {
            break;
        }
        if iterations >= cfg.max_passes {
            return Err(Error::numeric(format!(
                "SMO did not converge within {} updates (gap {:.3e})",
                cfg.max_passes,
                m_val - m_low
            )));
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        kernel_row(i, &mut row_i);
        kernel_row(j, &mut row_j);
        let qii = row_i[i];
        let qjj = row_j[j];
        let qij = yq[i] * yq[j] * row_i[j];
        let old_ai = alpha[i];
        let old_aj = alpha[j];

        if y[i] != y[j] {
            // Q_ii + Q_jj + 2 Q_ij with Q_ij = y_i y_j K_ij
            let quad = (qii + qjj + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let dai = alpha[i] - old_ai;
        let daj = alpha[j] - old_aj;
        for t in 0..n {
            grad[t] += yq[t] * (yq[i] * row_i[t] * dai + yq[j] * row_j[t] * daj);
        }
    }

    // bias from the free support vectors, else the midpoint of the gap
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..n {
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += -yq[t] * grad[t];
            free_count += 1;
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        let mut m_val = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let up = (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
            let low = (y[t] == 1 && alpha[t] > 0.0) || (y[t] == -1 && alpha[t] < c);
            let v = -yq[t] * grad[t];
            if up {
                m_val = m_val.max(v);
            }
            if low {
                m_low = m_low.min(v);
            }
        }
        0.5 * (m_val + m_low)
    };

    let sv_idx: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let support_x = Array2::from_shape_fn((sv_idx.len(), x.ncols()), |(s, f)| x[[sv_idx[s], f]]);
    Ok(TrainedClassifier {
        support_x,
        support_y: sv_idx.iter().map(|&t| y[t]).collect(),
        alpha: sv_idx.iter().map(|&t| alpha[t]).collect(),
        bias,
        config: *cfg,
        n_features: x.ncols(),
    })
}

/// Labels and decision values; a decision of exactly 0 predicts +1.
pub fn predict(model: &TrainedClassifier, x: ArrayView2<f64>) -> Result<(Vec<i8>, Vec<f64>)> {
    if x.ncols() != model.n_features {
        return Err(Error::data(format!(
            "{} feature columns but the model was trained on {}",
            x.ncols(),
            model.n_features
        )));
    }
    let mut labels = Vec::with_capacity(x.nrows());
    let mut decisions = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut d = model.bias;
        for s in 0..model.alpha.len() {
            d += model.alpha[s]
                * model.support_y[s] as f64
                * model.config.kernel(model.support_x.row(s), x.row(i));
        }
        decisions.push(d);
        labels.push(if d >= 0.0 { 1 } else { -1 });
    }
    Ok((labels, decisions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    /// Dual objective 0.5 a'Qa - e'a of a trained model (alpha = 0 off the
    /// support set, so the support vectors carry the whole sum).
    fn dual_objective(model: &TrainedClassifier) -> f64 {
        let n = model.alpha.len();
        let mut obj = 0.0;
        for i in 0..n {
            for j in 0..n {
                obj += 0.5
                    * model.alpha[i]
                    * model.alpha[j]
                    * model.support_y[i] as f64
                    * model.support_y[j] as f64
                    * model.config.kernel(model.support_x.row(i), model.support_x.row(j));
            }
            obj -= model.alpha[i];
        }
        obj
    }

    /// Brute-force dual solve by active-set enumeration (every alpha is
    /// lower-bounded, upper-bounded, or free: 3^n configurations). Exact up
    /// to the linear solves; independent of the SMO path.
    fn brute_force_dual(x: &Array2<f64>, y: &[i8], cfg: &SvmConfig) -> f64 {
        let n = y.len();
        assert!(n <= 8);
        let k = |i: usize, j: usize| cfg.kernel(x.row(i), x.row(j));
        let q = |i: usize, j: usize| (y[i] * y[j]) as f64 * k(i, j);
        let mut best = f64::INFINITY;
        let tol = 1e-9;
        for config in 0..3usize.pow(n as u32) {
            let mut state = vec![0u8; n];
            let mut c = config;
            for s in state.iter_mut() {
                *s = (c % 3) as u8; // 0 = at 0, 1 = at C, 2 = free
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            let mut alpha = vec![0.0f64; n];
            for i in 0..n {
                if state[i] == 1 {
                    alpha[i] = cfg.c;
                }
            }
            let beta; // multiplier of the equality constraint
            if free.is_empty() {
                let ysum: f64 = (0..n).map(|i| alpha[i] * y[i] as f64).sum();
                if ysum.abs() > 1e-9 {
                    continue;
                }
                // any beta satisfying the bound conditions will do
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for i in 0..n {
                    let grad: f64 = (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>() - 1.0;
                    // at 0: grad + beta*y >= 0; at C: grad + beta*y <= 0
                    if state[i] == 0 {
                        if y[i] == 1 {
                            lo = lo.max(-grad);
                        } else {
                            hi = hi.min(grad);
                        }
                    } else if y[i] == 1 {
                        hi = hi.min(-grad);
                    } else {
                        lo = lo.max(grad);
                    }
                }
                if lo > hi + tol {
                    continue;
                }
                beta = 0.5 * (lo.max(-1e9) + hi.min(1e9));
                let _ = beta;
            } else {
                // solve [Q_FF y_F; y_F' 0][a_F; beta] = [1 - Q_FB a_B; -y_B' a_B]
                let nf = free.len();
                let mut m = DMatrix::zeros(nf + 1, nf + 1);
                let mut rhs = DMatrix::zeros(nf + 1, 1);
                for (a, &i) in free.iter().enumerate() {
                    for (b, &j) in free.iter().enumerate() {
                        m[(a, b)] = q(i, j);
                    }
                    m[(a, nf)] = y[i] as f64;
                    m[(nf, a)] = y[i] as f64;
                    let fixed: f64 = (0..n)
                        .filter(|&j| state[j] != 2)
                        .map(|j| q(i, j) * alpha[j])
                        .sum();
                    rhs[(a, 0)] = 1.0 - fixed;
                }
                rhs[(nf, 0)] = -(0..n)
                    .filter(|&j| state[j] != 2)
                    .map(|j| alpha[j] * y[j] as f64)
                    .sum::<f64>();
                let solved = match m.lu().solve(&rhs) {
                    Some(s) => s,
                    None => continue,
                };
                for (a, &i) in free.iter().enumerate() {
                    alpha[i] = solved[(a, 0)];
                }
                let b = solved[(nf, 0)];
                if free.iter().any(|&i| alpha[i] < -tol || alpha[i] > cfg.c + tol) {
                    continue;
                }
                let mut ok = true;
                for i in 0..n {
                    if state[i] == 2 {
                        continue;
                    }
                    let grad: f64 = (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>() - 1.0;
                    let g = grad + b * y[i] as f64;
                    if state[i] == 0 && g < -1e-7 {
                        ok = false;
                        break;
                    }
                    if state[i] == 1 && g > 1e-7 {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
            }
            let mut obj = 0.0;
            for i in 0..n {
                for j in 0..n {
                    obj += 0.5 * alpha[i] * alpha[j] * q(i, j);
                }
                obj -= alpha[i];
            }
            best = best.min(obj);
        }
        best
    }

    fn xor_fixture() -> (Array2<f64>, Vec<i8>) {
        let x = ndarray::array![[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
        let y = vec![1, 1, -1, -1];
        (x, y)
    }

    /// Separable two-cluster fixture: labels by the sign of the first
    /// feature, with a comfortable margin.
    fn separable_fixture(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<i8>) {
        let mut rng = seeds::rng(seed, &[]);
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { 1i8 } else { -1 };
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = 0.3 * noise;
            }
            x[[i, 0]] += label as f64 * 2.0;
            y.push(label);
        }
        (x, y)
    }

    /// Every KKT condition at the stated tolerance, via predictions on the
    /// training set.
    fn assert_kkt(model: &TrainedClassifier, x: &Array2<f64>, y: &[i8], kkt_tol: f64) {
        let (_, decisions) = predict(model, x.view()).unwrap();
        // alpha by training row: support vectors carry alpha, others zero
        let mut alpha_of = vec![0.0f64; y.len()];
        for (s, a) in model.alpha.iter().enumerate() {
            // match support vector back to its training row
            let mut found = false;
            for i in 0..y.len() {
                if alpha_of[i] == 0.0
                    && y[i] == model.support_y[s]
                    && (0..x.ncols()).all(|j| x[[i, j]] == model.support_x[[s, j]])
                {
                    alpha_of[i] = *a;
                    found = true;
                    break;
                }
            }
            assert!(found, "support vector {s} not found among training rows");
        }
        let c = model.config.c;
        for i in 0..y.len() {
            let margin = y[i] as f64 * decisions[i];
            let a = alpha_of[i];
            if a < 1e-12 {
                assert!(margin >= 1.0 - kkt_tol, "alpha=0 row {i}: margin {margin}");
            } else if a > c - 1e-12 {
                assert!(margin <= 1.0 + kkt_tol, "alpha=C row {i}: margin {margin}");
            } else {
                assert!(
                    (margin - 1.0).abs() <= kkt_tol,
                    "free row {i}: margin {margin}"
                );
            }
        }
        let sum: f64 = model
            .alpha
            .iter()
            .zip(&model.support_y)
            .map(|(a, &yy)| a * yy as f64)
            .sum();
        assert!(sum.abs() < 1e-6, "sum alpha*y = {sum}");
    }

    #[test]
    fn two_separated_points() {
        let x = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
        let y = vec![1, -1];
        let model = train_ksvm(x.view(), &y, &SvmConfig::default()).unwrap();
        let (pred, _) = predict(&model, x.view()).unwrap();
        assert_eq!(pred, y);
        assert_eq!(model.alpha.len(), 2);
    }

    #[test]
    fn xor_is_separable_with_the_degree_two_kernel() {
        let (x, y) = xor_fixture();
        let model = train_ksvm(x.view(), &y, &SvmConfig::default()).unwrap();
        let (pred, _) = predict(&model, x.view()).unwrap();
        assert_eq!(pred, y);
        // known closed-form dual: all four support vectors at alpha = 1/8,
        // bias 0
        assert_eq!(model.alpha.len(), 4);
        for a in &model.alpha {
            assert_abs_diff_eq!(*a, 0.125, epsilon = 1e-3);
        }
        assert_abs_diff_eq!(model.bias, 0.0, epsilon = 1e-3);
    }

    #[test]
    fn xor_matches_the_brute_force_dual() {
        let (x, y) = xor_fixture();
        let cfg = SvmConfig { tolerance: 1e-8, ..SvmConfig::default() };
        let model = train_ksvm(x.view(), &y, &cfg).unwrap();
        let smo_obj = dual_objective(&model);
        let exact = brute_force_dual(&x, &y, &cfg);
        assert_abs_diff_eq!(smo_obj, exact, epsilon = 1e-4);
    }

    #[test]
    fn random_small_problems_match_the_brute_force_dual() {
        for seed in 0..12 {
            let mut rng = seeds::rng(800 + seed, &[]);
            let n = 6 + (seed % 3) as usize; // 6..8 points
            let mut x = Array2::zeros((n, 2));
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                for j in 0..2 {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    x[[i, j]] = v;
                }
                y.push(if i % 2 == 0 { 1i8 } else { -1 });
            }
            let cfg = SvmConfig { tolerance: 1e-9, ..SvmConfig::default() };
            let model = train_ksvm(x.view(), &y, &cfg).unwrap();
            let smo_obj = dual_objective(&model);
            let exact = brute_force_dual(&x, &y, &cfg);
            assert!(
                (smo_obj - exact).abs() < 1e-4,
                "seed {seed}: SMO {smo_obj} vs brute force {exact}"
            );
        }
    }

    #[test]
    fn kkt_holds_on_random_separable_fixtures() {
        for seed in 0..10 {
            let (x, y) = separable_fixture(40, 3, 300 + seed);
            let cfg = SvmConfig::default();
            let model = train_ksvm(x.view(), &y, &cfg).unwrap();
            assert_kkt(&model, &x, &y, 1e-3);
            let (pred, _) = predict(&model, x.view()).unwrap();
            assert_eq!(pred, y, "training accuracy below 1 on separable data");
        }
    }

    #[test]
    fn label_flip_negates_decisions() {
        let (x, y) = separable_fixture(30, 2, 17);
        let cfg = SvmConfig { tolerance: 1e-8, ..SvmConfig::default() };
        let model = train_ksvm(x.view(), &y, &cfg).unwrap();
        let flipped: Vec<i8> = y.iter().map(|&l| -l).collect();
        let model_f = train_ksvm(x.view(), &flipped, &cfg).unwrap();
        let (_, d) = predict(&model, x.view()).unwrap();
        let (_, df) = predict(&model_f, x.view()).unwrap();
        for (a, b) in d.iter().zip(&df) {
            assert_abs_diff_eq!(*a, -b, epsilon = 1e-6);
        }
    }

    #[test]
    fn training_is_invariant_to_row_order() {
        let (x, y) = separable_fixture(24, 2, 23);
        let cfg = SvmConfig { tolerance: 1e-8, ..SvmConfig::default() };
        let model = train_ksvm(x.view(), &y, &cfg).unwrap();

        let perm: Vec<usize> = (0..24).map(|i| (i * 7) % 24).collect();
        let xp = Array2::from_shape_fn((24, 2), |(i, j)| x[[perm[i], j]]);
        let yp: Vec<i8> = perm.iter().map(|&i| y[i]).collect();
        let model_p = train_ksvm(xp.view(), &yp, &cfg).unwrap();

        let probe = separable_fixture(10, 2, 99).0;
        let (_, d) = predict(&model, probe.view()).unwrap();
        let (_, dp) = predict(&model_p, probe.view()).unwrap();
        for (a, b) in d.iter().zip(&dp) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn input_validation() {
        let x = ndarray::array![[1.0], [2.0]];
        assert!(train_ksvm(x.view(), &[1, 1], &SvmConfig::default()).is_err());
        assert!(train_ksvm(x.view(), &[1, 2], &SvmConfig::default()).is_err());
        let bad = ndarray::array![[f64::NAN], [2.0]];
        assert!(train_ksvm(bad.view(), &[1, -1], &SvmConfig::default()).is_err());

        let model = train_ksvm(
            ndarray::array![[1.0, 0.0], [-1.0, 0.0]].view(),
            &[1, -1],
            &SvmConfig::default(),
        )
        .unwrap();
        let wrong = ndarray::array![[1.0, 2.0, 3.0]];
        assert!(predict(&model, wrong.view()).is_err());
    }
}
