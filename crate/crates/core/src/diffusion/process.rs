//! Forward noising and the closed-form posteriors.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseTable;
use crate::chem::Vec3;

pub fn gaussian_noise(n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::from_fn(|_, _| StandardNormal.sample(rng)))
        .collect()
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn q_sample_positions(x0: &[Vec3], t: usize, table: &NoiseTable, noise: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(x0.len(), noise.len());
    let ab = table.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(noise).map(|(x, e)| x * a + e * b).collect()
}

/// Mixture `abar v0 + (1 - abar) / K` for each row.
pub fn feature_marginal(v0: &[f64], alpha_bar: f64) -> Vec<f64> {
    let u = (1.0 - alpha_bar) / v0.len() as f64;
    v0.iter().map(|p| alpha_bar * p + u).collect()
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Draws `v_t` class indices from `q(v_t | v_0)` over `k` classes.
pub fn q_sample_features(v0: &[usize], t: usize, table: &NoiseTable, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let ab = table.alpha_bar[t];
    v0.iter()
        .map(|&c| {
            let mut oh = vec![0.0; k];
            oh[c] = 1.0;
            draw(&feature_marginal(&oh, ab), rng)
        })
        .collect()
}

/// Samples one class from a probability row.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    draw(probs, rng)
}

/// Mean and variance of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_positions(xt: &[Vec3], x0: &[Vec3], t: usize, table: &NoiseTable) -> (Vec<Vec3>, f64) {
    let (c0, ct) = table.posterior_mean_coeffs(t);
    let mean = x0.iter().zip(xt).map(|(a, b)| a * c0 + b * ct).collect();
    (mean, table.posterior_variance(t))
}

/// `normalize([alpha_t v_t + (1-alpha_t)/K] * [abar_{t-1} v0 + (1-abar_{t-1})/K])`.
pub fn categorical_posterior(vt: &[f64], v0: &[f64], alpha_t: f64, alpha_bar_prev: f64) -> Vec<f64> {
    let k = vt.len() as f64;
    let mut c: Vec<f64> = vt
        .iter()
        .zip(v0)
        .map(|(a, b)| (alpha_t * a + (1.0 - alpha_t) / k) * (alpha_bar_prev * b + (1.0 - alpha_bar_prev) / k))
        .collect();
    let s: f64 = c.iter().sum();
    if s <= 0.0 {
        // v_t is unreachable from v0 under a noiseless step; fall back to the v0 factor.
        return feature_marginal(v0, alpha_bar_prev);
    }
    for x in &mut c {
        *x /= s;
    }
    c
}

pub fn posterior_features(vt: &[f64], v0: &[f64], t: usize, table: &NoiseTable) -> Vec<f64> {
    categorical_posterior(vt, v0, table.alpha[t], table.alpha_bar[t - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tables() -> (NoiseTable, NoiseTable) {
        (
            NoiseTable::new(ScheduleKind::SIGMOID_DEFAULT, 1000).unwrap(),
            NoiseTable::new(ScheduleKind::COSINE_DEFAULT, 1000).unwrap(),
        )
    }

    #[test]
    fn zero_noise_scales_signal() {
        let (x, _) = tables();
        let x0 = vec![Vec3::new(1.0, -2.0, 3.0)];
        let out = q_sample_positions(&x0, 400, &x, &[Vec3::zeros()]);
        assert!((out[0] - x0[0] * x.alpha_bar[400].sqrt()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let near = q_sample_positions(&x0, 1, &x, &gaussian_noise(1, &mut rng));
        assert!((near[0] - x0[0]).norm() < 0.5);
    }

    #[test]
    fn forward_marginal_moments() {
        let (x, _) = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = 300;
        let x0 = Vec3::new(2.0, 0.0, -1.0);
        let n = 100_000;
        let mut sum = Vec3::zeros();
        let mut sq = Vec3::zeros();
        for _ in 0..n {
            let s = q_sample_positions(&[x0], t, &x, &gaussian_noise(1, &mut rng))[0];
            sum += s;
            sq += s.component_mul(&s);
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean.component_mul(&mean);
        let want_var = 1.0 - x.alpha_bar[t];
        for a in 0..3 {
            let se = (want_var / n as f64).sqrt();
            assert!((mean[a] - x.alpha_bar[t].sqrt() * x0[a]).abs() < 3.0 * se);
            // Var of sample variance is 2 sigma^4 / n for a Gaussian.
            let se_var = want_var * (2.0 / n as f64).sqrt();
            assert!((var[a] - want_var).abs() < 3.0 * se_var);
        }
    }

    #[test]
    fn gaussian_chain_matches_marginal() {
        // Stepping q(x_t | x_{t-1}) ten times reproduces q(x_10 | x_0) statistically.
        let (x, _) = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50_000;
        let x0 = 1.5;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let mut v = x0;
            for t in 1..=10 {
                let e: f64 = StandardNormal.sample(&mut rng);
                v = x.alpha[t].sqrt() * v + x.beta[t].sqrt() * e;
            }
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let want_var = 1.0 - x.alpha_bar[10];
        assert!((mean - x.alpha_bar[10].sqrt() * x0).abs() < 3.0 * (want_var / n as f64).sqrt());
        assert!((var - want_var).abs() < 3.0 * want_var * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn features_noiseless_and_uniform() {
        let (_, v) = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v0: Vec<usize> = (0..1000).map(|k| k % 15).collect();
        assert_eq!(q_sample_features(&v0, 0, &v, 15, &mut rng), v0);
        // At T the mixture is uniform: chi-square over 15 classes, 14 dof.
        let draws = q_sample_features(&vec![3; 100_000], 1000, &v, 15, &mut rng);
        let mut counts = [0f64; 15];
        for d in draws {
            counts[d] += 1.0;
        }
        let e = 100_000.0 / 15.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 14 dof.
        assert!(chi2 < 36.12, "chi2 {chi2}");
    }

    #[test]
    fn feature_frequencies_converge_to_mixture() {
        let (_, v) = tables();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 500;
        let draws = q_sample_features(&vec![2; 100_000], t, &v, 4, &mut rng);
        let want = feature_marginal(&[0.0, 0.0, 1.0, 0.0], v.alpha_bar[t]);
        for (k, p) in want.iter().enumerate() {
            let f = draws.iter().filter(|&&d| d == k).count() as f64 / 100_000.0;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / 100_000.0).sqrt());
        }
    }

    #[test]
    fn categorical_chain_equals_marginal() {
        // Exact composition of the per-step transition matrices for K = 3.
        let (_, v) = tables();
        let k = 3;
        for start in 0..k {
            let mut dist = vec![0.0; k];
            dist[start] = 1.0;
            for t in 1..=10 {
                let a = v.alpha[t];
                let total: f64 = dist.iter().sum();
                dist = dist.iter().map(|p| a * p + (1.0 - a) / k as f64 * total).collect();
                let mut oh = vec![0.0; k];
                oh[start] = 1.0;
                let closed = feature_marginal(&oh, v.alpha_bar[t]);
                for (p, q) in dist.iter().zip(&closed) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn posterior_positions_limits() {
        let (x, _) = tables();
        let x0 = vec![Vec3::new(1.0, 2.0, 3.0)];
        let xt = vec![Vec3::new(-4.0, 0.5, 9.0)];
        let (m, var) = posterior_positions(&xt, &x0, 1, &x);
        assert!((m[0] - x0[0]).norm() < 1e-12);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn posterior_positions_match_grid_bayes() {
        let (x, _) = tables();
        for &(t, x0, xt) in &[(500usize, 0.7f64, -0.3f64), (20, -1.2, 0.4), (999, 2.0, 1.0)] {
            let (m, var) = posterior_positions(&[Vec3::new(xt, 0.0, 0.0)], &[Vec3::new(x0, 0.0, 0.0)], t, &x);
            // p(x_{t-1}) ~ N(x_t; sqrt(alpha_t) x_{t-1}, beta_t) N(x_{t-1}; sqrt(abar_{t-1}) x0, 1 - abar_{t-1}).
            let (a, b) = (x.alpha[t], x.beta[t]);
            let (ab, vb) = (x.alpha_bar[t - 1].sqrt() * x0, 1.0 - x.alpha_bar[t - 1]);
            let centre = m[0].x;
            let sd = var.sqrt();
            let n = 200_001;
            let (lo, hi) = (centre - 12.0 * sd, centre + 12.0 * sd);
            let h = (hi - lo) / (n - 1) as f64;
            let ys: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
            let lps: Vec<f64> = ys
                .iter()
                .map(|y| -(xt - a.sqrt() * y).powi(2) / (2.0 * b) - (y - ab).powi(2) / (2.0 * vb))
                .collect();
            let top = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for (&y, &lp) in ys.iter().zip(&lps) {
                let w = (lp - top).exp();
                z += w;
                s1 += w * y;
                s2 += w * y * y;
            }
            let gm = s1 / z;
            let gv = s2 / z - gm * gm;
            assert!((gm - m[0].x).abs() < 1e-6, "t={t} mean {gm} vs {}", m[0].x);
            assert!((gv - var).abs() < 1e-6 * var.max(1e-3), "t={t} var {gv} vs {var}");
        }
    }

    #[test]
    fn categorical_posterior_worked_example() {
        let c = categorical_posterior(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], 0.9, 0.8);
        let want = [0.02381, 0.66667, 0.30952];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-5);
        }
        let exact = categorical_posterior(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], 1.0, 1.0);
        assert_eq!(exact, vec![0.0, 0.0, 1.0]);
        let unreachable = categorical_posterior(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], 1.0, 1.0);
        assert_eq!(unreachable, vec![0.0, 0.0, 1.0]);
        let flat = categorical_posterior(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], 0.0, 0.0);
        assert!(flat.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn categorical_posterior_matches_enumeration() {
        // Bayes by enumerating v_{t-1}: p(v_{t-1}=j) q(v_t | v_{t-1}=j).
        let (_, v) = tables();
        let k = 4;
        for t in [2usize, 50, 700] {
            for vt in 0..k {
                for v0 in 0..k {
                    let prior: Vec<f64> = (0..k)
                        .map(|j| v.alpha_bar[t - 1] * (j == v0) as u8 as f64 + (1.0 - v.alpha_bar[t - 1]) / k as f64)
                        .collect();
                    let like: Vec<f64> = (0..k)
                        .map(|j| v.alpha[t] * (j == vt) as u8 as f64 + (1.0 - v.alpha[t]) / k as f64)
                        .collect();
                    let joint: Vec<f64> = prior.iter().zip(&like).map(|(p, l)| p * l).collect();
                    let z: f64 = joint.iter().sum();
                    let mut oh_t = vec![0.0; k];
                    oh_t[vt] = 1.0;
                    let mut oh_0 = vec![0.0; k];
                    oh_0[v0] = 1.0;
                    let c = posterior_features(&oh_t, &oh_0, t, &v);
                    for (a, b) in c.iter().zip(&joint) {
                        assert!((a - b / z).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
