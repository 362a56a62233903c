//! Variance schedule, closed-form forward noising and the posterior mean
//! that serves as the regression target of the denoiser.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Schedule parameters as stored in manifests and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Slope of the linear schedule `beta_i = k i`.
    pub k: f64,
    /// Number of diffusion steps `L`.
    pub steps: usize,
}

/// `beta_0..=beta_L` with `alpha_i = 1 - beta_i` and
/// `alpha_bar_i = prod_{s=1..=i} alpha_s` (`alpha_bar_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    params: Option<ScheduleParams>,
    truncated: bool,
}

impl NoiseSchedule {
    /// Validates the three schedule conditions: `beta_0 = 0` and
    /// `beta_L = 1`, every `beta_i` in `[0, 1]`, and non-decreasing betas.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        Self::build(betas, false, None)
    }

    fn build(betas: Vec<f64>, allow_truncated: bool, params: Option<ScheduleParams>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::domain("schedule needs at least one diffusion step"));
        }
        if betas[0] != 0.0 {
            return Err(Error::domain(format!("beta_0 must be 0, got {}", betas[0])));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::domain(format!("beta_{i} = {b} outside [0, 1]")));
            }
        }
        for (i, w) in betas.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::domain(format!(
                    "betas must be non-decreasing: beta_{} = {} > beta_{} = {}",
                    i,
                    w[0],
                    i + 1,
                    w[1]
                )));
            }
        }
        let last = *betas.last().unwrap();
        let truncated = last != 1.0;
        if truncated && !allow_truncated {
            return Err(Error::domain(format!("beta_L must be 1, got {last}")));
        }

        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        alpha_bars.push(1.0);
        for i in 1..alphas.len() {
            alpha_bars.push(alpha_bars[i - 1] * alphas[i]);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            params,
            truncated,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn params(&self) -> Option<ScheduleParams> {
        self.params
    }

    /// True when `beta_L < 1`, i.e. the linear slope stops short of one.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Largest step usable as a training target. `mu_q` divides by
    /// `sqrt(alpha_i)`, so a terminal step with `beta_L = 1` is excluded.
    pub fn max_training_step(&self) -> usize {
        let l = self.steps();
        if self.alphas[l] == 0.0 {
            l - 1
        } else {
            l
        }
    }
}

/// `beta_i = k i` for `i = 0..=L`. A slope with `k L < 1` yields a
/// truncated schedule (recorded, not rejected); `k L > 1` is an error.
pub fn linear_schedule(k: f64, steps: usize) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::domain("schedule needs at least one step"));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::domain(format!("schedule slope must be positive, got {k}")));
    }
    let top = k * steps as f64;
    // k L is computed in floating point; within one ulp of 1 counts as 1.
    let exact_one = (top - 1.0).abs() <= 4.0 * f64::EPSILON;
    if top > 1.0 && !exact_one {
        return Err(Error::domain(format!(
            "k * L = {top} exceeds 1, betas would leave [0, 1]"
        )));
    }
    let mut betas: Vec<f64> = (0..=steps).map(|i| k * i as f64).collect();
    if exact_one {
        betas[steps] = 1.0;
    }
    for b in betas.iter_mut() {
        *b = b.min(1.0);
    }
    NoiseSchedule::build(betas, true, Some(ScheduleParams { k, steps }))
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.k, self.steps)
    }
}

fn check_step(sched: &NoiseSchedule, i: usize) -> Result<()> {
    if i > sched.steps() {
        Err(Error::domain(format!(
            "diffusion step {i} outside 0..={}",
            sched.steps()
        )))
    } else {
        Ok(())
    }
}

/// `sqrt(alpha_bar_i) tau0 + sqrt(1 - alpha_bar_i) eps`.
pub fn forward_sample(tau0: &[f64], i: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_step(sched, i)?;
    check_len("forward noise", tau0.len(), eps.len())?;
    let ab = sched.alpha_bar(i);
    let (s, t) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(tau0.iter().zip(eps).map(|(x, e)| s * x + t * e).collect())
}

/// Mean of `q(tau_{i-1} | tau_i, tau0)`:
/// `(tau_i - beta_i (tau_i - sqrt(alpha_bar_i) tau0) / (1 - alpha_bar_i)) / sqrt(alpha_i)`.
pub fn posterior_mean(tau_i: &[f64], tau0: &[f64], i: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_step(sched, i)?;
    if i == 0 {
        return Err(Error::domain("no reverse step from diffusion step 0"));
    }
    check_len("posterior mean inputs", tau_i.len(), tau0.len())?;
    let alpha = sched.alpha(i);
    if alpha <= 0.0 {
        return Err(Error::domain(format!(
            "posterior mean undefined at step {i}: alpha_i = 0"
        )));
    }
    let one_minus_ab = 1.0 - sched.alpha_bar(i);
    if one_minus_ab <= 0.0 {
        return Err(Error::domain(format!(
            "posterior mean undefined at step {i}: alpha_bar_i = 1"
        )));
    }
    let beta = sched.beta(i);
    let sab = sched.alpha_bar(i).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let ratio = beta / one_minus_ab;
    Ok(tau_i
        .iter()
        .zip(tau0)
        .map(|(ti, t0)| inv_sqrt_alpha * (ti - ratio * (ti - sab * t0)))
        .collect())
}

/// Coefficients `(c_tau_i, c_tau0)` with `mu_q = c_tau_i tau_i + c_tau0 tau0`.
pub(crate) fn posterior_coefficients(i: usize, sched: &NoiseSchedule) -> (f64, f64) {
    let alpha = sched.alpha(i);
    let ratio = sched.beta(i) / (1.0 - sched.alpha_bar(i));
    let inv = 1.0 / alpha.sqrt();
    (inv * (1.0 - ratio), inv * ratio * sched.alpha_bar(i).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn paper_linear_schedule_ends_at_one() {
        let s = linear_schedule(0.001, 1000).unwrap();
        assert_eq!(s.beta(1000), 1.0);
        assert_eq!(s.alpha_bar(1000), 0.0);
        assert!(!s.is_truncated());
        assert_eq!(s.max_training_step(), 999);
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = linear_schedule(0.5, 2).unwrap();
        assert_eq!(s.betas(), &[0.0, 0.5, 1.0]);
        assert_eq!(s.alpha_bars(), &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn slope_too_large_is_rejected() {
        assert!(linear_schedule(0.011, 100).is_err());
        let t = linear_schedule(0.001, 100).unwrap();
        assert!(t.is_truncated());
        assert_eq!(t.max_training_step(), 100);
    }

    #[test]
    fn alpha_bar_matches_independent_product() {
        for &(k, l) in &[(0.005, 200), (0.001, 1000), (0.01, 37)] {
            let s = linear_schedule(k, l).unwrap();
            for i in 0..=l {
                let mut p = 1.0;
                for j in 1..=i {
                    p *= 1.0 - s.beta(j);
                }
                assert!((p - s.alpha_bar(i)).abs() <= 1e-14);
            }
            assert!(s.alpha_bars().windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn condition_violations_are_rejected() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 0.5, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.5, 0.9]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 1.2, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.6, 0.4, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, -0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.2, 0.2, 1.0]).is_ok());
    }

    #[test]
    fn forward_sample_endpoints() {
        let s = linear_schedule(0.01, 100).unwrap();
        let tau0 = [1.0, -2.0, 3.0];
        let eps = [0.3, 0.1, -0.7];
        assert_eq!(forward_sample(&tau0, 0, &eps, &s).unwrap(), tau0.to_vec());
        assert_eq!(forward_sample(&tau0, 100, &eps, &s).unwrap(), eps.to_vec());
        assert!(forward_sample(&tau0, 101, &eps, &s).is_err());
        assert!(forward_sample(&tau0, 3, &eps[..2], &s).is_err());
    }

    #[test]
    fn forward_second_moment_monte_carlo() {
        let s = linear_schedule(0.01, 100).unwrap();
        let i = 20;
        let tau0 = [1.0, -2.0, 0.5, 3.0];
        let dim = tau0.len() as f64;
        let draws = 10_000;
        let mut rng = rng::stream(3, 0, 0);
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let eps = rng::normal_vec(&mut rng, 4);
            let t = forward_sample(&tau0, i, &eps, &s).unwrap();
            vals.push(t.iter().map(|v| v * v).sum::<f64>());
        }
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let ab = s.alpha_bar(i);
        let norm2: f64 = tau0.iter().map(|v| v * v).sum();
        let expected = ab * norm2 + (1.0 - ab) * dim;
        assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn terminal_sample_forgets_the_data() {
        let s = linear_schedule(0.01, 100).unwrap();
        let dim = 6;
        let draws = 10_000;
        let tau0 = vec![5.0; dim];
        let mut rng = rng::stream(4, 0, 0);
        let mut mean = vec![0.0; dim];
        for _ in 0..draws {
            let eps = rng::normal_vec(&mut rng, dim);
            let t = forward_sample(&tau0, 100, &eps, &s).unwrap();
            for (m, v) in mean.iter_mut().zip(&t) {
                *m += v / draws as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 4.0 * (dim as f64 / draws as f64).sqrt());
    }

    #[test]
    fn posterior_mean_guards() {
        let s = linear_schedule(0.25, 4).unwrap();
        assert!(posterior_mean(&[1.0], &[1.0], 0, &s).is_err());
        assert!(posterior_mean(&[1.0], &[1.0], 4, &s).is_err());
        assert!(posterior_mean(&[1.0], &[1.0], 3, &s).is_ok());
    }

    #[test]
    fn posterior_mean_small_first_step_is_near_input() {
        let s = linear_schedule(1e-6, 1000).unwrap();
        let tau0 = [1.0, 2.0];
        let tau1: Vec<f64> = tau0.iter().map(|v| v * s.alpha_bar(1).sqrt()).collect();
        let mu = posterior_mean(&tau1, &tau0, 1, &s).unwrap();
        for (m, t) in mu.iter().zip(&tau1) {
            assert!((m - t).abs() < 1e-5);
        }
    }

    /// Posterior of the Gaussian chain computed from first principles:
    /// prior `tau_{i-1} | tau0 ~ N(sqrt(ab_{i-1}) tau0, (1 - ab_{i-1}) I)`,
    /// likelihood `tau_i | tau_{i-1} ~ N(sqrt(alpha_i) tau_{i-1}, beta_i I)`.
    #[test]
    fn posterior_mean_matches_conjugate_gaussian_update() {
        let s = linear_schedule(0.02, 50).unwrap();
        let mut rng = rng::stream(9, 0, 0);
        for _ in 0..20 {
            let i = 1 + (rng::standard_normal(&mut rng).abs() * 10.0) as usize % 48;
            let tau0 = rng::normal_vec(&mut rng, 2);
            let eps = rng::normal_vec(&mut rng, 2);
            let tau_i = forward_sample(&tau0, i, &eps, &s).unwrap();

            let prior_mean = DVector::from_column_slice(&tau0) * s.alpha_bar(i - 1).sqrt();
            let prior_cov = DMatrix::<f64>::identity(2, 2) * (1.0 - s.alpha_bar(i - 1));
            let h = DMatrix::<f64>::identity(2, 2) * s.alpha(i).sqrt();
            let noise = DMatrix::<f64>::identity(2, 2) * s.beta(i);
            let y = DVector::from_column_slice(&tau_i);
            let innov_cov = &h * &prior_cov * h.transpose() + noise;
            let gain = &prior_cov * h.transpose() * innov_cov.try_inverse().unwrap();
            let post = &prior_mean + gain * (y - &h * &prior_mean);

            let mu = posterior_mean(&tau_i, &tau0, i, &s).unwrap();
            for (a, b) in mu.iter().zip(post.iter()) {
                assert!((a - b).abs() < 1e-10, "step {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn posterior_mean_is_linear() {
        let s = linear_schedule(0.01, 100).unwrap();
        let mut rng = rng::stream(10, 0, 0);
        let (a1, b1) = (rng::normal_vec(&mut rng, 5), rng::normal_vec(&mut rng, 5));
        let (a2, b2) = (rng::normal_vec(&mut rng, 5), rng::normal_vec(&mut rng, 5));
        let (c1, c2) = (0.7, -1.3);
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| c1 * p + c2 * q).collect()
        };
        let lhs = posterior_mean(&mix(&a1, &a2), &mix(&b1, &b2), 30, &s).unwrap();
        let r1 = posterior_mean(&a1, &b1, 30, &s).unwrap();
        let r2 = posterior_mean(&a2, &b2, 30, &s).unwrap();
        for (l, (x, y)) in lhs.iter().zip(r1.iter().zip(&r2)) {
            assert!((l - (c1 * x + c2 * y)).abs() < 1e-12);
        }
        let (ci, c0) = posterior_coefficients(30, &s);
        for ((m, t), t0) in r1.iter().zip(&a1).zip(&b1) {
            assert!((m - (ci * t + c0 * t0)).abs() < 1e-12);
        }
    }
}
