//! DDPM noise schedule and the closed-form forward process.
//!
//! Timesteps are 1-indexed (`1..=T`) throughout. All tables are `f64`.

use crate::error::{Result, SvcError};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// Linearly spaced `β_t` from `beta_1` to `beta_T`.
pub fn linear_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(SvcError::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(SvcError::InvalidArgument(format!(
            "need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_1
            } else {
                beta_1 + i as f64 * (beta_t - beta_1) / (steps - 1) as f64
            }
        })
        .collect();
    Ok(NoiseSchedule::from_betas(beta))
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        // Posterior variance β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t), ᾱ_0 = 1.
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(SvcError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `√ᾱ_t · z0 + √(1 − ᾱ_t) · eps`.
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(SvcError::Shape(format!(
            "noise shape {:?} differs from latent shape {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.zip_map(eps, |z, e| a * z + b * e))
}
