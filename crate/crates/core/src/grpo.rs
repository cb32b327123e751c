//! Group relative policy optimization objective.
//!
//! For a group of `G` responses to one prompt:
//!
//! ```text
//! A_i   = (r_i - mean(r)) / std(r)                      (population std)
//! rho_i = pi_new(o_i) / pi_old(o_i)
//! KL_i  = pi_ref(o_i)/pi_new(o_i) - log(pi_ref(o_i)/pi_new(o_i)) - 1
//! J     = 1/G sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - kl_coeff * 1/G sum_i KL_i
//! ```
//!
//! Probabilities enter only through per-token natural-log probabilities.
//! The default aggregation treats a response as one unit (sums of token
//! log-probs); `PerTokenMean` applies the ratio, clip and KL per token and
//! averages them within each response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {0} responses; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("log-prob sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("log-prob sequence is empty")]
    EmptyLogProbs,
    #[error("log-prob sequence contains a non-finite value")]
    NonFinite,
    #[error("invalid config: {0}")]
    Config(String),
}

/// Natural-log probabilities of each generated unit, in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self, GrpoError> {
        if values.is_empty() {
            return Err(GrpoError::EmptyLogProbs);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GrpoError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl<'de> Deserialize<'de> for TokenLogProbs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        TokenLogProbs::new(Vec::<f64>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

fn same_len(a: &TokenLogProbs, b: &TokenLogProbs) -> Result<(), GrpoError> {
    if a.len() != b.len() {
        return Err(GrpoError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    #[serde(rename = "text")]
    pub response_text: String,
    pub reward: f64,
    pub logp_new: TokenLogProbs,
    pub logp_old: TokenLogProbs,
    pub logp_ref: TokenLogProbs,
}

impl ResponseSample {
    pub fn check(&self) -> Result<(), GrpoError> {
        same_len(&self.logp_new, &self.logp_old)?;
        same_len(&self.logp_new, &self.logp_ref)
    }
}

/// One prompt and its sampled responses; one JSON Lines record on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    #[serde(rename = "responses")]
    pub samples: Vec<ResponseSample>,
}

impl RolloutGroup {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.samples.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.samples.len()));
        }
        self.samples.iter().try_for_each(ResponseSample::check)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    ResponseLevel,
    PerTokenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Clip half-width. 0.2 is a conventional choice.
    pub epsilon: f64,
    /// KL penalty weight. 0.04 is a conventional choice.
    pub kl_coeff: f64,
    /// Groups whose reward std falls below this get zero advantages.
    pub std_floor: f64,
    pub aggregation: Aggregation,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            kl_coeff: 0.04,
            std_floor: 1e-8,
            aggregation: Aggregation::ResponseLevel,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.epsilon > 0.0) {
            return Err(GrpoError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.kl_coeff >= 0.0) {
            return Err(GrpoError::Config(format!("kl_coeff must be >= 0, got {}", self.kl_coeff)));
        }
        if !(self.std_floor > 0.0) {
            return Err(GrpoError::Config(format!("std_floor must be > 0, got {}", self.std_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoStats {
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub advantages: Vec<f64>,
    /// Response-level ratio per sample; with per-token aggregation, the
    /// mean of that sample's token ratios.
    pub ratios: Vec<f64>,
}

/// Standardizes rewards within a group using the population std.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyRatio {
    Response(f64),
    PerToken(Vec<f64>),
}

pub fn ratio(new: &TokenLogProbs, old: &TokenLogProbs, aggregation: Aggregation) -> Result<PolicyRatio, GrpoError> {
    same_len(new, old)?;
    Ok(match aggregation {
        Aggregation::ResponseLevel => PolicyRatio::Response((new.sum() - old.sum()).exp()),
        Aggregation::PerTokenMean => PolicyRatio::PerToken(
            new.values()
                .iter()
                .zip(old.values())
                .map(|(n, o)| (n - o).exp())
                .collect(),
        ),
    })
}

/// `r - ln r - 1` written in terms of `ln r`, which is what callers have.
/// `exp_m1` keeps the result non-negative near `r = 1`.
pub fn kl_estimator(log_r: f64) -> f64 {
    log_r.exp_m1() - log_r
}

/// KL penalty of the new policy against the reference for one response,
/// with `r = pi_ref / pi_new`.
pub fn kl_term(new: &TokenLogProbs, reference: &TokenLogProbs, aggregation: Aggregation) -> Result<f64, GrpoError> {
    same_len(new, reference)?;
    Ok(match aggregation {
        Aggregation::ResponseLevel => kl_estimator(reference.sum() - new.sum()),
        Aggregation::PerTokenMean => {
            new.values()
                .iter()
                .zip(reference.values())
                .map(|(n, r)| kl_estimator(r - n))
                .sum::<f64>()
                / new.len() as f64
        }
    })
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

pub fn clipped_surrogate(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    (rho * advantage).min(clip(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `rho`: the advantage
/// while the unclipped branch is the minimum, else 0.
fn surrogate_slope(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    if rho * advantage <= clip(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage {
        advantage
    } else {
        0.0
    }
}

pub fn objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<GrpoStats, GrpoError> {
    group.validate()?;
    let adv = advantages(&group.rewards(), cfg.std_floor)?;
    let g = group.samples.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut ratios = Vec::with_capacity(group.samples.len());
    for (s, &a) in group.samples.iter().zip(&adv) {
        match ratio(&s.logp_new, &s.logp_old, cfg.aggregation)? {
            PolicyRatio::Response(rho) => {
                surrogate += clipped_surrogate(rho, a, cfg.epsilon);
                ratios.push(rho);
            }
            PolicyRatio::PerToken(rhos) => {
                let t = rhos.len() as f64;
                surrogate += rhos.iter().map(|&r| clipped_surrogate(r, a, cfg.epsilon)).sum::<f64>() / t;
                ratios.push(rhos.iter().sum::<f64>() / t);
            }
        }
        kl += kl_term(&s.logp_new, &s.logp_ref, cfg.aggregation)?;
    }
    surrogate /= g;
    kl /= g;
    Ok(GrpoStats {
        objective: surrogate - cfg.kl_coeff * kl,
        surrogate,
        kl,
        advantages: adv,
        ratios,
    })
}

/// Gradient of [`objective`] with respect to every entry of every
/// `logp_new`, holding old/reference log-probs and advantages fixed.
pub fn objective_grad_logp(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<Vec<Vec<f64>>, GrpoError> {
    group.validate()?;
    let adv = advantages(&group.rewards(), cfg.std_floor)?;
    let g = group.samples.len() as f64;
    group
        .samples
        .iter()
        .zip(&adv)
        .map(|(s, &a)| {
            let n = s.logp_new.values();
            let o = s.logp_old.values();
            let r = s.logp_ref.values();
            Ok(match cfg.aggregation {
                Aggregation::ResponseLevel => {
                    let rho = (s.logp_new.sum() - s.logp_old.sum()).exp();
                    let r_ref = (s.logp_ref.sum() - s.logp_new.sum()).exp();
                    // d(rho)/dl = rho, d(KL)/dl = 1 - r_ref
                    let d = (surrogate_slope(rho, a, cfg.epsilon) * rho - cfg.kl_coeff * (1.0 - r_ref)) / g;
                    vec![d; n.len()]
                }
                Aggregation::PerTokenMean => {
                    let t = n.len() as f64;
                    (0..n.len())
                        .map(|k| {
                            let rho = (n[k] - o[k]).exp();
                            let r_ref = (r[k] - n[k]).exp();
                            (surrogate_slope(rho, a, cfg.epsilon) * rho - cfg.kl_coeff * (1.0 - r_ref)) / (g * t)
                        })
                        .collect()
                }
            })
        })
        .collect()
}
