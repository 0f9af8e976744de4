//! Pairwise rank losses and the pointwise classification baseline.
//!
//! All rank losses are functions of the margin violation
//! `u = 1 - h_pos + h_neg`; each returns the loss together with its exact
//! (sub)gradient with respect to both scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default Huber transition point, and the base of the adaptive one.
pub const DEFAULT_DELTA: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("popularity {0} outside [0, 1]")]
    PopularityOutOfRange(f64),
    #[error("unknown loss {0:?} (expected cls, l1, l2, huber or huber-adaptive)")]
    UnknownLoss(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Classification,
    RankL1,
    RankL2,
    RankHuberFixed { delta: f64 },
    RankHuberAdaptive { base_delta: f64 },
}

impl LossKind {
    pub fn is_rank(&self) -> bool {
        !matches!(self, LossKind::Classification)
    }

    /// Huber transition point for a positive whose GIF has `popularity`.
    /// Non-Huber losses carry the fixed default, which they ignore.
    pub fn pair_delta(&self, popularity: f64) -> Result<f64, LossError> {
        match *self {
            LossKind::RankHuberFixed { delta } => Ok(delta),
            LossKind::RankHuberAdaptive { base_delta } => adaptive_delta(popularity, base_delta),
            _ => Ok(DEFAULT_DELTA),
        }
    }

    /// Loss and gradients for one pair of scores.
    pub fn pair_loss(&self, ps: PairScores) -> LossGrad {
        match self {
            LossKind::RankL1 => lp_loss(ps, 1),
            LossKind::RankL2 => lp_loss(ps, 2),
            LossKind::RankHuberFixed { .. } | LossKind::RankHuberAdaptive { .. } => huber_rank_loss(ps),
            LossKind::Classification => {
                let (lp, gp) = classification_loss(ps.h_pos, 1.0);
                let (ln, gn) = classification_loss(ps.h_neg, -1.0);
                LossGrad {
                    loss: lp + ln,
                    d_pos: gp,
                    d_neg: gn,
                }
            }
        }
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls" => Ok(LossKind::Classification),
            "l1" => Ok(LossKind::RankL1),
            "l2" => Ok(LossKind::RankL2),
            "huber" => Ok(LossKind::RankHuberFixed { delta: DEFAULT_DELTA }),
            "huber-adaptive" => Ok(LossKind::RankHuberAdaptive {
                base_delta: DEFAULT_DELTA,
            }),
            other => Err(LossError::UnknownLoss(other.to_string())),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Classification => "cls",
            LossKind::RankL1 => "l1",
            LossKind::RankL2 => "l2",
            LossKind::RankHuberFixed { .. } => "huber",
            LossKind::RankHuberAdaptive { .. } => "huber-adaptive",
        })
    }
}

/// Scores of a positive and a negative segment plus the pair's Huber delta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScores {
    pub h_pos: f64,
    pub h_neg: f64,
    pub delta: f64,
}

impl PairScores {
    pub fn new(h_pos: f64, h_neg: f64, delta: f64) -> Self {
        Self { h_pos, h_neg, delta }
    }

    pub fn violation(&self) -> f64 {
        1.0 - self.h_pos + self.h_neg
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

impl LossGrad {
    fn from_du(loss: f64, du: f64) -> Self {
        // du/dh_pos = -1, du/dh_neg = +1
        Self {
            loss,
            d_pos: -du,
            d_neg: du,
        }
    }
}

/// `max(0, u)^p` for `p` in {1, 2}.
pub fn lp_loss(ps: PairScores, p: u32) -> LossGrad {
    let u = ps.violation();
    if u <= 0.0 {
        return LossGrad::from_du(0.0, 0.0);
    }
    match p {
        1 => LossGrad::from_du(u, 1.0),
        2 => LossGrad::from_du(u * u, 2.0 * u),
        _ => LossGrad::from_du(u.powi(p as i32), p as f64 * u.powi(p as i32 - 1)),
    }
}

/// Huber rank loss: `u^2 / 2` for `0 < u <= delta`, `delta * u - delta^2 / 2`
/// beyond, zero when the margin holds.
pub fn huber_rank_loss(ps: PairScores) -> LossGrad {
    let u = ps.violation();
    let delta = ps.delta;
    if u <= 0.0 {
        LossGrad::from_du(0.0, 0.0)
    } else if u <= delta {
        LossGrad::from_du(0.5 * u * u, u)
    } else {
        LossGrad::from_du(delta * u - 0.5 * delta * delta, delta)
    }
}

/// `base + popularity`; popularity must lie in `[0, 1]`.
pub fn adaptive_delta(popularity: f64, base: f64) -> Result<f64, LossError> {
    if !(0.0..=1.0).contains(&popularity) {
        return Err(LossError::PopularityOutOfRange(popularity));
    }
    Ok(base + popularity)
}

/// Logistic loss `log(1 + exp(-label * score))` and its derivative.
pub fn classification_loss(score: f64, label: f64) -> (f64, f64) {
    let m = label * score;
    // softplus(-m), stable on both tails
    let loss = if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    };
    // d/dscore = -label * sigmoid(-m)
    let sig = if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    };
    (loss, -label * sig)
}

/// Log-scaled view-count normalization: `ln(1 + v) / ln(1 + max v)`.
pub fn normalize_viewcounts(views: &[u64]) -> Vec<f64> {
    let max = views.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; views.len()];
    }
    let denom = (max as f64).ln_1p();
    views
        .iter()
        .map(|&v| ((v as f64).ln_1p() / denom).clamp(0.0, 1.0))
        .collect()
}

/// Total pair loss plus `lambda` times the squared norm of all weights.
pub fn objective<'a>(pair_losses: impl IntoIterator<Item = f64>, weights: impl IntoIterator<Item = &'a [f64]>, lambda: f64) -> f64 {
    let data: f64 = pair_losses.into_iter().sum();
    let reg: f64 = weights
        .into_iter()
        .map(|w| w.iter().map(|x| x * x).sum::<f64>())
        .sum();
    data + lambda * reg
}
