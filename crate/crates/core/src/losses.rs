//! Training objectives over triple scores.
//!
//! All functions here take scores that have already been produced by a
//! [`Scorer`](crate::scoring::Scorer), so they are independent of the model
//! and activation. Gradients live in [`trainer::grad`](crate::trainer::grad).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Alignment over every positive plus log-sum-exp uniformity over a
    /// sampled subset of queries.
    HaLE,
    /// Logistic loss with uniformly sampled negatives.
    SamNeg,
    /// Logistic loss with softmax-weighted (self-adversarial) negatives.
    AdvNeg,
    /// Cross-entropy of the target against all entities.
    AllNeg,
    /// Positives only, plus a spread regularizer on the entity table.
    NonNeg,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::HaLE,
        LossKind::SamNeg,
        LossKind::AdvNeg,
        LossKind::AllNeg,
        LossKind::NonNeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::HaLE => "hale",
            LossKind::SamNeg => "samneg",
            LossKind::AdvNeg => "advneg",
            LossKind::AllNeg => "allneg",
            LossKind::NonNeg => "nonneg",
        }
    }

    pub fn uses_negatives(self) -> bool {
        matches!(self, LossKind::SamNeg | LossKind::AdvNeg)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of the alignment term (HaLE).
    pub lambda: f64,
    /// Proportion of training triples whose queries enter the uniformity term (HaLE).
    pub sample_alpha: f64,
    /// Negatives per positive (SamNeg, AdvNeg).
    pub neg_count: usize,
    /// Logit offset (SamNeg, AdvNeg).
    pub margin: f64,
    /// Softmax temperature of the adversarial weights (AdvNeg).
    pub adv_temperature: f64,
    /// Regularizer weight (NonNeg).
    pub reg_weight: f64,
    /// Target squared radius around the entity centroid (NonNeg).
    pub reg_radius: f64,
    /// Square the activated positive scores in the alignment term (HaLE).
    pub pos_square: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            lambda: 0.5,
            sample_alpha: 0.1,
            neg_count: 256,
            margin: 2.0,
            adv_temperature: 1.0,
            reg_weight: 0.1,
            reg_radius: 1.0,
            pos_square: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.sample_alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.neg_count < 1 {
            return bad("neg_count must be >= 1");
        }
        if self.adv_temperature.is_nan() || self.adv_temperature <= 0.0 {
            return bad("adv_temperature must be > 0");
        }
        if !(self.reg_weight >= 0.0 && self.reg_radius >= 0.0) {
            return bad("reg_weight and reg_radius must be >= 0");
        }
        if !self.margin.is_finite() {
            return bad("margin must be finite");
        }
        Ok(())
    }
}

/// `max(s) + ln sum exp(s_i - max(s))`.
pub fn lse(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(lse_unchecked(scores))
}

#[inline]
pub(crate) fn lse_unchecked(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Softmax of `scores` written into `out`; returns the log-sum-exp.
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    m + z.ln()
}

/// `ln sigma(x)`, stable for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Training-triple positions whose queries feed the uniformity term for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub indices: Vec<usize>,
    pub epoch: usize,
}

/// Size of the query sample, `round(alpha * n_t)`.
pub fn sample_size(n_t: usize, alpha: f64) -> usize {
    ((alpha * n_t as f64).round() as usize).min(n_t)
}

/// Uniform sample without replacement of `round(alpha * n_t)` positions.
pub fn sample_queries<R: Rng + ?Sized>(
    n_t: usize,
    alpha: f64,
    rng: &mut R,
    epoch: usize,
) -> QuerySample {
    let k = sample_size(n_t, alpha);
    let indices = rand::seq::index::sample(rng, n_t, k).into_vec();
    QuerySample { indices, epoch }
}

/// Query sampling loss over one batch.
///
/// `pos_scores` are activated scores `f <= 0` of the batch positives and
/// `rows` the all-entity score rows of the batch's sampled queries.
///
/// With `pos_square` the alignment term is `+lambda * mean(f^2)`. Since
/// `f = -act(c_r d^2)` and the activation is nonnegative and increasing,
/// minimizing it shrinks positive distances. (Writing it as `-lambda *
/// mean(f^2)` would push positives apart.) Without `pos_square` the term
/// is `lambda * mean(-f)`.
pub fn hale_loss(
    pos_scores: &[f64],
    rows: &[Vec<f64>],
    n_entities: usize,
    spec: &LossSpec,
) -> Result<f64> {
    let alignment = if pos_scores.is_empty() {
        0.0
    } else if spec.pos_square {
        pos_scores.iter().map(|f| f * f).sum::<f64>() / pos_scores.len() as f64
    } else {
        pos_scores.iter().map(|f| -f).sum::<f64>() / pos_scores.len() as f64
    };
    let mut uniformity = 0.0;
    for row in rows {
        if row.len() != n_entities {
            return Err(Error::RowLength {
                expected: n_entities,
                found: row.len(),
            });
        }
        uniformity += lse(row)?;
    }
    if !rows.is_empty() {
        uniformity /= rows.len() as f64;
    }
    Ok(spec.lambda * alignment + uniformity)
}

/// `-log softmax(row)[pos_index]`.
pub fn allneg_loss(pos_index: usize, row: &[f64]) -> Result<f64> {
    if pos_index >= row.len() {
        return Err(Error::IndexOutOfRange {
            index: pos_index,
            len: row.len(),
        });
    }
    Ok((lse(row)? - row[pos_index]).max(0.0))
}

/// Mean over entities of `(|e_i - centroid|^2 - radius)^2`.
pub fn nonneg_regularizer(entity: &Table, radius: f64) -> f64 {
    let n = entity.rows();
    if n == 0 {
        return 0.0;
    }
    let c = centroid(entity);
    (0..n)
        .map(|i| {
            let d2: f64 = entity
                .row(i)
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2 - radius) * (d2 - radius)
        })
        .sum::<f64>()
        / n as f64
}

pub(crate) fn centroid(entity: &Table) -> Vec<f64> {
    let mut c = vec![0.0; entity.cols()];
    for i in 0..entity.rows() {
        for (a, b) in c.iter_mut().zip(entity.row(i)) {
            *a += b;
        }
    }
    let n = entity.rows().max(1) as f64;
    c.iter_mut().for_each(|a| *a /= n);
    c
}

/// `mean(f^2) + reg_weight * g(E)`.
pub fn nonneg_loss(pos_scores: &[f64], entity: &Table, spec: &LossSpec) -> f64 {
    let align = if pos_scores.is_empty() {
        0.0
    } else {
        pos_scores.iter().map(|f| f * f).sum::<f64>() / pos_scores.len() as f64
    };
    let reg = if spec.reg_weight > 0.0 {
        spec.reg_weight * nonneg_regularizer(entity, spec.reg_radius)
    } else {
        0.0
    };
    align + reg
}

/// `-ln sigma(pos + margin) - mean_i ln sigma(-neg_i - margin)`.
pub fn samneg_loss(pos_score: f64, neg_scores: &[f64], margin: f64) -> f64 {
    let k = neg_scores.len() as f64;
    let neg: f64 = neg_scores.iter().map(|&s| log_sigmoid(-s - margin)).sum();
    -log_sigmoid(pos_score + margin) - neg / k
}

/// `softmax(neg_scores / tau)`, treated as constants by the gradient.
pub fn adversarial_weights(neg_scores: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = neg_scores.iter().map(|s| s / tau).collect();
    let mut w = vec![0.0; scaled.len()];
    softmax_into(&scaled, &mut w);
    w
}

/// [`samneg_loss`] with the negative terms weighted by [`adversarial_weights`].
pub fn advneg_loss(pos_score: f64, neg_scores: &[f64], margin: f64, tau: f64) -> f64 {
    let w = adversarial_weights(neg_scores, tau);
    let neg: f64 = neg_scores
        .iter()
        .zip(&w)
        .map(|(&s, &wi)| wi * log_sigmoid(-s - margin))
        .sum();
    -log_sigmoid(pos_score + margin) - neg
}

/// Both sides of the split-objective reorganization in unnormalized form:
///
/// - left: `sum over T \ sample of -f` plus `sum over sample of (-f + lse(row))`
/// - right: `sum over T of -f` plus `sum over sample of lse(row)`
///
/// `rows[j]` is the all-entity row of the query at `sample.indices[j]`.
/// Test oracle only.
pub fn combined_loss_reference(
    scores: &[f64],
    sample: &QuerySample,
    rows: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if rows.len() != sample.indices.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} sampled queries",
            rows.len(),
            sample.indices.len()
        )));
    }
    let mut in_sample = vec![None; scores.len()];
    for (j, &i) in sample.indices.iter().enumerate() {
        if i >= scores.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: scores.len(),
            });
        }
        in_sample[i] = Some(j);
    }
    let mut lhs = 0.0;
    for (i, &f) in scores.iter().enumerate() {
        lhs += match in_sample[i] {
            None => -f,
            Some(j) => -f + lse(&rows[j])?,
        };
    }
    let mut rhs: f64 = scores.iter().map(|f| -f).sum();
    for row in rows {
        rhs += lse(row)?;
    }
    Ok((lhs, rhs))
}
