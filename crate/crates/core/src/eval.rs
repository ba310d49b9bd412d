//! Filtered link-prediction ranking.
//!
//! Every query is a tail prediction `(h, r, ?)`; head prediction is covered
//! by the reciprocal relations added at ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::{FilterIndex, TripleSet};
use crate::scoring::{entity_sq_norms, ParameterSet, Scorer};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// How candidates tied with the target are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieMode {
    /// Half of the ties rank above the target.
    #[default]
    Mean,
    /// All ties rank above the target.
    Pessimistic,
    /// No tie ranks above the target.
    Optimistic,
}

impl fmt::Display for TieMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieMode::Mean => "mean",
            TieMode::Pessimistic => "pessimistic",
            TieMode::Optimistic => "optimistic",
        })
    }
}

impl FromStr for TieMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(TieMode::Mean),
            "pessimistic" | "worst" => Ok(TieMode::Pessimistic),
            "optimistic" | "best" => Ok(TieMode::Optimistic),
            _ => Err(Error::InvalidConfig(format!("unknown tie mode {s:?}"))),
        }
    }
}

/// Filtered rank of `target` in `scores` (higher score ranks first).
///
/// `filtered_out` must be sorted; the target itself is always kept even if
/// listed there.
pub fn rank_query(scores: &[f64], target: u32, filtered_out: &[u32], tie: TieMode) -> Result<f64> {
    let t = target as usize;
    if t >= scores.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: scores.len(),
        });
    }
    let ts = scores[t];
    let (mut greater, mut equal) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if s > ts {
            greater += 1;
        } else if s == ts && i != t {
            equal += 1;
        }
    }
    let mut prev = None;
    for &f in filtered_out {
        // skip duplicates and the target
        if f == target || prev == Some(f) || f as usize >= scores.len() {
            continue;
        }
        prev = Some(f);
        let s = scores[f as usize];
        if s > ts {
            greater -= 1;
        } else if s == ts {
            equal -= 1;
        }
    }
    let ties = match tie {
        TieMode::Mean => equal as f64 / 2.0,
        TieMode::Pessimistic => equal as f64,
        TieMode::Optimistic => 0.0,
    };
    Ok(1.0 + greater as f64 + ties)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query_ranks: Vec<f64>,
    pub mrr: f64,
    /// Keyed by N.
    pub hits_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub elapsed_seconds: f64,
    /// True when only a subset of the split's queries was ranked.
    pub subsampled: bool,
}

impl EvalReport {
    /// Aggregates ranks into MRR and Hits@{1,3,10}.
    pub fn from_ranks(ranks: Vec<f64>, elapsed_seconds: f64, subsampled: bool) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptySplit);
        }
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let hits_at = HITS_AT
            .iter()
            .map(|&k| {
                (
                    k,
                    ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n,
                )
            })
            .collect();
        Ok(EvalReport {
            n_queries: ranks.len(),
            per_query_ranks: ranks,
            mrr,
            hits_at,
            elapsed_seconds,
            subsampled,
        })
    }

    pub fn hits(&self, n: usize) -> f64 {
        self.hits_at.get(&n).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks the queries at `positions` of `split`. Rank order follows `positions`.
pub fn rank_positions(
    scorer: &Scorer,
    params: &ParameterSet,
    split: &TripleSet,
    positions: &[usize],
    filter: &FilterIndex,
    tie: TieMode,
) -> Result<Vec<f64>> {
    let norms = entity_sq_norms(params);
    let n_e = params.n_entities();
    positions
        .par_iter()
        .map_init(
            || (vec![0.0; params.dim()], vec![0.0; n_e]),
            |(q, row), &i| {
                let t = split.get(i);
                scorer.query_into(params, t.head, t.relation, q);
                let scale = scorer.relation_scale(params, t.relation);
                scorer.score_all_from_query(params, &norms, q, scale, row);
                rank_query(row, t.tail, filter.answers(t.head, t.relation), tie)
            },
        )
        .collect()
}

/// Filtered MRR / Hits@N over every query of an augmented split.
pub fn evaluate_split(
    scorer: &Scorer,
    params: &ParameterSet,
    split: &TripleSet,
    filter: &FilterIndex,
    tie: TieMode,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let start = Instant::now();
    let positions: Vec<usize> = (0..split.len()).collect();
    let ranks = rank_positions(scorer, params, split, &positions, filter, tie)?;
    EvalReport::from_ranks(ranks, start.elapsed().as_secs_f64(), false)
}

/// Fixed, seed-determined subset of validation queries, reused for every
/// snapshot of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshotter {
    positions: Vec<usize>,
    subsampled: bool,
}

impl Snapshotter {
    /// Picks `min(size, split_len)` queries; `None` takes the whole split.
    pub fn new(split_len: usize, size: Option<usize>, seed: u64) -> Self {
        match size {
            Some(m) if m < split_len => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut positions = rand::seq::index::sample(&mut rng, split_len, m).into_vec();
                positions.sort_unstable();
                Snapshotter {
                    positions,
                    subsampled: true,
                }
            }
            _ => Snapshotter {
                positions: (0..split_len).collect(),
                subsampled: false,
            },
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn evaluate(
        &self,
        scorer: &Scorer,
        params: &ParameterSet,
        split: &TripleSet,
        filter: &FilterIndex,
        tie: TieMode,
    ) -> Result<EvalReport> {
        if self.positions.is_empty() {
            return Err(Error::EmptySplit);
        }
        let start = Instant::now();
        let ranks = rank_positions(scorer, params, split, &self.positions, filter, tie)?;
        EvalReport::from_ranks(ranks, start.elapsed().as_secs_f64(), self.subsampled)
    }
}
