use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{Block, ParameterSet, MIN_RELATION_SCALE};

use super::grad::Gradients;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer {s:?}"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Row-sparse optimizer: only rows present in a gradient record move.
///
/// Adam keeps dense first and second moment tables, updates the moments of
/// touched rows only and bias-corrects with the global step count.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParameterSet) -> Self {
        let moments = || match kind {
            OptimizerKind::Adam => Block::ALL
                .iter()
                .map(|&b| vec![0.0; params.block(b).as_slice().len()])
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and clamps every `c_r` to at least
    /// [`MIN_RELATION_SCALE`].
    pub fn apply(&mut self, params: &mut ParameterSet, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (bi, &b) in Block::ALL.iter().enumerate() {
            let g = grads.block(b);
            let cols = g.cols();
            let table = params.block_mut(b);
            for &row in g.touched() {
                let row = row as usize;
                let gr = g.row(row).expect("touched row");
                let pr = table.row_mut(row);
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (p, gv) in pr.iter_mut().zip(gr) {
                            *p -= lr * gv;
                        }
                    }
                    OptimizerKind::Adam => {
                        let m = &mut self.first[bi][row * cols..(row + 1) * cols];
                        let v = &mut self.second[bi][row * cols..(row + 1) * cols];
                        for k in 0..cols {
                            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gr[k];
                            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gr[k] * gr[k];
                            let mh = m[k] / c1;
                            let vh = v[k] / c2;
                            pr[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
        for &row in grads.block(Block::Scale).touched() {
            let s = &mut params.relation_scale.row_mut(row as usize)[0];
            *s = s.max(MIN_RELATION_SCALE);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::Triple;
    use crate::losses::{LossKind, LossSpec};
    use crate::scoring::{ActivationSpec, ModelKind, ModelSpec, Scorer};
    use crate::trainer::grad::{compute_gradients, Batch};

    fn setup() -> (Scorer, ParameterSet, Batch) {
        let scorer = Scorer::new(
            ModelSpec::new(ModelKind::TransE, 2).unwrap(),
            ActivationSpec::identity(),
            true,
        );
        let mut p = ParameterSet::zeros(3, 1, 2);
        p.entity.row_mut(1).copy_from_slice(&[1.0, 0.5]);
        let batch = Batch {
            positives: vec![Triple::new(0, 0, 1)],
            ..Default::default()
        };
        (scorer, p, batch)
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let (scorer, mut p, batch) = setup();
        let mut g = Gradients::zeros_like(&p);
        compute_gradients(
            &scorer,
            &LossSpec::new(LossKind::NonNeg),
            &p,
            &batch,
            &mut g,
        )
        .unwrap();
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &p);
        opt.apply(&mut p, &g);
        // bias-corrected first step is lr * sign(g) up to eps
        for k in 0..2 {
            let gv = g.get(Block::Translation, 0, k);
            let moved = p.relation_translation.row(0)[k] - before.relation_translation.row(0)[k];
            assert!((moved + 0.01 * gv.signum()).abs() < 1e-8);
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn untouched_rows_stay_fixed() {
        let (scorer, mut p, batch) = setup();
        p.entity.row_mut(2).copy_from_slice(&[7.0, 7.0]);
        let mut spec = LossSpec::new(LossKind::NonNeg);
        spec.reg_weight = 0.0;
        let mut g = Gradients::zeros_like(&p);
        compute_gradients(&scorer, &spec, &p, &batch, &mut g).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &p);
        opt.apply(&mut p, &g);
        assert_eq!(p.entity.row(2), &[7.0, 7.0]);
        assert_ne!(p.entity.row(1), &[1.0, 0.5]);
    }

    #[test]
    fn relation_scale_is_clamped() {
        let (scorer, mut p, batch) = setup();
        let mut g = Gradients::zeros_like(&p);
        compute_gradients(
            &scorer,
            &LossSpec::new(LossKind::NonNeg),
            &p,
            &batch,
            &mut g,
        )
        .unwrap();
        assert!(g.get(Block::Scale, 0, 0) > 0.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e6, &p);
        opt.apply(&mut p, &g);
        assert_eq!(p.relation_scale.row(0)[0], MIN_RELATION_SCALE);
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "ADAM".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert_eq!("sgd".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
