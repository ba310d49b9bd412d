//! Embedding parameters and the triple scoring function.
//!
//! A triple `(h, r, t)` is scored as `-act(c_r * ||phi(h, r) - e_t||^2)` where
//! `phi` is the model's transform producing a query vector, `c_r` a
//! per-relation positive scale and `act` one of the [`ActivationKind`]s.
//! With the identity activation and `c_r = 1` this is the plain negative
//! squared L2 distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs to the doubled arctanh are clamped here; without hyperbolic
/// normalization distances routinely exceed 1.
pub const ARCTANH_CLAMP: f64 = 1.0 - 1e-5;
/// Smallest magnitude allowed for the flexible-addition denominator.
pub const FLEX_DENOM_MIN: f64 = 1e-6;
/// Floor applied to every relation scale after an optimizer step.
pub const MIN_RELATION_SCALE: f64 = 1e-3;

/// Row-major dense table, one embedding per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Table {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} table",
                data.len()
            )));
        }
        Ok(Table { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    DistMult,
    RotatE,
    RotE,
    RotL,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::RotatE,
        ModelKind::RotE,
        ModelKind::RotL,
    ];

    pub fn is_rotation(self) -> bool {
        matches!(self, ModelKind::RotatE | ModelKind::RotE | ModelKind::RotL)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::RotatE => "rotate",
            ModelKind::RotE => "rote",
            ModelKind::RotL => "rotl",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dimension: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dimension: usize) -> Result<Self> {
        let spec = ModelSpec { kind, dimension };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::InvalidModel(format!(
                "dimension must be at least 2, got {}",
                self.dimension
            )));
        }
        if self.kind.is_rotation() && !self.dimension.is_multiple_of(2) {
            return Err(Error::InvalidModel(format!(
                "{} needs an even dimension, got {}",
                self.kind, self.dimension
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Identity,
    Linear2x,
    XExpX,
    Arctanh2,
    Hanon,
    Halin,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Identity,
        ActivationKind::Linear2x,
        ActivationKind::XExpX,
        ActivationKind::Arctanh2,
        ActivationKind::Hanon,
        ActivationKind::Halin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Linear2x => "linear2x",
            ActivationKind::XExpX => "xexpx",
            ActivationKind::Arctanh2 => "arctanh2",
            ActivationKind::Hanon => "hanon",
            ActivationKind::Halin => "halin",
        }
    }

    /// Soft-constraint slope used when none is configured: 3 for Hanon, 10
    /// for Halin (matching the slope of `x e^x` near the cap).
    pub fn default_beta(self) -> f64 {
        match self {
            ActivationKind::Halin => 10.0,
            _ => 3.0,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown activation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    /// Soft-constraint slope.
    pub beta: f64,
    /// Hard-constraint cap.
    pub gamma: f64,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        ActivationSpec {
            kind,
            beta: kind.default_beta(),
            gamma: 10.0,
        }
    }

    pub fn identity() -> Self {
        Self::new(ActivationKind::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "activation needs beta > 0 and gamma > 0, got beta={} gamma={}",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }

    /// Activation value and derivative at `x >= 0`. Callers guarantee the
    /// domain; see [`activate`] for the checked form.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self.kind {
            ActivationKind::Identity => (x, 1.0),
            ActivationKind::Linear2x => (2.0 * x, 2.0),
            ActivationKind::XExpX => {
                let e = x.exp();
                (x * e, (1.0 + x) * e)
            }
            ActivationKind::Arctanh2 => {
                if x < ARCTANH_CLAMP {
                    (((1.0 + x) / (1.0 - x)).ln(), 2.0 / (1.0 - x * x))
                } else {
                    let c = ARCTANH_CLAMP;
                    (((1.0 + c) / (1.0 - c)).ln(), 0.0)
                }
            }
            ActivationKind::Hanon => {
                let u = (-self.beta * (x - 0.5)).exp();
                let denom = 1.0 / self.gamma + u;
                // the supremum gamma is never attained, even where 1/denom rounds to it
                (
                    (1.0 / denom).min(self.gamma.next_down()),
                    self.beta * u / (denom * denom),
                )
            }
            ActivationKind::Halin => {
                if x < 1.0 {
                    (2.0 * x, 2.0)
                } else {
                    let lin = self.beta * (x - 1.0) + 2.0;
                    if lin < self.gamma {
                        (lin, self.beta)
                    } else {
                        (self.gamma, 0.0)
                    }
                }
            }
        }
    }
}

/// Checked activation: rejects negative inputs.
pub fn activate(spec: &ActivationSpec, x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::NegativeActivationInput(x));
    }
    Ok(spec.eval(x).0)
}

/// Rotates consecutive coordinate pairs `(v[2i], v[2i+1])` by `angles[i]`.
pub fn rotate(angles: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if !v.len().is_multiple_of(2) {
        return Err(Error::InvalidModel(format!(
            "rotation needs an even dimension, got {}",
            v.len()
        )));
    }
    if angles.len() * 2 != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} angles for a {}-dimensional vector",
            angles.len(),
            v.len()
        )));
    }
    let mut out = vec![0.0; v.len()];
    rotate_into(angles, v, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn rotate_into(angles: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = a * c - b * s;
        out[2 * i + 1] = a * s + b * c;
    }
}

/// `alpha * (x + y) / (1 - <x, y>)`, with the denominator kept at least
/// [`FLEX_DENOM_MIN`] in magnitude. Returns whether it was clamped.
pub fn flexible_add(x: &[f64], y: &[f64], alpha: f64) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; x.len()];
    let clamped = flexible_add_into(x, y, alpha, &mut out);
    (out, clamped)
}

#[inline]
pub(crate) fn flex_denominator(x: &[f64], y: &[f64]) -> (f64, bool) {
    let raw = 1.0 - dot(x, y);
    if raw.abs() < FLEX_DENOM_MIN {
        (FLEX_DENOM_MIN.copysign(raw), true)
    } else {
        (raw, false)
    }
}

fn flexible_add_into(x: &[f64], y: &[f64], alpha: f64, out: &mut [f64]) -> bool {
    let (denom, clamped) = flex_denominator(x, y);
    let k = alpha / denom;
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o = k * (a + b);
    }
    clamped
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // eight independent partial sums
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Negative squared Euclidean distance.
pub fn similarity(q: &[f64], e: &[f64]) -> f64 {
    -squared_distance(q, e)
}

/// All trainable tables. Every model allocates every table so checkpoints
/// share one layout; each transform only reads the tables it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    /// `n_E x d`
    pub entity: Table,
    /// `n_rel x d`: translation (TransE) or multiplicative (DistMult) vector.
    pub relation_translation: Table,
    /// `n_rel x d`: second relation vector of RotE and RotL.
    pub relation_second: Table,
    /// `n_rel x d/2` rotation angles in radians.
    pub relation_angles: Table,
    /// `n_rel x 1` distance scale `c_r`.
    pub relation_scale: Table,
    /// `n_rel x 1` flexible-addition scalar of RotL.
    pub relation_flex: Table,
}

/// Identifies one table of a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Entity,
    Translation,
    Second,
    Angles,
    Scale,
    Flex,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::Entity,
        Block::Translation,
        Block::Second,
        Block::Angles,
        Block::Scale,
        Block::Flex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Entity => "entity",
            Block::Translation => "relation_translation",
            Block::Second => "relation_second",
            Block::Angles => "relation_angles",
            Block::Scale => "relation_scale",
            Block::Flex => "relation_flex",
        }
    }
}

impl ParameterSet {
    /// Zero vectors, zero angles, unit scales and unit flex scalars.
    pub fn zeros(n_entities: usize, n_relations: usize, dim: usize) -> Self {
        ParameterSet {
            entity: Table::zeros(n_entities, dim),
            relation_translation: Table::zeros(n_relations, dim),
            relation_second: Table::zeros(n_relations, dim),
            relation_angles: Table::zeros(n_relations, dim / 2),
            relation_scale: Table::filled(n_relations, 1, 1.0),
            relation_flex: Table::filled(n_relations, 1, 1.0),
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entity.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_translation.rows()
    }

    pub fn dim(&self) -> usize {
        self.entity.cols()
    }

    pub fn block(&self, b: Block) -> &Table {
        match b {
            Block::Entity => &self.entity,
            Block::Translation => &self.relation_translation,
            Block::Second => &self.relation_second,
            Block::Angles => &self.relation_angles,
            Block::Scale => &self.relation_scale,
            Block::Flex => &self.relation_flex,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Table {
        match b {
            Block::Entity => &mut self.entity,
            Block::Translation => &mut self.relation_translation,
            Block::Second => &mut self.relation_second,
            Block::Angles => &mut self.relation_angles,
            Block::Scale => &mut self.relation_scale,
            Block::Flex => &mut self.relation_flex,
        }
    }

    pub fn all_finite(&self) -> bool {
        Block::ALL
            .iter()
            .all(|&b| self.block(b).as_slice().iter().all(|v| v.is_finite()))
    }

    /// Checks that the tables agree with each other and with `model`.
    pub fn check_shapes(&self, model: &ModelSpec) -> Result<()> {
        let (n_e, n_r, d) = (self.n_entities(), self.n_relations(), self.dim());
        if d != model.dimension {
            return Err(Error::ShapeMismatch(format!(
                "parameters have dimension {d}, model expects {}",
                model.dimension
            )));
        }
        let expect = [
            (Block::Entity, n_e, d),
            (Block::Translation, n_r, d),
            (Block::Second, n_r, d),
            (Block::Angles, n_r, d / 2),
            (Block::Scale, n_r, 1),
            (Block::Flex, n_r, 1),
        ];
        for (b, rows, cols) in expect {
            let t = self.block(b);
            if t.rows() != rows || t.cols() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {}x{}, expected {rows}x{cols}",
                    b.name(),
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Squared norms of every entity row, reused across many query rows.
pub fn entity_sq_norms(params: &ParameterSet) -> Vec<f64> {
    (0..params.n_entities())
        .map(|i| {
            let e = params.entity.row(i);
            dot(e, e)
        })
        .collect()
}

/// Everything needed to turn parameters into triple scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub model: ModelSpec,
    pub activation: ActivationSpec,
    /// When false `c_r` is fixed at 1.
    pub use_rel_ratio: bool,
}

impl Scorer {
    pub fn new(model: ModelSpec, activation: ActivationSpec, use_rel_ratio: bool) -> Self {
        Scorer {
            model,
            activation,
            use_rel_ratio,
        }
    }

    #[inline]
    pub fn relation_scale(&self, params: &ParameterSet, r: u32) -> f64 {
        if self.use_rel_ratio {
            params.relation_scale.row(r as usize)[0]
        } else {
            1.0
        }
    }

    /// Writes the query vector of `(h, r)` into `out`. Returns true if the
    /// RotL denominator had to be clamped.
    pub fn query_into(&self, params: &ParameterSet, h: u32, r: u32, out: &mut [f64]) -> bool {
        let (h, r) = (h as usize, r as usize);
        let e = params.entity.row(h);
        match self.model.kind {
            ModelKind::TransE => {
                let rv = params.relation_translation.row(r);
                for ((o, a), b) in out.iter_mut().zip(e).zip(rv) {
                    *o = a + b;
                }
                false
            }
            ModelKind::DistMult => {
                let rv = params.relation_translation.row(r);
                for ((o, a), b) in out.iter_mut().zip(e).zip(rv) {
                    *o = a * b;
                }
                false
            }
            ModelKind::RotatE => {
                rotate_into(params.relation_angles.row(r), e, out);
                false
            }
            ModelKind::RotE => {
                rotate_into(params.relation_angles.row(r), e, out);
                for (o, b) in out.iter_mut().zip(params.relation_second.row(r)) {
                    *o += b;
                }
                false
            }
            ModelKind::RotL => {
                let mut rot = vec![0.0; e.len()];
                rotate_into(params.relation_angles.row(r), e, &mut rot);
                let alpha = params.relation_flex.row(r)[0];
                flexible_add_into(&rot, params.relation_second.row(r), alpha, out)
            }
        }
    }

    /// Query vector `phi(h, r)`.
    pub fn transform(&self, params: &ParameterSet, h: u32, r: u32) -> Vec<f64> {
        let mut q = vec![0.0; params.dim()];
        self.query_into(params, h, r, &mut q);
        q
    }

    /// Hardness-aware triple score `-act(c_r * ||phi(h, r) - e_t||^2)`.
    pub fn score_triple(&self, params: &ParameterSet, h: u32, r: u32, t: u32) -> f64 {
        let q = self.transform(params, h, r);
        let d2 = squared_distance(&q, params.entity.row(t as usize));
        -self.activation.eval(self.relation_scale(params, r) * d2).0
    }

    /// Scores of `(h, r, i)` for every entity `i`.
    pub fn score_all(&self, params: &ParameterSet, h: u32, r: u32) -> Vec<f64> {
        let norms = entity_sq_norms(params);
        let q = self.transform(params, h, r);
        let mut out = vec![0.0; params.n_entities()];
        self.score_all_from_query(params, &norms, &q, self.relation_scale(params, r), &mut out);
        out
    }

    /// Batched kernel: squared distances via `|q|^2 + |e_i|^2 - 2<q, e_i>`,
    /// then scale and activation.
    pub fn score_all_from_query(
        &self,
        params: &ParameterSet,
        norms: &[f64],
        q: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        sq_distances_into(&params.entity, norms, q, out);
        for o in out.iter_mut() {
            *o = -self.activation.eval(scale * *o).0;
        }
    }
}

/// Squared distances from `q` to every row of `entities`, clamped at zero
/// against cancellation.
pub fn sq_distances_into(entities: &Table, norms: &[f64], q: &[f64], out: &mut [f64]) {
    let qn = dot(q, q);
    let rows = entities.as_slice().chunks_exact(entities.cols().max(1));
    for ((o, &n), e) in out.iter_mut().zip(norms).zip(rows) {
        *o = (qn + n - 2.0 * dot(q, e)).max(0.0);
    }
}
