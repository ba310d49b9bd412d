//! Analytic gradients of every loss with respect to the parameter tables.
//!
//! The forward pass here caches the rotated head, the RotL denominator and
//! the distances for the backward pass. [`batch_loss`] is the reference
//! forward built on the public scoring and loss functions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kgdata::Triple;
use crate::losses::{
    adversarial_weights, advneg_loss, allneg_loss, centroid, hale_loss, log_sigmoid, nonneg_loss,
    samneg_loss, sigmoid, softmax_into, LossKind, LossSpec,
};
use crate::scoring::{
    dot, entity_sq_norms, flex_denominator, rotate_into, sq_distances_into, Block, ModelKind,
    ParameterSet, Scorer,
};

/// One optimizer step's worth of training signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    /// Position of the batch within its epoch, reported on failure.
    pub index: usize,
    pub positives: Vec<Triple>,
    /// Sampled queries whose all-entity rows enter the uniformity term
    /// (HaLE). Only head and relation are read.
    pub queries: Vec<Triple>,
    /// `neg_count` corrupted tails per positive, flattened (SamNeg, AdvNeg).
    pub negatives: Vec<u32>,
    pub neg_count: usize,
}

impl Batch {
    pub fn negatives_of(&self, i: usize) -> &[u32] {
        &self.negatives[i * self.neg_count..(i + 1) * self.neg_count]
    }
}

/// Dense gradient buffer for one table that remembers which rows were written.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlock {
    cols: usize,
    data: Vec<f64>,
    touched: Vec<u32>,
    mark: Vec<bool>,
}

impl GradBlock {
    fn new(rows: usize, cols: usize) -> Self {
        GradBlock {
            cols,
            data: vec![0.0; rows * cols],
            touched: Vec::new(),
            mark: vec![false; rows],
        }
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        if !self.mark[i] {
            self.mark[i] = true;
            self.touched.push(i as u32);
        }
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Gradient row, or `None` if the batch never referenced it.
    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.mark[i].then(|| &self.data[i * self.cols..(i + 1) * self.cols])
    }

    /// Touched row ids in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            let i = i as usize;
            self.data[i * self.cols..(i + 1) * self.cols].fill(0.0);
            self.mark[i] = false;
        }
        self.touched.clear();
    }

    fn add_from(&mut self, other: &GradBlock) {
        for &i in &other.touched {
            let i = i as usize;
            let src = &other.data[i * other.cols..(i + 1) * other.cols];
            for (a, b) in self.row_mut(i).iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

/// Gradient record with the same layout as [`ParameterSet`], sparse over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    blocks: Vec<GradBlock>,
}

fn block_index(b: Block) -> usize {
    Block::ALL
        .iter()
        .position(|&x| x == b)
        .expect("known block")
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Gradients {
            blocks: Block::ALL
                .iter()
                .map(|&b| {
                    let t = params.block(b);
                    GradBlock::new(t.rows(), t.cols())
                })
                .collect(),
        }
    }

    pub fn block(&self, b: Block) -> &GradBlock {
        &self.blocks[block_index(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut GradBlock {
        &mut self.blocks[block_index(b)]
    }

    pub fn clear(&mut self) {
        self.blocks.iter_mut().for_each(GradBlock::clear);
    }

    pub fn add_from(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_from(b);
        }
    }

    /// Value of one scalar, zero for untouched rows.
    pub fn get(&self, b: Block, row: usize, col: usize) -> f64 {
        self.block(b).row(row).map_or(0.0, |r| r[col])
    }
}

/// Forward state of one `(h, r)` query kept for the backward pass.
struct QueryCache {
    q: Vec<f64>,
    /// Rotated head (rotation models).
    rot: Vec<f64>,
    /// `rot + r'` before scaling (RotL).
    sum: Vec<f64>,
    denom: f64,
    clamped: bool,
}

impl QueryCache {
    fn new(d: usize) -> Self {
        QueryCache {
            q: vec![0.0; d],
            rot: vec![0.0; d],
            sum: vec![0.0; d],
            denom: 1.0,
            clamped: false,
        }
    }
}

fn forward_query(scorer: &Scorer, p: &ParameterSet, h: u32, r: u32, c: &mut QueryCache) {
    let (hi, ri) = (h as usize, r as usize);
    match scorer.model.kind {
        ModelKind::TransE | ModelKind::DistMult => {
            scorer.query_into(p, h, r, &mut c.q);
        }
        ModelKind::RotatE => {
            rotate_into(p.relation_angles.row(ri), p.entity.row(hi), &mut c.rot);
            c.q.copy_from_slice(&c.rot);
        }
        ModelKind::RotE => {
            rotate_into(p.relation_angles.row(ri), p.entity.row(hi), &mut c.rot);
            for ((q, a), b) in c.q.iter_mut().zip(&c.rot).zip(p.relation_second.row(ri)) {
                *q = a + b;
            }
        }
        ModelKind::RotL => {
            rotate_into(p.relation_angles.row(ri), p.entity.row(hi), &mut c.rot);
            let y = p.relation_second.row(ri);
            let (denom, clamped) = flex_denominator(&c.rot, y);
            c.denom = denom;
            c.clamped = clamped;
            let k = p.relation_flex.row(ri)[0] / denom;
            for ((q, s), (&a, &b)) in
                c.q.iter_mut()
                    .zip(c.sum.iter_mut())
                    .zip(c.rot.iter().zip(y))
            {
                *s = a + b;
                *q = k * *s;
            }
        }
    }
}

/// Pushes `dq` (gradient w.r.t. the query vector) back into the head entity
/// and relation tables.
fn backward_query(
    scorer: &Scorer,
    p: &ParameterSet,
    h: u32,
    r: u32,
    c: &QueryCache,
    dq: &[f64],
    g: &mut Gradients,
) {
    let (hi, ri) = (h as usize, r as usize);
    let d = dq.len();
    match scorer.model.kind {
        ModelKind::TransE => {
            add(g.block_mut(Block::Entity).row_mut(hi), dq);
            add(g.block_mut(Block::Translation).row_mut(ri), dq);
        }
        ModelKind::DistMult => {
            let e = p.entity.row(hi);
            let rv = p.relation_translation.row(ri);
            let ge = g.block_mut(Block::Entity).row_mut(hi);
            for i in 0..d {
                ge[i] += dq[i] * rv[i];
            }
            let gr = g.block_mut(Block::Translation).row_mut(ri);
            for i in 0..d {
                gr[i] += dq[i] * e[i];
            }
        }
        ModelKind::RotatE => backward_rotation(p, hi, ri, &c.rot, dq, g),
        ModelKind::RotE => {
            backward_rotation(p, hi, ri, &c.rot, dq, g);
            add(g.block_mut(Block::Second).row_mut(ri), dq);
        }
        ModelKind::RotL => {
            let alpha = p.relation_flex.row(ri)[0];
            let y = p.relation_second.row(ri);
            let dq_s = dot(dq, &c.sum);
            g.block_mut(Block::Flex).row_mut(ri)[0] += dq_s / c.denom;
            let k = alpha / c.denom;
            // d(denominator) contribution; the clamped denominator is a constant
            let dd = if c.clamped {
                0.0
            } else {
                -alpha * dq_s / (c.denom * c.denom)
            };
            let mut drot = vec![0.0; d];
            let gy = g.block_mut(Block::Second).row_mut(ri);
            for i in 0..d {
                drot[i] = k * dq[i] - dd * y[i];
                gy[i] += k * dq[i] - dd * c.rot[i];
            }
            backward_rotation(p, hi, ri, &c.rot, &drot, g);
        }
    }
}

fn backward_rotation(
    p: &ParameterSet,
    hi: usize,
    ri: usize,
    rot: &[f64],
    drot: &[f64],
    g: &mut Gradients,
) {
    let angles = p.relation_angles.row(ri);
    {
        let ga = g.block_mut(Block::Angles).row_mut(ri);
        for (i, ga_i) in ga.iter_mut().enumerate() {
            *ga_i += -drot[2 * i] * rot[2 * i + 1] + drot[2 * i + 1] * rot[2 * i];
        }
    }
    let ge = g.block_mut(Block::Entity).row_mut(hi);
    for (i, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (a, b) = (drot[2 * i], drot[2 * i + 1]);
        // transpose of the 2x2 rotation
        ge[2 * i] += a * c + b * s;
        ge[2 * i + 1] += -a * s + b * c;
    }
}

#[inline]
fn add(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Score of `(q, e_t)` plus what the backward pass needs.
struct PairForward {
    score: f64,
    d2: f64,
    act_grad: f64,
}

#[inline]
fn pair_forward(scorer: &Scorer, q: &[f64], e: &[f64], scale: f64) -> PairForward {
    let d2: f64 = q.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    let (a, da) = scorer.activation.eval(scale * d2);
    PairForward {
        score: -a,
        d2,
        act_grad: da,
    }
}

/// Backward of `f = -act(scale * |q - e_t|^2)` given `df`. Accumulates into
/// `dq`, the tail entity row and `dscale`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn pair_backward(
    pf: &PairForward,
    df: f64,
    scale: f64,
    q: &[f64],
    p: &ParameterSet,
    t: usize,
    dq: &mut [f64],
    dscale: &mut f64,
    g: &mut Gradients,
) {
    let dx = -df * pf.act_grad;
    *dscale += dx * pf.d2;
    let dd2 = dx * scale;
    if dd2 == 0.0 {
        return;
    }
    let c = 2.0 * dd2;
    let e = p.entity.row(t);
    let ge = g.block_mut(Block::Entity).row_mut(t);
    for ((dqk, gk), (&qk, &ek)) in dq.iter_mut().zip(ge.iter_mut()).zip(q.iter().zip(e)) {
        let diff = c * (qk - ek);
        *dqk += diff;
        *gk -= diff;
    }
}

/// Scratch buffers reused across queries.
struct Workspace {
    cache: QueryCache,
    dq: Vec<f64>,
    row: Vec<f64>,
    d2: Vec<f64>,
    act_grad: Vec<f64>,
    coef: Vec<f64>,
    weights: Vec<f64>,
    neg_scores: Vec<f64>,
    neg_fwd: Vec<PairForward>,
}

impl Workspace {
    fn new(d: usize, n_e: usize) -> Self {
        Workspace {
            cache: QueryCache::new(d),
            dq: vec![0.0; d],
            row: vec![0.0; n_e],
            d2: vec![0.0; n_e],
            act_grad: vec![0.0; n_e],
            coef: vec![0.0; n_e],
            weights: vec![0.0; n_e],
            neg_scores: Vec::new(),
            neg_fwd: Vec::new(),
        }
    }
}

/// Static pieces shared by every shard of one gradient computation.
struct Context<'a> {
    scorer: &'a Scorer,
    spec: &'a LossSpec,
    params: &'a ParameterSet,
    norms: Vec<f64>,
    n_pos: f64,
    n_queries: f64,
}

impl Context<'_> {
    fn scale(&self, r: u32) -> f64 {
        self.scorer.relation_scale(self.params, r)
    }

    fn add_scale_grad(&self, r: u32, dscale: f64, g: &mut Gradients) {
        if self.scorer.use_rel_ratio && dscale != 0.0 {
            g.block_mut(Block::Scale).row_mut(r as usize)[0] += dscale;
        }
    }

    /// Forward and backward of one all-entity row. `upstream` maps the
    /// row's softmax probabilities and scores to `dL/d row_i` in place;
    /// it returns this row's loss contribution.
    fn all_entity_row(
        &self,
        h: u32,
        r: u32,
        ws: &mut Workspace,
        g: &mut Gradients,
        upstream: impl FnOnce(&mut [f64], &[f64]) -> f64,
    ) -> f64 {
        let p = self.params;
        forward_query(self.scorer, p, h, r, &mut ws.cache);
        let scale = self.scale(r);
        sq_distances_into(&p.entity, &self.norms, &ws.cache.q, &mut ws.d2);
        let act = &self.scorer.activation;
        for ((s, da), &d2) in ws.row.iter_mut().zip(ws.act_grad.iter_mut()).zip(&ws.d2) {
            let (a, g) = act.eval(scale * d2);
            *s = -a;
            *da = g;
        }
        softmax_into(&ws.row, &mut ws.weights);
        let loss = upstream(&mut ws.weights, &ws.row);

        // coefficient of (q - e_i) in dL/dq, per entity
        let mut dscale = 0.0;
        for ((c, &w), (&d2, &da)) in ws
            .coef
            .iter_mut()
            .zip(&ws.weights)
            .zip(ws.d2.iter().zip(&ws.act_grad))
        {
            let dx = -w * da;
            dscale += dx * d2;
            *c = 2.0 * dx * scale;
        }
        ws.dq.fill(0.0);
        let q = &ws.cache.q;
        let ge = g.block_mut(Block::Entity);
        for (i, (&c, e)) in ws
            .coef
            .iter()
            .zip(p.entity.as_slice().chunks_exact(q.len()))
            .enumerate()
        {
            if c == 0.0 {
                continue;
            }
            let gr = ge.row_mut(i);
            for ((dq, g), (&qk, &ek)) in ws.dq.iter_mut().zip(gr.iter_mut()).zip(q.iter().zip(e)) {
                let diff = c * (qk - ek);
                *dq += diff;
                *g -= diff;
            }
        }
        self.add_scale_grad(r, dscale, g);
        backward_query(self.scorer, p, h, r, &ws.cache, &ws.dq, g);
        loss
    }

    /// Positive-only terms: `df/dscore` is produced by `df_of`, the loss
    /// contribution by `loss_of`.
    fn positive(
        &self,
        t: &Triple,
        ws: &mut Workspace,
        g: &mut Gradients,
        term: impl Fn(f64) -> (f64, f64),
    ) -> f64 {
        let p = self.params;
        forward_query(self.scorer, p, t.head, t.relation, &mut ws.cache);
        let scale = self.scale(t.relation);
        let pf = pair_forward(
            self.scorer,
            &ws.cache.q,
            p.entity.row(t.tail as usize),
            scale,
        );
        let (loss, df) = term(pf.score);
        ws.dq.fill(0.0);
        let mut dscale = 0.0;
        pair_backward(
            &pf,
            df,
            scale,
            &ws.cache.q,
            p,
            t.tail as usize,
            &mut ws.dq,
            &mut dscale,
            g,
        );
        self.add_scale_grad(t.relation, dscale, g);
        backward_query(self.scorer, p, t.head, t.relation, &ws.cache, &ws.dq, g);
        loss
    }

    /// SamNeg / AdvNeg term of one positive and its negatives.
    fn with_negatives(
        &self,
        t: &Triple,
        negs: &[u32],
        ws: &mut Workspace,
        g: &mut Gradients,
    ) -> f64 {
        let p = self.params;
        let spec = self.spec;
        forward_query(self.scorer, p, t.head, t.relation, &mut ws.cache);
        let scale = self.scale(t.relation);
        let q = &ws.cache.q;
        let pos = pair_forward(self.scorer, q, p.entity.row(t.tail as usize), scale);
        ws.neg_fwd.clear();
        ws.neg_scores.clear();
        for &n in negs {
            let pf = pair_forward(self.scorer, q, p.entity.row(n as usize), scale);
            ws.neg_scores.push(pf.score);
            ws.neg_fwd.push(pf);
        }
        let k = negs.len() as f64;
        let weights: Vec<f64> = match spec.kind {
            LossKind::AdvNeg => adversarial_weights(&ws.neg_scores, spec.adv_temperature),
            _ => vec![1.0 / k; negs.len()],
        };
        let m = spec.margin;
        let mut loss = -log_sigmoid(pos.score + m);
        for (s, w) in ws.neg_scores.iter().zip(&weights) {
            loss -= w * log_sigmoid(-s - m);
        }

        ws.dq.fill(0.0);
        let mut dscale = 0.0;
        let df_pos = -sigmoid(-(pos.score + m)) / self.n_pos;
        pair_backward(
            &pos,
            df_pos,
            scale,
            &ws.cache.q,
            p,
            t.tail as usize,
            &mut ws.dq,
            &mut dscale,
            g,
        );
        for ((pf, &n), w) in ws.neg_fwd.iter().zip(negs).zip(&weights) {
            let df = w * sigmoid(pf.score + m) / self.n_pos;
            pair_backward(
                pf,
                df,
                scale,
                &ws.cache.q,
                p,
                n as usize,
                &mut ws.dq,
                &mut dscale,
                g,
            );
        }
        self.add_scale_grad(t.relation, dscale, g);
        backward_query(self.scorer, p, t.head, t.relation, &ws.cache, &ws.dq, g);
        loss / self.n_pos
    }

    /// Loss and gradients of the positives `pos` (batch offsets `offset..`)
    /// and the sampled `queries`.
    fn shard(
        &self,
        batch: &Batch,
        pos: std::ops::Range<usize>,
        queries: &[Triple],
        g: &mut Gradients,
    ) -> f64 {
        let p = self.params;
        let mut ws = Workspace::new(p.dim(), p.n_entities());
        let spec = self.spec;
        let mut loss = 0.0;
        let n_pos = self.n_pos;
        match spec.kind {
            LossKind::HaLE => {
                let lambda = spec.lambda;
                for t in &batch.positives[pos] {
                    loss += if spec.pos_square {
                        self.positive(t, &mut ws, g, |f| {
                            (lambda * f * f / n_pos, 2.0 * lambda * f / n_pos)
                        })
                    } else {
                        self.positive(t, &mut ws, g, |f| (-lambda * f / n_pos, -lambda / n_pos))
                    };
                }
                let nq = self.n_queries;
                for t in queries {
                    loss += self.all_entity_row(t.head, t.relation, &mut ws, g, |w, row| {
                        w.iter_mut().for_each(|x| *x /= nq);
                        crate::losses::lse_unchecked(row) / nq
                    });
                }
            }
            LossKind::AllNeg => {
                for t in &batch.positives[pos] {
                    let target = t.tail as usize;
                    loss += self.all_entity_row(t.head, t.relation, &mut ws, g, |w, row| {
                        w.iter_mut().for_each(|x| *x /= n_pos);
                        w[target] -= 1.0 / n_pos;
                        (crate::losses::lse_unchecked(row) - row[target]) / n_pos
                    });
                }
            }
            LossKind::NonNeg => {
                for t in &batch.positives[pos] {
                    loss += self.positive(t, &mut ws, g, |f| (f * f / n_pos, 2.0 * f / n_pos));
                }
            }
            LossKind::SamNeg | LossKind::AdvNeg => {
                for i in pos {
                    loss +=
                        self.with_negatives(&batch.positives[i], batch.negatives_of(i), &mut ws, g);
                }
            }
        }
        loss
    }
}

/// Gradient of `reg_weight * mean_i (|e_i - c|^2 - rho)^2` over the whole
/// entity table, `c` the centroid. Returns the regularizer value.
fn nonneg_regularizer_grad(p: &ParameterSet, spec: &LossSpec, g: &mut Gradients) -> f64 {
    let n = p.n_entities();
    if spec.reg_weight == 0.0 || n == 0 {
        return 0.0;
    }
    let c = centroid(&p.entity);
    let d = p.dim();
    let nf = n as f64;
    let mut coef = vec![0.0; n];
    let mut value = 0.0;
    for (i, a) in coef.iter_mut().enumerate() {
        let e = p.entity.row(i);
        let d2: f64 = e.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
        value += (d2 - spec.reg_radius).powi(2);
        *a = spec.reg_weight * 4.0 * (d2 - spec.reg_radius) / nf;
    }
    // the centroid term: -(1/n) sum_i a_i (e_i - c)
    let mut mean_term = vec![0.0; d];
    for (i, &a) in coef.iter().enumerate() {
        for (m, (x, y)) in mean_term.iter_mut().zip(p.entity.row(i).iter().zip(&c)) {
            *m += a * (x - y) / nf;
        }
    }
    let ge = g.block_mut(Block::Entity);
    for (i, &a) in coef.iter().enumerate() {
        let e = p.entity.row(i);
        let gr = ge.row_mut(i);
        for k in 0..d {
            gr[k] += a * (e[k] - c[k]) - mean_term[k];
        }
    }
    spec.reg_weight * value / nf
}

/// Fills `grads` (cleared first) with the gradient of the configured loss
/// on `batch` and returns the loss.
pub fn compute_gradients(
    scorer: &Scorer,
    spec: &LossSpec,
    params: &ParameterSet,
    batch: &Batch,
    grads: &mut Gradients,
) -> Result<f64> {
    compute_gradients_sharded(scorer, spec, params, batch, std::slice::from_mut(grads))
}

/// Like [`compute_gradients`] but splits the batch over `shards.len()`
/// workers, each writing its own record, and sums them into `shards[0]` in
/// shard order. The result depends on the shard count, never on thread
/// scheduling.
pub fn compute_gradients_sharded(
    scorer: &Scorer,
    spec: &LossSpec,
    params: &ParameterSet,
    batch: &Batch,
    shards: &mut [Gradients],
) -> Result<f64> {
    if batch.positives.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if spec.kind.uses_negatives()
        && batch.negatives.len() != batch.positives.len() * batch.neg_count
    {
        return Err(Error::ShapeMismatch(format!(
            "{} negatives for {} positives at {} each",
            batch.negatives.len(),
            batch.positives.len(),
            batch.neg_count
        )));
    }
    let needs_norms = matches!(spec.kind, LossKind::HaLE | LossKind::AllNeg);
    let ctx = Context {
        scorer,
        spec,
        params,
        norms: if needs_norms {
            entity_sq_norms(params)
        } else {
            Vec::new()
        },
        n_pos: batch.positives.len() as f64,
        n_queries: batch.queries.len().max(1) as f64,
    };
    let n = shards.len().max(1);
    let np = batch.positives.len();
    let nq = batch.queries.len();
    let losses: Vec<f64> = shards
        .par_iter_mut()
        .enumerate()
        .map(|(s, g)| {
            g.clear();
            let pos = (s * np / n)..((s + 1) * np / n);
            let qs = &batch.queries[s * nq / n..(s + 1) * nq / n];
            ctx.shard(batch, pos, qs, g)
        })
        .collect();
    let (first, rest) = shards.split_first_mut().expect("at least one shard");
    for other in rest.iter() {
        first.add_from(other);
    }
    let mut loss: f64 = losses.iter().sum();
    if spec.kind == LossKind::NonNeg {
        loss += nonneg_regularizer_grad(params, spec, first);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { batch: batch.index });
    }
    Ok(loss)
}

/// Reference forward: the batch loss assembled from [`Scorer`] scores and
/// the loss functions, with no gradient bookkeeping.
///
/// `adv_weights`, when given, replaces the self-adversarial weights (one
/// `neg_count` slice per positive) so they can be held fixed while
/// parameters are perturbed.
pub fn batch_loss(
    scorer: &Scorer,
    spec: &LossSpec,
    params: &ParameterSet,
    batch: &Batch,
    adv_weights: Option<&[f64]>,
) -> Result<f64> {
    let pos: Vec<f64> = batch
        .positives
        .iter()
        .map(|t| scorer.score_triple(params, t.head, t.relation, t.tail))
        .collect();
    let n = pos.len() as f64;
    match spec.kind {
        LossKind::HaLE => {
            let rows: Vec<Vec<f64>> = batch
                .queries
                .iter()
                .map(|t| scorer.score_all(params, t.head, t.relation))
                .collect();
            hale_loss(&pos, &rows, params.n_entities(), spec)
        }
        LossKind::AllNeg => {
            let mut total = 0.0;
            for t in &batch.positives {
                total += allneg_loss(
                    t.tail as usize,
                    &scorer.score_all(params, t.head, t.relation),
                )?;
            }
            Ok(total / n)
        }
        LossKind::NonNeg => Ok(nonneg_loss(&pos, &params.entity, spec)),
        LossKind::SamNeg | LossKind::AdvNeg => {
            let mut total = 0.0;
            for (i, (t, &f)) in batch.positives.iter().zip(&pos).enumerate() {
                let negs: Vec<f64> = batch
                    .negatives_of(i)
                    .iter()
                    .map(|&e| scorer.score_triple(params, t.head, t.relation, e))
                    .collect();
                total += match (spec.kind, adv_weights) {
                    (LossKind::SamNeg, _) => samneg_loss(f, &negs, spec.margin),
                    (_, None) => advneg_loss(f, &negs, spec.margin, spec.adv_temperature),
                    (_, Some(w)) => {
                        let w = &w[i * batch.neg_count..(i + 1) * batch.neg_count];
                        -log_sigmoid(f + spec.margin)
                            - negs
                                .iter()
                                .zip(w)
                                .map(|(s, wi)| wi * log_sigmoid(-s - spec.margin))
                                .sum::<f64>()
                    }
                };
            }
            Ok(total / n)
        }
    }
}

/// Self-adversarial weights of every positive's negatives at the current
/// parameters, flattened like [`Batch::negatives`].
pub fn current_adv_weights(
    scorer: &Scorer,
    spec: &LossSpec,
    params: &ParameterSet,
    batch: &Batch,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch.negatives.len());
    for (i, t) in batch.positives.iter().enumerate() {
        let negs: Vec<f64> = batch
            .negatives_of(i)
            .iter()
            .map(|&e| scorer.score_triple(params, t.head, t.relation, e))
            .collect();
        out.extend(adversarial_weights(&negs, spec.adv_temperature));
    }
    out
}
