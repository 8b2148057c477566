//! Pooling by multi-head attention with a learned seed query.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuro::{Linear, ModelParameters, ParamId, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionHeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPool {
    pub seed: ParamId,
    pub heads: Vec<AttentionHeadParams>,
    pub output: Linear,
    pub dim: usize,
    pub head_dim: usize,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParameters,
        name: &str,
        dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            Tensor::from_vec(rows, cols, data).expect("sized")
        };
        let seed = params.add(format!("{name}.seed"), uniform(1, dim, dim));
        let heads = (0..heads)
            .map(|h| AttentionHeadParams {
                query: params.add(format!("{name}.{h}.query"), uniform(dim, head_dim, dim)),
                key: params.add(format!("{name}.{h}.key"), uniform(dim, head_dim, dim)),
                value: params.add(format!("{name}.{h}.value"), uniform(dim, head_dim, dim)),
            })
            .collect::<Vec<_>>();
        let concat = heads.len() * head_dim;
        let output = Linear::new(params, &format!("{name}.output"), concat, dim, rng);
        Self {
            seed,
            heads,
            output,
            dim,
            head_dim,
        }
    }

    /// Pools an `m x dim` set into a `1 x dim` row.
    ///
    /// Rows are first put in a canonical (lexicographic) order, so the
    /// result is bit-identical for every permutation of the set. Repeated
    /// rows are kept once with `ln(count)` added to their score, which is the
    /// same softmax but makes a set of equal rows reduce exactly to one.
    pub fn forward(&self, tape: &mut Tape, params: &ModelParameters, set: Var) -> Result<Var> {
        let x = tape.value(set);
        if x.rows() == 0 {
            return Err(Error::Invalid("attention pooling over an empty set".into()));
        }
        if x.cols() != self.dim {
            return Err(Error::Shape(format!(
                "attention pool expects width {}, got {}",
                self.dim,
                x.cols()
            )));
        }
        let (order, counts) = canonical_unique_rows(x);
        let multiplicity = counts.iter().any(|&c| c > 1).then(|| {
            let logs = counts.iter().map(|&c| (c as f64).ln()).collect();
            tape.leaf(Tensor::row_vector(logs))
        });
        let set = tape.gather_rows(set, &order)?;
        let seed = tape.param(params, self.seed);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let wq = tape.param(params, h.query);
            let wk = tape.param(params, h.key);
            let wv = tape.param(params, h.value);
            let q = tape.matmul(seed, wq)?;
            let k = tape.matmul(set, wk)?;
            let v = tape.matmul(set, wv)?;
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = multiplicity {
                scores = tape.add(scores, m)?;
            }
            let weights = tape.softmax_rows(scores);
            outs.push(tape.matmul(weights, v)?);
        }
        let joined = tape.concat_cols(&outs)?;
        self.output.forward(tape, params, joined)
    }
}

/// Lexicographically sorted distinct rows with their multiplicities.
fn canonical_unique_rows(x: &Tensor) -> (Vec<usize>, Vec<usize>) {
    let order = canonical_row_order(x);
    let mut unique: Vec<usize> = Vec::with_capacity(order.len());
    let mut counts: Vec<usize> = Vec::with_capacity(order.len());
    for i in order {
        match unique.last() {
            Some(&u) if x.row(u) == x.row(i) => *counts.last_mut().expect("paired") += 1,
            _ => {
                unique.push(i);
                counts.push(1);
            }
        }
    }
    (unique, counts)
}

fn canonical_row_order(x: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}
