//! Linear-chain conditional random field.
//!
//! Path score: `start[y₀] + Σₜ emissions[t, yₜ] + Σₜ transitions[yₜ₋₁, yₜ] + stop[y_L-1]`.
//! `transitions[a, b]` scores tag `a` followed by tag `b`. All quantities
//! are log-space `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{transition_allowed, Tag, NUM_TAGS};
use crate::tensor::{log_sum_exp, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum CrfError {
    #[error("expected {expected} tags, got {got}")]
    Length { expected: usize, got: usize },
    #[error("tag index {index} out of range for {num_tags} tags")]
    TagIndex { index: usize, num_tags: usize },
    #[error("emission width {got} does not match {num_tags} tags")]
    Width { got: usize, num_tags: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        CrfParams {
            transitions: Matrix::zeros(num_tags, num_tags),
            start: vec![0.0; num_tags],
            stop: vec![0.0; num_tags],
        }
    }

    /// Glorot-uniform transitions, zero start/stop scores.
    pub fn init<R: Rng>(num_tags: usize, rng: &mut R) -> Self {
        CrfParams {
            transitions: Matrix::glorot(num_tags, num_tags, rng),
            ..CrfParams::zeros(num_tags)
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Matrix) -> Result<(), CrfError> {
        if emissions.cols() != self.num_tags() {
            return Err(CrfError::Width {
                got: emissions.cols(),
                num_tags: self.num_tags(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub emissions: Matrix,
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Mask transitions that break BIO2 well-formedness. Only applies when the
    /// CRF runs over the full 9-tag set.
    pub constrained: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { constrained: true }
    }
}

impl DecodeOptions {
    pub fn unconstrained() -> Self {
        DecodeOptions { constrained: false }
    }
}

pub fn sequence_score(emissions: &Matrix, tags: &[usize], params: &CrfParams) -> Result<f64, CrfError> {
    params.check(emissions)?;
    let k = params.num_tags();
    if tags.len() != emissions.rows() {
        return Err(CrfError::Length {
            expected: emissions.rows(),
            got: tags.len(),
        });
    }
    if let Some(&index) = tags.iter().find(|&&t| t >= k) {
        return Err(CrfError::TagIndex { index, num_tags: k });
    }
    let Some((&first, &last)) = tags.first().zip(tags.last()) else {
        return Ok(0.0);
    };
    let mut score = params.start[first] + params.stop[last];
    for (t, &tag) in tags.iter().enumerate() {
        score += emissions.get(t, tag);
    }
    for pair in tags.windows(2) {
        score += params.transitions.get(pair[0], pair[1]);
    }
    Ok(score)
}

/// Forward log-messages: `alpha[t][j]` is the log score mass of all prefixes
/// ending in tag `j` at position `t`, emission included.
fn forward(emissions: &Matrix, params: &CrfParams) -> Matrix {
    let (len, k) = (emissions.rows(), params.num_tags());
    let mut alpha = Matrix::zeros(len, k);
    if len == 0 {
        return alpha;
    }
    for j in 0..k {
        alpha.set(0, j, params.start[j] + emissions.get(0, j));
    }
    let mut scratch = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = alpha.get(t - 1, i) + params.transitions.get(i, j);
            }
            alpha.set(t, j, emissions.get(t, j) + log_sum_exp(&scratch));
        }
    }
    alpha
}

/// Backward log-messages: `beta[t][i]` is the log score mass of all suffixes
/// after position `t` given tag `i` there, stop score included.
fn backward(emissions: &Matrix, params: &CrfParams) -> Matrix {
    let (len, k) = (emissions.rows(), params.num_tags());
    let mut beta = Matrix::zeros(len, k);
    if len == 0 {
        return beta;
    }
    beta.row_mut(len - 1).copy_from_slice(&params.stop);
    let mut scratch = vec![0.0; k];
    for t in (0..len - 1).rev() {
        for i in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = params.transitions.get(i, j) + emissions.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, log_sum_exp(&scratch));
        }
    }
    beta
}

fn log_z_from_alpha(alpha: &Matrix, params: &CrfParams) -> f64 {
    let last = alpha.rows() - 1;
    let terms: Vec<f64> = (0..params.num_tags())
        .map(|j| alpha.get(last, j) + params.stop[j])
        .collect();
    log_sum_exp(&terms)
}

/// `ln Σ_y exp(score(y))` by the forward algorithm. Zero for an empty sequence.
pub fn log_partition(emissions: &Matrix, params: &CrfParams) -> f64 {
    debug_assert_eq!(emissions.cols(), params.num_tags());
    if emissions.rows() == 0 {
        return 0.0;
    }
    log_z_from_alpha(&forward(emissions, params), params)
}

/// Per-position tag marginals by forward-backward.
pub fn marginals(emissions: &Matrix, params: &CrfParams) -> Matrix {
    debug_assert_eq!(emissions.cols(), params.num_tags());
    let (len, k) = (emissions.rows(), params.num_tags());
    if len == 0 {
        return Matrix::zeros(0, k);
    }
    let alpha = forward(emissions, params);
    let beta = backward(emissions, params);
    let log_z = log_z_from_alpha(&alpha, params);
    let mut out = Matrix::zeros(len, k);
    for t in 0..len {
        for j in 0..k {
            out.set(t, j, (alpha.get(t, j) + beta.get(t, j) - log_z).exp());
        }
    }
    out
}

/// Negative log-likelihood of `gold` and its gradient with respect to the
/// emissions and every CRF parameter.
pub fn nll_and_gradient(
    emissions: &Matrix,
    gold: &[usize],
    params: &CrfParams,
) -> Result<(f64, CrfGradient), CrfError> {
    let gold_score = sequence_score(emissions, gold, params)?;
    let (len, k) = (emissions.rows(), params.num_tags());
    let mut grad = CrfGradient {
        emissions: Matrix::zeros(len, k),
        transitions: Matrix::zeros(k, k),
        start: vec![0.0; k],
        stop: vec![0.0; k],
    };
    if len == 0 {
        return Ok((0.0, grad));
    }
    let alpha = forward(emissions, params);
    let beta = backward(emissions, params);
    let log_z = log_z_from_alpha(&alpha, params);

    for t in 0..len {
        for j in 0..k {
            grad.emissions.set(t, j, (alpha.get(t, j) + beta.get(t, j) - log_z).exp());
        }
    }
    for t in 0..len - 1 {
        for i in 0..k {
            for j in 0..k {
                let log_p = alpha.get(t, i)
                    + params.transitions.get(i, j)
                    + emissions.get(t + 1, j)
                    + beta.get(t + 1, j)
                    - log_z;
                grad.transitions.add_at(i, j, log_p.exp());
            }
        }
    }
    grad.start.copy_from_slice(grad.emissions.row(0));
    grad.stop.copy_from_slice(grad.emissions.row(len - 1));

    for (t, &y) in gold.iter().enumerate() {
        grad.emissions.add_at(t, y, -1.0);
    }
    for pair in gold.windows(2) {
        grad.transitions.add_at(pair[0], pair[1], -1.0);
    }
    grad.start[gold[0]] -= 1.0;
    grad.stop[gold[len - 1]] -= 1.0;

    Ok(((log_z - gold_score).max(0.0), grad))
}

fn constraint_masks(k: usize, options: DecodeOptions) -> Option<(Vec<bool>, Vec<Vec<bool>>)> {
    if !options.constrained || k != NUM_TAGS {
        return None;
    }
    let tags = Tag::all();
    let start = tags.iter().map(|&t| transition_allowed(None, t)).collect();
    let pairs = tags
        .iter()
        .map(|&a| tags.iter().map(|&b| transition_allowed(Some(a), b)).collect())
        .collect();
    Some((start, pairs))
}

/// Highest-scoring tag sequence and its score.
///
/// Ties go to the smaller tag index, both for the final tag and at every
/// backpointer.
pub fn viterbi_decode(emissions: &Matrix, params: &CrfParams, options: DecodeOptions) -> (Vec<usize>, f64) {
    debug_assert_eq!(emissions.cols(), params.num_tags());
    let (len, k) = (emissions.rows(), params.num_tags());
    if len == 0 {
        return (Vec::new(), 0.0);
    }
    let masks = constraint_masks(k, options);
    let start_ok = |j: usize| masks.as_ref().is_none_or(|(s, _)| s[j]);
    let pair_ok = |i: usize, j: usize| masks.as_ref().is_none_or(|(_, p)| p[i][j]);

    let mut delta: Vec<f64> = (0..k)
        .map(|j| {
            if start_ok(j) {
                params.start[j] + emissions.get(0, j)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut backptr = vec![vec![0usize; k]; len];
    let mut next = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, &d) in delta.iter().enumerate() {
                if !pair_ok(i, j) {
                    continue;
                }
                let s = d + params.transitions.get(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            backptr[t][j] = arg;
            next[j] = best + emissions.get(t, j);
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &d) in delta.iter().enumerate() {
        let s = d + params.stop[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut path = vec![last; len];
    for t in (1..len).rev() {
        path[t - 1] = backptr[t][path[t]];
    }
    (path, best)
}
