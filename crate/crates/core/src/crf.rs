//! Linear-chain CRF over per-step emissions: sequence scores, the mixed
//! sequence score, exact partition via the forward algorithm, NLL (plus its
//! gradients w.r.t. emissions and transitions), and Viterbi decoding.
//!
//! Transition matrix A is C×C with A[i][j] the score of moving from tag i to
//! tag j. There are no start/stop boundary scores.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeqMixError};
use crate::lambda::LambdaTrajectory;
use crate::numkernel::{logsumexp, Matrix};

/// How the loss treats a mixed tag pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedCrfMode {
    /// logZ − mixed_sequence_score(y, y′, λ). Default reading.
    MixedScore,
    /// λ̄·NLL(y) + (1−λ̄)·NLL(y′) with λ̄ the trajectory mean.
    WeightedNll,
}

fn check_shapes(emissions: &[Vec<f64>], transitions: &Matrix) -> Result<usize> {
    if emissions.is_empty() {
        return Err(SeqMixError::Param("emissions must have at least one step".into()));
    }
    let c = transitions.rows();
    if transitions.cols() != c {
        return Err(SeqMixError::Shape("transition matrix must be square".into()));
    }
    if emissions.iter().any(|e| e.len() != c) {
        return Err(SeqMixError::Shape("emission width must equal tag count".into()));
    }
    Ok(c)
}

fn check_tags(tags: &[usize], t_len: usize, c: usize) -> Result<()> {
    if tags.len() != t_len {
        return Err(SeqMixError::Param(format!(
            "tag sequence length {} != {}",
            tags.len(),
            t_len
        )));
    }
    if let Some(bad) = tags.iter().find(|&&y| y >= c) {
        return Err(SeqMixError::Param(format!("tag index {bad} out of range {c}")));
    }
    Ok(())
}

/// Σ_t ŷ_{t,y_t} + Σ_t A_{y_t,y_{t+1}}.
pub fn sequence_score(emissions: &[Vec<f64>], transitions: &Matrix, tags: &[usize]) -> Result<f64> {
    let c = check_shapes(emissions, transitions)?;
    check_tags(tags, emissions.len(), c)?;
    let mut score = 0.0;
    for (e, &y) in emissions.iter().zip(tags) {
        score += e[y];
    }
    for w in tags.windows(2) {
        score += transitions.at(w[0], w[1]);
    }
    Ok(score)
}

/// The mixed sequence score for a tag pair (y, y′) under trajectory λ:
/// Σ_t λ_t ŷ_{t,y_t} + (1−λ_t) ŷ_{t,y′_t}
/// + Σ_t μ_t A_{y_t,y_{t+1}} + (1−μ_t) A_{y′_t,y′_{t+1}},  μ_t = (λ_t+λ_{t+1})/2.
pub fn mixed_sequence_score(
    emissions: &[Vec<f64>],
    transitions: &Matrix,
    tags: &[usize],
    tags_prime: &[usize],
    traj: &LambdaTrajectory,
) -> Result<f64> {
    let c = check_shapes(emissions, transitions)?;
    let t_len = emissions.len();
    check_tags(tags, t_len, c)?;
    check_tags(tags_prime, t_len, c)?;
    if traj.len() != t_len {
        return Err(SeqMixError::Param(format!(
            "trajectory length {} != sequence length {t_len}",
            traj.len()
        )));
    }
    let lam = &traj.values;
    let mut score = 0.0;
    for t in 0..t_len {
        score += lam[t] * emissions[t][tags[t]] + (1.0 - lam[t]) * emissions[t][tags_prime[t]];
    }
    for t in 0..t_len.saturating_sub(1) {
        let mu = 0.5 * (lam[t] + lam[t + 1]);
        score += mu * transitions.at(tags[t], tags[t + 1])
            + (1.0 - mu) * transitions.at(tags_prime[t], tags_prime[t + 1]);
    }
    Ok(score)
}

/// log Σ over all C^T paths of exp(sequence_score), by the forward algorithm
/// in O(T·C²).
pub fn log_partition(emissions: &[Vec<f64>], transitions: &Matrix) -> Result<f64> {
    let c = check_shapes(emissions, transitions)?;
    let mut fwd = emissions[0].clone();
    let mut scratch = vec![0.0; c];
    for e in &emissions[1..] {
        let mut next = vec![0.0; c];
        for (j, next_j) in next.iter_mut().enumerate() {
            for i in 0..c {
                scratch[i] = fwd[i] + transitions.at(i, j);
            }
            *next_j = e[j] + logsumexp(&scratch)?;
        }
        fwd = next;
    }
    logsumexp(&fwd)
}

/// Unary and pairwise tag marginals plus logZ, by forward-backward in log
/// space. `unary[t][c]` = P(y_t = c); `pairwise[t]` is C×C with
/// `pairwise[t][i][j]` = P(y_t = i, y_{t+1} = j).
pub fn marginals(
    emissions: &[Vec<f64>],
    transitions: &Matrix,
) -> Result<(Vec<Vec<f64>>, Vec<Matrix>, f64)> {
    let c = check_shapes(emissions, transitions)?;
    let t_len = emissions.len();
    let mut fwd = vec![vec![0.0; c]; t_len];
    fwd[0] = emissions[0].clone();
    let mut scratch = vec![0.0; c];
    for t in 1..t_len {
        for j in 0..c {
            for i in 0..c {
                scratch[i] = fwd[t - 1][i] + transitions.at(i, j);
            }
            fwd[t][j] = emissions[t][j] + logsumexp(&scratch)?;
        }
    }
    let log_z = logsumexp(&fwd[t_len - 1])?;
    let mut bwd = vec![vec![0.0; c]; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..c {
            for j in 0..c {
                scratch[j] = transitions.at(i, j) + emissions[t + 1][j] + bwd[t + 1][j];
            }
            bwd[t][i] = logsumexp(&scratch)?;
        }
    }
    let unary: Vec<Vec<f64>> = (0..t_len)
        .map(|t| (0..c).map(|k| (fwd[t][k] + bwd[t][k] - log_z).exp()).collect())
        .collect();
    let mut pairwise = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len.saturating_sub(1) {
        let mut p = Matrix::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                let lp = fwd[t][i]
                    + transitions.at(i, j)
                    + emissions[t + 1][j]
                    + bwd[t + 1][j]
                    - log_z;
                p.set(i, j, lp.exp());
            }
        }
        pairwise.push(p);
    }
    Ok((unary, pairwise, log_z))
}

/// Negative log-likelihood. Standard mode: logZ − score(y). Mixed mode per
/// `MixedCrfMode`.
pub fn crf_nll(
    emissions: &[Vec<f64>],
    transitions: &Matrix,
    tags: &[usize],
    mixed: Option<(&[usize], &LambdaTrajectory, MixedCrfMode)>,
) -> Result<f64> {
    let log_z = log_partition(emissions, transitions)?;
    match mixed {
        None => Ok(log_z - sequence_score(emissions, transitions, tags)?),
        Some((tags_prime, traj, MixedCrfMode::MixedScore)) => {
            Ok(log_z - mixed_sequence_score(emissions, transitions, tags, tags_prime, traj)?)
        }
        Some((tags_prime, traj, MixedCrfMode::WeightedNll)) => {
            let lbar = crate::lambda::empirical_mean(traj);
            let nll_a = log_z - sequence_score(emissions, transitions, tags)?;
            let nll_b = log_z - sequence_score(emissions, transitions, tags_prime)?;
            Ok(lbar * nll_a + (1.0 - lbar) * nll_b)
        }
    }
}

/// NLL plus exact gradients w.r.t. emissions (T×C) and transitions (C×C).
pub fn crf_nll_grad(
    emissions: &[Vec<f64>],
    transitions: &Matrix,
    tags: &[usize],
    mixed: Option<(&[usize], &LambdaTrajectory, MixedCrfMode)>,
) -> Result<(f64, Vec<Vec<f64>>, Matrix)> {
    let c = check_shapes(emissions, transitions)?;
    let t_len = emissions.len();
    check_tags(tags, t_len, c)?;
    let (unary, pairwise, log_z) = marginals(emissions, transitions)?;
    // d logZ = marginals; subtract the (mixed) target-score gradient
    let mut d_e = unary;
    let mut d_a = Matrix::zeros(c, c);
    for p in &pairwise {
        for i in 0..c {
            for j in 0..c {
                d_a.add_at(i, j, p.at(i, j));
            }
        }
    }
    let nll = match mixed {
        None => {
            for (t, &y) in tags.iter().enumerate() {
                d_e[t][y] -= 1.0;
            }
            for w in tags.windows(2) {
                d_a.add_at(w[0], w[1], -1.0);
            }
            log_z - sequence_score(emissions, transitions, tags)?
        }
        Some((tags_prime, traj, MixedCrfMode::MixedScore)) => {
            check_tags(tags_prime, t_len, c)?;
            let lam = &traj.values;
            for t in 0..t_len {
                d_e[t][tags[t]] -= lam[t];
                d_e[t][tags_prime[t]] -= 1.0 - lam[t];
            }
            for t in 0..t_len.saturating_sub(1) {
                let mu = 0.5 * (lam[t] + lam[t + 1]);
                d_a.add_at(tags[t], tags[t + 1], -mu);
                d_a.add_at(tags_prime[t], tags_prime[t + 1], -(1.0 - mu));
            }
            log_z - mixed_sequence_score(emissions, transitions, tags, tags_prime, traj)?
        }
        Some((tags_prime, traj, MixedCrfMode::WeightedNll)) => {
            check_tags(tags_prime, t_len, c)?;
            let lbar = crate::lambda::empirical_mean(traj);
            for t in 0..t_len {
                d_e[t][tags[t]] -= lbar;
                d_e[t][tags_prime[t]] -= 1.0 - lbar;
            }
            for t in 0..t_len.saturating_sub(1) {
                d_a.add_at(tags[t], tags[t + 1], -lbar);
                d_a.add_at(tags_prime[t], tags_prime[t + 1], -(1.0 - lbar));
            }
            let nll_a = log_z - sequence_score(emissions, transitions, tags)?;
            let nll_b = log_z - sequence_score(emissions, transitions, tags_prime)?;
            lbar * nll_a + (1.0 - lbar) * nll_b
        }
    };
    Ok((nll, d_e, d_a))
}

/// Max-plus decoding. Ties break toward the lower tag index.
pub fn viterbi(emissions: &[Vec<f64>], transitions: &Matrix) -> Result<(Vec<usize>, f64)> {
    let c = check_shapes(emissions, transitions)?;
    let t_len = emissions.len();
    let mut score = emissions[0].clone();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len - 1);
    for e in &emissions[1..] {
        let mut next = vec![f64::NEG_INFINITY; c];
        let mut arg = vec![0usize; c];
        for (j, (next_j, arg_j)) in next.iter_mut().zip(arg.iter_mut()).enumerate() {
            for i in 0..c {
                let cand = score[i] + transitions.at(i, j);
                if cand > *next_j {
                    *next_j = cand;
                    *arg_j = i;
                }
            }
            *next_j += e[j];
        }
        score = next;
        back.push(arg);
    }
    let mut best = 0;
    for (k, s) in score.iter().enumerate() {
        if *s > score[best] {
            best = k;
        }
    }
    let best_score = score[best];
    let mut path = vec![best; t_len];
    for t in (0..t_len - 1).rev() {
        path[t] = back[t][path[t + 1]];
    }
    Ok((path, best_score))
}
