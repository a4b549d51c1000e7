//! The three Sequence Mixup training steps and the pair-sampling policy.
//!
//! Every step reduces exactly to standard training when λ_t ≡ 1 (or when a
//! sample is paired with itself); the unit tests pin those identities to
//! 1e-12 and check every gradient against central finite differences.

use crate::crf::{crf_nll_grad, MixedCrfMode};
use crate::error::{Result, SeqMixError};
use crate::lambda::{mix, sample_trajectory, LambdaConfig, LambdaTrajectory};
use crate::numkernel::Rng;
use crate::recurrent::{
    cell_backward, cell_forward, embed_features, encode, encode_backward, one_hot, output_forward,
    CellState, Features, Gradients, Labels, Method, Model, Sample,
};

/// Loss head on top of the hidden states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Softmax,
    Crf(MixedCrfMode),
}

impl Default for Head {
    fn default() -> Self {
        Head::Softmax
    }
}

/// Two samples to be mixed under one λ-trajectory. The trajectory length
/// equals the primary sequence length; past the end of the shorter secondary
/// sequence λ_t is forced to 1 so the primary trains unmixed there.
#[derive(Clone, Debug)]
pub struct MixedPair {
    pub primary: Sample,
    pub secondary: Sample,
    pub traj: LambdaTrajectory,
}

impl MixedPair {
    pub fn new(primary: Sample, secondary: Sample, traj: LambdaTrajectory) -> Result<Self> {
        if traj.len() != primary.len() {
            return Err(SeqMixError::Param(format!(
                "trajectory length {} != primary length {}",
                traj.len(),
                primary.len()
            )));
        }
        Ok(MixedPair { primary, secondary, traj })
    }

    /// Overlap length: steps where actual mixing happens.
    fn overlap(&self) -> usize {
        self.primary.len().min(self.secondary.len())
    }

    /// Per-step coefficients over the full primary length, with λ_t = 1 past
    /// the secondary's end.
    pub fn effective_lambdas(&self) -> Vec<f64> {
        let overlap = self.overlap();
        self.traj
            .values
            .iter()
            .enumerate()
            .map(|(t, &v)| if t < overlap { v } else { 1.0 })
            .collect()
    }
}

/// Pair each batch member with a uniformly permuted partner; one fresh
/// trajectory per pair.
pub fn make_pairs(batch: &[Sample], cfg: &LambdaConfig, rng: &mut Rng) -> Result<Vec<MixedPair>> {
    if batch.is_empty() {
        return Err(SeqMixError::Param("empty batch".into()));
    }
    let perm = rng.permutation(batch.len());
    batch
        .iter()
        .enumerate()
        .map(|(i, primary)| {
            let secondary = batch[perm[i]].clone();
            let traj_cfg = LambdaConfig { horizon: primary.len(), ..*cfg };
            let traj = sample_trajectory(&traj_cfg, rng)?;
            MixedPair::new(primary.clone(), secondary, traj)
        })
        .collect()
}

enum HeadTarget<'a> {
    SoftTags(Vec<Vec<f64>>),
    SoftClassFinal(Vec<f64>),
    Crf {
        tags: &'a [usize],
        mixed: Option<(Vec<usize>, LambdaTrajectory, MixedCrfMode)>,
    },
}

/// Apply the output layer (and CRF, if any) to a hidden sequence, accumulate
/// head-parameter gradients, and return (loss, dL/dh_t per step).
fn head_backward(
    model: &Model,
    hidden: &[Vec<f64>],
    target: &HeadTarget,
    grads: &mut Gradients,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let t_len = hidden.len();
    let mut d_hidden = vec![vec![0.0; model.hidden_out()]; t_len];
    match target {
        HeadTarget::SoftTags(targets) => {
            if targets.len() != t_len {
                return Err(SeqMixError::Shape("targets/hidden length mismatch".into()));
            }
            let mut loss = 0.0;
            for t in 0..t_len {
                let (_, probs) = output_forward(&model.output, &hidden[t]);
                let q = &targets[t];
                loss -= q
                    .iter()
                    .zip(&probs)
                    .map(|(qv, pv)| if *qv > 0.0 { qv * pv.max(1e-300).ln() } else { 0.0 })
                    .sum::<f64>();
                let d_logits: Vec<f64> =
                    probs.iter().zip(q).map(|(p, qv)| (p - qv) / t_len as f64).collect();
                grads.output.w.add_outer(&hidden[t], &d_logits, 1.0);
                for (b, d) in grads.output.b.iter_mut().zip(&d_logits) {
                    *b += d;
                }
                d_hidden[t] = model.output.w.matvec(&d_logits);
            }
            Ok((loss / t_len as f64, d_hidden))
        }
        HeadTarget::SoftClassFinal(q) => {
            let t = t_len - 1;
            let (_, probs) = output_forward(&model.output, &hidden[t]);
            let loss = -q
                .iter()
                .zip(&probs)
                .map(|(qv, pv)| if *qv > 0.0 { qv * pv.max(1e-300).ln() } else { 0.0 })
                .sum::<f64>();
            let d_logits: Vec<f64> = probs.iter().zip(q).map(|(p, qv)| p - qv).collect();
            grads.output.w.add_outer(&hidden[t], &d_logits, 1.0);
            for (b, d) in grads.output.b.iter_mut().zip(&d_logits) {
                *b += d;
            }
            d_hidden[t] = model.output.w.matvec(&d_logits);
            Ok((loss, d_hidden))
        }
        HeadTarget::Crf { tags, mixed } => {
            let transitions = model
                .crf
                .as_ref()
                .ok_or_else(|| SeqMixError::Param("CRF head requires a transition matrix".into()))?;
            let emissions: Vec<Vec<f64>> =
                hidden.iter().map(|h| output_forward(&model.output, h).0).collect();
            let mixed_ref = mixed
                .as_ref()
                .map(|(yp, traj, mode)| (yp.as_slice(), traj, *mode));
            let (nll, d_e, d_a) = crf_nll_grad(&emissions, transitions, tags, mixed_ref)?;
            let crf_grads = grads.crf.as_mut().expect("grads mirror model layout");
            for i in 0..d_a.rows() {
                for j in 0..d_a.cols() {
                    crf_grads.add_at(i, j, d_a.at(i, j));
                }
            }
            for t in 0..t_len {
                grads.output.w.add_outer(&hidden[t], &d_e[t], 1.0);
                for (b, d) in grads.output.b.iter_mut().zip(&d_e[t]) {
                    *b += d;
                }
                d_hidden[t] = model.output.w.matvec(&d_e[t]);
            }
            Ok((nll, d_hidden))
        }
    }
}

fn mixed_tag_targets(pair: &MixedPair, lambdas: &[f64], classes: usize) -> Result<Vec<Vec<f64>>> {
    let y = pair.primary.tags()?;
    let yp = pair.secondary.tags()?;
    let overlap = pair.overlap();
    Ok((0..pair.primary.len())
        .map(|t| {
            if t < overlap {
                mix(&one_hot(y[t], classes), &one_hot(yp[t], classes), lambdas[t]).unwrap()
            } else {
                one_hot(y[t], classes)
            }
        })
        .collect())
}

/// Pad y′ out to the primary length (λ = 1 there makes the padding inert) and
/// package the effective coefficients as a trajectory for the CRF score.
fn crf_mixed_target(
    pair: &MixedPair,
    lambdas: &[f64],
    mode: MixedCrfMode,
) -> Result<(Vec<usize>, LambdaTrajectory)> {
    let y = pair.primary.tags()?;
    let yp = pair.secondary.tags()?;
    let overlap = pair.overlap();
    let mut padded: Vec<usize> = yp[..overlap].to_vec();
    padded.extend_from_slice(&y[overlap..]);
    let _ = mode;
    let traj = LambdaTrajectory { values: lambdas.to_vec(), config: pair.traj.config };
    Ok((padded, traj))
}

fn tagging_target<'a>(pair: &'a MixedPair, lambdas: &[f64], model: &Model, head: Head) -> Result<HeadTarget<'a>> {
    match head {
        Head::Softmax => Ok(HeadTarget::SoftTags(mixed_tag_targets(pair, lambdas, model.classes())?)),
        Head::Crf(mode) => {
            let (padded, traj) = crf_mixed_target(pair, lambdas, mode)?;
            Ok(HeadTarget::Crf { tags: pair.primary.tags()?, mixed: Some((padded, traj, mode)) })
        }
    }
}

fn finalize_embeddings(
    grads: &mut Gradients,
    features: &Features,
    d_inputs: &[Vec<f64>],
    scale: Option<&[f64]>,
) {
    if let Features::Tokens(ids) = features {
        crate::recurrent::embed_backward(grads, &ids[..d_inputs.len()], d_inputs, scale);
    }
}

/// Standard (non-mixup) step: per-step soft-label cross-entropy for tagging,
/// final-step cross-entropy for classification, CRF NLL when selected.
pub fn step_standard(model: &Model, sample: &Sample, head: Head) -> Result<(f64, Gradients)> {
    if sample.is_empty() {
        return Err(SeqMixError::Param("empty sequence".into()));
    }
    let mut grads = model.zero_grads();
    let inputs = embed_features(model, &sample.features)?;
    let trace = encode(model, &inputs)?;
    let target = match (&sample.labels, head) {
        (Labels::Tags(tags), Head::Softmax) => HeadTarget::SoftTags(
            tags.iter().map(|&y| one_hot(y, model.classes())).collect(),
        ),
        (Labels::Tags(tags), Head::Crf(_)) => HeadTarget::Crf { tags, mixed: None },
        (Labels::Class(c), Head::Softmax) => {
            HeadTarget::SoftClassFinal(one_hot(*c, model.classes()))
        }
        (Labels::Class(_), Head::Crf(_)) => {
            return Err(SeqMixError::Param("CRF head needs per-step tags".into()))
        }
    };
    let (loss, d_hidden) = head_backward(model, &trace.hidden, &target, &mut grads)?;
    let d_inputs = encode_backward(model, &trace, &d_hidden, &mut grads);
    finalize_embeddings(&mut grads, &sample.features, &d_inputs, None);
    Ok((loss, grads))
}

/// Sequence Input Mixup: mix the inputs (embedded vectors for token
/// features) and the per-step labels, then run a standard pass.
pub fn step_input_mixup(model: &Model, pair: &MixedPair, head: Head) -> Result<(f64, Gradients)> {
    let lambdas = pair.effective_lambdas();
    let overlap = pair.overlap();
    let primary_in = embed_features(model, &pair.primary.features)?;
    let secondary_in = embed_features(model, &pair.secondary.features)?;
    let mixed_in: Vec<Vec<f64>> = primary_in
        .iter()
        .enumerate()
        .map(|(t, x)| {
            if t < overlap {
                mix(x, &secondary_in[t], lambdas[t])
            } else {
                Ok(x.clone())
            }
        })
        .collect::<Result<_>>()?;
    let mut grads = model.zero_grads();
    let trace = encode(model, &mixed_in)?;
    let target = tagging_target(pair, &lambdas, model, head)?;
    let (loss, d_hidden) = head_backward(model, &trace.hidden, &target, &mut grads)?;
    let d_inputs = encode_backward(model, &trace, &d_hidden, &mut grads);
    finalize_embeddings(&mut grads, &pair.primary.features, &d_inputs, Some(&lambdas));
    let inv: Vec<f64> = lambdas[..overlap].iter().map(|l| 1.0 - l).collect();
    finalize_embeddings(&mut grads, &pair.secondary.features, &d_inputs[..overlap], Some(&inv));
    Ok((loss, grads))
}

/// Pre-Output Mixup: two independent hidden streams; their states are mixed
/// immediately before the output layer. Gradients flow through both streams,
/// scaled by λ_t and 1−λ_t.
pub fn step_pom(model: &Model, pair: &MixedPair, head: Head) -> Result<(f64, Gradients)> {
    let lambdas = pair.effective_lambdas();
    let overlap = pair.overlap();
    let primary_in = embed_features(model, &pair.primary.features)?;
    let secondary_in_full = embed_features(model, &pair.secondary.features)?;
    let secondary_in = &secondary_in_full[..overlap];
    let mut grads = model.zero_grads();
    let trace_p = encode(model, &primary_in)?;
    let trace_s = if overlap > 0 { Some(encode(model, secondary_in)?) } else { None };
    let mixed_hidden: Vec<Vec<f64>> = trace_p
        .hidden
        .iter()
        .enumerate()
        .map(|(t, h)| {
            if t < overlap {
                mix(h, &trace_s.as_ref().unwrap().hidden[t], lambdas[t])
            } else {
                Ok(h.clone())
            }
        })
        .collect::<Result<_>>()?;
    let target = tagging_target(pair, &lambdas, model, head)?;
    let (loss, d_mixed) = head_backward(model, &mixed_hidden, &target, &mut grads)?;
    let d_primary: Vec<Vec<f64>> = d_mixed
        .iter()
        .enumerate()
        .map(|(t, d)| {
            if t < overlap {
                d.iter().map(|v| lambdas[t] * v).collect()
            } else {
                d.clone()
            }
        })
        .collect();
    let d_in_p = encode_backward(model, &trace_p, &d_primary, &mut grads);
    finalize_embeddings(&mut grads, &pair.primary.features, &d_in_p, None);
    if let Some(trace_s) = &trace_s {
        let d_secondary: Vec<Vec<f64>> = d_mixed[..overlap]
            .iter()
            .enumerate()
            .map(|(t, d)| d.iter().map(|v| (1.0 - lambdas[t]) * v).collect())
            .collect();
        let d_in_s = encode_backward(model, trace_s, &d_secondary, &mut grads);
        finalize_embeddings(&mut grads, &pair.secondary.features, &d_in_s, None);
    }
    Ok((loss, grads))
}

/// Through-Time Mixup: one shared hidden stream,
/// h^mix_t = λ_t f(x_t, h^mix_{t−1}) + (1−λ_t) f(x′_t, h^mix_{t−1}).
/// The LSTM cell state is mixed the same way. Unidirectional encoders only.
pub fn step_ttm(model: &Model, pair: &MixedPair, head: Head) -> Result<(f64, Gradients)> {
    if model.cell_bwd.is_some() {
        return Err(SeqMixError::Param(
            "through-time mixup is defined for unidirectional encoders only".into(),
        ));
    }
    let lambdas = pair.effective_lambdas();
    let overlap = pair.overlap();
    let primary_in = embed_features(model, &pair.primary.features)?;
    let secondary_in = embed_features(model, &pair.secondary.features)?;
    let t_len = primary_in.len();
    let mut grads = model.zero_grads();

    let mut state = CellState::zero(&model.cell);
    let mut caches_p = Vec::with_capacity(t_len);
    let mut caches_s = Vec::with_capacity(overlap);
    let mut hidden = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (st_p, cache_p) = cell_forward(&model.cell, &primary_in[t], &state)?;
        caches_p.push(cache_p);
        state = if t < overlap {
            let (st_s, cache_s) = cell_forward(&model.cell, &secondary_in[t], &state)?;
            caches_s.push(cache_s);
            let lam = lambdas[t];
            CellState {
                h: mix(&st_p.h, &st_s.h, lam)?,
                c: match (&st_p.c, &st_s.c) {
                    (Some(a), Some(b)) => Some(mix(a, b, lam)?),
                    _ => None,
                },
            }
        } else {
            st_p
        };
        hidden.push(state.h.clone());
    }

    let target = tagging_target(pair, &lambdas, model, head)?;
    let (loss, d_hidden) = head_backward(model, &hidden, &target, &mut grads)?;

    let mut d_in_p = vec![vec![0.0; model.cell.input_dim]; t_len];
    let mut d_in_s = vec![vec![0.0; model.cell.input_dim]; overlap];
    let mut carry = CellState::zero(&model.cell).zeros_like();
    for t in (0..t_len).rev() {
        let mut d_state = carry.clone();
        for (a, b) in d_state.h.iter_mut().zip(&d_hidden[t]) {
            *a += b;
        }
        if t < overlap {
            let lam = lambdas[t];
            let scale = |v: &CellState, s: f64| CellState {
                h: v.h.iter().map(|x| s * x).collect(),
                c: v.c.as_ref().map(|c| c.iter().map(|x| s * x).collect()),
            };
            let (dx_p, prev_p) =
                cell_backward(&model.cell, &caches_p[t], &scale(&d_state, lam), &mut grads.cell);
            let (dx_s, prev_s) = cell_backward(
                &model.cell,
                &caches_s[t],
                &scale(&d_state, 1.0 - lam),
                &mut grads.cell,
            );
            d_in_p[t] = dx_p;
            d_in_s[t] = dx_s;
            carry = CellState {
                h: prev_p.h.iter().zip(&prev_s.h).map(|(a, b)| a + b).collect(),
                c: match (&prev_p.c, &prev_s.c) {
                    (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x + y).collect()),
                    _ => None,
                },
            };
        } else {
            let (dx_p, prev_p) = cell_backward(&model.cell, &caches_p[t], &d_state, &mut grads.cell);
            d_in_p[t] = dx_p;
            carry = prev_p;
        }
    }
    finalize_embeddings(&mut grads, &pair.primary.features, &d_in_p, None);
    finalize_embeddings(&mut grads, &pair.secondary.features, &d_in_s, None);
    Ok((loss, grads))
}

/// Sequence classification step: method-specific forward, one cross-entropy
/// at the final timestep against y^mix(λ̄).
pub fn step_classification(model: &Model, pair: &MixedPair, method: Method) -> Result<(f64, Gradients)> {
    let y = pair.primary.class()?;
    if method == Method::Standard {
        return step_standard(model, &pair.primary, Head::Softmax);
    }
    let yp = pair.secondary.class()?;
    let lambdas = pair.effective_lambdas();
    let lbar = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let target = mix(&one_hot(y, model.classes()), &one_hot(yp, model.classes()), lbar)?;
    let overlap = pair.overlap();
    let mut grads = model.zero_grads();
    match method {
        Method::Standard => unreachable!(),
        Method::InputMixup => {
            let primary_in = embed_features(model, &pair.primary.features)?;
            let secondary_in = embed_features(model, &pair.secondary.features)?;
            let mixed_in: Vec<Vec<f64>> = primary_in
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    if t < overlap {
                        mix(x, &secondary_in[t], lambdas[t])
                    } else {
                        Ok(x.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let trace = encode(model, &mixed_in)?;
            let (loss, d_hidden) =
                head_backward(model, &trace.hidden, &HeadTarget::SoftClassFinal(target), &mut grads)?;
            let d_inputs = encode_backward(model, &trace, &d_hidden, &mut grads);
            finalize_embeddings(&mut grads, &pair.primary.features, &d_inputs, Some(&lambdas));
            let inv: Vec<f64> = lambdas[..overlap].iter().map(|l| 1.0 - l).collect();
            finalize_embeddings(&mut grads, &pair.secondary.features, &d_inputs[..overlap], Some(&inv));
            Ok((loss, grads))
        }
        Method::Pom => {
            let primary_in = embed_features(model, &pair.primary.features)?;
            let secondary_in_full = embed_features(model, &pair.secondary.features)?;
            let trace_p = encode(model, &primary_in)?;
            let trace_s =
                if overlap > 0 { Some(encode(model, &secondary_in_full[..overlap])?) } else { None };
            let mixed_hidden: Vec<Vec<f64>> = trace_p
                .hidden
                .iter()
                .enumerate()
                .map(|(t, h)| {
                    if t < overlap {
                        mix(h, &trace_s.as_ref().unwrap().hidden[t], lambdas[t])
                    } else {
                        Ok(h.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let (loss, d_mixed) =
                head_backward(model, &mixed_hidden, &HeadTarget::SoftClassFinal(target), &mut grads)?;
            let d_primary: Vec<Vec<f64>> = d_mixed
                .iter()
                .enumerate()
                .map(|(t, d)| {
                    if t < overlap {
                        d.iter().map(|v| lambdas[t] * v).collect()
                    } else {
                        d.clone()
                    }
                })
                .collect();
            let d_in_p = encode_backward(model, &trace_p, &d_primary, &mut grads);
            finalize_embeddings(&mut grads, &pair.primary.features, &d_in_p, None);
            if let Some(trace_s) = &trace_s {
                let d_secondary: Vec<Vec<f64>> = d_mixed[..overlap]
                    .iter()
                    .enumerate()
                    .map(|(t, d)| d.iter().map(|v| (1.0 - lambdas[t]) * v).collect())
                    .collect();
                let d_in_s = encode_backward(model, trace_s, &d_secondary, &mut grads);
                finalize_embeddings(&mut grads, &pair.secondary.features, &d_in_s, None);
            }
            Ok((loss, grads))
        }
        Method::Ttm => {
            // reuse the tagging TTM machinery by swapping in a classification
            // head: run the shared-state forward, then the final-step CE
            step_ttm_classification(model, pair, &lambdas, &target, &mut grads)
        }
    }
}

fn step_ttm_classification(
    model: &Model,
    pair: &MixedPair,
    lambdas: &[f64],
    target: &[f64],
    grads: &mut Gradients,
) -> Result<(f64, Gradients)> {
    if model.cell_bwd.is_some() {
        return Err(SeqMixError::Param(
            "through-time mixup is defined for unidirectional encoders only".into(),
        ));
    }
    let overlap = pair.overlap();
    let primary_in = embed_features(model, &pair.primary.features)?;
    let secondary_in = embed_features(model, &pair.secondary.features)?;
    let t_len = primary_in.len();
    let mut state = CellState::zero(&model.cell);
    let mut caches_p = Vec::with_capacity(t_len);
    let mut caches_s = Vec::with_capacity(overlap);
    let mut hidden = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (st_p, cache_p) = cell_forward(&model.cell, &primary_in[t], &state)?;
        caches_p.push(cache_p);
        state = if t < overlap {
            let (st_s, cache_s) = cell_forward(&model.cell, &secondary_in[t], &state)?;
            caches_s.push(cache_s);
            let lam = lambdas[t];
            CellState {
                h: mix(&st_p.h, &st_s.h, lam)?,
                c: match (&st_p.c, &st_s.c) {
                    (Some(a), Some(b)) => Some(mix(a, b, lam)?),
                    _ => None,
                },
            }
        } else {
            st_p
        };
        hidden.push(state.h.clone());
    }
    let (loss, d_hidden) =
        head_backward(model, &hidden, &HeadTarget::SoftClassFinal(target.to_vec()), grads)?;
    let mut d_in_p = vec![vec![0.0; model.cell.input_dim]; t_len];
    let mut d_in_s = vec![vec![0.0; model.cell.input_dim]; overlap];
    let mut carry = CellState::zero(&model.cell).zeros_like();
    for t in (0..t_len).rev() {
        let mut d_state = carry.clone();
        for (a, b) in d_state.h.iter_mut().zip(&d_hidden[t]) {
            *a += b;
        }
        if t < overlap {
            let lam = lambdas[t];
            let scale = |v: &CellState, s: f64| CellState {
                h: v.h.iter().map(|x| s * x).collect(),
                c: v.c.as_ref().map(|c| c.iter().map(|x| s * x).collect()),
            };
            let (dx_p, prev_p) =
                cell_backward(&model.cell, &caches_p[t], &scale(&d_state, lam), &mut grads.cell);
            let (dx_s, prev_s) = cell_backward(
                &model.cell,
                &caches_s[t],
                &scale(&d_state, 1.0 - lam),
                &mut grads.cell,
            );
            d_in_p[t] = dx_p;
            d_in_s[t] = dx_s;
            carry = CellState {
                h: prev_p.h.iter().zip(&prev_s.h).map(|(a, b)| a + b).collect(),
                c: match (&prev_p.c, &prev_s.c) {
                    (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| x + y).collect()),
                    _ => None,
                },
            };
        } else {
            let (dx_p, prev_p) = cell_backward(&model.cell, &caches_p[t], &d_state, &mut grads.cell);
            d_in_p[t] = dx_p;
            carry = prev_p;
        }
    }
    finalize_embeddings(grads, &pair.primary.features, &d_in_p, None);
    finalize_embeddings(grads, &pair.secondary.features, &d_in_s, None);
    Ok((loss, grads.clone()))
}

/// Dispatch one training step for any method/task/head combination.
pub fn train_step(model: &Model, pair: &MixedPair, method: Method, head: Head) -> Result<(f64, Gradients)> {
    match &pair.primary.labels {
        Labels::Class(_) => step_classification(model, pair, method),
        Labels::Tags(_) => match method {
            Method::Standard => step_standard(model, &pair.primary, head),
            Method::InputMixup => step_input_mixup(model, pair, head),
            Method::Pom => step_pom(model, pair, head),
            Method::Ttm => step_ttm(model, pair, head),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_diff_grad, Matrix, Rng};
    use crate::recurrent::{CellKind, ModelInit};

    fn random_model(kind: CellKind, d: usize, h: usize, c: usize, crf: bool, seed: u64) -> Model {
        let mut rng = Rng::new(seed);
        let mut model = Model::init(
            &ModelInit {
                cell: kind,
                input_dim: d,
                hidden: h,
                classes: c,
                vocab: None,
                bidirectional: false,
                crf,
            },
            &mut rng,
        );
        let flat: Vec<f64> = model.to_flat().iter().map(|_| rng.normal() * 0.4).collect();
        model.set_flat(&flat);
        model
    }

    fn random_tag_sample(d: usize, t: usize, c: usize, rng: &mut Rng) -> Sample {
        Sample {
            features: Features::Dense(
                (0..t).map(|_| (0..d).map(|_| rng.normal()).collect()).collect(),
            ),
            labels: Labels::Tags((0..t).map(|_| rng.uniform_usize(c)).collect()),
        }
    }

    fn random_traj(t: usize, rng: &mut Rng) -> LambdaTrajectory {
        LambdaTrajectory {
            values: (0..t).map(|_| rng.uniform()).collect(),
            ..LambdaTrajectory::constant(0.0, t)
        }
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
        }
    }

    fn step_by_method(model: &Model, pair: &MixedPair, m: Method, head: Head) -> (f64, Gradients) {
        train_step(model, pair, m, head).unwrap()
    }

    #[test]
    fn identity_reductions_lambda_one_and_zero() {
        let mut rng = Rng::new(50);
        for head in [Head::Softmax, Head::Crf(MixedCrfMode::MixedScore)] {
            let model = random_model(CellKind::Gru, 3, 4, 3, matches!(head, Head::Crf(_)), 51);
            let a = random_tag_sample(3, 5, 3, &mut rng);
            let b = random_tag_sample(3, 5, 3, &mut rng);
            let (loss_a, grads_a) = step_standard(&model, &a, head).unwrap();
            let (loss_b, grads_b) = step_standard(&model, &b, head).unwrap();
            for method in [Method::InputMixup, Method::Pom, Method::Ttm] {
                let ones =
                    MixedPair::new(a.clone(), b.clone(), LambdaTrajectory::constant(1.0, 5)).unwrap();
                let (l1, g1) = step_by_method(&model, &ones, method, head);
                assert!((l1 - loss_a).abs() < 1e-12, "{method:?} lambda=1 loss");
                assert_close(&g1.to_flat(), &grads_a.to_flat(), 1e-12, "lambda=1 grads");
                let zeros =
                    MixedPair::new(a.clone(), b.clone(), LambdaTrajectory::constant(0.0, 5)).unwrap();
                let (l0, g0) = step_by_method(&model, &zeros, method, head);
                assert!((l0 - loss_b).abs() < 1e-12, "{method:?} lambda=0 loss");
                assert_close(&g0.to_flat(), &grads_b.to_flat(), 1e-12, "lambda=0 grads");
            }
        }
    }

    #[test]
    fn self_pair_reduces_to_standard() {
        let mut rng = Rng::new(60);
        let model = random_model(CellKind::Lstm, 2, 3, 3, false, 61);
        let a = random_tag_sample(2, 4, 3, &mut rng);
        let (loss_std, grads_std) = step_standard(&model, &a, Head::Softmax).unwrap();
        let traj = random_traj(4, &mut rng);
        for method in [Method::InputMixup, Method::Pom, Method::Ttm] {
            let pair = MixedPair::new(a.clone(), a.clone(), traj.clone()).unwrap();
            let (l, g) = step_by_method(&model, &pair, method, Head::Softmax);
            assert!((l - loss_std).abs() < 1e-12, "{method:?}");
            assert_close(&g.to_flat(), &grads_std.to_flat(), 1e-11, "self-pair grads");
        }
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences_all_methods() {
        let mut rng = Rng::new(70);
        for (ki, kind) in [CellKind::Rnn, CellKind::Gru, CellKind::Lstm].iter().enumerate() {
            for head in [Head::Softmax, Head::Crf(MixedCrfMode::MixedScore)] {
                let model =
                    random_model(*kind, 3, 4, 3, matches!(head, Head::Crf(_)), 71 + ki as u64);
                let a = random_tag_sample(3, 4, 3, &mut rng);
                let b = random_tag_sample(3, 4, 3, &mut rng);
                let traj = random_traj(4, &mut rng);
                let pair = MixedPair::new(a, b, traj).unwrap();
                for method in [Method::Standard, Method::InputMixup, Method::Pom, Method::Ttm] {
                    let (_, grads) = step_by_method(&model, &pair, method, head);
                    let theta = model.to_flat();
                    let numeric = finite_diff_grad(
                        |p| {
                            let mut m = model.clone();
                            m.set_flat(p);
                            train_step(&m, &pair, method, head).unwrap().0
                        },
                        &theta,
                        1e-5,
                    );
                    let err = max_rel_err(&grads.to_flat(), &numeric);
                    assert!(err < 1e-4, "{kind:?} {method:?} {head:?}: rel err {err}");
                }
            }
        }
    }

    #[test]
    fn classification_step_gradcheck() {
        let mut rng = Rng::new(80);
        let model = random_model(CellKind::Rnn, 1, 4, 2, false, 81);
        let mk = |rng: &mut Rng| Sample {
            features: Features::Dense(vec![vec![rng.normal()], vec![rng.normal()]]),
            labels: Labels::Class(rng.uniform_usize(2)),
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let traj = random_traj(2, &mut rng);
        let pair = MixedPair::new(a, b, traj).unwrap();
        for method in [Method::Standard, Method::InputMixup, Method::Pom, Method::Ttm] {
            let (_, grads) = step_classification(&model, &pair, method).unwrap();
            let theta = model.to_flat();
            let numeric = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.set_flat(p);
                    step_classification(&m, &pair, method).unwrap().0
                },
                &theta,
                1e-5,
            );
            assert!(max_rel_err(&grads.to_flat(), &numeric) < 1e-4, "{method:?}");
        }
    }

    #[test]
    fn classification_constant_trajectory_target() {
        let model = random_model(CellKind::Rnn, 1, 3, 2, false, 90);
        let a = Sample {
            features: Features::Dense(vec![vec![0.5], vec![-0.2]]),
            labels: Labels::Class(0),
        };
        let b = Sample {
            features: Features::Dense(vec![vec![1.0], vec![0.3]]),
            labels: Labels::Class(1),
        };
        // lambda constant at 1 reduces to the standard classification loss
        let pair = MixedPair::new(a.clone(), b, LambdaTrajectory::constant(1.0, 2)).unwrap();
        let (l, _) = step_classification(&model, &pair, Method::Pom).unwrap();
        let (l_std, _) = step_standard(&model, &a, Head::Softmax).unwrap();
        assert!((l - l_std).abs() < 1e-12);
    }

    #[test]
    fn classification_rejects_per_step_labels() {
        let mut rng = Rng::new(91);
        let model = random_model(CellKind::Rnn, 2, 3, 2, false, 92);
        let a = random_tag_sample(2, 3, 2, &mut rng);
        let b = random_tag_sample(2, 3, 2, &mut rng);
        let pair = MixedPair::new(a, b, LambdaTrajectory::constant(0.5, 3)).unwrap();
        assert!(step_classification(&model, &pair, Method::Pom).is_err());
    }

    #[test]
    fn unequal_lengths_degrade_gracefully() {
        let mut rng = Rng::new(93);
        let model = random_model(CellKind::Gru, 2, 3, 3, false, 94);
        let a = random_tag_sample(2, 6, 3, &mut rng);
        let b = random_tag_sample(2, 3, 3, &mut rng);
        let traj = random_traj(6, &mut rng);
        let pair = MixedPair::new(a, b, traj).unwrap();
        for method in [Method::InputMixup, Method::Pom, Method::Ttm] {
            let (loss, grads) = step_by_method(&model, &pair, method, Head::Softmax);
            assert!(loss.is_finite());
            assert!(grads.is_finite());
            // gradcheck still holds across the length boundary
            let theta = model.to_flat();
            let numeric = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    m.set_flat(p);
                    train_step(&m, &pair, method, Head::Softmax).unwrap().0
                },
                &theta,
                1e-5,
            );
            assert!(max_rel_err(&grads.to_flat(), &numeric) < 1e-4, "{method:?}");
        }
    }

    #[test]
    fn loss_is_continuous_in_lambda() {
        let mut rng = Rng::new(95);
        let model = random_model(CellKind::Lstm, 2, 3, 3, false, 96);
        let a = random_tag_sample(2, 4, 3, &mut rng);
        let b = random_tag_sample(2, 4, 3, &mut rng);
        let base = random_traj(4, &mut rng);
        for method in [Method::InputMixup, Method::Pom, Method::Ttm] {
            let pair = MixedPair::new(a.clone(), b.clone(), base.clone()).unwrap();
            let (l0, _) = step_by_method(&model, &pair, method, Head::Softmax);
            let mut bumped = base.clone();
            bumped.values[2] += 1e-6;
            let pair2 = MixedPair::new(a.clone(), b.clone(), bumped).unwrap();
            let (l1, _) = step_by_method(&model, &pair2, method, Head::Softmax);
            assert!((l1 - l0).abs() < 1e-4, "{method:?}: jump {}", (l1 - l0).abs());
        }
    }

    #[test]
    fn make_pairs_covers_batch_once() {
        let mut rng = Rng::new(97);
        let batch: Vec<Sample> = (0..7).map(|_| random_tag_sample(2, 3, 2, &mut rng)).collect();
        let cfg = LambdaConfig::new(0.5, 0.5, 3).unwrap();
        let pairs = make_pairs(&batch, &cfg, &mut rng).unwrap();
        assert_eq!(pairs.len(), 7);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.primary, batch[i]);
            assert_eq!(p.traj.len(), batch[i].len());
        }
        // determinism across reruns
        let mut rng2 = Rng::new(97);
        let batch2: Vec<Sample> = (0..7).map(|_| random_tag_sample(2, 3, 2, &mut rng2)).collect();
        let pairs2 = make_pairs(&batch2, &cfg, &mut rng2).unwrap();
        for (p, q) in pairs.iter().zip(&pairs2) {
            assert_eq!(p.secondary, q.secondary);
            assert_eq!(p.traj.values, q.traj.values);
        }
    }

    #[test]
    fn singleton_batch_pairs_with_itself() {
        let mut rng = Rng::new(98);
        let batch = vec![random_tag_sample(2, 3, 2, &mut rng)];
        let cfg = LambdaConfig::new(1.0, 0.0, 3).unwrap();
        let pairs = make_pairs(&batch, &cfg, &mut rng).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].primary, pairs[0].secondary);
    }

    #[test]
    fn weighted_nll_mode_identity() {
        let mut rng = Rng::new(99);
        let model = random_model(CellKind::Rnn, 2, 3, 3, true, 100);
        let a = random_tag_sample(2, 4, 3, &mut rng);
        let b = random_tag_sample(2, 4, 3, &mut rng);
        let (loss_std, grads_std) = step_standard(&model, &a, Head::Crf(MixedCrfMode::WeightedNll)).unwrap();
        let pair = MixedPair::new(a, b, LambdaTrajectory::constant(1.0, 4)).unwrap();
        let (l, g) =
            step_by_method(&model, &pair, Method::Pom, Head::Crf(MixedCrfMode::WeightedNll));
        assert!((l - loss_std).abs() < 1e-12);
        assert_close(&g.to_flat(), &grads_std.to_flat(), 1e-12, "weighted-nll identity");
    }

    #[test]
    fn crf_head_requires_transitions() {
        let mut rng = Rng::new(101);
        let model = random_model(CellKind::Rnn, 2, 3, 3, false, 102);
        let a = random_tag_sample(2, 3, 3, &mut rng);
        let err = step_standard(&model, &a, Head::Crf(MixedCrfMode::MixedScore));
        assert!(err.is_err());
        let _ = Matrix::zeros(1, 1);
    }
}
