use super::cell::{cell_backward, cell_forward, CellState, StepCache};
use super::{Gradients, Model, OutputParams, Sample};
use crate::error::{Result, SeqMixError};
use crate::numkernel::softmax;

/// Hidden states and the per-step caches needed for the backward pass.
/// For a bidirectional encoder, `hidden[t]` is the concatenation
/// [forward_h_t, backward_h_t] and `bwd_caches` is indexed by time.
#[derive(Clone, Debug)]
pub struct HiddenTrace {
    pub hidden: Vec<Vec<f64>>,
    pub fwd_caches: Vec<StepCache>,
    pub bwd_caches: Vec<StepCache>,
}

/// Resolve token ids through the embedding table; dense features pass through.
pub fn embed_features(model: &Model, features: &super::Features) -> Result<Vec<Vec<f64>>> {
    match features {
        super::Features::Dense(rows) => {
            for r in rows {
                if r.len() != model.cell.input_dim {
                    return Err(SeqMixError::Shape(format!(
                        "feature dim {} != cell input dim {}",
                        r.len(),
                        model.cell.input_dim
                    )));
                }
            }
            Ok(rows.clone())
        }
        super::Features::Tokens(ids) => {
            let table = model
                .embedding
                .as_ref()
                .ok_or_else(|| SeqMixError::Param("token features need an embedding table".into()))?;
            ids.iter()
                .map(|&id| {
                    if id >= table.rows() {
                        return Err(SeqMixError::Param(format!(
                            "token id {} out of vocab {}",
                            id,
                            table.rows()
                        )));
                    }
                    Ok(table.row(id).to_vec())
                })
                .collect()
        }
    }
}

/// Route input gradients back into the embedding table. `scale[t]` weights
/// step t's contribution (mixup splits a mixed input between two tokens).
pub fn embed_backward(
    grads: &mut Gradients,
    tokens: &[usize],
    d_inputs: &[Vec<f64>],
    scale: Option<&[f64]>,
) {
    if let Some(table) = grads.embedding.as_mut() {
        for (t, (&id, dx)) in tokens.iter().zip(d_inputs).enumerate() {
            let s = scale.map_or(1.0, |sc| sc[t]);
            if s == 0.0 {
                continue;
            }
            let row = table.row_mut(id);
            for (r, d) in row.iter_mut().zip(dx) {
                *r += s * d;
            }
        }
    }
}

/// Run the recurrent encoder over already-embedded inputs. h_0 = 0 (and
/// c_0 = 0 for LSTM).
pub fn encode(model: &Model, inputs: &[Vec<f64>]) -> Result<HiddenTrace> {
    if inputs.is_empty() {
        return Err(SeqMixError::Param("empty sequence".into()));
    }
    let t_len = inputs.len();
    let mut fwd_caches = Vec::with_capacity(t_len);
    let mut state = CellState::zero(&model.cell);
    let mut fwd_h = Vec::with_capacity(t_len);
    for x in inputs {
        let (next, cache) = cell_forward(&model.cell, x, &state)?;
        fwd_h.push(next.h.clone());
        fwd_caches.push(cache);
        state = next;
    }
    let mut bwd_caches = Vec::new();
    let hidden = if let Some(bwd_cell) = &model.cell_bwd {
        let mut caches: Vec<Option<StepCache>> = vec![None; t_len];
        let mut bstate = CellState::zero(bwd_cell);
        let mut bwd_h = vec![Vec::new(); t_len];
        for t in (0..t_len).rev() {
            let (next, cache) = cell_forward(bwd_cell, &inputs[t], &bstate)?;
            bwd_h[t] = next.h.clone();
            caches[t] = Some(cache);
            bstate = next;
        }
        bwd_caches = caches.into_iter().map(|c| c.unwrap()).collect();
        fwd_h
            .into_iter()
            .zip(bwd_h)
            .map(|(f, b)| {
                let mut v = f;
                v.extend(b);
                v
            })
            .collect()
    } else {
        fwd_h
    };
    Ok(HiddenTrace { hidden, fwd_caches, bwd_caches })
}

/// Reverse of `encode`: given dL/dh_t for every step, accumulate cell
/// gradients and return dL/dx_t.
pub fn encode_backward(
    model: &Model,
    trace: &HiddenTrace,
    d_hidden: &[Vec<f64>],
    grads: &mut Gradients,
) -> Vec<Vec<f64>> {
    let t_len = trace.fwd_caches.len();
    let h = model.cell.hidden_dim;
    let mut d_inputs = vec![vec![0.0; model.cell.input_dim]; t_len];
    // forward-direction stream: carry flows toward earlier steps
    let mut carry = CellState::zero(&model.cell);
    for t in (0..t_len).rev() {
        let mut d_state = carry;
        for (a, b) in d_state.h.iter_mut().zip(&d_hidden[t][..h]) {
            *a += b;
        }
        let (dx, prev) = cell_backward(&model.cell, &trace.fwd_caches[t], &d_state, &mut grads.cell);
        for (o, v) in d_inputs[t].iter_mut().zip(&dx) {
            *o += v;
        }
        carry = prev;
    }
    // backward-direction stream: its "previous" step is t+1, so carry flows
    // toward later steps
    if let Some(bwd_cell) = &model.cell_bwd {
        let bgrads = grads.cell_bwd.as_mut().expect("grads mirror model layout");
        let mut carry = CellState::zero(bwd_cell);
        for t in 0..t_len {
            let mut d_state = carry;
            for (a, b) in d_state.h.iter_mut().zip(&d_hidden[t][h..]) {
                *a += b;
            }
            let (dx, prev) = cell_backward(bwd_cell, &trace.bwd_caches[t], &d_state, bgrads);
            for (o, v) in d_inputs[t].iter_mut().zip(&dx) {
                *o += v;
            }
            carry = prev;
        }
    }
    d_inputs
}

/// logits = W_gᵀ h + b_g, plus their softmax.
pub fn output_forward(out: &OutputParams, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut logits = out.w.matvec_t(h);
    for (l, b) in logits.iter_mut().zip(&out.b) {
        *l += b;
    }
    let probs = softmax(&logits);
    (logits, probs)
}

/// Full forward pass: embedding lookup, recurrence, output layer per step.
/// Emissions are the raw logits (T×C).
pub fn forward_sequence(model: &Model, sample: &Sample) -> Result<(HiddenTrace, Vec<Vec<f64>>)> {
    if sample.is_empty() {
        return Err(SeqMixError::Param("empty sequence".into()));
    }
    let inputs = embed_features(model, &sample.features)?;
    let trace = encode(model, &inputs)?;
    let emissions =
        trace.hidden.iter().map(|h| output_forward(&model.output, h).0).collect();
    Ok((trace, emissions))
}

fn check_distribution(row: &[f64]) -> Result<()> {
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| *v < -1e-12) {
        return Err(SeqMixError::Param(format!("target row is not a distribution (sum {s})")));
    }
    Ok(())
}

/// Soft-label cross-entropy over the sequence with exact analytic gradients.
/// Loss is the mean over timesteps of −Σ_c q_c log p̂_c.
pub fn bptt(model: &Model, sample: &Sample, targets: &[Vec<f64>]) -> Result<(f64, Gradients)> {
    if targets.len() != sample.len() {
        return Err(SeqMixError::Shape(format!(
            "targets length {} != sequence length {}",
            targets.len(),
            sample.len()
        )));
    }
    for row in targets {
        check_distribution(row)?;
    }
    let inputs = embed_features(model, &sample.features)?;
    let trace = encode(model, &inputs)?;
    let mut grads = model.zero_grads();
    let t_len = inputs.len();
    let mut loss = 0.0;
    let mut d_hidden = vec![vec![0.0; model.hidden_out()]; t_len];
    for t in 0..t_len {
        let (logits, probs) = output_forward(&model.output, &trace.hidden[t]);
        let _ = logits;
        let q = &targets[t];
        loss += -q
            .iter()
            .zip(&probs)
            .map(|(qv, pv)| if *qv > 0.0 { qv * pv.max(1e-300).ln() } else { 0.0 })
            .sum::<f64>();
        let d_logits: Vec<f64> =
            probs.iter().zip(q).map(|(p, qv)| (p - qv) / t_len as f64).collect();
        grads.output.w.add_outer(&trace.hidden[t], &d_logits, 1.0);
        for (b, d) in grads.output.b.iter_mut().zip(&d_logits) {
            *b += d;
        }
        d_hidden[t] = model.output.w.matvec(&d_logits);
    }
    loss /= t_len as f64;
    let d_inputs = encode_backward(model, &trace, &d_hidden, &mut grads);
    if let super::Features::Tokens(ids) = &sample.features {
        embed_backward(&mut grads, ids, &d_inputs, None);
    }
    Ok((loss, grads))
}
