use serde::{Deserialize, Serialize};

use crate::error::{Result, SeqMixError};
use crate::numkernel::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gate_count(&self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = SeqMixError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(SeqMixError::Param(format!("unknown cell kind '{other}'"))),
        }
    }
}

/// Parameters of one recurrent cell. Gate order: GRU [reset, update,
/// candidate]; LSTM [input, forget, cell, output].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Input-to-hidden weights, one H×d matrix per gate.
    pub w_ih: Vec<Matrix>,
    /// Hidden-to-hidden weights, one H×H matrix per gate.
    pub w_hh: Vec<Matrix>,
    /// Biases, one H-vector per gate.
    pub bias: Vec<Vec<f64>>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let g = kind.gate_count();
        CellParams {
            kind,
            input_dim,
            hidden_dim,
            w_ih: (0..g).map(|_| Matrix::zeros(hidden_dim, input_dim)).collect(),
            w_hh: (0..g).map(|_| Matrix::zeros(hidden_dim, hidden_dim)).collect(),
            bias: (0..g).map(|_| vec![0.0; hidden_dim]).collect(),
        }
    }

    /// Uniform(−1/√H, 1/√H) weights, zero biases.
    pub fn init(kind: CellKind, input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(kind, input_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for m in p.w_ih.iter_mut().chain(p.w_hh.iter_mut()) {
            for v in m.data_mut() {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        p
    }
}

/// Hidden state of one stream at one timestep; `c` is present for LSTM only.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
}

impl CellState {
    pub fn zero(cell: &CellParams) -> Self {
        CellState {
            h: vec![0.0; cell.hidden_dim],
            c: matches!(cell.kind, CellKind::Lstm).then(|| vec![0.0; cell.hidden_dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CellState { h: vec![0.0; self.h.len()], c: self.c.as_ref().map(|c| vec![0.0; c.len()]) }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Option<Vec<f64>>,
    pub h: Vec<f64>,
    pub c: Option<Vec<f64>>,
    /// Activated gate values, same order as the parameter gates.
    pub gates: Vec<Vec<f64>>,
    /// GRU: r ⊙ h_prev. LSTM: tanh(c).
    pub extra: Option<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate_preact(cell: &CellParams, g: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = cell.w_ih[g].matvec(x);
    let rec = cell.w_hh[g].matvec(h);
    for ((av, rv), bv) in a.iter_mut().zip(&rec).zip(&cell.bias[g]) {
        *av += rv + bv;
    }
    a
}

/// One step of the recurrence h_t = f(x_t, h_{t−1}).
pub fn cell_forward(cell: &CellParams, x: &[f64], prev: &CellState) -> Result<(CellState, StepCache)> {
    if x.len() != cell.input_dim {
        return Err(SeqMixError::Shape(format!(
            "input dim {} != cell input dim {}",
            x.len(),
            cell.input_dim
        )));
    }
    if prev.h.len() != cell.hidden_dim {
        return Err(SeqMixError::Shape("hidden state dim mismatch".into()));
    }
    match cell.kind {
        CellKind::Rnn => {
            let a = gate_preact(cell, 0, x, &prev.h);
            let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            let cache = StepCache {
                x: x.to_vec(),
                h_prev: prev.h.clone(),
                c_prev: None,
                h: h.clone(),
                c: None,
                gates: vec![],
                extra: None,
            };
            Ok((CellState { h, c: None }, cache))
        }
        CellKind::Gru => {
            let r: Vec<f64> = gate_preact(cell, 0, x, &prev.h).iter().map(|v| sigmoid(*v)).collect();
            let z: Vec<f64> = gate_preact(cell, 1, x, &prev.h).iter().map(|v| sigmoid(*v)).collect();
            let hr: Vec<f64> = r.iter().zip(&prev.h).map(|(a, b)| a * b).collect();
            let n: Vec<f64> = gate_preact(cell, 2, x, &hr).iter().map(|v| v.tanh()).collect();
            let h: Vec<f64> = z
                .iter()
                .zip(&prev.h)
                .zip(&n)
                .map(|((zv, hp), nv)| zv * hp + (1.0 - zv) * nv)
                .collect();
            let cache = StepCache {
                x: x.to_vec(),
                h_prev: prev.h.clone(),
                c_prev: None,
                h: h.clone(),
                c: None,
                gates: vec![r, z, n],
                extra: Some(hr),
            };
            Ok((CellState { h, c: None }, cache))
        }
        CellKind::Lstm => {
            let c_prev = prev.c.as_ref().ok_or_else(|| SeqMixError::Shape("lstm needs c state".into()))?;
            let i: Vec<f64> = gate_preact(cell, 0, x, &prev.h).iter().map(|v| sigmoid(*v)).collect();
            let f: Vec<f64> = gate_preact(cell, 1, x, &prev.h).iter().map(|v| sigmoid(*v)).collect();
            let g: Vec<f64> = gate_preact(cell, 2, x, &prev.h).iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = gate_preact(cell, 3, x, &prev.h).iter().map(|v| sigmoid(*v)).collect();
            let c: Vec<f64> = f
                .iter()
                .zip(c_prev)
                .zip(i.iter().zip(&g))
                .map(|((fv, cp), (iv, gv))| fv * cp + iv * gv)
                .collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h: Vec<f64> = o.iter().zip(&tc).map(|(ov, tv)| ov * tv).collect();
            let cache = StepCache {
                x: x.to_vec(),
                h_prev: prev.h.clone(),
                c_prev: Some(c_prev.clone()),
                h: h.clone(),
                c: Some(c.clone()),
                gates: vec![i, f, g, o],
                extra: Some(tc),
            };
            Ok((CellState { h, c: Some(c) }, cache))
        }
    }
}

fn accumulate_gate(
    grads: &mut CellParams,
    g: usize,
    da: &[f64],
    x: &[f64],
    h_in: &[f64],
    dx: &mut [f64],
    dh_in: &mut [f64],
    cell: &CellParams,
) {
    grads.w_ih[g].add_outer(da, x, 1.0);
    grads.w_hh[g].add_outer(da, h_in, 1.0);
    for (b, d) in grads.bias[g].iter_mut().zip(da) {
        *b += d;
    }
    let dxc = cell.w_ih[g].matvec_t(da);
    for (o, v) in dx.iter_mut().zip(&dxc) {
        *o += v;
    }
    let dhc = cell.w_hh[g].matvec_t(da);
    for (o, v) in dh_in.iter_mut().zip(&dhc) {
        *o += v;
    }
}

/// Exact reverse of `cell_forward`. `d_state` holds dL/dh_t (and dL/dc_t for
/// LSTM); parameter gradients accumulate into `grads`. Returns dL/dx_t and
/// dL/d(previous state).
pub fn cell_backward(
    cell: &CellParams,
    cache: &StepCache,
    d_state: &CellState,
    grads: &mut CellParams,
) -> (Vec<f64>, CellState) {
    let h_dim = cell.hidden_dim;
    let mut dx = vec![0.0; cell.input_dim];
    let mut dh_prev = vec![0.0; h_dim];
    match cell.kind {
        CellKind::Rnn => {
            let da: Vec<f64> =
                d_state.h.iter().zip(&cache.h).map(|(dh, h)| dh * (1.0 - h * h)).collect();
            accumulate_gate(grads, 0, &da, &cache.x, &cache.h_prev, &mut dx, &mut dh_prev, cell);
            (dx, CellState { h: dh_prev, c: None })
        }
        CellKind::Gru => {
            let r = &cache.gates[0];
            let z = &cache.gates[1];
            let n = &cache.gates[2];
            let hr = cache.extra.as_ref().unwrap();
            let dh = &d_state.h;
            // h = z ⊙ h_prev + (1−z) ⊙ n
            let dz: Vec<f64> = (0..h_dim).map(|k| dh[k] * (cache.h_prev[k] - n[k])).collect();
            let dn: Vec<f64> = (0..h_dim).map(|k| dh[k] * (1.0 - z[k])).collect();
            for k in 0..h_dim {
                dh_prev[k] += dh[k] * z[k];
            }
            let da_n: Vec<f64> = (0..h_dim).map(|k| dn[k] * (1.0 - n[k] * n[k])).collect();
            // candidate gate reads hr = r ⊙ h_prev through w_hh
            let mut dhr = vec![0.0; h_dim];
            accumulate_gate(grads, 2, &da_n, &cache.x, hr, &mut dx, &mut dhr, cell);
            let dr: Vec<f64> = (0..h_dim).map(|k| dhr[k] * cache.h_prev[k]).collect();
            for k in 0..h_dim {
                dh_prev[k] += dhr[k] * r[k];
            }
            let da_r: Vec<f64> = (0..h_dim).map(|k| dr[k] * r[k] * (1.0 - r[k])).collect();
            let da_z: Vec<f64> = (0..h_dim).map(|k| dz[k] * z[k] * (1.0 - z[k])).collect();
            accumulate_gate(grads, 0, &da_r, &cache.x, &cache.h_prev, &mut dx, &mut dh_prev, cell);
            accumulate_gate(grads, 1, &da_z, &cache.x, &cache.h_prev, &mut dx, &mut dh_prev, cell);
            (dx, CellState { h: dh_prev, c: None })
        }
        CellKind::Lstm => {
            let i = &cache.gates[0];
            let f = &cache.gates[1];
            let g = &cache.gates[2];
            let o = &cache.gates[3];
            let tc = cache.extra.as_ref().unwrap();
            let c_prev = cache.c_prev.as_ref().unwrap();
            let dh = &d_state.h;
            let dc_in = d_state.c.as_deref().unwrap_or(&[]);
            let mut dc = vec![0.0; h_dim];
            let mut do_ = vec![0.0; h_dim];
            for k in 0..h_dim {
                do_[k] = dh[k] * tc[k];
                dc[k] = dh[k] * o[k] * (1.0 - tc[k] * tc[k]);
                if !dc_in.is_empty() {
                    dc[k] += dc_in[k];
                }
            }
            let mut dc_prev = vec![0.0; h_dim];
            let mut da = vec![vec![0.0; h_dim]; 4];
            for k in 0..h_dim {
                let df = dc[k] * c_prev[k];
                dc_prev[k] = dc[k] * f[k];
                let di = dc[k] * g[k];
                let dg = dc[k] * i[k];
                da[0][k] = di * i[k] * (1.0 - i[k]);
                da[1][k] = df * f[k] * (1.0 - f[k]);
                da[2][k] = dg * (1.0 - g[k] * g[k]);
                da[3][k] = do_[k] * o[k] * (1.0 - o[k]);
            }
            for gate in 0..4 {
                accumulate_gate(
                    grads,
                    gate,
                    &da[gate],
                    &cache.x,
                    &cache.h_prev,
                    &mut dx,
                    &mut dh_prev,
                    cell,
                );
            }
            (dx, CellState { h: dh_prev, c: Some(dc_prev) })
        }
    }
}
