//! Recurrent cells, the linear output layer, full-sequence forward passes,
//! exact backpropagation through time, and the SGD update.

mod cell;
mod checkpoint;
mod sequence;
mod sgd;

pub use cell::{cell_backward, cell_forward, CellKind, CellParams, CellState, StepCache};
pub use checkpoint::{load_model, save_model};
pub use sequence::{
    bptt, embed_backward, embed_features, encode, encode_backward, forward_sequence,
    output_forward, HiddenTrace,
};
pub use sgd::{clip_global_norm, learning_rate, sgd_step};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeqMixError};
use crate::numkernel::{Matrix, Rng};

/// Training method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    InputMixup,
    Pom,
    Ttm,
}

impl std::str::FromStr for Method {
    type Err = SeqMixError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "input" | "input_mixup" => Ok(Method::InputMixup),
            "pom" => Ok(Method::Pom),
            "ttm" => Ok(Method::Ttm),
            other => Err(SeqMixError::Param(format!("unknown method '{other}'"))),
        }
    }
}

/// Output layer g: logits = W_gᵀ h + b_g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputParams {
    /// H_out × C.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl OutputParams {
    pub fn zeros(hidden: usize, classes: usize) -> Self {
        OutputParams { w: Matrix::zeros(hidden, classes), b: vec![0.0; classes] }
    }

    pub fn init(hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, classes);
        let bound = 1.0 / (hidden as f64).sqrt();
        for v in p.w.data_mut() {
            *v = rng.uniform_range(-bound, bound);
        }
        p
    }

    pub fn classes(&self) -> usize {
        self.b.len()
    }
}

/// Full model: optional embedding table, one or two recurrent cells, output
/// layer, and an optional CRF transition matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    /// vocab × d token embedding table.
    pub embedding: Option<Matrix>,
    pub cell: CellParams,
    /// Backward-direction cell of a bidirectional encoder.
    pub cell_bwd: Option<CellParams>,
    pub output: OutputParams,
    /// C×C tag transition scores.
    pub crf: Option<Matrix>,
}

/// Construction spec for `Model::init`.
#[derive(Clone, Debug)]
pub struct ModelInit {
    pub cell: CellKind,
    /// Dense feature dim, or the embedding dim when `vocab` is set.
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub vocab: Option<usize>,
    pub bidirectional: bool,
    pub crf: bool,
}

impl Model {
    pub fn init(spec: &ModelInit, rng: &mut Rng) -> Model {
        let embedding = spec.vocab.map(|v| {
            let mut m = Matrix::zeros(v, spec.input_dim);
            let bound = 1.0 / (spec.input_dim as f64).sqrt();
            for x in m.data_mut() {
                *x = rng.uniform_range(-bound, bound);
            }
            m
        });
        let cell = CellParams::init(spec.cell, spec.input_dim, spec.hidden, rng);
        let cell_bwd =
            spec.bidirectional.then(|| CellParams::init(spec.cell, spec.input_dim, spec.hidden, rng));
        let h_out = if spec.bidirectional { 2 * spec.hidden } else { spec.hidden };
        let output = OutputParams::init(h_out, spec.classes, rng);
        let crf = spec.crf.then(|| Matrix::zeros(spec.classes, spec.classes));
        Model { embedding, cell, cell_bwd, output, crf }
    }

    pub fn classes(&self) -> usize {
        self.output.classes()
    }

    /// Hidden width seen by the output layer (2H for bidirectional).
    pub fn hidden_out(&self) -> usize {
        self.output.w.rows()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            embedding: self.embedding.as_ref().map(|e| Matrix::zeros(e.rows(), e.cols())),
            cell: CellParams::zeros(self.cell.kind, self.cell.input_dim, self.cell.hidden_dim),
            cell_bwd: self
                .cell_bwd
                .as_ref()
                .map(|c| CellParams::zeros(c.kind, c.input_dim, c.hidden_dim)),
            output: OutputParams::zeros(self.output.w.rows(), self.output.w.cols()),
            crf: self.crf.as_ref().map(|a| Matrix::zeros(a.rows(), a.cols())),
        }
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        visit(
            self.embedding.as_ref(),
            &self.cell,
            self.cell_bwd.as_ref(),
            &self.output,
            self.crf.as_ref(),
            |s| out.extend_from_slice(s),
        );
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        visit_mut(
            self.embedding.as_mut(),
            &mut self.cell,
            self.cell_bwd.as_mut(),
            &mut self.output,
            self.crf.as_mut(),
            |s| {
                s.copy_from_slice(&flat[offset..offset + s.len()]);
                offset += s.len();
            },
        );
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// Parameter gradients, mirroring the model layout.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub embedding: Option<Matrix>,
    pub cell: CellParams,
    pub cell_bwd: Option<CellParams>,
    pub output: OutputParams,
    pub crf: Option<Matrix>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        visit(
            self.embedding.as_ref(),
            &self.cell,
            self.cell_bwd.as_ref(),
            &self.output,
            self.crf.as_ref(),
            |s| out.extend_from_slice(s),
        );
        out
    }

    pub fn add(&mut self, other: &Gradients) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.for_each_slice_mut(|s| {
            let len = s.len();
            for (a, b) in s.iter_mut().zip(&flat[offset..offset + len]) {
                *a += b;
            }
            offset += len;
        });
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_slice_mut(|s| {
            for v in s.iter_mut() {
                *v *= factor;
            }
        });
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        visit(
            self.embedding.as_ref(),
            &self.cell,
            self.cell_bwd.as_ref(),
            &self.output,
            self.crf.as_ref(),
            |s| acc += s.iter().map(|x| x * x).sum::<f64>(),
        );
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        visit(
            self.embedding.as_ref(),
            &self.cell,
            self.cell_bwd.as_ref(),
            &self.output,
            self.crf.as_ref(),
            |s| ok &= s.iter().all(|x| x.is_finite()),
        );
        ok
    }

    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        visit_mut(
            self.embedding.as_mut(),
            &mut self.cell,
            self.cell_bwd.as_mut(),
            &mut self.output,
            self.crf.as_mut(),
            &mut f,
        );
    }
}

// Fixed traversal order shared by Model and Gradients so flat vectors line up.
fn visit<'a>(
    embedding: Option<&'a Matrix>,
    cell: &'a CellParams,
    cell_bwd: Option<&'a CellParams>,
    output: &'a OutputParams,
    crf: Option<&'a Matrix>,
    mut f: impl FnMut(&'a [f64]),
) {
    if let Some(e) = embedding {
        f(e.data());
    }
    for c in std::iter::once(cell).chain(cell_bwd) {
        for m in &c.w_ih {
            f(m.data());
        }
        for m in &c.w_hh {
            f(m.data());
        }
        for b in &c.bias {
            f(b);
        }
    }
    f(output.w.data());
    f(&output.b);
    if let Some(a) = crf {
        f(a.data());
    }
}

fn visit_mut(
    embedding: Option<&mut Matrix>,
    cell: &mut CellParams,
    cell_bwd: Option<&mut CellParams>,
    output: &mut OutputParams,
    crf: Option<&mut Matrix>,
    mut f: impl FnMut(&mut [f64]),
) {
    if let Some(e) = embedding {
        f(e.data_mut());
    }
    for c in std::iter::once(cell).chain(cell_bwd) {
        for m in &mut c.w_ih {
            f(m.data_mut());
        }
        for m in &mut c.w_hh {
            f(m.data_mut());
        }
        for b in &mut c.bias {
            f(b);
        }
    }
    f(output.w.data_mut());
    f(&mut output.b);
    if let Some(a) = crf {
        f(a.data_mut());
    }
}

/// Per-sequence inputs: dense feature vectors or token ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Dense(Vec<Vec<f64>>),
    Tokens(Vec<usize>),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncated(&self, t: usize) -> Features {
        match self {
            Features::Dense(v) => Features::Dense(v[..t.min(v.len())].to_vec()),
            Features::Tokens(v) => Features::Tokens(v[..t.min(v.len())].to_vec()),
        }
    }
}

/// Per-sequence labels: one tag index per timestep, or one sequence label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Tags(Vec<usize>),
    Class(usize),
}

/// One training sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Features,
    pub labels: Labels,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn tags(&self) -> Result<&[usize]> {
        match &self.labels {
            Labels::Tags(t) => Ok(t),
            Labels::Class(_) => {
                Err(SeqMixError::Param("expected per-step tags, got a sequence label".into()))
            }
        }
    }

    pub fn class(&self) -> Result<usize> {
        match &self.labels {
            Labels::Class(c) => Ok(*c),
            Labels::Tags(_) => {
                Err(SeqMixError::Param("expected a sequence label, got per-step tags".into()))
            }
        }
    }
}

/// One-hot distribution over `classes`.
pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    v
}

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Initial learning rate η₀.
    pub lr: f64,
    /// Halve the rate every this many epochs.
    pub lr_halve_every: usize,
    /// Lower bound on the scheduled rate.
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub rho: f64,
    /// Global-norm gradient clip threshold.
    pub clip: Option<f64>,
    pub seed: u64,
    /// Test hook: freeze every λ_t at this value instead of sampling
    /// (λ ≡ 1 makes any mixup method reproduce standard training).
    pub force_lambda: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Standard,
            lr: 0.1,
            lr_halve_every: 10,
            lr_floor: 0.0,
            epochs: 30,
            batch_size: 1,
            alpha: 0.5,
            rho: 0.0,
            clip: Some(5.0),
            seed: 0,
            force_lambda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(SeqMixError::Param("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SeqMixError::Param("batch size must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !(0.0..=1.0).contains(&self.rho) {
            return Err(SeqMixError::Param("invalid (alpha, rho)".into()));
        }
        Ok(())
    }
}
