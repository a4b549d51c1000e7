//! Empirical probes of the theory at desk scale: per-class spectral profiles
//! of hidden states (compression), principal angles between class subspaces
//! (orthogonality), decision-boundary grids and the inter-moon margin metric,
//! and the over-regularization / memorylessness trend probes.

use serde::{Deserialize, Serialize};

use crate::data::{generate_tagging, memoryless_optimal_accuracy, Dataset, TaggingSpec};
use crate::error::{Result, SeqMixError};
use crate::mixup::Head;
use crate::numkernel::{left_singular_basis, softmax, svd_top_k, Matrix};
use crate::recurrent::{
    forward_sequence, output_forward, CellKind, Features, Labels, Method, Model, ModelInit,
    Sample, TrainConfig,
};
use crate::train::{evaluate, train};

/// Ordered singular values of one class's hidden-state matrix with cumulative
/// energy fractions e_m = Σ_{i≤m} σ_i² / ‖M‖_F².
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub singular_values: Vec<f64>,
    pub energy_fractions: Vec<f64>,
}

/// Class probabilities evaluated over a uniform grid, row-major by (y, x).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryGrid {
    /// (x_min, x_max, y_min, y_max).
    pub bounds: (f64, f64, f64, f64),
    pub resolution: usize,
    /// resolution² rows of C probabilities.
    pub probs: Vec<Vec<f64>>,
}

/// One (hidden size, seed) probe outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeResult {
    pub h: usize,
    pub seed: u64,
    pub value: f64,
}

/// Memory-probe outcomes next to the exactly-computed memoryless optimum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemoryReport {
    pub baseline: f64,
    /// value = test token accuracy.
    pub runs: Vec<ProbeResult>,
}

/// Group hidden states by token label: one H_out × count matrix per class,
/// columns in corpus order. Absent classes get empty (zero-column) matrices.
pub fn collect_hidden_by_class(model: &Model, samples: &[Sample]) -> Result<Vec<Matrix>> {
    let classes = model.classes();
    let h = model.hidden_out();
    let mut cols: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    for sample in samples {
        let tags = sample.tags()?;
        let (trace, _) = forward_sequence(model, sample)?;
        for (hidden, &y) in trace.hidden.iter().zip(tags) {
            if y >= classes {
                return Err(SeqMixError::Param(format!("tag {y} out of range {classes}")));
            }
            cols[y].push(hidden.clone());
        }
    }
    Ok(cols
        .into_iter()
        .map(|c| {
            let mut m = Matrix::zeros(h, c.len());
            for (j, col) in c.iter().enumerate() {
                for i in 0..h {
                    m.set(i, j, col[i]);
                }
            }
            m
        })
        .collect())
}

/// Subtract the column mean from every column (optional preprocessing for
/// `spectral_profile`; the affine-subspace reading of the theory does not
/// center, so both spectra can be reported).
pub fn center_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    if m.cols() == 0 {
        return out;
    }
    for i in 0..m.rows() {
        let mean: f64 = (0..m.cols()).map(|j| m.at(i, j)).sum::<f64>() / m.cols() as f64;
        for j in 0..m.cols() {
            out.set(i, j, m.at(i, j) - mean);
        }
    }
    out
}

/// Top-k singular values and cumulative energy fractions. k larger than the
/// matrix rank bound is truncated.
pub fn spectral_profile(m: &Matrix, k: usize) -> Result<SpectralReport> {
    if m.cols() == 0 || m.rows() == 0 {
        return Err(SeqMixError::Param("spectral profile of an empty matrix".into()));
    }
    let k = k.max(1).min(m.rows().min(m.cols()));
    let singular_values = svd_top_k(m, k)?;
    let total = m.frobenius_sq();
    let mut acc = 0.0;
    let energy_fractions = singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect();
    Ok(SpectralReport { singular_values, energy_fractions })
}

/// Cosines of the principal angles between the rank-r leading left singular
/// subspaces of each pair of nonempty class matrices. Near-zero cosines mean
/// near-orthogonal subspaces. Returns (class_a, class_b, cosines) triples;
/// r is truncated to each matrix's available rank.
pub fn subspace_orthogonality(
    class_matrices: &[Matrix],
    r: usize,
) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    if r == 0 {
        return Err(SeqMixError::Param("rank must be at least 1".into()));
    }
    let nonempty: Vec<usize> =
        (0..class_matrices.len()).filter(|&i| class_matrices[i].cols() > 0).collect();
    if nonempty.len() < 2 {
        return Err(SeqMixError::Param("need at least 2 nonempty classes".into()));
    }
    let bases: Vec<(usize, Matrix)> = nonempty
        .iter()
        .map(|&i| {
            let m = &class_matrices[i];
            let ri = r.min(m.rows().min(m.cols()));
            Ok((i, left_singular_basis(m, ri)?))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for a in 0..bases.len() {
        for b in (a + 1)..bases.len() {
            let (ia, ua) = &bases[a];
            let (ib, ub) = &bases[b];
            let overlap = ua.transpose().matmul(ub)?;
            let k = overlap.rows().min(overlap.cols());
            let mut cosines = svd_top_k(&overlap, k)?;
            for c in cosines.iter_mut() {
                *c = c.clamp(0.0, 1.0 + 1e-12);
            }
            out.push((*ia, *ib, cosines));
        }
    }
    Ok(out)
}

/// Class probabilities for one 2-d point under the two-timestep encoding
/// (t=1: x, t=2: y).
pub fn classify_point(model: &Model, x: f64, y: f64) -> Result<Vec<f64>> {
    let sample = Sample {
        features: Features::Dense(vec![vec![x], vec![y]]),
        labels: Labels::Class(0),
    };
    let (trace, _) = forward_sequence(model, &sample)?;
    let (logits, _) = output_forward(&model.output, trace.hidden.last().unwrap());
    Ok(softmax(&logits))
}

/// Evaluate the classifier on a uniform resolution × resolution grid.
pub fn boundary_grid(
    model: &Model,
    bounds: (f64, f64, f64, f64),
    resolution: usize,
) -> Result<BoundaryGrid> {
    let (x0, x1, y0, y1) = bounds;
    if resolution == 0 || !(x1 > x0) || !(y1 > y0) {
        return Err(SeqMixError::Param("invalid grid bounds or resolution".into()));
    }
    let mut probs = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let y = y0 + (y1 - y0) * (iy as f64 + 0.5) / resolution as f64;
        for ix in 0..resolution {
            let x = x0 + (x1 - x0) * (ix as f64 + 0.5) / resolution as f64;
            probs.push(classify_point(model, x, y)?);
        }
    }
    Ok(BoundaryGrid { bounds, resolution, probs })
}

/// Plot window that contains both noise-free arcs with margin.
pub const MOON_BOUNDS: (f64, f64, f64, f64) = (-1.3, 2.3, -1.3, 1.8);
const STRIP_HALF_WIDTH: f64 = 0.15;

fn arc_distance(x: f64, y: f64, moon: usize) -> f64 {
    // distance to the noise-free half-moon arcs, sampled finely
    let n = 1000;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let theta = std::f64::consts::PI * i as f64 / n as f64;
        let (ax, ay) = if moon == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        best = best.min(((x - ax).powi(2) + (y - ay).powi(2)).sqrt());
    }
    best
}

/// Points of a uniform grid lying in the inter-moon strip: within
/// `STRIP_HALF_WIDTH` of the equidistant curve between the two noise-free
/// arcs (|d₀ − d₁|/2 as the distance proxy).
pub fn moon_strip_points(resolution: usize) -> Vec<(f64, f64)> {
    let (x0, x1, y0, y1) = MOON_BOUNDS;
    let mut pts = Vec::new();
    for iy in 0..resolution {
        let y = y0 + (y1 - y0) * (iy as f64 + 0.5) / resolution as f64;
        for ix in 0..resolution {
            let x = x0 + (x1 - x0) * (ix as f64 + 0.5) / resolution as f64;
            let d0 = arc_distance(x, y, 0);
            let d1 = arc_distance(x, y, 1);
            if (d0 - d1).abs() / 2.0 <= STRIP_HALF_WIDTH && d0.min(d1) <= 1.0 {
                pts.push((x, y));
            }
        }
    }
    pts
}

/// Mean max-class probability over the inter-moon strip: lower values mean a
/// softer boundary (wider margin).
pub fn strip_mean_max_prob(model: &Model, strip: &[(f64, f64)]) -> Result<f64> {
    if strip.is_empty() {
        return Err(SeqMixError::Param("empty strip".into()));
    }
    let mut acc = 0.0;
    for &(x, y) in strip {
        let p = classify_point(model, x, y)?;
        acc += p.iter().cloned().fold(f64::MIN, f64::max);
    }
    Ok(acc / strip.len() as f64)
}

/// Shared knobs for the theorem probes.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub cell: CellKind,
    pub method: Method,
    pub alpha: f64,
    pub rho: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Epoch interval for halving the learning rate (see [`TrainConfig`]).
    pub lr_halve_every: usize,
    /// Training sequences.
    pub n: usize,
    /// Sequence length.
    pub t: usize,
    pub vocab: usize,
    /// Use the two-step-memory tag rule for the over-regularization probe,
    /// forcing class identity through the recurrent state.
    pub memory_rule: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            cell: CellKind::Gru,
            method: Method::Pom,
            alpha: 0.5,
            rho: 0.0,
            epochs: 40,
            lr: 0.1,
            lr_halve_every: 10,
            n: 60,
            t: 8,
            vocab: 10,
            memory_rule: false,
        }
    }
}

fn probe_train_cfg(cfg: &ProbeConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        method: cfg.method,
        lr: cfg.lr,
        lr_halve_every: cfg.lr_halve_every,
        epochs: cfg.epochs,
        alpha: cfg.alpha,
        rho: cfg.rho,
        seed,
        ..Default::default()
    }
}

fn probe_init(cfg: &ProbeConfig, classes: usize, h: usize) -> ModelInit {
    ModelInit {
        cell: cfg.cell,
        input_dim: 8.min(cfg.vocab),
        hidden: h,
        classes,
        vocab: Some(cfg.vocab),
        bidirectional: false,
        crf: false,
    }
}

/// Theorem-1 probe: train on a separable C-class tagging task at each hidden
/// size and report the final training token error (1 − train accuracy).
/// The theory predicts mixup cannot drive the error to zero when H < C−1.
pub fn overreg_probe(
    cfg: &ProbeConfig,
    classes: usize,
    h_values: &[usize],
    seeds: &[u64],
) -> Result<Vec<ProbeResult>> {
    let mut runs = Vec::new();
    for &h in h_values {
        for &seed in seeds {
            let spec = TaggingSpec {
                n: cfg.n,
                t: cfg.t,
                vocab: cfg.vocab,
                classes,
                flip: 0.0,
                memory: cfg.memory_rule,
            };
            let data = generate_tagging(&spec, seed.wrapping_add(7_777))?;
            let init = probe_init(cfg, classes, h);
            let train_cfg = probe_train_cfg(cfg, seed);
            let (model, _) = train(&init, &train_cfg, Head::Softmax, &data, None, None)?;
            let report = evaluate(&model, &data, Head::Softmax)?;
            runs.push(ProbeResult { h, seed, value: 1.0 - report.accuracy });
        }
    }
    Ok(runs)
}

/// Theorem-2 probe: train on the two-step-memory task at each hidden size and
/// report held-out token accuracy next to the exact memoryless optimum.
pub fn memory_probe(
    cfg: &ProbeConfig,
    h_values: &[usize],
    seeds: &[u64],
) -> Result<MemoryReport> {
    let spec = TaggingSpec {
        n: cfg.n,
        t: cfg.t,
        vocab: cfg.vocab - cfg.vocab % 2, // even vocab keeps the optimum exact
        classes: 2,
        flip: 0.0,
        memory: true,
    };
    let baseline = memoryless_optimal_accuracy(&spec)?;
    let mut runs = Vec::new();
    for &h in h_values {
        for &seed in seeds {
            let train_data = generate_tagging(&spec, seed.wrapping_add(13_000))?;
            let test_spec = TaggingSpec { n: (spec.n / 2).max(20), ..spec };
            let test_data = generate_tagging(&test_spec, seed.wrapping_add(14_000))?;
            let init = probe_init(cfg, 2, h);
            let train_cfg = probe_train_cfg(cfg, seed);
            let (model, _) = train(&init, &train_cfg, Head::Softmax, &train_data, None, None)?;
            let report = evaluate(&model, &test_data, Head::Softmax)?;
            runs.push(ProbeResult { h, seed, value: report.accuracy });
        }
    }
    Ok(MemoryReport { baseline, runs })
}

/// Dataset-level convenience: per-class spectral reports for a trained model.
pub fn dataset_spectra(
    model: &Model,
    data: &Dataset,
    k: usize,
    center: bool,
) -> Result<Vec<Option<SpectralReport>>> {
    let mats = collect_hidden_by_class(model, &data.samples)?;
    mats.iter()
        .map(|m| {
            if m.cols() == 0 {
                Ok(None)
            } else if center {
                Ok(Some(spectral_profile(&center_columns(m), k)?))
            } else {
                Ok(Some(spectral_profile(m, k)?))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Rng;
    use crate::recurrent::{Model, ModelInit};

    fn tag_model(h: usize, c: usize, seed: u64) -> Model {
        let mut rng = Rng::new(seed);
        Model::init(
            &ModelInit {
                cell: CellKind::Rnn,
                input_dim: 2,
                hidden: h,
                classes: c,
                vocab: None,
                bidirectional: false,
                crf: false,
            },
            &mut rng,
        )
    }

    fn dense_sample(t: usize, tags: Vec<usize>, seed: u64) -> Sample {
        let mut rng = Rng::new(seed);
        Sample {
            features: Features::Dense(
                (0..t).map(|_| vec![rng.normal(), rng.normal()]).collect(),
            ),
            labels: Labels::Tags(tags),
        }
    }

    #[test]
    fn hidden_collection_partitions_tokens() {
        let model = tag_model(3, 3, 1);
        let samples = vec![dense_sample(4, vec![0, 1, 0, 2], 2), dense_sample(3, vec![1, 1, 0], 3)];
        let mats = collect_hidden_by_class(&model, &samples).unwrap();
        assert_eq!(mats.len(), 3);
        let total: usize = mats.iter().map(|m| m.cols()).sum();
        assert_eq!(total, 7);
        assert_eq!(mats[0].cols(), 3);
        assert_eq!(mats[1].cols(), 3);
        assert_eq!(mats[2].cols(), 1);
        // columns equal the recomputed forward hidden states exactly
        let (trace, _) = forward_sequence(&model, &samples[0]).unwrap();
        for i in 0..3 {
            assert_eq!(mats[0].at(i, 0), trace.hidden[0][i]);
            assert_eq!(mats[1].at(i, 0), trace.hidden[1][i]);
        }
    }

    #[test]
    fn absent_class_yields_empty_matrix() {
        let model = tag_model(3, 3, 4);
        let samples = vec![dense_sample(3, vec![0, 0, 0], 5)];
        let mats = collect_hidden_by_class(&model, &samples).unwrap();
        assert_eq!(mats[0].cols(), 3);
        assert_eq!(mats[1].cols(), 0);
        assert_eq!(mats[2].cols(), 0);
    }

    #[test]
    fn rank_one_matrix_has_unit_first_energy() {
        let mut m = Matrix::zeros(4, 5);
        for j in 0..5 {
            for i in 0..4 {
                m.set(i, j, (i + 1) as f64 * (j + 1) as f64);
            }
        }
        let rep = spectral_profile(&m, 3).unwrap();
        assert!((rep.energy_fractions[0] - 1.0).abs() < 1e-10);
        assert!(rep.singular_values[1].abs() < 1e-8);
    }

    #[test]
    fn orthonormal_columns_spread_energy_evenly() {
        let mut m = Matrix::zeros(4, 3);
        for j in 0..3 {
            m.set(j, j, 1.0);
        }
        let rep = spectral_profile(&m, 3).unwrap();
        for (i, e) in rep.energy_fractions.iter().enumerate() {
            assert!((e - (i + 1) as f64 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_fractions_monotone_bounded() {
        let mut rng = Rng::new(6);
        let mut m = Matrix::zeros(5, 9);
        for v in m.data_mut() {
            *v = rng.normal();
        }
        let rep = spectral_profile(&m, 20).unwrap(); // k truncated to 5
        assert_eq!(rep.singular_values.len(), 5);
        for w in rep.energy_fractions.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
        assert!(*rep.energy_fractions.last().unwrap() <= 1.0 + 1e-12);
        for w in rep.singular_values.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn disjoint_blocks_are_orthogonal() {
        // class 0 lives in coordinates 0..2, class 1 in coordinates 2..4
        let mut rng = Rng::new(7);
        let mut a = Matrix::zeros(4, 6);
        let mut b = Matrix::zeros(4, 6);
        for j in 0..6 {
            for i in 0..2 {
                a.set(i, j, rng.normal());
                b.set(i + 2, j, rng.normal());
            }
        }
        let pairs = subspace_orthogonality(&[a, b], 2).unwrap();
        assert_eq!(pairs.len(), 1);
        for c in &pairs[0].2 {
            assert!(c.abs() < 1e-10, "cosine {c}");
        }
    }

    #[test]
    fn identical_matrices_align() {
        let mut rng = Rng::new(8);
        let mut a = Matrix::zeros(4, 5);
        for v in a.data_mut() {
            *v = rng.normal();
        }
        let pairs = subspace_orthogonality(&[a.clone(), a], 2).unwrap();
        assert!((pairs[0].2[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_model_grid_is_uniform() {
        let mut model = tag_model(3, 2, 9);
        let n = model.to_flat().len();
        model.set_flat(&vec![0.0; n]);
        // half-moons models have 1-d inputs
        let mut rng = Rng::new(10);
        let model = {
            let mut m = Model::init(
                &ModelInit {
                    cell: CellKind::Rnn,
                    input_dim: 1,
                    hidden: 3,
                    classes: 2,
                    vocab: None,
                    bidirectional: false,
                    crf: false,
                },
                &mut rng,
            );
            let k = m.to_flat().len();
            m.set_flat(&vec![0.0; k]);
            m
        };
        let grid = boundary_grid(&model, (-1.0, 1.0, -1.0, 1.0), 5).unwrap();
        assert_eq!(grid.probs.len(), 25);
        for row in &grid.probs {
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let _ = model;
    }

    #[test]
    fn grid_resolution_is_exact() {
        let mut rng = Rng::new(11);
        let model = Model::init(
            &ModelInit {
                cell: CellKind::Gru,
                input_dim: 1,
                hidden: 4,
                classes: 2,
                vocab: None,
                bidirectional: false,
                crf: false,
            },
            &mut rng,
        );
        let grid = boundary_grid(&model, (-1.5, 2.5, -1.0, 1.5), 20).unwrap();
        assert_eq!(grid.probs.len(), 400);
        for row in &grid.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn strip_is_nonempty_and_between_moons() {
        let pts = moon_strip_points(40);
        assert!(!pts.is_empty());
        for &(x, y) in &pts {
            let d0 = arc_distance(x, y, 0);
            let d1 = arc_distance(x, y, 1);
            assert!((d0 - d1).abs() / 2.0 <= STRIP_HALF_WIDTH + 1e-12);
        }
    }

    #[test]
    fn probes_are_deterministic() {
        let cfg = ProbeConfig { epochs: 2, n: 8, t: 4, vocab: 6, ..Default::default() };
        let a = overreg_probe(&cfg, 3, &[4], &[1, 2]).unwrap();
        let b = overreg_probe(&cfg, 3, &[4], &[1, 2]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
        }
        let m1 = memory_probe(&cfg, &[4], &[1]).unwrap();
        let m2 = memory_probe(&cfg, &[4], &[1]).unwrap();
        assert_eq!(m1.baseline, m2.baseline);
        assert_eq!(m1.runs[0].value.to_bits(), m2.runs[0].value.to_bits());
    }
}
