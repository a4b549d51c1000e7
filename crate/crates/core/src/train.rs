//! The training driver: seeded epoch loop, pair sampling for the mixup
//! methods, SGD with the halving schedule, per-epoch loss records, optional
//! best-dev-F1 model selection, evaluation, and the ρ sweep.

use serde::{Deserialize, Serialize};

use crate::crf::viterbi;
use crate::data::{f1_metrics, Dataset, F1Scheme, F1};
use crate::error::{Result, SeqMixError};
use crate::lambda::{LambdaConfig, LambdaTrajectory};
use crate::mixup::{make_pairs, train_step, Head, MixedPair};
use crate::numkernel::Rng;
use crate::recurrent::{
    forward_sequence, output_forward, sgd_step, Labels, Method, Model, ModelInit, Sample,
    TrainConfig,
};

/// Evaluation summary on one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean per-sample loss (cross-entropy or CRF NLL).
    pub loss: f64,
    /// Token accuracy for tagging; final-step accuracy for classification.
    pub accuracy: f64,
    pub token_f1: Option<F1>,
    pub span_f1: Option<F1>,
}

/// Reproducibility ledger for one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    /// Epoch whose model was kept (max dev token F-1 when a dev set exists,
    /// otherwise the last epoch).
    pub selected_epoch: usize,
    pub test_metrics: Option<EvalReport>,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Set when a numeric failure aborted the run; the record holds every
    /// epoch completed before the failure.
    pub numeric_failure: Option<String>,
}

fn forced_pair(sample: &Sample, lambda: f64) -> MixedPair {
    MixedPair {
        primary: sample.clone(),
        secondary: sample.clone(),
        traj: LambdaTrajectory::constant(lambda, sample.len()),
    }
}

/// Predictions for one sample under the given head.
pub fn predict(model: &Model, sample: &Sample, head: Head) -> Result<Vec<usize>> {
    let (_, emissions) = forward_sequence(model, sample)?;
    match head {
        Head::Crf(_) => {
            let transitions = model
                .crf
                .as_ref()
                .ok_or_else(|| SeqMixError::Param("CRF head requires a transition matrix".into()))?;
            Ok(viterbi(&emissions, transitions)?.0)
        }
        Head::Softmax => Ok(emissions
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect()),
    }
}

fn sample_loss(model: &Model, sample: &Sample, head: Head) -> Result<f64> {
    use crate::crf::crf_nll;
    match (&sample.labels, head) {
        (Labels::Tags(tags), Head::Crf(_)) => {
            let (_, emissions) = forward_sequence(model, sample)?;
            let transitions = model
                .crf
                .as_ref()
                .ok_or_else(|| SeqMixError::Param("CRF head requires a transition matrix".into()))?;
            crf_nll(&emissions, transitions, tags, None)
        }
        (Labels::Tags(tags), Head::Softmax) => {
            let (trace, _) = forward_sequence(model, sample)?;
            let mut loss = 0.0;
            for (h, &y) in trace.hidden.iter().zip(tags) {
                let (_, probs) = output_forward(&model.output, h);
                loss -= probs[y].max(1e-300).ln();
            }
            Ok(loss / tags.len() as f64)
        }
        (Labels::Class(c), _) => {
            let (trace, _) = forward_sequence(model, sample)?;
            let (_, probs) = output_forward(&model.output, trace.hidden.last().unwrap());
            Ok(-probs[*c].max(1e-300).ln())
        }
    }
}

/// Loss, accuracy, and (for tagging) token/span F-1 over a dataset.
pub fn evaluate(model: &Model, data: &Dataset, head: Head) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(SeqMixError::Param("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut preds: Vec<Vec<usize>> = Vec::new();
    let mut golds: Vec<Vec<usize>> = Vec::new();
    let (mut hits, mut total) = (0usize, 0usize);
    let mut tagging = false;
    for sample in &data.samples {
        loss += sample_loss(model, sample, head)?;
        match &sample.labels {
            Labels::Tags(tags) => {
                tagging = true;
                let p = predict(model, sample, head)?;
                hits += p.iter().zip(tags).filter(|(a, b)| a == b).count();
                total += tags.len();
                preds.push(p);
                golds.push(tags.clone());
            }
            Labels::Class(c) => {
                let p = predict(model, sample, Head::Softmax)?;
                hits += (p.last().unwrap() == c) as usize;
                total += 1;
            }
        }
    }
    loss /= data.len() as f64;
    let (token_f1, span_f1) = if tagging {
        (
            Some(f1_metrics(&preds, &golds, &data.tag_names, F1Scheme::Token)?),
            Some(f1_metrics(&preds, &golds, &data.tag_names, F1Scheme::Span)?),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport { loss, accuracy: hits as f64 / total as f64, token_f1, span_f1 })
}

/// Train a freshly initialized model. Per epoch: seeded shuffle, pair the
/// whole epoch's samples (mixup methods), batch, step, update. When a dev set
/// is given for tagging, the returned model is the epoch snapshot with the
/// highest dev token F-1; otherwise the final model. A numeric failure stops
/// training and is reported inside the RunRecord rather than as an error.
pub fn train(
    init: &ModelInit,
    cfg: &TrainConfig,
    head: Head,
    train_data: &Dataset,
    dev_data: Option<&Dataset>,
    test_data: Option<&Dataset>,
) -> Result<(Model, RunRecord)> {
    let mut rng = Rng::new(cfg.seed);
    let model = Model::init(init, &mut rng);
    train_prepared(model, rng, cfg, head, train_data, dev_data, test_data)
}

/// Train a caller-prepared model (e.g., one whose embedding table was
/// overwritten with pretrained vectors). The data order stream is seeded
/// fresh from `cfg.seed`.
pub fn train_model(
    model: Model,
    cfg: &TrainConfig,
    head: Head,
    train_data: &Dataset,
    dev_data: Option<&Dataset>,
    test_data: Option<&Dataset>,
) -> Result<(Model, RunRecord)> {
    let rng = Rng::new(cfg.seed);
    train_prepared(model, rng, cfg, head, train_data, dev_data, test_data)
}

fn train_prepared(
    mut model: Model,
    mut rng: Rng,
    cfg: &TrainConfig,
    head: Head,
    train_data: &Dataset,
    dev_data: Option<&Dataset>,
    test_data: Option<&Dataset>,
) -> Result<(Model, RunRecord)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(SeqMixError::Param("empty training set".into()));
    }
    let start = std::time::Instant::now();
    let mut record = RunRecord {
        config: cfg.clone(),
        train_loss: Vec::new(),
        dev_loss: Vec::new(),
        dev_f1: Vec::new(),
        selected_epoch: 0,
        test_metrics: None,
        wall_seconds: 0.0,
        seed: cfg.seed,
        numeric_failure: None,
    };
    let lambda_cfg = LambdaConfig::new(cfg.alpha, cfg.rho, 1)?;
    let mut best: Option<(f64, Model, usize)> = None;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        rng.shuffle(&mut order);
        let shuffled: Vec<Sample> =
            order.iter().map(|&i| train_data.samples[i].clone()).collect();
        // pair over the whole epoch so batch size 1 still mixes distinct samples
        let pairs: Vec<MixedPair> = if cfg.method == Method::Standard {
            shuffled.iter().map(|s| forced_pair(s, 1.0)).collect()
        } else if let Some(forced) = cfg.force_lambda {
            shuffled.iter().map(|s| forced_pair(s, forced)).collect()
        } else {
            make_pairs(&shuffled, &lambda_cfg, &mut rng)?
        };
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut acc = model.zero_grads();
            let mut batch_loss = 0.0;
            for pair in batch {
                let (loss, grads) = train_step(&model, pair, cfg.method, head)?;
                batch_loss += loss;
                acc.add(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            if !batch_loss.is_finite() {
                record.numeric_failure = Some(format!("non-finite loss at epoch {epoch}"));
                break 'epochs;
            }
            if let Err(e) = sgd_step(&mut model, &acc, cfg, epoch) {
                record.numeric_failure = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
        }
        record.train_loss.push(epoch_loss / pairs.len() as f64);
        record.selected_epoch = epoch;
        if let Some(dev) = dev_data {
            let report = evaluate(&model, dev, head)?;
            record.dev_loss.push(report.loss);
            if let Some(f1) = report.token_f1 {
                record.dev_f1.push(f1.f1);
                let better = best.as_ref().map_or(true, |(b, _, _)| f1.f1 > *b);
                if better {
                    best = Some((f1.f1, model.clone(), epoch));
                }
            }
        }
    }
    if let Some((_, selected, epoch)) = best {
        model = selected;
        record.selected_epoch = epoch;
    }
    if let Some(test) = test_data {
        if record.numeric_failure.is_none() {
            record.test_metrics = Some(evaluate(&model, test, head)?);
        }
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok((model, record))
}

/// Full-scale reference configuration: hidden size 256, 50 epochs, SGD at
/// 0.1 halved every 10 epochs, bidirectional LSTM. Desk-scale runs cannot
/// reproduce full-corpus benchmark numbers (they need the real corpus plus
/// pretrained embeddings); this is the exact configuration to launch when the
/// user supplies that data.
pub fn full_scale_baseline(
    method: Method,
    classes: usize,
    vocab: usize,
    embed_dim: usize,
    crf: bool,
) -> (ModelInit, TrainConfig) {
    let init = ModelInit {
        cell: crate::recurrent::CellKind::Lstm,
        input_dim: embed_dim,
        hidden: 256,
        classes,
        vocab: Some(vocab),
        bidirectional: true,
        crf,
    };
    let cfg = TrainConfig {
        method,
        lr: 0.1,
        lr_halve_every: 10,
        epochs: 50,
        alpha: 0.5,
        rho: 0.0,
        ..Default::default()
    };
    (init, cfg)
}

/// One aggregated cell of the ρ sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub rho: f64,
    pub repeats: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run `repeats` seeded trainings per (method, ρ) cell and aggregate test
/// loss and token F-1.
pub fn sweep_rho(
    init: &ModelInit,
    base: &TrainConfig,
    head: Head,
    train_data: &Dataset,
    test_data: &Dataset,
    rhos: &[f64],
    methods: &[Method],
    repeats: usize,
) -> Result<Vec<SweepCell>> {
    if repeats == 0 {
        return Err(SeqMixError::Param("repeats must be at least 1".into()));
    }
    let mut cells = Vec::new();
    for &method in methods {
        for &rho in rhos {
            let mut losses = Vec::with_capacity(repeats);
            let mut f1s = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let cfg = TrainConfig {
                    method,
                    rho,
                    seed: base.seed.wrapping_add(1000 * r as u64 + 1),
                    ..base.clone()
                };
                let (_, record) = train(init, &cfg, head, train_data, None, Some(test_data))?;
                let metrics = record
                    .test_metrics
                    .ok_or_else(|| SeqMixError::Numeric("sweep run failed numerically".into()))?;
                losses.push(metrics.loss);
                f1s.push(metrics.token_f1.map_or(metrics.accuracy, |f| f.f1));
            }
            let (mean_loss, std_loss) = mean_std(&losses);
            let (mean_f1, std_f1) = mean_std(&f1s);
            cells.push(SweepCell { method, rho, repeats, mean_loss, std_loss, mean_f1, std_f1 });
        }
    }
    Ok(cells)
}
