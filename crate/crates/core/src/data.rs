//! Datasets and metrics: synthetic generators (half-moons, tagging with an
//! optional two-step memory dependence), CoNLL-format IO, an embedding
//! loader, and token/span F-1.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SeqMixError};
use crate::numkernel::{Matrix, Rng};
use crate::recurrent::{Features, Labels, Sample};

/// A labeled collection of sequences plus the string↔index maps needed to
/// interpret them.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// id → token string, for token-feature datasets.
    pub token_vocab: Option<Vec<String>>,
    /// label index → tag name.
    pub tag_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.tag_names.len()
    }

    /// Seeded shuffle, then split by fractions (train, dev, remainder=test).
    pub fn split(&self, train_frac: f64, dev_frac: f64, rng: &mut Rng) -> (Dataset, Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let n_train = ((n as f64) * train_frac).round() as usize;
        let n_dev = ((n as f64) * dev_frac).round() as usize;
        let pick = |range: &[usize]| Dataset {
            samples: range.iter().map(|&i| self.samples[i].clone()).collect(),
            token_vocab: self.token_vocab.clone(),
            tag_names: self.tag_names.clone(),
        };
        let (a, rest) = idx.split_at(n_train.min(n));
        let (b, c) = rest.split_at(n_dev.min(rest.len()));
        (pick(a), pick(b), pick(c))
    }
}

fn numeric_tag_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| c.to_string()).collect()
}

/// Two interleaved semicircles, each 2-d point encoded as a 2-timestep,
/// 1-feature sequence (t=1: x, t=2: y) with a sequence-level binary label.
/// Moon 0 arc: (cos θ, sin θ); moon 1 arc: (1−cos θ, 0.5−sin θ), θ ∈ [0, π].
pub fn generate_halfmoons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n % 2 != 0 {
        return Err(SeqMixError::Param(format!("half-moons needs an even count, got {n}")));
    }
    if noise < 0.0 {
        return Err(SeqMixError::Param("noise stddev must be nonnegative".into()));
    }
    let mut rng = Rng::new(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let moon = i % 2;
        let theta = rng.uniform() * std::f64::consts::PI;
        let (mut x, mut y) = if moon == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        x += noise * rng.normal();
        y += noise * rng.normal();
        samples.push(Sample {
            features: Features::Dense(vec![vec![x], vec![y]]),
            labels: Labels::Class(moon),
        });
    }
    Ok(Dataset { samples, token_vocab: None, tag_names: numeric_tag_names(2) })
}

/// Generator law for the synthetic tagging task.
#[derive(Clone, Copy, Debug)]
pub struct TaggingSpec {
    /// Number of sequences.
    pub n: usize,
    /// Sequence length.
    pub t: usize,
    pub vocab: usize,
    pub classes: usize,
    /// Probability of flipping the rule-given tag to a uniform other tag
    /// (ignored by the memory variant, which is kept noise-free so the
    /// memoryless optimum is exact).
    pub flip: f64,
    /// Memory variant: y_t = (x_t + x_{t−2}) mod C for t ≥ 2, tag 0 for the
    /// two warm-up steps. The tag combines the current token with the token
    /// two steps back, so it cannot be predicted from the current token
    /// alone and the recurrent state must both carry and combine past
    /// class information.
    pub memory: bool,
}

impl TaggingSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(SeqMixError::Param("tagging needs at least 2 classes".into()));
        }
        if self.t == 0 || self.vocab == 0 {
            return Err(SeqMixError::Param("t and vocab must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.flip) {
            return Err(SeqMixError::Param("flip rate must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Tokens uniform over the vocab. Default rule: tag = token mod C, flipped to
/// a uniform other tag with probability `flip`. Memory variant: the tag
/// is the combined class (x_t + x_{t−2} mod C) of the current token and the
/// token two steps back (tag 0 during the two warm-up steps).
pub fn generate_tagging(spec: &TaggingSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut samples = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let tokens: Vec<usize> = (0..spec.t).map(|_| rng.uniform_usize(spec.vocab)).collect();
        let tags: Vec<usize> = (0..spec.t)
            .map(|t| {
                if spec.memory {
                    if t >= 2 {
                        (tokens[t] + tokens[t - 2]) % spec.classes
                    } else {
                        0
                    }
                } else {
                    let base = tokens[t] % spec.classes;
                    if spec.flip > 0.0 && rng.uniform() < spec.flip {
                        // uniform over the other C−1 tags
                        let shift = 1 + rng.uniform_usize(spec.classes - 1);
                        (base + shift) % spec.classes
                    } else {
                        base
                    }
                }
            })
            .collect();
        samples.push(Sample { features: Features::Tokens(tokens), labels: Labels::Tags(tags) });
    }
    let token_vocab = Some((0..spec.vocab).map(|v| format!("tok{v}")).collect());
    Ok(Dataset { samples, token_vocab, tag_names: numeric_tag_names(spec.classes) })
}

/// Best possible token accuracy for any predictor that sees only x_t, by
/// exact tabulation of P(y_t = c | x_t = v) under the generator law,
/// averaged over timesteps (tokens are iid uniform).
pub fn memoryless_optimal_accuracy(spec: &TaggingSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for t in 0..spec.t {
        // average over the uniform token at step t of max_c P(y=c | x=v)
        let mut step = 0.0;
        for v in 0..spec.vocab {
            let best = if spec.memory {
                if t >= 2 {
                    // y_t = (x_t + x_{t−2}) mod C: given x_t, guessing y is
                    // guessing the residue class of x_{t−2}; the most
                    // frequent residue class mod C has ⌈V/C⌉ tokens
                    spec.vocab.div_ceil(spec.classes) as f64 / spec.vocab as f64
                } else {
                    1.0 // warm-up tag is the constant 0
                }
            } else {
                // rule tag with prob 1−flip beats any single other tag
                let _ = v;
                (1.0 - spec.flip).max(spec.flip / (spec.classes - 1) as f64)
            };
            step += best;
        }
        total += step / spec.vocab as f64;
    }
    Ok(total / spec.t as f64)
}

/// Parse CoNLL column format: one token per line, whitespace-separated
/// columns with the tag last, blank lines between sentences. `-DOCSTART-`
/// lines are skipped. Token and tag maps are built in first-seen order.
pub fn load_conll(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_conll(&text)
}

pub fn parse_conll(text: &str) -> Result<Dataset> {
    let mut token_ids: HashMap<String, usize> = HashMap::new();
    let mut token_vocab: Vec<String> = Vec::new();
    let mut tag_ids: HashMap<String, usize> = HashMap::new();
    let mut tag_names: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut tokens: Vec<usize> = Vec::new();
    let mut tags: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !tokens.is_empty() {
                samples.push(Sample {
                    features: Features::Tokens(std::mem::take(&mut tokens)),
                    labels: Labels::Tags(std::mem::take(&mut tags)),
                });
            }
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(SeqMixError::Parse {
                line: lineno + 1,
                msg: format!("expected at least 2 columns, got {}", cols.len()),
            });
        }
        let token = cols[0];
        let tag = *cols.last().unwrap();
        let tid = *token_ids.entry(token.to_string()).or_insert_with(|| {
            token_vocab.push(token.to_string());
            token_vocab.len() - 1
        });
        let yid = *tag_ids.entry(tag.to_string()).or_insert_with(|| {
            tag_names.push(tag.to_string());
            tag_names.len() - 1
        });
        tokens.push(tid);
        tags.push(yid);
    }
    if !tokens.is_empty() {
        samples.push(Sample { features: Features::Tokens(tokens), labels: Labels::Tags(tags) });
    }
    Ok(Dataset { samples, token_vocab: Some(token_vocab), tag_names })
}

/// Inverse of `load_conll` on well-formed data: "token tag" lines, blank line
/// after each sentence.
pub fn write_conll(dataset: &Dataset, path: &Path) -> Result<()> {
    let vocab = dataset
        .token_vocab
        .as_ref()
        .ok_or_else(|| SeqMixError::Param("writing CoNLL needs a token vocab".into()))?;
    let mut out = String::new();
    for sample in &dataset.samples {
        let tokens = match &sample.features {
            Features::Tokens(t) => t,
            Features::Dense(_) => {
                return Err(SeqMixError::Param("CoNLL output needs token features".into()))
            }
        };
        let tags = sample.tags()?;
        for (&tok, &tag) in tokens.iter().zip(tags) {
            let _ = writeln!(out, "{} {}", vocab[tok], dataset.tag_names[tag]);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load "word v_1 … v_d" embeddings. In-vocab rows come from the file;
/// out-of-vocab rows are uniform(−1/√d, 1/√d) drawn from `seed`.
pub fn load_embeddings(path: &Path, vocab: &[String], seed: u64) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut table: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split_whitespace();
        let word = cols.next().unwrap();
        let values: Vec<f64> = cols
            .map(|c| {
                c.parse::<f64>().map_err(|_| SeqMixError::Parse {
                    line: lineno + 1,
                    msg: format!("bad float '{c}'"),
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(SeqMixError::Parse {
                    line: lineno + 1,
                    msg: format!("dimension {} != expected {}", values.len(), d),
                })
            }
            _ => {}
        }
        table.insert(word, values);
    }
    let d = dim.ok_or_else(|| SeqMixError::Parse { line: 0, msg: "empty embedding file".into() })?;
    if d == 0 {
        return Err(SeqMixError::Parse { line: 1, msg: "zero-dimensional embeddings".into() });
    }
    let mut rng = Rng::new(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut m = Matrix::zeros(vocab.len(), d);
    for (i, word) in vocab.iter().enumerate() {
        match table.get(word.as_str()) {
            Some(v) => m.row_mut(i).copy_from_slice(v),
            None => {
                for x in m.row_mut(i) {
                    *x = rng.uniform_range(-bound, bound);
                }
            }
        }
    }
    Ok(m)
}

/// Metric scheme for `f1_metrics`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum F1Scheme {
    /// Micro precision/recall over tokens whose tag is not "O".
    Token,
    /// Exact-match spans under the BIO convention.
    Span,
}

/// Precision, recall, F-1.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(tp: usize, pred: usize, gold: usize) -> F1 {
    let precision = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1 { precision, recall, f1 }
}

/// Extract (start, end inclusive, type) spans from BIO tag names. An entity
/// starts at `B-X`, or at `I-X` that does not continue a span of type X.
fn bio_spans(tags: &[usize], names: &[String]) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (t, &y) in tags.iter().enumerate() {
        let name = &names[y];
        let (starts, kind) = if let Some(k) = name.strip_prefix("B-") {
            (true, Some(k.to_string()))
        } else if let Some(k) = name.strip_prefix("I-") {
            let cont = matches!(&current, Some((_, ck)) if ck == k);
            (!cont, Some(k.to_string()))
        } else if name == "O" {
            (false, None)
        } else {
            // plain tags (no BIO prefix): each maximal run is one span
            let cont = matches!(&current, Some((_, ck)) if ck == name);
            (!cont, Some(name.clone()))
        };
        match kind {
            None => {
                if let Some((start, k)) = current.take() {
                    spans.push((start, t - 1, k));
                }
            }
            Some(k) => {
                if starts {
                    if let Some((start, prev)) = current.take() {
                        spans.push((start, t - 1, prev));
                    }
                    current = Some((t, k));
                } else if let Some((_, ck)) = &mut current {
                    *ck = k; // continuation, type unchanged by construction
                }
            }
        }
    }
    if let Some((start, k)) = current {
        spans.push((start, tags.len() - 1, k));
    }
    spans
}

/// Token- or span-level micro F-1 over a corpus of (pred, gold) tag
/// sequences, interpreted through `names`.
pub fn f1_metrics(
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    names: &[String],
    scheme: F1Scheme,
) -> Result<F1> {
    if pred.len() != gold.len() {
        return Err(SeqMixError::Param("pred/gold corpus size mismatch".into()));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(SeqMixError::Param("pred/gold sequence length mismatch".into()));
        }
        match scheme {
            F1Scheme::Token => {
                for (&pv, &gv) in p.iter().zip(g) {
                    let p_entity = names[pv] != "O";
                    let g_entity = names[gv] != "O";
                    n_pred += p_entity as usize;
                    n_gold += g_entity as usize;
                    tp += (p_entity && g_entity && pv == gv) as usize;
                }
            }
            F1Scheme::Span => {
                let ps = bio_spans(p, names);
                let gs = bio_spans(g, names);
                n_pred += ps.len();
                n_gold += gs.len();
                tp += ps.iter().filter(|s| gs.contains(s)).count();
            }
        }
    }
    Ok(prf(tp, n_pred, n_gold))
}
