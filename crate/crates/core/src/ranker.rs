//! Bradley-Terry pairwise heads over scene embeddings.
//!
//! One scorer per perceptual dimension maps a 128-wide scene embedding to a
//! real score through a small MLP (128 -> 64 -> 1). The same scorer is applied
//! to both members of a pair and `P(left beats right) = sigmoid(s_left - s_right)`.
//! Training minimizes binary cross-entropy against the vote (ties are a soft
//! 0.5 target).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    params_from_json, params_to_json, Adam, AdamConfig, AutodiffError, Bound, CheckpointError,
    Params, Tape, Tensor, Var,
};
use crate::mgae::{scene_embedding_on, EncoderModel, MgaeError, EMBED_DIM, LEAKY_SLOPE};
use crate::rng::{stream, StreamRng};
use crate::text::FeaturizedGraph;

pub const SCORER_HIDDEN: usize = 64;
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Mgae(#[from] MgaeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown perceptual dimension {0:?}")]
    UnknownDimension(String),
    #[error("comparisons line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("comparisons line {line}: I/O error: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("comparisons line {line}: left and right are both {scene:?}")]
    SelfComparison { line: usize, scene: String },
    #[error("scene {0:?} has no embedding")]
    UnresolvedScene(String),
    #[error("no comparisons to train on")]
    EmptyComparisons,
    #[error("no scoreable pairs (every comparison is a tie)")]
    NoScoreablePairs,
    #[error("embedding width {found}, scorer expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("no trained scorer for dimension(s): {}", .0.join(", "))]
    MissingScorer(Vec<String>),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: AutodiffError,
    },
    #[error("invalid ranker configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualDimension {
    Safe,
    Lively,
    Boring,
    Wealthy,
    Depressing,
    Beautiful,
}

impl PerceptualDimension {
    pub const ALL: [PerceptualDimension; 6] = [
        PerceptualDimension::Safe,
        PerceptualDimension::Lively,
        PerceptualDimension::Boring,
        PerceptualDimension::Wealthy,
        PerceptualDimension::Depressing,
        PerceptualDimension::Beautiful,
    ];

    /// Column order of the per-dimension accuracy table.
    pub const TABLE_ORDER: [PerceptualDimension; 6] = [
        PerceptualDimension::Beautiful,
        PerceptualDimension::Boring,
        PerceptualDimension::Depressing,
        PerceptualDimension::Lively,
        PerceptualDimension::Safe,
        PerceptualDimension::Wealthy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerceptualDimension::Safe => "safe",
            PerceptualDimension::Lively => "lively",
            PerceptualDimension::Boring => "boring",
            PerceptualDimension::Wealthy => "wealthy",
            PerceptualDimension::Depressing => "depressing",
            PerceptualDimension::Beautiful => "beautiful",
        }
    }

    /// Header used in the per-dimension accuracy table.
    pub fn table_header(self) -> &'static str {
        match self {
            PerceptualDimension::Safe => "safety",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for PerceptualDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerceptualDimension {
    type Err = RankerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "safe" | "safety" => Ok(PerceptualDimension::Safe),
            "lively" => Ok(PerceptualDimension::Lively),
            "boring" => Ok(PerceptualDimension::Boring),
            "wealthy" => Ok(PerceptualDimension::Wealthy),
            "depressing" => Ok(PerceptualDimension::Depressing),
            "beautiful" => Ok(PerceptualDimension::Beautiful),
            _ => Err(RankerError::UnknownDimension(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Left,
    Right,
    Tie,
}

impl Winner {
    /// Soft training target: left 1, right 0, tie 0.5.
    pub fn target(self) -> f64 {
        match self {
            Winner::Left => 1.0,
            Winner::Right => 0.0,
            Winner::Tie => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComparisonRecord {
    pub left: String,
    pub right: String,
    pub dimension: PerceptualDimension,
    pub winner: Winner,
}

#[derive(Serialize, Deserialize)]
struct ComparisonLine {
    left: String,
    right: String,
    dimension: String,
    winner: Winner,
}

pub fn parse_comparisons_jsonl<R: BufRead>(reader: R) -> Result<Vec<ComparisonRecord>, RankerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| RankerError::Io {
            line: line_no,
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ComparisonLine =
            serde_json::from_str(&line).map_err(|source| RankerError::Json {
                line: line_no,
                source,
            })?;
        if parsed.left == parsed.right {
            return Err(RankerError::SelfComparison {
                line: line_no,
                scene: parsed.left,
            });
        }
        out.push(ComparisonRecord {
            left: parsed.left,
            right: parsed.right,
            dimension: parsed.dimension.parse()?,
            winner: parsed.winner,
        });
    }
    Ok(out)
}

pub fn write_comparisons_jsonl<W: Write>(
    records: &[ComparisonRecord],
    mut out: W,
) -> std::io::Result<()> {
    for r in records {
        let line = ComparisonLine {
            left: r.left.clone(),
            right: r.right.clone(),
            dimension: r.dimension.as_str().to_string(),
            winner: r.winner,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Collapse repeated votes on the same unordered pair and dimension into one
/// record by majority; equal counts (or only tie votes) become a tie. The
/// output uses the orientation of the first vote seen and keeps first-seen order.
pub fn aggregate_majority(records: &[ComparisonRecord]) -> Vec<ComparisonRecord> {
    let mut order: Vec<(String, String, PerceptualDimension)> = Vec::new();
    let mut tally: HashMap<(String, String, PerceptualDimension), i64> = HashMap::new();
    for r in records {
        let forward = (r.left.clone(), r.right.clone(), r.dimension);
        let backward = (r.right.clone(), r.left.clone(), r.dimension);
        let (key, sign) = if tally.contains_key(&forward) {
            (forward, 1)
        } else if tally.contains_key(&backward) {
            (backward, -1)
        } else {
            order.push(forward.clone());
            (forward, 1)
        };
        let vote = match r.winner {
            Winner::Left => sign,
            Winner::Right => -sign,
            Winner::Tie => 0,
        };
        *tally.entry(key).or_insert(0) += vote;
    }
    order
        .into_iter()
        .map(|key| {
            let t = tally[&key];
            ComparisonRecord {
                left: key.0,
                right: key.1,
                dimension: key.2,
                winner: match t.signum() {
                    1 => Winner::Left,
                    -1 => Winner::Right,
                    _ => Winner::Tie,
                },
            }
        })
        .collect()
}

/// Scene embeddings keyed by scene id, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    rows: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        EmbeddingTable::default()
    }

    pub fn insert(&mut self, scene_id: impl Into<String>, embedding: Vec<f64>) {
        self.rows.insert(scene_id.into(), embedding);
    }

    pub fn get(&self, scene_id: &str) -> Option<&[f64]> {
        self.rows.get(scene_id).map(Vec::as_slice)
    }

    pub fn contains(&self, scene_id: &str) -> bool {
        self.rows.contains_key(scene_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.rows.iter()
    }

    fn lookup(&self, scene_id: &str) -> Result<&[f64], RankerError> {
        let row = self
            .get(scene_id)
            .ok_or_else(|| RankerError::UnresolvedScene(scene_id.to_string()))?;
        if row.len() != EMBED_DIM {
            return Err(RankerError::Width {
                expected: EMBED_DIM,
                found: row.len(),
            });
        }
        Ok(row)
    }

    /// Stack the embeddings of `ids` into a matrix.
    pub fn matrix(&self, ids: &[&str]) -> Result<Tensor, RankerError> {
        let mut t = Tensor::zeros(ids.len(), EMBED_DIM);
        for (i, id) in ids.iter().enumerate() {
            t.row_mut(i).copy_from_slice(self.lookup(id)?);
        }
        Ok(t)
    }

    /// TSV: scene id followed by the embedding values, shortest round-trip floats.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, row) in &self.rows {
            write!(out, "{id}")?;
            for v in row {
                write!(out, "\t{v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Read the TSV written by [`EmbeddingTable::write_tsv`]; `#` lines are comments.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut table = EmbeddingTable::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let row = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            if row.len() != EMBED_DIM {
                return Err(format!(
                    "line {}: {} values, expected {EMBED_DIM}",
                    i + 1,
                    row.len()
                ));
            }
            table.insert(id, row);
        }
        Ok(table)
    }
}

/// Per-dimension scorer MLP: `w1` 128x64, `b1` 1x64, `w2` 64x1, `b2` 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub params: Params,
}

impl ScorerParams {
    pub fn zeros() -> Self {
        let mut params = Params::new();
        params.insert("w1", Tensor::zeros(EMBED_DIM, SCORER_HIDDEN));
        params.insert("b1", Tensor::zeros(1, SCORER_HIDDEN));
        params.insert("w2", Tensor::zeros(SCORER_HIDDEN, 1));
        params.insert("b2", Tensor::zeros(1, 1));
        ScorerParams { params }
    }

    pub fn init(rng: &mut StreamRng) -> Self {
        let mut s = ScorerParams::zeros();
        for (name, (r, c)) in [("w1", (EMBED_DIM, SCORER_HIDDEN)), ("w2", (SCORER_HIDDEN, 1))] {
            let bound = (6.0 / (r + c) as f64).sqrt();
            let data = (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect();
            s.params
                .insert(name, Tensor::from_vec(r, c, data).expect("shape"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        params_to_json(&self.params)
    }

    pub fn from_json(text: &str) -> Result<Self, RankerError> {
        ScorerParams::from_params(params_from_json(text)?)
    }

    /// Accept `params` if it holds exactly the scorer tensors with the right shapes.
    pub fn from_params(params: Params) -> Result<Self, RankerError> {
        let expect = ScorerParams::zeros();
        for (name, t) in expect.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(RankerError::Config(format!(
                    "scorer tensor {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != expect.params.len() {
            return Err(RankerError::Config(format!(
                "scorer checkpoint has {} tensors, expected {}",
                params.len(),
                expect.params.len()
            )));
        }
        Ok(ScorerParams { params })
    }
}

/// Score every row of `z` (`r x 128`) on the tape; returns `r x 1`.
pub fn score_on(tape: &mut Tape, z: Var, bound: &Bound) -> Result<Var, AutodiffError> {
    let h = tape.matmul(z, bound.var("w1")?)?;
    let h = tape.add(h, bound.var("b1")?)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let s = tape.matmul(h, bound.var("w2")?)?;
    tape.add(s, bound.var("b2")?)
}

/// Scores for a batch of embeddings (`r x 128`).
pub fn score_rows(z: &Tensor, p: &ScorerParams) -> Result<Vec<f64>, RankerError> {
    if z.cols() != EMBED_DIM {
        return Err(RankerError::Width {
            expected: EMBED_DIM,
            found: z.cols(),
        });
    }
    let mut tape = Tape::new();
    let bound = p.params.bind_frozen(&mut tape);
    let zv = tape.constant(z.clone());
    let s = score_on(&mut tape, zv, &bound)?;
    Ok(tape.value(s).data().to_vec())
}

/// Score of one `1 x 128` embedding.
pub fn score(z: &Tensor, p: &ScorerParams) -> Result<f64, RankerError> {
    if z.rows() != 1 {
        return Err(RankerError::Width {
            expected: EMBED_DIM,
            found: z.len(),
        });
    }
    Ok(score_rows(z, p)?[0])
}

/// `sigmoid(s_left - s_right)`.
pub fn pair_prob(s_left: f64, s_right: f64) -> f64 {
    let d = s_left - s_right;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of probability `p` against target `t`, with `p` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn pair_loss(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub fine_tune: bool,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            epochs: 100,
            lr: 1e-3,
            batch_size: 256,
            seed: 0,
            fine_tune: false,
        }
    }
}

impl RankerConfig {
    fn validate(&self) -> Result<(), RankerError> {
        if self.batch_size == 0 {
            return Err(RankerError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(RankerError::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scorer: ScorerParams,
    /// Present only when the encoder was fine-tuned alongside the scorer.
    pub encoder: Option<EncoderModel>,
    pub train_loss: Vec<f64>,
    /// Empty when no validation comparisons were given.
    pub val_loss: Vec<f64>,
}

/// Mean pair loss of `comparisons` under frozen embeddings and scorer.
pub fn mean_pair_loss(
    comparisons: &[ComparisonRecord],
    embeddings: &EmbeddingTable,
    p: &ScorerParams,
) -> Result<f64, RankerError> {
    if comparisons.is_empty() {
        return Err(RankerError::EmptyComparisons);
    }
    let probs = pair_probs(comparisons, embeddings, p)?;
    Ok(probs
        .iter()
        .zip(comparisons)
        .map(|(&pr, c)| pair_loss(pr, c.winner.target()))
        .sum::<f64>()
        / comparisons.len() as f64)
}

/// Scene ids in first-seen order and per-comparison `(left, right)` positions.
fn index_scenes(batch: &[&ComparisonRecord]) -> (Vec<String>, Vec<usize>, Vec<usize>) {
    let mut ids: Vec<String> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    let mut left = Vec::with_capacity(batch.len());
    let mut right = Vec::with_capacity(batch.len());
    for c in batch {
        for (id, slot) in [(&c.left, &mut left), (&c.right, &mut right)] {
            let i = *pos.entry(id.as_str()).or_insert_with(|| {
                ids.push(id.clone());
                ids.len() - 1
            });
            slot.push(i);
        }
    }
    (ids, left, right)
}

/// Mean BCE of a batch given per-scene scores `s` (`k x 1`).
fn batch_loss_on(
    tape: &mut Tape,
    scores: Var,
    left: &[usize],
    right: &[usize],
    targets: &[f64],
) -> Result<Var, AutodiffError> {
    let sl = tape.gather_rows(scores, left)?;
    let sr = tape.gather_rows(scores, right)?;
    let d = tape.sub(sl, sr)?;
    let l = tape.bce_with_logits(d, targets)?;
    tape.mean(l)
}

/// Mean pair loss of a batch on the tape with the embeddings held fixed.
pub fn pair_loss_on(
    tape: &mut Tape,
    batch: &[&ComparisonRecord],
    embeddings: &EmbeddingTable,
    bound: &Bound,
) -> Result<Var, RankerError> {
    let (ids, left, right) = index_scenes(batch);
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let z = tape.constant(embeddings.matrix(&id_refs)?);
    let s = score_on(tape, z, bound)?;
    let targets: Vec<f64> = batch.iter().map(|c| c.winner.target()).collect();
    Ok(batch_loss_on(tape, s, &left, &right, &targets)?)
}

/// Fit one dimension's scorer on frozen embeddings.
pub fn train_dimension(
    train: &[ComparisonRecord],
    val: &[ComparisonRecord],
    embeddings: &EmbeddingTable,
    cfg: &RankerConfig,
) -> Result<TrainOutcome, RankerError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(RankerError::EmptyComparisons);
    }
    for c in train.iter().chain(val) {
        embeddings.lookup(&c.left)?;
        embeddings.lookup(&c.right)?;
    }
    let tag = train[0].dimension.as_str();
    let mut init_rng = stream(cfg.seed, &format!("init/{tag}"));
    let mut batch_rng = stream(cfg.seed, &format!("batch/{tag}"));
    let mut scorer = ScorerParams::init(&mut init_rng);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::new();

    for epoch in 0..cfg.epochs {
        let diverged = |source: AutodiffError| RankerError::Diverged { epoch, source };
        order.shuffle(&mut batch_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ComparisonRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let bound = scorer.params.bind(&mut tape);
            let loss = match pair_loss_on(&mut tape, &batch, embeddings, &bound) {
                Ok(l) => l,
                Err(RankerError::Autodiff(e)) => return Err(diverged(e)),
                Err(e) => return Err(e),
            };
            total += tape.value(loss).item() * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let step = bound.gradients(&grads, &scorer.params);
            adam.step(&mut scorer.params, &step)?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(AutodiffError::NonFinite { op: "epoch_loss" }));
        }
        train_loss.push(mean);
        if !val.is_empty() {
            val_loss.push(mean_pair_loss(val, embeddings, &scorer)?);
        }
    }
    Ok(TrainOutcome {
        scorer,
        encoder: None,
        train_loss,
        val_loss,
    })
}

/// Fit scorer and a private copy of the encoder jointly, back-propagating the
/// pair loss through the scene embeddings.
pub fn fine_tune_dimension(
    train: &[ComparisonRecord],
    val: &[ComparisonRecord],
    graphs: &BTreeMap<String, FeaturizedGraph>,
    encoder: &EncoderModel,
    cfg: &RankerConfig,
) -> Result<TrainOutcome, RankerError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(RankerError::EmptyComparisons);
    }
    for c in train.iter().chain(val) {
        for id in [&c.left, &c.right] {
            if !graphs.contains_key(id) {
                return Err(RankerError::UnresolvedScene(id.clone()));
            }
        }
    }
    let tag = train[0].dimension.as_str();
    let mut init_rng = stream(cfg.seed, &format!("init/{tag}"));
    let mut batch_rng = stream(cfg.seed, &format!("batch/{tag}"));
    let mut params = ScorerParams::init(&mut init_rng).params;
    params.extend(encoder.params.clone());
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::new();
    let split = |params: &Params| {
        let mut scorer = Params::new();
        for (name, t) in params.iter().filter(|(n, _)| !n.starts_with("enc.")) {
            scorer.insert(name.clone(), t.clone());
        }
        (
            ScorerParams { params: scorer },
            EncoderModel {
                params: params.filter_prefix("enc."),
                ..encoder.clone()
            },
        )
    };

    for epoch in 0..cfg.epochs {
        let diverged = |source: AutodiffError| RankerError::Diverged { epoch, source };
        order.shuffle(&mut batch_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ComparisonRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let (ids, left, right) = index_scenes(&batch);
            let targets: Vec<f64> = batch.iter().map(|c| c.winner.target()).collect();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let step = |tape: &mut Tape| -> Result<Var, AutodiffError> {
                let rows = ids
                    .iter()
                    .map(|id| scene_embedding_on(tape, &graphs[id], &bound, encoder.layers))
                    .collect::<Result<Vec<_>, _>>()?;
                let z = tape.stack_rows(&rows)?;
                let s = score_on(tape, z, &bound)?;
                batch_loss_on(tape, s, &left, &right, &targets)
            };
            let loss = step(&mut tape).map_err(diverged)?;
            total += tape.value(loss).item() * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let step = bound.gradients(&grads, &params);
            adam.step(&mut params, &step)?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(AutodiffError::NonFinite { op: "epoch_loss" }));
        }
        train_loss.push(mean);
        if !val.is_empty() {
            let (scorer, enc) = split(&params);
            let table = embed_for(val, graphs, &enc)?;
            val_loss.push(mean_pair_loss(val, &table, &scorer)?);
        }
    }
    let (scorer, enc) = split(&params);
    Ok(TrainOutcome {
        scorer,
        encoder: Some(enc),
        train_loss,
        val_loss,
    })
}

fn embed_for(
    comparisons: &[ComparisonRecord],
    graphs: &BTreeMap<String, FeaturizedGraph>,
    encoder: &EncoderModel,
) -> Result<EmbeddingTable, RankerError> {
    let ids: BTreeSet<&String> = comparisons
        .iter()
        .flat_map(|c| [&c.left, &c.right])
        .collect();
    let mut table = EmbeddingTable::new();
    for id in ids {
        let fg = graphs
            .get(id)
            .ok_or_else(|| RankerError::UnresolvedScene(id.clone()))?;
        let z = crate::mgae::scene_embedding(fg, encoder)?;
        table.insert(id.clone(), z.into_data());
    }
    Ok(table)
}

/// `P(left beats right)` for every comparison.
pub fn pair_probs(
    comparisons: &[ComparisonRecord],
    embeddings: &EmbeddingTable,
    p: &ScorerParams,
) -> Result<Vec<f64>, RankerError> {
    let refs: Vec<&ComparisonRecord> = comparisons.iter().collect();
    let (ids, left, right) = index_scenes(&refs);
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let scores = score_rows(&embeddings.matrix(&id_refs)?, p)?;
    Ok(left
        .iter()
        .zip(&right)
        .map(|(&l, &r)| pair_prob(scores[l], scores[r]))
        .collect())
}

/// Binary metrics with "left wins" as the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Dimension name, or a pooled label such as "all".
    pub label: String,
    pub n_pairs: usize,
    pub n_ties: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision: f64,
}

/// AUC as the Mann-Whitney statistic with midranks for tied scores.
/// Returns 0.5 when either class is empty.
pub fn mann_whitney_auc(probs: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64)
}

/// Metrics from predicted probabilities and observed outcomes. Ties are
/// counted but excluded; a probability of exactly 0.5 predicts "right".
pub fn evaluate_probs(
    label: impl Into<String>,
    probs: &[f64],
    outcomes: &[Winner],
) -> Result<MetricReport, RankerError> {
    assert_eq!(probs.len(), outcomes.len());
    let mut kept_probs = Vec::with_capacity(probs.len());
    let mut positive = Vec::with_capacity(probs.len());
    let mut n_ties = 0;
    for (&p, &w) in probs.iter().zip(outcomes) {
        match w {
            Winner::Tie => n_ties += 1,
            Winner::Left | Winner::Right => {
                kept_probs.push(p);
                positive.push(w == Winner::Left);
            }
        }
    }
    if kept_probs.is_empty() {
        return Err(RankerError::NoScoreablePairs);
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &pos) in kept_probs.iter().zip(&positive) {
        match (p > 0.5, pos) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let n = kept_probs.len() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    // Harmonic mean of precision and recall, in the form with one rounding.
    let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
    Ok(MetricReport {
        label: label.into(),
        n_pairs: kept_probs.len(),
        n_ties,
        accuracy: (tp + tn) as f64 / n,
        auc: mann_whitney_auc(&kept_probs, &positive),
        recall,
        f1,
        precision,
    })
}

pub fn evaluate(
    comparisons: &[ComparisonRecord],
    embeddings: &EmbeddingTable,
    p: &ScorerParams,
) -> Result<MetricReport, RankerError> {
    if comparisons.is_empty() {
        return Err(RankerError::EmptyComparisons);
    }
    let label = comparisons[0].dimension.as_str();
    let probs = pair_probs(comparisons, embeddings, p)?;
    let outcomes: Vec<Winner> = comparisons.iter().map(|c| c.winner).collect();
    evaluate_probs(label, &probs, &outcomes)
}

/// Per-dimension evaluation plus pooled and dimension-mean summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub per_dimension: BTreeMap<PerceptualDimension, MetricReport>,
    /// Unweighted mean of per-dimension accuracies.
    pub mean_accuracy: f64,
    /// Metrics over all dimensions' pairs pooled together.
    pub pooled: MetricReport,
    /// Unweighted mean of each per-dimension metric.
    pub dimension_mean: MetricReport,
}

/// A scorer per dimension, optionally with its own fine-tuned encoder.
pub type ScorerSet = BTreeMap<PerceptualDimension, ScorerParams>;

pub fn group_by_dimension(
    comparisons: &[ComparisonRecord],
) -> BTreeMap<PerceptualDimension, Vec<ComparisonRecord>> {
    let mut out: BTreeMap<PerceptualDimension, Vec<ComparisonRecord>> = BTreeMap::new();
    for c in comparisons {
        out.entry(c.dimension).or_default().push(c.clone());
    }
    out
}

fn check_scorers<T>(
    present: impl Iterator<Item = PerceptualDimension>,
    scorers: &BTreeMap<PerceptualDimension, T>,
) -> Result<(), RankerError> {
    let missing: Vec<String> = present
        .filter(|d| !scorers.contains_key(d))
        .map(|d| d.as_str().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(RankerError::MissingScorer(missing))
    }
}

/// Evaluate all dimensions with one embedding table per dimension (they
/// differ only when encoders were fine-tuned).
pub fn evaluate_all_with<'a>(
    comparisons: &[ComparisonRecord],
    embeddings_for: impl Fn(PerceptualDimension) -> &'a EmbeddingTable,
    scorers: &ScorerSet,
) -> Result<DimensionReport, RankerError> {
    let groups = group_by_dimension(comparisons);
    check_scorers(groups.keys().copied(), scorers)?;
    let mut per_dimension = BTreeMap::new();
    let mut all_probs = Vec::new();
    let mut all_outcomes = Vec::new();
    for (dim, comps) in &groups {
        let table = embeddings_for(*dim);
        let probs = pair_probs(comps, table, &scorers[dim])?;
        let outcomes: Vec<Winner> = comps.iter().map(|c| c.winner).collect();
        match evaluate_probs(dim.as_str(), &probs, &outcomes) {
            Ok(r) => {
                per_dimension.insert(*dim, r);
            }
            Err(RankerError::NoScoreablePairs) => {}
            Err(e) => return Err(e),
        }
        all_probs.extend(probs);
        all_outcomes.extend(outcomes);
    }
    if per_dimension.is_empty() {
        return Err(RankerError::NoScoreablePairs);
    }
    let pooled = evaluate_probs("pooled", &all_probs, &all_outcomes)?;
    let k = per_dimension.len() as f64;
    let avg = |f: fn(&MetricReport) -> f64| per_dimension.values().map(f).sum::<f64>() / k;
    let dimension_mean = MetricReport {
        label: "dimension-mean".into(),
        n_pairs: per_dimension.values().map(|r| r.n_pairs).sum(),
        n_ties: per_dimension.values().map(|r| r.n_ties).sum(),
        accuracy: avg(|r| r.accuracy),
        auc: avg(|r| r.auc),
        recall: avg(|r| r.recall),
        f1: avg(|r| r.f1),
        precision: avg(|r| r.precision),
    };
    Ok(DimensionReport {
        mean_accuracy: dimension_mean.accuracy,
        per_dimension,
        pooled,
        dimension_mean,
    })
}

pub fn evaluate_all(
    comparisons: &[ComparisonRecord],
    embeddings: &EmbeddingTable,
    scorers: &ScorerSet,
) -> Result<DimensionReport, RankerError> {
    evaluate_all_with(comparisons, |_| embeddings, scorers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionScore {
    pub scene_id: String,
    pub dimension: PerceptualDimension,
    pub score: f64,
}

/// Score every scene on every dimension with a scorer, ordered by
/// `(scene_id, dimension)`.
pub fn score_dataset_with<'a>(
    scene_ids: &[String],
    embeddings_for: impl Fn(PerceptualDimension) -> &'a EmbeddingTable,
    scorers: &ScorerSet,
) -> Result<Vec<PerceptionScore>, RankerError> {
    let mut ids: Vec<&str> = scene_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut per_dim = Vec::new();
    for (dim, p) in scorers {
        let scores = score_rows(&embeddings_for(*dim).matrix(&ids)?, p)?;
        per_dim.push((*dim, scores));
    }
    let mut out = Vec::with_capacity(ids.len() * per_dim.len());
    for (i, id) in ids.iter().enumerate() {
        for (dim, scores) in &per_dim {
            out.push(PerceptionScore {
                scene_id: id.to_string(),
                dimension: *dim,
                score: scores[i],
            });
        }
    }
    Ok(out)
}

pub fn score_dataset(
    scene_ids: &[String],
    embeddings: &EmbeddingTable,
    scorers: &ScorerSet,
) -> Result<Vec<PerceptionScore>, RankerError> {
    score_dataset_with(scene_ids, |_| embeddings, scorers)
}
