//! End-to-end orchestration: configuration, scene-level splits, and the
//! staged run that writes every artifact into one output directory.
//!
//! Each stage reads what earlier stages wrote, so stages can be invoked one
//! at a time or all together through [`run_pipeline`]. Every artifact starts
//! with a `# config_hash=<hex> seed=<n>` line (JSON checkpoints carry the same
//! fields inside their header instead).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    cross_city_report, diversity_correlation, motif_lift, CrossCityRow, ScoredScene,
    DEFAULT_MIN_SUPPORT, DEFAULT_QUANTILE,
};
use crate::autodiff::{Params, TensorRecord};
use crate::graph::{graph_stats, parse_scene_jsonl, validate_graph, SceneGraph};
use crate::mgae::{
    encoder_from_json, encoder_to_json_tagged, pretrain_with_progress, scene_embedding,
    EncoderModel, MgaeError, PretrainConfig,
};
use crate::ranker::{
    aggregate_majority, evaluate_all_with, fine_tune_dimension, group_by_dimension,
    parse_comparisons_jsonl, score_dataset_with, train_dimension, ComparisonRecord,
    DimensionReport, EmbeddingTable, PerceptualDimension, RankerConfig, RankerError,
    ScorerParams, ScorerSet, TrainOutcome,
};
use crate::report::{self, Precision, Table};
use crate::rng::stream;
use crate::text::{FeaturizedGraph, TextEmbedder, TextError, DEFAULT_HASH_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Validate,
    Split,
    Featurize,
    Pretrain,
    Embed,
    Train,
    Evaluate,
    Score,
    Motifs,
    CrossCity,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Validate => "validate",
            Stage::Split => "split",
            Stage::Featurize => "featurize",
            Stage::Pretrain => "pretrain",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Score => "score",
            Stage::Motifs => "motifs",
            Stage::CrossCity => "cross-city",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Usage,
    Data,
    Divergence,
}

#[derive(Debug, Error)]
#[error("stage {stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn usage(stage: Stage, message: impl Into<String>) -> Self {
        Self::new(stage, FailureKind::Usage, message)
    }

    pub fn data(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, FailureKind::Data, message.to_string())
    }

    /// Process exit code: 1 usage, 2 data, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Usage => 1,
            FailureKind::Data => 2,
            FailureKind::Divergence => 3,
        }
    }

    fn from_mgae(stage: Stage, e: MgaeError) -> Self {
        let kind = match e {
            MgaeError::Diverged { .. } => FailureKind::Divergence,
            MgaeError::Config(_) => FailureKind::Usage,
            _ => FailureKind::Data,
        };
        Self::new(stage, kind, e.to_string())
    }

    fn from_ranker(stage: Stage, e: RankerError) -> Self {
        let kind = match e {
            RankerError::Diverged { .. } => FailureKind::Divergence,
            RankerError::Config(_) => FailureKind::Usage,
            RankerError::Mgae(MgaeError::Diverged { .. }) => FailureKind::Divergence,
            _ => FailureKind::Data,
        };
        Self::new(stage, kind, e.to_string())
    }
}

/// Train:val:test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl SplitRatio {
    pub fn total(self) -> u32 {
        self.train + self.val + self.test
    }
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 6,
            val: 3,
            test: 1,
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || format!("split ratio {s:?} must look like 6:3:1 with positive integers");
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums = parts
            .iter()
            .map(|p| p.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        if nums.contains(&0) {
            return Err(bad());
        }
        Ok(SplitRatio {
            train: nums[0],
            val: nums[1],
            test: nums[2],
        })
    }
}

/// Every recognised configuration key with a one-line description.
pub const CONFIG_KEYS: [(&str, &str); 24] = [
    ("scenes", "scene-graph JSONL (required)"),
    ("comparisons", "pairwise comparison JSONL (required)"),
    ("embedding_table", "optional text-embedding JSONL table replacing hashed features"),
    ("out", "output directory (default: out)"),
    ("target_scenes", "scene-graph JSONL of the target city for cross-city"),
    ("target_comparisons", "comparison JSONL of the target city for cross-city"),
    ("split", "train:val:test ratio (default 6:3:1)"),
    ("seed", "master seed for every random stream (default 0)"),
    ("hash_dim", "hashed feature width (default 64)"),
    ("hash_seed", "seed of the trigram hash (default 0)"),
    ("mask_rate", "share of nodes masked per graph (default 0.5)"),
    ("gamma", "scaled cosine error exponent (default 2)"),
    ("pretrain_epochs", "pretraining epochs (default 200)"),
    ("pretrain_batch_size", "graphs per pretraining step (default 32)"),
    ("pretrain_lr", "pretraining learning rate (default 0.001)"),
    ("hidden", "encoder hidden width (default 256)"),
    ("layers", "message-passing layers (default 2)"),
    ("ranker_epochs", "scorer epochs (default 100)"),
    ("ranker_lr", "scorer learning rate (default 0.001)"),
    ("ranker_batch_size", "comparisons per scorer step (default 256)"),
    ("fine_tune", "also update the encoder while training scorers (default false)"),
    ("aggregate", "majority-vote repeated comparisons of a pair (default false)"),
    ("motif_quantile", "bucket share for motif lift (default 0.25)"),
    ("motif_min_support", "minimum scenes containing a motif (default 5)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenes: Option<PathBuf>,
    pub comparisons: Option<PathBuf>,
    pub embedding_table: Option<PathBuf>,
    pub out: PathBuf,
    pub target_scenes: Option<PathBuf>,
    pub target_comparisons: Option<PathBuf>,
    pub split: SplitRatio,
    pub seed: u64,
    pub hash_dim: usize,
    pub hash_seed: u64,
    pub pretrain: PretrainConfig,
    pub ranker: RankerConfig,
    pub aggregate: bool,
    pub motif_quantile: f64,
    pub motif_min_support: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenes: None,
            comparisons: None,
            embedding_table: None,
            out: PathBuf::from("out"),
            target_scenes: None,
            target_comparisons: None,
            split: SplitRatio::default(),
            seed: 0,
            hash_dim: DEFAULT_HASH_DIM,
            hash_seed: 0,
            pretrain: PretrainConfig::default(),
            ranker: RankerConfig::default(),
            aggregate: false,
            motif_quantile: DEFAULT_QUANTILE,
            motif_min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{key}: {e} ({v:?})"))
}

impl RunConfig {
    /// Set one key. Relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let v = value.trim();
        let path = || {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match key.trim() {
            "scenes" => self.scenes = Some(path()),
            "comparisons" => self.comparisons = Some(path()),
            "embedding_table" => self.embedding_table = Some(path()),
            "out" => self.out = path(),
            "target_scenes" => self.target_scenes = Some(path()),
            "target_comparisons" => self.target_comparisons = Some(path()),
            "split" => self.split = v.parse()?,
            "seed" => self.seed = parse_num("seed", v)?,
            "hash_dim" => self.hash_dim = parse_num("hash_dim", v)?,
            "hash_seed" => self.hash_seed = parse_num("hash_seed", v)?,
            "mask_rate" => self.pretrain.mask_rate = parse_num("mask_rate", v)?,
            "gamma" => self.pretrain.gamma = parse_num("gamma", v)?,
            "pretrain_epochs" => self.pretrain.epochs = parse_num("pretrain_epochs", v)?,
            "pretrain_batch_size" => self.pretrain.batch_size = parse_num("pretrain_batch_size", v)?,
            "pretrain_lr" => self.pretrain.lr = parse_num("pretrain_lr", v)?,
            "hidden" => self.pretrain.hidden = parse_num("hidden", v)?,
            "layers" => self.pretrain.layers = parse_num("layers", v)?,
            "ranker_epochs" => self.ranker.epochs = parse_num("ranker_epochs", v)?,
            "ranker_lr" => self.ranker.lr = parse_num("ranker_lr", v)?,
            "ranker_batch_size" => self.ranker.batch_size = parse_num("ranker_batch_size", v)?,
            "fine_tune" => self.ranker.fine_tune = parse_bool(v)?,
            "aggregate" => self.aggregate = parse_bool(v)?,
            "motif_quantile" => self.motif_quantile = parse_num("motif_quantile", v)?,
            "motif_min_support" => self.motif_min_support = parse_num("motif_min_support", v)?,
            other => return Err(format!("unknown configuration key {other:?}")),
        }
        Ok(())
    }

    /// Apply a flat `key = value` file; `#` starts a comment line.
    pub fn apply_file_text(&mut self, text: &str, base: &Path) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k, v, base).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    /// Load a config file; relative paths inside resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::usage(Stage::Config, format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = RunConfig::default();
        cfg.apply_file_text(&text, base)
            .map_err(|e| PipelineError::usage(Stage::Config, format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::usage(Stage::Config, m));
        if !(self.motif_quantile > 0.0 && self.motif_quantile <= 0.5) {
            return bad(format!("motif_quantile {} outside (0, 0.5]", self.motif_quantile));
        }
        if self.ranker.batch_size == 0 || !(self.ranker.lr > 0.0) {
            return bad("ranker_batch_size and ranker_lr must be positive".into());
        }
        if let Err(e) = self.pretrain_config().validate() {
            return bad(e.to_string());
        }
        Ok(())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn ranker_config(&self) -> RankerConfig {
        RankerConfig {
            seed: self.seed,
            ..self.ranker.clone()
        }
    }

    /// Every numeric setting as sorted `key=value` lines; paths are left out
    /// because input contents enter the hash separately.
    pub fn canonical(&self) -> String {
        let p = &self.pretrain;
        let r = &self.ranker;
        let mut lines = [
            format!("aggregate={}", self.aggregate),
            format!("fine_tune={}", r.fine_tune),
            format!("gamma={:?}", p.gamma),
            format!("hash_dim={}", self.hash_dim),
            format!("hash_seed={}", self.hash_seed),
            format!("hidden={}", p.hidden),
            format!("layers={}", p.layers),
            format!("mask_rate={:?}", p.mask_rate),
            format!("motif_min_support={}", self.motif_min_support),
            format!("motif_quantile={:?}", self.motif_quantile),
            format!("pretrain_batch_size={}", p.batch_size),
            format!("pretrain_epochs={}", p.epochs),
            format!("pretrain_lr={:?}", p.lr),
            format!("ranker_batch_size={}", r.batch_size),
            format!("ranker_epochs={}", r.epochs),
            format!("ranker_lr={:?}", r.lr),
            format!("seed={}", self.seed),
            format!("split={}", self.split),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }
}

/// Scene-level partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

impl DatasetSplit {
    pub fn part_of(&self) -> BTreeMap<&str, Part> {
        let mut m = BTreeMap::new();
        for (ids, part) in [(&self.train, Part::Train), (&self.val, Part::Val), (&self.test, Part::Test)] {
            for id in ids {
                m.insert(id.as_str(), part);
            }
        }
        m
    }
}

/// Seeded Fisher-Yates shuffle of the (sorted, deduplicated) ids; test takes
/// `floor(n * test / total)`, val `floor(n * val / total)`, train the rest.
/// Each list is returned sorted.
pub fn split_dataset(
    scene_ids: &[String],
    ratio: SplitRatio,
    seed: u64,
) -> Result<DatasetSplit, String> {
    let mut ids: Vec<String> = scene_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let total = ratio.total() as usize;
    if n < total {
        return Err(format!("{n} scenes cannot be split {ratio} (need at least {total})"));
    }
    ids.shuffle(&mut stream(seed, "split"));
    let n_test = n * ratio.test as usize / total;
    let n_val = n * ratio.val as usize / total;
    let mut test = ids[..n_test].to_vec();
    let mut val = ids[n_test..n_test + n_val].to_vec();
    let mut train = ids[n_test + n_val..].to_vec();
    test.sort();
    val.sort();
    train.sort();
    Ok(DatasetSplit { train, val, test })
}

/// Comparisons whose two scenes share a split; the rest are dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitComparisons {
    pub train: Vec<ComparisonRecord>,
    pub val: Vec<ComparisonRecord>,
    pub test: Vec<ComparisonRecord>,
    pub dropped: usize,
}

pub fn assign_comparisons(split: &DatasetSplit, comparisons: &[ComparisonRecord]) -> SplitComparisons {
    let part = split.part_of();
    let mut out = SplitComparisons::default();
    for c in comparisons {
        match (part.get(c.left.as_str()), part.get(c.right.as_str())) {
            (Some(a), Some(b)) if a == b => match a {
                Part::Train => out.train.push(c.clone()),
                Part::Val => out.val.push(c.clone()),
                Part::Test => out.test.push(c.clone()),
            },
            _ => out.dropped += 1,
        }
    }
    out
}

/// Comparisons in `assigned` that touch a scene outside `part`'s scene list.
pub fn audit_leakage<'a>(
    split: &DatasetSplit,
    part: Part,
    assigned: &'a [ComparisonRecord],
) -> Vec<&'a ComparisonRecord> {
    let members = split.part_of();
    assigned
        .iter()
        .filter(|c| {
            members.get(c.left.as_str()) != Some(&part) || members.get(c.right.as_str()) != Some(&part)
        })
        .collect()
}

/// Parsed inputs of a run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graphs: Vec<SceneGraph>,
    pub comparisons: Vec<ComparisonRecord>,
    /// Records read before optional majority aggregation.
    pub raw_comparisons: usize,
}

impl Dataset {
    pub fn scene_ids(&self) -> Vec<String> {
        self.graphs.iter().map(|g| g.scene_id.clone()).collect()
    }
}

fn read_file(stage: Stage, path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))
}

/// Parse scenes and comparisons and check that every referenced scene exists.
pub fn load_dataset(
    scenes: &[u8],
    comparisons: &[u8],
    aggregate: bool,
    stage: Stage,
) -> Result<Dataset, PipelineError> {
    let graphs = parse_scene_jsonl(scenes).map_err(|e| PipelineError::data(stage, format!("scenes: {e}")))?;
    if graphs.is_empty() {
        return Err(PipelineError::data(stage, "scenes: no scene graphs"));
    }
    let raw = parse_comparisons_jsonl(comparisons)
        .map_err(|e| PipelineError::data(stage, format!("comparisons: {e}")))?;
    let known: BTreeSet<&str> = graphs.iter().map(|g| g.scene_id.as_str()).collect();
    let unknown: BTreeSet<&str> = raw
        .iter()
        .flat_map(|c| [c.left.as_str(), c.right.as_str()])
        .filter(|id| !known.contains(id))
        .collect();
    if !unknown.is_empty() {
        let shown: Vec<&str> = unknown.iter().take(5).copied().collect();
        return Err(PipelineError::data(
            stage,
            format!(
                "comparisons reference {} unknown scene(s): {}",
                unknown.len(),
                shown.join(", ")
            ),
        ));
    }
    let raw_comparisons = raw.len();
    let comparisons = if aggregate { aggregate_majority(&raw) } else { raw };
    Ok(Dataset {
        graphs,
        comparisons,
        raw_comparisons,
    })
}

/// Names of the files a full run produces, relative to the output directory.
pub mod files {
    pub const SUMMARY: &str = "dataset_summary";
    pub const SPLIT: &str = "split";
    pub const ENCODER: &str = "encoder.json";
    pub const PRETRAIN_LOSS: &str = "pretrain_loss";
    pub const EMBEDDINGS: &str = "embeddings.tsv";
    pub const SCORERS: &str = "scorers";
    pub const ENCODERS: &str = "encoders";
    pub const TRAIN_LOSS: &str = "train_loss";
    pub const TABLE1: &str = "table1";
    pub const TABLE2: &str = "table2";
    pub const METRICS: &str = "metrics";
    pub const SCORES: &str = "scores";
    pub const MOTIFS: &str = "motifs";
    pub const DIVERSITY: &str = "diversity";
    pub const CROSS_CITY: &str = "cross_city";
    pub const FAILED: &str = "FAILED";
}

#[derive(Serialize, Deserialize)]
struct ScorerFile {
    config_hash: String,
    seed: u64,
    dimension: PerceptualDimension,
    params: BTreeMap<String, TensorRecord>,
}

/// A configured run bound to its inputs.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub dataset: Dataset,
    config_hash: String,
    embedding_table: Option<Vec<u8>>,
}

impl Pipeline {
    /// Read and check all inputs. Failures here belong to stage "ingest".
    pub fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| PipelineError::usage(Stage::Config, format!("missing required key {key:?}")))
        };
        let scenes_path = need(&cfg.scenes, "scenes")?;
        let comps_path = need(&cfg.comparisons, "comparisons")?;
        let scenes = read_file(Stage::Ingest, &scenes_path)?;
        let comps = read_file(Stage::Ingest, &comps_path)?;
        let embedding_table = match &cfg.embedding_table {
            Some(p) => Some(read_file(Stage::Ingest, p)?),
            None => None,
        };
        let mut h = Sha256::new();
        h.update(cfg.canonical().as_bytes());
        for bytes in [Some(&scenes), Some(&comps), embedding_table.as_ref()].into_iter().flatten() {
            h.update(Sha256::digest(bytes));
        }
        let config_hash = hex::encode(h.finalize());
        let dataset = load_dataset(&scenes, &comps, cfg.aggregate, Stage::Ingest)?;
        let p = Pipeline {
            cfg,
            dataset,
            config_hash,
            embedding_table,
        };
        p.embedder()?;
        Ok(p)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out
    }

    fn provenance(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.cfg.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn write(&self, stage: Stage, name: &str, contents: &str) -> Result<PathBuf, PipelineError> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| PipelineError::data(stage, format!("{}: {e}", dir.display())))?;
        }
        fs::write(&path, contents)
            .map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Write `<name>.tsv` and `<name>.txt`, both under the provenance line.
    fn write_table(&self, stage: Stage, name: &str, table: &Table) -> Result<(), PipelineError> {
        self.write(stage, &format!("{name}.tsv"), &(self.provenance() + &table.to_tsv()))?;
        self.write(stage, &format!("{name}.txt"), &(self.provenance() + &table.to_text()))?;
        Ok(())
    }

    fn read(&self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        let path = self.path(name);
        fs::read_to_string(&path).map_err(|e| {
            PipelineError::data(
                stage,
                format!("{}: {e} (run the earlier stages first)", path.display()),
            )
        })
    }

    pub fn embedder(&self) -> Result<TextEmbedder, PipelineError> {
        let err = |e: TextError| PipelineError::data(Stage::Featurize, e);
        match &self.embedding_table {
            Some(bytes) => TextEmbedder::load_table(bytes.as_slice(), self.cfg.hash_seed).map_err(err),
            None => TextEmbedder::hashed(self.cfg.hash_dim, self.cfg.hash_seed)
                .map_err(|e| PipelineError::usage(Stage::Config, e.to_string())),
        }
    }

    pub fn featurize(&self, graphs: &[SceneGraph]) -> Result<Vec<FeaturizedGraph>, PipelineError> {
        let embedder = self.embedder()?;
        graphs
            .iter()
            .map(|g| {
                embedder
                    .featurize_graph(g)
                    .map_err(|e| PipelineError::data(Stage::Featurize, format!("{}: {e}", g.scene_id)))
            })
            .collect()
    }

    pub fn split(&self) -> Result<(DatasetSplit, SplitComparisons), PipelineError> {
        let split = split_dataset(&self.dataset.scene_ids(), self.cfg.split, self.cfg.seed)
            .map_err(|e| PipelineError::data(Stage::Split, e))?;
        let assigned = assign_comparisons(&split, &self.dataset.comparisons);
        for (part, comps) in [
            (Part::Train, &assigned.train),
            (Part::Val, &assigned.val),
            (Part::Test, &assigned.test),
        ] {
            let leaks = audit_leakage(&split, part, comps);
            if !leaks.is_empty() {
                return Err(PipelineError::data(
                    Stage::Split,
                    format!("{} comparison(s) leak into the {} split", leaks.len(), part.name()),
                ));
            }
        }
        Ok((split, assigned))
    }

    /// Stage "validate": dataset summary.
    pub fn write_summary(&self) -> Result<(), PipelineError> {
        let ds = &self.dataset;
        let mut warnings = 0;
        let (mut nodes, mut edges) = (0usize, 0usize);
        let mut cities: BTreeSet<&str> = BTreeSet::new();
        for g in &ds.graphs {
            warnings += validate_graph(g).warnings.len();
            let s = graph_stats(g);
            nodes += s.node_count;
            edges += s.edge_count;
            if let Some(c) = &g.city {
                cities.insert(c);
            }
        }
        let n = ds.graphs.len() as f64;
        let mut rows = vec![
            ("scenes".to_string(), ds.graphs.len().to_string()),
            ("cities".to_string(), cities.len().to_string()),
            ("validation_warnings".to_string(), warnings.to_string()),
            ("mean_nodes".to_string(), report::fmt_fixed(nodes as f64 / n, 2)),
            ("mean_edges".to_string(), report::fmt_fixed(edges as f64 / n, 2)),
            ("comparison_records".to_string(), ds.raw_comparisons.to_string()),
            ("comparisons_used".to_string(), ds.comparisons.len().to_string()),
        ];
        for (dim, comps) in group_by_dimension(&ds.comparisons) {
            rows.push((format!("comparisons_{dim}"), comps.len().to_string()));
        }
        let table = Table {
            header: vec!["field".into(), "value".into()],
            rows: rows.into_iter().map(|(k, v)| vec![k, v]).collect(),
        };
        self.write_table(Stage::Validate, files::SUMMARY, &table)
    }

    /// Stage "split": the manifest lists every scene with its split.
    pub fn write_split(&self) -> Result<(DatasetSplit, SplitComparisons), PipelineError> {
        let (split, assigned) = self.split()?;
        let mut rows: Vec<Vec<String>> = split
            .part_of()
            .into_iter()
            .map(|(id, part)| vec![id.to_string(), part.name().to_string()])
            .collect();
        rows.sort();
        let manifest = Table {
            header: vec!["scene_id".into(), "split".into()],
            rows,
        };
        let counts = format!(
            "# scenes train={} val={} test={}\n# comparisons train={} val={} test={} dropped={}\n",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            assigned.train.len(),
            assigned.val.len(),
            assigned.test.len(),
            assigned.dropped
        );
        self.write(
            Stage::Split,
            &format!("{}.tsv", files::SPLIT),
            &(self.provenance() + &counts + &manifest.to_tsv()),
        )?;
        let summary = Table {
            header: vec!["split".into(), "scenes".into(), "comparisons".into()],
            rows: vec![
                vec!["train".into(), split.train.len().to_string(), assigned.train.len().to_string()],
                vec!["val".into(), split.val.len().to_string(), assigned.val.len().to_string()],
                vec!["test".into(), split.test.len().to_string(), assigned.test.len().to_string()],
                vec!["dropped".into(), "-".into(), assigned.dropped.to_string()],
            ],
        };
        self.write(
            Stage::Split,
            &format!("{}.txt", files::SPLIT),
            &(self.provenance() + &summary.to_text()),
        )?;
        Ok((split, assigned))
    }

    fn graphs_by_id(&self) -> BTreeMap<&str, &SceneGraph> {
        self.dataset.graphs.iter().map(|g| (g.scene_id.as_str(), g)).collect()
    }

    /// Stage "pretrain": fit the autoencoder on training-split scenes only.
    pub fn pretrain(&self, mut log: impl FnMut(&str)) -> Result<EncoderModel, PipelineError> {
        let (split, _) = self.split()?;
        let by_id = self.graphs_by_id();
        let train: Vec<SceneGraph> = split.train.iter().map(|id| by_id[id.as_str()].clone()).collect();
        let fgs = self.featurize(&train)?;
        let cfg = self.cfg.pretrain_config();
        let epochs = cfg.epochs;
        let out = pretrain_with_progress(&fgs, &cfg, |epoch, loss| {
            if epoch == 0 || (epoch + 1) % 20 == 0 || epoch + 1 == epochs {
                log(&format!("pretrain epoch {}/{epochs}: loss {loss:.6}", epoch + 1));
            }
        })
        .map_err(|e| PipelineError::from_mgae(Stage::Pretrain, e))?;
        self.write(
            Stage::Pretrain,
            files::ENCODER,
            &encoder_to_json_tagged(&out.encoder, &cfg, Some(&self.config_hash)),
        )?;
        let losses = Table {
            header: vec!["epoch".into(), "loss".into()],
            rows: out
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(i, l)| vec![(i + 1).to_string(), format!("{l:?}")])
                .collect(),
        };
        self.write_table(Stage::Pretrain, files::PRETRAIN_LOSS, &losses)?;
        Ok(out.encoder)
    }

    fn load_encoder_file(&self, stage: Stage, name: &str) -> Result<EncoderModel, PipelineError> {
        let text = self.read(stage, name)?;
        let (model, header) =
            encoder_from_json(&text).map_err(|e| PipelineError::data(stage, format!("{name}: {e}")))?;
        if header.config_hash.as_deref() != Some(self.config_hash.as_str()) {
            return Err(PipelineError::data(
                stage,
                format!("{name} was produced by a different configuration or input; rerun pretrain"),
            ));
        }
        Ok(model)
    }

    pub fn load_encoder(&self, stage: Stage) -> Result<EncoderModel, PipelineError> {
        self.load_encoder_file(stage, files::ENCODER)
    }

    fn embed_graphs(
        &self,
        stage: Stage,
        fgs: &[FeaturizedGraph],
        encoder: &EncoderModel,
    ) -> Result<EmbeddingTable, PipelineError> {
        let mut table = EmbeddingTable::new();
        for fg in fgs {
            let z = scene_embedding(fg, encoder).map_err(|e| PipelineError::from_mgae(stage, e))?;
            table.insert(fg.graph.scene_id.clone(), z.into_data());
        }
        Ok(table)
    }

    /// Stage "embed": 128-wide embedding of every scene.
    pub fn embed(&self) -> Result<EmbeddingTable, PipelineError> {
        let encoder = self.load_encoder(Stage::Embed)?;
        let fgs = self.featurize(&self.dataset.graphs)?;
        let table = self.embed_graphs(Stage::Embed, &fgs, &encoder)?;
        let mut buf = self.provenance().into_bytes();
        table
            .write_tsv(&mut buf)
            .map_err(|e| PipelineError::data(Stage::Embed, e))?;
        self.write(Stage::Embed, files::EMBEDDINGS, &String::from_utf8(buf).expect("utf8"))?;
        Ok(table)
    }

    pub fn load_embeddings(&self, stage: Stage) -> Result<EmbeddingTable, PipelineError> {
        let text = self.read(stage, files::EMBEDDINGS)?;
        self.check_provenance(stage, files::EMBEDDINGS, &text)?;
        EmbeddingTable::read_tsv(text.as_bytes())
            .map_err(|e| PipelineError::data(stage, format!("{}: {e}", files::EMBEDDINGS)))
    }

    fn check_provenance(&self, stage: Stage, name: &str, text: &str) -> Result<(), PipelineError> {
        if !text.starts_with(&self.provenance()) {
            return Err(PipelineError::data(
                stage,
                format!("{name} was produced by a different configuration or input; rerun earlier stages"),
            ));
        }
        Ok(())
    }

    /// Stage "train": one scorer per dimension with training comparisons.
    pub fn train(&self, mut log: impl FnMut(&str)) -> Result<ScorerSet, PipelineError> {
        let (_, assigned) = self.split()?;
        let cfg = self.cfg.ranker_config();
        let train = group_by_dimension(&assigned.train);
        let val = group_by_dimension(&assigned.val);
        if train.is_empty() {
            return Err(PipelineError::data(Stage::Train, "no comparisons fall inside the training split"));
        }
        let mut outcomes: BTreeMap<PerceptualDimension, TrainOutcome> = BTreeMap::new();
        if cfg.fine_tune {
            let encoder = self.load_encoder(Stage::Train)?;
            let fgs = self.featurize(&self.dataset.graphs)?;
            let graphs: BTreeMap<String, FeaturizedGraph> =
                fgs.into_iter().map(|fg| (fg.graph.scene_id.clone(), fg)).collect();
            for (dim, comps) in &train {
                let v = val.get(dim).map(Vec::as_slice).unwrap_or(&[]);
                let out = fine_tune_dimension(comps, v, &graphs, &encoder, &cfg)
                    .map_err(|e| PipelineError::from_ranker(Stage::Train, e))?;
                log(&format!("trained {dim} (fine-tuned): final loss {:.6}", out.train_loss.last().unwrap_or(&f64::NAN)));
                outcomes.insert(*dim, out);
            }
        } else {
            let table = self.load_embeddings(Stage::Train)?;
            for (dim, comps) in &train {
                let v = val.get(dim).map(Vec::as_slice).unwrap_or(&[]);
                let out = train_dimension(comps, v, &table, &cfg)
                    .map_err(|e| PipelineError::from_ranker(Stage::Train, e))?;
                log(&format!("trained {dim}: final loss {:.6}", out.train_loss.last().unwrap_or(&f64::NAN)));
                outcomes.insert(*dim, out);
            }
        }
        let mut loss_rows = Vec::new();
        let mut scorers = ScorerSet::new();
        for (dim, out) in outcomes {
            let file = ScorerFile {
                config_hash: self.config_hash.clone(),
                seed: self.cfg.seed,
                dimension: dim,
                params: out
                    .scorer
                    .params
                    .iter()
                    .map(|(k, v)| (k.clone(), TensorRecord::from_tensor(v)))
                    .collect(),
            };
            let json = serde_json::to_string(&file).expect("finite params") + "\n";
            self.write(Stage::Train, &format!("{}/{dim}.json", files::SCORERS), &json)?;
            if let Some(enc) = &out.encoder {
                let json = encoder_to_json_tagged(enc, &self.cfg.pretrain_config(), Some(&self.config_hash));
                self.write(Stage::Train, &format!("{}/{dim}.json", files::ENCODERS), &json)?;
            }
            for (i, l) in out.train_loss.iter().enumerate() {
                let v = out.val_loss.get(i).map_or_else(|| "-".to_string(), |v| format!("{v:?}"));
                loss_rows.push(vec![dim.to_string(), (i + 1).to_string(), format!("{l:?}"), v]);
            }
            scorers.insert(dim, out.scorer);
        }
        let losses = Table {
            header: vec!["dimension".into(), "epoch".into(), "train_loss".into(), "val_loss".into()],
            rows: loss_rows,
        };
        self.write_table(Stage::Train, files::TRAIN_LOSS, &losses)?;
        Ok(scorers)
    }

    /// Scorers written by the train stage.
    pub fn load_scorers(&self, stage: Stage) -> Result<ScorerSet, PipelineError> {
        let dir = self.path(files::SCORERS);
        let mut scorers = ScorerSet::new();
        for dim in PerceptualDimension::ALL {
            let path = dir.join(format!("{dim}.json"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path)
                .map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))?;
            let file: ScorerFile = serde_json::from_str(&text)
                .map_err(|e| PipelineError::data(stage, format!("{}: {e}", path.display())))?;
            if file.config_hash != self.config_hash {
                return Err(PipelineError::data(
                    stage,
                    format!("{} was produced by a different configuration or input; rerun train", path.display()),
                ));
            }
            let bad = |e: &dyn fmt::Display| PipelineError::data(stage, format!("{}: {e}", path.display()));
            let mut params = Params::new();
            for (name, rec) in file.params {
                let t = rec.into_tensor(&name).map_err(|e| bad(&e))?;
                params.insert(name, t);
            }
            let scorer = ScorerParams::from_params(params).map_err(|e| bad(&e))?;
            scorers.insert(dim, scorer);
        }
        if scorers.is_empty() {
            return Err(PipelineError::data(
                stage,
                format!("no scorer checkpoints in {} (run train first)", dir.display()),
            ));
        }
        Ok(scorers)
    }

    /// Embedding tables per dimension for `graphs`: the shared table, or one
    /// per fine-tuned encoder.
    fn tables_for(
        &self,
        stage: Stage,
        graphs: &[SceneGraph],
        scorers: &ScorerSet,
        shared: Option<EmbeddingTable>,
    ) -> Result<BTreeMap<PerceptualDimension, EmbeddingTable>, PipelineError> {
        let mut tables = BTreeMap::new();
        if self.cfg.ranker.fine_tune {
            let fgs = self.featurize(graphs)?;
            for dim in scorers.keys() {
                let enc = self.load_encoder_file(stage, &format!("{}/{dim}.json", files::ENCODERS))?;
                tables.insert(*dim, self.embed_graphs(stage, &fgs, &enc)?);
            }
        } else {
            let table = match shared {
                Some(t) => t,
                None => {
                    let encoder = self.load_encoder(stage)?;
                    let fgs = self.featurize(graphs)?;
                    self.embed_graphs(stage, &fgs, &encoder)?
                }
            };
            for dim in scorers.keys() {
                tables.insert(*dim, table.clone());
            }
        }
        Ok(tables)
    }

    fn source_tables(
        &self,
        stage: Stage,
        scorers: &ScorerSet,
    ) -> Result<BTreeMap<PerceptualDimension, EmbeddingTable>, PipelineError> {
        let shared = if self.cfg.ranker.fine_tune {
            None
        } else {
            Some(self.load_embeddings(stage)?)
        };
        self.tables_for(stage, &self.dataset.graphs, scorers, shared)
    }

    fn evaluate_on(
        stage: Stage,
        comparisons: &[ComparisonRecord],
        tables: &BTreeMap<PerceptualDimension, EmbeddingTable>,
        scorers: &ScorerSet,
    ) -> Result<DimensionReport, PipelineError> {
        if comparisons.is_empty() {
            return Err(PipelineError::data(stage, "no comparisons to evaluate"));
        }
        let fallback = EmbeddingTable::new();
        evaluate_all_with(comparisons, |d| tables.get(&d).unwrap_or(&fallback), scorers)
            .map_err(|e| PipelineError::from_ranker(stage, e))
    }

    /// Test-split metrics of the trained scorers.
    pub fn test_report(&self, stage: Stage) -> Result<DimensionReport, PipelineError> {
        let (_, assigned) = self.split()?;
        let scorers = self.load_scorers(stage)?;
        let tables = self.source_tables(stage, &scorers)?;
        Self::evaluate_on(stage, &assigned.test, &tables, &scorers)
    }

    /// Stage "evaluate": Table 1 and Table 2 layouts on the test split.
    pub fn evaluate(&self) -> Result<DimensionReport, PipelineError> {
        let report = self.test_report(Stage::Evaluate)?;
        let model = "scene-graph-mgae";
        self.write(
            Stage::Evaluate,
            &format!("{}.tsv", files::TABLE1),
            &(self.provenance() + &report::table1_for(model, &report, Precision::Tsv).to_tsv()),
        )?;
        self.write(
            Stage::Evaluate,
            &format!("{}.txt", files::TABLE1),
            &(self.provenance()
                + "# positive class: left scene wins; ties excluded\n"
                + &report::table1_for(model, &report, Precision::Text).to_text()),
        )?;
        self.write(
            Stage::Evaluate,
            &format!("{}.tsv", files::TABLE2),
            &(self.provenance() + &report::table2(model, &report, Precision::Tsv).to_tsv()),
        )?;
        self.write(
            Stage::Evaluate,
            &format!("{}.txt", files::TABLE2),
            &(self.provenance() + &report::table2(model, &report, Precision::Text).to_text()),
        )?;
        let mut detail = vec![
            report.pooled.clone(),
            report.dimension_mean.clone(),
        ];
        detail.extend(report.per_dimension.values().cloned());
        let metrics = Table {
            header: ["label", "n_pairs", "n_ties", "AUC", "accuracy", "recall", "f1", "precision"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rows: detail
                .iter()
                .map(|r| {
                    vec![
                        r.label.clone(),
                        r.n_pairs.to_string(),
                        r.n_ties.to_string(),
                        report::fmt_fixed(r.auc, 6),
                        report::fmt_fixed(r.accuracy, 6),
                        report::fmt_fixed(r.recall, 6),
                        report::fmt_fixed(r.f1, 6),
                        report::fmt_fixed(r.precision, 6),
                    ]
                })
                .collect(),
        };
        self.write_table(Stage::Evaluate, files::METRICS, &metrics)?;
        Ok(report)
    }

    fn all_scores(
        &self,
        stage: Stage,
    ) -> Result<Vec<crate::ranker::PerceptionScore>, PipelineError> {
        let scorers = self.load_scorers(stage)?;
        let tables = self.source_tables(stage, &scorers)?;
        let fallback = EmbeddingTable::new();
        score_dataset_with(
            &self.dataset.scene_ids(),
            |d| tables.get(&d).unwrap_or(&fallback),
            &scorers,
        )
        .map_err(|e| PipelineError::from_ranker(stage, e))
    }

    /// Stage "score": continuous score for every scene and trained dimension.
    pub fn score(&self) -> Result<Vec<crate::ranker::PerceptionScore>, PipelineError> {
        let scores = self.all_scores(Stage::Score)?;
        self.write_table(Stage::Score, files::SCORES, &report::scores_table(&scores))?;
        Ok(scores)
    }

    /// Stage "motifs": motif lift and diversity correlations per dimension.
    pub fn motifs(&self) -> Result<(), PipelineError> {
        let scores = self.all_scores(Stage::Motifs)?;
        let by_id = self.graphs_by_id();
        let mut per_dim: BTreeMap<PerceptualDimension, Vec<ScoredScene>> = BTreeMap::new();
        for s in &scores {
            per_dim.entry(s.dimension).or_default().push(ScoredScene {
                graph: by_id[s.scene_id.as_str()],
                score: s.score,
            });
        }
        let mut diversity = Table {
            header: report::diversity_table(PerceptualDimension::Safe, &empty_diversity(), Precision::Tsv).header,
            rows: Vec::new(),
        };
        let mut diversity_text = diversity.clone();
        for (dim, scenes) in &per_dim {
            let rows = motif_lift(scenes, self.cfg.motif_quantile, self.cfg.motif_min_support)
                .map_err(|e| PipelineError::data(Stage::Motifs, format!("{dim}: {e}")))?;
            self.write_table(
                Stage::Motifs,
                &format!("{}/{dim}", files::MOTIFS),
                &report::motif_table(&rows, Precision::Tsv),
            )?;
            // The text file keeps two decimals for reading.
            self.write(
                Stage::Motifs,
                &format!("{}/{dim}.txt", files::MOTIFS),
                &(self.provenance() + &report::motif_table(&rows, Precision::Text).to_text()),
            )?;
            if scenes.len() >= 3 {
                let c = diversity_correlation(scenes)
                    .map_err(|e| PipelineError::data(Stage::Motifs, format!("{dim}: {e}")))?;
                diversity.rows.extend(report::diversity_table(*dim, &c, Precision::Tsv).rows);
                diversity_text.rows.extend(report::diversity_table(*dim, &c, Precision::Text).rows);
            }
        }
        self.write(
            Stage::Motifs,
            &format!("{}.tsv", files::DIVERSITY),
            &(self.provenance() + &diversity.to_tsv()),
        )?;
        self.write(
            Stage::Motifs,
            &format!("{}.txt", files::DIVERSITY),
            &(self.provenance() + &diversity_text.to_text()),
        )?;
        Ok(())
    }

    /// Apply the trained models unchanged to another city's scenes and
    /// compare pooled metrics with the source test split.
    pub fn cross_city(
        &self,
        target_scenes: &Path,
        target_comparisons: &Path,
    ) -> Result<Vec<CrossCityRow>, PipelineError> {
        let stage = Stage::CrossCity;
        let scenes = read_file(stage, target_scenes)?;
        let comps = read_file(stage, target_comparisons)?;
        let target = load_dataset(&scenes, &comps, self.cfg.aggregate, stage)?;
        let scorers = self.load_scorers(stage)?;
        let untrained: BTreeSet<&str> = target
            .comparisons
            .iter()
            .filter(|c| !scorers.contains_key(&c.dimension))
            .map(|c| c.dimension.as_str())
            .collect();
        if !untrained.is_empty() {
            return Err(PipelineError::data(
                stage,
                format!(
                    "no trained scorer for dimension(s): {}",
                    untrained.into_iter().collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        let source = self.test_report(stage)?;
        let tables = self.tables_for(stage, &target.graphs, &scorers, None)?;
        let target_report = Self::evaluate_on(stage, &target.comparisons, &tables, &scorers)?;
        let rows = cross_city_report(&source.pooled, &target_report.pooled);
        self.write(
            stage,
            &format!("{}.tsv", files::CROSS_CITY),
            &(self.provenance() + &report::table3(&rows, Precision::Tsv).to_tsv()),
        )?;
        self.write(
            stage,
            &format!("{}.txt", files::CROSS_CITY),
            &(self.provenance() + &report::table3(&rows, Precision::Text).to_text()),
        )?;
        Ok(rows)
    }
}

fn empty_diversity() -> crate::analysis::DiversityCorrelation {
    crate::analysis::DiversityCorrelation {
        edge_count: None,
        distinct_node_labels: None,
        distinct_predicates: None,
        label_entropy: None,
    }
}

fn clear_failed(out: &Path) {
    let _ = fs::remove_file(out.join(files::FAILED));
}

fn mark_failed(out: &Path, err: &PipelineError) {
    let _ = fs::create_dir_all(out);
    let _ = fs::write(
        out.join(files::FAILED),
        format!("stage={}\nerror={}\n", err.stage, err.message),
    );
}

/// Run `body` against a fresh pipeline, flagging the output directory with a
/// FAILED marker if anything goes wrong.
pub fn with_pipeline<T>(
    cfg: RunConfig,
    body: impl FnOnce(&Pipeline) -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let out = cfg.out.clone();
    clear_failed(&out);
    let result = Pipeline::new(cfg).and_then(|p| body(&p));
    if let Err(e) = &result {
        mark_failed(&out, e);
    }
    result
}

/// Every stage in order.
pub fn run_pipeline(cfg: RunConfig, mut log: impl FnMut(&str)) -> Result<DimensionReport, PipelineError> {
    let target = match (&cfg.target_scenes, &cfg.target_comparisons) {
        (Some(s), Some(c)) => Some((s.clone(), c.clone())),
        _ => None,
    };
    with_pipeline(cfg, |p| {
        log(&format!("config hash {}", p.config_hash()));
        p.write_summary()?;
        let (split, assigned) = p.write_split()?;
        log(&format!(
            "split scenes {}/{}/{}, comparisons {}/{}/{} ({} dropped)",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            assigned.train.len(),
            assigned.val.len(),
            assigned.test.len(),
            assigned.dropped
        ));
        p.pretrain(&mut log)?;
        p.embed()?;
        p.train(&mut log)?;
        let report = p.evaluate()?;
        p.score()?;
        p.motifs()?;
        if let Some((s, c)) = &target {
            p.cross_city(s, c)?;
        }
        Ok(report)
    })
}

/// Load the split manifest written by [`Pipeline::write_split`].
pub fn read_split_manifest(text: &str) -> Result<DatasetSplit, String> {
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let (id, part) = line.split_once('\t').ok_or_else(|| format!("bad manifest line {line:?}"))?;
        match part {
            "train" => split.train.push(id.to_string()),
            "val" => split.val.push(id.to_string()),
            "test" => split.test.push(id.to_string()),
            other => return Err(format!("unknown split {other:?}")),
        }
    }
    Ok(split)
}

/// Read a JSONL scenes file from disk.
pub fn read_scenes(path: &Path) -> Result<Vec<SceneGraph>, PipelineError> {
    let f = fs::File::open(path)
        .map_err(|e| PipelineError::data(Stage::Ingest, format!("{}: {e}", path.display())))?;
    parse_scene_jsonl(BufReader::new(f)).map_err(|e| PipelineError::data(Stage::Ingest, e))
}
