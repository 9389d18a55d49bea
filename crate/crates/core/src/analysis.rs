//! Post-hoc analysis of scored scenes: which relational motifs separate low
//! from high scores, how graph diversity tracks scores, and how metrics move
//! when a trained model is applied to another city.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{graph_stats, GraphStats, SceneGraph};
use crate::ranker::MetricReport;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("quantile {0} outside (0, 0.5]")]
    Quantile(f64),
    #[error("{n} scenes leave the quantile-{q} buckets empty")]
    EmptyBucket { n: usize, q: f64 },
    #[error("need at least 3 scenes for a rank correlation, got {0}")]
    TooFewScenes(usize),
    #[error("score for scene {0:?} is not finite")]
    NonFiniteScore(String),
}

/// A typed triplet `(subject) -[predicate]-> (object)` over normalized labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MotifKey {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl MotifKey {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        MotifKey {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
        }
    }
}

impl std::fmt::Display for MotifKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})-[{}]-({})", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotifReportRow {
    pub motif: MotifKey,
    /// Share of bottom-bucket scenes containing the motif (unsmoothed).
    pub low_freq: f64,
    pub high_freq: f64,
    /// Positive when the motif is more common among low-scoring scenes.
    pub log_odds: f64,
    /// Scenes across both buckets that contain the motif.
    pub support: usize,
}

/// A scene graph with its score on one dimension.
#[derive(Debug, Clone, Copy)]
pub struct ScoredScene<'a> {
    pub graph: &'a SceneGraph,
    pub score: f64,
}

/// Distinct motifs present in a graph; dangling edges are ignored.
pub fn motif_set(g: &SceneGraph) -> BTreeSet<MotifKey> {
    let labels: BTreeMap<u64, &str> = g.nodes.iter().map(|n| (n.node_id, n.label.as_str())).collect();
    g.edges
        .iter()
        .filter_map(|e| {
            let s = labels.get(&e.src)?;
            let o = labels.get(&e.dst)?;
            if s.is_empty() || o.is_empty() || e.predicate.is_empty() {
                return None;
            }
            Some(MotifKey::new(s, &e.predicate, o))
        })
        .collect()
}

/// Bottom and top `floor(q * n)` scenes by score, ties broken by scene id so
/// the result does not depend on input order.
pub fn quantile_buckets<'a>(
    scenes: &[ScoredScene<'a>],
    q: f64,
) -> Result<(Vec<ScoredScene<'a>>, Vec<ScoredScene<'a>>), AnalysisError> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(AnalysisError::Quantile(q));
    }
    if let Some(s) = scenes.iter().find(|s| !s.score.is_finite()) {
        return Err(AnalysisError::NonFiniteScore(s.graph.scene_id.clone()));
    }
    let k = (q * scenes.len() as f64).floor() as usize;
    if k == 0 {
        return Err(AnalysisError::EmptyBucket { n: scenes.len(), q });
    }
    let mut sorted = scenes.to_vec();
    sorted.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.graph.scene_id.cmp(&b.graph.scene_id))
    });
    let low = sorted[..k].to_vec();
    let high = sorted[sorted.len() - k..].to_vec();
    Ok((low, high))
}

/// Log-odds of a motif between two buckets with add-one smoothing of both
/// the containing and the non-containing counts.
pub fn smoothed_log_odds(c_low: usize, n_low: usize, c_high: usize, n_high: usize) -> f64 {
    let odds = |c: usize, n: usize| ((c + 1) as f64 / (n - c + 1) as f64).ln();
    odds(c_low, n_low) - odds(c_high, n_high)
}

/// Rank motifs by how strongly they mark low-scoring scenes, given explicit
/// buckets.
pub fn motif_lift_buckets(
    low: &[&SceneGraph],
    high: &[&SceneGraph],
    min_support: usize,
) -> Vec<MotifReportRow> {
    let count = |bucket: &[&SceneGraph]| {
        let mut counts: BTreeMap<MotifKey, usize> = BTreeMap::new();
        for g in bucket {
            for m in motif_set(g) {
                *counts.entry(m).or_insert(0) += 1;
            }
        }
        counts
    };
    let low_counts = count(low);
    let high_counts = count(high);
    let keys: BTreeSet<&MotifKey> = low_counts.keys().chain(high_counts.keys()).collect();
    let (n_low, n_high) = (low.len(), high.len());
    let mut rows: Vec<MotifReportRow> = keys
        .into_iter()
        .filter_map(|m| {
            let c_low = low_counts.get(m).copied().unwrap_or(0);
            let c_high = high_counts.get(m).copied().unwrap_or(0);
            let support = c_low + c_high;
            if support < min_support {
                return None;
            }
            let freq = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            Some(MotifReportRow {
                motif: m.clone(),
                low_freq: freq(c_low, n_low),
                high_freq: freq(c_high, n_high),
                log_odds: smoothed_log_odds(c_low, n_low, c_high, n_high),
                support,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.log_odds.total_cmp(&a.log_odds).then_with(|| a.motif.cmp(&b.motif)));
    rows
}

pub const DEFAULT_QUANTILE: f64 = 0.25;
pub const DEFAULT_MIN_SUPPORT: usize = 5;

/// Motifs most associated with the bottom-`q` scenes come first.
pub fn motif_lift(
    scenes: &[ScoredScene<'_>],
    q: f64,
    min_support: usize,
) -> Result<Vec<MotifReportRow>, AnalysisError> {
    let (low, high) = quantile_buckets(scenes, q)?;
    let low: Vec<&SceneGraph> = low.iter().map(|s| s.graph).collect();
    let high: Vec<&SceneGraph> = high.iter().map(|s| s.graph).collect();
    Ok(motif_lift_buckets(&low, &high, min_support))
}

/// 1-based ranks with tied values sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of midranks. `None` when either
/// side has zero variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Rank correlation between each diversity statistic and the score.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityCorrelation {
    pub edge_count: Option<f64>,
    pub distinct_node_labels: Option<f64>,
    pub distinct_predicates: Option<f64>,
    pub label_entropy: Option<f64>,
}

impl DiversityCorrelation {
    pub fn rows(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("edge_count", self.edge_count),
            ("distinct_node_labels", self.distinct_node_labels),
            ("distinct_predicates", self.distinct_predicates),
            ("label_entropy", self.label_entropy),
        ]
    }
}

pub fn diversity_correlation_from_stats(
    stats: &[GraphStats],
    scores: &[f64],
) -> Result<DiversityCorrelation, AnalysisError> {
    assert_eq!(stats.len(), scores.len());
    if stats.len() < 3 {
        return Err(AnalysisError::TooFewScenes(stats.len()));
    }
    let col = |f: fn(&GraphStats) -> f64| stats.iter().map(f).collect::<Vec<_>>();
    Ok(DiversityCorrelation {
        edge_count: spearman(&col(|s| s.edge_count as f64), scores),
        distinct_node_labels: spearman(&col(|s| s.distinct_node_labels as f64), scores),
        distinct_predicates: spearman(&col(|s| s.distinct_predicates as f64), scores),
        label_entropy: spearman(&col(|s| s.label_entropy), scores),
    })
}

pub fn diversity_correlation(scenes: &[ScoredScene<'_>]) -> Result<DiversityCorrelation, AnalysisError> {
    let stats: Vec<GraphStats> = scenes.iter().map(|s| graph_stats(s.graph)).collect();
    let scores: Vec<f64> = scenes.iter().map(|s| s.score).collect();
    diversity_correlation_from_stats(&stats, &scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCityRow {
    pub metric: &'static str,
    pub source: f64,
    pub target: f64,
    /// Percent change relative to the source; `None` when the source is 0.
    pub change: Option<f64>,
}

/// Metric rows in report order.
pub fn metric_rows(r: &MetricReport) -> [(&'static str, f64); 5] {
    [
        ("Accuracy", r.accuracy),
        ("AUC", r.auc),
        ("Recall", r.recall),
        ("F1", r.f1),
        ("Precision", r.precision),
    ]
}

pub fn percent_change(source: f64, target: f64) -> Option<f64> {
    if source == 0.0 {
        None
    } else {
        Some((target - source) / source * 100.0)
    }
}

pub fn cross_city_report(source: &MetricReport, target: &MetricReport) -> Vec<CrossCityRow> {
    metric_rows(source)
        .into_iter()
        .zip(metric_rows(target))
        .map(|((metric, s), (_, t))| CrossCityRow {
            metric,
            source: s,
            target: t,
            change: percent_change(s, t),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::from_triplets;

    fn t(s: &str, p: &str, o: &str, a: u64, b: u64) -> crate::graph::Triplet {
        (s.into(), p.into(), o.into(), a, b)
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1., 2., 3., 4.], &[10., 20., 30., 40.]), Some(1.0));
        assert_eq!(spearman(&[1., 2., 3., 4.], &[4., 3., 2., 1.]), Some(-1.0));
        let r = spearman(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1., 1., 1.], &[1., 2., 3.]), None);
        assert_eq!(midranks(&[3., 1., 3., 2.]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn equal_presence_gives_zero() {
        assert_eq!(smoothed_log_odds(3, 10, 3, 10), 0.0);
        let hand = (10.0f64 / 2.0).ln() - (2.0f64 / 10.0).ln();
        assert!((smoothed_log_odds(9, 10, 1, 10) - hand).abs() < 1e-15);
    }

    #[test]
    fn motif_lift_ranks_planted_motif() {
        let mut graphs = Vec::new();
        for i in 0..40 {
            let mut trips = vec![t("tree", "next to", "road", 0, 1)];
            if i < 10 && i != 0 {
                trips.push(t("graffiti", "on", "wall", 2, 3));
            }
            if i == 35 {
                trips.push(t("graffiti", "on", "wall", 2, 3));
            }
            graphs.push(from_triplets(format!("g{i:02}"), &trips).unwrap());
        }
        let scenes: Vec<ScoredScene> = graphs
            .iter()
            .enumerate()
            .map(|(i, g)| ScoredScene { graph: g, score: i as f64 })
            .collect();
        let rows = motif_lift(&scenes, 0.25, 2).unwrap();
        assert_eq!(rows[0].motif, MotifKey::new("graffiti", "on", "wall"));
        assert_eq!((rows[0].low_freq, rows[0].high_freq, rows[0].support), (0.9, 0.1, 10));
        let tree = rows.iter().find(|r| r.motif.subject == "tree").unwrap();
        assert_eq!(tree.log_odds, 0.0);

        let mut reversed = scenes.clone();
        reversed.reverse();
        assert_eq!(motif_lift(&reversed, 0.25, 2).unwrap(), rows);
        assert!(matches!(
            motif_lift(&scenes[..3], 0.25, 1),
            Err(AnalysisError::EmptyBucket { .. })
        ));
        assert!(motif_lift(&scenes, 0.6, 1).is_err());
    }

    #[test]
    fn cross_city_changes() {
        let r = |acc: f64, auc: f64| MetricReport {
            label: "all".into(),
            n_pairs: 1,
            n_ties: 0,
            accuracy: acc,
            auc,
            recall: 0.5,
            f1: 0.0,
            precision: 0.5,
        };
        let rows = cross_city_report(&r(0.84, 0.87), &r(0.79, 0.84));
        assert_eq!(rows[0].metric, "Accuracy");
        assert!((rows[0].change.unwrap() + 5.952_380_952_380_95).abs() < 1e-9);
        assert!((rows[1].change.unwrap() + 3.448_275_862_068_97).abs() < 1e-9);
        assert_eq!(rows[3].change, None);
        for row in cross_city_report(&r(0.84, 0.87), &r(0.84, 0.87)) {
            assert!(row.change.is_none_or(|c| c == 0.0));
        }
    }
}
