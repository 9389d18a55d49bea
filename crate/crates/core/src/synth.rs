//! Synthetic street-scene corpora with a known answer.
//!
//! Background graphs are built from a fixed set of everyday triplet templates.
//! Planted corpora add a latent quality `u` per scene: high-quality scenes
//! carry amenity motifs, low-quality scenes carry disorder motifs, and
//! pairwise votes are drawn from `sigmoid(u_left - u_right)`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{from_triplets, normalize_label, SceneGraph, Triplet};
use crate::ranker::{pair_prob, ComparisonRecord, PerceptualDimension, Winner};
use crate::rng::{stream, StreamRng};

/// Everyday triplets with no bearing on quality.
pub const BACKGROUND_TEMPLATES: [(&str, &str, &str); 12] = [
    ("tree", "next to", "road"),
    ("building", "beside", "road"),
    ("window", "on", "building"),
    ("sign", "attached to", "pole"),
    ("sky", "above", "building"),
    ("lamp", "on top of", "pole"),
    ("door", "part of", "building"),
    ("fence", "along", "road"),
    ("truck", "driving on", "road"),
    ("person", "walking on", "pavement"),
    ("light", "hanging from", "pole"),
    ("roof", "over", "house"),
];

/// Motifs planted in low-quality scenes.
pub const NEGATIVE_MOTIFS: [(&str, &str, &str); 3] = [
    ("graffiti", "on", "wall"),
    ("car", "parked on", "sidewalk"),
    ("trash", "scattered on", "sidewalk"),
];

/// Motifs planted in high-quality scenes.
pub const POSITIVE_MOTIFS: [(&str, &str, &str); 3] = [
    ("person", "sitting on", "bench"),
    ("plant", "growing along", "wall"),
    ("bicycle", "parked beside", "building"),
];

/// Planted motif instances per scene.
pub const MOTIFS_PER_SCENE: usize = 6;
/// Latent quality spread: `u = QUALITY_SCALE * q` with `q ~ U(0, 1)`.
pub const QUALITY_SCALE: f64 = 5.0;

/// Incrementally assembles triplets, sometimes reusing an existing node of
/// the object's label so graphs are not just disjoint pairs.
struct Builder {
    triplets: Vec<Triplet>,
    instances: BTreeMap<String, u64>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            triplets: Vec::new(),
            instances: BTreeMap::new(),
        }
    }

    fn node_count(&self) -> usize {
        self.instances.values().map(|&c| c as usize).sum()
    }

    fn fresh(&mut self, label: &str) -> u64 {
        let c = self.instances.entry(label.to_string()).or_insert(0);
        *c += 1;
        *c - 1
    }

    fn pick(&mut self, label: &str, rng: &mut StreamRng) -> u64 {
        match self.instances.get(label) {
            Some(&c) if c > 0 && rng.gen_bool(0.5) => rng.gen_range(0..c),
            _ => self.fresh(label),
        }
    }

    fn push(&mut self, (s, p, o): (&str, &str, &str), rng: &mut StreamRng) {
        let si = self.fresh(s);
        let oi = self.pick(o, rng);
        self.triplets.push((s.into(), p.into(), o.into(), si, oi));
    }

    fn build(self, scene_id: &str) -> SceneGraph {
        from_triplets(scene_id, &self.triplets).expect("synthetic triplets are well formed")
    }
}

fn add_background(b: &mut Builder, nodes: usize, rng: &mut StreamRng) {
    while b.node_count() < nodes {
        let t = *BACKGROUND_TEMPLATES.choose(rng).expect("non-empty");
        b.push(t, rng);
    }
}

/// A quality-neutral graph with between `min_nodes` and `max_nodes` nodes.
pub fn random_graph(scene_id: &str, min_nodes: usize, max_nodes: usize, rng: &mut StreamRng) -> SceneGraph {
    assert!(2 <= min_nodes && min_nodes <= max_nodes);
    // Each template adds one or two nodes, so aim one below the cap.
    let target = rng.gen_range(min_nodes..max_nodes.max(min_nodes + 1));
    let mut b = Builder::new();
    add_background(&mut b, target, rng);
    b.build(scene_id)
}

/// `count` background graphs named `scene-000`, `scene-001`, ...
pub fn random_corpus(count: usize, min_nodes: usize, max_nodes: usize, seed: u64) -> Vec<SceneGraph> {
    let mut rng = stream(seed, "synth/graphs");
    (0..count)
        .map(|i| random_graph(&format!("scene-{i:03}"), min_nodes, max_nodes, &mut rng))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub graphs: Vec<SceneGraph>,
    /// Latent quality per scene id.
    pub quality: BTreeMap<String, f64>,
    pub comparisons: Vec<ComparisonRecord>,
}

impl PlantedCorpus {
    /// The generator's own probability that `left` beats `right`.
    pub fn oracle_prob(&self, c: &ComparisonRecord) -> f64 {
        pair_prob(self.quality[&c.left], self.quality[&c.right])
    }
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub scenes: usize,
    pub comparisons_per_dimension: usize,
    pub min_background: usize,
    pub max_background: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            scenes: 200,
            comparisons_per_dimension: 4000,
            min_background: 6,
            max_background: 12,
            seed: 0,
        }
    }
}

/// Scenes with a planted quality signal. The same latent quality drives
/// every dimension; a scene with quality fraction `q` carries
/// `round(6q)` amenity motifs and the rest disorder motifs.
pub fn planted_corpus(cfg: &PlantedConfig) -> PlantedCorpus {
    let mut rng = stream(cfg.seed, "synth/planted");
    let mut graphs = Vec::with_capacity(cfg.scenes);
    let mut quality = BTreeMap::new();
    for i in 0..cfg.scenes {
        let id = format!("scene-{i:03}");
        let q: f64 = rng.gen();
        let k_pos = (q * MOTIFS_PER_SCENE as f64).round() as usize;
        let mut b = Builder::new();
        let target = rng.gen_range(cfg.min_background..=cfg.max_background);
        add_background(&mut b, target, &mut rng);
        for j in 0..MOTIFS_PER_SCENE {
            let pool = if j < k_pos { &POSITIVE_MOTIFS } else { &NEGATIVE_MOTIFS };
            let m = *pool.choose(&mut rng).expect("non-empty");
            b.push(m, &mut rng);
        }
        graphs.push(b.build(&id));
        quality.insert(id, QUALITY_SCALE * q);
    }
    let ids: Vec<&String> = quality.keys().collect();
    let mut comparisons = Vec::with_capacity(cfg.comparisons_per_dimension * 6);
    for dim in PerceptualDimension::ALL {
        for _ in 0..cfg.comparisons_per_dimension {
            let (l, r) = loop {
                let l = rng.gen_range(0..ids.len());
                let r = rng.gen_range(0..ids.len());
                if l != r {
                    break (ids[l], ids[r]);
                }
            };
            let p = pair_prob(quality[l], quality[r]);
            comparisons.push(ComparisonRecord {
                left: l.clone(),
                right: r.clone(),
                dimension: dim,
                winner: if rng.gen_bool(p) { Winner::Left } else { Winner::Right },
            });
        }
    }
    PlantedCorpus {
        graphs,
        quality,
        comparisons,
    }
}

/// Replace a `fraction` of the label vocabulary (node labels and predicates)
/// with unseen words, mimicking a city whose detector names things differently.
pub fn shift_vocabulary(graphs: &[SceneGraph], fraction: f64, seed: u64) -> Vec<SceneGraph> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for g in graphs {
        vocab.extend(g.nodes.iter().map(|n| n.label.clone()));
        vocab.extend(g.edges.iter().map(|e| e.predicate.clone()));
    }
    let mut words: Vec<String> = vocab.into_iter().collect();
    words.shuffle(&mut stream(seed, "synth/shift"));
    let k = (fraction * words.len() as f64).round() as usize;
    // Reversed spelling shares no trigrams with the original in general.
    let renamed: BTreeMap<String, String> = words
        .into_iter()
        .take(k)
        .map(|w| {
            let r = normalize_label(&w.chars().rev().collect::<String>());
            (w, r)
        })
        .collect();
    let rename = |s: &String| renamed.get(s).cloned().unwrap_or_else(|| s.clone());
    graphs
        .iter()
        .map(|g| {
            let mut g = g.clone();
            for n in &mut g.nodes {
                n.label = rename(&n.label);
            }
            for e in &mut g.edges {
                e.predicate = rename(&e.predicate);
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::motif_set;
    use crate::analysis::MotifKey;
    use crate::graph::validate_graph;

    #[test]
    fn random_graphs_respect_size() {
        let gs = random_corpus(50, 8, 20, 1);
        for g in &gs {
            assert!((8..=20).contains(&g.node_count()), "{}", g.node_count());
            assert!(validate_graph(g).is_valid());
        }
        assert_eq!(gs, random_corpus(50, 8, 20, 1));
    }

    #[test]
    fn planted_motifs_follow_quality() {
        let c = planted_corpus(&PlantedConfig {
            scenes: 40,
            comparisons_per_dimension: 50,
            ..PlantedConfig::default()
        });
        assert_eq!(c.comparisons.len(), 300);
        let graffiti = MotifKey::new("graffiti", "on", "wall");
        for g in &c.graphs {
            let u = c.quality[&g.scene_id];
            if u > 0.95 * QUALITY_SCALE {
                assert!(!motif_set(g).contains(&graffiti));
            }
        }
        assert!(c.comparisons.iter().all(|r| r.left != r.right));
    }

    #[test]
    fn vocabulary_shift_renames_a_fraction() {
        let gs = random_corpus(10, 8, 12, 3);
        let shifted = shift_vocabulary(&gs, 0.1, 0);
        assert_eq!(shifted.len(), gs.len());
        let changed = gs
            .iter()
            .zip(&shifted)
            .flat_map(|(a, b)| a.nodes.iter().zip(&b.nodes))
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert!(changed > 0);
        assert_eq!(shift_vocabulary(&gs, 0.0, 0), gs);
    }
}
