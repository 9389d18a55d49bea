//! Scene-graph data model, the scene JSONL interchange format, validation,
//! summary statistics and DOT export.
//!
//! A scene graph is a directed labelled multigraph: nodes are entity
//! instances ("car", "sidewalk") and edges carry a predicate ("parked on")
//! pointing from subject to object. Labels are normalized on construction
//! (trimmed, lowercased) so that open-vocabulary parser output with
//! inconsistent casing collapses onto one vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: I/O error: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: duplicate scene_id {scene_id:?}")]
    DuplicateScene { line: usize, scene_id: String },
    #[error("scene {scene_id:?}: edge {edge_index} has a dangling endpoint (node {node_id} does not exist)")]
    DanglingEndpoint {
        scene_id: String,
        edge_index: usize,
        node_id: u64,
    },
    #[error("scene {scene_id:?}: {}", errors.join("; "))]
    Invalid {
        scene_id: String,
        errors: Vec<String>,
    },
    #[error("cannot build a scene graph from an empty triplet list")]
    EmptyTriplets,
}

/// Trim and lowercase a label or predicate.
pub fn normalize_label(text: &str) -> String {
    text.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    #[serde(rename = "id")]
    pub node_id: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: u64,
    pub dst: u64,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
}

impl SceneGraph {
    pub fn new(
        scene_id: impl Into<String>,
        city: Option<String>,
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
    ) -> Self {
        let mut g = SceneGraph {
            scene_id: scene_id.into(),
            city,
            nodes,
            edges,
        };
        g.normalize();
        g
    }

    fn normalize(&mut self) {
        for n in &mut self.nodes {
            n.label = normalize_label(&n.label);
        }
        for e in &mut self.edges {
            e.predicate = normalize_label(&e.predicate);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Map from node id to row position in `nodes`.
    pub fn node_positions(&self) -> HashMap<u64, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id, i))
            .collect()
    }

    /// Edge endpoints as row positions `(src, dst)`, in edge-list order.
    ///
    /// Returns `None` if any endpoint does not resolve.
    pub fn edge_positions(&self) -> Option<Vec<(usize, usize)>> {
        let pos = self.node_positions();
        self.edges
            .iter()
            .map(|e| Some((*pos.get(&e.src)?, *pos.get(&e.dst)?)))
            .collect()
    }

    /// Subject-predicate-object label triples for every edge.
    pub fn labelled_triplets(&self) -> Vec<(&str, &str, &str)> {
        let pos = self.node_positions();
        self.edges
            .iter()
            .filter_map(|e| {
                let s = pos.get(&e.src)?;
                let o = pos.get(&e.dst)?;
                Some((
                    self.nodes[*s].label.as_str(),
                    e.predicate.as_str(),
                    self.nodes[*o].label.as_str(),
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_graph(g: &SceneGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    if g.scene_id.trim().is_empty() {
        report.errors.push("empty scene_id".to_string());
    }
    if g.nodes.is_empty() {
        report.errors.push("scene has no nodes".to_string());
    }
    let mut seen = HashSet::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if !seen.insert(n.node_id) {
            report
                .errors
                .push(format!("node {i}: duplicate node id {}", n.node_id));
        }
        if n.label.trim().is_empty() {
            report.errors.push(format!("node {i}: empty label"));
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        for endpoint in [e.src, e.dst] {
            if !seen.contains(&endpoint) {
                report
                    .errors
                    .push(format!("edge {i}: dangling endpoint {endpoint}"));
            }
        }
        if e.predicate.trim().is_empty() {
            report.errors.push(format!("edge {i}: empty predicate"));
        }
        if e.src == e.dst {
            report
                .warnings
                .push(format!("edge {i}: self-loop on node {}", e.src));
        }
    }
    if g.edges.is_empty() && !g.nodes.is_empty() {
        report.warnings.push("scene has no edges".to_string());
    }
    report
}

/// Parse scene JSONL. Blank lines are skipped; unknown fields are ignored.
pub fn parse_scene_jsonl<R: BufRead>(reader: R) -> Result<Vec<SceneGraph>, GraphError> {
    let mut graphs = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| GraphError::Io {
            line: line_no,
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut g: SceneGraph = serde_json::from_str(&line).map_err(|source| GraphError::Json {
            line: line_no,
            source,
        })?;
        g.normalize();
        let ids_in_scene: HashSet<u64> = g.nodes.iter().map(|n| n.node_id).collect();
        for (edge_index, e) in g.edges.iter().enumerate() {
            for endpoint in [e.src, e.dst] {
                if !ids_in_scene.contains(&endpoint) {
                    return Err(GraphError::DanglingEndpoint {
                        scene_id: g.scene_id.clone(),
                        edge_index,
                        node_id: endpoint,
                    });
                }
            }
        }
        let report = validate_graph(&g);
        if !report.is_valid() {
            return Err(GraphError::Invalid {
                scene_id: g.scene_id.clone(),
                errors: report.errors,
            });
        }
        if !ids.insert(g.scene_id.clone()) {
            return Err(GraphError::DuplicateScene {
                line: line_no,
                scene_id: g.scene_id,
            });
        }
        graphs.push(g);
    }
    Ok(graphs)
}

pub fn write_scene_jsonl<W: Write>(graphs: &[SceneGraph], mut out: W) -> std::io::Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One parsed relation: `(subject, predicate, object, subject_instance, object_instance)`.
pub type Triplet = (String, String, String, u64, u64);

/// Build a scene graph from relation triplets.
///
/// Nodes are keyed by `(normalized text, instance)` and numbered densely in
/// first-appearance order, subject before object.
pub fn from_triplets(
    scene_id: impl Into<String>,
    triplets: &[Triplet],
) -> Result<SceneGraph, GraphError> {
    if triplets.is_empty() {
        return Err(GraphError::EmptyTriplets);
    }
    let mut index: HashMap<(String, u64), u64> = HashMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::with_capacity(triplets.len());
    let mut intern = |text: &str, instance: u64, nodes: &mut Vec<NodeRecord>| -> u64 {
        let label = normalize_label(text);
        *index.entry((label.clone(), instance)).or_insert_with(|| {
            let id = nodes.len() as u64;
            nodes.push(NodeRecord { node_id: id, label });
            id
        })
    };
    for (subject, predicate, object, si, oi) in triplets {
        let src = intern(subject, *si, &mut nodes);
        let dst = intern(object, *oi, &mut nodes);
        edges.push(EdgeRecord {
            src,
            dst,
            predicate: normalize_label(predicate),
        });
    }
    let g = SceneGraph::new(scene_id, None, nodes, edges);
    let report = validate_graph(&g);
    if !report.is_valid() {
        return Err(GraphError::Invalid {
            scene_id: g.scene_id,
            errors: report.errors,
        });
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub distinct_node_labels: usize,
    pub distinct_predicates: usize,
    /// Shannon entropy of the node-label distribution, in nats.
    pub label_entropy: f64,
}

pub fn graph_stats(g: &SceneGraph) -> GraphStats {
    let mut label_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &g.nodes {
        *label_counts.entry(n.label.as_str()).or_default() += 1;
    }
    let predicates: BTreeSet<&str> = g.edges.iter().map(|e| e.predicate.as_str()).collect();
    let total = g.nodes.len() as f64;
    let label_entropy = if label_counts.len() <= 1 {
        0.0
    } else {
        label_counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    };
    GraphStats {
        node_count: g.nodes.len(),
        edge_count: g.edges.len(),
        distinct_node_labels: label_counts.len(),
        distinct_predicates: predicates.len(),
        label_entropy,
    }
}

fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Render as a DOT digraph: nodes sorted by id, edges in list order.
pub fn export_dot(g: &SceneGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(&g.scene_id));
    let mut nodes: Vec<&NodeRecord> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.node_id);
    for n in nodes {
        let _ = writeln!(out, "  {} [label=\"{}\"];", n.node_id, dot_escape(&n.label));
    }
    for e in &g.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [label=\"{}\"];",
            e.src,
            e.dst,
            dot_escape(&e.predicate)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, p: &str, o: &str, si: u64, oi: u64) -> Triplet {
        (s.into(), p.into(), o.into(), si, oi)
    }

    fn car_sidewalk() -> SceneGraph {
        from_triplets("s1", &[t("car", "parked on", "sidewalk", 0, 0)]).unwrap()
    }

    #[test]
    fn parses_single_line() {
        let line = r#"{"scene_id":"s1","nodes":[{"id":0,"label":"car"},{"id":1,"label":"sidewalk"}],"edges":[{"src":0,"dst":1,"predicate":"parked on"}]}"#;
        let graphs = parse_scene_jsonl(line.as_bytes()).unwrap();
        assert_eq!(graphs.len(), 1);
        assert_eq!(graphs[0].node_count(), 2);
        assert_eq!(graphs[0].edge_count(), 1);
        assert_eq!(graphs[0].city, None);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_scene_jsonl("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let line = r#"{"scene_id":"s1","nodes":[{"id":0,"label":"car"},{"id":1,"label":"road"}],"edges":[{"src":5,"dst":1,"predicate":"on"}]}"#;
        let err = parse_scene_jsonl(line.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("dangling endpoint"));
        match err {
            GraphError::DanglingEndpoint {
                scene_id,
                edge_index,
                ..
            } => {
                assert_eq!(scene_id, "s1");
                assert_eq!(edge_index, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"scene_id\":\"a\",\"nodes\":[{\"id\":0,\"label\":\"x\"}]}\n{not json\n";
        match parse_scene_jsonl(text.as_bytes()).unwrap_err() {
            GraphError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_scene_rejected() {
        let l = r#"{"scene_id":"a","nodes":[{"id":0,"label":"x"}]}"#;
        let text = format!("{l}\n{l}\n");
        assert!(matches!(
            parse_scene_jsonl(text.as_bytes()),
            Err(GraphError::DuplicateScene { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_fields_ignored_and_labels_normalized() {
        let l = r#"{"scene_id":"a","extra":1,"city":"Tokyo","nodes":[{"id":0,"label":"  Car ","score":0.3}]}"#;
        let g = &parse_scene_jsonl(l.as_bytes()).unwrap()[0];
        assert_eq!(g.nodes[0].label, "car");
        assert_eq!(g.city.as_deref(), Some("Tokyo"));
    }

    #[test]
    fn validation_cases() {
        let ok = car_sidewalk();
        let r = validate_graph(&ok);
        assert_eq!((r.errors.len(), r.warnings.len()), (0, 0));

        let empty = SceneGraph::new("e", None, vec![], vec![]);
        assert_eq!(validate_graph(&empty).errors.len(), 1);

        let lonely = SceneGraph::new(
            "n",
            None,
            vec![NodeRecord {
                node_id: 0,
                label: "tree".into(),
            }],
            vec![],
        );
        let r = validate_graph(&lonely);
        assert_eq!((r.errors.len(), r.warnings.len()), (0, 1));

        let looped = SceneGraph::new(
            "l",
            None,
            vec![NodeRecord {
                node_id: 3,
                label: "road".into(),
            }],
            vec![EdgeRecord {
                src: 3,
                dst: 3,
                predicate: "beside".into(),
            }],
        );
        let r = validate_graph(&looped);
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn triplet_construction() {
        let g = car_sidewalk();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));

        let g = from_triplets("s", &[t("car", "near", "car", 0, 1)]).unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(g.nodes.iter().all(|n| n.label == "car"));

        // Shared subject instance: {car#0, sidewalk#0, tree#0}.
        let g = from_triplets(
            "s",
            &[
                t("car", "parked on", "sidewalk", 0, 0),
                t("car", "under", "tree", 0, 0),
            ],
        )
        .unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (3, 2));
        let ids: Vec<u64> = g.nodes.iter().map(|n| n.node_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);

        assert!(matches!(
            from_triplets("s", &[]),
            Err(GraphError::EmptyTriplets)
        ));
    }

    #[test]
    fn stats() {
        let s = graph_stats(&car_sidewalk());
        assert_eq!(s.node_count, 2);
        assert_eq!(s.edge_count, 1);
        assert_eq!(s.distinct_node_labels, 2);
        assert!((s.label_entropy - std::f64::consts::LN_2).abs() < 1e-12);

        let roads = SceneGraph::new(
            "r",
            None,
            (0..3)
                .map(|i| NodeRecord {
                    node_id: i,
                    label: "road".into(),
                })
                .collect(),
            vec![],
        );
        assert_eq!(graph_stats(&roads).label_entropy, 0.0);

        let cars = from_triplets("s", &[t("car", "near", "car", 0, 1)]).unwrap();
        let s = graph_stats(&cars);
        assert_eq!((s.distinct_node_labels, s.node_count), (1, 2));
    }

    #[test]
    fn dot_export() {
        let one = SceneGraph::new(
            "x",
            None,
            vec![NodeRecord {
                node_id: 0,
                label: "sky".into(),
            }],
            vec![],
        );
        let dot = export_dot(&one);
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches("[label=").count(), 1);

        let g = from_triplets("s", &[t("bench", "on", "sidewalk", 0, 0)]).unwrap();
        let dot = export_dot(&g);
        assert!(dot.contains("0 -> 1 [label=\"on\"]"));
        assert_eq!(dot, export_dot(&g));
    }

    #[test]
    fn dot_escapes_quotes() {
        let g = from_triplets("q\"s", &[t("sign \"stop\"", "on", "pole", 0, 0)]).unwrap();
        let dot = export_dot(&g);
        assert!(dot.contains("digraph \"q\\\"s\""));
        assert!(dot.contains("label=\"sign \\\"stop\\\"\""));
    }
}
