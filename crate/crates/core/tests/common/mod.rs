//! Shared oracles and fixtures for the integration tests.

#![allow(dead_code)]

use rand::Rng;
use streetgraph::autodiff::{grad_check, grad_check_entries, AutodiffError, Bound, Params, Tape, Tensor, Var};
use streetgraph::graph::{EdgeRecord, NodeRecord, SceneGraph};
use streetgraph::mgae::{graph_loss_on, init_models, sample_mask, MgaeError, PretrainConfig};
use streetgraph::analysis::{cross_city_report, CrossCityRow};
use streetgraph::ranker::{
    pair_loss_on, ComparisonRecord, DimensionReport, EmbeddingTable, MetricReport, PerceptualDimension, ScorerParams,
    Winner,
};
use streetgraph::rng::{stream, StreamRng};
use streetgraph::synth::random_graph;
use streetgraph::text::{FeaturizedGraph, TextEmbedder};

pub const H: f64 = 1e-4;
pub const INSTANCES: usize = 20;

pub fn rng(name: &str) -> StreamRng {
    stream(2024, name)
}

pub fn random_tensor(rng: &mut StreamRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Values bounded away from zero, for primitives with a kink there.
pub fn off_kink_tensor(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn positive_tensor(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.2..2.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Reduce any output to a scalar with a fixed random weighting so every
/// output entry gets a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var, AutodiffError> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>);

/// One random instance of the named primitive, as inputs plus a scalar loss.
fn primitive_case(name: &str, rng: &mut StreamRng) -> Case {
    let r = rng.gen_range(2..6);
    let c = rng.gen_range(2..6);
    let k = rng.gen_range(2..6);
    let w_rc = random_tensor(rng, r, c, 1.0);
    macro_rules! case {
        ($inputs:expr, |$tape:ident, $v:ident| $body:expr) => {{
            let w = w_rc.clone();
            let f = move |$tape: &mut Tape, $v: &[Var]| -> Result<Var, AutodiffError> {
                let out = $body?;
                weighted_sum($tape, out, &w)
            };
            ($inputs, Box::new(f) as Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>)
        }};
    }
    match name {
        "matmul" => case!(
            vec![random_tensor(rng, r, k, 1.0), random_tensor(rng, k, c, 1.0)],
            |t, v| t.matmul(v[0], v[1])
        ),
        "add" => case!(
            vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, r, c, 1.0)],
            |t, v| t.add(v[0], v[1])
        ),
        "add_broadcast" => case!(
            vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, 1, c, 1.0)],
            |t, v| t.add(v[0], v[1])
        ),
        "sub" => case!(
            vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, r, c, 1.0)],
            |t, v| t.sub(v[0], v[1])
        ),
        "mul" => case!(
            vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, r, c, 1.0)],
            |t, v| t.mul(v[0], v[1])
        ),
        "scale" => {
            let f = rng.gen_range(-3.0..3.0);
            case!(vec![random_tensor(rng, r, c, 1.0)], |t, v| t.scale(v[0], f))
        }
        "affine" => {
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            case!(vec![random_tensor(rng, r, c, 1.0)], |t, v| t.affine(v[0], a, b))
        }
        "concat_cols" => {
            let c1 = rng.gen_range(1..c);
            let w = w_rc.clone();
            let inputs = vec![random_tensor(rng, r, c1, 1.0), random_tensor(rng, r, c - c1, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.concat_cols(v[0], v[1])?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "row_mean" => {
            let w = random_tensor(rng, 1, c, 1.0);
            let inputs = vec![random_tensor(rng, r, c, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.row_mean(v[0])?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "leaky_relu" => case!(vec![off_kink_tensor(rng, r, c)], |t, v| t.leaky_relu(v[0], 0.2)),
        "sigmoid" => case!(vec![random_tensor(rng, r, c, 4.0)], |t, v| t.sigmoid(v[0])),
        "l2_normalize_rows" => case!(vec![random_tensor(rng, r, c, 1.0)], |t, v| t.l2_normalize_rows(v[0])),
        "cosine_similarity_rows" => {
            let w = random_tensor(rng, r, 1, 1.0);
            let inputs = vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, r, c, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.cosine_similarity_rows(v[0], v[1])?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "pow" => {
            let e = [1.5, 2.0, 3.0][rng.gen_range(0..3)];
            case!(vec![positive_tensor(rng, r, c)], |t, v| t.pow(v[0], e))
        }
        "sum" => {
            let inputs = vec![random_tensor(rng, r, c, 1.0)];
            let w = w_rc.clone();
            let f = move |t: &mut Tape, v: &[Var]| {
                let sq = weighted_sum(t, v[0], &w)?;
                let s = t.mul(sq, sq)?;
                t.sum(s)
            };
            (inputs, Box::new(f))
        }
        "mean" => {
            let inputs = vec![random_tensor(rng, r, c, 1.0)];
            let w = w_rc.clone();
            let f = move |t: &mut Tape, v: &[Var]| {
                let p = t.constant(w.clone());
                let m = t.mul(v[0], p)?;
                let m = t.mul(m, v[0])?;
                t.mean(m)
            };
            (inputs, Box::new(f))
        }
        "gather_rows" => {
            let n = rng.gen_range(1..8);
            let index: Vec<usize> = (0..n).map(|_| rng.gen_range(0..r)).collect();
            let w = random_tensor(rng, n, c, 1.0);
            let inputs = vec![random_tensor(rng, r, c, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.gather_rows(v[0], &index)?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "scatter_mean_rows" => {
            let segments = rng.gen_range(1..5);
            let segment: Vec<usize> = (0..r).map(|_| rng.gen_range(0..segments)).collect();
            let w = random_tensor(rng, segments, c, 1.0);
            let inputs = vec![random_tensor(rng, r, c, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.scatter_mean_rows(v[0], &segment, segments)?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "replace_rows" => {
            let rows: Vec<usize> = (0..r).filter(|_| rng.gen_bool(0.5)).collect();
            let inputs = vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, 1, c, 1.0)];
            case!(inputs, |t, v| t.replace_rows(v[0], v[1], &rows))
        }
        "bce_with_logits" => {
            let targets: Vec<f64> = (0..r).map(|_| [0.0, 0.5, 1.0][rng.gen_range(0..3)]).collect();
            let w = random_tensor(rng, r, 1, 1.0);
            let inputs = vec![random_tensor(rng, r, 1, 4.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let out = t.bce_with_logits(v[0], &targets)?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        "stack_rows" => {
            let r2 = rng.gen_range(1..4);
            let w = random_tensor(rng, r + r2 + r, c, 1.0);
            let inputs = vec![random_tensor(rng, r, c, 1.0), random_tensor(rng, r2, c, 1.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                // The first part appears twice, so its gradient must accumulate.
                let out = t.stack_rows(&[v[0], v[1], v[0]])?;
                weighted_sum(t, out, &w)
            };
            (inputs, Box::new(f))
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const PRIMITIVES: [&str; 22] = [
    "matmul",
    "add",
    "add_broadcast",
    "sub",
    "mul",
    "scale",
    "affine",
    "concat_cols",
    "row_mean",
    "leaky_relu",
    "sigmoid",
    "l2_normalize_rows",
    "cosine_similarity_rows",
    "pow",
    "sum",
    "mean",
    "gather_rows",
    "scatter_mean_rows",
    "replace_rows",
    "bce_with_logits",
    "stack_rows",
    "sce_loss",
];

/// Worst relative error of one primitive over `INSTANCES` random cases.
pub fn primitive_grad_error(name: &str) -> f64 {
    let mut rng = rng(&format!("grad/{name}"));
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let err = if name == "sce_loss" {
            sce_case(&mut rng)
        } else {
            let (inputs, f) = primitive_case(name, &mut rng);
            grad_check(f, &inputs, H).unwrap()
        };
        worst = worst.max(err);
    }
    worst
}

fn sce_case(rng: &mut StreamRng) -> f64 {
    use streetgraph::mgae::sce_loss_on;
    let n = rng.gen_range(2..7);
    let d = rng.gen_range(3..7);
    let mask: Vec<usize> = {
        let mut m: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.6)).collect();
        if m.is_empty() {
            m.push(0);
        }
        m
    };
    let gamma = [1.0, 2.0, 3.0][rng.gen_range(0..3)];
    let x = random_tensor(rng, n, d, 1.0);
    let x_hat = random_tensor(rng, n, d, 1.0);
    grad_check(
        |t, v| match sce_loss_on(t, v[0], v[1], &mask, gamma) {
            Ok(l) => Ok(l),
            Err(MgaeError::Autodiff(e)) => Err(e),
            Err(e) => panic!("{e}"),
        },
        &[x, x_hat],
        H,
    )
    .unwrap()
}

pub fn named(params: &Params) -> (Vec<String>, Vec<Tensor>) {
    params.iter().map(|(k, v)| (k.clone(), v.clone())).unzip()
}

pub fn bound_from(names: &[String], vars: &[Var]) -> Bound {
    names.iter().cloned().zip(vars.iter().copied()).collect()
}

/// Sample `count` coordinates uniformly over all parameter entries.
fn sample_entries(rng: &mut StreamRng, tensors: &[Tensor], count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let p = rng.gen_range(0..tensors.len());
            (p, rng.gen_range(0..tensors[p].len()))
        })
        .collect()
}

pub fn small_featurized(rng: &mut StreamRng, d_t: usize) -> FeaturizedGraph {
    let g = random_graph("g", 4, 9, rng);
    TextEmbedder::hashed(d_t, 1).unwrap().featurize_graph(&g).unwrap()
}

/// Full masked-autoencoder loss against finite differences on sampled
/// coordinates (every parameter tensor is hit at least once per instance).
pub fn mgae_grad_error() -> f64 {
    let mut rng = rng("grad/mgae");
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let fg = small_featurized(&mut rng, 8);
        let cfg = PretrainConfig {
            hidden: 6,
            layers: 2,
            seed: i as u64,
            ..PretrainConfig::default()
        };
        let (enc, dec) = init_models(8, &cfg).unwrap();
        let mut params = enc.params.clone();
        params.extend(dec.params.clone());
        // Non-zero tokens so their gradients are exercised too.
        for name in ["enc.mask_token", "dec.remask_token"] {
            let shape = params.get(name).unwrap().shape();
            params.insert(name, random_tensor(&mut rng, shape.0, shape.1, 0.5));
        }
        let mask = sample_mask(fg.node_count(), 0.5, &mut rng);
        let (names, tensors) = named(&params);
        let mut entries = sample_entries(&mut rng, &tensors, 40);
        entries.extend((0..tensors.len()).map(|p| (p, rng.gen_range(0..tensors[p].len()))));
        let err = grad_check_entries(
            |t, v| {
                let bound = bound_from(&names, v);
                match graph_loss_on(t, &fg, &bound, 2, &mask, 2.0) {
                    Ok(l) => Ok(l),
                    Err(MgaeError::Autodiff(e)) => Err(e),
                    Err(e) => panic!("{e}"),
                }
            },
            &tensors,
            H,
            &entries,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Mean pair loss of the scorer against finite differences on every entry.
pub fn ranker_grad_error() -> f64 {
    let mut rng = rng("grad/ranker");
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let mut table = EmbeddingTable::new();
        for i in 0..6 {
            table.insert(format!("s{i}"), random_tensor(&mut rng, 1, 128, 1.0).into_data());
        }
        let comps: Vec<ComparisonRecord> = (0..8)
            .map(|_| {
                let l = rng.gen_range(0..6);
                let r = (l + rng.gen_range(1..6)) % 6;
                ComparisonRecord {
                    left: format!("s{l}"),
                    right: format!("s{r}"),
                    dimension: PerceptualDimension::Safe,
                    winner: [Winner::Left, Winner::Right, Winner::Tie][rng.gen_range(0..3)],
                }
            })
            .collect();
        let scorer = ScorerParams::init(&mut rng);
        let (names, tensors) = named(&scorer.params);
        let batch: Vec<&ComparisonRecord> = comps.iter().collect();
        let mut entries = sample_entries(&mut rng, &tensors, 150);
        entries.extend((0..tensors.len()).map(|p| (p, rng.gen_range(0..tensors[p].len()))));
        let err = grad_check_entries(
            |t, v| {
                let bound = bound_from(&names, v);
                pair_loss_on(t, &batch, &table, &bound).map_err(|e| match e {
                    streetgraph::ranker::RankerError::Autodiff(e) => e,
                    other => panic!("{other}"),
                })
            },
            &tensors,
            H,
            &entries,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// An isomorphic copy: node order shuffled, ids renamed, edge order shuffled.
pub fn permute_graph(g: &SceneGraph, rng: &mut StreamRng) -> SceneGraph {
    use rand::seq::SliceRandom;
    let mut new_ids: Vec<u64> = (0..g.nodes.len() as u64).map(|i| i * 7 + 1000).collect();
    new_ids.shuffle(rng);
    let rename: std::collections::HashMap<u64, u64> =
        g.nodes.iter().zip(&new_ids).map(|(n, &id)| (n.node_id, id)).collect();
    let mut nodes: Vec<NodeRecord> = g
        .nodes
        .iter()
        .map(|n| NodeRecord {
            node_id: rename[&n.node_id],
            label: n.label.clone(),
        })
        .collect();
    nodes.shuffle(rng);
    let mut edges: Vec<EdgeRecord> = g
        .edges
        .iter()
        .map(|e| EdgeRecord {
            src: rename[&e.src],
            dst: rename[&e.dst],
            predicate: e.predicate.clone(),
        })
        .collect();
    edges.shuffle(rng);
    SceneGraph::new(g.scene_id.clone(), g.city.clone(), nodes, edges)
}

/// Independent binary metrics: direct counting and an all-pairs AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub n_pairs: usize,
    pub n_ties: usize,
}

pub fn brute_metrics(probs: &[f64], winners: &[Winner]) -> Option<BruteMetrics> {
    let kept: Vec<(f64, bool)> = probs
        .iter()
        .zip(winners)
        .filter(|(_, w)| **w != Winner::Tie)
        .map(|(p, w)| (*p, *w == Winner::Left))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let predicted_left = |p: f64| p > 0.5;
    let count = |f: &dyn Fn(&(f64, bool)) -> bool| kept.iter().filter(|x| f(x)).count();
    let tp = count(&|&(p, y)| predicted_left(p) && y);
    let fp = count(&|&(p, y)| predicted_left(p) && !y);
    let fneg = count(&|&(p, y)| !predicted_left(p) && y);
    let correct = count(&|&(p, y)| predicted_left(p) == y);
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let pos: Vec<f64> = kept.iter().filter(|x| x.1).map(|x| x.0).collect();
    let neg: Vec<f64> = kept.iter().filter(|x| !x.1).map(|x| x.0).collect();
    let auc = if pos.is_empty() || neg.is_empty() {
        0.5
    } else {
        // Twice the Mann-Whitney count keeps everything integral.
        let mut twice = 0usize;
        for &p in &pos {
            for &n in &neg {
                twice += if p > n {
                    2
                } else if p == n {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * pos.len() * neg.len()) as f64
    };
    Some(BruteMetrics {
        accuracy: div(correct, kept.len()),
        precision: div(tp, tp + fp),
        recall: div(tp, tp + fneg),
        f1: div(2 * tp, 2 * tp + fp + fneg),
        auc,
        n_pairs: kept.len(),
        n_ties: probs.len() - kept.len(),
    })
}

/// A random evaluation instance with deliberate ties in probabilities and votes.
pub fn random_metric_instance(rng: &mut StreamRng) -> (Vec<f64>, Vec<Winner>) {
    let n = rng.gen_range(1..=50);
    let grid = rng.gen_bool(0.5);
    let probs = (0..n)
        .map(|_| {
            if grid {
                rng.gen_range(0..=10) as f64 / 10.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    let winners = (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => Winner::Tie,
            1..=5 => Winner::Left,
            _ => Winner::Right,
        })
        .collect();
    (probs, winners)
}

fn metric(label: &str, [auc, accuracy, recall, f1, precision]: [f64; 5]) -> MetricReport {
    MetricReport {
        label: label.to_string(),
        n_pairs: 100,
        n_ties: 0,
        accuracy,
        auc,
        recall,
        f1,
        precision,
    }
}

/// Fixed report behind the golden Table 1 and Table 2 files.
pub fn golden_report() -> DimensionReport {
    let accuracies = [
        (PerceptualDimension::Beautiful, 0.87),
        (PerceptualDimension::Boring, 0.84),
        (PerceptualDimension::Depressing, 0.83),
        (PerceptualDimension::Lively, 0.88),
        (PerceptualDimension::Safe, 0.87),
        (PerceptualDimension::Wealthy, 0.90),
    ];
    let per_dimension = accuracies
        .iter()
        .map(|&(d, acc)| (d, metric(d.as_str(), [0.84, acc, 0.9, 0.88, 0.86])))
        .collect();
    DimensionReport {
        per_dimension,
        mean_accuracy: 0.865,
        pooled: metric("pooled", [0.84, 0.87, 0.9, 0.88, 0.86]),
        dimension_mean: metric("dimension-mean", [0.835, 0.865, 0.895, 0.875, 0.855]),
    }
}

/// Source and target reports behind the golden Table 3 files.
pub fn golden_cross_city() -> Vec<CrossCityRow> {
    // Order of the array: auc, accuracy, recall, f1, precision.
    let source = metric("source", [0.87, 0.84, 0.8, 0.75, 0.0]);
    let target = metric("target", [0.84, 0.79, 0.8, 0.78, 0.5]);
    cross_city_report(&source, &target)
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Rendered tables paired with their golden file names.
pub fn golden_renderings() -> Vec<(&'static str, String)> {
    use streetgraph::report::{table1_for, table2, table3, Precision};
    let r = golden_report();
    let rows = golden_cross_city();
    let model = "scene-graph-mgae";
    vec![
        ("table1.tsv", table1_for(model, &r, Precision::Tsv).to_tsv()),
        ("table1.txt", table1_for(model, &r, Precision::Text).to_text()),
        ("table2.tsv", table2(model, &r, Precision::Tsv).to_tsv()),
        ("table2.txt", table2(model, &r, Precision::Text).to_text()),
        ("table3.tsv", table3(&rows, Precision::Tsv).to_tsv()),
        ("table3.txt", table3(&rows, Precision::Text).to_text()),
    ]
}

/// Golden files that differ from their rendering.
pub fn golden_mismatches() -> Vec<String> {
    golden_renderings()
        .into_iter()
        .filter_map(|(name, rendered)| {
            let expected = std::fs::read_to_string(golden_dir().join(name)).ok()?;
            (expected != rendered).then(|| format!("{name}:\n{rendered}"))
        })
        .collect()
}

/// Any finite double, spread over many magnitudes including subnormals.
pub fn wild_f64(rng: &mut StreamRng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::from_bits(rng.gen_range(1..1u64 << 52)),
        3 => rng.gen_range(-1.0..1.0),
        _ => {
            let x = f64::from_bits(rng.gen::<u64>());
            if x.is_finite() {
                x
            } else {
                rng.gen_range(-1e300..1e300)
            }
        }
    }
}

fn wild_tensor(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| wild_f64(rng)).collect()).unwrap()
}

fn wild_params(rng: &mut StreamRng, template: &Params) -> Params {
    let mut out = Params::new();
    for (name, t) in template.iter() {
        let (r, c) = t.shape();
        out.insert(name.clone(), wild_tensor(rng, r, c));
    }
    out
}

fn twice<E: std::fmt::Debug>(
    first: String,
    reparse: impl Fn(&str) -> Result<String, E>,
) -> Result<(), String> {
    let second = reparse(&first).map_err(|e| format!("{e:?}"))?;
    let third = reparse(&second).map_err(|e| format!("{e:?}"))?;
    if first == second && second == third {
        Ok(())
    } else {
        Err("bytes changed".into())
    }
}

fn scene_jsonl(graphs: &[SceneGraph]) -> String {
    let mut buf = Vec::new();
    streetgraph::graph::write_scene_jsonl(graphs, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// One write-read-write cycle per format; returns the names of formats whose
/// bytes changed or failed to parse.
pub fn round_trip_failures(rng: &mut StreamRng) -> Vec<String> {
    use streetgraph::autodiff::{params_from_json, params_to_json};
    use streetgraph::graph::parse_scene_jsonl;
    use streetgraph::mgae::{encoder_from_json, encoder_to_json};

    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    let mut graphs: Vec<SceneGraph> = (0..5).map(|i| random_graph(&format!("s{i}"), 2, 12, rng)).collect();
    graphs[0].city = Some("Zürich \"old town\"".into());
    check(
        "scene jsonl",
        twice(scene_jsonl(&graphs), |t| {
            parse_scene_jsonl(t.as_bytes()).map(|g| scene_jsonl(&g))
        }),
    );

    let dim = rng.gen_range(1..10);
    let mut table = String::new();
    for i in 0..rng.gen_range(1..8) {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let line = serde_json::json!({ "text": format!("word {i}"), "vector": v });
        table.push_str(&line.to_string());
        table.push('\n');
    }
    let write_table = |t: &str| {
        TextEmbedder::load_table(t.as_bytes(), 0).map(|e| {
            let mut buf = Vec::new();
            e.write_table(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        })
    };
    // The first load normalizes; from then on bytes must be stable.
    match write_table(&table) {
        Ok(first) => check("embedding table jsonl", twice(first, write_table)),
        Err(e) => check("embedding table jsonl", Err(e.to_string())),
    }

    let d_t = rng.gen_range(2..6);
    let cfg = PretrainConfig {
        hidden: 3,
        ..PretrainConfig::default()
    };
    let (enc, _) = init_models(d_t, &cfg).unwrap();
    let enc = streetgraph::mgae::EncoderModel {
        params: wild_params(rng, &enc.params),
        ..enc
    };
    check(
        "params json",
        twice(params_to_json(&enc.params), |t| params_from_json(t).map(|p| params_to_json(&p))),
    );
    check(
        "encoder json",
        twice(encoder_to_json(&enc, &cfg), |t| {
            encoder_from_json(t).map(|(m, _)| encoder_to_json(&m, &cfg))
        }),
    );

    let scorer = ScorerParams::from_params(wild_params(rng, &ScorerParams::zeros().params)).unwrap();
    check(
        "scorer json",
        twice(scorer.to_json(), |t| ScorerParams::from_json(t).map(|s| s.to_json())),
    );

    let mut emb = EmbeddingTable::new();
    for i in 0..4 {
        emb.insert(format!("scene {i}"), wild_tensor(rng, 1, 128).into_data());
    }
    let tsv = |e: &EmbeddingTable| {
        let mut buf = Vec::new();
        e.write_tsv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    check(
        "embeddings tsv",
        twice(tsv(&emb), |t| EmbeddingTable::read_tsv(t.as_bytes()).map(|e| tsv(&e))),
    );
    failures
}
