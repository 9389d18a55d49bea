//! Masked graph autoencoder.
//!
//! The encoder is a stack of edge-conditioned message-passing layers. For a
//! node `v` with input row `h_v` a layer computes
//!
//! ```text
//! h'_v = leaky_relu( h_v W_self
//!                  + mean_{u -> v} [h_u || x_e] W_in
//!                  + mean_{v -> w} [h_w || x_e] W_out
//!                  + b )
//! ```
//!
//! where `x_e` is the predicate feature of the edge. Pretraining replaces a
//! random subset of node feature rows with a learnable mask token, encodes,
//! swaps the same rows of the latent matrix for a learnable re-mask token,
//! decodes with one more layer back to feature width and scores the masked
//! rows with the scaled cosine error. Only the encoder is kept afterwards;
//! the scene embedding is the mean of its node outputs (128 wide).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::autodiff::{
    Adam, AdamConfig, AutodiffError, Bound, CheckpointError, Params, Tape, Tensor, TensorRecord,
    Var,
};
use crate::rng::{stream, StreamRng};
use crate::text::FeaturizedGraph;

/// Width of node and scene embeddings produced by the encoder.
pub const EMBED_DIM: usize = 128;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_LAYERS: usize = 2;

#[derive(Debug, Error)]
pub enum MgaeError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pretraining needs at least one graph")]
    EmptyDataset,
    #[error("scaled cosine error needs a non-empty mask set")]
    EmptyMask,
    #[error("graph {scene_id:?} has feature width {found}, model expects {expected}")]
    FeatureWidth {
        scene_id: String,
        expected: usize,
        found: usize,
    },
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: AutodiffError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One message-passing layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_self: Tensor,
    pub w_in: Tensor,
    pub w_out: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros(d_in: usize, d_edge: usize, d_out: usize) -> Self {
        LayerParams {
            w_self: Tensor::zeros(d_in, d_out),
            w_in: Tensor::zeros(d_in + d_edge, d_out),
            w_out: Tensor::zeros(d_in + d_edge, d_out),
            bias: Tensor::zeros(1, d_out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(d_in: usize, d_edge: usize, d_out: usize, rng: &mut StreamRng) -> Self {
        LayerParams {
            w_self: glorot(d_in, d_out, rng),
            w_in: glorot(d_in + d_edge, d_out, rng),
            w_out: glorot(d_in + d_edge, d_out, rng),
            bias: Tensor::zeros(1, d_out),
        }
    }

    fn store(self, params: &mut Params, prefix: &str) {
        params.insert(format!("{prefix}.w_self"), self.w_self);
        params.insert(format!("{prefix}.w_in"), self.w_in);
        params.insert(format!("{prefix}.w_out"), self.w_out);
        params.insert(format!("{prefix}.bias"), self.bias);
    }

    fn load(params: &Params, prefix: &str) -> Result<Self, AutodiffError> {
        Ok(LayerParams {
            w_self: params.get(&format!("{prefix}.w_self"))?.clone(),
            w_in: params.get(&format!("{prefix}.w_in"))?.clone(),
            w_out: params.get(&format!("{prefix}.w_out"))?.clone(),
            bias: params.get(&format!("{prefix}.bias"))?.clone(),
        })
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut StreamRng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

/// Tape handles of one layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w_self: Var,
    pub w_in: Var,
    pub w_out: Var,
    pub bias: Var,
}

impl LayerVars {
    fn bind(bound: &Bound, prefix: &str) -> Result<Self, AutodiffError> {
        Ok(LayerVars {
            w_self: bound.var(&format!("{prefix}.w_self"))?,
            w_in: bound.var(&format!("{prefix}.w_in"))?,
            w_out: bound.var(&format!("{prefix}.w_out"))?,
            bias: bound.var(&format!("{prefix}.bias"))?,
        })
    }

    fn constants(tape: &mut Tape, p: &LayerParams) -> Self {
        LayerVars {
            w_self: tape.constant(p.w_self.clone()),
            w_in: tape.constant(p.w_in.clone()),
            w_out: tape.constant(p.w_out.clone()),
            bias: tape.constant(p.bias.clone()),
        }
    }
}

/// Graph tensors placed on a tape once per forward pass.
#[derive(Debug, Clone)]
pub struct GraphVars<'g> {
    pub fg: &'g FeaturizedGraph,
    pub edge_features: Var,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl<'g> GraphVars<'g> {
    pub fn new(tape: &mut Tape, fg: &'g FeaturizedGraph) -> Self {
        GraphVars {
            fg,
            edge_features: tape.constant(fg.edge_features.clone()),
            src: fg.edge_index.iter().map(|e| e.0).collect(),
            dst: fg.edge_index.iter().map(|e| e.1).collect(),
        }
    }
}

/// One message-passing layer on the tape.
pub fn mp_layer_on(
    tape: &mut Tape,
    h: Var,
    graph: &GraphVars<'_>,
    layer: &LayerVars,
) -> Result<Var, AutodiffError> {
    let n = graph.fg.node_count();
    if tape.shape(h).0 != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "mp_layer",
            lhs: tape.shape(h),
            rhs: (n, tape.shape(layer.w_self).0),
        });
    }
    let mut acc = tape.matmul(h, layer.w_self)?;
    if !graph.src.is_empty() {
        // Incoming: messages from sources, averaged at destinations.
        let h_src = tape.gather_rows(h, &graph.src)?;
        let m_in = tape.concat_cols(h_src, graph.edge_features)?;
        let m_in = tape.matmul(m_in, layer.w_in)?;
        let agg_in = tape.scatter_mean_rows(m_in, &graph.dst, n)?;
        acc = tape.add(acc, agg_in)?;

        let h_dst = tape.gather_rows(h, &graph.dst)?;
        let m_out = tape.concat_cols(h_dst, graph.edge_features)?;
        let m_out = tape.matmul(m_out, layer.w_out)?;
        let agg_out = tape.scatter_mean_rows(m_out, &graph.src, n)?;
        acc = tape.add(acc, agg_out)?;
    }
    let acc = tape.add(acc, layer.bias)?;
    tape.leaky_relu(acc, LEAKY_SLOPE)
}

/// Forward-only message-passing layer.
pub fn mp_layer(
    features: &Tensor,
    fg: &FeaturizedGraph,
    p: &LayerParams,
) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let graph = GraphVars::new(&mut tape, fg);
    let vars = LayerVars::constants(&mut tape, p);
    let h = tape.constant(features.clone());
    let out = mp_layer_on(&mut tape, h, &graph, &vars)?;
    Ok(tape.value(out).clone())
}

fn layer_widths(d_t: usize, hidden: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|i| {
            let d_in = if i == 0 { d_t } else { hidden };
            let d_out = if i + 1 == layers { EMBED_DIM } else { hidden };
            (d_in, d_out)
        })
        .collect()
}

/// Encoder weights plus the learnable mask token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Names: `enc.{i}.w_self|w_in|w_out|bias`, `enc.mask_token`.
    pub params: Params,
}

impl EncoderModel {
    pub fn init(
        feature_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut StreamRng,
    ) -> Result<Self, MgaeError> {
        if layers == 0 || hidden == 0 || feature_dim == 0 {
            return Err(MgaeError::Config(
                "layers, hidden width and feature width must be positive".into(),
            ));
        }
        let mut params = Params::new();
        for (i, (d_in, d_out)) in layer_widths(feature_dim, hidden, layers).into_iter().enumerate() {
            LayerParams::init(d_in, feature_dim, d_out, rng).store(&mut params, &format!("enc.{i}"));
        }
        params.insert("enc.mask_token", Tensor::zeros(1, feature_dim));
        Ok(EncoderModel {
            feature_dim,
            hidden,
            layers,
            params,
        })
    }

    pub fn layer(&self, i: usize) -> Result<LayerParams, AutodiffError> {
        LayerParams::load(&self.params, &format!("enc.{i}"))
    }

    pub fn mask_token(&self) -> &Tensor {
        self.params.get("enc.mask_token").expect("encoder has a mask token")
    }

    fn check_graph(&self, fg: &FeaturizedGraph) -> Result<(), MgaeError> {
        if fg.feature_dim() != self.feature_dim || fg.edge_features.cols() != self.feature_dim {
            return Err(MgaeError::FeatureWidth {
                scene_id: fg.graph.scene_id.clone(),
                expected: self.feature_dim,
                found: fg.feature_dim(),
            });
        }
        Ok(())
    }
}

/// Decoder layer (128 -> feature width) plus the re-mask token.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    /// Names: `dec.w_self|w_in|w_out|bias`, `dec.remask_token`.
    pub params: Params,
}

impl DecoderModel {
    pub fn init(feature_dim: usize, rng: &mut StreamRng) -> Self {
        let mut params = Params::new();
        LayerParams::init(EMBED_DIM, feature_dim, feature_dim, rng).store(&mut params, "dec");
        params.insert("dec.remask_token", Tensor::zeros(1, EMBED_DIM));
        DecoderModel { params }
    }

    pub fn layer(&self) -> Result<LayerParams, AutodiffError> {
        LayerParams::load(&self.params, "dec")
    }
}

/// Apply all encoder layers to `input` (node rows) on the tape.
pub fn encode_on(
    tape: &mut Tape,
    graph: &GraphVars<'_>,
    bound: &Bound,
    layers: usize,
    input: Var,
) -> Result<Var, AutodiffError> {
    let mut h = input;
    for i in 0..layers {
        let vars = LayerVars::bind(bound, &format!("enc.{i}"))?;
        h = mp_layer_on(tape, h, graph, &vars)?;
    }
    Ok(h)
}

/// Replace masked latent rows with the re-mask token and decode.
pub fn remask_decode_on(
    tape: &mut Tape,
    graph: &GraphVars<'_>,
    bound: &Bound,
    latent: Var,
    mask: &[usize],
) -> Result<Var, AutodiffError> {
    let token = bound.var("dec.remask_token")?;
    let h = if mask.is_empty() {
        latent
    } else {
        tape.replace_rows(latent, token, mask)?
    };
    let vars = LayerVars::bind(bound, "dec")?;
    mp_layer_on(tape, h, graph, &vars)
}

/// Mean over masked rows of `(1 - cos(x_v, x_hat_v))^gamma`.
pub fn sce_loss_on(
    tape: &mut Tape,
    target: Var,
    recon: Var,
    mask: &[usize],
    gamma: f64,
) -> Result<Var, MgaeError> {
    if mask.is_empty() {
        return Err(MgaeError::EmptyMask);
    }
    let x = tape.gather_rows(target, mask)?;
    let x_hat = tape.gather_rows(recon, mask)?;
    let cos = tape.cosine_similarity_rows(x, x_hat)?;
    let err = tape.affine(cos, -1.0, 1.0)?;
    // 1 - cos can round to a hair below zero for parallel rows.
    let err = clamp_nonnegative(tape, err)?;
    let powered = tape.pow(err, gamma)?;
    Ok(tape.mean(powered)?)
}

fn clamp_nonnegative(tape: &mut Tape, v: Var) -> Result<Var, AutodiffError> {
    if tape.value(v).data().iter().all(|x| *x >= 0.0) {
        return Ok(v);
    }
    // Negative entries are rounding noise of size ~1e-16; zero them through a
    // constant mask so the gradient there is dropped as well.
    let keep = tape.value(v).map(|x| if x >= 0.0 { 1.0 } else { 0.0 });
    let keep = tape.constant(keep);
    tape.mul(v, keep)
}

pub fn sce_loss(
    x: &Tensor,
    x_hat: &Tensor,
    mask: &[usize],
    gamma: f64,
) -> Result<f64, MgaeError> {
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(x_hat.clone());
    let l = sce_loss_on(&mut tape, a, b, mask, gamma)?;
    Ok(tape.value(l).item())
}

/// Number of rows masked for a graph of `n` nodes.
pub fn mask_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Sample the mask set uniformly without replacement (sorted ascending).
pub fn sample_mask(n: usize, rate: f64, rng: &mut StreamRng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = mask_count(n, rate);
    let mut set = rand::seq::index::sample(rng, n, k).into_vec();
    set.sort_unstable();
    set
}

/// Mask node features: returns the masked feature matrix and the mask set.
pub fn mask_nodes(
    fg: &FeaturizedGraph,
    rate: f64,
    mask_token: &Tensor,
    rng: &mut StreamRng,
) -> (Tensor, Vec<usize>) {
    let set = sample_mask(fg.node_count(), rate, rng);
    let mut x = fg.node_features.clone();
    for &i in &set {
        x.row_mut(i).copy_from_slice(mask_token.data());
    }
    (x, set)
}

/// Node embeddings (`n x 128`). `override_features` replaces the graph's
/// own node features when given.
pub fn encode(
    fg: &FeaturizedGraph,
    model: &EncoderModel,
    override_features: Option<&Tensor>,
) -> Result<Tensor, MgaeError> {
    model.check_graph(fg)?;
    let mut tape = Tape::new();
    let graph = GraphVars::new(&mut tape, fg);
    let bound = model.params.bind_frozen(&mut tape);
    let x = tape.constant(override_features.unwrap_or(&fg.node_features).clone());
    let h = encode_on(&mut tape, &graph, &bound, model.layers, x)?;
    Ok(tape.value(h).clone())
}

pub fn remask_decode(
    latent: &Tensor,
    mask: &[usize],
    decoder: &DecoderModel,
    fg: &FeaturizedGraph,
) -> Result<Tensor, MgaeError> {
    let mut tape = Tape::new();
    let graph = GraphVars::new(&mut tape, fg);
    let bound = decoder.params.bind_frozen(&mut tape);
    let h = tape.constant(latent.clone());
    let out = remask_decode_on(&mut tape, &graph, &bound, h, mask)?;
    Ok(tape.value(out).clone())
}

/// Scene-level embedding: mean over nodes of the encoder output (`1 x 128`).
pub fn scene_embedding(fg: &FeaturizedGraph, model: &EncoderModel) -> Result<Tensor, MgaeError> {
    Ok(encode(fg, model, None)?.column_mean())
}

/// Scene embedding on the tape, for fine-tuning through the encoder.
pub fn scene_embedding_on(
    tape: &mut Tape,
    fg: &FeaturizedGraph,
    bound: &Bound,
    layers: usize,
) -> Result<Var, AutodiffError> {
    let graph = GraphVars::new(tape, fg);
    let x = tape.constant(fg.node_features.clone());
    let h = encode_on(tape, &graph, bound, layers, x)?;
    tape.row_mean(h)
}

/// Full masked-reconstruction loss of one graph on the tape.
pub fn graph_loss_on(
    tape: &mut Tape,
    fg: &FeaturizedGraph,
    bound: &Bound,
    layers: usize,
    mask: &[usize],
    gamma: f64,
) -> Result<Var, MgaeError> {
    let graph = GraphVars::new(tape, fg);
    let x = tape.constant(fg.node_features.clone());
    let token = bound.var("enc.mask_token")?;
    let masked = tape.replace_rows(x, token, mask)?;
    let latent = encode_on(tape, &graph, bound, layers, masked)?;
    let recon = remask_decode_on(tape, &graph, bound, latent, mask)?;
    sce_loss_on(tape, x, recon, mask, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_rate: 0.5,
            gamma: 2.0,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            lr: 1e-3,
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), MgaeError> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(MgaeError::Config(format!(
                "mask_rate must lie in (0, 1), got {}",
                self.mask_rate
            )));
        }
        if !(self.gamma >= 1.0) {
            return Err(MgaeError::Config(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(MgaeError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MgaeError::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: EncoderModel,
    /// Mean masked-reconstruction loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Initialize encoder and decoder from the "init" stream of `seed`.
pub fn init_models(
    feature_dim: usize,
    cfg: &PretrainConfig,
) -> Result<(EncoderModel, DecoderModel), MgaeError> {
    let mut rng = stream(cfg.seed, "init");
    let encoder = EncoderModel::init(feature_dim, cfg.hidden, cfg.layers, &mut rng)?;
    let decoder = DecoderModel::init(feature_dim, &mut rng);
    Ok((encoder, decoder))
}

/// Self-supervised pretraining. Returns the encoder; the decoder is dropped.
pub fn pretrain(
    dataset: &[FeaturizedGraph],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, MgaeError> {
    pretrain_with_progress(dataset, cfg, |_, _| {})
}

pub fn pretrain_with_progress(
    dataset: &[FeaturizedGraph],
    cfg: &PretrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<PretrainOutcome, MgaeError> {
    cfg.validate()?;
    let first = dataset.first().ok_or(MgaeError::EmptyDataset)?;
    let feature_dim = first.feature_dim();
    let (encoder, decoder) = init_models(feature_dim, cfg)?;
    for fg in dataset {
        encoder.check_graph(fg)?;
    }

    let mut params = encoder.params.clone();
    params.extend(decoder.params);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut batch_rng = stream(cfg.seed, "batch");
    let mut mask_rng = stream(cfg.seed, "mask");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let diverged = |source: AutodiffError| MgaeError::Diverged { epoch, source };
        order.shuffle(&mut batch_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut batch_loss: Option<Var> = None;
            for &gi in chunk {
                let fg = &dataset[gi];
                let mask = sample_mask(fg.node_count(), cfg.mask_rate, &mut mask_rng);
                let l = match graph_loss_on(&mut tape, fg, &bound, cfg.layers, &mask, cfg.gamma) {
                    Ok(l) => l,
                    Err(MgaeError::Autodiff(e)) => return Err(diverged(e)),
                    Err(e) => return Err(e),
                };
                batch_loss = Some(match batch_loss {
                    None => l,
                    Some(acc) => tape.add(acc, l).map_err(diverged)?,
                });
            }
            let sum = batch_loss.expect("chunks are non-empty");
            let loss = tape
                .scale(sum, 1.0 / chunk.len() as f64)
                .map_err(diverged)?;
            total += tape.value(sum).item();
            let grads = tape.backward(loss)?;
            let named = bound.gradients(&grads, &params);
            adam.step(&mut params, &named)?;
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(AutodiffError::NonFinite { op: "epoch_loss" }));
        }
        progress(epoch, mean);
        epoch_losses.push(mean);
    }

    Ok(PretrainOutcome {
        encoder: EncoderModel {
            params: params.filter_prefix("enc."),
            ..encoder
        },
        epoch_losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderHeader {
    pub d_t: usize,
    pub hidden: usize,
    pub d_z: usize,
    pub layers: usize,
    pub mask_rate: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Digest of the run configuration that produced the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderFile {
    header: EncoderHeader,
    params: BTreeMap<String, TensorRecord>,
}

pub fn encoder_to_json(model: &EncoderModel, cfg: &PretrainConfig) -> String {
    encoder_to_json_tagged(model, cfg, None)
}

pub fn encoder_to_json_tagged(
    model: &EncoderModel,
    cfg: &PretrainConfig,
    config_hash: Option<&str>,
) -> String {
    let file = EncoderFile {
        header: EncoderHeader {
            d_t: model.feature_dim,
            hidden: model.hidden,
            d_z: EMBED_DIM,
            layers: model.layers,
            mask_rate: cfg.mask_rate,
            gamma: cfg.gamma,
            seed: cfg.seed,
            config_hash: config_hash.map(str::to_string),
        },
        params: model
            .params
            .iter()
            .map(|(k, v)| (k.clone(), TensorRecord::from_tensor(v)))
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("finite params serialize");
    s.push('\n');
    s
}

pub fn encoder_from_json(text: &str) -> Result<(EncoderModel, EncoderHeader), MgaeError> {
    let file: EncoderFile = serde_json::from_str(text).map_err(CheckpointError::from)?;
    let h = file.header;
    if h.d_z != EMBED_DIM {
        return Err(MgaeError::Config(format!(
            "checkpoint embedding width {} is not {EMBED_DIM}",
            h.d_z
        )));
    }
    let mut params = Params::new();
    for (name, rec) in file.params {
        let t = rec.into_tensor(&name)?;
        params.insert(name, t);
    }
    let model = EncoderModel {
        feature_dim: h.d_t,
        hidden: h.hidden,
        layers: h.layers,
        params,
    };
    // Every expected tensor must be present with the right shape.
    for (i, (d_in, d_out)) in layer_widths(h.d_t, h.hidden, h.layers).into_iter().enumerate() {
        let l = model.layer(i)?;
        let expect = LayerParams::zeros(d_in, h.d_t, d_out);
        for (got, want) in [
            (&l.w_self, &expect.w_self),
            (&l.w_in, &expect.w_in),
            (&l.w_out, &expect.w_out),
            (&l.bias, &expect.bias),
        ] {
            if got.shape() != want.shape() {
                return Err(MgaeError::Config(format!(
                    "layer {i}: tensor shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
    }
    if model.params.get("enc.mask_token")?.shape() != (1, h.d_t) {
        return Err(MgaeError::Config("mask token shape".into()));
    }
    Ok((model, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{from_triplets, NodeRecord, SceneGraph};
    use crate::text::TextEmbedder;

    fn small_graph() -> FeaturizedGraph {
        let g = from_triplets(
            "s",
            &[
                ("car".into(), "parked on".into(), "sidewalk".into(), 0, 0),
                ("tree".into(), "along".into(), "sidewalk".into(), 0, 0),
                ("person".into(), "near".into(), "car".into(), 0, 0),
            ],
        )
        .unwrap();
        TextEmbedder::hashed(8, 0).unwrap().featurize_graph(&g).unwrap()
    }

    #[test]
    fn isolated_node_uses_self_term_only() {
        let g = SceneGraph::new(
            "iso",
            None,
            vec![NodeRecord {
                node_id: 0,
                label: "tree".into(),
            }],
            vec![],
        );
        let fg = TextEmbedder::hashed(8, 0).unwrap().featurize_graph(&g).unwrap();
        let mut rng = stream(1, "t");
        let mut p = LayerParams::init(8, 8, 4, &mut rng);
        p.bias = Tensor::from_vec(1, 4, vec![0.1, -0.3, 0.0, 2.0]).unwrap();
        let out = mp_layer(&fg.node_features, &fg, &p).unwrap();
        for c in 0..4 {
            let mut z = p.bias.get(0, c);
            for k in 0..8 {
                z += fg.node_features.get(0, k) * p.w_self.get(k, c);
            }
            let expect = if z > 0.0 { z } else { LEAKY_SLOPE * z };
            assert!((out.get(0, c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_only_layer() {
        let fg = small_graph();
        let mut p = LayerParams::zeros(8, 8, 3);
        p.bias = Tensor::from_vec(1, 3, vec![0.5, -1.0, 0.0]).unwrap();
        let out = mp_layer(&fg.node_features, &fg, &p).unwrap();
        for r in 0..out.rows() {
            assert_eq!(out.row(r), &[0.5, -0.2, 0.0]);
        }
    }

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(10, 0.5), 5);
        assert_eq!(mask_count(1, 0.5), 1);
        assert_eq!(mask_count(1, 0.01), 1);
        assert_eq!(mask_count(3, 0.99), 3);
        let mut a = stream(3, "mask");
        let mut b = stream(3, "mask");
        let sa = sample_mask(10, 0.5, &mut a);
        assert_eq!(sa.len(), 5);
        assert_eq!(sa, sample_mask(10, 0.5, &mut b));
    }

    #[test]
    fn mask_nodes_replaces_rows_only() {
        let fg = small_graph();
        let token = Tensor::filled(1, 8, 7.0);
        let mut rng = stream(0, "mask");
        let (x, set) = mask_nodes(&fg, 0.5, &token, &mut rng);
        assert_eq!(set.len(), mask_count(fg.node_count(), 0.5));
        for r in 0..fg.node_count() {
            if set.contains(&r) {
                assert_eq!(x.row(r), token.data());
            } else {
                assert_eq!(x.row(r), fg.node_features.row(r));
            }
        }
    }

    #[test]
    fn sce_loss_cases() {
        let x = Tensor::from_vec(2, 3, vec![1., 2., 3., -1., 0.5, 0.]).unwrap();
        let scaled = x.map(|v| 2.5 * v);
        assert!(sce_loss(&x, &scaled, &[0, 1], 2.0).unwrap().abs() < 1e-12);

        let a = Tensor::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![0., 1., 1., 0.]).unwrap();
        assert!((sce_loss(&a, &b, &[0, 1], 2.0).unwrap() - 1.0).abs() < 1e-12);

        let neg = x.map(|v| -v);
        assert!((sce_loss(&x, &neg, &[0, 1], 1.0).unwrap() - 2.0).abs() < 1e-12);

        assert!(matches!(sce_loss(&x, &neg, &[], 1.0), Err(MgaeError::EmptyMask)));
    }

    #[test]
    fn encode_width_and_remask() {
        let fg = small_graph();
        let cfg = PretrainConfig {
            hidden: 16,
            ..PretrainConfig::default()
        };
        let (enc, dec) = init_models(8, &cfg).unwrap();
        let h = encode(&fg, &enc, None).unwrap();
        assert_eq!(h.shape(), (fg.node_count(), EMBED_DIM));
        assert_eq!(scene_embedding(&fg, &enc).unwrap().shape(), (1, EMBED_DIM));

        let all: Vec<usize> = (0..fg.node_count()).collect();
        let out_all = remask_decode(&h, &all, &dec, &fg).unwrap();
        assert_eq!(out_all.cols(), 8);
        // With every row re-masked the latent content is gone.
        let other = h.map(|v| v * 3.0 + 1.0);
        assert_eq!(out_all, remask_decode(&other, &all, &dec, &fg).unwrap());
        let pure = remask_decode(&h, &[], &dec, &fg).unwrap();
        assert_ne!(pure, out_all);
    }

    #[test]
    fn zero_epochs_returns_initial_encoder() {
        let fg = small_graph();
        let cfg = PretrainConfig {
            epochs: 0,
            hidden: 16,
            ..PretrainConfig::default()
        };
        let out = pretrain(&[fg], &cfg).unwrap();
        let (init, _) = init_models(8, &cfg).unwrap();
        assert_eq!(out.encoder, init);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn config_validation() {
        let fg = small_graph();
        for bad in [
            PretrainConfig {
                mask_rate: 1.0,
                ..PretrainConfig::default()
            },
            PretrainConfig {
                gamma: 0.5,
                ..PretrainConfig::default()
            },
            PretrainConfig {
                batch_size: 0,
                ..PretrainConfig::default()
            },
        ] {
            assert!(matches!(
                pretrain(std::slice::from_ref(&fg), &bad),
                Err(MgaeError::Config(_))
            ));
        }
        assert!(matches!(
            pretrain(&[], &PretrainConfig::default()),
            Err(MgaeError::EmptyDataset)
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = PretrainConfig {
            hidden: 16,
            seed: 9,
            ..PretrainConfig::default()
        };
        let (enc, _) = init_models(8, &cfg).unwrap();
        let text = encoder_to_json(&enc, &cfg);
        assert!(text.starts_with(r#"{"header":{"d_t":8,"hidden":16,"d_z":128,"layers":2,"mask_rate":0.5,"gamma":2.0,"seed":9}"#));
        let (back, header) = encoder_from_json(&text).unwrap();
        assert_eq!(back, enc);
        assert_eq!(header.seed, 9);
        assert_eq!(encoder_to_json(&back, &cfg), text);
    }
}
