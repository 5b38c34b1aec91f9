use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mask::AttentionMaskSpec;
use super::params::{HeadKind, ParamGroup, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::corpus::{TargetKind, Targets, TokenId, TransformedBatch};
use crate::error::{Error, Result};
use crate::objective_space::OutputTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 64,
            num_classes: 2,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            n_layers: 2,
            max_seq_len: 32,
            init_std: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("model dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
enum HeadIds {
    /// Projection to the vocabulary.
    Vocab(ParamId, ParamId),
    /// One tanh hidden layer, then class logits.
    Class {
        hidden: (ParamId, ParamId),
        out: (ParamId, ParamId),
    },
    Scalar(ParamId, ParamId),
}

/// Transformer encoder whose attention pattern is supplied per call, with a
/// bank of output heads over the shared body.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    final_ln: Option<(ParamId, ParamId)>,
    heads: BTreeMap<HeadKind, HeadIds>,
}

fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn head_kind_for(output: OutputTag) -> HeadKind {
    HeadKind::Output(output)
}

impl TinyModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, f, std) = (config.d_model, config.d_ff, config.init_std);
        let mut ps = ParamSet::default();
        let body = ParamGroup::Body;
        let tok_emb = ps.push("embed.token", normal(config.vocab_size, d, std, rng), body);
        let pos_emb = ps.push("embed.position", normal(config.max_seq_len, d, std, rng), body);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let ln = |ps: &mut ParamSet, tag: &str| {
                (
                    ps.push(format!("layer{l}.{tag}.gain"), Array2::ones((1, d)), body),
                    ps.push(format!("layer{l}.{tag}.bias"), Array2::zeros((1, d)), body),
                )
            };
            let ln1 = ln(&mut ps, "ln1");
            let lin = |ps: &mut ParamSet, tag: &str, i: usize, o: usize, rng: &mut R| {
                (
                    ps.push(format!("layer{l}.{tag}.weight"), normal(i, o, std, rng), body),
                    ps.push(format!("layer{l}.{tag}.bias"), Array2::zeros((1, o)), body),
                )
            };
            let wq = lin(&mut ps, "attn.q", d, d, rng);
            let wk = lin(&mut ps, "attn.k", d, d, rng);
            let wv = lin(&mut ps, "attn.v", d, d, rng);
            let wo = lin(&mut ps, "attn.out", d, d, rng);
            let ff1 = lin(&mut ps, "mlp.in", d, f, rng);
            let ff2 = lin(&mut ps, "mlp.out", f, d, rng);
            let ln2 = (
                ps.push(format!("layer{l}.ln2.gain"), Array2::ones((1, d)), body),
                ps.push(format!("layer{l}.ln2.bias"), Array2::zeros((1, d)), body),
            );
            layers.push(LayerIds {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                ff1,
                ff2,
            });
        }
        let final_ln = (config.n_layers > 0).then(|| {
            (
                ps.push("final_ln.gain", Array2::ones((1, d)), body),
                ps.push("final_ln.bias", Array2::zeros((1, d)), body),
            )
        });
        Ok(TinyModel {
            config,
            params: ps,
            tok_emb,
            pos_emb,
            layers,
            final_ln,
            heads: BTreeMap::new(),
        })
    }

    pub fn has_head(&self, kind: HeadKind) -> bool {
        self.heads.contains_key(&kind)
    }

    pub fn head_kinds(&self) -> Vec<HeadKind> {
        self.heads.keys().copied().collect()
    }

    /// Creates the head for `kind` if it does not exist yet. Class-style heads
    /// start with a zero output layer, so their first logits are uniform.
    pub fn ensure_head<R: Rng + ?Sized>(&mut self, kind: HeadKind, rng: &mut R) {
        if self.heads.contains_key(&kind) {
            return;
        }
        let (d, std) = (self.config.d_model, self.config.init_std);
        let group = ParamGroup::Head(kind);
        let ps = &mut self.params;
        let ids = match kind {
            HeadKind::Output(OutputTag::DenoiseToken) | HeadKind::Output(OutputTag::NextToken) => {
                let v = self.config.vocab_size;
                HeadIds::Vocab(
                    ps.push(format!("head.{kind}.weight"), normal(d, v, std, rng), group),
                    ps.push(format!("head.{kind}.bias"), Array2::zeros((1, v)), group),
                )
            }
            HeadKind::Output(OutputTag::TfIdf) => HeadIds::Scalar(
                ps.push(format!("head.{kind}.weight"), normal(d, 1, std, rng), group),
                ps.push(format!("head.{kind}.bias"), Array2::zeros((1, 1)), group),
            ),
            HeadKind::Output(OutputTag::EndTaskLabel) | HeadKind::Dev => {
                let c = self.config.num_classes;
                let hidden_std = 1.0 / (d as f64).sqrt();
                HeadIds::Class {
                    hidden: (
                        ps.push(format!("head.{kind}.hidden.weight"), normal(d, d, hidden_std, rng), group),
                        ps.push(format!("head.{kind}.hidden.bias"), Array2::zeros((1, d)), group),
                    ),
                    out: (
                        ps.push(format!("head.{kind}.out.weight"), Array2::zeros((d, c)), group),
                        ps.push(format!("head.{kind}.out.bias"), Array2::zeros((1, c)), group),
                    ),
                }
            }
        };
        self.heads.insert(kind, ids);
    }

    /// Parameter ids owned by one head.
    pub fn head_params(&self, kind: HeadKind) -> Vec<ParamId> {
        match self.heads.get(&kind) {
            None => Vec::new(),
            Some(HeadIds::Vocab(w, b)) | Some(HeadIds::Scalar(w, b)) => vec![*w, *b],
            Some(HeadIds::Class { hidden, out }) => vec![hidden.0, hidden.1, out.0, out.1],
        }
    }

    /// Re-initializes a class-style head in place (zero output layer).
    pub fn reset_head<R: Rng + ?Sized>(&mut self, kind: HeadKind, rng: &mut R) {
        let Some(HeadIds::Class { hidden, out }) = self.heads.get(&kind).cloned() else {
            return;
        };
        let d = self.config.d_model;
        *self.params.value_mut(hidden.0) = normal(d, d, 1.0 / (d as f64).sqrt(), rng);
        self.params.value_mut(hidden.1).fill(0.0);
        self.params.value_mut(out.0).fill(0.0);
        self.params.value_mut(out.1).fill(0.0);
    }

    pub fn body_params(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&id| self.params.group(id) == ParamGroup::Body)
            .collect()
    }

    /// Runs the body and returns the final hidden states, `(B·S) × d`, with
    /// row `b·S + i` holding position `i` of sequence `b`.
    pub fn encode(&self, tape: &mut Tape, input: &EncoderInput, mask: &AttentionMaskSpec) -> Result<Encoded> {
        let (b_sz, s) = (input.ids.len(), input.seq_len());
        let cfg = &self.config;
        if mask.seq_len() != s {
            return Err(Error::Shape(format!("mask covers {} positions, batch has {s}", mask.seq_len())));
        }
        let mut tok_rows = Vec::with_capacity(b_sz * s);
        let mut pos_rows = Vec::with_capacity(b_sz * s);
        for (row, pos) in input.ids.iter().zip(&input.positions) {
            if row.len() != s || pos.len() != s {
                return Err(Error::Shape("ragged batch".into()));
            }
            for (&t, &p) in row.iter().zip(pos) {
                if t as usize >= cfg.vocab_size {
                    return Err(Error::Shape(format!("token {t} outside vocabulary of {}", cfg.vocab_size)));
                }
                if p >= cfg.max_seq_len {
                    return Err(Error::Shape(format!("position {p} beyond max_seq_len {}", cfg.max_seq_len)));
                }
                tok_rows.push(t as usize);
                pos_rows.push(p);
            }
        }
        let row_masks: Vec<Array2<bool>> = input.is_pad.iter().map(|pad| mask.with_padding(pad)).collect();

        let te = tape.param(&self.params, self.tok_emb);
        let pe = tape.param(&self.params, self.pos_emb);
        let te = tape.gather(te, tok_rows);
        let pe = tape.gather(pe, pos_rows);
        let mut x = tape.add(te, pe);

        let d = cfg.d_model;
        let nh = cfg.n_heads;
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = Vec::new();
        for layer in &self.layers {
            let h = self.ln(tape, x, layer.ln1);
            let q = self.linear(tape, h, layer.wq);
            let k = self.linear(tape, h, layer.wk);
            let v = self.linear(tape, h, layer.wv);
            let mut parts = Vec::with_capacity(b_sz * nh);
            for (b, allowed) in row_masks.iter().enumerate() {
                for hd in 0..nh {
                    let qb = tape.block(q, b * s, hd * dh, s, dh);
                    let kb = tape.block(k, b * s, hd * dh, s, dh);
                    let vb = tape.block(v, b * s, hd * dh, s, dh);
                    let scores = tape.matmul_bt(qb, kb);
                    let scores = tape.scale(scores, scale);
                    let probs = tape.masked_softmax(scores, allowed);
                    attn.push(probs);
                    let out = tape.matmul(probs, vb);
                    parts.push((out, b * s, hd * dh));
                }
            }
            let ctx = tape.assemble(b_sz * s, d, parts);
            let o = self.linear(tape, ctx, layer.wo);
            x = tape.add(x, o);

            let h = self.ln(tape, x, layer.ln2);
            let h = self.linear(tape, h, layer.ff1);
            let h = tape.gelu(h);
            let h = self.linear(tape, h, layer.ff2);
            x = tape.add(x, h);
        }
        if let Some(ln) = self.final_ln {
            x = self.ln(tape, x, ln);
        }
        Ok(Encoded { hidden: x, attention: attn })
    }

    fn ln(&self, tape: &mut Tape, x: Var, (g, b): (ParamId, ParamId)) -> Var {
        let g = tape.param(&self.params, g);
        let b = tape.param(&self.params, b);
        tape.layer_norm(x, g, b)
    }

    fn linear(&self, tape: &mut Tape, x: Var, (w, b): (ParamId, ParamId)) -> Var {
        let w = tape.param(&self.params, w);
        let b = tape.param(&self.params, b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    /// Applies a head to `N × d` features.
    pub fn apply_head(&self, tape: &mut Tape, kind: HeadKind, h: Var) -> Result<Var> {
        let ids = self
            .heads
            .get(&kind)
            .ok_or_else(|| Error::MissingHead(kind.to_string()))?;
        Ok(match ids {
            HeadIds::Vocab(w, b) | HeadIds::Scalar(w, b) => self.linear(tape, h, (*w, *b)),
            HeadIds::Class { hidden, out } => {
                let z = self.linear(tape, h, *hidden);
                let z = tape.tanh(z);
                self.linear(tape, z, *out)
            }
        })
    }
}

/// Token ids with explicit position ids and padding flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub ids: Vec<Vec<TokenId>>,
    pub positions: Vec<Vec<usize>>,
    pub is_pad: Vec<Vec<bool>>,
}

impl EncoderInput {
    pub fn from_batch(batch: &TransformedBatch) -> Self {
        let s = batch.seq_len();
        EncoderInput {
            ids: batch.input_ids.clone(),
            positions: vec![(0..s).collect(); batch.batch_size()],
            is_pad: (0..batch.batch_size())
                .map(|b| (0..s).map(|i| batch.is_pad(b, i)).collect())
                .collect(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }
}

pub struct Encoded {
    pub hidden: Var,
    /// Attention probabilities per layer, then per sequence, then per head.
    pub attention: Vec<Var>,
}

/// Position whose hidden state summarizes sequence `b`: the CLS slot when
/// every position sees every other, otherwise the last visited non-PAD slot.
pub fn summary_position(mask: &AttentionMaskSpec, is_pad: &[bool]) -> usize {
    if !mask.is_ordered() {
        return 0;
    }
    (0..is_pad.len())
        .filter(|&j| !is_pad[j])
        .max_by_key(|&j| mask.rank[j])
        .unwrap_or(0)
}

/// Position whose hidden state predicts the target at `i`. Ordered modes read
/// the closest earlier non-PAD slot in visiting order, which never attends to
/// `i`; `None` when `i` is visited first.
pub fn readout_position(mask: &AttentionMaskSpec, is_pad: &[bool], output: OutputTag, i: usize) -> Option<usize> {
    if !mask.is_ordered() || output == OutputTag::NextToken {
        return Some(i);
    }
    (0..is_pad.len())
        .filter(|&j| !is_pad[j] && mask.rank[j] < mask.rank[i])
        .max_by_key(|&j| mask.rank[j])
}

/// Mean loss of `batch` under its output head; the tape is ready for
/// `backward`. Batches with no scored positions give loss 0 and no graph.
pub fn forward(model: &TinyModel, batch: &TransformedBatch, mask: &AttentionMaskSpec) -> Result<(f64, Tape)> {
    forward_with_input(model, batch, &EncoderInput::from_batch(batch), mask)
}

pub fn forward_with_input(
    model: &TinyModel,
    batch: &TransformedBatch,
    input: &EncoderInput,
    mask: &AttentionMaskSpec,
) -> Result<(f64, Tape)> {
    forward_impl(model, batch, input, mask, head_kind_for(batch.output))
}

/// As `forward`, scoring the batch through `kind` instead of its own head.
pub fn forward_with_head(
    model: &TinyModel,
    batch: &TransformedBatch,
    mask: &AttentionMaskSpec,
    kind: HeadKind,
) -> Result<(f64, Tape)> {
    forward_impl(model, batch, &EncoderInput::from_batch(batch), mask, kind)
}

fn forward_impl(
    model: &TinyModel,
    batch: &TransformedBatch,
    input: &EncoderInput,
    mask: &AttentionMaskSpec,
    kind: HeadKind,
) -> Result<(f64, Tape)> {
    if !model.has_head(kind) {
        return Err(Error::MissingHead(kind.to_string()));
    }
    let s = input.seq_len();
    let mut tape = Tape::new(&model.params);

    // (row in the B·S hidden matrix, sequence, target position)
    let mut picks: Vec<(usize, usize, usize)> = Vec::new();
    match batch.target_kind {
        TargetKind::ClassLabel => {
            for (b, pad) in input.is_pad.iter().enumerate() {
                picks.push((b * s + summary_position(mask, pad), b, 0));
            }
        }
        TargetKind::TokenIds | TargetKind::TfIdfValues => {
            for (b, row) in batch.loss_mask.iter().enumerate() {
                for (i, &m) in row.iter().enumerate() {
                    if !m {
                        continue;
                    }
                    if let Some(r) = readout_position(mask, &input.is_pad[b], batch.output, i) {
                        picks.push((b * s + r, b, i));
                    }
                }
            }
        }
    }
    if picks.is_empty() {
        return Ok((0.0, tape));
    }

    let enc = model.encode(&mut tape, input, mask)?;
    let rows: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let h = tape.gather(enc.hidden, rows);
    let out = model.apply_head(&mut tape, kind, h)?;
    let w = vec![1.0 / picks.len() as f64; picks.len()];
    let loss = match &batch.targets {
        Targets::TokenIds(t) => {
            let tg = picks.iter().map(|&(_, b, i)| t[b][i] as usize).collect();
            tape.cross_entropy(out, tg, w)
        }
        Targets::ClassLabel(y) => {
            let tg = picks.iter().map(|&(_, b, _)| y[b]).collect();
            tape.cross_entropy(out, tg, w)
        }
        Targets::TfIdfValues(t) => {
            let tg = picks.iter().map(|&(_, b, i)| t[b][i]).collect();
            tape.squared_error(out, tg, w)
        }
    };
    tape.set_loss(loss);
    let value = tape.loss().unwrap_or(0.0);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            descriptor: batch.descriptor_id,
        });
    }
    Ok((value, tape))
}

/// Final hidden states as plain values, `(B·S) × d`.
pub fn hidden_states(model: &TinyModel, input: &EncoderInput, mask: &AttentionMaskSpec) -> Result<Array2<f64>> {
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, input, mask)?;
    Ok(tape.value(enc.hidden).clone())
}

/// Attention probability maps, ordered layer, sequence, head.
pub fn attention_maps(model: &TinyModel, input: &EncoderInput, mask: &AttentionMaskSpec) -> Result<Vec<Array2<f64>>> {
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, input, mask)?;
    Ok(enc.attention.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Summary-position features for each sequence, `B × d`.
pub fn summary_features(model: &TinyModel, input: &EncoderInput, mask: &AttentionMaskSpec) -> Result<Array2<f64>> {
    let h = hidden_states(model, input, mask)?;
    let s = input.seq_len();
    let d = model.config.d_model;
    let mut out = Array2::zeros((input.ids.len(), d));
    for (b, pad) in input.is_pad.iter().enumerate() {
        out.row_mut(b).assign(&h.row(b * s + summary_position(mask, pad)));
    }
    Ok(out)
}

/// Mean cross-entropy of a class-style head over fixed features.
pub fn head_loss_on_features(
    model: &TinyModel,
    kind: HeadKind,
    features: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Tape)> {
    let mut tape = Tape::new(&model.params);
    if labels.is_empty() {
        return Ok((0.0, tape));
    }
    let h = tape.constant(features.clone());
    let logits = model.apply_head(&mut tape, kind, h)?;
    let w = vec![1.0 / labels.len() as f64; labels.len()];
    let loss = tape.cross_entropy(logits, labels.to_vec(), w);
    tape.set_loss(loss);
    let value = tape.loss().unwrap_or(0.0);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { descriptor: usize::MAX });
    }
    Ok((value, tape))
}

/// Logits of a head over fixed features, `N × outputs`.
pub fn head_outputs(model: &TinyModel, kind: HeadKind, features: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new(&model.params);
    let h = tape.constant(features.clone());
    let out = model.apply_head(&mut tape, kind, h)?;
    Ok(tape.value(out).clone())
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}
