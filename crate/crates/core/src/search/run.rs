use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factors::{sample_objectives, total_loss, FactorSnapshot, FactorWeights};
use super::meta::{bidirectional_mask, combine_gradients, meta_gradients, train_dev_head, validation_gradient, DevHeadConfig};
use crate::corpus::{labeled_batch, sample_batch, split_batch, DataSource, LabeledDataset, Split, TransformParams, TransformedBatch, DEFAULT_SELECTION_RATE};
use crate::error::{Error, Result};
use crate::model::{
    argmax_rows, build_attention_mask, forward, head_kind_for, head_outputs, summary_features, AdamW, AdamWConfig,
    EncoderInput, GradScope, Gradients, HeadKind, ModelConfig, ParamSet, TinyModel,
};
use crate::objective_space::{DataTag, ObjectiveDescriptor, ObjectiveSpace, OutputTag};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub steps: usize,
    /// Objectives sampled per step.
    pub n_sample: usize,
    pub aux_batch_size: usize,
    pub end_batch_size: usize,
    pub seq_len: usize,
    /// Step size for the factor tables.
    pub aux_lr: f64,
    /// Step size for the end-task mixing weight.
    pub sopt_lr: f64,
    pub lambda_init: f64,
    pub optimizer: AdamWConfig,
    pub dev_head: DevHeadConfig,
    pub selection_rate: f64,
    pub eval_every: usize,
    pub snapshot_every: usize,
    /// Run per-objective passes on the rayon pool.
    pub parallel: bool,
    pub model: ModelConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            steps: 200,
            n_sample: 3,
            aux_batch_size: 16,
            end_batch_size: 16,
            seq_len: 32,
            aux_lr: 0.1,
            sopt_lr: 0.01,
            lambda_init: 0.5,
            optimizer: AdamWConfig::default(),
            dev_head: DevHeadConfig::default(),
            selection_rate: DEFAULT_SELECTION_RATE,
            eval_every: 10,
            snapshot_every: 10,
            parallel: true,
            model: ModelConfig::default(),
        }
    }
}

/// Objective space plus one data source per data tag it reads. The
/// `EndTaskData` source must be labeled; it defines the end task.
#[derive(Debug, Clone)]
pub struct SearchSetup {
    pub space: ObjectiveSpace,
    pub sources: BTreeMap<DataTag, DataSource>,
}

impl SearchSetup {
    pub fn end_task(&self) -> Result<&LabeledDataset> {
        self.sources
            .get(&DataTag::EndTaskData)
            .and_then(DataSource::labeled_dataset)
            .ok_or_else(|| Error::Config("end-task data must be a labeled dataset".into()))
    }

    fn check(&self, cfg: &SearchConfig) -> Result<()> {
        let ds = self.end_task()?;
        if ds.train.is_empty() || ds.dev.is_empty() {
            return Err(Error::Config("end-task train and dev splits must be non-empty".into()));
        }
        for d in &self.space.descriptors {
            if !self.sources.contains_key(&d.d) {
                return Err(Error::Config(format!("no data source bound to {}", d.d)));
            }
        }
        if cfg.seq_len < 3 || cfg.seq_len > cfg.model.max_seq_len {
            return Err(Error::Config(format!(
                "seq_len must lie in 3..={}, got {}",
                cfg.model.max_seq_len, cfg.seq_len
            )));
        }
        if cfg.aux_batch_size == 0 || cfg.end_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lambda_e: f64,
    pub sampled: Vec<usize>,
    pub weights: Vec<f64>,
    pub aux_losses: Vec<f64>,
    pub end_train_loss: Option<f64>,
    pub total_loss: Option<f64>,
    /// Softmax of every objective's score.
    pub space_weights: Vec<f64>,
    pub meta_grad_w: Option<Vec<f64>>,
    pub meta_grad_lambda: Option<f64>,
    pub dev_head_loss: Option<f64>,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
    pub factors: Option<FactorSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Aang,
    StaticMultitask,
    SingleObjective,
    EndTaskOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: RunKind,
    pub seed: u64,
    pub objectives: Vec<String>,
    pub records: Vec<StepRecord>,
    pub best_dev_step: usize,
    pub best_dev_accuracy: f64,
    pub test_accuracy: f64,
}

impl RunReport {
    /// One JSON object per line: a header, then each step record.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Header<'a> {
            kind: RunKind,
            seed: u64,
            objectives: &'a [String],
            best_dev_step: usize,
            best_dev_accuracy: f64,
            test_accuracy: f64,
        }
        let mut out = serde_json::to_string(&Header {
            kind: self.kind,
            seed: self.seed,
            objectives: &self.objectives,
            best_dev_step: self.best_dev_step,
            best_dev_accuracy: self.best_dev_accuracy,
            test_accuracy: self.test_accuracy,
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            kind: RunKind,
            seed: u64,
            objectives: Vec<String>,
            best_dev_step: usize,
            best_dev_accuracy: f64,
            test_accuracy: f64,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Header = serde_json::from_str(lines.next().ok_or(Error::EmptyCorpus)?)?;
        let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(RunReport {
            kind: head.kind,
            seed: head.seed,
            objectives: head.objectives,
            records,
            best_dev_step: head.best_dev_step,
            best_dev_accuracy: head.best_dev_accuracy,
            test_accuracy: head.test_accuracy,
        })
    }
}

/// Accuracy and mean loss of the end-task head on one split.
pub fn evaluate(model: &TinyModel, ds: &LabeledDataset, split: Split, seq_len: usize) -> Result<(f64, f64)> {
    let batch = split_batch(ds, split, seq_len);
    if batch.batch_size() == 0 {
        return Ok((0.0, 0.0));
    }
    let mask = bidirectional_mask(seq_len)?;
    let feats = summary_features(model, &EncoderInput::from_batch(&batch), &mask)?;
    let logits = head_outputs(model, HeadKind::Output(OutputTag::EndTaskLabel), &feats)?;
    let labels = match &batch.targets {
        crate::corpus::Targets::ClassLabel(y) => y,
        _ => unreachable!(),
    };
    let preds = argmax_rows(&logits);
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    let mut loss = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    let n = labels.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

struct AuxOut {
    loss: f64,
    grads: Gradients,
}

/// State shared by every training loop.
struct Trainer<'a> {
    cfg: &'a SearchConfig,
    setup: &'a SearchSetup,
    model: TinyModel,
    opt: AdamW,
    transform: TransformParams,
    data_rng: Rng,
    end_rng: Rng,
    dev_rng: Rng,
    mask_rng: Rng,
    records: Vec<StepRecord>,
    best: (usize, f64, Option<ParamSet>),
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a SearchConfig, setup: &'a SearchSetup, outputs: &[OutputTag], seed: u64) -> Result<Self> {
        setup.check(cfg)?;
        let ds = setup.end_task()?;
        let mut mc = cfg.model.clone();
        mc.num_classes = ds.num_classes;
        let mut init = stream(seed, Stream::Init);
        let mut model = TinyModel::new(mc, &mut init)?;
        model.ensure_head(HeadKind::Output(OutputTag::EndTaskLabel), &mut init);
        for &o in OutputTag::ALL {
            if outputs.contains(&o) {
                model.ensure_head(head_kind_for(o), &mut init);
            }
        }
        model.ensure_head(HeadKind::Dev, &mut init);
        if ds.dev.len() < cfg.dev_head.sample_size {
            log::warn!(
                "dev split has {} examples, fewer than the dev-head sample size {}; the dev head uses all of them",
                ds.dev.len(),
                cfg.dev_head.sample_size
            );
        }
        let transform = TransformParams {
            selection_rate: cfg.selection_rate,
            ..TransformParams::new(model.config.vocab_size)
        };
        Ok(Trainer {
            cfg,
            setup,
            model,
            opt: AdamW::new(cfg.optimizer),
            transform,
            data_rng: stream(seed, Stream::Data),
            end_rng: stream(seed, Stream::EndTaskData),
            dev_rng: stream(seed, Stream::DevHead),
            mask_rng: stream(seed, Stream::Mask),
            records: Vec::new(),
            best: (0, f64::NEG_INFINITY, None),
        })
    }

    fn descriptor(&self, id: usize) -> &ObjectiveDescriptor {
        &self.setup.space.descriptors[id]
    }

    /// Mean loss and gradient of each objective on its share of the batch.
    fn aux_pass(&mut self, ids: &[usize], weights: &[f64]) -> Result<Vec<AuxOut>> {
        let mut jobs = Vec::with_capacity(ids.len());
        for (&id, &w) in ids.iter().zip(weights) {
            let desc = *self.descriptor(id);
            let size = ((w * self.cfg.aux_batch_size as f64).round() as usize).max(1);
            let source = &self.setup.sources[&desc.d];
            let batch = sample_batch(source, &desc, size, self.cfg.seq_len, &self.transform, &mut self.data_rng)?;
            let mask = build_attention_mask(desc.r, self.cfg.seq_len, &mut self.mask_rng)?;
            jobs.push((batch, mask));
        }
        let model = &self.model;
        let run = |(batch, mask): &(TransformedBatch, _)| -> Result<AuxOut> {
            let (loss, mut tape) = forward(model, batch, mask)?;
            Ok(AuxOut {
                loss,
                grads: tape.backward()?,
            })
        };
        if self.cfg.parallel {
            jobs.par_iter().map(run).collect()
        } else {
            jobs.iter().map(run).collect()
        }
    }

    fn end_batch(&mut self) -> Result<TransformedBatch> {
        let ds = self.setup.end_task()?;
        let idx: Vec<usize> = (0..self.cfg.end_batch_size)
            .map(|_| ds.train[self.end_rng.random_range(0..ds.train.len())])
            .collect();
        Ok(labeled_batch(ds, &idx, self.cfg.seq_len))
    }

    fn end_pass(&mut self) -> Result<(f64, Gradients)> {
        let batch = self.end_batch()?;
        let mask = bidirectional_mask(self.cfg.seq_len)?;
        let (loss, mut tape) = forward(&self.model, &batch, &mask)?;
        Ok((loss, tape.backward()?))
    }

    /// Fits the dev head and returns the meta-gradients for `aux` and the
    /// end task, plus the dev head's final loss.
    fn meta(&mut self, aux: &[AuxOut], end: &Gradients) -> Result<(Vec<f64>, f64, f64)> {
        let ds = self.setup.end_task()?;
        let fit = train_dev_head(
            &mut self.model,
            ds,
            &ds.dev,
            self.cfg.seq_len,
            &self.cfg.dev_head,
            &mut self.dev_rng,
        )?;
        let (_, val) = validation_gradient(&self.model, &fit.batch)?;
        let ps = &self.model.params;
        let aux_flat: Vec<Vec<f64>> = aux.iter().map(|a| a.grads.flatten(ps, GradScope::BodyOnly)).collect();
        let end_flat = end.flatten(ps, GradScope::BodyOnly);
        let (g_w, g_l) = meta_gradients(&aux_flat, &val, &end_flat)?;
        Ok((g_w, g_l, *fit.losses.last().unwrap_or(&0.0)))
    }

    fn theta_step(&mut self, grads: &Gradients, step: usize) -> Result<()> {
        let mut ids = self.model.body_params();
        for kind in self.model.head_kinds() {
            if kind != HeadKind::Dev {
                ids.extend(self.model.head_params(kind));
            }
        }
        ids.sort_unstable();
        self.opt.step(&mut self.model.params, grads, &ids);
        if !self.model.params.all_finite() {
            return Err(Error::Diverged { step });
        }
        Ok(())
    }

    /// Dev evaluation on schedule; tracks the best parameters.
    fn evaluate_into(&mut self, record: &mut StepRecord) -> Result<()> {
        let last = record.step == self.cfg.steps;
        if record.step % self.cfg.eval_every.max(1) != 0 && !last {
            return Ok(());
        }
        let ds = self.setup.end_task()?;
        let (acc, loss) = evaluate(&self.model, ds, Split::Dev, self.cfg.seq_len)?;
        record.dev_accuracy = Some(acc);
        record.dev_loss = Some(loss);
        if acc > self.best.1 {
            self.best = (record.step, acc, Some(self.model.params.clone()));
        }
        Ok(())
    }

    fn wants_snapshot(&self, step: usize) -> bool {
        step % self.cfg.snapshot_every.max(1) == 0 || step == self.cfg.steps
    }

    fn finish(mut self, kind: RunKind, seed: u64, objectives: Vec<String>) -> Result<RunReport> {
        let ds = self.setup.end_task()?;
        if let Some(best) = self.best.2.take() {
            self.model.params = best;
        }
        let (test, _) = evaluate(&self.model, ds, Split::Test, self.cfg.seq_len)?;
        Ok(RunReport {
            kind,
            seed,
            objectives,
            records: self.records,
            best_dev_step: self.best.0,
            best_dev_accuracy: self.best.1.max(0.0),
            test_accuracy: test,
        })
    }
}

fn empty_record(step: usize, lambda_e: f64, space_weights: Vec<f64>) -> StepRecord {
    StepRecord {
        step,
        lambda_e,
        sampled: Vec::new(),
        weights: Vec::new(),
        aux_losses: Vec::new(),
        end_train_loss: None,
        total_loss: None,
        space_weights,
        meta_grad_w: None,
        meta_grad_lambda: None,
        dev_head_loss: None,
        dev_loss: None,
        dev_accuracy: None,
        factors: None,
    }
}

fn names(space: &ObjectiveSpace) -> Vec<String> {
    space.descriptors.iter().map(|d| d.to_string()).collect()
}

fn space_outputs(space: &ObjectiveSpace) -> Vec<OutputTag> {
    space.descriptors.iter().map(|d| d.o).collect()
}

/// The full search: sample objectives, weight them with the factored scores,
/// estimate meta-gradients through the dev head, and update the model,
/// factors and λ_e every step.
pub fn run_search(cfg: &SearchConfig, setup: &SearchSetup, seed: u64) -> Result<RunReport> {
    let space = &setup.space;
    let mut tr = Trainer::new(cfg, setup, &space_outputs(space), seed)?;
    let mut factors = FactorWeights::new(space, cfg.lambda_init)?;
    let mut obj_rng = stream(seed, Stream::ObjectiveSample);
    let n = cfg.n_sample;
    if n == 0 || n > space.len() {
        return Err(Error::Config(format!("n must lie in 1..={}, got {n}", space.len())));
    }

    let mut rec = empty_record(0, factors.lambda_e(), factors.space_weights(space));
    rec.factors = Some(factors.snapshot());
    tr.evaluate_into(&mut rec)?;
    tr.records.push(rec);

    for step in 1..=cfg.steps {
        let inner = |tr: &mut Trainer, factors: &mut FactorWeights, obj_rng: &mut Rng| -> Result<StepRecord> {
            let ids = sample_objectives(space.len(), n, obj_rng)?;
            let weights = factors.compute_weights(space, &ids);
            let lambda_e = factors.lambda_e();
            let aux = tr.aux_pass(&ids, &weights)?;
            let (end_loss, end_grads) = tr.end_pass()?;
            let aux_losses: Vec<f64> = aux.iter().map(|a| a.loss).collect();
            let aux_grads: Vec<Gradients> = aux.iter().map(|a| a.grads.clone()).collect();
            let theta_grad = combine_gradients(lambda_e, &end_grads, &aux_grads, &weights);

            let (g_w, g_l, dev_head_loss) = tr.meta(&aux, &end_grads)?;
            factors.update_factors(space, &ids, &weights, &g_w, cfg.aux_lr)?;
            factors.update_lambda(g_l, cfg.sopt_lr);
            tr.theta_step(&theta_grad, step)?;

            let mut rec = empty_record(step, lambda_e, factors.space_weights(space));
            rec.total_loss = Some(total_loss(lambda_e, end_loss, &aux_losses, &weights));
            rec.sampled = ids;
            rec.weights = weights;
            rec.aux_losses = aux_losses;
            rec.end_train_loss = Some(end_loss);
            rec.meta_grad_w = Some(g_w);
            rec.meta_grad_lambda = Some(g_l);
            rec.dev_head_loss = Some(dev_head_loss);
            if tr.wants_snapshot(step) {
                rec.factors = Some(factors.snapshot());
            }
            tr.evaluate_into(&mut rec)?;
            Ok(rec)
        };
        let rec = inner(&mut tr, &mut factors, &mut obj_rng).map_err(|e| e.at_step(step))?;
        tr.records.push(rec);
    }
    tr.finish(RunKind::Aang, seed, names(space))
}

/// Uniform 1/n weights over freshly sampled objectives and a fixed λ_e; no
/// meta-gradients.
pub fn run_static_multitask(cfg: &SearchConfig, setup: &SearchSetup, seed: u64) -> Result<RunReport> {
    let space = &setup.space;
    let mut tr = Trainer::new(cfg, setup, &space_outputs(space), seed)?;
    let factors = FactorWeights::new(space, cfg.lambda_init)?;
    let lambda_e = factors.lambda_e();
    let uniform = factors.space_weights(space);
    let mut obj_rng = stream(seed, Stream::ObjectiveSample);
    let n = cfg.n_sample;
    if n == 0 || n > space.len() {
        return Err(Error::Config(format!("n must lie in 1..={}, got {n}", space.len())));
    }

    let mut rec = empty_record(0, lambda_e, uniform.clone());
    tr.evaluate_into(&mut rec)?;
    tr.records.push(rec);

    for step in 1..=cfg.steps {
        let mut inner = || -> Result<StepRecord> {
            let ids = sample_objectives(space.len(), n, &mut obj_rng)?;
            let weights = vec![1.0 / n as f64; n];
            let aux = tr.aux_pass(&ids, &weights)?;
            let (end_loss, end_grads) = tr.end_pass()?;
            let aux_losses: Vec<f64> = aux.iter().map(|a| a.loss).collect();
            let aux_grads: Vec<Gradients> = aux.into_iter().map(|a| a.grads).collect();
            let theta_grad = combine_gradients(lambda_e, &end_grads, &aux_grads, &weights);
            tr.theta_step(&theta_grad, step)?;

            let mut rec = empty_record(step, lambda_e, uniform.clone());
            rec.total_loss = Some(total_loss(lambda_e, end_loss, &aux_losses, &weights));
            rec.sampled = ids;
            rec.weights = weights;
            rec.aux_losses = aux_losses;
            rec.end_train_loss = Some(end_loss);
            tr.evaluate_into(&mut rec)?;
            Ok(rec)
        };
        let rec = inner().map_err(|e| e.at_step(step))?;
        tr.records.push(rec);
    }
    tr.finish(RunKind::StaticMultitask, seed, names(space))
}

/// One auxiliary objective trained jointly with the end task; λ_e is learned
/// from dev-head meta-gradients.
pub fn run_single_objective(
    cfg: &SearchConfig,
    setup: &SearchSetup,
    objective: usize,
    seed: u64,
) -> Result<RunReport> {
    let space = &setup.space;
    let desc = *space
        .get(objective)
        .ok_or_else(|| Error::Config(format!("objective id {objective} outside the space")))?;
    let mut tr = Trainer::new(cfg, setup, &[desc.o], seed)?;
    let mut factors = FactorWeights::new(space, cfg.lambda_init)?;
    let ids = vec![objective];
    let weights = vec![1.0];
    let one_hot: Vec<f64> = (0..space.len()).map(|k| if k == objective { 1.0 } else { 0.0 }).collect();

    let mut rec = empty_record(0, factors.lambda_e(), one_hot.clone());
    tr.evaluate_into(&mut rec)?;
    tr.records.push(rec);

    for step in 1..=cfg.steps {
        let mut inner = || -> Result<StepRecord> {
            let lambda_e = factors.lambda_e();
            let aux = tr.aux_pass(&ids, &weights)?;
            let (end_loss, end_grads) = tr.end_pass()?;
            let theta_grad = combine_gradients(lambda_e, &end_grads, std::slice::from_ref(&aux[0].grads), &weights);
            let (g_w, g_l, dev_head_loss) = tr.meta(&aux, &end_grads)?;
            factors.update_lambda(g_l, cfg.sopt_lr);
            tr.theta_step(&theta_grad, step)?;

            let mut rec = empty_record(step, lambda_e, one_hot.clone());
            rec.total_loss = Some(total_loss(lambda_e, end_loss, &[aux[0].loss], &weights));
            rec.sampled = ids.clone();
            rec.weights = weights.clone();
            rec.aux_losses = vec![aux[0].loss];
            rec.end_train_loss = Some(end_loss);
            rec.meta_grad_w = Some(g_w);
            rec.meta_grad_lambda = Some(g_l);
            rec.dev_head_loss = Some(dev_head_loss);
            tr.evaluate_into(&mut rec)?;
            Ok(rec)
        };
        let rec = inner().map_err(|e| e.at_step(step))?;
        tr.records.push(rec);
    }
    tr.finish(RunKind::SingleObjective, seed, vec![desc.to_string()])
}

/// Supervised training on the end task alone.
pub fn run_end_task_only(cfg: &SearchConfig, setup: &SearchSetup, seed: u64) -> Result<RunReport> {
    let mut tr = Trainer::new(cfg, setup, &[], seed)?;
    let mut rec = empty_record(0, 1.0, Vec::new());
    tr.evaluate_into(&mut rec)?;
    tr.records.push(rec);
    for step in 1..=cfg.steps {
        let mut inner = || -> Result<StepRecord> {
            let (end_loss, end_grads) = tr.end_pass()?;
            tr.theta_step(&end_grads, step)?;
            let mut rec = empty_record(step, 1.0, Vec::new());
            rec.end_train_loss = Some(end_loss);
            rec.total_loss = Some(end_loss);
            tr.evaluate_into(&mut rec)?;
            Ok(rec)
        };
        let rec = inner().map_err(|e| e.at_step(step))?;
        tr.records.push(rec);
    }
    tr.finish(RunKind::EndTaskOnly, seed, Vec::new())
}
