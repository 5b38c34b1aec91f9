use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Corpus, LabeledDataset, Split};
use super::tfidf::{compute_tfidf, TfidfTable};
use super::transform::{apply_transform, TransformParams};
use super::vocab::{TokenId, CLS, PAD};
use crate::error::{Error, Result};
use crate::objective_space::{DataTag, ObjectiveDescriptor, OutputTag, ReprTag, TransformTag};

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Unlabeled(Corpus),
    Labeled(LabeledDataset),
}

/// A data source bound to one `Data` primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub origin: DataTag,
    pub kind: SourceKind,
    pub tfidf: TfidfTable,
}

impl DataSource {
    pub fn unlabeled(origin: DataTag, corpus: Corpus) -> Self {
        let tfidf = compute_tfidf(&corpus.documents);
        DataSource {
            origin,
            kind: SourceKind::Unlabeled(corpus),
            tfidf,
        }
    }

    /// Labeled source; only the training split is ever sampled from it.
    pub fn labeled(origin: DataTag, dataset: LabeledDataset) -> Self {
        let docs: Vec<Vec<TokenId>> = dataset
            .train
            .iter()
            .map(|&i| dataset.examples[i].0.clone())
            .collect();
        let tfidf = compute_tfidf(&docs);
        DataSource {
            origin,
            kind: SourceKind::Labeled(dataset),
            tfidf,
        }
    }

    pub fn labeled_dataset(&self) -> Option<&LabeledDataset> {
        match &self.kind {
            SourceKind::Labeled(ds) => Some(ds),
            SourceKind::Unlabeled(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    TokenIds,
    ClassLabel,
    TfIdfValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    TokenIds(Vec<Vec<TokenId>>),
    ClassLabel(Vec<usize>),
    TfIdfValues(Vec<Vec<f64>>),
}

/// Model-ready batch for one objective. Row `b` is `[CLS] content PAD...`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedBatch {
    pub input_ids: Vec<Vec<TokenId>>,
    /// Non-PAD length of each row, CLS included.
    pub lengths: Vec<usize>,
    pub target_kind: TargetKind,
    pub targets: Targets,
    /// All false for `ClassLabel`, which reads the summary position instead.
    pub loss_mask: Vec<Vec<bool>>,
    pub repr_mode: ReprTag,
    pub output: OutputTag,
    pub descriptor_id: usize,
}

impl TransformedBatch {
    pub fn batch_size(&self) -> usize {
        self.input_ids.len()
    }

    pub fn seq_len(&self) -> usize {
        self.input_ids.first().map_or(0, Vec::len)
    }

    pub fn is_pad(&self, b: usize, i: usize) -> bool {
        i >= self.lengths[b]
    }

    pub fn loss_positions(&self) -> usize {
        self.loss_mask.iter().flatten().filter(|&&m| m).count()
    }
}

pub fn target_kind(o: OutputTag) -> TargetKind {
    match o {
        OutputTag::DenoiseToken | OutputTag::NextToken => TargetKind::TokenIds,
        OutputTag::EndTaskLabel => TargetKind::ClassLabel,
        OutputTag::TfIdf => TargetKind::TfIdfValues,
    }
}

struct Row {
    ids: Vec<TokenId>,
    token_targets: Vec<TokenId>,
    tfidf_targets: Vec<f64>,
    mask: Vec<bool>,
}

fn build_row<R: Rng + ?Sized>(
    content: &[TokenId],
    doc_tfidf: &[f64],
    desc: &ObjectiveDescriptor,
    seq_len: usize,
    params: &TransformParams,
    rng: &mut R,
) -> Result<Row> {
    let tr = apply_transform(content, desc.t, params, rng)?;
    let n_out = tr.ids.len();
    let mut ids = vec![PAD; seq_len];
    ids[0] = CLS;
    ids[1..1 + n_out].copy_from_slice(&tr.ids);
    let mut token_targets = vec![PAD; seq_len];
    let mut tfidf_targets = vec![0.0; seq_len];
    let mut mask = vec![false; seq_len];

    let tfidf_of = |src: Option<usize>| src.map_or(0.0, |i| doc_tfidf[i]);
    match desc.o {
        OutputTag::NextToken => {
            token_targets[0] = content[0];
            mask[0] = true;
            if desc.t == TransformTag::Delete {
                for s in 0..n_out {
                    token_targets[s + 1] = tr.targets[s];
                    mask[s + 1] = tr.loss_mask[s];
                }
            } else {
                for s in 1..n_out {
                    token_targets[s] = content[s];
                    mask[s] = true;
                }
            }
        }
        OutputTag::DenoiseToken | OutputTag::TfIdf => {
            for s in 0..n_out {
                token_targets[s + 1] = tr.targets[s];
                tfidf_targets[s + 1] = tfidf_of(tr.target_source[s]);
                mask[s + 1] = tr.loss_mask[s];
            }
        }
        OutputTag::EndTaskLabel => {}
    }
    Ok(Row {
        ids,
        token_targets,
        tfidf_targets,
        mask,
    })
}

/// Samples `batch_size` rows for `desc` from `source`, applies the
/// objective's transform and builds targets for its output kind.
///
/// Labeled sources sample training examples with replacement and keep the
/// leading `seq_len - 1` tokens; unlabeled sources sample documents and crop
/// a random window.
pub fn sample_batch<R: Rng + ?Sized>(
    source: &DataSource,
    desc: &ObjectiveDescriptor,
    batch_size: usize,
    seq_len: usize,
    params: &TransformParams,
    rng: &mut R,
) -> Result<TransformedBatch> {
    if desc.d != source.origin {
        return Err(Error::SourceMismatch {
            descriptor: desc.id,
            reason: format!("objective reads {} but source is {}", desc.d, source.origin),
        });
    }
    if desc.o == OutputTag::EndTaskLabel && source.labeled_dataset().is_none() {
        return Err(Error::SourceMismatch {
            descriptor: desc.id,
            reason: "end-task label output needs a labeled source".into(),
        });
    }
    if seq_len < 3 {
        return Err(Error::InvalidInput("seq_len must be at least 3".into()));
    }
    let min_len = if desc.t == TransformTag::Delete { 2 } else { 1 };
    let content_cap = seq_len - 1;

    let mut rows = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    let mut lengths = Vec::with_capacity(batch_size);
    match &source.kind {
        SourceKind::Labeled(ds) => {
            let pool: Vec<usize> = ds
                .train
                .iter()
                .copied()
                .filter(|&i| ds.examples[i].0.len() >= min_len)
                .collect();
            if pool.is_empty() {
                return Err(Error::InvalidInput("no usable training examples".into()));
            }
            for _ in 0..batch_size {
                let idx = pool[rng.random_range(0..pool.len())];
                let (ids, label) = &ds.examples[idx];
                let content = &ids[..ids.len().min(content_cap)];
                let doc_tfidf = source.tfidf.doc_targets(ids);
                let row = build_row(content, &doc_tfidf, desc, seq_len, params, rng)?;
                lengths.push(1 + row.ids[1..].iter().take_while(|&&t| t != PAD).count());
                rows.push(row);
                labels.push(*label);
            }
        }
        SourceKind::Unlabeled(corpus) => {
            let pool: Vec<usize> = (0..corpus.len())
                .filter(|&i| corpus.documents[i].len() >= min_len)
                .collect();
            if pool.is_empty() {
                return Err(Error::InvalidInput("no usable documents".into()));
            }
            for _ in 0..batch_size {
                let doc = &corpus.documents[pool[rng.random_range(0..pool.len())]];
                let take = doc.len().min(content_cap);
                let start = rng.random_range(0..=doc.len() - take);
                let doc_tfidf = source.tfidf.doc_targets(doc);
                let row = build_row(
                    &doc[start..start + take],
                    &doc_tfidf[start..start + take],
                    desc,
                    seq_len,
                    params,
                    rng,
                )?;
                lengths.push(1 + row.ids[1..].iter().take_while(|&&t| t != PAD).count());
                rows.push(row);
            }
        }
    }
    Ok(assemble(rows, lengths, labels, desc))
}

fn assemble(
    rows: Vec<Row>,
    lengths: Vec<usize>,
    labels: Vec<usize>,
    desc: &ObjectiveDescriptor,
) -> TransformedBatch {
    let kind = target_kind(desc.o);
    let mut input_ids = Vec::with_capacity(rows.len());
    let mut loss_mask = Vec::with_capacity(rows.len());
    let mut tok = Vec::new();
    let mut tfidf = Vec::new();
    for row in rows {
        input_ids.push(row.ids);
        match kind {
            TargetKind::ClassLabel => loss_mask.push(vec![false; row.mask.len()]),
            _ => loss_mask.push(row.mask),
        }
        tok.push(row.token_targets);
        tfidf.push(row.tfidf_targets);
    }
    let targets = match kind {
        TargetKind::TokenIds => Targets::TokenIds(tok),
        TargetKind::ClassLabel => Targets::ClassLabel(labels),
        TargetKind::TfIdfValues => Targets::TfIdfValues(tfidf),
    };
    TransformedBatch {
        input_ids,
        lengths,
        target_kind: kind,
        targets,
        loss_mask,
        repr_mode: desc.r,
        output: desc.o,
        descriptor_id: desc.id,
    }
}

/// Uncorrupted, bidirectional classification batch over explicit example
/// indices (evaluation and dev-head batches).
pub fn labeled_batch(ds: &LabeledDataset, indices: &[usize], seq_len: usize) -> TransformedBatch {
    let mut input_ids = Vec::with_capacity(indices.len());
    let mut lengths = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let (ids, label) = &ds.examples[i];
        let take = ids.len().min(seq_len - 1);
        let mut row = vec![PAD; seq_len];
        row[0] = CLS;
        row[1..1 + take].copy_from_slice(&ids[..take]);
        input_ids.push(row);
        lengths.push(1 + take);
        labels.push(*label);
    }
    TransformedBatch {
        loss_mask: vec![vec![false; seq_len]; indices.len()],
        input_ids,
        lengths,
        target_kind: TargetKind::ClassLabel,
        targets: Targets::ClassLabel(labels),
        repr_mode: ReprTag::Bidirectional,
        output: OutputTag::EndTaskLabel,
        descriptor_id: usize::MAX,
    }
}

/// Convenience: the split's indices as a classification batch.
pub fn split_batch(ds: &LabeledDataset, split: Split, seq_len: usize) -> TransformedBatch {
    labeled_batch(ds, ds.split(split), seq_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective_space::named_objective;
    use crate::rng::{stream, Stream};

    fn toy_labeled() -> DataSource {
        let rows = (0..40)
            .map(|i| ((i % 2).to_string(), "abcdefghij".repeat(1 + i % 3)))
            .collect();
        let ds = LabeledDataset::from_rows(rows, 0).unwrap();
        DataSource::labeled(DataTag::EndTaskData, ds)
    }

    #[test]
    fn bert_style_batch() {
        let src = toy_labeled();
        let desc = named_objective("BERT-style").unwrap();
        let params = TransformParams::new(14);
        let mut rng = stream(0, Stream::Data);
        let mut selected = 0;
        let mut content = 0;
        for _ in 0..200 {
            let b = sample_batch(&src, &desc, 4, 16, &params, &mut rng).unwrap();
            assert_eq!(b.target_kind, TargetKind::TokenIds);
            assert!(b.input_ids.iter().all(|r| r.len() == 16 && r[0] == CLS));
            selected += b.loss_positions();
            content += b.lengths.iter().map(|l| l - 1).sum::<usize>();
        }
        let density = selected as f64 / content as f64;
        assert!((density - 0.15).abs() < 0.02, "{density}");
    }

    #[test]
    fn label_output_on_unlabeled_source_is_an_error() {
        let vocab = crate::corpus::Vocab::from_texts(["abc"]);
        let src = DataSource::unlabeled(
            DataTag::EndTaskData,
            Corpus::from_texts(vec!["abc".into()], &vocab),
        );
        let desc = ObjectiveDescriptor::new(
            DataTag::EndTaskData,
            TransformTag::Mask,
            ReprTag::Bidirectional,
            OutputTag::EndTaskLabel,
        );
        let mut rng = stream(0, Stream::Data);
        let err = sample_batch(&src, &desc, 2, 8, &TransformParams::new(7), &mut rng).unwrap_err();
        assert!(matches!(err, Error::SourceMismatch { .. }));
    }

    #[test]
    fn wrong_data_tag_is_an_error() {
        let src = toy_labeled();
        let mut desc = named_objective("BERT-style").unwrap();
        desc.d = DataTag::InDomainData;
        let mut rng = stream(0, Stream::Data);
        assert!(sample_batch(&src, &desc, 2, 8, &TransformParams::new(14), &mut rng).is_err());
    }

    #[test]
    fn next_token_targets_are_shifted_inputs() {
        let src = toy_labeled();
        let desc = ObjectiveDescriptor::new(
            DataTag::EndTaskData,
            TransformTag::NoOp,
            ReprTag::LeftToRight,
            OutputTag::NextToken,
        );
        let mut rng = stream(4, Stream::Data);
        let b = sample_batch(&src, &desc, 3, 12, &TransformParams::new(14), &mut rng).unwrap();
        let Targets::TokenIds(t) = &b.targets else { panic!() };
        for row in 0..3 {
            let len = b.lengths[row];
            for i in 0..len - 1 {
                assert_eq!(t[row][i], b.input_ids[row][i + 1]);
                assert!(b.loss_mask[row][i]);
            }
            assert!(!b.loss_mask[row][len - 1]);
            assert!(b.loss_mask[row][len..].iter().all(|&m| !m));
        }
    }

    #[test]
    fn identical_seed_identical_batch() {
        let src = toy_labeled();
        let desc = named_objective("BERT-style").unwrap();
        let p = TransformParams::new(14);
        let a = sample_batch(&src, &desc, 4, 16, &p, &mut stream(9, Stream::Data)).unwrap();
        let b = sample_batch(&src, &desc, 4, 16, &p, &mut stream(9, Stream::Data)).unwrap();
        assert_eq!(a, b);
    }
}
