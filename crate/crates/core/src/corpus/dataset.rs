use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::rng::mix_seed_index;

/// Unlabeled text: documents of character token ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub texts: Vec<String>,
    pub documents: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn from_texts(texts: Vec<String>, vocab: &Vocab) -> Self {
        let documents = texts.iter().map(|t| vocab.encode(t)).collect();
        Corpus { texts, documents }
    }

    pub fn reencode(&self, vocab: &Vocab) -> Self {
        Corpus::from_texts(self.texts.clone(), vocab)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Splits text into documents at blank lines. Single newlines inside a
/// document become spaces.
pub fn split_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line.trim_end_matches('\r'));
        }
    }
    if !current.is_empty() {
        docs.push(current.join(" "));
    }
    docs
}

/// Reads a UTF-8 corpus with blank-line separated documents and builds its
/// vocabulary.
pub fn load_text_corpus(path: impl AsRef<Path>) -> Result<(Corpus, Vocab)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let texts = split_documents(&text);
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocab::from_texts(texts.iter().map(String::as_str));
    Ok((Corpus::from_texts(texts, &vocab), vocab))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub texts: Vec<String>,
    pub examples: Vec<(Vec<TokenId>, usize)>,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
    pub num_classes: usize,
    pub label_names: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset from `(label, text)` rows. Labels are mapped to
    /// integers by first appearance. The split is 70/15/15 (train and dev
    /// sizes rounded down, test takes the remainder), assigned by sorting
    /// example indices on `mix_seed_index(seed, index)`.
    pub fn from_rows(rows: Vec<(String, String)>, seed: u64) -> Result<Self> {
        let mut label_ids: HashMap<String, usize> = HashMap::new();
        let mut label_names = Vec::new();
        let mut labels = Vec::with_capacity(rows.len());
        let mut texts = Vec::with_capacity(rows.len());
        for (label, text) in rows {
            let next = label_names.len();
            let id = *label_ids.entry(label.clone()).or_insert_with(|| {
                label_names.push(label);
                next
            });
            labels.push(id);
            texts.push(text);
        }
        if label_names.len() < 2 {
            return Err(Error::SingleClass);
        }
        let n = texts.len();
        let n_train = n * 70 / 100;
        let n_dev = n * 15 / 100;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (mix_seed_index(seed, i as u64), i));
        let mut train = order[..n_train].to_vec();
        let mut dev = order[n_train..n_train + n_dev].to_vec();
        let mut test = order[n_train + n_dev..].to_vec();
        train.sort_unstable();
        dev.sort_unstable();
        test.sort_unstable();

        let vocab = Vocab::from_texts(train.iter().map(|&i| texts[i].as_str()));
        let examples = texts
            .iter()
            .zip(&labels)
            .map(|(t, &l)| (vocab.encode(t), l))
            .collect();
        Ok(LabeledDataset {
            texts,
            examples,
            train,
            dev,
            test,
            num_classes: label_names.len(),
            label_names,
        })
    }

    /// Vocabulary over the training split.
    pub fn train_vocab(&self) -> Vocab {
        Vocab::from_texts(self.train.iter().map(|&i| self.texts[i].as_str()))
    }

    pub fn reencode(&self, vocab: &Vocab) -> Self {
        let examples = self
            .texts
            .iter()
            .zip(&self.examples)
            .map(|(t, (_, l))| (vocab.encode(t), *l))
            .collect();
        LabeledDataset {
            examples,
            ..self.clone()
        }
    }

    pub fn split(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Copy with labels remapped through `perm` (class `c` becomes `perm[c]`).
    pub fn with_permuted_labels(&self, perm: &[usize]) -> Self {
        let examples = self
            .examples
            .iter()
            .map(|(ids, l)| (ids.clone(), perm[*l]))
            .collect();
        LabeledDataset {
            examples,
            ..self.clone()
        }
    }
}

/// Parses TSV lines `label<TAB>text`. Blank lines are skipped.
pub fn parse_labeled_tsv(text: &str) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
            line: i + 1,
            reason: "expected `label<TAB>text`".into(),
        })?;
        if label.trim().is_empty() {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: "empty label".into(),
            });
        }
        rows.push((label.trim().to_string(), body.to_string()));
    }
    Ok(rows)
}

pub fn load_labeled_dataset(path: impl AsRef<Path>, seed: u64) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_labeled_tsv(&text)?;
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    LabeledDataset::from_rows(rows, seed)
}
