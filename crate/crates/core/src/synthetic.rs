//! Synthetic text classification: each class emits characters from its own
//! Markov chain, all chains sharing one base transition matrix.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DataSource, LabeledDataset, Vocab};
use crate::error::{Error, Result};
use crate::objective_space::{DataTag, ObjectiveDescriptor, ObjectiveSpace, OutputTag, ReprTag, TransformTag};
use crate::rng::{mix_seed_index, Rng as ChaRng};
use crate::search::SearchSetup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub examples: usize,
    /// Unlabeled documents drawn from the same class mixture.
    pub domain_docs: usize,
    /// Spread of the shared transition logits.
    pub base_scale: f64,
    /// Spread of each class's deviation from the shared logits.
    pub class_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 2,
            alphabet: 8,
            min_len: 16,
            max_len: 28,
            examples: 200,
            domain_docs: 200,
            base_scale: 1.5,
            class_scale: 0.6,
        }
    }
}

pub struct SyntheticData {
    /// `(label, text)` rows.
    pub rows: Vec<(String, String)>,
    pub domain_texts: Vec<String>,
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn generate(cfg: &SyntheticConfig, rng: &mut ChaRng) -> Result<SyntheticData> {
    if cfg.num_classes < 2 || cfg.alphabet < 2 || cfg.alphabet > 26 {
        return Err(Error::Config("synthetic task needs ≥2 classes and an alphabet of 2..=26".into()));
    }
    if cfg.min_len < 2 || cfg.max_len < cfg.min_len {
        return Err(Error::Config("synthetic lengths must satisfy 2 ≤ min_len ≤ max_len".into()));
    }
    let a = cfg.alphabet;
    let base_d = Normal::new(0.0, cfg.base_scale).map_err(|e| Error::Config(e.to_string()))?;
    let class_d = Normal::new(0.0, cfg.class_scale).map_err(|e| Error::Config(e.to_string()))?;
    let base: Vec<Vec<f64>> = (0..a).map(|_| (0..a).map(|_| base_d.sample(rng)).collect()).collect();
    let chains: Vec<Vec<Vec<f64>>> = (0..cfg.num_classes)
        .map(|_| {
            base.iter()
                .map(|row| softmax_row(&row.iter().map(|b| b + class_d.sample(rng)).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let letters: Vec<char> = (0..a).map(|i| (b'a' + i as u8) as char).collect();
    let emit = |class: usize, rng: &mut ChaRng| -> String {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut state = rng.random_range(0..a);
        let mut s = String::with_capacity(len);
        for _ in 0..len {
            s.push(letters[state]);
            state = sample_index(&chains[class][state], rng);
        }
        s
    };
    let rows = (0..cfg.examples)
        .map(|i| {
            let c = i % cfg.num_classes;
            (format!("c{c}"), emit(c, rng))
        })
        .collect();
    let domain_texts = (0..cfg.domain_docs)
        .map(|_| {
            let c = rng.random_range(0..cfg.num_classes);
            emit(c, rng)
        })
        .collect();
    Ok(SyntheticData { rows, domain_texts })
}

/// Labeled dataset and optional domain corpus encoded with one shared
/// vocabulary over the training texts and the domain texts.
pub fn encode_shared(
    rows: Vec<(String, String)>,
    domain_texts: Option<Vec<String>>,
    split_seed: u64,
) -> Result<(LabeledDataset, Option<Corpus>, Vocab)> {
    let ds = LabeledDataset::from_rows(rows, split_seed)?;
    let mut texts: Vec<&str> = ds.train.iter().map(|&i| ds.texts[i].as_str()).collect();
    if let Some(d) = &domain_texts {
        texts.extend(d.iter().map(String::as_str));
    }
    let vocab = Vocab::from_texts(texts);
    let ds = ds.reencode(&vocab);
    let corpus = match domain_texts {
        Some(t) if t.is_empty() => return Err(Error::EmptyCorpus),
        Some(t) => Some(Corpus::from_texts(t, &vocab)),
        None => None,
    };
    Ok((ds, corpus, vocab))
}

/// Binds the sources a space needs: `EndTaskData` to the labeled dataset and
/// `InDomainData` to the domain corpus.
pub fn bind_sources(
    space: ObjectiveSpace,
    ds: LabeledDataset,
    corpus: Option<Corpus>,
) -> Result<SearchSetup> {
    let mut sources = BTreeMap::new();
    sources.insert(DataTag::EndTaskData, DataSource::labeled(DataTag::EndTaskData, ds));
    if space.descriptors.iter().any(|d| d.d == DataTag::InDomainData) {
        let corpus = corpus.ok_or_else(|| Error::Config("in-domain data requires a domain corpus".into()))?;
        sources.insert(DataTag::InDomainData, DataSource::unlabeled(DataTag::InDomainData, corpus));
    }
    Ok(SearchSetup { space, sources })
}

/// Two-objective setup: the end task itself (helpful) and the same inputs
/// with every label shifted by one class (adversarial), both read through
/// the end-task head. Ids: 0 helpful, 1 adversarial.
pub fn helpful_vs_adversarial(ds: LabeledDataset) -> SearchSetup {
    let point = |d| ObjectiveDescriptor::new(d, TransformTag::NoOp, ReprTag::Bidirectional, OutputTag::EndTaskLabel);
    let space = ObjectiveSpace::from_points(&[point(DataTag::EndTaskData), point(DataTag::InDomainData)]);
    let c = ds.num_classes;
    let perm: Vec<usize> = (0..c).map(|k| (k + 1) % c).collect();
    let flipped = ds.with_permuted_labels(&perm);
    let mut sources = BTreeMap::new();
    sources.insert(DataTag::EndTaskData, DataSource::labeled(DataTag::EndTaskData, ds));
    sources.insert(DataTag::InDomainData, DataSource::labeled(DataTag::InDomainData, flipped));
    SearchSetup { space, sources }
}

/// Seed for the synthetic generator of experiment seed `seed`.
pub fn data_seed(seed: u64) -> u64 {
    mix_seed_index(seed, 0xDA7A)
}
