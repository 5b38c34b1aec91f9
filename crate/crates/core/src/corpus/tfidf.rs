use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TfidfTable {
    pub num_docs: usize,
    pub df: BTreeMap<TokenId, usize>,
    pub idf: BTreeMap<TokenId, f64>,
}

/// `idf(tok) = ln(N / df(tok))` over the given documents. Empty documents
/// count toward `N` but contribute no positions.
pub fn compute_tfidf(documents: &[Vec<TokenId>]) -> TfidfTable {
    let mut df: BTreeMap<TokenId, usize> = BTreeMap::new();
    for doc in documents {
        let uniq: BTreeSet<TokenId> = doc.iter().copied().collect();
        for tok in uniq {
            *df.entry(tok).or_default() += 1;
        }
    }
    let n = documents.len();
    let idf = df
        .iter()
        .map(|(&tok, &count)| (tok, (n as f64 / count as f64).ln()))
        .collect();
    TfidfTable { num_docs: n, df, idf }
}

impl TfidfTable {
    /// Unknown tokens have idf 0.
    pub fn idf(&self, tok: TokenId) -> f64 {
        self.idf.get(&tok).copied().unwrap_or(0.0)
    }

    /// Per-position `tf(tok, doc) * idf(tok)` with `tf = count / len(doc)`.
    pub fn doc_targets(&self, doc: &[TokenId]) -> Vec<f64> {
        if doc.is_empty() {
            return Vec::new();
        }
        let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
        for &t in doc {
            *counts.entry(t).or_default() += 1;
        }
        let len = doc.len() as f64;
        doc.iter()
            .map(|t| counts[t] as f64 / len * self.idf(*t))
            .collect()
    }

    /// CSV dump with header `token,idf`.
    pub fn write_csv<W: Write>(&self, vocab: &Vocab, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["token", "idf"])?;
        for (&tok, &idf) in &self.idf {
            w.write_record([vocab.token_str(tok), format!("{idf:.12}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
