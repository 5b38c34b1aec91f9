use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, MASK, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::objective_space::TransformTag;

pub const DEFAULT_SELECTION_RATE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub selection_rate: f64,
    pub vocab_size: usize,
}

impl TransformParams {
    pub fn new(vocab_size: usize) -> Self {
        TransformParams {
            selection_rate: DEFAULT_SELECTION_RATE,
            vocab_size,
        }
    }
}

/// What happened to an input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Untouched,
    Masked,
    Replaced,
    /// Selected but left as is (BERT-op's third branch).
    Kept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub ids: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    /// Index into the original sequence of the token each target refers to.
    pub target_source: Vec<Option<usize>>,
    /// Per-output-slot action; empty for `Delete`.
    pub actions: Vec<Action>,
}

fn random_regular_token<R: Rng + ?Sized>(vocab_size: usize, rng: &mut R) -> TokenId {
    if vocab_size <= NUM_SPECIALS {
        return MASK;
    }
    rng.random_range(NUM_SPECIALS..vocab_size) as TokenId
}

/// Corrupts `tokens` per the transform. Selection is i.i.d. per position at
/// `params.selection_rate`.
///
/// `Delete` drops selected positions; each surviving position is trained to
/// predict the token that followed it in the uncorrupted sequence.
pub fn apply_transform<R: Rng + ?Sized>(
    tokens: &[TokenId],
    t: TransformTag,
    params: &TransformParams,
    rng: &mut R,
) -> Result<Transformed> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("transform of an empty sequence".into()));
    }
    let n = tokens.len();
    let rate = params.selection_rate;
    match t {
        TransformTag::NoOp => Ok(Transformed {
            ids: tokens.to_vec(),
            targets: tokens.to_vec(),
            loss_mask: vec![true; n],
            target_source: (0..n).map(Some).collect(),
            actions: vec![Action::Untouched; n],
        }),
        TransformTag::Mask | TransformTag::Replace | TransformTag::BertOp => {
            let mut ids = tokens.to_vec();
            let mut loss_mask = vec![false; n];
            let mut actions = vec![Action::Untouched; n];
            for i in 0..n {
                if rng.random::<f64>() >= rate {
                    continue;
                }
                loss_mask[i] = true;
                let action = match t {
                    TransformTag::Mask => Action::Masked,
                    TransformTag::Replace => Action::Replaced,
                    _ => {
                        let u: f64 = rng.random();
                        if u < 0.8 {
                            Action::Masked
                        } else if u < 0.9 {
                            Action::Replaced
                        } else {
                            Action::Kept
                        }
                    }
                };
                match action {
                    Action::Masked => ids[i] = MASK,
                    Action::Replaced => ids[i] = random_regular_token(params.vocab_size, rng),
                    _ => {}
                }
                actions[i] = action;
            }
            Ok(Transformed {
                ids,
                targets: tokens.to_vec(),
                target_source: (0..n).map(Some).collect(),
                loss_mask,
                actions,
            })
        }
        TransformTag::Delete => {
            if n < 2 {
                return Err(Error::InvalidInput(
                    "delete requires a sequence of length at least 2".into(),
                ));
            }
            let mut ids = Vec::with_capacity(n);
            let mut targets = Vec::with_capacity(n);
            let mut loss_mask = Vec::with_capacity(n);
            let mut target_source = Vec::with_capacity(n);
            for i in 0..n {
                if rng.random::<f64>() < rate {
                    continue;
                }
                ids.push(tokens[i]);
                if i + 1 < n {
                    targets.push(tokens[i + 1]);
                    loss_mask.push(true);
                    target_source.push(Some(i + 1));
                } else {
                    targets.push(tokens[i]);
                    loss_mask.push(false);
                    target_source.push(None);
                }
            }
            Ok(Transformed {
                ids,
                targets,
                loss_mask,
                target_source,
                actions: Vec::new(),
            })
        }
    }
}
