use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::objective_space::ReprTag;

/// Which positions each query may attend to, before PAD handling.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaskSpec {
    pub mode: ReprTag,
    /// `permutation[r]` is the position visited at step `r` (RandomFactorized only).
    pub permutation: Option<Vec<usize>>,
    /// Entry `(i, j)` is true iff position `i` may attend to position `j`.
    pub matrix: Array2<bool>,
    /// Step at which each position is visited in the factorization order.
    pub rank: Vec<usize>,
}

impl AttentionMaskSpec {
    pub fn seq_len(&self) -> usize {
        self.rank.len()
    }

    /// Mask for a fixed visiting order.
    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut rank = vec![usize::MAX; n];
        for (r, &p) in perm.iter().enumerate() {
            if p >= n || rank[p] != usize::MAX {
                return Err(Error::InvalidInput(format!("not a permutation of 0..{n}")));
            }
            rank[p] = r;
        }
        let matrix = Array2::from_shape_fn((n, n), |(i, j)| rank[j] <= rank[i]);
        Ok(AttentionMaskSpec {
            mode: ReprTag::RandomFactorized,
            permutation: Some(perm),
            matrix,
            rank,
        })
    }

    /// Visiting order used to pick readout positions. Bidirectional has none.
    pub fn is_ordered(&self) -> bool {
        self.mode != ReprTag::Bidirectional
    }

    /// Combines the mode pattern with a row's padding: PAD keys are hidden
    /// from every query except themselves.
    pub fn with_padding(&self, is_pad: &[bool]) -> Array2<bool> {
        let n = self.seq_len();
        Array2::from_shape_fn((n, n), |(i, j)| self.matrix[[i, j]] && (!is_pad[j] || i == j))
    }
}

pub fn build_attention_mask<R: Rng + ?Sized>(mode: ReprTag, seq_len: usize, rng: &mut R) -> Result<AttentionMaskSpec> {
    if seq_len == 0 {
        return Err(Error::InvalidInput("seq_len must be at least 1".into()));
    }
    let n = seq_len;
    let spec = match mode {
        ReprTag::Bidirectional => AttentionMaskSpec {
            mode,
            permutation: None,
            matrix: Array2::from_elem((n, n), true),
            rank: (0..n).collect(),
        },
        ReprTag::LeftToRight => AttentionMaskSpec {
            mode,
            permutation: None,
            matrix: Array2::from_shape_fn((n, n), |(i, j)| j <= i),
            rank: (0..n).collect(),
        },
        ReprTag::RightToLeft => AttentionMaskSpec {
            mode,
            permutation: None,
            matrix: Array2::from_shape_fn((n, n), |(i, j)| j >= i),
            rank: (0..n).rev().collect(),
        },
        ReprTag::RandomFactorized => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            AttentionMaskSpec::from_permutation(perm)?
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn left_to_right_is_lower_triangular() {
        let mut rng = stream(0, Stream::Mask);
        let m = build_attention_mask(ReprTag::LeftToRight, 3, &mut rng).unwrap();
        let expect = ndarray::array![[true, false, false], [true, true, false], [true, true, true]];
        assert_eq!(m.matrix, expect);
    }

    #[test]
    fn identity_permutation_matches_left_to_right() {
        let mut rng = stream(0, Stream::Mask);
        let l2r = build_attention_mask(ReprTag::LeftToRight, 5, &mut rng).unwrap();
        let f = AttentionMaskSpec::from_permutation((0..5).collect()).unwrap();
        assert_eq!(f.matrix, l2r.matrix);
        assert_eq!(f.rank, l2r.rank);
    }

    #[test]
    fn right_to_left_is_transpose() {
        let mut rng = stream(0, Stream::Mask);
        let l2r = build_attention_mask(ReprTag::LeftToRight, 6, &mut rng).unwrap();
        let r2l = build_attention_mask(ReprTag::RightToLeft, 6, &mut rng).unwrap();
        assert_eq!(r2l.matrix, l2r.matrix.t().to_owned());
    }

    #[test]
    fn diagonal_survives_padding() {
        let mut rng = stream(3, Stream::Mask);
        for &mode in ReprTag::ALL {
            let m = build_attention_mask(mode, 7, &mut rng).unwrap();
            let pad = [false, false, false, true, true, true, true];
            let full = m.with_padding(&pad);
            for i in 0..7 {
                assert!(full[[i, i]]);
            }
        }
    }

    #[test]
    fn zero_length_is_rejected() {
        let mut rng = stream(0, Stream::Mask);
        assert!(build_attention_mask(ReprTag::Bidirectional, 0, &mut rng).is_err());
    }
}
