use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{is_special, MASK, NUM_SPECIALS};

/// Label value for positions that carry no MLM target.
pub const IGNORE: usize = usize::MAX;

pub const DEFAULT_MASK_PROB: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskAction {
    Unselected,
    /// Replaced by `[MASK]`.
    Masked,
    /// Replaced by a uniformly drawn non-special id.
    Replaced,
    /// Selected but left as is.
    Kept,
}

/// One masked sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedRow {
    pub input: Vec<u32>,
    pub labels: Vec<usize>,
    pub actions: Vec<MaskAction>,
}

impl MaskedRow {
    pub fn selected(&self) -> usize {
        self.actions.iter().filter(|a| **a != MaskAction::Unselected).count()
    }
}

/// Select each non-special position with probability `mask_prob`, then
/// mask it (80%), replace it (10%) or keep it (10%).
pub fn mask_tokens(ids: &[u32], mask_prob: f64, vocab_size: usize, rng: &mut impl Rng) -> MaskedRow {
    assert!(mask_prob > 0.0 && mask_prob < 1.0, "mask_prob must be in (0, 1)");
    let mut row = MaskedRow {
        input: ids.to_vec(),
        labels: vec![IGNORE; ids.len()],
        actions: vec![MaskAction::Unselected; ids.len()],
    };
    for (p, &id) in ids.iter().enumerate() {
        if is_special(id) || !rng.random_bool(mask_prob) {
            continue;
        }
        row.labels[p] = id as usize;
        let r: f64 = rng.random();
        row.actions[p] = if r < 0.8 {
            row.input[p] = MASK;
            MaskAction::Masked
        } else if r < 0.9 {
            row.input[p] = rng.random_range(NUM_SPECIALS as u32..vocab_size as u32);
            MaskAction::Replaced
        } else {
            MaskAction::Kept
        };
    }
    row
}

/// Masked inputs and labels for a batch of sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmBatch {
    pub rows: Vec<MaskedRow>,
}

impl MlmBatch {
    pub fn mask(seqs: &[&[u32]], mask_prob: f64, vocab_size: usize, rng: &mut impl Rng) -> Self {
        Self {
            rows: seqs.iter().map(|s| mask_tokens(s, mask_prob, vocab_size, rng)).collect(),
        }
    }

    pub fn selected(&self) -> usize {
        self.rows.iter().map(MaskedRow::selected).sum()
    }

    pub fn inputs(&self) -> Vec<Vec<u32>> {
        self.rows.iter().map(|r| r.input.clone()).collect()
    }

    /// Labels flattened row-major after padding every row to `seq_len`.
    pub fn padded_labels(&self, seq_len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.rows.len() * seq_len);
        for r in &self.rows {
            out.extend_from_slice(&r.labels);
            out.extend(std::iter::repeat_n(IGNORE, seq_len - r.labels.len()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoder::{CLS, SEP};

    #[test]
    fn specials_never_selected_and_labels_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = [CLS, 10, 11, 12, 13, SEP];
        for _ in 0..500 {
            let row = mask_tokens(&ids, 0.5, 50, &mut rng);
            assert_eq!(row.actions[0], MaskAction::Unselected);
            assert_eq!(row.actions[5], MaskAction::Unselected);
            for p in 0..ids.len() {
                let selected = row.actions[p] != MaskAction::Unselected;
                assert_eq!(selected, row.labels[p] != IGNORE);
                if selected {
                    assert_eq!(row.labels[p], ids[p] as usize);
                }
                if row.actions[p] == MaskAction::Replaced {
                    assert!(!is_special(row.input[p]));
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let ids: Vec<u32> = (5..40).collect();
        let a = mask_tokens(&ids, 0.15, 40, &mut ChaCha8Rng::seed_from_u64(9));
        let b = mask_tokens(&ids, 0.15, 40, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_probability_selects_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seqs: Vec<Vec<u32>> = (0..20).map(|i| vec![CLS, 5 + i, SEP]).collect();
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let batch = MlmBatch::mask(&refs, 1e-9, 30, &mut rng);
        assert_eq!(batch.selected(), 0);
    }

    #[test]
    fn action_fractions_near_80_10_10() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ids: Vec<u32> = (5..105).collect();
        let mut counts: HashMap<MaskAction, usize> = HashMap::new();
        let mut total = 0;
        while total < 100_000 {
            let row = mask_tokens(&ids, 0.15, 200, &mut rng);
            for a in row.actions.into_iter().filter(|a| *a != MaskAction::Unselected) {
                *counts.entry(a).or_default() += 1;
                total += 1;
            }
        }
        let frac = |a| counts.get(&a).copied().unwrap_or(0) as f64 / total as f64;
        assert!((frac(MaskAction::Masked) - 0.8).abs() < 0.01);
        assert!((frac(MaskAction::Replaced) - 0.1).abs() < 0.01);
        assert!((frac(MaskAction::Kept) - 0.1).abs() < 0.01);
    }
}
