use crate::data::Corpus;
use crate::encoder::{encode_sparse_batch, words, SparseVector, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{Checkpoint, Stage};
use crate::retrieval::index::InvertedIndex;

pub enum IndexSource<'a> {
    /// Raw term frequencies for BM25.
    Frequency,
    /// Learned impacts from a fine-tuned or composed checkpoint.
    Encoder {
        checkpoint: &'a Checkpoint,
        vocab: &'a Vocabulary,
    },
}

/// Tokenize with the shared vocabulary and encode each text.
pub fn encode_texts<'t>(
    checkpoint: &Checkpoint,
    vocab: &Vocabulary,
    texts: impl IntoIterator<Item = &'t str>,
) -> Result<Vec<SparseVector>> {
    let max = checkpoint.config().max_seq_len;
    let seqs: Vec<Vec<u32>> = texts.into_iter().map(|t| vocab.tokenize(t, max)).collect();
    encode_sparse_batch(&checkpoint.weights, &seqs)
}

pub fn build_index(corpus: &Corpus, source: &IndexSource<'_>) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    match source {
        IndexSource::Frequency => InvertedIndex::from_texts(
            corpus
                .docs()
                .iter()
                .map(|d| (d.id.clone(), d.text.clone()))
                .collect(),
        ),
        IndexSource::Encoder { checkpoint, vocab } => {
            if !matches!(checkpoint.stage(), Stage::FinetuneSource | Stage::Composed) {
                return Err(Error::Stage(format!(
                    "impact index needs a {} or {} checkpoint, got {}",
                    Stage::FinetuneSource,
                    Stage::Composed,
                    checkpoint.stage()
                )));
            }
            let reps = encode_texts(checkpoint, vocab, corpus.texts())?;
            let docs = corpus
                .docs()
                .iter()
                .zip(reps)
                .map(|(d, v)| (d.id.clone(), v, words(&d.text).count() as u32))
                .collect();
            InvertedIndex::from_impacts(docs, checkpoint.config().vocab_size)
        }
    }
}
