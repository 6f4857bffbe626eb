use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{SeqLayout, Tape, Tensor, Var};
use crate::encoder::sparse::SparseVector;
use crate::encoder::vocab::{is_special, PAD};
use crate::error::{Error, Result};
use crate::numeric::Scalar;

pub const TOKEN_EMBEDDING: &str = "emb.token";
pub const POSITION_EMBEDDING: &str = "emb.position";
pub const MLM_BIAS: &str = "mlm.bias";
const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    /// Number of transformer layers (after the embeddings) in the domain subset.
    pub k_domain_layers: usize,
}

impl ModelConfig {
    /// Toy defaults for the given vocabulary size.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            layers: 6,
            d_model: 64,
            n_heads: 4,
            d_ffn: 128,
            max_seq_len: 64,
            k_domain_layers: 1,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_domain_layers = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.k_domain_layers >= self.layers {
            return Err(Error::NoTaskLayers {
                k: self.k_domain_layers,
                layers: self.layers,
            });
        }
        Ok(())
    }

    /// Every parameter name with its shape, in lexicographic order.
    pub fn parameter_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ffn);
        let mut shapes = BTreeMap::new();
        shapes.insert(TOKEN_EMBEDDING.to_string(), vec![v, d]);
        shapes.insert(POSITION_EMBEDDING.to_string(), vec![self.max_seq_len, d]);
        shapes.insert(MLM_BIAS.to_string(), vec![v]);
        for i in 0..self.layers {
            for proj in ["q", "k", "v", "o"] {
                shapes.insert(layer_param(i, &format!("attn.{proj}.weight")), vec![d, d]);
                shapes.insert(layer_param(i, &format!("attn.{proj}.bias")), vec![d]);
            }
            for ln in ["ln1", "ln2"] {
                shapes.insert(layer_param(i, &format!("{ln}.gain")), vec![d]);
                shapes.insert(layer_param(i, &format!("{ln}.bias")), vec![d]);
            }
            shapes.insert(layer_param(i, "ffn.w1"), vec![d, f]);
            shapes.insert(layer_param(i, "ffn.b1"), vec![f]);
            shapes.insert(layer_param(i, "ffn.w2"), vec![f, d]);
            shapes.insert(layer_param(i, "ffn.b2"), vec![d]);
        }
        shapes
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameter_shapes().into_keys().collect()
    }
}

pub fn layer_param(layer: usize, suffix: &str) -> String {
    format!("layers.{layer}.{suffix}")
}

/// Layer index of a per-layer parameter name, `None` for embeddings and head.
pub fn layer_of(name: &str) -> Option<usize> {
    name.strip_prefix("layers.")?.split('.').next()?.parse().ok()
}

/// Named encoder parameters. The MLM output projection is tied to
/// `emb.token` and has no tensor of its own.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> EncoderWeights<T> {
    /// BERT-style init: N(0, 0.02) matrices and embeddings, zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let numel: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gain") {
                vec![T::one(); numel]
            } else if shape.len() == 1 {
                vec![T::zero(); numel]
            } else {
                (0..numel).map(|_| T::lit(normal.sample(&mut rng))).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { config, tensors })
    }

    /// Wrap an existing tensor map, checking names and shapes against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let shapes = config.parameter_shapes();
        for (name, shape) in &shapes {
            match tensors.get(name) {
                None => return Err(Error::MissingTensor(name.clone())),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Dimension(format!(
                        "`{name}` has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::Config(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderWeights<U> {
        EncoderWeights {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }

    /// Copy every tensor onto `tape`; `trainable(name)` decides which collect gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(name, t)| (name.clone(), tape.param(name, t, trainable(name))))
                .collect(),
        }
    }
}

/// Tape handles for one bound copy of the weights.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    fn get(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn layer(&self, i: usize, suffix: &str) -> Var {
        self.vars[&layer_param(i, suffix)]
    }
}

/// A padded batch of token sequences.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// Non-padding rows (attention keys).
    pub keys: SeqLayout,
    /// Rows holding non-special tokens (SPLADE pooling).
    pub content: SeqLayout,
}

impl Batch {
    pub fn new(seqs: &[Vec<u32>], config: &ModelConfig) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seq_len == 0 {
            return Err(Error::Dimension("batch of empty sequences".into()));
        }
        if seq_len > config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: seq_len,
                max: config.max_seq_len,
            });
        }
        let rows = seqs.len() * seq_len;
        let mut ids = Vec::with_capacity(rows);
        let mut positions = Vec::with_capacity(rows);
        let mut keys = Vec::with_capacity(rows);
        let mut content = Vec::with_capacity(rows);
        for seq in seqs {
            for p in 0..seq_len {
                let id = seq.get(p).copied().unwrap_or(PAD);
                if id as usize >= config.vocab_size {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab: config.vocab_size,
                    });
                }
                ids.push(id as usize);
                positions.push(p);
                keys.push(p < seq.len());
                content.push(p < seq.len() && !is_special(id));
            }
        }
        Ok(Self {
            ids,
            positions,
            keys: SeqLayout::new(seqs.len(), seq_len, keys)?,
            content: SeqLayout::new(seqs.len(), seq_len, content)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.keys.batch
    }
}

/// Embeddings followed by post-norm transformer layers: `[batch*seq x d_model]`.
pub fn hidden_states<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Var> {
    let tok = tape.gather(p.get(TOKEN_EMBEDDING), &batch.ids)?;
    let pos = tape.gather(p.get(POSITION_EMBEDDING), &batch.positions)?;
    let mut x = tape.add(tok, pos)?;
    let eps = T::lit(LN_EPS);
    for i in 0..config.layers {
        let proj = |tape: &mut Tape<T>, x: Var, name: &str| -> Result<Var> {
            let w = p.layer(i, &format!("attn.{name}.weight"));
            let b = p.layer(i, &format!("attn.{name}.bias"));
            let y = tape.matmul(x, w)?;
            tape.add_bias(y, b)
        };
        let q = proj(tape, x, "q")?;
        let k = proj(tape, x, "k")?;
        let v = proj(tape, x, "v")?;
        let a = tape.attention(q, k, v, config.n_heads, &batch.keys)?;
        let o = proj(tape, a, "o")?;
        let r = tape.add(x, o)?;
        let x1 = tape.layer_norm(r, p.layer(i, "ln1.gain"), p.layer(i, "ln1.bias"), eps)?;

        let h = tape.matmul(x1, p.layer(i, "ffn.w1"))?;
        let h = tape.add_bias(h, p.layer(i, "ffn.b1"))?;
        let h = tape.gelu(h)?;
        let f = tape.matmul(h, p.layer(i, "ffn.w2"))?;
        let f = tape.add_bias(f, p.layer(i, "ffn.b2"))?;
        let r = tape.add(x1, f)?;
        x = tape.layer_norm(r, p.layer(i, "ln2.gain"), p.layer(i, "ln2.bias"), eps)?;
    }
    Ok(x)
}

/// Vocabulary logits through the tied projection: `hidden * emb.token^T + mlm.bias`.
pub fn mlm_logits<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, hidden: Var) -> Result<Var> {
    let logits = tape.matmul_nt(hidden, p.get(TOKEN_EMBEDDING))?;
    tape.add_bias(logits, p.get(MLM_BIAS))
}

/// SPLADE representations `[batch x V]`: max over content positions of
/// `log(1 + relu(logit))`.
pub fn sparse_activations<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Var> {
    let hidden = hidden_states(tape, config, p, batch)?;
    let logits = mlm_logits(tape, p, hidden)?;
    sparse_pool(tape, logits, &batch.content)
}

/// The saturation-and-pooling head applied to precomputed logits.
pub fn sparse_pool<T: Scalar>(tape: &mut Tape<T>, logits: Var, content: &SeqLayout) -> Result<Var> {
    let act = tape.log1p_relu(logits)?;
    tape.max_pool(act, content)
}

/// MLM logits `[seq_len x V]` for one sequence.
pub fn forward_mlm<T: Scalar>(weights: &EncoderWeights<T>, ids: &[u32]) -> Result<Tensor<T>> {
    let batch = Batch::new(&[ids.to_vec()], &weights.config)?;
    let mut tape = Tape::new();
    let p = weights.bind(&mut tape, |_| false);
    let h = hidden_states(&mut tape, &weights.config, &p, &batch)?;
    let logits = mlm_logits(&mut tape, &p, h)?;
    Ok(tape.value(logits)?.clone())
}

/// Sparse representation of one token sequence.
pub fn encode_sparse<T: Scalar>(weights: &EncoderWeights<T>, ids: &[u32]) -> Result<SparseVector> {
    if !ids.iter().any(|&id| !is_special(id)) {
        return Err(Error::EmptyContent);
    }
    let mut out = encode_sparse_batch(weights, &[ids.to_vec()])?;
    Ok(out.pop().expect("one sequence in, one out"))
}

const ENCODE_CHUNK: usize = 64;

/// Encode many sequences; a sequence without content encodes to the empty vector.
pub fn encode_sparse_batch<T: Scalar>(weights: &EncoderWeights<T>, seqs: &[Vec<u32>]) -> Result<Vec<SparseVector>> {
    let mut out = vec![SparseVector::default(); seqs.len()];
    let with_content: Vec<usize> = (0..seqs.len())
        .filter(|&i| seqs[i].iter().any(|&id| !is_special(id)))
        .collect();
    for chunk in with_content.chunks(ENCODE_CHUNK) {
        let group: Vec<Vec<u32>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
        let batch = Batch::new(&group, &weights.config)?;
        let mut tape = Tape::new();
        let p = weights.bind(&mut tape, |_| false);
        let reps = sparse_activations(&mut tape, &weights.config, &p, &batch)?;
        let reps = tape.value(reps)?;
        for (row, &i) in chunk.iter().enumerate() {
            out[i] = SparseVector::from_dense(reps.row(row).iter().map(|x| x.as_f64() as f32));
        }
    }
    Ok(out)
}
