//! The encoder network: element+position input encoding, a stack of
//! Transformer blocks, and a prediction head whose classifier weight is the
//! entity slice of the input embedding matrix (one storage, two uses).
//!
//! Blocks are post-norm: self-attention, residual, layer norm, then the
//! feed-forward sublayer, residual, layer norm. The head applies a dense
//! transform, GELU, and layer norm before the tied projection plus a free
//! output bias over entities. [MASK] and [PAD] own embedding rows but are
//! excluded from the classifier slice, so predictions range over entities
//! only.

use crate::error::{CokeError, Result};
use crate::kg::{GraphPath, TokenId};
use crate::tensor::{Elem, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const INIT_STD: f64 = 0.02;
const ATTN_MASK_FILL: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Transformer block count.
    pub blocks: usize,
    /// Self-attention heads per block.
    pub heads: usize,
    /// Hidden size; must divide evenly into heads.
    pub hidden_size: usize,
    pub ffn_size: usize,
    /// Maximum input length: 3 for edge training, 7 for path training.
    pub max_seq_len: usize,
    pub dropout: f64,
    /// Label mass placed on the target entity; the remaining 1-ε spreads
    /// uniformly over the other entities. ε=1 recovers one-hot.
    pub label_smoothing: f64,
    pub entity_count: usize,
    pub relation_count: usize,
}

impl ModelConfig {
    /// Paper-default architecture for edge contexts.
    pub fn edges(entity_count: usize, relation_count: usize) -> Self {
        ModelConfig {
            blocks: 12,
            heads: 4,
            hidden_size: 256,
            ffn_size: 512,
            max_seq_len: 3,
            dropout: 0.1,
            label_smoothing: 0.8,
            entity_count,
            relation_count,
        }
    }

    /// Paper-default architecture for path contexts (up to 5 relations).
    pub fn paths(entity_count: usize, relation_count: usize) -> Self {
        ModelConfig {
            max_seq_len: 7,
            dropout: 0.1,
            label_smoothing: 1.0,
            ..ModelConfig::edges(entity_count, relation_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden_size.is_multiple_of(self.heads) {
            return Err(CokeError::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.heads
            )));
        }
        if self.max_seq_len < 3 || self.max_seq_len.is_multiple_of(2) {
            return Err(CokeError::Config(format!(
                "max sequence length {} must be odd and at least 3",
                self.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CokeError::Config(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        if !(0.0 < self.label_smoothing && self.label_smoothing <= 1.0) {
            return Err(CokeError::Config(format!(
                "label smoothing {} outside (0,1]",
                self.label_smoothing
            )));
        }
        if self.entity_count == 0 {
            return Err(CokeError::Config("entity vocabulary is empty".into()));
        }
        Ok(())
    }

    /// Total token count: entities + relations + [MASK] + [PAD].
    pub fn total_tokens(&self) -> usize {
        self.entity_count + self.relation_count + 2
    }

    pub fn mask_id(&self) -> TokenId {
        (self.entity_count + self.relation_count) as TokenId
    }

    pub fn pad_id(&self) -> TokenId {
        self.mask_id() + 1
    }

    pub fn is_entity(&self, id: TokenId) -> bool {
        (id as usize) < self.entity_count
    }

    pub fn is_relation(&self, id: TokenId) -> bool {
        let v = self.entity_count;
        (id as usize) >= v && (id as usize) < v + self.relation_count
    }

    /// Closed-form trainable parameter total for this configuration.
    pub fn param_count(&self) -> usize {
        let d = self.hidden_size;
        let f = self.ffn_size;
        let embeddings = self.total_tokens() * d + self.max_seq_len * d;
        let per_block = 4 * (d * d + d) // attention projections
            + (d * f + f) + (f * d + d) // feed-forward
            + 4 * d; // two layer norms
        let head = d * d + d + 2 * d + self.entity_count;
        embeddings + self.blocks * per_block + head
    }
}

/// One masked edge or path sequence: the unit of training and evaluation.
/// Exactly one end of the token list is [MASK]; `target` is the held-out
/// entity and `mask_position` its 0-based slot (0 or n-1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInstance {
    token_ids: Vec<TokenId>,
    target: TokenId,
    mask_position: usize,
}

impl SequenceInstance {
    pub fn new(
        token_ids: Vec<TokenId>,
        target: TokenId,
        mask_position: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let n = token_ids.len();
        let bad = |msg: String| Err(CokeError::Config(msg));
        if n < 3 || n.is_multiple_of(2) {
            return bad(format!("instance length {n} must be odd and at least 3"));
        }
        if mask_position != 0 && mask_position != n - 1 {
            return bad(format!("mask position {mask_position} is not an end of the sequence"));
        }
        if !cfg.is_entity(target) {
            return Err(CokeError::UnknownId(target));
        }
        for (i, &id) in token_ids.iter().enumerate() {
            if i == mask_position {
                if id != cfg.mask_id() {
                    return bad(format!("slot {i} must hold the mask token"));
                }
            } else if i == 0 || i == n - 1 {
                if !cfg.is_entity(id) {
                    return bad(format!("slot {i} must hold an entity, got id {id}"));
                }
            } else if !cfg.is_relation(id) {
                return bad(format!("slot {i} must hold a relation, got id {id}"));
            }
        }
        Ok(SequenceInstance {
            token_ids,
            target,
            mask_position,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn target(&self) -> TokenId {
        self.target
    }

    pub fn mask_position(&self) -> usize {
        self.mask_position
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Mask the subject end: (?, r_1..r_k, o) predicting s.
pub fn mask_subject(path: &GraphPath, cfg: &ModelConfig) -> SequenceInstance {
    let mut tokens = Vec::with_capacity(path.len() + 2);
    tokens.push(cfg.mask_id());
    tokens.extend_from_slice(path.relations());
    tokens.push(path.object());
    SequenceInstance {
        token_ids: tokens,
        target: path.subject(),
        mask_position: 0,
    }
}

/// Mask the object end: (s, r_1..r_k, ?) predicting o.
pub fn mask_object(path: &GraphPath, cfg: &ModelConfig) -> SequenceInstance {
    let mut tokens = Vec::with_capacity(path.len() + 2);
    tokens.push(path.subject());
    tokens.extend_from_slice(path.relations());
    tokens.push(cfg.mask_id());
    let mask_position = tokens.len() - 1;
    SequenceInstance {
        token_ids: tokens,
        target: path.object(),
        mask_position,
    }
}

/// Every edge or path yields two training instances, one per masked end.
/// Relations keep their positions in both.
pub fn make_instances(path: &GraphPath, cfg: &ModelConfig) -> [SequenceInstance; 2] {
    [mask_subject(path, cfg), mask_object(path, cfg)]
}

/// Per-block trainable arrays.
#[derive(Debug, Clone)]
pub struct BlockParams<E> {
    pub query_weight: Tensor<E>,
    pub query_bias: Tensor<E>,
    pub key_weight: Tensor<E>,
    pub key_bias: Tensor<E>,
    pub value_weight: Tensor<E>,
    pub value_bias: Tensor<E>,
    pub output_weight: Tensor<E>,
    pub output_bias: Tensor<E>,
    pub attn_norm_gain: Tensor<E>,
    pub attn_norm_bias: Tensor<E>,
    pub ffn_in_weight: Tensor<E>,
    pub ffn_in_bias: Tensor<E>,
    pub ffn_out_weight: Tensor<E>,
    pub ffn_out_bias: Tensor<E>,
    pub ffn_norm_gain: Tensor<E>,
    pub ffn_norm_bias: Tensor<E>,
}

/// All trainable arrays of the network. The entity rows of
/// `element_embeddings` double as the classifier weight.
#[derive(Debug, Clone)]
pub struct ModelParams<E> {
    pub config: ModelConfig,
    pub element_embeddings: Tensor<E>,
    pub position_embeddings: Tensor<E>,
    pub blocks: Vec<BlockParams<E>>,
    pub head_weight: Tensor<E>,
    pub head_bias: Tensor<E>,
    pub head_norm_gain: Tensor<E>,
    pub head_norm_bias: Tensor<E>,
    pub entity_bias: Tensor<E>,
}

impl<E: Elem> ModelParams<E> {
    /// Weights from a truncated normal (std 0.02, clipped at ±2σ), biases
    /// zero, layer-norm gains one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_size;
        let f = config.ffn_size;
        let normal = |shape: &[usize], rng: &mut ChaCha8Rng| {
            Tensor::<E>::truncated_normal(shape, INIT_STD, rng)
        };
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                query_weight: normal(&[d, d], &mut rng),
                query_bias: Tensor::zeros(&[d]),
                key_weight: normal(&[d, d], &mut rng),
                key_bias: Tensor::zeros(&[d]),
                value_weight: normal(&[d, d], &mut rng),
                value_bias: Tensor::zeros(&[d]),
                output_weight: normal(&[d, d], &mut rng),
                output_bias: Tensor::zeros(&[d]),
                attn_norm_gain: Tensor::full(&[d], E::ONE),
                attn_norm_bias: Tensor::zeros(&[d]),
                ffn_in_weight: normal(&[d, f], &mut rng),
                ffn_in_bias: Tensor::zeros(&[f]),
                ffn_out_weight: normal(&[f, d], &mut rng),
                ffn_out_bias: Tensor::zeros(&[d]),
                ffn_norm_gain: Tensor::full(&[d], E::ONE),
                ffn_norm_bias: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(ModelParams {
            element_embeddings: normal(&[config.total_tokens(), d], &mut rng),
            position_embeddings: normal(&[config.max_seq_len, d], &mut rng),
            blocks,
            head_weight: normal(&[d, d], &mut rng),
            head_bias: Tensor::zeros(&[d]),
            head_norm_gain: Tensor::full(&[d], E::ONE),
            head_norm_bias: Tensor::zeros(&[d]),
            entity_bias: Tensor::zeros(&[config.entity_count]),
            config,
        })
    }

    /// All-zero parameters (layer-norm gains included); test scaffolding.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut p = Self::init(config, 0)?;
        p.for_each_mut(|t| {
            for v in t.data_mut() {
                *v = E::ZERO;
            }
        });
        Ok(p)
    }

    /// Visit every parameter tensor in the declared (checkpoint) order.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&'a Tensor<E>)) {
        f(&self.element_embeddings);
        f(&self.position_embeddings);
        for b in &self.blocks {
            f(&b.query_weight);
            f(&b.query_bias);
            f(&b.key_weight);
            f(&b.key_bias);
            f(&b.value_weight);
            f(&b.value_bias);
            f(&b.output_weight);
            f(&b.output_bias);
            f(&b.attn_norm_gain);
            f(&b.attn_norm_bias);
            f(&b.ffn_in_weight);
            f(&b.ffn_in_bias);
            f(&b.ffn_out_weight);
            f(&b.ffn_out_bias);
            f(&b.ffn_norm_gain);
            f(&b.ffn_norm_bias);
        }
        f(&self.head_weight);
        f(&self.head_bias);
        f(&self.head_norm_gain);
        f(&self.head_norm_bias);
        f(&self.entity_bias);
    }

    /// Mutable visit in the same declared order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Tensor<E>)) {
        f(&mut self.element_embeddings);
        f(&mut self.position_embeddings);
        for b in &mut self.blocks {
            f(&mut b.query_weight);
            f(&mut b.query_bias);
            f(&mut b.key_weight);
            f(&mut b.key_bias);
            f(&mut b.value_weight);
            f(&mut b.value_bias);
            f(&mut b.output_weight);
            f(&mut b.output_bias);
            f(&mut b.attn_norm_gain);
            f(&mut b.attn_norm_bias);
            f(&mut b.ffn_in_weight);
            f(&mut b.ffn_in_bias);
            f(&mut b.ffn_out_weight);
            f(&mut b.ffn_out_bias);
            f(&mut b.ffn_norm_gain);
            f(&mut b.ffn_norm_bias);
        }
        f(&mut self.head_weight);
        f(&mut self.head_bias);
        f(&mut self.head_norm_gain);
        f(&mut self.head_norm_bias);
        f(&mut self.entity_bias);
    }

    /// Trainable parameter total; always agrees with the closed form.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|t| n += t.numel());
        n
    }

    pub fn cast<F: Elem>(&self) -> ModelParams<F> {
        ModelParams {
            config: self.config.clone(),
            element_embeddings: self.element_embeddings.cast(),
            position_embeddings: self.position_embeddings.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    query_weight: b.query_weight.cast(),
                    query_bias: b.query_bias.cast(),
                    key_weight: b.key_weight.cast(),
                    key_bias: b.key_bias.cast(),
                    value_weight: b.value_weight.cast(),
                    value_bias: b.value_bias.cast(),
                    output_weight: b.output_weight.cast(),
                    output_bias: b.output_bias.cast(),
                    attn_norm_gain: b.attn_norm_gain.cast(),
                    attn_norm_bias: b.attn_norm_bias.cast(),
                    ffn_in_weight: b.ffn_in_weight.cast(),
                    ffn_in_bias: b.ffn_in_bias.cast(),
                    ffn_out_weight: b.ffn_out_weight.cast(),
                    ffn_out_bias: b.ffn_out_bias.cast(),
                    ffn_norm_gain: b.ffn_norm_gain.cast(),
                    ffn_norm_bias: b.ffn_norm_bias.cast(),
                })
                .collect(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
            head_norm_gain: self.head_norm_gain.cast(),
            head_norm_bias: self.head_norm_bias.cast(),
            entity_bias: self.entity_bias.cast(),
        }
    }
}

/// Parameter handles on a tape, mirroring the declared order.
pub struct TapedParams {
    pub element_embeddings: Var,
    pub position_embeddings: Var,
    pub blocks: Vec<TapedBlock>,
    pub head_weight: Var,
    pub head_bias: Var,
    pub head_norm_gain: Var,
    pub head_norm_bias: Var,
    pub entity_bias: Var,
}

pub struct TapedBlock {
    pub query_weight: Var,
    pub query_bias: Var,
    pub key_weight: Var,
    pub key_bias: Var,
    pub value_weight: Var,
    pub value_bias: Var,
    pub output_weight: Var,
    pub output_bias: Var,
    pub attn_norm_gain: Var,
    pub attn_norm_bias: Var,
    pub ffn_in_weight: Var,
    pub ffn_in_bias: Var,
    pub ffn_out_weight: Var,
    pub ffn_out_bias: Var,
    pub ffn_norm_gain: Var,
    pub ffn_norm_bias: Var,
}

/// A padded batch ready for the encoder.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub seq_len: usize,
    token_ids: Vec<TokenId>,
    real: Vec<bool>,
    mask_rows: Vec<usize>,
    targets: Vec<TokenId>,
}

/// Pad instances to the configured length with [PAD]; the attention mask
/// marks real tokens so padded slots are never attended to.
pub fn build_batch(instances: &[&SequenceInstance], cfg: &ModelConfig) -> Result<Batch> {
    if instances.is_empty() {
        return Err(CokeError::Config("empty batch".into()));
    }
    let k = cfg.max_seq_len;
    let b = instances.len();
    let mut token_ids = Vec::with_capacity(b * k);
    let mut real = Vec::with_capacity(b * k);
    let mut mask_rows = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for inst in instances {
        let n = inst.len();
        if n > k {
            return Err(CokeError::Config(format!(
                "instance length {n} exceeds the configured maximum {k}"
            )));
        }
        token_ids.extend_from_slice(inst.tokens());
        token_ids.extend(std::iter::repeat_n(cfg.pad_id(), k - n));
        real.extend(std::iter::repeat_n(true, n));
        real.extend(std::iter::repeat_n(false, k - n));
        mask_rows.push(inst.mask_position());
        targets.push(inst.target());
    }
    Ok(Batch {
        size: b,
        seq_len: k,
        token_ids,
        real,
        mask_rows,
        targets,
    })
}

impl Batch {
    pub fn targets(&self) -> &[TokenId] {
        &self.targets
    }
}

impl<E: Elem> ModelParams<E> {
    /// Register every parameter on the tape in declared order, so
    /// `tape.param_grads()` lines up with `for_each_mut`.
    pub fn register(&self, tape: &mut Tape<E>) -> TapedParams {
        let element_embeddings = tape.param(self.element_embeddings.clone());
        let position_embeddings = tape.param(self.position_embeddings.clone());
        let blocks = self
            .blocks
            .iter()
            .map(|b| TapedBlock {
                query_weight: tape.param(b.query_weight.clone()),
                query_bias: tape.param(b.query_bias.clone()),
                key_weight: tape.param(b.key_weight.clone()),
                key_bias: tape.param(b.key_bias.clone()),
                value_weight: tape.param(b.value_weight.clone()),
                value_bias: tape.param(b.value_bias.clone()),
                output_weight: tape.param(b.output_weight.clone()),
                output_bias: tape.param(b.output_bias.clone()),
                attn_norm_gain: tape.param(b.attn_norm_gain.clone()),
                attn_norm_bias: tape.param(b.attn_norm_bias.clone()),
                ffn_in_weight: tape.param(b.ffn_in_weight.clone()),
                ffn_in_bias: tape.param(b.ffn_in_bias.clone()),
                ffn_out_weight: tape.param(b.ffn_out_weight.clone()),
                ffn_out_bias: tape.param(b.ffn_out_bias.clone()),
                ffn_norm_gain: tape.param(b.ffn_norm_gain.clone()),
                ffn_norm_bias: tape.param(b.ffn_norm_bias.clone()),
            })
            .collect();
        TapedParams {
            element_embeddings,
            position_embeddings,
            blocks,
            head_weight: tape.param(self.head_weight.clone()),
            head_bias: tape.param(self.head_bias.clone()),
            head_norm_gain: tape.param(self.head_norm_gain.clone()),
            head_norm_bias: tape.param(self.head_norm_bias.clone()),
            entity_bias: tape.param(self.entity_bias.clone()),
        }
    }

    /// Run the encoder stack over a batch, returning the taped parameter
    /// handles and the final hidden states [B, K, D].
    pub fn encode_on_tape<R: Rng>(
        &self,
        tape: &mut Tape<E>,
        batch: &Batch,
        train: bool,
        rng: &mut R,
    ) -> Result<(TapedParams, Var)> {
        let cfg = &self.config;
        let (b, k) = (batch.size, batch.seq_len);
        let d = cfg.hidden_size;
        let heads = cfg.heads;
        let dk = d / heads;
        let rho = cfg.dropout;

        let tp = self.register(tape);
        let elements = tape.lookup(tp.element_embeddings, &batch.token_ids, &[b, k])?;
        let mut h = tape.add(elements, tp.position_embeddings)?;
        h = tape.dropout(h, rho, train, rng)?;

        // attention keep mask over keys, expanded to [B, H, K, K]
        let mut keep = Vec::with_capacity(b * heads * k * k);
        for bi in 0..b {
            let row = &batch.real[bi * k..(bi + 1) * k];
            for _ in 0..heads * k {
                keep.extend_from_slice(row);
            }
        }

        let scale = 1.0 / (dk as f64).sqrt();
        for block in &tp.blocks {
            let q = tape.linear(h, block.query_weight)?;
            let q = tape.add(q, block.query_bias)?;
            let kx = tape.linear(h, block.key_weight)?;
            let kx = tape.add(kx, block.key_bias)?;
            let v = tape.linear(h, block.value_weight)?;
            let v = tape.add(v, block.value_bias)?;

            let q = tape.reshape(q, &[b, k, heads, dk])?;
            let q = tape.permute(q, &[0, 2, 1, 3])?;
            let kx = tape.reshape(kx, &[b, k, heads, dk])?;
            let kt = tape.permute(kx, &[0, 2, 3, 1])?;
            let v = tape.reshape(v, &[b, k, heads, dk])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;

            let scores = tape.bmm(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = tape.masked_fill(scores, &keep, E::from_f64(ATTN_MASK_FILL))?;
            let probs = tape.softmax(scores)?;
            let probs = tape.dropout(probs, rho, train, rng)?;

            let ctx = tape.bmm(probs, v)?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[b, k, d])?;
            let out = tape.linear(ctx, block.output_weight)?;
            let out = tape.add(out, block.output_bias)?;
            let out = tape.dropout(out, rho, train, rng)?;
            let res = tape.add(out, h)?;
            h = tape.layer_norm(res, block.attn_norm_gain, block.attn_norm_bias)?;

            let f = tape.linear(h, block.ffn_in_weight)?;
            let f = tape.add(f, block.ffn_in_bias)?;
            let f = tape.gelu(f)?;
            let f = tape.linear(f, block.ffn_out_weight)?;
            let f = tape.add(f, block.ffn_out_bias)?;
            let f = tape.dropout(f, rho, train, rng)?;
            let res = tape.add(f, h)?;
            h = tape.layer_norm(res, block.ffn_norm_gain, block.ffn_norm_bias)?;
        }
        Ok((tp, h))
    }

    /// Prediction head over the hidden state at each instance's mask slot:
    /// dense + GELU + layer norm, then logits through the tied entity
    /// embedding rows plus the free entity bias, then softmax.
    pub fn head_on_tape(
        &self,
        tape: &mut Tape<E>,
        tp: &TapedParams,
        hidden: Var,
        batch: &Batch,
    ) -> Result<Var> {
        let z = tape.gather_rows(hidden, &batch.mask_rows)?;
        let z = tape.linear(z, tp.head_weight)?;
        let z = tape.add(z, tp.head_bias)?;
        let z = tape.gelu(z)?;
        let z = tape.layer_norm(z, tp.head_norm_gain, tp.head_norm_bias)?;
        let logits = tape.tied_logits(z, tp.element_embeddings, self.config.entity_count)?;
        let logits = tape.add(logits, tp.entity_bias)?;
        tape.softmax(logits)
    }

    /// Full training-path forward: probabilities and the label-smoothed
    /// loss. Returns the tape (backward-ready), the loss var, and the
    /// probabilities var.
    pub fn forward_loss<R: Rng>(
        &self,
        instances: &[&SequenceInstance],
        train: bool,
        rng: &mut R,
    ) -> Result<(Tape<E>, Var, Var)> {
        let batch = build_batch(instances, &self.config)?;
        let mut tape = Tape::new();
        let (tp, hidden) = self.encode_on_tape(&mut tape, &batch, train, rng)?;
        let probs = self.head_on_tape(&mut tape, &tp, hidden, &batch)?;
        let loss = tape.smoothed_nll(probs, &batch.targets, self.config.label_smoothing)?;
        Ok((tape, loss, probs))
    }

    /// Evaluation-mode probability distributions over entities, one row per
    /// instance. Rows sum to one.
    pub fn predict(&self, instances: &[&SequenceInstance]) -> Result<Tensor<E>> {
        let batch = build_batch(instances, &self.config)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode draws nothing
        let (tp, hidden) = self.encode_on_tape(&mut tape, &batch, false, &mut rng)?;
        let probs = self.head_on_tape(&mut tape, &tp, hidden, &batch)?;
        Ok(tape.value(probs).clone())
    }

    /// Final hidden states of *unmasked* sequences, for embedding export:
    /// h^L as [B, K, D] plus the real length of each sequence.
    pub fn contextual_embeddings(&self, sequences: &[Vec<TokenId>]) -> Result<(Tensor<E>, Vec<usize>)> {
        let cfg = &self.config;
        let k = cfg.max_seq_len;
        let b = sequences.len();
        if b == 0 {
            return Err(CokeError::Config("no sequences to encode".into()));
        }
        let mut token_ids = Vec::with_capacity(b * k);
        let mut real = Vec::with_capacity(b * k);
        let mut lens = Vec::with_capacity(b);
        for seq in sequences {
            let n = seq.len();
            if n < 3 || n % 2 == 0 || n > k {
                return Err(CokeError::Config(format!(
                    "sequence length {n} invalid for maximum {k}"
                )));
            }
            for (i, &id) in seq.iter().enumerate() {
                let end = i == 0 || i == n - 1;
                if end && !cfg.is_entity(id) || !end && !cfg.is_relation(id) {
                    return Err(CokeError::UnknownId(id));
                }
            }
            token_ids.extend_from_slice(seq);
            token_ids.extend(std::iter::repeat_n(cfg.pad_id(), k - n));
            real.extend(std::iter::repeat_n(true, n));
            real.extend(std::iter::repeat_n(false, k - n));
            lens.push(n);
        }
        let batch = Batch {
            size: b,
            seq_len: k,
            token_ids,
            real,
            mask_rows: vec![0; b],
            targets: vec![0; b],
        };
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, hidden) = self.encode_on_tape(&mut tape, &batch, false, &mut rng)?;
        Ok((tape.value(hidden).clone(), lens))
    }
}
