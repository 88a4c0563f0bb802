use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dafe::{DomainId, FeatureEmbeddingTable, TaskId};
use crate::data::{Batch, TokenGrid, PAD};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::{AttnMask, Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor, LAYER_NORM_EPS};
use crate::scalar::Scalar;
use crate::seed;

/// Sinusoidal positions: `pe[p][2i] = sin(p / 10000^(2i/d))`,
/// `pe[p][2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(seq_len: usize, d: usize, max_len: usize) -> Result<Tensor<T>> {
    if seq_len > max_len {
        return Err(Error::Length {
            len: seq_len,
            max: max_len,
        });
    }
    let mut values = Vec::with_capacity(seq_len * d);
    for p in 0..seq_len {
        for j in 0..d {
            let i2 = (j - j % 2) as f64;
            let angle = p as f64 / 10000f64.powf(i2 / d as f64);
            values.push(T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![seq_len, d], values)
}

/// Which way a model translates; recorded so back-translation can refuse a
/// forward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::Format(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub direction: Direction,
    pub trained: bool,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            direction: Direction::Forward,
            trained: false,
        }
    }
}

enum Init {
    Uniform(f64),
    Zeros,
    Ones,
}

/// Declares parameters either by creating them (fresh model) or by looking
/// them up (checkpoint), so both paths share one layout.
enum Declare<'a, T> {
    Create(&'a mut ParamStore<T>, ChaCha8Rng),
    Bind(&'a ParamStore<T>),
}

impl<T: Scalar> Declare<'_, T> {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> Result<ParamId> {
        match self {
            Declare::Create(store, rng) => {
                let n: usize = shape.iter().product();
                let values = match init {
                    Init::Uniform(b) => (0..n).map(|_| T::of(rng.gen_range(-b..b))).collect(),
                    Init::Zeros => vec![T::zero(); n],
                    Init::Ones => vec![T::one(); n],
                };
                store.add(name, ParamGroup::Base, Tensor::new(shape, values)?)
            }
            Declare::Bind(store) => {
                let pid = store
                    .lookup(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))?;
                let p = store.get(pid);
                if p.tensor().shape() != shape.as_slice() || p.group() != &ParamGroup::Base {
                    return Err(Error::Format(format!(
                        "`{name}` has shape {:?} / group {}, expected {shape:?} / base",
                        p.tensor().shape(),
                        p.group()
                    )));
                }
                Ok(pid)
            }
        }
    }
}

/// `x · w + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    fn declare<T: Scalar>(d: &mut Declare<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Linear {
            weight: d.param(format!("{name}.w"), vec![fan_in, fan_out], Init::Uniform(bound))?,
            bias: d.param(format!("{name}.b"), vec![1, fan_out], Init::Zeros)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.affine(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    fn declare<T: Scalar>(d: &mut Declare<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: d.param(format!("{name}.g"), vec![1, dim], Init::Ones)?,
            bias: d.param(format!("{name}.b"), vec![1, dim], Init::Zeros)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Projections around the fused scaled dot-product attention kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    fn declare<T: Scalar>(d: &mut Declare<'_, T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            query: Linear::declare(d, &format!("{name}.q"), dim, dim)?,
            key: Linear::declare(d, &format!("{name}.k"), dim, dim)?,
            value: Linear::declare(d, &format!("{name}.v"), dim, dim)?,
            output: Linear::declare(d, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    /// Creates a standalone attention block with fresh base parameters.
    pub fn create<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut d = Declare::Create(store, seed::rng(seed, "init", 0));
        Self::declare(&mut d, name, dim, heads)
    }

    /// Per head, `softmax_masked(q·kᵀ/√(d/heads))·v`; heads concatenated and
    /// projected.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: NodeId,
        keys_values: NodeId,
        mask: Rc<AttnMask>,
    ) -> Result<NodeId> {
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, keys_values)?;
        let v = self.value.forward(g, store, keys_values)?;
        let heads = g.attention(q, k, v, self.heads, mask)?;
        self.output.forward(g, store, heads)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BaseNetwork {
    token_embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    output: Linear,
}

impl BaseNetwork {
    fn declare<T: Scalar>(d: &mut Declare<'_, T>, c: &ModelConfig) -> Result<Self> {
        let h = c.hidden_size;
        let token_embedding = d.param(
            "emb.tok".into(),
            vec![c.vocab_size, h],
            Init::Uniform(1.0 / (h as f64).sqrt()),
        )?;
        let mut encoder = Vec::with_capacity(c.num_layers);
        for l in 0..c.num_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                norm_attn: LayerNorm::declare(d, &format!("{p}.ln_attn"), h)?,
                attn: MultiHeadAttention::declare(d, &format!("{p}.attn"), h, c.num_heads)?,
                norm_ff: LayerNorm::declare(d, &format!("{p}.ln_ff"), h)?,
                ff_in: Linear::declare(d, &format!("{p}.ff_in"), h, c.ff_size)?,
                ff_out: Linear::declare(d, &format!("{p}.ff_out"), c.ff_size, h)?,
            });
        }
        let encoder_norm = LayerNorm::declare(d, "enc.ln_final", h)?;
        let mut decoder = Vec::with_capacity(c.num_layers);
        for l in 0..c.num_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                norm_self: LayerNorm::declare(d, &format!("{p}.ln_self"), h)?,
                self_attn: MultiHeadAttention::declare(d, &format!("{p}.self"), h, c.num_heads)?,
                norm_cross: LayerNorm::declare(d, &format!("{p}.ln_cross"), h)?,
                cross_attn: MultiHeadAttention::declare(d, &format!("{p}.cross"), h, c.num_heads)?,
                norm_ff: LayerNorm::declare(d, &format!("{p}.ln_ff"), h)?,
                ff_in: Linear::declare(d, &format!("{p}.ff_in"), h, c.ff_size)?,
                ff_out: Linear::declare(d, &format!("{p}.ff_out"), c.ff_size, h)?,
            });
        }
        let decoder_norm = LayerNorm::declare(d, "dec.ln_final", h)?;
        let output = Linear::declare(d, "out", h, c.vocab_size)?;
        Ok(BaseNetwork {
            token_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
        })
    }
}

/// Graph handles produced by [`Seq2Seq::encode`].
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `H_e^(l)` for `l = 0..=L`, each `[batch·src_len × d]`.
    pub hidden: Vec<NodeId>,
    /// Normalised top layer, read by decoder cross-attention.
    pub memory: NodeId,
    pub src_pad: Vec<bool>,
    pub batch: usize,
    pub src_len: usize,
}

/// Encoder hidden states of one sentence, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<T> {
    /// `[seq × d]` per layer index `0..=L`.
    pub hidden: Vec<Tensor<T>>,
    /// `true` at real (non-padding) positions.
    pub src_mask: Vec<bool>,
}

/// Transformer encoder-decoder with optional feature-embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    base: BaseNetwork,
    dafe: Option<FeatureEmbeddingTable>,
    positions: Tensor<T>,
    pub meta: ModelMeta,
}

pub type Dropout<'a> = Option<&'a mut ChaCha8Rng>;

impl<T: Scalar> Seq2Seq<T> {
    /// Plain model with no feature embeddings.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let base = {
            let mut d = Declare::Create(&mut store, seed::rng(seed, "init", 0));
            BaseNetwork::declare(&mut d, &config)?
        };
        let positions = positional_encoding(config.max_len, config.hidden_size, config.max_len)?;
        Ok(Seq2Seq {
            config,
            store,
            base,
            dafe: None,
            positions,
            meta: ModelMeta::default(),
        })
    }

    /// Same base network as [`Seq2Seq::new`] with the same seed, plus
    /// zero-initialised domain and task vectors.
    pub fn with_dafe(config: ModelConfig, seed: u64, domains: &[DomainId], tasks: &[TaskId]) -> Result<Self> {
        let mut model = Self::new(config, seed)?;
        let table = FeatureEmbeddingTable::new(
            &mut model.store,
            model.config.num_layers,
            model.config.hidden_size,
            domains,
            tasks,
        )?;
        model.dafe = Some(table);
        Ok(model)
    }

    /// Rebuilds a model around an existing parameter store.
    pub fn from_store(
        config: ModelConfig,
        store: ParamStore<T>,
        dafe: Option<(&[DomainId], &[TaskId])>,
        meta: ModelMeta,
    ) -> Result<Self> {
        config.validate()?;
        let base = BaseNetwork::declare(&mut Declare::Bind(&store), &config)?;
        let dafe = match dafe {
            Some((domains, tasks)) => Some(FeatureEmbeddingTable::bind(
                &store,
                config.num_layers,
                config.hidden_size,
                domains,
                tasks,
            )?),
            None => None,
        };
        let positions = positional_encoding(config.max_len, config.hidden_size, config.max_len)?;
        Ok(Seq2Seq {
            config,
            store,
            base,
            dafe,
            positions,
            meta,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn dafe(&self) -> Option<&FeatureEmbeddingTable> {
        self.dafe.as_ref()
    }

    pub fn output_projection(&self) -> Linear {
        self.base.output
    }

    pub fn token_embedding(&self) -> ParamId {
        self.base.token_embedding
    }

    pub fn register_domain(&mut self, domain: DomainId) -> Result<()> {
        let table = self
            .dafe
            .as_mut()
            .ok_or_else(|| Error::Usage("model has no feature-embedding table".into()))?;
        table.register_domain(&mut self.store, domain)
    }

    /// Scalar count of the shared base network.
    pub fn base_parameter_count(&self) -> usize {
        self.store.group_size(&ParamGroup::Base)
    }

    fn check_ids(&self, grid: &TokenGrid) -> Result<()> {
        if grid.len > self.config.max_len {
            return Err(Error::Length {
                len: grid.len,
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = grid.ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Lookup(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn compose(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        domain: &DomainId,
        task: TaskId,
        layer: usize,
    ) -> Result<NodeId> {
        match &self.dafe {
            Some(table) => table.compose(g, &self.store, x, domain, task, layer),
            None => Ok(x),
        }
    }

    fn embed(&self, g: &mut Graph<T>, grid: &TokenGrid, dropout: &mut Dropout<'_>) -> Result<NodeId> {
        let d = self.config.hidden_size;
        let table = g.param(&self.store, self.base.token_embedding);
        let tokens = g.gather(table, &grid.ids)?;
        let scaled = g.scale(tokens, T::of((d as f64).sqrt()));
        let mut pe = Vec::with_capacity(grid.ids.len() * d);
        for _ in 0..grid.batch {
            pe.extend_from_slice(&self.positions.values()[..grid.len * d]);
        }
        let pe = g.input(Tensor::new(vec![grid.batch * grid.len, d], pe)?);
        let x = g.add(scaled, pe)?;
        Ok(self.drop(g, x, dropout))
    }

    fn drop(&self, g: &mut Graph<T>, x: NodeId, dropout: &mut Dropout<'_>) -> NodeId {
        match dropout.as_deref_mut() {
            Some(rng) => g.dropout(x, self.config.dropout, rng),
            None => x,
        }
    }

    fn feed_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        ff_in: &Linear,
        ff_out: &Linear,
    ) -> Result<NodeId> {
        let h = ff_in.forward(g, &self.store, x)?;
        let h = g.relu(h);
        ff_out.forward(g, &self.store, h)
    }

    /// Pre-norm encoder; each layer output (and the embedding layer) passes
    /// through the feature-embedding composition when a table is present.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        src: &TokenGrid,
        domain: &DomainId,
        task: TaskId,
        mut dropout: Dropout<'_>,
    ) -> Result<EncoderOutput> {
        self.check_ids(src)?;
        let src_pad = src.pad_mask();
        let mask = Rc::new(AttnMask::padding(&src_pad, src.batch, src.len, src.len));
        let x = self.embed(g, src, &mut dropout)?;
        let mut h = self.compose(g, x, domain, task, 0)?;
        let mut hidden = vec![h];
        for (l, layer) in self.base.encoder.iter().enumerate() {
            let a = layer.norm_attn.forward(g, &self.store, h)?;
            let a = layer.attn.forward(g, &self.store, a, a, mask.clone())?;
            let a = self.drop(g, a, &mut dropout);
            let h1 = g.add(h, a)?;
            let f = layer.norm_ff.forward(g, &self.store, h1)?;
            let f = self.feed_forward(g, f, &layer.ff_in, &layer.ff_out)?;
            let f = self.drop(g, f, &mut dropout);
            let h2 = g.add(h1, f)?;
            h = self.compose(g, h2, domain, task, l + 1)?;
            hidden.push(h);
        }
        let memory = self.base.encoder_norm.forward(g, &self.store, h)?;
        Ok(EncoderOutput {
            hidden,
            memory,
            src_pad,
            batch: src.batch,
            src_len: src.len,
        })
    }

    /// Vocabulary logits `[batch·t × V]` for every prefix position.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        enc: &EncoderOutput,
        tgt_in: &TokenGrid,
        mut dropout: Dropout<'_>,
    ) -> Result<NodeId> {
        self.check_ids(tgt_in)?;
        if tgt_in.batch != enc.batch {
            return Err(Error::Dimension {
                op: "decode",
                left: vec![enc.batch, enc.src_len],
                right: vec![tgt_in.batch, tgt_in.len],
            });
        }
        let tgt_pad = tgt_in.pad_mask();
        let self_mask = Rc::new(AttnMask::causal(&tgt_pad, tgt_in.batch, tgt_in.len));
        let cross_mask = Rc::new(AttnMask::padding(
            &enc.src_pad,
            enc.batch,
            tgt_in.len,
            enc.src_len,
        ));
        let mut x = self.embed(g, tgt_in, &mut dropout)?;
        for layer in &self.base.decoder {
            let a = layer.norm_self.forward(g, &self.store, x)?;
            let a = layer.self_attn.forward(g, &self.store, a, a, self_mask.clone())?;
            let a = self.drop(g, a, &mut dropout);
            x = g.add(x, a)?;
            let c = layer.norm_cross.forward(g, &self.store, x)?;
            let c = layer
                .cross_attn
                .forward(g, &self.store, c, enc.memory, cross_mask.clone())?;
            let c = self.drop(g, c, &mut dropout);
            x = g.add(x, c)?;
            let f = layer.norm_ff.forward(g, &self.store, x)?;
            let f = self.feed_forward(g, f, &layer.ff_in, &layer.ff_out)?;
            let f = self.drop(g, f, &mut dropout);
            x = g.add(x, f)?;
        }
        let x = self.base.decoder_norm.forward(g, &self.store, x)?;
        self.base.output.forward(g, &self.store, x)
    }

    /// Mean token cross-entropy of `batch` under `(domain, task)`.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        batch: &Batch,
        domain: &DomainId,
        task: TaskId,
        mut dropout: Dropout<'_>,
    ) -> Result<NodeId> {
        let enc = self.encode(g, &batch.src, domain, task, dropout.as_deref_mut())?;
        let logits = self.decode(g, &enc, &batch.tgt_in, dropout)?;
        g.cross_entropy(logits, &batch.tgt_out.ids, PAD)
    }

    /// Encoder states for a single sentence.
    pub fn encode_sentence(&self, src: &[usize], domain: &DomainId, task: TaskId) -> Result<EncoderState<T>> {
        if src.is_empty() {
            return Err(Error::EmptyInput("empty source sentence".into()));
        }
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &TokenGrid::from_rows(&[src]), domain, task, None)?;
        Ok(EncoderState {
            hidden: enc.hidden.iter().map(|&h| g.value(h).clone()).collect(),
            src_mask: enc.src_pad.iter().map(|p| !p).collect(),
        })
    }

    /// Logits `[prefix.len() × V]` for one sentence pair.
    pub fn logits(&self, src: &[usize], prefix: &[usize], domain: &DomainId, task: TaskId) -> Result<Tensor<T>> {
        if src.is_empty() || prefix.is_empty() {
            return Err(Error::EmptyInput("source and prefix must be non-empty".into()));
        }
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &TokenGrid::from_rows(&[src]), domain, task, None)?;
        let out = self.decode(&mut g, &enc, &TokenGrid::from_rows(&[prefix]), None)?;
        Ok(g.value(out).clone())
    }
}
