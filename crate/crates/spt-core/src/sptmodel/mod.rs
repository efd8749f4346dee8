//! The spectral point transformer and its ablation variants.
//!
//! The network embeds each spectral point with a two-layer MLP (no
//! positional encoding), runs pre-norm transformer blocks whose attention
//! optionally RMS-normalizes per-head query and key rows, concatenates the
//! embedding output with every block output, pools with column-wise max and
//! mean, and regresses the wave height with a two-layer head.
//!
//! Variants: offset attention (difference features through a
//! linear-norm-ReLU map), 1-D convolution embedding over the power-sorted
//! sequence, batch normalization in place of layer normalization, and a
//! naive point transformer that embeds power and coordinates separately and
//! regresses from a class token.

mod checkpoint;
mod profile;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use profile::{flop_estimate, flop_estimate_g, param_count};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, SptError};
use crate::numcore::{concat_cols, concat_rows, Array, Real, Tape, Var};
pub use crate::spectral::FeatureSubset;

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const RMSNORM_EPS: f64 = 1e-6;
pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Spt,
    Npt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionType {
    Residual,
    Offset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingType {
    Mlp,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormType {
    Layer,
    Batch,
}

macro_rules! str_enum {
    ($ty:ident, $(($variant:ident, $name:literal)),+) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(SptError::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(Variant, (Spt, "spt"), (Npt, "npt"));
str_enum!(AttentionType, (Residual, "residual"), (Offset, "offset"));
str_enum!(EmbeddingType, (Mlp, "mlp"), (Conv, "conv"));
str_enum!(NormType, (Layer, "layer"), (Batch, "batch"));

/// Architecture hyper-parameters `[N, heads, d, blocks]` plus variant flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_points: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub blocks: usize,
    pub features: FeatureSubset,
    pub attention: AttentionType,
    pub qk_norm: bool,
    pub embedding: EmbeddingType,
    pub norm: NormType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::spt_default()
    }
}

impl ModelConfig {
    /// The reference configuration `[512, 8, 128, 2]`.
    pub fn spt_default() -> Self {
        Self {
            variant: Variant::Spt,
            n_points: 512,
            heads: 8,
            embed_dim: 128,
            blocks: 2,
            features: FeatureSubset::Full,
            attention: AttentionType::Residual,
            qk_norm: true,
            embedding: EmbeddingType::Mlp,
            norm: NormType::Layer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.blocks == 0 || self.heads == 0 {
            return Err(SptError::Config(
                "n_points, heads and blocks must be positive".into(),
            ));
        }
        if self.embed_dim % 2 != 0 || self.embed_dim % self.heads != 0 {
            return Err(SptError::Config(format!(
                "embed_dim {} must be divisible by 2 and by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.variant == Variant::Npt && self.features != FeatureSubset::Full {
            return Err(SptError::Config(
                "the naive point transformer requires the full feature set".into(),
            ));
        }
        Ok(())
    }

    /// Stable textual identity, used as an ablation cache key.
    pub fn canonical_key(&self) -> String {
        format!(
            "{:?}-n{}-h{}-d{}-m{}-{}-{:?}-qk{}-{:?}-{:?}",
            self.variant,
            self.n_points,
            self.heads,
            self.embed_dim,
            self.blocks,
            self.features.as_str(),
            self.attention,
            self.qk_norm,
            self.embedding,
            self.norm
        )
    }
}

/// Index of one named parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

struct ParamEntry<T: Real> {
    name: String,
    value: Array<T>,
    trainable: bool,
}

/// Ordered, named parameter storage (trainable weights plus normalization
/// buffers).
pub struct ParamSet<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamSet<T> {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn add(&mut self, name: String, value: Array<T>, trainable: bool) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Array<T>) {
        debug_assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Total trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

#[derive(Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy)]
struct NormIds {
    gain: ParamId,
    shift: ParamId,
    run_mean: Option<ParamId>,
    run_var: Option<ParamId>,
}

#[derive(Clone, Copy)]
struct LayerUnitIds {
    lin: LinearIds,
    norm: NormIds,
}

#[derive(Clone, Copy)]
struct ConvUnitIds {
    w: ParamId,
    b: ParamId,
    norm: NormIds,
}

#[derive(Clone, Copy)]
enum EmbeddingIds {
    Mlp { l1: LayerUnitIds, l2: LayerUnitIds },
    Conv { c1: ConvUnitIds, c2: ConvUnitIds },
}

#[derive(Clone, Copy)]
struct BlockIds {
    /// Pre-attention norm; absent for offset attention.
    norm1: Option<NormIds>,
    qkv: LinearIds,
    /// Output projection for residual attention, the LBR map for offset.
    proj: LinearIds,
    lbr_norm: Option<NormIds>,
    norm2: NormIds,
    ffn1: LinearIds,
    ffn2: LinearIds,
}

#[derive(Clone, Copy)]
struct HeadIds {
    l1: LinearIds,
    norm: NormIds,
    l2: LinearIds,
}

#[derive(Clone)]
enum ModelIds {
    Spt {
        embed: EmbeddingIds,
        blocks: Vec<BlockIds>,
        head: HeadIds,
    },
    Npt {
        power: LinearIds,
        pos1: LayerUnitIds,
        pos2: LayerUnitIds,
        class: ParamId,
        blocks: Vec<BlockIds>,
        head: HeadIds,
    },
}

/// Named intermediates of one sample's forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTrace<T: Real> {
    /// `f0..fM`, each `N x d`.
    pub f_maps: Vec<Array<T>>,
    /// Column concatenation of the maps, `N x (M+1)d`.
    pub fc: Array<T>,
    /// Column-wise maximum, `1 x (M+1)d`.
    pub fm: Array<T>,
    /// Column-wise mean, `1 x (M+1)d`.
    pub fa: Array<T>,
    /// `[fm | fa]`, `1 x 2(M+1)d`.
    pub fg: Array<T>,
    pub prediction: f64,
}

/// Options for one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Training mode (batch-norm uses batch statistics and emits running
    /// updates).
    pub training: bool,
    /// Capture per-sample activation traces and QK-norm diagnostics.
    pub capture_trace: bool,
}

/// Result of a batched forward pass.
pub struct BatchForward<T: Real> {
    /// `B x 1` predictions on the tape.
    pub preds: Var<T>,
    /// Per-sample traces when requested (SPT variants only).
    pub traces: Vec<ActivationTrace<T>>,
    /// Fresh batch-norm running statistics to commit after the step.
    pub buffer_updates: Vec<(ParamId, Array<T>)>,
    /// Parameters bound on the tape during this pass, for gradient lookup.
    pub bound: Vec<(ParamId, Var<T>)>,
    /// Largest `|RMS - 1|` over normalized per-head Q/K rows (captured
    /// passes with qk_norm only).
    pub qk_rms_max_dev: f64,
}

struct Ctx<'a, T: Real> {
    tape: &'a Tape<T>,
    set: &'a ParamSet<T>,
    norm_type: NormType,
    training: bool,
    capture: bool,
    bound: Vec<Option<Var<T>>>,
    updates: Vec<(ParamId, Array<T>)>,
    qk_dev: f64,
}

impl<T: Real> Ctx<'_, T> {
    fn var(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = &self.bound[id.0] {
            return v.clone();
        }
        let v = self.tape.leaf(self.set.value(id).clone());
        self.bound[id.0] = Some(v.clone());
        v
    }

    fn linear(&mut self, x: &Var<T>, ids: &LinearIds) -> Result<Var<T>> {
        let w = self.var(ids.w);
        let b = self.var(ids.b);
        x.matmul(&w)?.add_bias(&b)
    }

    fn norm(&mut self, x: &Var<T>, ids: &NormIds) -> Result<Var<T>> {
        let gain = self.var(ids.gain);
        let shift = self.var(ids.shift);
        match self.norm_type {
            NormType::Layer => x.layernorm(&gain, &shift, LAYERNORM_EPS),
            NormType::Batch => {
                let rm = self.set.value(ids.run_mean.expect("bn buffers")).clone();
                let rv = self.set.value(ids.run_var.expect("bn buffers")).clone();
                let (y, update) = x.batchnorm(
                    &gain,
                    &shift,
                    &rm,
                    &rv,
                    self.training,
                    BATCHNORM_MOMENTUM,
                    BATCHNORM_EPS,
                )?;
                if let Some((nm, nv)) = update {
                    self.updates.push((ids.run_mean.unwrap(), nm));
                    self.updates.push((ids.run_var.unwrap(), nv));
                }
                Ok(y)
            }
        }
    }

    /// LayerNorm regardless of the configured norm type (block pre-norms
    /// keep their own parameters even in batch-norm models).
    fn layer_norm(&mut self, x: &Var<T>, ids: &NormIds) -> Result<Var<T>> {
        let gain = self.var(ids.gain);
        let shift = self.var(ids.shift);
        x.layernorm(&gain, &shift, LAYERNORM_EPS)
    }

    /// `SiLU(norm(Linear(x)))` of the embedding and head stacks.
    fn layer_unit(&mut self, x: &Var<T>, ids: &LayerUnitIds) -> Result<Var<T>> {
        let lin = self.linear(x, &ids.lin)?;
        self.norm(&lin, &ids.norm)?.silu()
    }

    fn conv_unit(&mut self, x: &Var<T>, ids: &ConvUnitIds) -> Result<Var<T>> {
        let w = self.var(ids.w);
        let b = self.var(ids.b);
        let conv = x.conv1d3(&w, &b)?;
        self.norm(&conv, &ids.norm)?.relu()
    }

    fn record_qk_dev(&mut self, q: &Var<T>, heads: usize) {
        if !self.capture {
            return;
        }
        let v = q.value();
        let w = v.last_dim() / heads;
        for seg in v.data().chunks_exact(w) {
            let ms: f64 = seg.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>() / w as f64;
            if ms > 1e-30 {
                let dev = (ms.sqrt() - 1.0).abs();
                if dev > self.qk_dev {
                    self.qk_dev = dev;
                }
            }
        }
    }

    /// Multi-head scaled dot-product attention over per-sample row ranges
    /// of a packed `(B*L) x 3d` QKV matrix. Returns the packed `(B*L) x d`
    /// head concatenation (no output projection).
    fn scaled_attention(
        &mut self,
        qkv: &Var<T>,
        batch: usize,
        seq_len: usize,
        heads: usize,
        d: usize,
        qk_norm: bool,
    ) -> Result<Var<T>> {
        let dh = d / heads;
        let mut q = qkv.slice_cols(0, d)?;
        let mut k = qkv.slice_cols(d, 2 * d)?;
        let v = qkv.slice_cols(2 * d, 3 * d)?;
        if qk_norm {
            q = q.rmsnorm_segments(heads, RMSNORM_EPS)?;
            k = k.rmsnorm_segments(heads, RMSNORM_EPS)?;
            self.record_qk_dev(&q, heads);
            self.record_qk_dev(&k, heads);
        }
        let q = q.scale(T::from_f64(1.0 / (dh as f64).sqrt()))?;
        let mut sample_outs = Vec::with_capacity(batch);
        for s in 0..batch {
            let qs = q.slice_rows(s * seq_len, seq_len)?;
            let ks = k.slice_rows(s * seq_len, seq_len)?;
            let vs = v.slice_rows(s * seq_len, seq_len)?;
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = qs.slice_cols(h * dh, (h + 1) * dh)?;
                let kh = ks.slice_cols(h * dh, (h + 1) * dh)?;
                let vh = vs.slice_cols(h * dh, (h + 1) * dh)?;
                let weights = qh.matmul_nt(&kh)?.softmax_rows()?;
                head_outs.push(weights.matmul(&vh)?);
            }
            sample_outs.push(concat_cols(&head_outs)?);
        }
        concat_rows(&sample_outs)
    }

    /// One transformer block on the packed representation.
    #[allow(clippy::too_many_arguments)]
    fn transformer_block(
        &mut self,
        x: &Var<T>,
        ids: &BlockIds,
        batch: usize,
        seq_len: usize,
        heads: usize,
        d: usize,
        qk_norm: bool,
        attention: AttentionType,
    ) -> Result<Var<T>> {
        let attended = match attention {
            AttentionType::Residual => {
                let pre = self.layer_norm(x, &ids.norm1.expect("residual pre-norm"))?;
                let qkv = self.linear(&pre, &ids.qkv)?;
                let sa = self.scaled_attention(&qkv, batch, seq_len, heads, d, qk_norm)?;
                let projected = self.linear(&sa, &ids.proj)?;
                x.add(&projected)?
            }
            AttentionType::Offset => {
                // x + LBR(x - Sa(Proj(x))); the LBR linear doubles as the
                // block's projection.
                let qkv = self.linear(x, &ids.qkv)?;
                let sa = self.scaled_attention(&qkv, batch, seq_len, heads, d, qk_norm)?;
                let offset = x.sub(&sa)?;
                let lin = self.linear(&offset, &ids.proj)?;
                let lbr = self.norm(&lin, &ids.lbr_norm.expect("lbr norm"))?.relu()?;
                x.add(&lbr)?
            }
        };
        let pre2 = self.layer_norm(&attended, &ids.norm2)?;
        let f = self.linear(&pre2, &ids.ffn1)?.silu()?;
        let f = self.linear(&f, &ids.ffn2)?;
        attended.add(&f)
    }
}

fn xavier<T: Real>(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Array<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Array::from_vec(shape, data).expect("xavier shape")
}

struct Builder<'s, T: Real> {
    set: &'s mut ParamSet<T>,
    rng: ChaCha12Rng,
    norm_type: NormType,
}

impl<T: Real> Builder<'_, T> {
    fn linear(&mut self, name: &str, i: usize, o: usize) -> LinearIds {
        let w = self.set.add(
            format!("{name}.w"),
            xavier(&mut self.rng, i, o, vec![i, o]),
            true,
        );
        let b = self
            .set
            .add(format!("{name}.b"), Array::zeros(vec![1, o]), true);
        LinearIds { w, b }
    }

    /// Norm parameters following the configured norm type (buffers only for
    /// batch norm).
    fn norm(&mut self, name: &str, w: usize) -> NormIds {
        let mut ids = self.plain_norm(name, w);
        if self.norm_type == NormType::Batch {
            ids.run_mean = Some(self.set.add(
                format!("{name}.run_mean"),
                Array::zeros(vec![1, w]),
                false,
            ));
            ids.run_var = Some(self.set.add(
                format!("{name}.run_var"),
                Array::full(vec![1, w], T::ONE),
                false,
            ));
        }
        ids
    }

    /// Plain LayerNorm parameters regardless of the configured norm type.
    fn plain_norm(&mut self, name: &str, w: usize) -> NormIds {
        let gain = self
            .set
            .add(format!("{name}.gain"), Array::full(vec![1, w], T::ONE), true);
        let shift = self
            .set
            .add(format!("{name}.shift"), Array::zeros(vec![1, w]), true);
        NormIds {
            gain,
            shift,
            run_mean: None,
            run_var: None,
        }
    }

    fn layer_unit(&mut self, name: &str, i: usize, o: usize) -> LayerUnitIds {
        let lin = self.linear(&format!("{name}.lin"), i, o);
        let norm = self.norm(&format!("{name}.norm"), o);
        LayerUnitIds { lin, norm }
    }

    fn conv_unit(&mut self, name: &str, i: usize, o: usize) -> ConvUnitIds {
        let w = self.set.add(
            format!("{name}.w"),
            xavier(&mut self.rng, i * 3, o * 3, vec![o, i, 3]),
            true,
        );
        let b = self
            .set
            .add(format!("{name}.b"), Array::zeros(vec![1, o]), true);
        let norm = self.norm(&format!("{name}.norm"), o);
        ConvUnitIds { w, b, norm }
    }

    fn block(&mut self, name: &str, d: usize, attention: AttentionType) -> BlockIds {
        let norm1 = match attention {
            AttentionType::Residual => Some(self.plain_norm(&format!("{name}.norm1"), d)),
            AttentionType::Offset => None,
        };
        let qkv = self.linear(&format!("{name}.qkv"), d, 3 * d);
        let proj = self.linear(&format!("{name}.proj"), d, d);
        let lbr_norm = match attention {
            AttentionType::Offset => Some(self.norm(&format!("{name}.lbr_norm"), d)),
            AttentionType::Residual => None,
        };
        let norm2 = self.plain_norm(&format!("{name}.norm2"), d);
        let ffn1 = self.linear(&format!("{name}.ffn1"), d, 4 * d);
        let ffn2 = self.linear(&format!("{name}.ffn2"), 4 * d, d);
        BlockIds {
            norm1,
            qkv,
            proj,
            lbr_norm,
            norm2,
            ffn1,
            ffn2,
        }
    }
}

/// The model: configuration plus named parameters.
pub struct SptModel<T: Real> {
    pub config: ModelConfig,
    params: ParamSet<T>,
    ids: ModelIds,
}

impl<T: Real> SptModel<T> {
    /// Builds a model with Xavier-uniform weights, zero biases and shifts,
    /// unit gains; deterministic for a fixed seed.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let c = config.features.width();
        let m = config.blocks;
        let mut params = ParamSet::new();
        let mut b = Builder {
            set: &mut params,
            rng: ChaCha12Rng::seed_from_u64(init_seed),
            norm_type: config.norm,
        };
        let ids = match config.variant {
            Variant::Spt => {
                let embed = match config.embedding {
                    EmbeddingType::Mlp => EmbeddingIds::Mlp {
                        l1: b.layer_unit("embed.l1", c, d / 2),
                        l2: b.layer_unit("embed.l2", d / 2, d),
                    },
                    EmbeddingType::Conv => EmbeddingIds::Conv {
                        c1: b.conv_unit("embed.c1", c, d / 2),
                        c2: b.conv_unit("embed.c2", d / 2, d),
                    },
                };
                let blocks = (0..m)
                    .map(|i| b.block(&format!("blocks.{i}"), d, config.attention))
                    .collect();
                let dh = (m + 1) * d;
                let head = HeadIds {
                    l1: b.linear("head.l1", 2 * dh, dh),
                    norm: b.norm("head.norm", dh),
                    l2: b.linear("head.l2", dh, 1),
                };
                ModelIds::Spt {
                    embed,
                    blocks,
                    head,
                }
            }
            Variant::Npt => {
                let h = profile::npt_pos_hidden(d);
                let power = b.linear("npt.power", 1, d);
                let pos1 = b.layer_unit("npt.pos1", 4, h);
                let pos2 = b.layer_unit("npt.pos2", h, d);
                let class = b
                    .set
                    .add("npt.class".into(), Array::zeros(vec![1, d]), true);
                let blocks = (0..m)
                    .map(|i| b.block(&format!("blocks.{i}"), d, AttentionType::Residual))
                    .collect();
                let head = HeadIds {
                    l1: b.linear("head.l1", d, d / 2),
                    norm: b.norm("head.norm", d / 2),
                    l2: b.linear("head.l2", d / 2, 1),
                };
                ModelIds::Npt {
                    power,
                    pos1,
                    pos2,
                    class,
                    blocks,
                    head,
                }
            }
        };
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Instantiated trainable scalar count.
    pub fn num_params(&self) -> usize {
        self.params.trainable_scalars()
    }

    /// Zeroes every trainable parameter (norm gains included).
    pub fn zero_params(&mut self) {
        self.zero_params_matching("");
    }

    /// Zeroes trainable parameters whose name starts with `prefix`.
    pub fn zero_params_matching(&mut self, prefix: &str) {
        for e in self.params.entries.iter_mut() {
            if e.trainable && e.name.starts_with(prefix) {
                e.value = Array::zeros(e.value.shape().to_vec());
            }
        }
    }

    pub fn cast<U: Real>(&self) -> SptModel<U> {
        let mut params = ParamSet::new();
        for e in &self.params.entries {
            params.add(e.name.clone(), e.value.cast::<U>(), e.trainable);
        }
        SptModel {
            config: self.config.clone(),
            params,
            ids: self.ids.clone(),
        }
    }

    /// Batched forward pass over per-sample `N x c` feature matrices. Rows
    /// of all samples are packed for the row-wise stages; attention and
    /// pooling run on per-sample row ranges.
    pub fn forward_batch(
        &self,
        tape: &Tape<T>,
        features: &[Array<T>],
        opts: ForwardOptions,
    ) -> Result<BatchForward<T>> {
        let cfg = &self.config;
        let batch = features.len();
        if batch == 0 {
            return Err(SptError::invalid("forward_batch: empty batch"));
        }
        let n = cfg.n_points;
        let c = cfg.features.width();
        for f in features {
            if f.shape() != [n, c] {
                return Err(SptError::ShapeMismatch {
                    op: "forward_batch",
                    left: f.shape().to_vec(),
                    right: vec![n, c],
                });
            }
        }
        let mut packed = Vec::with_capacity(batch * n * c);
        for f in features {
            packed.extend_from_slice(f.data());
        }
        let x = tape.leaf(Array::matrix(batch * n, c, packed)?);

        let mut ctx = Ctx {
            tape,
            set: &self.params,
            norm_type: cfg.norm,
            training: opts.training,
            capture: opts.capture_trace,
            bound: vec![None; self.params.len()],
            updates: Vec::new(),
            qk_dev: 0.0,
        };

        let (preds, traces) = match &self.ids {
            ModelIds::Spt {
                embed,
                blocks,
                head,
            } => self.forward_spt(&mut ctx, &x, embed, blocks, head, batch, opts.capture_trace)?,
            ModelIds::Npt {
                power,
                pos1,
                pos2,
                class,
                blocks,
                head,
            } => self.forward_npt(&mut ctx, &x, power, pos1, pos2, *class, blocks, head, batch)?,
        };

        let bound = ctx
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|v| (ParamId(i), v.clone())))
            .collect();
        Ok(BatchForward {
            preds,
            traces,
            buffer_updates: ctx.updates,
            bound,
            qk_rms_max_dev: ctx.qk_dev,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_spt(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: &Var<T>,
        embed: &EmbeddingIds,
        blocks: &[BlockIds],
        head: &HeadIds,
        batch: usize,
        capture: bool,
    ) -> Result<(Var<T>, Vec<ActivationTrace<T>>)> {
        let cfg = &self.config;
        let n = cfg.n_points;
        let d = cfg.embed_dim;

        let f0 = match embed {
            EmbeddingIds::Mlp { l1, l2 } => {
                let h = ctx.layer_unit(x, l1)?;
                ctx.layer_unit(&h, l2)?
            }
            EmbeddingIds::Conv { c1, c2 } => {
                // Convolution mixes neighboring rows, so each sample is
                // embedded separately.
                let mut outs = Vec::with_capacity(batch);
                for s in 0..batch {
                    let xs = x.slice_rows(s * n, n)?;
                    let h = ctx.conv_unit(&xs, c1)?;
                    outs.push(ctx.conv_unit(&h, c2)?);
                }
                concat_rows(&outs)?
            }
        };

        let mut maps = Vec::with_capacity(cfg.blocks + 1);
        maps.push(f0.clone());
        let mut cur = f0;
        for ids in blocks {
            cur = ctx.transformer_block(
                &cur,
                ids,
                batch,
                n,
                cfg.heads,
                d,
                cfg.qk_norm,
                cfg.attention,
            )?;
            maps.push(cur.clone());
        }

        // Pooling per sample: fc = [f0 | .. | fM], fm/fa column max/mean,
        // fg = [fm | fa].
        let mut fg_rows = Vec::with_capacity(batch);
        let mut trace_parts: Vec<(Vec<Array<T>>, Array<T>, Array<T>, Array<T>, Array<T>)> =
            Vec::new();
        for s in 0..batch {
            let per_sample: Vec<Var<T>> = maps
                .iter()
                .map(|m| m.slice_rows(s * n, n))
                .collect::<Result<_>>()?;
            let fc = concat_cols(&per_sample)?;
            let fm = fc.reduce_max_rows()?;
            let fa = fc.reduce_mean_rows()?;
            let fg = concat_cols(&[fm.clone(), fa.clone()])?;
            if capture {
                trace_parts.push((
                    per_sample.iter().map(|v| v.value()).collect(),
                    fc.value(),
                    fm.value(),
                    fa.value(),
                    fg.value(),
                ));
            }
            fg_rows.push(fg);
        }
        let fg_all = concat_rows(&fg_rows)?;
        let h = ctx.linear(&fg_all, &head.l1)?;
        let h = ctx.norm(&h, &head.norm)?.silu()?;
        let preds = ctx.linear(&h, &head.l2)?;

        let mut traces = Vec::new();
        if capture {
            let pv = preds.value();
            for (s, (f_maps, fc, fm, fa, fg)) in trace_parts.into_iter().enumerate() {
                traces.push(ActivationTrace {
                    f_maps,
                    fc,
                    fm,
                    fa,
                    fg,
                    prediction: pv.data()[s].to_f64(),
                });
            }
        }
        Ok((preds, traces))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_npt(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: &Var<T>,
        power: &LinearIds,
        pos1: &LayerUnitIds,
        pos2: &LayerUnitIds,
        class: ParamId,
        blocks: &[BlockIds],
        head: &HeadIds,
        batch: usize,
    ) -> Result<(Var<T>, Vec<ActivationTrace<T>>)> {
        let cfg = &self.config;
        let n = cfg.n_points;
        let d = cfg.embed_dim;

        // Power is the token; [z, kx, ky, w] feed the positional module,
        // whose output is added.
        let p_col = x.slice_cols(4, 5)?;
        let tok = ctx.linear(&p_col, power)?;
        let pos_in = x.slice_cols(0, 4)?;
        let pos = ctx.layer_unit(&pos_in, pos1)?;
        let pos = ctx.layer_unit(&pos, pos2)?;
        let tok = tok.add(&pos)?;

        // Prepend the learnable class token to every sample.
        let class_var = ctx.var(class);
        let mut parts = Vec::with_capacity(2 * batch);
        for s in 0..batch {
            parts.push(class_var.clone());
            parts.push(tok.slice_rows(s * n, n)?);
        }
        let mut cur = concat_rows(&parts)?;
        let seq = n + 1;
        for ids in blocks {
            // NPT always runs standard residual attention with QK Norm on.
            cur = ctx.transformer_block(
                &cur,
                ids,
                batch,
                seq,
                cfg.heads,
                d,
                true,
                AttentionType::Residual,
            )?;
        }
        let class_rows: Vec<Var<T>> = (0..batch)
            .map(|s| cur.slice_rows(s * seq, 1))
            .collect::<Result<_>>()?;
        let cls = concat_rows(&class_rows)?;
        let h = ctx.linear(&cls, &head.l1)?;
        let h = ctx.norm(&h, &head.norm)?.silu()?;
        let preds = ctx.linear(&h, &head.l2)?;
        Ok((preds, Vec::new()))
    }

    /// Single-sample inference; returns the predicted wave height.
    pub fn predict(&self, features: &Array<T>) -> Result<f64> {
        let tape = Tape::new();
        let out = self.forward_batch(
            &tape,
            std::slice::from_ref(features),
            ForwardOptions::default(),
        )?;
        Ok(out.preds.value().data()[0].to_f64())
    }

    /// Single-sample forward capturing the activation trace.
    pub fn forward_traced(&self, features: &Array<T>) -> Result<ActivationTrace<T>> {
        let tape = Tape::new();
        let out = self.forward_batch(
            &tape,
            std::slice::from_ref(features),
            ForwardOptions {
                training: false,
                capture_trace: true,
            },
        )?;
        out.traces
            .into_iter()
            .next()
            .ok_or_else(|| SptError::invalid("trace capture is only available for SPT variants"))
    }
}
