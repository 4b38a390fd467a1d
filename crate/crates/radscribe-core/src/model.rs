//! The toy-scale vision-language pipeline: patch embedding, a frozen
//! transformer encoder, token grouping with a trainable projection bridge,
//! and a decoder-only causal language model over mixed visual/text
//! sequences.
//!
//! The encoder stays frozen by default: its features are plain (non-graph)
//! math and gradients are structurally absent. The bridge and LM run through
//! the autodiff graph during training. Generation uses an incremental
//! forward with per-layer KV caches; a test pins its logits to the graph
//! forward.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::image::NormalizedImage;
use crate::nn::{gelu, Graph, Matrix, NodeId};
use crate::rng::Rng;
use crate::tokenizer::{Special, TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input image side {got} does not match configured side {want}")]
    ImageSide { want: usize, got: usize },
    #[error("feature matrix {got_rows}x{got_cols} does not match {want_rows}x{want_cols}")]
    FeatureShape {
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error(
        "sequence length {total} exceeds maximum {max} \
         (prompt {prompt} + visual {visual} + target {target} + 3 special tokens)"
    )]
    SequenceTooLong {
        prompt: usize,
        visual: usize,
        target: usize,
        total: usize,
        max: usize,
    },
    #[error("answer mask is empty: nothing to train on")]
    EmptyAnswerMask,
    #[error("token id {0} outside embedding table")]
    BadTokenId(TokenId),
}

/// Vision encoder hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub frozen: bool,
    /// Learned positional embeddings; disabled only by equivariance tests.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_side: 448,
            patch_size: 32,
            dim: 64,
            layers: 2,
            heads: 4,
            frozen: true,
            positional: true,
        }
    }
}

/// Language model hyperparameters. `vocab_size` comes from the tokenizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 0,
            dim: 128,
            layers: 2,
            heads: 4,
            max_seq_len: 256,
        }
    }
}

/// Bridge from grouped encoder features into LM embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    /// How many consecutive feature vectors are concatenated per LM token.
    pub group: usize,
    /// One affine map by default; two with a GELU in between when set.
    pub two_layer: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            group: 4,
            two_layer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub bridge: BridgeConfig,
    pub lm: LmConfig,
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        let per_side = self.encoder.image_side / self.encoder.patch_size;
        per_side * per_side
    }

    pub fn n_visual_tokens(&self) -> usize {
        self.n_patches() / self.bridge.group
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let bad = |msg: String| Err(ModelError::Config(msg));
        if e.image_side == 0 || e.patch_size == 0 || e.image_side % e.patch_size != 0 {
            return bad(alloc::format!(
                "image side {} must be a positive multiple of patch size {}",
                e.image_side,
                e.patch_size
            ));
        }
        if e.dim == 0 || e.heads == 0 || e.dim % e.heads != 0 {
            return bad(alloc::format!(
                "encoder dim {} must be a positive multiple of heads {}",
                e.dim,
                e.heads
            ));
        }
        if self.bridge.group == 0 || self.n_patches() % self.bridge.group != 0 {
            return bad(alloc::format!(
                "patch count {} must be divisible by group size {}",
                self.n_patches(),
                self.bridge.group
            ));
        }
        let l = &self.lm;
        if l.dim == 0 || l.heads == 0 || l.dim % l.heads != 0 {
            return bad(alloc::format!(
                "lm dim {} must be a positive multiple of heads {}",
                l.dim,
                l.heads
            ));
        }
        if l.vocab_size == 0 {
            return bad("lm vocab size must be set from the tokenizer".to_string());
        }
        if l.max_seq_len <= self.n_visual_tokens() + 3 {
            return bad(alloc::format!(
                "max sequence length {} leaves no room beyond {} visual tokens",
                l.max_seq_len,
                self.n_visual_tokens()
            ));
        }
        if e.layers == 0 || l.layers == 0 {
            return bad("layer counts must be positive".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter matrices in stable insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), value));
        let id = self.entries.len() - 1;
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].1
    }

    pub fn by_name(&self, name: &str) -> &Matrix {
        let id = self.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, m))| (ParamId(i), n.as_str(), m))
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }
}

/// The model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

fn init_linear(params: &mut ParamStore, rng: &mut Rng, name: &str, rows: usize, cols: usize) {
    let w = Matrix::from_fn(rows, cols, |_, _| rng.normal_scaled(0.02));
    params.insert(&alloc::format!("{name}.w"), w);
    params.insert(&alloc::format!("{name}.b"), Matrix::zeros(1, cols));
}

fn init_layer_norm(params: &mut ParamStore, name: &str, dim: usize) {
    params.insert(
        &alloc::format!("{name}.g"),
        Matrix::from_fn(1, dim, |_, _| 1.0),
    );
    params.insert(&alloc::format!("{name}.b"), Matrix::zeros(1, dim));
}

fn init_block(params: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize) {
    init_layer_norm(params, &alloc::format!("{prefix}.ln1"), dim);
    for proj in ["wq", "wk", "wv", "wo"] {
        init_linear(params, rng, &alloc::format!("{prefix}.attn.{proj}"), dim, dim);
    }
    init_layer_norm(params, &alloc::format!("{prefix}.ln2"), dim);
    init_linear(params, rng, &alloc::format!("{prefix}.mlp.fc1"), dim, dim * 4);
    init_linear(params, rng, &alloc::format!("{prefix}.mlp.fc2"), dim * 4, dim);
}

impl Model {
    /// Seeded random initialization of every parameter.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = Rng::substream(seed, 0xE0C0);

        // encoder
        let e = &cfg.encoder;
        let patch_dim = e.patch_size * e.patch_size;
        init_linear(&mut params, &mut rng, "enc.patch", patch_dim, e.dim);
        params.insert(
            "enc.pos",
            Matrix::from_fn(cfg.n_patches(), e.dim, |_, _| rng.normal_scaled(0.02)),
        );
        for l in 0..e.layers {
            init_block(&mut params, &mut rng, &alloc::format!("enc.l{l}"), e.dim);
        }
        init_layer_norm(&mut params, "enc.ln_f", e.dim);

        // bridge
        let grouped_dim = cfg.bridge.group * e.dim;
        let lm_dim = cfg.lm.dim;
        if cfg.bridge.two_layer {
            init_linear(&mut params, &mut rng, "bridge.fc1", grouped_dim, lm_dim);
            init_linear(&mut params, &mut rng, "bridge.fc2", lm_dim, lm_dim);
        } else {
            init_linear(&mut params, &mut rng, "bridge.fc1", grouped_dim, lm_dim);
        }

        // language model
        let v = cfg.lm.vocab_size;
        params.insert(
            "lm.embed",
            Matrix::from_fn(v, lm_dim, |_, _| rng.normal_scaled(0.02)),
        );
        params.insert(
            "lm.pos",
            Matrix::from_fn(cfg.lm.max_seq_len, lm_dim, |_, _| rng.normal_scaled(0.02)),
        );
        for l in 0..cfg.lm.layers {
            init_block(&mut params, &mut rng, &alloc::format!("lm.l{l}"), lm_dim);
        }
        init_layer_norm(&mut params, "lm.ln_f", lm_dim);
        init_linear(&mut params, &mut rng, "lm.head", lm_dim, v);

        Ok(Model { cfg, params })
    }

    /// Parameter ids updated by training: the bridge and LM, plus the
    /// encoder when it is not frozen.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| !(self.cfg.encoder.frozen && name.starts_with("enc.")))
            .map(|(id, _, _)| id)
            .collect()
    }
}

/// Splits an image into flattened row-major patches scaled to [0, 1].
/// Output is `(side/patch)^2 x patch^2`.
pub fn patchify(img: &NormalizedImage, cfg: &ModelConfig) -> Result<Matrix, ModelError> {
    let e = &cfg.encoder;
    if e.patch_size == 0 || e.image_side % e.patch_size != 0 {
        return Err(ModelError::Config(alloc::format!(
            "image side {} not divisible by patch size {}",
            e.image_side,
            e.patch_size
        )));
    }
    if img.side != e.image_side {
        return Err(ModelError::ImageSide {
            want: e.image_side,
            got: img.side,
        });
    }
    let p = e.patch_size;
    let per_side = img.side / p;
    let mut out = Matrix::zeros(per_side * per_side, p * p);
    for py in 0..per_side {
        for px in 0..per_side {
            let row = out.row_mut(py * per_side + px);
            for dy in 0..p {
                for dx in 0..p {
                    let v = img.pixels[(py * p + dy) * img.side + (px * p + dx)];
                    row[dy * p + dx] = v as f64 / 255.0;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// plain (non-graph) forward, used for the frozen encoder and for generation
// ---------------------------------------------------------------------------

fn ln_rows(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Matrix {
    let d = x.cols();
    let mut out = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / libm::sqrt(var + 1e-5);
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = gamma.get(0, c) * (row[c] - mean) * rstd + beta.get(0, c);
        }
    }
    out
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = x.matmul(w);
    for r in 0..out.rows() {
        for (o, bias) in out.row_mut(r).iter_mut().zip(b.row(0)) {
            *o += bias;
        }
    }
    out
}

fn softmax_row(scores: &mut [f64]) {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut denom = 0.0;
    for s in scores.iter_mut() {
        *s = libm::exp(*s - max);
        denom += *s;
    }
    for s in scores.iter_mut() {
        *s /= denom;
    }
}

/// Full multi-head self-attention over `x`, optionally causal.
fn attention_plain(params: &ParamStore, prefix: &str, x: &Matrix, heads: usize, causal: bool) -> Matrix {
    let d = x.cols();
    let dh = d / heads;
    let q = linear(x, params.by_name(&alloc::format!("{prefix}.wq.w")), params.by_name(&alloc::format!("{prefix}.wq.b")));
    let k = linear(x, params.by_name(&alloc::format!("{prefix}.wk.w")), params.by_name(&alloc::format!("{prefix}.wk.b")));
    let v = linear(x, params.by_name(&alloc::format!("{prefix}.wv.w")), params.by_name(&alloc::format!("{prefix}.wv.b")));
    let n = x.rows();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut ctx = Matrix::zeros(n, d);
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let end = if causal { i + 1 } else { n };
            let mut scores = vec![0.0; end];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..dh {
                    acc += q.get(i, off + c) * k.get(j, off + c);
                }
                *s = acc * scale;
            }
            softmax_row(&mut scores);
            for c in 0..dh {
                let mut acc = 0.0;
                for (j, p) in scores.iter().enumerate() {
                    acc += p * v.get(j, off + c);
                }
                ctx.set(i, off + c, acc);
            }
        }
    }
    linear(&ctx, params.by_name(&alloc::format!("{prefix}.wo.w")), params.by_name(&alloc::format!("{prefix}.wo.b")))
}

fn block_plain(params: &ParamStore, prefix: &str, x: &Matrix, heads: usize, causal: bool) -> Matrix {
    let ln1 = ln_rows(
        x,
        params.by_name(&alloc::format!("{prefix}.ln1.g")),
        params.by_name(&alloc::format!("{prefix}.ln1.b")),
    );
    let mut h = x.clone();
    h.add_assign(&attention_plain(params, &alloc::format!("{prefix}.attn"), &ln1, heads, causal));
    let ln2 = ln_rows(
        &h,
        params.by_name(&alloc::format!("{prefix}.ln2.g")),
        params.by_name(&alloc::format!("{prefix}.ln2.b")),
    );
    let mut mid = linear(
        &ln2,
        params.by_name(&alloc::format!("{prefix}.mlp.fc1.w")),
        params.by_name(&alloc::format!("{prefix}.mlp.fc1.b")),
    );
    for v in mid.data_mut() {
        *v = gelu(*v);
    }
    let out = linear(
        &mid,
        params.by_name(&alloc::format!("{prefix}.mlp.fc2.w")),
        params.by_name(&alloc::format!("{prefix}.mlp.fc2.b")),
    );
    h.add_assign(&out);
    h
}

impl Model {
    /// Encoder forward: one feature vector per patch. Deterministic given
    /// parameters; no gradients are tracked here.
    pub fn encode_patches(&self, patches: &Matrix) -> Result<Matrix, ModelError> {
        let e = &self.cfg.encoder;
        let patch_dim = e.patch_size * e.patch_size;
        if patches.shape() != (self.cfg.n_patches(), patch_dim) {
            return Err(ModelError::FeatureShape {
                want_rows: self.cfg.n_patches(),
                want_cols: patch_dim,
                got_rows: patches.rows(),
                got_cols: patches.cols(),
            });
        }
        let mut x = linear(
            patches,
            self.params.by_name("enc.patch.w"),
            self.params.by_name("enc.patch.b"),
        );
        if e.positional {
            x.add_assign(self.params.by_name("enc.pos"));
        }
        for l in 0..e.layers {
            x = block_plain(&self.params, &alloc::format!("enc.l{l}"), &x, e.heads, false);
        }
        Ok(ln_rows(
            &x,
            self.params.by_name("enc.ln_f.g"),
            self.params.by_name("enc.ln_f.b"),
        ))
    }

    /// Patchify + encode in one step.
    pub fn encode_image(&self, img: &NormalizedImage) -> Result<Matrix, ModelError> {
        let patches = patchify(img, &self.cfg)?;
        self.encode_patches(&patches)
    }

    /// Concatenates consecutive row-major groups of `group` feature vectors.
    pub fn group_features(&self, features: &Matrix) -> Result<Matrix, ModelError> {
        let g = self.cfg.bridge.group;
        if features.rows() % g != 0 || features.shape() != (self.cfg.n_patches(), self.cfg.encoder.dim) {
            return Err(ModelError::FeatureShape {
                want_rows: self.cfg.n_patches(),
                want_cols: self.cfg.encoder.dim,
                got_rows: features.rows(),
                got_cols: features.cols(),
            });
        }
        let out_rows = features.rows() / g;
        let out_cols = features.cols() * g;
        let mut out = Matrix::zeros(out_rows, out_cols);
        for r in 0..out_rows {
            let row = out.row_mut(r);
            for k in 0..g {
                let src = features.row(r * g + k);
                row[k * features.cols()..(k + 1) * features.cols()].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Plain bridge projection (used for generation).
    pub fn project_features(&self, features: &Matrix) -> Result<Matrix, ModelError> {
        let grouped = self.group_features(features)?;
        let mut x = linear(
            &grouped,
            self.params.by_name("bridge.fc1.w"),
            self.params.by_name("bridge.fc1.b"),
        );
        if self.cfg.bridge.two_layer {
            for v in x.data_mut() {
                *v = gelu(*v);
            }
            x = linear(
                &x,
                self.params.by_name("bridge.fc2.w"),
                self.params.by_name("bridge.fc2.b"),
            );
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// mixed sequences
// ---------------------------------------------------------------------------

/// Token layout around the contiguous visual block:
/// `[prompt-prefix] [image-start] [visual tokens] [image-end] [prompt-suffix]
/// [answer-start] [target tokens]` — with `answer_mask` true exactly on the
/// target positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSequence {
    pub pre: Vec<TokenId>,
    pub n_visual: usize,
    pub post: Vec<TokenId>,
    pub answer_mask: Vec<bool>,
}

impl MixedSequence {
    pub fn len(&self) -> usize {
        self.pre.len() + self.n_visual + self.post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token id at a position; `None` inside the visual block.
    pub fn token_at(&self, pos: usize) -> Option<TokenId> {
        if pos < self.pre.len() {
            Some(self.pre[pos])
        } else if pos < self.pre.len() + self.n_visual {
            None
        } else {
            self.post.get(pos - self.pre.len() - self.n_visual).copied()
        }
    }

    /// Index of the visual block's first row.
    pub fn visual_at(&self) -> usize {
        self.pre.len()
    }
}

/// Splits a prompt at its leading `[tag]`, mirroring the instruction-token
/// convention: the tag goes before the image block, the rest after.
fn split_prompt(prompt: &str) -> (&str, &str) {
    if prompt.starts_with('[') {
        if let Some(close) = prompt.find(']') {
            return (&prompt[..=close], &prompt[close + 1..]);
        }
    }
    ("", prompt)
}

/// Lays out prompt text, the visual block, and an optional training target
/// into one mixed sequence. Length overflow reports each component.
pub fn assemble_input(
    prompt: &str,
    n_visual: usize,
    target_tokens: Option<&[TokenId]>,
    tokenizer: &Tokenizer,
    max_seq_len: usize,
) -> Result<MixedSequence, ModelError> {
    let (prefix, suffix) = split_prompt(prompt);
    let mut pre = tokenizer.encode(prefix);
    let prompt_tokens = {
        let suffix_ids = tokenizer.encode(suffix);
        pre.len() + suffix_ids.len()
    };
    pre.push(tokenizer.special(Special::ImageStart));

    let mut post = vec![tokenizer.special(Special::ImageEnd)];
    post.extend(tokenizer.encode(suffix));
    post.push(tokenizer.special(Special::AnswerStart));
    let answer_start = pre.len() + n_visual + post.len();
    let n_target = target_tokens.map_or(0, |t| t.len());
    if let Some(t) = target_tokens {
        post.extend_from_slice(t);
    }

    let total = pre.len() + n_visual + post.len();
    if total > max_seq_len {
        return Err(ModelError::SequenceTooLong {
            prompt: prompt_tokens,
            visual: n_visual,
            target: n_target,
            total,
            max: max_seq_len,
        });
    }
    let mut answer_mask = vec![false; total];
    for m in answer_mask.iter_mut().skip(answer_start) {
        *m = true;
    }
    Ok(MixedSequence {
        pre,
        n_visual,
        post,
        answer_mask,
    })
}

// ---------------------------------------------------------------------------
// training graph
// ---------------------------------------------------------------------------

/// What the encoder consumes for one study.
pub enum VisualInput<'a> {
    /// Precomputed (frozen-encoder) features, `(S/P)^2 x D_v`.
    Features(&'a Matrix),
    /// Raw normalized image; required when the encoder is trainable.
    Image(&'a NormalizedImage),
}

/// A built loss graph, ready for backward.
pub struct LossGraph {
    graph: Graph,
    loss: NodeId,
}

impl LossGraph {
    pub fn loss(&self) -> f64 {
        self.graph.scalar(self.loss)
    }

    /// Gradients keyed by [`ParamId`] tag.
    pub fn backward(&self) -> BTreeMap<usize, Matrix> {
        self.graph.backward(self.loss)
    }
}

fn graph_param(g: &mut Graph, params: &ParamStore, name: &str) -> NodeId {
    let id = params.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    g.param(id.0, params.get(id).clone())
}

fn graph_linear(g: &mut Graph, params: &ParamStore, name: &str, x: NodeId) -> NodeId {
    let w = graph_param(g, params, &alloc::format!("{name}.w"));
    let b = graph_param(g, params, &alloc::format!("{name}.b"));
    let h = g.matmul(x, w);
    g.add_row(h, b)
}

fn graph_block(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
    x: NodeId,
    heads: usize,
    dim: usize,
    causal: bool,
) -> NodeId {
    let g1 = graph_param(g, params, &alloc::format!("{prefix}.ln1.g"));
    let b1 = graph_param(g, params, &alloc::format!("{prefix}.ln1.b"));
    let ln1 = g.layer_norm(x, g1, b1);
    let q = graph_linear(g, params, &alloc::format!("{prefix}.attn.wq"), ln1);
    let k = graph_linear(g, params, &alloc::format!("{prefix}.attn.wk"), ln1);
    let v = graph_linear(g, params, &alloc::format!("{prefix}.attn.wv"), ln1);
    let dh = dim / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut head_ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, scale);
        let probs = g.row_softmax(scores, causal);
        head_ctx.push(g.matmul(probs, vh));
    }
    let ctx = g.concat_cols(&head_ctx);
    let attn_out = graph_linear(g, params, &alloc::format!("{prefix}.attn.wo"), ctx);
    let x = g.add(x, attn_out);
    let g2 = graph_param(g, params, &alloc::format!("{prefix}.ln2.g"));
    let b2 = graph_param(g, params, &alloc::format!("{prefix}.ln2.b"));
    let ln2 = g.layer_norm(x, g2, b2);
    let mid = graph_linear(g, params, &alloc::format!("{prefix}.mlp.fc1"), ln2);
    let mid = g.gelu(mid);
    let out = graph_linear(g, params, &alloc::format!("{prefix}.mlp.fc2"), mid);
    g.add(x, out)
}

impl Model {
    fn bridge_graph(&self, g: &mut Graph, grouped: NodeId) -> NodeId {
        let mut x = graph_linear(g, &self.params, "bridge.fc1", grouped);
        if self.cfg.bridge.two_layer {
            x = g.gelu(x);
            x = graph_linear(g, &self.params, "bridge.fc2", x);
        }
        x
    }

    fn encoder_graph(&self, g: &mut Graph, patches: &Matrix) -> NodeId {
        let e = &self.cfg.encoder;
        let x = g.constant(patches.clone());
        let mut x = graph_linear(g, &self.params, "enc.patch", x);
        if e.positional {
            let pos = graph_param(g, &self.params, "enc.pos");
            x = g.add(x, pos);
        }
        for l in 0..e.layers {
            x = graph_block(g, &self.params, &alloc::format!("enc.l{l}"), x, e.heads, e.dim, false);
        }
        let gf = graph_param(g, &self.params, "enc.ln_f.g");
        let bf = graph_param(g, &self.params, "enc.ln_f.b");
        g.layer_norm(x, gf, bf)
    }

    /// Builds the full training graph for one sequence and returns the mean
    /// cross-entropy over answer positions.
    pub fn loss_graph(
        &self,
        input: VisualInput<'_>,
        seq: &MixedSequence,
    ) -> Result<LossGraph, ModelError> {
        if !seq.answer_mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyAnswerMask);
        }
        let total = seq.len();
        if total > self.cfg.lm.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                prompt: 0,
                visual: seq.n_visual,
                target: 0,
                total,
                max: self.cfg.lm.max_seq_len,
            });
        }
        let mut g = Graph::new();

        // visual pathway
        let feature_node = match input {
            VisualInput::Features(f) => {
                if f.shape() != (self.cfg.n_patches(), self.cfg.encoder.dim) {
                    return Err(ModelError::FeatureShape {
                        want_rows: self.cfg.n_patches(),
                        want_cols: self.cfg.encoder.dim,
                        got_rows: f.rows(),
                        got_cols: f.cols(),
                    });
                }
                g.constant(f.clone())
            }
            VisualInput::Image(img) => {
                let patches = patchify(img, &self.cfg)?;
                if self.cfg.encoder.frozen {
                    g.constant(self.encode_patches(&patches)?)
                } else {
                    self.encoder_graph(&mut g, &patches)
                }
            }
        };
        // row-major grouping as a constant gather is wrong for gradients, so
        // express it as slice+concat over the feature node
        let group = self.cfg.bridge.group;
        let n_grouped = self.cfg.n_visual_tokens();
        let mut grouped_rows = Vec::with_capacity(n_grouped);
        for r in 0..n_grouped {
            let mut cols = Vec::with_capacity(group);
            for k in 0..group {
                cols.push(g.slice_rows(feature_node, r * group + k, 1));
            }
            grouped_rows.push(g.concat_cols(&cols));
        }
        let grouped = g.concat_rows(&grouped_rows);
        let visual = self.bridge_graph(&mut g, grouped);
        if seq.n_visual != n_grouped {
            return Err(ModelError::Config(alloc::format!(
                "sequence declares {} visual tokens but model produces {}",
                seq.n_visual,
                n_grouped
            )));
        }

        // text embeddings
        let embed = graph_param(&mut g, &self.params, "lm.embed");
        let vocab = self.cfg.lm.vocab_size;
        let to_ids = |ids: &[TokenId]| -> Result<Vec<usize>, ModelError> {
            ids.iter()
                .map(|&t| {
                    if (t as usize) < vocab {
                        Ok(t as usize)
                    } else {
                        Err(ModelError::BadTokenId(t))
                    }
                })
                .collect()
        };
        let pre_ids = to_ids(&seq.pre)?;
        let post_ids = to_ids(&seq.post)?;
        let pre_emb = g.gather_rows(embed, pre_ids);
        let post_emb = g.gather_rows(embed, post_ids);
        let mut x = g.concat_rows(&[pre_emb, visual, post_emb]);

        // positions
        let pos = graph_param(&mut g, &self.params, "lm.pos");
        let pos_slice = g.slice_rows(pos, 0, total);
        x = g.add(x, pos_slice);

        // decoder stack
        let l = &self.cfg.lm;
        for layer in 0..l.layers {
            x = graph_block(&mut g, &self.params, &alloc::format!("lm.l{layer}"), x, l.heads, l.dim, true);
        }
        let gf = graph_param(&mut g, &self.params, "lm.ln_f.g");
        let bf = graph_param(&mut g, &self.params, "lm.ln_f.b");
        let x = g.layer_norm(x, gf, bf);
        let logits = graph_linear(&mut g, &self.params, "lm.head", x);

        // next-token targets: position i predicts token i+1
        let mut targets = vec![0usize; total];
        let mut mask = vec![false; total];
        for i in 0..total - 1 {
            if seq.answer_mask[i + 1] {
                let tok = seq
                    .token_at(i + 1)
                    .expect("answer positions are text tokens");
                targets[i] = tok as usize;
                mask[i] = true;
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyAnswerMask);
        }
        let loss = g.cross_entropy_mean(logits, targets, mask);
        Ok(LossGraph { graph: g, loss })
    }

    /// Mean answer-token cross-entropy for one sequence.
    pub fn compute_loss(
        &self,
        input: VisualInput<'_>,
        seq: &MixedSequence,
    ) -> Result<f64, ModelError> {
        Ok(self.loss_graph(input, seq)?.loss())
    }
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

/// Decoding strategy. Greedy is the default everywhere; sampling exists
/// behind this switch and is excluded from acceptance runs.
#[derive(Debug, Clone)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// One generation with its stopping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub token_count: usize,
    /// True when decoding stopped at `max_new_tokens` rather than at the
    /// end-of-text token.
    pub truncated: bool,
}

/// Per-layer KV cache for incremental decoding.
struct DecodeState {
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
    len: usize,
}

impl DecodeState {
    fn new(layers: usize, dim: usize, capacity: usize) -> DecodeState {
        DecodeState {
            keys: (0..layers).map(|_| Matrix::zeros(capacity, dim)).collect(),
            values: (0..layers).map(|_| Matrix::zeros(capacity, dim)).collect(),
            len: 0,
        }
    }
}

impl Model {
    /// Advances the decoder by one position and returns the logits row.
    fn decode_step(&self, state: &mut DecodeState, embedding: &Matrix) -> Matrix {
        let l = &self.cfg.lm;
        let dh = l.dim / l.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let pos = state.len;
        let mut h = embedding.clone();
        for layer in 0..l.layers {
            let prefix = alloc::format!("lm.l{layer}");
            let ln1 = ln_rows(
                &h,
                self.params.by_name(&alloc::format!("{prefix}.ln1.g")),
                self.params.by_name(&alloc::format!("{prefix}.ln1.b")),
            );
            let q = linear(
                &ln1,
                self.params.by_name(&alloc::format!("{prefix}.attn.wq.w")),
                self.params.by_name(&alloc::format!("{prefix}.attn.wq.b")),
            );
            let k = linear(
                &ln1,
                self.params.by_name(&alloc::format!("{prefix}.attn.wk.w")),
                self.params.by_name(&alloc::format!("{prefix}.attn.wk.b")),
            );
            let v = linear(
                &ln1,
                self.params.by_name(&alloc::format!("{prefix}.attn.wv.w")),
                self.params.by_name(&alloc::format!("{prefix}.attn.wv.b")),
            );
            state.keys[layer].row_mut(pos).copy_from_slice(k.row(0));
            state.values[layer].row_mut(pos).copy_from_slice(v.row(0));
            let mut ctx = Matrix::zeros(1, l.dim);
            for head in 0..l.heads {
                let off = head * dh;
                let mut scores = vec![0.0; pos + 1];
                for (j, s) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += q.get(0, off + c) * state.keys[layer].get(j, off + c);
                    }
                    *s = acc * scale;
                }
                softmax_row(&mut scores);
                for c in 0..dh {
                    let mut acc = 0.0;
                    for (j, p) in scores.iter().enumerate() {
                        acc += p * state.values[layer].get(j, off + c);
                    }
                    ctx.set(0, off + c, acc);
                }
            }
            let attn_out = linear(
                &ctx,
                self.params.by_name(&alloc::format!("{prefix}.attn.wo.w")),
                self.params.by_name(&alloc::format!("{prefix}.attn.wo.b")),
            );
            h.add_assign(&attn_out);
            let ln2 = ln_rows(
                &h,
                self.params.by_name(&alloc::format!("{prefix}.ln2.g")),
                self.params.by_name(&alloc::format!("{prefix}.ln2.b")),
            );
            let mut mid = linear(
                &ln2,
                self.params.by_name(&alloc::format!("{prefix}.mlp.fc1.w")),
                self.params.by_name(&alloc::format!("{prefix}.mlp.fc1.b")),
            );
            for x in mid.data_mut() {
                *x = gelu(*x);
            }
            let out = linear(
                &mid,
                self.params.by_name(&alloc::format!("{prefix}.mlp.fc2.w")),
                self.params.by_name(&alloc::format!("{prefix}.mlp.fc2.b")),
            );
            h.add_assign(&out);
        }
        state.len += 1;
        let hn = ln_rows(
            &h,
            self.params.by_name("lm.ln_f.g"),
            self.params.by_name("lm.ln_f.b"),
        );
        linear(
            &hn,
            self.params.by_name("lm.head.w"),
            self.params.by_name("lm.head.b"),
        )
    }

    fn embedding_for(&self, token: TokenId, position: usize) -> Result<Matrix, ModelError> {
        let embed = self.params.by_name("lm.embed");
        if token as usize >= embed.rows() {
            return Err(ModelError::BadTokenId(token));
        }
        let mut e = Matrix::zeros(1, self.cfg.lm.dim);
        e.row_mut(0).copy_from_slice(embed.row(token as usize));
        let pos = self.params.by_name("lm.pos");
        for (o, p) in e.row_mut(0).iter_mut().zip(pos.row(position)) {
            *o += p;
        }
        Ok(e)
    }

    /// Greedy (or, behind the flag, temperature-sampled) decoding from a
    /// prompt sequence. Stops at end-of-text or after `max_new_tokens`,
    /// flagging truncation in the latter case.
    pub fn generate(
        &self,
        input: VisualInput<'_>,
        seq: &MixedSequence,
        tokenizer: &Tokenizer,
        max_new_tokens: usize,
        mode: DecodeMode,
    ) -> Result<Generation, ModelError> {
        let prompt_len = seq.len();
        if prompt_len >= self.cfg.lm.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                prompt: prompt_len,
                visual: seq.n_visual,
                target: 0,
                total: prompt_len,
                max: self.cfg.lm.max_seq_len,
            });
        }
        let features = match input {
            VisualInput::Features(f) => f.clone(),
            VisualInput::Image(img) => self.encode_image(img)?,
        };
        let projected = self.project_features(&features)?;
        if projected.rows() != seq.n_visual {
            return Err(ModelError::Config(alloc::format!(
                "sequence declares {} visual tokens but model produces {}",
                seq.n_visual,
                projected.rows()
            )));
        }

        let l = &self.cfg.lm;
        let mut state = DecodeState::new(l.layers, l.dim, l.max_seq_len);
        let pos_table = self.params.by_name("lm.pos");
        let mut logits = Matrix::zeros(1, l.vocab_size);
        for i in 0..prompt_len {
            let emb = match seq.token_at(i) {
                Some(tok) => self.embedding_for(tok, i)?,
                None => {
                    let vrow = i - seq.visual_at();
                    let mut e = Matrix::zeros(1, l.dim);
                    e.row_mut(0).copy_from_slice(projected.row(vrow));
                    for (o, p) in e.row_mut(0).iter_mut().zip(pos_table.row(i)) {
                        *o += p;
                    }
                    e
                }
            };
            logits = self.decode_step(&mut state, &emb);
        }

        let eot = tokenizer.special(Special::EndOfText);
        let mut sampler_rng = match &mode {
            DecodeMode::Greedy => None,
            DecodeMode::Sample { seed, .. } => Some(Rng::substream(*seed, 0x5A)),
        };
        let mut out_tokens: Vec<TokenId> = Vec::new();
        let mut truncated = true;
        for step in 0..max_new_tokens {
            let next = match &mode {
                DecodeMode::Greedy => argmax(logits.row(0)) as TokenId,
                DecodeMode::Sample { temperature, .. } => {
                    let rng = sampler_rng.as_mut().expect("sampler rng");
                    sample_row(logits.row(0), *temperature, rng) as TokenId
                }
            };
            if next == eot {
                truncated = false;
                break;
            }
            out_tokens.push(next);
            let pos = prompt_len + step;
            if pos + 1 >= l.max_seq_len {
                break;
            }
            let emb = self.embedding_for(next, pos)?;
            logits = self.decode_step(&mut state, &emb);
        }
        Ok(Generation {
            text: tokenizer.decode(&out_tokens),
            token_count: out_tokens.len(),
            truncated,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn sample_row(logits: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let mut probs: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    softmax_row(&mut probs);
    let draw = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Tokenizer;

    /// Tiny configuration that keeps unit tests fast.
    pub fn micro_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                image_side: 64,
                patch_size: 32,
                dim: 8,
                layers: 1,
                heads: 2,
                frozen: true,
                positional: true,
            },
            bridge: BridgeConfig {
                group: 2,
                two_layer: false,
            },
            lm: LmConfig {
                vocab_size,
                dim: 16,
                layers: 1,
                heads: 2,
                max_seq_len: 64,
            },
        }
    }

    fn micro_tokenizer() -> Tokenizer {
        Tokenizer::build(&["[t] a b c d e f g h", "x y z"])
    }

    fn micro_model(tok: &Tokenizer) -> Model {
        Model::init(micro_config(tok.vocab_size()), 17).unwrap()
    }

    fn flat_image(side: usize) -> NormalizedImage {
        NormalizedImage::constant(side, 100)
    }

    #[test]
    fn patch_count_matches_arithmetic() {
        // oracle: (448/32)^2 = 196
        let cfg = ModelConfig::default();
        assert_eq!(cfg.n_patches(), 196);
        assert_eq!(cfg.n_visual_tokens(), 49);
    }

    #[test]
    fn patchify_whole_image_single_patch() {
        let mut cfg = micro_config(16);
        cfg.encoder.image_side = 64;
        cfg.encoder.patch_size = 64;
        cfg.bridge.group = 1;
        let img = flat_image(64);
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), (1, 64 * 64));
        assert!(p.data().iter().all(|&v| (v - 100.0 / 255.0).abs() < 1e-12));
    }

    #[test]
    fn patchify_constant_image_gives_identical_patches() {
        let cfg = micro_config(16);
        let img = flat_image(64);
        let p = patchify(&img, &cfg).unwrap();
        for r in 1..p.rows() {
            assert_eq!(p.row(r), p.row(0));
        }
    }

    #[test]
    fn patchify_rejects_size_mismatch() {
        let cfg = micro_config(16);
        let img = flat_image(65);
        assert!(matches!(patchify(&img, &cfg), Err(ModelError::ImageSide { .. })));
    }

    #[test]
    fn config_rejects_indivisible_patch_grid() {
        let mut cfg = micro_config(16);
        cfg.encoder.patch_size = 33;
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
        let mut cfg = micro_config(16);
        cfg.bridge.group = 3; // 4 patches not divisible by 3
        assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn encoder_is_deterministic() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let a = m.encode_image(&img).unwrap();
        let b = m.encode_image(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_without_positions_is_permutation_equivariant() {
        let tok = micro_tokenizer();
        let mut cfg = micro_config(tok.vocab_size());
        cfg.encoder.positional = false;
        let m = Model::init(cfg.clone(), 17).unwrap();
        // distinct patches
        let mut img = flat_image(64);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        let patches = patchify(&img, &cfg).unwrap();
        let feats = m.encode_patches(&patches).unwrap();
        // permute patch order and re-encode
        let perm = [2usize, 0, 3, 1];
        let permuted = Matrix::from_fn(4, patches.cols(), |r, c| patches.get(perm[r], c));
        let feats_p = m.encode_patches(&permuted).unwrap();
        for r in 0..4 {
            for c in 0..feats.cols() {
                assert!(
                    (feats_p.get(r, c) - feats.get(perm[r], c)).abs() < 1e-9,
                    "row {r} col {c}"
                );
            }
        }
    }

    #[test]
    fn grouping_reduces_token_count_by_factor() {
        // oracle: 196 / 4 = 49 on the default config shape
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let feats = Matrix::from_fn(4, 8, |r, c| (r * 8 + c) as f64);
        let grouped = m.group_features(&feats).unwrap();
        assert_eq!(grouped.shape(), (2, 16));
        // first grouped row is rows 0 and 1 concatenated
        assert_eq!(grouped.row(0)[..8], *feats.row(0));
        assert_eq!(grouped.row(0)[8..], *feats.row(1));
    }

    #[test]
    fn identity_projection_passes_features_through() {
        let tok = micro_tokenizer();
        let mut cfg = micro_config(tok.vocab_size());
        cfg.bridge.group = 1;
        cfg.lm.dim = cfg.encoder.dim; // D_v == D_lm
        let mut m = Model::init(cfg, 11).unwrap();
        let d = m.cfg.encoder.dim;
        *m.params.get_mut(m.params.id("bridge.fc1.w").unwrap()) =
            Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { 0.0 });
        *m.params.get_mut(m.params.id("bridge.fc1.b").unwrap()) = Matrix::zeros(1, d);
        let feats = Matrix::from_fn(4, d, |r, c| (r + c) as f64 * 0.1);
        let out = m.project_features(&feats).unwrap();
        assert_eq!(out, feats);
    }

    #[test]
    fn zero_projection_gives_zero_embeddings() {
        let tok = micro_tokenizer();
        let mut m = micro_model(&tok);
        m.params
            .get_mut(m.params.id("bridge.fc1.w").unwrap())
            .scale_assign(0.0);
        m.params
            .get_mut(m.params.id("bridge.fc1.b").unwrap())
            .scale_assign(0.0);
        let feats = Matrix::from_fn(4, 8, |r, c| (r + c) as f64);
        let out = m.project_features(&feats).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    fn seq_for(m: &Model, tok: &Tokenizer, target: Option<&str>) -> MixedSequence {
        let target_ids = target.map(|t| {
            let mut ids = tok.encode(t);
            ids.push(tok.special(Special::EndOfText));
            ids
        });
        assemble_input(
            "[t] a b c",
            m.cfg.n_visual_tokens(),
            target_ids.as_deref(),
            tok,
            m.cfg.lm.max_seq_len,
        )
        .unwrap()
    }

    #[test]
    fn assemble_layout_and_mask() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let seq = seq_for(&m, &tok, Some("x y"));
        // prefix [t] lexes to 3 tokens; suffix " a b c" to 6 (space-separated)
        let n_prefix = tok.encode("[t]").len();
        let n_suffix = tok.encode(" a b c").len();
        let n_target = tok.encode("x y").len() + 1; // + EOT
        assert_eq!(
            seq.len(),
            n_prefix + n_suffix + n_target + m.cfg.n_visual_tokens() + 3
        );
        let n_masked = seq.answer_mask.iter().filter(|&&b| b).count();
        assert_eq!(n_masked, n_target);
        // mask is a contiguous tail
        let first = seq.answer_mask.iter().position(|&b| b).unwrap();
        assert!(seq.answer_mask[first..].iter().all(|&b| b));
        // visual block bracketed by image specials
        assert_eq!(seq.pre.last().copied(), Some(tok.special(Special::ImageStart)));
        assert_eq!(seq.post.first().copied(), Some(tok.special(Special::ImageEnd)));
    }

    #[test]
    fn assemble_without_target_has_empty_mask() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let seq = seq_for(&m, &tok, None);
        assert!(seq.answer_mask.iter().all(|&b| !b));
    }

    #[test]
    fn assemble_same_inputs_twice_is_identical() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        assert_eq!(seq_for(&m, &tok, Some("x y")), seq_for(&m, &tok, Some("x y")));
    }

    #[test]
    fn assemble_overflow_names_components() {
        let tok = micro_tokenizer();
        let e = assemble_input("[t] a b c", 60, Some(&[0, 1, 2]), &tok, 64).unwrap_err();
        match e {
            ModelError::SequenceTooLong { visual, target, .. } => {
                assert_eq!(visual, 60);
                assert_eq!(target, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn untrained_loss_near_uniform_entropy() {
        // oracle: uniform predictor entropy ln(V) within 20%
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let seq = seq_for(&m, &tok, Some("x y z"));
        let loss = m.compute_loss(VisualInput::Image(&img), &seq).unwrap();
        let ln_v = libm::log(tok.vocab_size() as f64);
        assert!(loss > 0.0);
        assert!((loss - ln_v).abs() < 0.2 * ln_v, "loss {loss} vs ln V {ln_v}");
    }

    #[test]
    fn loss_rejects_empty_answer_mask() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let seq = seq_for(&m, &tok, None);
        assert!(matches!(
            m.compute_loss(VisualInput::Image(&img), &seq),
            Err(ModelError::EmptyAnswerMask)
        ));
    }

    #[test]
    fn generation_is_deterministic_and_respects_budget() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let seq = seq_for(&m, &tok, None);
        let a = m
            .generate(VisualInput::Image(&img), &seq, &tok, 8, DecodeMode::Greedy)
            .unwrap();
        let b = m
            .generate(VisualInput::Image(&img), &seq, &tok, 8, DecodeMode::Greedy)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.token_count <= 8);
    }

    #[test]
    fn zero_budget_generation_is_empty_and_truncated() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let seq = seq_for(&m, &tok, None);
        let out = m
            .generate(VisualInput::Image(&img), &seq, &tok, 0, DecodeMode::Greedy)
            .unwrap();
        assert_eq!(out.text, "");
        assert!(out.truncated);
    }

    /// The incremental decode path must agree with the training graph's
    /// forward on the same sequence.
    #[test]
    fn incremental_logits_match_graph_forward() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let img = flat_image(64);
        let seq = seq_for(&m, &tok, Some("x y z"));

        // graph forward: reuse loss_graph by reading per-position CE; instead
        // compare through loss value reconstructed from incremental logits.
        let lg = m.loss_graph(VisualInput::Image(&img), &seq).unwrap();
        let graph_loss = lg.loss();

        // incremental: replay the full sequence, collect logits, compute the
        // same masked mean cross-entropy
        let feats = m.encode_image(&img).unwrap();
        let projected = m.project_features(&feats).unwrap();
        let l = &m.cfg.lm;
        let mut state = DecodeState::new(l.layers, l.dim, l.max_seq_len);
        let pos_table = m.params.by_name("lm.pos");
        let total = seq.len();
        let mut losses = Vec::new();
        let mut prev_logits: Option<Matrix> = None;
        for i in 0..total {
            if let Some(logits) = &prev_logits {
                if seq.answer_mask[i] {
                    let tgt = seq.token_at(i).unwrap() as usize;
                    let mut row = logits.row(0).to_vec();
                    softmax_row(&mut row);
                    losses.push(-libm::log(row[tgt]));
                }
            }
            let emb = match seq.token_at(i) {
                Some(t) => m.embedding_for(t, i).unwrap(),
                None => {
                    let vrow = i - seq.visual_at();
                    let mut e = Matrix::zeros(1, l.dim);
                    e.row_mut(0).copy_from_slice(projected.row(vrow));
                    for (o, p) in e.row_mut(0).iter_mut().zip(pos_table.row(i)) {
                        *o += p;
                    }
                    e
                }
            };
            prev_logits = Some(m.decode_step(&mut state, &emb));
        }
        let inc_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        assert!(
            (inc_loss - graph_loss).abs() < 1e-9,
            "incremental {inc_loss} vs graph {graph_loss}"
        );
    }

    #[test]
    fn init_is_deterministic() {
        let tok = micro_tokenizer();
        let a = micro_model(&tok);
        let b = micro_model(&tok);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn trainable_ids_exclude_frozen_encoder() {
        let tok = micro_tokenizer();
        let m = micro_model(&tok);
        let trainable = m.trainable_ids();
        assert!(trainable
            .iter()
            .all(|id| !m.params.name(*id).starts_with("enc.")));
        assert!(trainable.iter().any(|id| m.params.name(*id).starts_with("bridge.")));
        assert!(trainable.iter().any(|id| m.params.name(*id).starts_with("lm.")));
    }
}
