//! Multi-stream condition builder.
//!
//! Three streams are projected to a common width `d_c` and concatenated in
//! the fixed order DST, RTS, PS:
//!
//! * DST: learnable queries appended to the prompt embedding, read out from
//!   the trailing positions of a frozen backbone.
//! * RTS: the prompt embedding itself, projected per token.
//! * PS: retrieved prototype features, projected per row.
//!
//! Trainable parameters live under `msc.` and `null.` in a [`ParamSet`];
//! the frozen backbone and token table are rebuilt from their seeds.

use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::embed::TokenHashTable;
use crate::error::{Error, Result};
use crate::nn::{self, Bound, ParamSet};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneVariant {
    MiniTransformer,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MscConfig {
    /// Common condition width.
    pub d_c: usize,
    pub n_queries: usize,
    /// Prototype feature width.
    pub proto_dim: usize,
    /// Hidden width of each stream projector.
    pub hidden: usize,
    pub backbone: BackboneVariant,
    pub backbone_layers: usize,
    pub backbone_heads: usize,
    pub backbone_seed: u64,
    pub token_buckets: usize,
    pub max_prompt_tokens: usize,
}

impl Default for MscConfig {
    fn default() -> Self {
        Self {
            d_c: 64,
            n_queries: 8,
            proto_dim: 16,
            hidden: 64,
            backbone: BackboneVariant::MiniTransformer,
            backbone_layers: 2,
            backbone_heads: 4,
            backbone_seed: 17,
            token_buckets: 4096,
            max_prompt_tokens: 32,
        }
    }
}

impl MscConfig {
    /// Full-scale shapes: 64 queries, projector hidden width 1152.
    pub fn full_scale() -> Self {
        Self {
            n_queries: 64,
            hidden: 1152,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.n_queries == 0 || self.hidden == 0 || self.proto_dim == 0 {
            return Err(Error::Config("msc widths and query count must be positive".into()));
        }
        if self.backbone_heads == 0 || self.d_c % self.backbone_heads != 0 {
            return Err(Error::Config(format!(
                "msc.d_c = {} is not divisible by msc.backbone_heads = {}",
                self.d_c, self.backbone_heads
            )));
        }
        if self.token_buckets == 0 || self.max_prompt_tokens == 0 {
            return Err(Error::Config("token table must be non-empty".into()));
        }
        Ok(())
    }
}

/// Pre-LN causal transformer with fixed seeded weights.
///
/// The weights are bound as constants on every forward, so gradients pass
/// through to the inputs but the weights never receive one.
#[derive(Debug, Clone)]
pub struct FrozenBackbone {
    variant: BackboneVariant,
    layers: usize,
    heads: usize,
    width: usize,
    params: ParamSet,
}

impl FrozenBackbone {
    pub fn new(variant: BackboneVariant, layers: usize, width: usize, heads: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        if variant == BackboneVariant::MiniTransformer {
            let mut rng = SeededRng::derive(seed, "frozen-backbone");
            for l in 0..layers {
                params.init_layer_norm(&format!("layer{l}.ln1"), width);
                nn::init_attention(&mut params, &format!("layer{l}.attn"), width, width, &mut rng);
                params.init_layer_norm(&format!("layer{l}.ln2"), width);
                nn::init_feed_forward(&mut params, &format!("layer{l}.ffn"), width, 2 * width, width, &mut rng);
            }
        }
        Self {
            variant,
            layers,
            heads,
            width,
            params,
        }
    }

    pub fn variant(&self) -> BackboneVariant {
        self.variant
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `L × d_c → L × d_c`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        if self.variant == BackboneVariant::Identity {
            return x;
        }
        let p = self.params.bind(tape, false);
        let mut x = x;
        for l in 0..self.layers {
            let h = nn::layer_norm_affine(tape, &p, &format!("layer{l}.ln1"), x);
            let kv = nn::project_kv(tape, &p, &format!("layer{l}.attn"), h);
            let a = nn::attention(tape, &p, &format!("layer{l}.attn"), h, kv, self.heads, true);
            x = tape.add(x, a);
            let h = nn::layer_norm_affine(tape, &p, &format!("layer{l}.ln2"), x);
            let f = nn::feed_forward(tape, &p, &format!("layer{l}.ffn"), h);
            x = tape.add(x, f);
        }
        x
    }

    pub fn forward_array(&self, x: &Mat) -> Mat {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, xv);
        tape.value(y).clone()
    }
}

/// The three stream names, in fused order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Dst,
    Rts,
    Ps,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Dst, Stream::Rts, Stream::Ps];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Dst => "dst",
            Stream::Rts => "rts",
            Stream::Ps => "ps",
        }
    }

    fn prefix(self) -> String {
        format!("msc.{}", self.name())
    }
}

/// Fused condition sequence with segment boundaries `[0, dst, dst+rts, total]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeCondition {
    tokens: Mat,
    boundaries: [usize; 4],
}

impl CompositeCondition {
    pub fn tokens(&self) -> &Mat {
        &self.tokens
    }

    pub fn into_tokens(self) -> Mat {
        self.tokens
    }

    pub fn boundaries(&self) -> [usize; 4] {
        self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries[3]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn segment(&self, stream: Stream) -> ArrayView2<'_, f64> {
        let i = stream as usize;
        self.tokens
            .slice(s![self.boundaries[i]..self.boundaries[i + 1], ..])
    }

    /// `(dst, rts, ps)` lengths.
    pub fn layout(&self) -> (usize, usize, usize) {
        let b = self.boundaries;
        (b[1] - b[0], b[2] - b[1], b[3] - b[2])
    }
}

/// Sequence concatenation in DST, RTS, PS order.
pub fn fuse(dst: &Mat, rts: &Mat, ps: &Mat) -> Result<CompositeCondition> {
    let d = dst.ncols();
    for m in [rts, ps] {
        if m.ncols() != d {
            return Err(Error::WidthMismatch {
                expected: d,
                got: m.ncols(),
            });
        }
    }
    let tokens = ndarray::concatenate(ndarray::Axis(0), &[dst.view(), rts.view(), ps.view()])
        .expect("widths checked");
    let a = dst.nrows();
    let b = a + rts.nrows();
    Ok(CompositeCondition {
        boundaries: [0, a, b, b + ps.nrows()],
        tokens,
    })
}

/// Frozen parts of the condition builder plus its trainable-parameter layout.
#[derive(Debug, Clone)]
pub struct Msc {
    cfg: MscConfig,
    backbone: FrozenBackbone,
    embedder: TokenHashTable,
}

impl Msc {
    pub fn new(cfg: MscConfig) -> Result<Self> {
        cfg.validate()?;
        let backbone = FrozenBackbone::new(
            cfg.backbone,
            cfg.backbone_layers,
            cfg.d_c,
            cfg.backbone_heads,
            cfg.backbone_seed,
        );
        let embedder = TokenHashTable::new(
            cfg.token_buckets,
            cfg.d_c,
            cfg.max_prompt_tokens,
            crate::rng::derive_seed(cfg.backbone_seed, "prompt-embedder"),
        );
        Ok(Self {
            cfg,
            backbone,
            embedder,
        })
    }

    pub fn config(&self) -> &MscConfig {
        &self.cfg
    }

    pub fn backbone(&self) -> &FrozenBackbone {
        &self.backbone
    }

    /// Trainable parameters: queries, three unshared projectors and the
    /// learned null condition.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamSet {
        let c = &self.cfg;
        let mut p = ParamSet::new();
        p.init_normal("msc.queries", c.n_queries, c.d_c, 1.0, rng);
        for (stream, d_in) in [(Stream::Dst, c.d_c), (Stream::Rts, c.d_c), (Stream::Ps, c.proto_dim)] {
            let prefix = stream.prefix();
            p.init_layer_norm(&format!("{prefix}.ln"), d_in);
            nn::init_feed_forward(&mut p, &prefix, d_in, c.hidden, c.d_c, rng);
        }
        p.init_normal("null.dst", c.n_queries, c.d_c, 0.1, rng);
        p.init_normal("null.rts", 1, c.d_c, 0.1, rng);
        p.init_normal("null.ps", 1, c.d_c, 0.1, rng);
        p
    }

    /// `L_r × d_c` prompt embedding from the frozen token table.
    pub fn embed_prompt(&self, prompt: &str) -> Result<Mat> {
        self.embedder.embed(prompt)
    }

    fn check_width(&self, tape: &Tape, x: Var, expected: usize) -> Result<()> {
        let got = tape.shape(x).1;
        if got != expected {
            return Err(Error::WidthMismatch { expected, got });
        }
        Ok(())
    }

    fn project(&self, tape: &mut Tape, p: &Bound, stream: Stream, x: Var) -> Var {
        let prefix = stream.prefix();
        let h = nn::layer_norm_affine(tape, p, &format!("{prefix}.ln"), x);
        nn::feed_forward(tape, p, &prefix, h)
    }

    /// Backbone over `[E; Q]`, trailing `N_q` states, DST projector.
    pub fn hls(&self, tape: &mut Tape, p: &Bound, prompt: Var) -> Result<Var> {
        self.check_width(tape, prompt, self.cfg.d_c)?;
        let seq = tape.concat_rows(&[prompt, p.get("msc.queries")]);
        let hidden = self.backbone.forward(tape, seq);
        let len = tape.shape(hidden).0;
        let tail = tape.slice_rows(hidden, len - self.cfg.n_queries, self.cfg.n_queries);
        Ok(self.project(tape, p, Stream::Dst, tail))
    }

    pub fn rts(&self, tape: &mut Tape, p: &Bound, prompt: Var) -> Result<Var> {
        self.check_width(tape, prompt, self.cfg.d_c)?;
        Ok(self.project(tape, p, Stream::Rts, prompt))
    }

    pub fn ps(&self, tape: &mut Tape, p: &Bound, protos: Var) -> Result<Var> {
        self.check_width(tape, protos, self.cfg.proto_dim)?;
        Ok(self.project(tape, p, Stream::Ps, protos))
    }

    /// Fused condition on the tape for a prompt embedding and prototype rows.
    pub fn condition(&self, tape: &mut Tape, p: &Bound, prompt: &Mat, protos: &Mat) -> Result<Var> {
        let e = tape.constant(prompt.clone());
        let pr = tape.constant(protos.clone());
        let dst = self.hls(tape, p, e)?;
        let rts = self.rts(tape, p, e)?;
        let ps = self.ps(tape, p, pr)?;
        Ok(tape.concat_rows(&[dst, rts, ps]))
    }

    /// Learned null condition with the segment layout `(N_q, rts_len, ps_len)`.
    pub fn null_condition(&self, tape: &mut Tape, p: &Bound, rts_len: usize, ps_len: usize) -> Var {
        let rts = tape.gather_rows(p.get("null.rts"), &vec![0; rts_len]);
        let ps = tape.gather_rows(p.get("null.ps"), &vec![0; ps_len]);
        tape.concat_rows(&[p.get("null.dst"), rts, ps])
    }

    fn eval(&self, params: &ParamSet, f: impl FnOnce(&mut Tape, &Bound) -> Result<Var>) -> Result<Mat> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let out = f(&mut tape, &p)?;
        Ok(tape.value(out).clone())
    }

    pub fn hls_forward(&self, params: &ParamSet, prompt: &Mat) -> Result<Mat> {
        self.eval(params, |t, p| {
            let e = t.constant(prompt.clone());
            self.hls(t, p, e)
        })
    }

    pub fn rts_forward(&self, params: &ParamSet, prompt: &Mat) -> Result<Mat> {
        self.eval(params, |t, p| {
            let e = t.constant(prompt.clone());
            self.rts(t, p, e)
        })
    }

    pub fn ps_forward(&self, params: &ParamSet, protos: &Mat) -> Result<Mat> {
        self.eval(params, |t, p| {
            let x = t.constant(protos.clone());
            self.ps(t, p, x)
        })
    }

    pub fn compose(&self, params: &ParamSet, prompt: &Mat, protos: &Mat) -> Result<CompositeCondition> {
        let dst = self.hls_forward(params, prompt)?;
        let rts = self.rts_forward(params, prompt)?;
        let ps = self.ps_forward(params, protos)?;
        fuse(&dst, &rts, &ps)
    }

    pub fn null_composite(&self, params: &ParamSet, rts_len: usize, ps_len: usize) -> Result<CompositeCondition> {
        let tokens = self.eval(params, |t, p| Ok(self.null_condition(t, p, rts_len, ps_len)))?;
        let a = self.cfg.n_queries;
        Ok(CompositeCondition {
            tokens,
            boundaries: [0, a, a + rts_len, a + rts_len + ps_len],
        })
    }
}
