//! EEG encoder: stacked-conv patch embedding, multi-scale spatial blocks,
//! DE/PSD fusion by cross-attention, a temporal transformer, and an output
//! head.
//!
//! Every stage works on batches. A batch of `B` samples `[B, T, F, H, W]` is
//! treated as `B·T·F` independent maps in the spatial stage, `B·T` band
//! sequences in the fusion stage and `B` frame sequences in the temporal
//! stage.

mod config;

use crate::autodiff::{xavier_uniform, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::featurize::Sample4D;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::{self, Rng};

pub use config::{DecoderQuery, HeadKind, ModelConfig, MULTISCALE_KERNELS, PATCH_KERNEL};

/// Which feature stream a spatial encoder belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    De,
    Psd,
}

impl Branch {
    fn prefix(self) -> &'static str {
        match self {
            Branch::De => "de",
            Branch::Psd => "psd",
        }
    }
}

/// Per-forward state: the dropout RNG (training only) and recorded
/// intermediate nodes for inspection.
#[derive(Default)]
pub struct Pass {
    pub train_rng: Option<Rng>,
    /// Every attention weight matrix, `[S·heads, Nq, Nk]`.
    pub attention: Vec<Var>,
    /// Decoder cross-attention context before the output projection,
    /// `[S, F, D]`.
    pub decoder_context: Vec<Var>,
}

impl Pass {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(rng: Rng) -> Self {
        Self {
            train_rng: Some(rng),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Standard deviation of the learned position tables at initialisation.
pub const POSITION_INIT_STD: f64 = 1.0;

struct Init<'a> {
    store: ParamStore,
    rng: &'a mut Rng,
}

impl Init<'_> {
    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        let w = xavier_uniform(self.rng, &[din, dout], din, dout);
        self.store.add(format!("{name}.w"), w)?;
        self.store.add(format!("{name}.b"), Tensor::zeros(&[dout]))?;
        Ok(())
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> Result<()> {
        let w = xavier_uniform(self.rng, &[cout, cin, k, k], cin * k * k, cout * k * k);
        self.store.add(format!("{name}.w"), w)?;
        let a = 1.0 / ((cin * k * k) as f64).sqrt();
        let b = Tensor::from_fn(&[cout], |_| self.rng.random_range(-a..a));
        self.store.add(format!("{name}.b"), b)?;
        Ok(())
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<()> {
        self.store.add(format!("{name}.g"), Tensor::full(&[d], 1.0))?;
        self.store.add(format!("{name}.b"), Tensor::zeros(&[d]))?;
        Ok(())
    }

    fn table(&mut self, name: &str, n: usize, d: usize) -> Result<()> {
        let normal = Normal::new(0.0, POSITION_INIT_STD).expect("valid std");
        let t = Tensor::from_fn(&[n, d], |_| normal.sample(self.rng));
        self.store.add(name, t)?;
        Ok(())
    }

    /// The key projection has no bias: it would shift every score of a
    /// query row by the same amount, which softmax ignores.
    fn attention(&mut self, name: &str, d: usize) -> Result<()> {
        for p in ["q", "v", "o"] {
            self.dense(&format!("{name}.{p}"), d, d)?;
        }
        let w = xavier_uniform(self.rng, &[d, d], d, d);
        self.store.add(format!("{name}.k.w"), w)?;
        Ok(())
    }

    fn ffn(&mut self, name: &str, d: usize, ratio: usize) -> Result<()> {
        self.dense(&format!("{name}.fc1"), d, d * ratio)?;
        self.dense(&format!("{name}.fc2"), d * ratio, d)
    }

    fn encoder_block(&mut self, name: &str, d: usize, ratio: usize) -> Result<()> {
        self.norm(&format!("{name}.ln1"), d)?;
        self.attention(&format!("{name}.attn"), d)?;
        self.norm(&format!("{name}.ln2"), d)?;
        self.ffn(&format!("{name}.ffn"), d, ratio)
    }
}

impl Model {
    /// Builds a model with seeded initial parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng(seed, &[0x6d6f_6465_6c]);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut r,
        };
        let d = cfg.embed_dim;
        let n = cfg.tokens();
        for branch in [Branch::De, Branch::Psd] {
            let pre = branch.prefix();
            let mut cin = 1;
            for (i, &cout) in cfg.patch_conv_channels.iter().enumerate() {
                init.conv(&format!("{pre}.embed.conv{i}"), cout, cin, PATCH_KERNEL)?;
                cin = cout;
            }
            init.table(&format!("{pre}.embed.pos"), n, d)?;
            for b in 0..cfg.spatial_blocks {
                let name = format!("{pre}.spatial{b}");
                init.norm(&format!("{name}.ln1"), d)?;
                init.attention(&format!("{name}.attn"), d)?;
                init.norm(&format!("{name}.ln2"), d)?;
                for k in MULTISCALE_KERNELS {
                    init.conv(&format!("{name}.ms{k}"), d, d, k)?;
                }
            }
            init.table(&format!("lego.{pre}.pos"), cfg.bands, d)?;
            for l in 0..cfg.lego_layers {
                init.encoder_block(&format!("lego.{pre}.enc{l}"), d, cfg.ffn_ratio)?;
            }
            init.norm(&format!("lego.{pre}.ln_out"), d)?;
        }
        init.norm("lego.dec.ln_q", d)?;
        init.attention("lego.dec.attn", d)?;
        init.norm("lego.dec.ln2", d)?;
        init.ffn("lego.dec.ffn", d, cfg.ffn_ratio)?;
        init.table("temporal.pos", cfg.frames, d)?;
        for l in 0..cfg.temporal_layers {
            init.encoder_block(&format!("temporal.enc{l}"), d, cfg.ffn_ratio)?;
        }
        init.norm("temporal.ln_out", d)?;
        match cfg.head {
            HeadKind::Matching => {
                init.dense("proj", d, cfg.proj_dim)?;
                init.store.add("logit_scale", Tensor::scalar((1.0 / cfg.temperature).ln()))?;
            }
            HeadKind::Linear { classes } => init.dense("head", d, classes)?,
        }
        Ok(Self {
            params: init.store,
            cfg,
        })
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Binds the named parameter in `g`.
    pub fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::config("params", format!("model has no parameter {name}")))?;
        Ok(g.param(&self.params, id))
    }

    fn dense(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let gamma = self.p(g, &format!("{name}.g"))?;
        let beta = self.p(g, &format!("{name}.b"))?;
        g.layer_norm(x, gamma, beta)
    }

    fn conv(&self, g: &mut Graph, x: Var, name: &str, stride: usize, pad: usize) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        g.conv2d(x, w, Some(b), stride, pad)
    }

    fn dropout(&self, g: &mut Graph, x: Var, pass: &mut Pass) -> Result<Var> {
        match pass.train_rng.as_mut() {
            Some(r) if self.cfg.dropout > 0.0 => g.dropout(x, self.cfg.dropout, r),
            _ => Ok(x),
        }
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (s, n, h, dh) = (g.shape(x)[0], g.shape(x)[1], self.cfg.heads, self.cfg.head_dim());
        if h == 1 {
            return Ok(x);
        }
        let x = g.reshape(x, &[s, n, h, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[s * h, n, dh])
    }

    fn merge_heads(&self, g: &mut Graph, x: Var, s: usize) -> Result<Var> {
        let (h, dh) = (self.cfg.heads, self.cfg.head_dim());
        if h == 1 {
            return Ok(x);
        }
        let n = g.shape(x)[1];
        let x = g.reshape(x, &[s, h, n, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[s, n, h * dh])
    }

    /// Multi-head attention of queries `[S, Nq, D]` over `[S, Nk, D]`.
    /// Returns the output and the pre-projection context.
    fn attention(&self, g: &mut Graph, q_in: Var, kv_in: Var, name: &str, pass: &mut Pass) -> Result<(Var, Var)> {
        let s = g.shape(q_in)[0];
        let q = self.dense(g, q_in, &format!("{name}.q"))?;
        let wk = self.p(g, &format!("{name}.k.w"))?;
        let k = g.matmul(kv_in, wk)?;
        let v = self.dense(g, kv_in, &format!("{name}.v"))?;
        let (q, k, v) = (self.split_heads(g, q)?, self.split_heads(g, k)?, self.split_heads(g, v)?);
        let scores = g.matmul_t(q, k)?;
        let scores = g.scale(scores, 1.0 / (self.cfg.head_dim() as f64).sqrt())?;
        let weights = g.softmax(scores)?;
        pass.attention.push(weights);
        let ctx = g.matmul(weights, v)?;
        let ctx = self.merge_heads(g, ctx, s)?;
        let out = self.dense(g, ctx, &format!("{name}.o"))?;
        Ok((out, ctx))
    }

    fn ffn(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let h = self.dense(g, x, &format!("{name}.fc1"))?;
        let h = g.gelu(h)?;
        self.dense(g, h, &format!("{name}.fc2"))
    }

    /// Pre-norm transformer block on `[S, N, D]`.
    fn encoder_block(&self, g: &mut Graph, x: Var, name: &str, pass: &mut Pass) -> Result<Var> {
        let h = self.norm(g, x, &format!("{name}.ln1"))?;
        let (a, _) = self.attention(g, h, h, &format!("{name}.attn"), pass)?;
        let a = self.dropout(g, a, pass)?;
        let x = g.add(x, a)?;
        let h = self.norm(g, x, &format!("{name}.ln2"))?;
        let f = self.ffn(g, h, &format!("{name}.ffn"))?;
        let f = self.dropout(g, f, pass)?;
        g.add(x, f)
    }

    /// Stacked patch convolutions on maps `[M, 1, H, W]`, giving tokens
    /// `[M, N, D]` with the position table added.
    pub fn embed_patches(&self, g: &mut Graph, maps: Var, branch: Branch) -> Result<Var> {
        let pre = branch.prefix();
        let shape = g.shape(maps).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.cfg.height || shape[3] != self.cfg.width {
            return Err(Error::shape(
                "embed_patches",
                format!("maps {shape:?}, expected [M, 1, {}, {}]", self.cfg.height, self.cfg.width),
            ));
        }
        let mut x = maps;
        for (i, &stride) in self.cfg.patch_conv_strides.iter().enumerate() {
            x = self.conv(g, x, &format!("{pre}.embed.conv{i}"), stride, PATCH_KERNEL / 2)?;
            x = g.gelu(x)?;
        }
        let (m, d, n) = (shape[0], self.cfg.embed_dim, self.cfg.tokens());
        let x = g.reshape(x, &[m, d, n])?;
        let x = g.permute(x, &[0, 2, 1])?;
        let pos = self.p(g, &format!("{pre}.embed.pos"))?;
        g.add_position(x, pos)
    }

    /// Attention block whose feed-forward part is a sum of 1×1, 3×3 and 5×5
    /// convolutions over the token grid. Tokens `[M, N, D]` with `N` square.
    pub fn spatial_block(&self, g: &mut Graph, x: Var, name: &str, pass: &mut Pass) -> Result<Var> {
        let [m, n, d] = g.shape(x)[..] else {
            return Err(Error::shape("spatial_block", format!("tokens {:?}", g.shape(x))));
        };
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::shape("spatial_block", format!("{n} tokens do not form a square grid")));
        }
        let h = self.norm(g, x, &format!("{name}.ln1"))?;
        let (a, _) = self.attention(g, h, h, &format!("{name}.attn"), pass)?;
        let a = self.dropout(g, a, pass)?;
        let x = g.add(x, a)?;
        let h = self.norm(g, x, &format!("{name}.ln2"))?;
        let h = g.permute(h, &[0, 2, 1])?;
        let h = g.reshape(h, &[m, d, side, side])?;
        let mut sum = None;
        for k in MULTISCALE_KERNELS {
            let c = self.conv(g, h, &format!("{name}.ms{k}"), 1, k / 2)?;
            sum = Some(match sum {
                None => c,
                Some(s) => g.add(s, c)?,
            });
        }
        let c = g.gelu(sum.expect("three kernels"))?;
        let c = g.reshape(c, &[m, d, n])?;
        let c = g.permute(c, &[0, 2, 1])?;
        let c = self.dropout(g, c, pass)?;
        g.add(x, c)
    }

    /// `[B, T, F, H, W]` → `[B, T, F, D]`, one pooled vector per map.
    pub fn spatial_encode(&self, g: &mut Graph, x: Var, branch: Branch, pass: &mut Pass) -> Result<Var> {
        let [b, t, f, h, w] = g.shape(x)[..] else {
            return Err(Error::shape("spatial_encode", format!("input {:?}", g.shape(x))));
        };
        let maps = g.reshape(x, &[b * t * f, 1, h, w])?;
        let mut tokens = self.embed_patches(g, maps, branch)?;
        for i in 0..self.cfg.spatial_blocks {
            tokens = self.spatial_block(g, tokens, &format!("{}.spatial{i}", branch.prefix()), pass)?;
        }
        let pooled = g.mean(tokens, 1)?;
        g.reshape(pooled, &[b, t, f, self.cfg.embed_dim])
    }

    fn lego_encoder(&self, g: &mut Graph, x: Var, branch: Branch, pass: &mut Pass) -> Result<Var> {
        let pre = branch.prefix();
        let pos = self.p(g, &format!("lego.{pre}.pos"))?;
        let mut x = g.add_position(x, pos)?;
        for l in 0..self.cfg.lego_layers {
            x = self.encoder_block(g, x, &format!("lego.{pre}.enc{l}"), pass)?;
        }
        self.norm(g, x, &format!("lego.{pre}.ln_out"))
    }

    /// Fuses band sequences `[S, F, D]` of both streams into `[S, D]`.
    pub fn legoformer_fuse(&self, g: &mut Graph, de: Var, psd: Var, pass: &mut Pass) -> Result<Var> {
        if g.shape(de) != g.shape(psd) || g.shape(de).len() != 3 {
            return Err(Error::shape(
                "legoformer_fuse",
                format!("{:?} vs {:?}", g.shape(de), g.shape(psd)),
            ));
        }
        let e_de = self.lego_encoder(g, de, Branch::De, pass)?;
        let e_psd = self.lego_encoder(g, psd, Branch::Psd, pass)?;
        let query = match self.cfg.decoder_query {
            DecoderQuery::Psd => e_psd,
            DecoderQuery::Sum => g.add(e_psd, e_de)?,
        };
        let q = self.norm(g, query, "lego.dec.ln_q")?;
        let (a, ctx) = self.attention(g, q, e_de, "lego.dec.attn", pass)?;
        pass.decoder_context.push(ctx);
        let a = self.dropout(g, a, pass)?;
        let y = g.add(query, a)?;
        let h = self.norm(g, y, "lego.dec.ln2")?;
        let f = self.ffn(g, h, "lego.dec.ffn")?;
        let f = self.dropout(g, f, pass)?;
        let y = g.add(y, f)?;
        g.mean(y, 1)
    }

    /// Frame sequence `[B, T, D]` → `[B, D]`. Sequences shorter than the
    /// configured frame count use the leading rows of the position table.
    pub fn temporal_encode(&self, g: &mut Graph, seq: Var, pass: &mut Pass) -> Result<Var> {
        let t = g.shape(seq).get(1).copied().unwrap_or(0);
        if g.shape(seq).len() != 3 || t == 0 || t > self.cfg.frames {
            return Err(Error::shape("temporal_encode", format!("sequence {:?}", g.shape(seq))));
        }
        let mut pos = self.p(g, "temporal.pos")?;
        if t < self.cfg.frames {
            pos = g.narrow(pos, 0, 0, t)?;
        }
        let mut x = g.add_position(seq, pos)?;
        for l in 0..self.cfg.temporal_layers {
            x = self.encoder_block(g, x, &format!("temporal.enc{l}"), pass)?;
        }
        let x = self.norm(g, x, "temporal.ln_out")?;
        g.mean(x, 1)
    }

    /// Full encoder on `[B, T, F, H, W]` DE and PSD inputs → `[B, D]`.
    pub fn encode(&self, g: &mut Graph, de: Var, psd: Var, pass: &mut Pass) -> Result<Var> {
        let want = [self.cfg.frames, self.cfg.bands, self.cfg.height, self.cfg.width];
        for x in [de, psd] {
            if g.shape(x).len() != 5 || g.shape(x)[1..] != want {
                return Err(Error::shape(
                    "encode",
                    format!("input {:?}, expected [B, {want:?}]", g.shape(x)),
                ));
            }
        }
        let b = g.shape(de)[0];
        let (t, f, d) = (self.cfg.frames, self.cfg.bands, self.cfg.embed_dim);
        let de_tok = self.spatial_encode(g, de, Branch::De, pass)?;
        let psd_tok = self.spatial_encode(g, psd, Branch::Psd, pass)?;
        let de_tok = g.reshape(de_tok, &[b * t, f, d])?;
        let psd_tok = g.reshape(psd_tok, &[b * t, f, d])?;
        let fused = self.legoformer_fuse(g, de_tok, psd_tok, pass)?;
        let seq = g.reshape(fused, &[b, t, d])?;
        self.temporal_encode(g, seq, pass)
    }

    /// Unit-norm projection `[B, proj_dim]` (matching head) or class logits
    /// `[B, K]` (linear head).
    pub fn head(&self, g: &mut Graph, features: Var) -> Result<Var> {
        match self.cfg.head {
            HeadKind::Matching => {
                let z = self.dense(g, features, "proj")?;
                g.l2_normalize(z)
            }
            HeadKind::Linear { .. } => self.dense(g, features, "head"),
        }
    }

    pub fn forward(&self, g: &mut Graph, de: Var, psd: Var, pass: &mut Pass) -> Result<Var> {
        let f = self.encode(g, de, psd, pass)?;
        self.head(g, f)
    }

    /// Learnable `ln(1/τ)`; `None` for a linear head.
    pub fn logit_scale(&self, g: &mut Graph) -> Option<Var> {
        self.params.id("logit_scale").map(|id| g.param(&self.params, id))
    }

    /// Stacks samples into constant `[B, T, F, H, W]` DE and PSD inputs.
    pub fn inputs(&self, g: &mut Graph, samples: &[&Sample4D]) -> Result<(Var, Var)> {
        let (de, psd) = stack_samples(samples, &self.cfg)?;
        Ok((g.constant(de)?, g.constant(psd)?))
    }

    /// Eval-mode head outputs, one row per sample, computed in batches.
    pub fn predict_rows(&self, samples: &[&Sample4D], batch: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch.max(1)) {
            let mut g = Graph::new();
            let (de, psd) = self.inputs(&mut g, chunk)?;
            let y = self.forward(&mut g, de, psd, &mut Pass::eval())?;
            let width = g.value(y).last_dim();
            out.extend(g.value(y).data.chunks(width).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Stacks samples into `[B, T, F, H, W]` DE and PSD tensors.
pub fn stack_samples(samples: &[&Sample4D], cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let want = [cfg.frames, cfg.bands, cfg.height, cfg.width];
    if samples.is_empty() {
        return Err(Error::Empty("sample batch"));
    }
    let per: usize = want.iter().product();
    let mut de = Vec::with_capacity(samples.len() * per);
    let mut psd = Vec::with_capacity(samples.len() * per);
    for s in samples {
        if s.shape != want {
            return Err(Error::shape(
                "stack_samples",
                format!("sample shape {:?} vs model input {want:?}", s.shape),
            ));
        }
        de.extend_from_slice(&s.de);
        psd.extend_from_slice(&s.psd);
    }
    let mut shape = vec![samples.len()];
    shape.extend(want);
    Ok((Tensor::new(shape.clone(), de)?, Tensor::new(shape, psd)?))
}

#[cfg(test)]
mod tests;
