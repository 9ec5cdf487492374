use rand::Rng as _;

use super::*;
use crate::autodiff::{grad_check, grad_check_params, DEFAULT_STEP};

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::rng(seed, &[]);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn toy(frames: usize, bands: usize, side: usize) -> ModelConfig {
    ModelConfig {
        frames,
        bands,
        height: side,
        width: side,
        ..ModelConfig::toy()
    }
}

fn zero_param(m: &mut Model, name: &str) {
    let id = m.params.id(name).unwrap();
    m.params.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_tensor(seed, g.shape(y)))?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn attention_rows_sum_to_one(g: &Graph, pass: &Pass) {
    assert!(!pass.attention.is_empty());
    for &a in &pass.attention {
        let t = g.value(a);
        for row in t.data.chunks(t.last_dim()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    assert!(ModelConfig::toy().validate().is_ok());
    let bad = ModelConfig {
        heads: 3,
        ..ModelConfig::toy()
    };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig { .. })));
    let bad = ModelConfig {
        height: 20,
        ..ModelConfig::toy()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        patch_conv_channels: vec![4, 8, 8, 16],
        ..ModelConfig::toy()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn patch_embedding_stride_arithmetic() {
    let m = Model::new(toy(1, 1, 32), 1).unwrap();
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(2, &[3, 1, 32, 32])).unwrap();
    let t = m.embed_patches(&mut g, x, Branch::De).unwrap();
    assert_eq!(g.shape(t), &[3, 16, 8]);
    let bad = g.constant(rand_tensor(2, &[3, 1, 16, 16])).unwrap();
    assert!(m.embed_patches(&mut g, bad, Branch::De).is_err());
}

#[test]
fn zero_input_without_biases_gives_position_table() {
    let mut m = Model::new(toy(1, 1, 16), 3).unwrap();
    for i in 0..4 {
        zero_param(&mut m, &format!("psd.embed.conv{i}.b"));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 1, 16, 16])).unwrap();
    let t = m.embed_patches(&mut g, x, Branch::Psd).unwrap();
    let pos = m.params.value(m.params.id("psd.embed.pos").unwrap());
    for item in g.value(t).data.chunks(pos.numel()) {
        assert_eq!(item, &pos.data[..]);
    }
}

#[test]
fn every_patch_kernel_receives_gradient() {
    let m = Model::new(toy(1, 1, 16), 4).unwrap();
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(5, &[2, 1, 16, 16])).unwrap();
    let t = m.embed_patches(&mut g, x, Branch::De).unwrap();
    let l = weighted_sum(&mut g, t, 6).unwrap();
    g.backward(l).unwrap();
    for i in 0..4 {
        let id = m.params.id(&format!("de.embed.conv{i}.w")).unwrap();
        let v = g.param(&m.params, id);
        let gr = g.grad(v).unwrap();
        assert!(gr.iter().any(|v| v.abs() > 0.0), "conv{i}");
    }
}

#[test]
fn spatial_block_single_token() {
    let m = Model::new(toy(1, 1, 8), 7).unwrap();
    assert_eq!(m.cfg.tokens(), 1);
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(8, &[3, 1, 8])).unwrap();
    let mut pass = Pass::eval();
    let y = m.spatial_block(&mut g, x, "de.spatial0", &mut pass).unwrap();
    assert_eq!(g.shape(y), &[3, 1, 8]);
    assert!(g.value(y).data.iter().all(|v| v.is_finite()));
    attention_rows_sum_to_one(&g, &pass);
    // With one key, every weight is exactly one.
    assert!(g.value(pass.attention[0]).data.iter().all(|&w| w == 1.0));
}

#[test]
fn spatial_block_rejects_non_square() {
    let m = Model::new(toy(1, 1, 16), 7).unwrap();
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(8, &[1, 3, 8])).unwrap();
    assert!(m.spatial_block(&mut g, x, "de.spatial0", &mut Pass::eval()).is_err());
}

#[test]
fn multiscale_branch_ablation() {
    let full = Model::new(toy(1, 1, 16), 9).unwrap();
    let mut pointwise = full.clone();
    for k in [3, 5] {
        zero_param(&mut pointwise, &format!("de.spatial0.ms{k}.w"));
        zero_param(&mut pointwise, &format!("de.spatial0.ms{k}.b"));
    }
    let x0 = rand_tensor(10, &[2, 4, 8]);
    let run = |m: &Model| {
        let mut g = Graph::new();
        let x = g.constant(x0.clone()).unwrap();
        let y = m.spatial_block(&mut g, x, "de.spatial0", &mut Pass::eval()).unwrap();
        g.value(y).clone()
    };
    let (yf, yp) = (run(&full), run(&pointwise));
    assert!(yf.data.iter().zip(&yp.data).any(|(a, b)| (a - b).abs() > 1e-6));

    // Pointwise oracle: x + a + gelu(LN2(x + a) · W1 + b1), with the 1×1
    // kernel applied as a per-token matrix product.
    let mut g = Graph::new();
    let x = g.constant(x0.clone()).unwrap();
    let m = &pointwise;
    let h = m.norm(&mut g, x, "de.spatial0.ln1").unwrap();
    let (a, _) = m.attention(&mut g, h, h, "de.spatial0.attn", &mut Pass::eval()).unwrap();
    let xa = g.add(x, a).unwrap();
    let h = m.norm(&mut g, xa, "de.spatial0.ln2").unwrap();
    let k1 = m.params.value(m.params.id("de.spatial0.ms1.w").unwrap());
    let b1 = m.params.value(m.params.id("de.spatial0.ms1.b").unwrap());
    let (hv, xav) = (g.value(h).clone(), g.value(xa).clone());
    let d = 8;
    for tok in 0..hv.numel() / d {
        for o in 0..d {
            let mut s = b1.data[o];
            for c in 0..d {
                s += k1.data[o * d + c] * hv.data[tok * d + c];
            }
            let gelu = 0.5 * s * (1.0 + (0.797_884_560_802_865_4 * (s + 0.044_715 * s * s * s)).tanh());
            let want = xav.data[tok * d + o] + gelu;
            assert!((want - yp.data[tok * d + o]).abs() < 1e-12);
        }
    }
}

#[test]
fn spatial_encode_shapes_and_band_equivariance() {
    let m = Model::new(toy(1, 6, 16), 11).unwrap();
    let x0 = rand_tensor(12, &[1, 1, 6, 16, 16]);
    let mut g = Graph::new();
    let x = g.constant(x0.clone()).unwrap();
    let de = m.spatial_encode(&mut g, x, Branch::De, &mut Pass::eval()).unwrap();
    let psd = m.spatial_encode(&mut g, x, Branch::Psd, &mut Pass::eval()).unwrap();
    assert_eq!(g.shape(de), &[1, 1, 6, 8]);
    assert_eq!(g.shape(psd), &[1, 1, 6, 8]);

    let perm = [3, 0, 5, 1, 4, 2];
    let mut xp = x0.clone();
    for (f, &src) in perm.iter().enumerate() {
        xp.data[f * 256..(f + 1) * 256].copy_from_slice(&x0.data[src * 256..(src + 1) * 256]);
    }
    let xpv = g.constant(xp).unwrap();
    let dep = m.spatial_encode(&mut g, xpv, Branch::De, &mut Pass::eval()).unwrap();
    let (a, b) = (g.value(de).data.clone(), g.value(dep).data.clone());
    for (f, &src) in perm.iter().enumerate() {
        assert_eq!(&b[f * 8..(f + 1) * 8], &a[src * 8..(src + 1) * 8]);
    }
}

#[test]
fn spatial_encode_grad_check() {
    let m = Model::new(toy(1, 2, 8), 13).unwrap();
    let err = grad_check(
        |g, x| {
            let y = m.spatial_encode(g, x, Branch::De, &mut Pass::eval())?;
            weighted_sum(g, y, 14)
        },
        &rand_tensor(15, &[1, 1, 2, 8, 8]),
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn legoformer_shape_and_reachability() {
    let m = Model::new(toy(1, 6, 16), 16).unwrap();
    let mut g = Graph::new();
    let de = g.leaf(rand_tensor(17, &[2, 6, 8]), true).unwrap();
    let psd = g.leaf(rand_tensor(18, &[2, 6, 8]), true).unwrap();
    let mut pass = Pass::eval();
    let y = m.legoformer_fuse(&mut g, de, psd, &mut pass).unwrap();
    assert_eq!(g.shape(y), &[2, 8]);
    attention_rows_sum_to_one(&g, &pass);
    let l = weighted_sum(&mut g, y, 19).unwrap();
    g.backward(l).unwrap();
    for v in [de, psd] {
        assert!(g.grad(v).unwrap().iter().fold(0.0f64, |m, x| m.max(x.abs())) > 0.0);
    }
    let bad = g.constant(rand_tensor(18, &[2, 5, 8])).unwrap();
    assert!(m.legoformer_fuse(&mut g, de, bad, &mut Pass::eval()).is_err());
}

#[test]
fn uniform_decoder_attention_averages_de_values() {
    let mut m = Model::new(toy(1, 4, 16), 20).unwrap();
    for p in ["q.w", "q.b", "k.w"] {
        zero_param(&mut m, &format!("lego.dec.attn.{p}"));
    }
    let mut g = Graph::new();
    let de = g.constant(rand_tensor(21, &[1, 4, 8])).unwrap();
    let psd = g.constant(rand_tensor(22, &[1, 4, 8])).unwrap();
    let mut pass = Pass::eval();
    m.legoformer_fuse(&mut g, de, psd, &mut pass).unwrap();
    let ctx = g.value(pass.decoder_context[0]).clone();

    // Hand-computed: mean over bands of E_de · Wv + bv.
    let e_de = m.lego_encoder(&mut g, de, Branch::De, &mut Pass::eval()).unwrap();
    let e = g.value(e_de).clone();
    let wv = m.params.value(m.params.id("lego.dec.attn.v.w").unwrap());
    let bv = m.params.value(m.params.id("lego.dec.attn.v.b").unwrap());
    let mut mean = vec![0.0; 8];
    for f in 0..4 {
        for o in 0..8 {
            let mut s = bv.data[o];
            for c in 0..8 {
                s += e.data[f * 8 + c] * wv.data[c * 8 + o];
            }
            mean[o] += s / 4.0;
        }
    }
    for f in 0..4 {
        for o in 0..8 {
            assert!((ctx.data[f * 8 + o] - mean[o]).abs() <= 1e-12);
        }
    }
}

#[test]
fn temporal_single_frame_and_duplication() {
    let mut m = Model::new(toy(4, 1, 16), 23).unwrap();
    let mut g = Graph::new();
    let one = g.constant(rand_tensor(24, &[2, 1, 8])).unwrap();
    let y = m.temporal_encode(&mut g, one, &mut Pass::eval()).unwrap();
    assert_eq!(g.shape(y), &[2, 8]);

    zero_param(&mut m, "temporal.pos");
    let base = rand_tensor(25, &[1, 2, 8]);
    let mut dup = base.data.clone();
    dup.extend_from_slice(&base.data);
    let mut g = Graph::new();
    let a = g.constant(base).unwrap();
    let b = g.constant(Tensor::new(vec![1, 4, 8], dup).unwrap()).unwrap();
    let ya = m.temporal_encode(&mut g, a, &mut Pass::eval()).unwrap();
    let yb = m.temporal_encode(&mut g, b, &mut Pass::eval()).unwrap();
    for (p, q) in g.value(ya).data.iter().zip(&g.value(yb).data) {
        assert!((p - q).abs() <= 1e-9);
    }
    let long = g.constant(rand_tensor(26, &[1, 5, 8])).unwrap();
    assert!(m.temporal_encode(&mut g, long, &mut Pass::eval()).is_err());
}

#[test]
fn temporal_grad_check() {
    let m = Model::new(toy(3, 1, 16), 27).unwrap();
    let err = grad_check(
        |g, x| {
            let y = m.temporal_encode(g, x, &mut Pass::eval())?;
            weighted_sum(g, y, 28)
        },
        &rand_tensor(29, &[2, 3, 8]),
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

fn sample(seed: u64, cfg: &ModelConfig) -> Sample4D {
    let shape = [cfg.frames, cfg.bands, cfg.height, cfg.width];
    Sample4D {
        shape,
        de: rand_tensor(seed, &shape).data,
        psd: rand_tensor(seed + 1, &shape).data,
        label: "x".into(),
        label_index: 0,
        subject_id: 1,
        session_id: 1,
        trial_id: 0,
        block: 0,
    }
}

#[test]
fn forward_is_unit_norm_and_deterministic() {
    let m = Model::new(toy(2, 3, 16), 30).unwrap();
    let s = sample(31, &m.cfg);
    let t = sample(33, &m.cfg);
    let rows = m.predict_rows(&[&s, &t, &s], 2).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.len(), 16);
        let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
    }
    assert_eq!(rows[0], rows[2]);
    assert_ne!(rows[0], rows[1]);

    let mut g = Graph::new();
    let (de, psd) = m.inputs(&mut g, &[&s, &t]).unwrap();
    let mut pass = Pass::eval();
    m.forward(&mut g, de, psd, &mut pass).unwrap();
    // spatial (2 branches) + lego encoders (2) + decoder + temporal
    assert_eq!(pass.attention.len(), 6);
    attention_rows_sum_to_one(&g, &pass);
}

#[test]
fn wrong_sample_shape_is_rejected() {
    let m = Model::new(toy(2, 3, 16), 30).unwrap();
    let s = sample(31, &toy(2, 3, 8));
    assert!(matches!(m.predict_rows(&[&s], 1), Err(Error::Shape { .. })));
}

#[test]
fn decoder_query_switch_changes_output() {
    let a = Model::new(toy(1, 3, 16), 34).unwrap();
    let b = Model::new(
        ModelConfig {
            decoder_query: DecoderQuery::Sum,
            ..a.cfg.clone()
        },
        34,
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    let s = sample(35, &a.cfg);
    assert_ne!(a.predict_rows(&[&s], 1).unwrap(), b.predict_rows(&[&s], 1).unwrap());
}

#[test]
fn heads_differ_structurally() {
    let a = Model::new(
        ModelConfig {
            head: HeadKind::Linear { classes: 3 },
            ..ModelConfig::toy()
        },
        36,
    )
    .unwrap();
    let b = Model::new(ModelConfig::toy(), 36).unwrap();
    assert_eq!(a.params.value(a.params.id("head.w").unwrap()).shape, vec![8, 3]);
    assert!(a.params.id("proj.w").is_none() && a.params.id("logit_scale").is_none());
    assert_eq!(b.params.value(b.params.id("proj.w").unwrap()).shape, vec![8, 16]);
    assert!(b.params.id("head.w").is_none());
    let ls = b.params.value(b.params.id("logit_scale").unwrap()).item();
    assert!((ls - (1.0f64 / 0.07).ln()).abs() < 1e-15);
}

/// Independent count of the parameters implied by a configuration.
fn count_oracle(c: &ModelConfig) -> usize {
    let d = c.embed_dim;
    let dense = |i: usize, o: usize| i * o + o;
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let ln = 2 * d;
    let attn = 3 * dense(d, d) + d * d;
    let ffn = dense(d, d * c.ffn_ratio) + dense(d * c.ffn_ratio, d);
    let block = 2 * ln + attn + ffn;
    let mut embed = 0;
    let mut cin = 1;
    for &o in &c.patch_conv_channels {
        embed += conv(cin, o, 3);
        cin = o;
    }
    let n = c.tokens();
    let spatial = 2 * ln + attn + conv(d, d, 1) + conv(d, d, 3) + conv(d, d, 5);
    let branch = embed + n * d + c.spatial_blocks * spatial + c.bands * d + c.lego_layers * block + ln;
    let decoder = 2 * ln + attn + ffn;
    let temporal = c.frames * d + c.temporal_layers * block + ln;
    let head = match c.head {
        HeadKind::Matching => dense(d, c.proj_dim) + 1,
        HeadKind::Linear { classes } => dense(d, classes),
    };
    2 * branch + decoder + temporal + head
}

/// Frozen parameter count of the default configuration.
const DEFAULT_PARAM_COUNT: usize = 582_529;

#[test]
fn parameter_count() {
    for cfg in [
        ModelConfig::default(),
        ModelConfig::toy(),
        toy(2, 3, 8),
        ModelConfig {
            spatial_blocks: 2,
            lego_layers: 3,
            temporal_layers: 2,
            head: HeadKind::Linear { classes: 4 },
            ..ModelConfig::toy()
        },
    ] {
        assert_eq!(Model::new(cfg.clone(), 0).unwrap().param_count(), count_oracle(&cfg));
    }
    assert_eq!(Model::new(ModelConfig::default(), 0).unwrap().param_count(), DEFAULT_PARAM_COUNT);
}

#[test]
fn full_model_grad_check_sampled() {
    let m = Model::new(toy(2, 3, 8), 37).unwrap();
    let s = sample(38, &m.cfg);
    let err = grad_check_params(
        |g, store| {
            let mm = Model {
                cfg: m.cfg.clone(),
                params: store.clone(),
            };
            let (de, psd) = mm.inputs(g, &[&s])?;
            let y = mm.forward(g, de, psd, &mut Pass::eval())?;
            weighted_sum(g, y, 39)
        },
        &m.params,
        DEFAULT_STEP,
        Some(3),
        40,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}
