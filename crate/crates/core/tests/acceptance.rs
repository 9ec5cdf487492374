//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines are always printed.

use std::collections::BTreeSet;
use std::f64::consts::{E, PI};
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use eegtext::autodiff::{grad_check, grad_check_many, grad_check_params, Graph, Tensor, Var, DEFAULT_STEP};
use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::featurize::{band_power_psd, differential_entropy, Psd, PsdEstimator, Sample4D, VARIANCE_FLOOR};
use eegtext::matching::logits_graph;
use eegtext::model::{HeadKind, Model, ModelConfig, Pass};
use eegtext::report::{acc_std_table, results_csv};
use eegtext::text_bank::{build_bank, BankSource, PromptTemplateSet, TextBank};
use eegtext::training_eval::{
    adamw_step, cosine_lr, cross_time_folds, loso_folds, nshot_plans, run_ablation, run_loso, run_nshot, AdamHyper,
    AdamState, Arm, Dataset, FoldResult, Protocol, RunConfig, CROSS_TIME_PAIRS, DEFAULT_SHOTS,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T>(r: eegtext::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let d = t.elapsed();
    ensure(d < limit, format!("took {d:.2?}, limit {limit:?}"))?;
    Ok(d)
}

// 1 -------------------------------------------------------------------------

fn de_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for sigma in [0.5, 1.0, 2.0] {
        let d = Normal::new(0.0, sigma).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        let want = 0.5 * (2.0 * PI * E * sigma * sigma).ln();
        let got = differential_entropy(&x, VARIANCE_FLOOR);
        let err = (got - want).abs();
        ensure(err <= 0.02, format!("sigma {sigma}: {got:.4} vs {want:.4}"))?;
        worst = worst.max(err);
    }
    let d = within(t, Duration::from_secs(1))?;
    Ok(format!("max |err| {worst:.4} nats in {d:.2?}"))
}

// 2 -------------------------------------------------------------------------

fn psd_parseval() -> Outcome {
    let t = Instant::now();
    let fs = 200.0;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise: Vec<f64> = (0..20_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / noise.len() as f64;
    let mut worst: f64 = 0.0;
    for est in [PsdEstimator::Periodogram, PsdEstimator::default()] {
        let psd = lib(Psd::estimate(&noise, fs, est))?;
        let edges = [0.0, 4.0, 8.0, 14.0, 31.0, 50.0, 75.0, 100.0];
        let total: f64 = edges.windows(2).map(|w| psd.band_power(w[0], w[1]).unwrap()).sum();
        let rel = (total / var - 1.0).abs();
        ensure(rel <= 0.05, format!("{est:?}: partition {total:.4} vs variance {var:.4}"))?;
        worst = worst.max(rel);
    }
    let sine: Vec<f64> = (0..2000).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
    let p = lib(band_power_psd(&sine, (8.0, 14.0), fs, PsdEstimator::default()))?;
    ensure((p - 0.5).abs() <= 0.05, format!("unit sine band power {p:.4}"))?;
    let d = within(t, Duration::from_secs(1))?;
    Ok(format!("partition rel err {worst:.4}, sine power {p:.4} in {d:.2?}"))
}

// 3 -------------------------------------------------------------------------

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> eegtext::Result<Var> {
    let w = g.constant(rand_tensor(seed, g.shape(y)))?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> eegtext::Result<Var>>;

fn smooth_ops() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn s(v: &[&[usize]]) -> Vec<Vec<usize>> {
        v.iter().map(|x| x.to_vec()).collect()
    }
    vec![
        ("add", s(&[&[3, 4], &[3, 4]]), Box::new(|g, v| g.add(v[0], v[1]))),
        ("add_broadcast", s(&[&[2, 3, 4], &[4]]), Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", s(&[&[3, 4], &[3, 4]]), Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", s(&[&[3, 4], &[3, 4]]), Box::new(|g, v| g.mul(v[0], v[1]))),
        ("mul_scalar", s(&[&[2, 3], &[]]), Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_position", s(&[&[2, 3, 4], &[3, 4]]), Box::new(|g, v| g.add_position(v[0], v[1]))),
        ("scale", s(&[&[3, 4]]), Box::new(|g, v| g.scale(v[0], -2.5))),
        ("exp", s(&[&[3, 4]]), Box::new(|g, v| g.exp(v[0]))),
        ("gelu", s(&[&[3, 4]]), Box::new(|g, v| g.gelu(v[0]))),
        ("softmax", s(&[&[3, 5]]), Box::new(|g, v| g.softmax(v[0]))),
        ("l2_normalize", s(&[&[3, 5]]), Box::new(|g, v| g.l2_normalize(v[0]))),
        (
            "dropout",
            s(&[&[20]]),
            Box::new(|g, v| {
                let mut r = eegtext::rng::rng(36, &[]);
                g.dropout(v[0], 0.3, &mut r)
            }),
        ),
        ("matmul", s(&[&[2, 3, 4], &[4, 5]]), Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_batched", s(&[&[2, 3, 4], &[2, 4, 5]]), Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_t", s(&[&[2, 3, 4], &[5, 4]]), Box::new(|g, v| g.matmul_t(v[0], v[1]))),
        ("matmul_t_batched", s(&[&[2, 3, 4], &[2, 6, 4]]), Box::new(|g, v| g.matmul_t(v[0], v[1]))),
        (
            "conv2d",
            s(&[&[2, 5, 5], &[3, 2, 3, 3], &[3]]),
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        ),
        (
            "conv2d_strided",
            s(&[&[2, 2, 6, 6], &[3, 2, 3, 3], &[3]]),
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "layer_norm",
            s(&[&[3, 6], &[6], &[6]]),
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2])),
        ),
        ("mean", s(&[&[2, 3, 4]]), Box::new(|g, v| g.mean(v[0], 1))),
        ("sum", s(&[&[2, 3]]), Box::new(|g, v| g.sum(v[0]))),
        ("reshape", s(&[&[2, 6]]), Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        ("permute", s(&[&[2, 3, 4]]), Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        ("transpose", s(&[&[2, 3, 4]]), Box::new(|g, v| g.transpose(v[0]))),
        ("concat", s(&[&[2, 2], &[2, 3]]), Box::new(|g, v| g.concat(&[v[0], v[1]], 1))),
        ("narrow", s(&[&[3, 5]]), Box::new(|g, v| g.narrow(v[0], 1, 1, 3))),
        ("cross_entropy", s(&[&[4, 3]]), Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))),
    ]
}

fn toy_cfg(frames: usize, bands: usize, side: usize) -> ModelConfig {
    ModelConfig {
        frames,
        bands,
        height: side,
        width: side,
        ..ModelConfig::toy()
    }
}

fn random_sample(seed: u64, cfg: &ModelConfig, label_index: usize) -> Sample4D {
    let shape = [cfg.frames, cfg.bands, cfg.height, cfg.width];
    Sample4D {
        shape,
        de: rand_tensor(seed, &shape).data,
        psd: rand_tensor(seed + 1, &shape).data,
        label: String::new(),
        label_index,
        subject_id: 1,
        session_id: 1,
        trial_id: 0,
        block: 0,
    }
}

fn grad_suite(bank: &TextBank) -> Outcome {
    let t = Instant::now();
    let mut worst_op: f64 = 0.0;
    for (i, (name, shapes, op)) in smooth_ops().into_iter().enumerate() {
        let seed = 100 + 10 * i as u64;
        let xs: Vec<Tensor> = shapes.iter().enumerate().map(|(j, s)| rand_tensor(seed + j as u64, s)).collect();
        let err = lib(grad_check_many(
            |g, v| {
                let y = op(g, v)?;
                if g.shape(y).is_empty() {
                    Ok(y)
                } else {
                    weighted_sum(g, y, seed + 7)
                }
            },
            &xs,
            DEFAULT_STEP,
        ))?;
        ensure(err <= 1e-6, format!("{name}: rel err {err:.3e}"))?;
        worst_op = worst_op.max(err);
    }
    // relu is smooth away from its kink.
    let mut x = rand_tensor(99, &[4, 5]);
    x.data.iter_mut().filter(|v| v.abs() < 1e-3).for_each(|v| *v = 1e-3);
    let err = lib(grad_check(|g, x| {
        let y = g.relu(x)?;
        weighted_sum(g, y, 98)
    }, &x, DEFAULT_STEP))?;
    ensure(err <= 1e-6, format!("relu: rel err {err:.3e}"))?;
    worst_op = worst_op.max(err);

    let m = lib(Model::new(toy_cfg(2, 3, 8), 37))?;
    ensure(m.cfg.embed_dim == 8 && m.cfg.heads == 2, "toy dims")?;
    let samples = [random_sample(38, &m.cfg, 0), random_sample(40, &m.cfg, 2)];
    let targets: Vec<usize> = samples.iter().map(|s| s.label_index).collect();
    let err_model = lib(grad_check_params(
        |g, store| {
            let mm = Model {
                cfg: m.cfg.clone(),
                params: store.clone(),
            };
            let refs: Vec<&Sample4D> = samples.iter().collect();
            let (de, psd) = mm.inputs(g, &refs)?;
            let emb = mm.forward(g, de, psd, &mut Pass::eval())?;
            let scale = mm.logit_scale(g).expect("matching head");
            let logits = logits_graph(g, emb, bank, scale)?;
            g.cross_entropy(logits, &targets)
        },
        &m.params,
        DEFAULT_STEP,
        None,
        0,
    ))?;
    ensure(err_model <= 1e-4, format!("full model: rel err {err_model:.3e}"))?;
    let d = within(t, Duration::from_secs(120))?;
    Ok(format!(
        "ops max {worst_op:.2e}; full model ({} params, every coordinate) {err_model:.2e} in {d:.1?}",
        m.param_count()
    ))
}

// 4 -------------------------------------------------------------------------

fn freeze_contract(bank: &TextBank, hash_at_start: &str, results: &[FoldResult]) -> Outcome {
    ensure(bank.is_frozen(), "bank not frozen")?;
    ensure(bank.content_hash() == hash_at_start, "bank hash changed over the suite")?;
    for r in results {
        ensure(
            r.bank_hash_before == hash_at_start && r.bank_hash_after == hash_at_start,
            format!("{} ({}): hash mismatch", r.descriptor.tag(), r.arm.as_str()),
        )?;
    }
    ensure(!results.is_empty(), "no training runs recorded")?;
    Ok(format!("{} fold runs, hash {}", results.len(), &hash_at_start[..12]))
}

// 5 -------------------------------------------------------------------------

fn split_hygiene(loso_ds: &Dataset, cfg: &RunConfig) -> Outcome {
    let s = &loso_ds.samples;
    let plans = lib(loso_folds(s))?;
    let sessions: BTreeSet<u32> = s.iter().map(|x| x.session_id).collect();
    let subjects: BTreeSet<u32> = s.iter().map(|x| x.subject_id).collect();
    ensure(plans.len() == sessions.len() * subjects.len(), "fold count")?;
    for &sess in &sessions {
        let in_session: Vec<usize> = (0..s.len()).filter(|&i| s[i].session_id == sess).collect();
        let mut seen = Vec::new();
        for p in plans.iter().filter(|p| p.descriptor.session == Some(sess)) {
            lib(p.check_hygiene(s))?;
            let held = p.descriptor.test_subject.ok_or("missing test subject")?;
            ensure(p.adapt.is_empty(), "adapt set without shots")?;
            ensure(p.test.iter().all(|&i| s[i].subject_id == held), "foreign sample in test")?;
            ensure(p.train.iter().all(|&i| s[i].subject_id != held), "subject leak into train")?;
            let mut pool: Vec<usize> = p.train.iter().chain(&p.test).copied().collect();
            pool.sort_unstable();
            ensure(pool == in_session, format!("{}: train ∪ test is not the session", p.descriptor.tag()))?;
            seen.extend(p.test.iter().copied());
        }
        seen.sort_unstable();
        ensure(seen == in_session, format!("session {sess}: test sets do not partition it"))?;
    }

    // Positions into the sorted session list.
    ensure(CROSS_TIME_PAIRS == [(0, 1), (0, 2), (1, 2)], "pair table")?;
    let three = SynthConfig {
        n_subjects: 2,
        n_sessions: 3,
        trials_per_class: 1,
        ..SynthConfig::default()
    };
    let ds3 = lib(Dataset::from_recording(&lib(generate_synthetic(&three))?, cfg))?;
    let ct = lib(cross_time_folds(&ds3.samples))?;
    let s = &ds3.samples;
    for sub in 1..=2 {
        let mine: Vec<_> = ct.iter().filter(|p| p.descriptor.subject == Some(sub)).collect();
        let pairs: Vec<(u32, u32)> = mine
            .iter()
            .map(|p| (p.descriptor.train_session.unwrap(), p.descriptor.test_session.unwrap()))
            .collect();
        ensure(pairs == vec![(1, 2), (1, 3), (2, 3)], format!("subject {sub}: pairs {pairs:?}"))?;
        for p in mine {
            lib(p.check_hygiene(s))?;
            let (a, b) = (p.descriptor.train_session.unwrap(), p.descriptor.test_session.unwrap());
            let want_train: Vec<usize> = (0..s.len()).filter(|&i| s[i].subject_id == sub && s[i].session_id == a).collect();
            let want_test: Vec<usize> = (0..s.len()).filter(|&i| s[i].subject_id == sub && s[i].session_id == b).collect();
            ensure(p.train == want_train && p.test == want_test, format!("{}: wrong indices", p.descriptor.tag()))?;
            ensure(p.descriptor.protocol == Protocol::CrossTime, "protocol tag")?;
        }
    }
    Ok(format!("{} LOSO folds, {} cross-time folds", plans.len(), ct.len()))
}

// 8 -------------------------------------------------------------------------

fn optimizer_conformance() -> Outcome {
    let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8, 0.003);
    let a = [3.0, 0.5, 1.5, 0.8];
    let c = [1.0, -2.0, 0.25, 0.0];
    let grad = |p: &[f64]| -> Vec<f64> { (0..4).map(|j| 2.0 * a[j] * (p[j] - c[j])).collect() };
    let p0 = [0.3, 0.7, -1.1, 2.0];
    let lrs: Vec<f64> = (0..10).map(|t| 0.05 * 0.5 * (1.0 + (PI * t as f64 / 10.0).cos())).collect();

    let mut want = p0.to_vec();
    let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
    for t in 1..=10 {
        let g = grad(&want);
        for j in 0..4 {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1.powi(t));
            let vh = v[j] / (1.0 - b2.powi(t));
            want[j] -= lrs[t as usize - 1] * (mh / (vh.sqrt() + eps) + wd * want[j]);
        }
    }

    let mut store = eegtext::autodiff::ParamStore::new();
    let id = lib(store.add("w", lib(Tensor::new(vec![4], p0.to_vec()))?))?;
    let mut state = AdamState::new(&store);
    let hyper = AdamHyper::default();
    ensure((hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay) == (b1, b2, eps, wd), "default hyper")?;
    for t in 1..=10u64 {
        let lr = lib(cosine_lr(t as usize - 1, 0.05, 0.0, 10))?;
        let g = grad(&store.value(id).data);
        lib(adamw_step(&mut store, &[(id, &g)], &mut state, t, lr, &hyper))?;
    }
    let dev = store
        .value(id)
        .data
        .iter()
        .zip(&want)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure(dev <= 1e-12, format!("trajectory deviates by {dev:.3e}"))?;

    let max = 300;
    let start = lib(cosine_lr(0, 1e-4, 0.0, max))?;
    let end = lib(cosine_lr(max, 1e-4, 0.0, max))?;
    let mid = lib(cosine_lr(max / 2, 1e-4, 0.0, max))?;
    ensure(start == 1e-4, format!("lr(0) = {start:e}"))?;
    ensure(end == 0.0, format!("lr(max) = {end:e}"))?;
    ensure(mid == 5e-5, format!("lr(max/2) = {mid:e}"))?;
    Ok(format!("10-step deviation {dev:.1e}; lr 1e-4 / 5e-5 / 0 exact"))
}

// 6 and 9 -------------------------------------------------------------------

struct LosoRuns {
    first: eegtext::training_eval::ProtocolRun,
    first_time: Duration,
    csv_a: String,
    csv_b: String,
    second: eegtext::training_eval::ProtocolRun,
}

fn loso_runs(ds: &Dataset, cfg: &RunConfig, bank: &TextBank) -> Result<LosoRuns, String> {
    let t = Instant::now();
    let first = lib(run_loso(ds, cfg, bank, 1))?;
    let first_time = t.elapsed();
    let second = lib(run_loso(ds, cfg, bank, 2))?;
    Ok(LosoRuns {
        csv_a: lib(results_csv(&first.results))?,
        csv_b: lib(results_csv(&second.results))?,
        first,
        first_time,
        second,
    })
}

fn learnability(runs: &LosoRuns, featurize_time: Duration) -> Outcome {
    let m = &runs.first.metrics;
    let total = runs.first_time + featurize_time;
    ensure(m.per_fold.len() == 16, format!("{} folds", m.per_fold.len()))?;
    ensure(m.mean >= 0.90, format!("mean accuracy {:.4}", m.mean))?;
    ensure(total <= Duration::from_secs(600), format!("took {total:.1?}"))?;
    Ok(format!("mean {:.4} std {:.4} over 16 folds in {total:.1?}", m.mean, m.std))
}

fn determinism(runs: &LosoRuns) -> Outcome {
    ensure(runs.csv_a == runs.csv_b, "results CSVs differ")?;
    ensure(runs.first == runs.second, "fold results differ")?;
    Ok(format!(
        "{} byte-identical CSV bytes (1 vs 2 worker threads)",
        runs.csv_a.len()
    ))
}

// 7 -------------------------------------------------------------------------

fn small_dataset(trials_per_class: u32, cfg: &RunConfig) -> Result<Dataset, String> {
    let synth = SynthConfig {
        n_subjects: 3,
        n_sessions: 1,
        trials_per_class,
        ..SynthConfig::default()
    };
    lib(Dataset::from_recording(&lib(generate_synthetic(&synth))?, cfg))
}

fn few_shot(cfg: &RunConfig, bank: &TextBank, sink: &mut Vec<FoldResult>) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.max_epochs = 2;
    cfg.patience = 2;
    let ds = small_dataset(8, &cfg)?;
    let k = ds.labels.len();
    for &n in &DEFAULT_SHOTS {
        for p in lib(nshot_plans(&ds, n, cfg.seed))? {
            lib(p.check_hygiene(&ds.samples))?;
            ensure(p.adapt.len() == n * k, format!("N={n} {}: adapt {}", p.descriptor.tag(), p.adapt.len()))?;
            for c in 0..k {
                let per = p.adapt.iter().filter(|&&i| ds.samples[i].label_index == c).count();
                ensure(per == n, format!("N={n}: class {c} has {per} adapt samples"))?;
            }
            let held = p.descriptor.test_subject.unwrap();
            ensure(p.adapt.iter().all(|&i| ds.samples[i].subject_id == held), "adapt from another subject")?;
            let test: BTreeSet<usize> = p.test.iter().copied().collect();
            let train: BTreeSet<usize> = p.train.iter().copied().collect();
            ensure(p.adapt.iter().all(|i| !test.contains(i) && !train.contains(i)), "adapt overlaps")?;
        }
    }
    let run = lib(run_nshot(&ds, &cfg, bank, &DEFAULT_SHOTS, 1))?;
    ensure(run.curve.iter().map(|c| c.0).collect::<Vec<_>>() == DEFAULT_SHOTS, "curve order")?;
    for r in &run.results {
        ensure(r.n_adapt == r.n_shot * k, format!("{} N={}: n_adapt {}", r.descriptor.tag(), r.n_shot, r.n_adapt))?;
    }
    let zero: Vec<&FoldResult> = run.results.iter().filter(|r| r.n_shot == 0).collect();
    let n: usize = zero.iter().map(|r| r.n_test).sum();
    let correct: usize = zero.iter().map(|r| r.correct).sum();
    let chance = 1.0 / k as f64;
    let p_hat = correct as f64 / n as f64;
    let se = (chance * (1.0 - chance) / n as f64).sqrt();
    ensure(
        (p_hat - chance).abs() <= 3.0 * se,
        format!("zero-shot {p_hat:.4} is {:.1} SE from chance", (p_hat - chance).abs() / se),
    )?;
    let curve: Vec<String> = run.curve.iter().map(|(n, m)| format!("{n}:{:.2}", m.mean)).collect();
    sink.extend(run.results.iter().cloned());
    Ok(format!("zero-shot {p_hat:.4} (n={n}, SE {se:.4}); curve {}", curve.join(" ")))
}

// 10 ------------------------------------------------------------------------

fn ablation(cfg: &RunConfig, bank: &TextBank, sink: &mut Vec<FoldResult>) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.max_epochs = 15;
    cfg.patience = 5;
    let ds = small_dataset(2, &cfg)?;
    let k = ds.labels.len();
    let run = lib(run_ablation(&ds, &cfg, bank, 1))?;
    let folds = lib(loso_folds(&ds.samples))?;
    ensure(run.linear.results.len() == folds.len() && run.matching.results.len() == folds.len(), "fold counts")?;
    for ((a, b), plan) in run.linear.results.iter().zip(&run.matching.results).zip(&folds) {
        ensure(a.descriptor == plan.descriptor && b.descriptor == plan.descriptor, "descriptors differ")?;
        ensure(a.n_train == b.n_train && a.n_test == b.n_test && a.n_test == plan.test.len(), "fold sizes differ")?;
        ensure(a.arm == Arm::Linear && b.arm == Arm::Matching, "arm labels")?;
    }

    let lin = lib(Model::new(Arm::Linear.configure(&cfg, k).model, 1))?;
    let mat = lib(Model::new(Arm::Matching.configure(&cfg, k).model, 1))?;
    let d = cfg.model.embed_dim;
    let shape = |m: &Model, n: &str| m.params.id(n).map(|id| m.params.value(id).shape.clone());
    ensure(lin.cfg.head == HeadKind::Linear { classes: k }, "linear arm head kind")?;
    ensure(shape(&lin, "head.w") == Some(vec![d, k]), format!("linear head {:?}", shape(&lin, "head.w")))?;
    ensure(shape(&lin, "logit_scale").is_none() && shape(&lin, "proj.w").is_none(), "linear arm has matching params")?;
    ensure(
        shape(&mat, "proj.w") == Some(vec![d, bank.dim()]) && shape(&mat, "logit_scale").is_some(),
        "matching arm head",
    )?;
    ensure(shape(&mat, "head.w").is_none(), "matching arm has a K-way head")?;
    ensure(bank.is_frozen() && bank.len() == k, "bank")?;

    let table = acc_std_table(&[("linear", &run.linear.metrics), ("matching", &run.matching.metrics)]);
    let mut lines = table.lines();
    ensure(lines.next() == Some("Method,ACC(%),STD(%)"), "table header")?;
    for (name, m) in [("linear", &run.linear.metrics), ("matching", &run.matching.metrics)] {
        let row = lines.next().ok_or("missing row")?;
        let cells: Vec<&str> = row.split(',').collect();
        ensure(cells.len() == 3 && cells[0] == name, format!("row {row}"))?;
        let acc: f64 = cells[1].parse().map_err(|_| format!("row {row}"))?;
        let std: f64 = cells[2].parse().map_err(|_| format!("row {row}"))?;
        ensure((acc - 100.0 * m.mean).abs() <= 0.005 + 1e-9, format!("{name} ACC {acc}"))?;
        ensure((std - 100.0 * m.std).abs() <= 0.005 + 1e-9, format!("{name} STD {std}"))?;
    }
    sink.extend(run.linear.results.iter().cloned());
    sink.extend(run.matching.results.iter().cloned());
    Ok(format!(
        "{} paired folds; linear {:.2}±{:.2}, matching {:.2}±{:.2}",
        folds.len(),
        100.0 * run.linear.metrics.mean,
        100.0 * run.linear.metrics.std,
        100.0 * run.matching.metrics.mean,
        100.0 * run.matching.metrics.std
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let cfg = RunConfig::toy();
    let labels = SynthConfig::default().label_set;
    let bank = build_bank(&labels, &PromptTemplateSet::default(), &cfg.bank).expect("bank");
    assert!(matches!(cfg.bank, BankSource::Stub { .. }));
    let hash_at_start = bank.content_hash();
    let mut fold_results: Vec<FoldResult> = Vec::new();
    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();

    outcomes.push((1, "differential entropy oracle", de_oracle()));
    outcomes.push((2, "PSD band-power partition", psd_parseval()));
    outcomes.push((3, "gradient suite", grad_suite(&bank)));
    outcomes.push((8, "optimizer conformance", optimizer_conformance()));

    let t = Instant::now();
    let loso_ds = generate_synthetic(&SynthConfig::default()).and_then(|set| Dataset::from_recording(&set, &cfg));
    let featurize_time = t.elapsed();
    match loso_ds {
        Ok(ds) => {
            outcomes.push((5, "split hygiene", split_hygiene(&ds, &cfg)));
            match loso_runs(&ds, &cfg, &bank) {
                Ok(runs) => {
                    fold_results.extend(runs.first.results.iter().cloned());
                    fold_results.extend(runs.second.results.iter().cloned());
                    outcomes.push((6, "end-to-end learnability", learnability(&runs, featurize_time)));
                    outcomes.push((9, "determinism", determinism(&runs)));
                }
                Err(e) => {
                    outcomes.push((6, "end-to-end learnability", Err(e.clone())));
                    outcomes.push((9, "determinism", Err(e)));
                }
            }
        }
        Err(e) => {
            for (n, name) in [(5, "split hygiene"), (6, "end-to-end learnability"), (9, "determinism")] {
                outcomes.push((n, name, Err(e.to_string())));
            }
        }
    }
    outcomes.push((7, "few-shot harness", few_shot(&cfg, &bank, &mut fold_results)));
    outcomes.push((10, "ablation harness", ablation(&cfg, &bank, &mut fold_results)));
    outcomes.push((4, "freeze contract", freeze_contract(&bank, &hash_at_start, &fold_results)));

    outcomes.sort_by_key(|o| o.0);
    let mut failed = 0;
    for (n, name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("PASS [{n:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
