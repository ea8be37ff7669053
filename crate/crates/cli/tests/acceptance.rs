//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_2;
use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eorm::dataset::{group_candidates, split_corpus, CorpusSplit, Group};
use eorm::loss::{bt_loss, bt_loss_nll_oracle, LossResult};
use eorm::model::{init_params, read_checkpoint, write_checkpoint, ModelConfig, ModelParams, Variant};
use eorm::nn::gradcheck::{check_gradient, max_rel_err, numeric_gradient};
use eorm::nn::{
    dropout, dropout_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, sigmoid,
    softplus, MultiHeadAttention, ParamLeaf, Tensor, LN_EPS,
};
use eorm::rerank::{argmax, argmin, boltzmann, evaluate, Method};
use eorm::synthetic::{generate, Pattern, SyntheticConfig};
use eorm::tokenizer::{batch, byte_fallback_vocab};
use eorm::train::{evaluate_validation, train_loop, TrainConfig};

use common::{eorm, fixture_dir, p, write_bang_checkpoint};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Records the worst error of each named check.
struct GradLog(Vec<(String, f64)>);

impl GradLog {
    fn add(&mut self, name: &str, err: f64) {
        self.0.push((name.to_string(), err));
    }

    fn worst(&self) -> (&str, f64) {
        self.0
            .iter()
            .map(|(n, e)| (n.as_str(), *e))
            .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
}

fn random_model(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut m = ModelParams::<f64>::zeros(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for leaf in m.leaves_mut() {
        let gain = leaf.name.ends_with(".gain");
        for v in leaf.value.data_mut() {
            let u = rng.gen_range(-0.3..0.3);
            *v = if gain { 1.0 + u } else { u };
        }
    }
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut log = GradLog(Vec::new());

    // affine map
    let x = rand_tensor(3, 4, &mut rng);
    let mut w = ParamLeaf::new("w", rand_tensor(5, 4, &mut rng), true);
    let mut b = ParamLeaf::new("b", rand_tensor(1, 5, &mut rng), false);
    let proj = rand_tensor(3, 5, &mut rng);
    let dx = linear_backward(&x, &mut w, &mut b, &proj).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let y = linear(x, &ParamLeaf::new("w", w.clone(), true), &ParamLeaf::new("b", b.clone(), false)).unwrap();
        dot(&y, &proj)
    };
    log.add("linear dx", check_gradient(&x, &dx, |t| f(t, &w.value, &b.value)));
    log.add("linear dW", check_gradient(&w.value, &w.grad, |t| f(&x, t, &b.value)));
    log.add("linear db", check_gradient(&b.value, &b.grad, |t| f(&x, &w.value, t)));

    // layer norm
    let x = rand_tensor(4, 6, &mut rng);
    let mut g = ParamLeaf::new("g", Tensor::from_fn(1, 6, |_, _| 1.0 + rng.gen_range(-0.5..0.5)), false);
    let mut bb = ParamLeaf::new("b", rand_tensor(1, 6, &mut rng), false);
    let proj = rand_tensor(4, 6, &mut rng);
    let (_, cache) = layer_norm(&x, &g, &bb, LN_EPS).unwrap();
    let dx = layer_norm_backward(&cache, &mut g, &mut bb, &proj);
    let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let gl = ParamLeaf::new("g", g.clone(), false);
        let bl = ParamLeaf::new("b", b.clone(), false);
        dot(&layer_norm(x, &gl, &bl, LN_EPS).unwrap().0, &proj)
    };
    log.add("layer_norm dx", check_gradient(&x, &dx, |t| f(t, &g.value, &bb.value)));
    log.add("layer_norm dgain", check_gradient(&g.value, &g.grad, |t| f(&x, t, &bb.value)));
    log.add("layer_norm dbias", check_gradient(&bb.value, &bb.grad, |t| f(&x, &g.value, t)));

    // GELU
    let x = Tensor::from_fn(3, 5, |_, _| rng.gen_range(-3.0..3.0));
    let proj = rand_tensor(3, 5, &mut rng);
    let dx = gelu_backward(&x, &proj);
    log.add("gelu", check_gradient(&x, &dx, |t| dot(&gelu(t), &proj)));

    // scalar links, one point at a time: softplus' = sigmoid, sigmoid' = s (1 - s)
    for _ in 0..40 {
        let z = Tensor::from_vec(1, 1, vec![rng.gen_range(-30.0..30.0)]).unwrap();
        log.add("softplus", check_gradient(&z, &z.map(sigmoid), |t| softplus(t.data()[0])));
        let z = Tensor::from_vec(1, 1, vec![rng.gen_range(-8.0..8.0)]).unwrap();
        let ds = z.map(|v| sigmoid(v) * (1.0 - sigmoid(v)));
        log.add("sigmoid", check_gradient(&z, &ds, |t| sigmoid(t.data()[0])));
    }

    // dropout with a fixed mask
    let x = rand_tensor(4, 5, &mut rng);
    let proj = rand_tensor(4, 5, &mut rng);
    let mut y = x.clone();
    let mask = dropout(&mut y, 0.4, true, &mut ChaCha8Rng::seed_from_u64(5));
    let mut dx = proj.clone();
    dropout_backward(&mask, &mut dx);
    log.add(
        "dropout",
        check_gradient(&x, &dx, |t| {
            let mut y = t.clone();
            dropout(&mut y, 0.4, true, &mut ChaCha8Rng::seed_from_u64(5));
            dot(&y, &proj)
        }),
    );

    // masked multi-head attention, every parameter
    let (len, d, heads) = (5, 8, 2);
    let mut mha = MultiHeadAttention::<f64>::new("attn", d, heads).unwrap();
    for leaf in mha.leaves_mut() {
        for v in leaf.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let x = rand_tensor(len, d, &mut rng);
    let mask = [true, true, true, false, true];
    let proj = rand_tensor(len, d, &mut rng);
    let attn_loss = |m: &MultiHeadAttention<f64>, x: &Tensor<f64>| {
        let (y, _) = m.forward(x, &mask, 0.0, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        dot(&y, &proj)
    };
    let mut g = mha.clone();
    let (_, cache) = g.forward(&x, &mask, 0.0, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dx = g.backward(&cache, &proj).unwrap();
    log.add("attention dx", check_gradient(&x, &dx, |t| attn_loss(&mha, t)));
    for i in 0..8 {
        let name = g.leaves()[i].name.clone();
        let grad = g.leaves()[i].grad.clone();
        let value = mha.leaves()[i].value.clone();
        let err = check_gradient(&value, &grad, |t| {
            let mut m = mha.clone();
            m.leaves_mut()[i].value = t.clone();
            attn_loss(&m, &x)
        });
        log.add(&name, err);
    }

    // pairwise loss
    let pos: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let neg: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let LossResult::Pairs { d_pos, d_neg, .. } = bt_loss(&pos, &neg).unwrap() else {
        return Err("non-degenerate group was skipped".into());
    };
    let e = Tensor::from_vec(1, 7, pos.iter().chain(&neg).copied().collect()).unwrap();
    let de = Tensor::from_vec(1, 7, d_pos.iter().chain(&d_neg).copied().collect()).unwrap();
    let numeric = numeric_gradient(&e, |t| bt_loss(&t.data()[..3], &t.data()[3..]).unwrap().value().unwrap());
    log.add("bt_loss", max_rel_err(&de, &numeric));

    // full d=16 single-layer model, every leaf
    let cfg = ModelConfig {
        vocab_size: 40,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ff_mult: 4,
        dropout: 0.0,
        max_seq_len: 16,
        variant: Variant::Transformer,
        positional: true,
    };
    let ids = [3u32, 17, 5, 39, 0, 22, 8];
    for (variant, seed) in [(Variant::Transformer, 11), (Variant::MlpBaseline, 12)] {
        let model = random_model(&ModelConfig { variant, ..cfg.clone() }, seed);
        let mut g = model.clone();
        let trace = g.forward_row(&ids, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        g.backward(&trace, 1.0).unwrap();
        for i in 0..model.leaves().len() {
            let name = format!("{variant} {}", g.leaves()[i].name);
            let grad = g.leaves()[i].grad.clone();
            let value = model.leaves()[i].value.clone();
            let err = check_gradient(&value, &grad, |t| {
                let mut m = model.clone();
                m.leaves_mut()[i].value = t.clone();
                m.energy(&ids).unwrap()
            });
            log.add(&name, err);
        }
    }

    let elapsed = start.elapsed();
    let (name, worst) = log.worst();
    ensure(worst < 1e-4, || format!("{name}: max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} gradient checks, worst {worst:.2e} ({name}), {:.1}s",
        log.0.len(),
        elapsed.as_secs_f64()
    ))
}

fn random_group(rng: &mut ChaCha8Rng, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let np = rng.gen_range(1..=8);
    let nn = rng.gen_range(1..=8);
    let pos = (0..np).map(|_| rng.gen_range(-scale..scale)).collect();
    let neg = (0..nn).map(|_| rng.gen_range(-scale..scale)).collect();
    (pos, neg)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (pos, neg) = random_group(&mut rng, 10.0);
        let ours = bt_loss(&pos, &neg).unwrap().value().unwrap();
        worst = worst.max((ours - bt_loss_nll_oracle(&pos, &neg)).abs());
    }
    ensure(worst < 1e-9, || format!("max deviation from the likelihood form {worst:.3e}"))?;
    let mut worst_tie = 0.0f64;
    for _ in 0..1000 {
        let e: f64 = rng.gen_range(-50.0..50.0);
        let k = rng.gen_range(1..6);
        let v = bt_loss(&vec![e; k], &vec![e; k + 1]).unwrap().value().unwrap();
        worst_tie = worst_tie.max((v - LN_2).abs());
    }
    ensure(worst_tie < 1e-12, || format!("equal energies give |loss - ln 2| = {worst_tie:.3e}"))?;
    Ok(format!("1000 groups, max |diff| {worst:.2e}; equal energies within {worst_tie:.1e} of ln 2"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_loss = 0.0f64;
    for i in 0..1000 {
        let n = rng.gen_range(2..=16);
        let e: Vec<f32> = (0..n).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
        let c: f32 = rng.gen_range(-10.0f32..10.0);
        // the shift is applied to the pool's energies in double precision,
        // where a sum of two single-precision values is exact
        let e64: Vec<f64> = e.iter().map(|&v| f64::from(v)).collect();
        let shifted: Vec<f64> = e64.iter().map(|&v| v + f64::from(c)).collect();
        ensure(argmin(&e64) == argmin(&shifted), || format!("pool {i}: selection changed"))?;
        let (a, b) = (boltzmann(&e64), boltzmann(&shifted));
        ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("pool {i}: probabilities changed")
        })?;

        let split = rng.gen_range(1..n);
        let (pos, neg) = e.split_at(split);
        let shift = |v: &[f32]| v.iter().map(|&x| x + c).collect::<Vec<f32>>();
        let l0 = bt_loss(pos, neg).unwrap().value().unwrap();
        let l1 = bt_loss(&shift(pos), &shift(neg)).unwrap().value().unwrap();
        worst_loss = worst_loss.max(f64::from((l0 - l1).abs()));
    }
    ensure(worst_loss <= 1e-6, || format!("32-bit loss moved by {worst_loss:.3e}"))?;
    Ok(format!("1000 pools, selection and probabilities identical, 32-bit loss within {worst_loss:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for i in 0..10_000 {
        let n = rng.gen_range(1..=32);
        // every fourth pool draws from a few values so that ties occur
        let e: Vec<f64> = if i % 4 == 0 {
            (0..n).map(|_| f64::from(rng.gen_range(-2i32..=2))).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect()
        };
        if argmin(&e) != argmax(&boltzmann(&e)) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok("10000 pools, 0 violations".into())
}

fn tiny_config(variant: Variant, dropout: f64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ff_mult: 2,
        dropout,
        max_seq_len: 128,
        variant,
        ..ModelConfig::desk(258)
    }
}

fn param_bits(m: &ModelParams<f32>) -> Vec<Vec<u32>> {
    m.leaves()
        .iter()
        .map(|l| l.value.data().iter().map(|x| x.to_bits()).collect())
        .collect()
}

fn groups_from(cfg: &SyntheticConfig) -> Vec<Group> {
    group_candidates(generate(cfg).unwrap())
}

fn criterion_5() -> Outcome {
    let vocab = byte_fallback_vocab();
    let mut groups = groups_from(&SyntheticConfig {
        groups: 12,
        pool: 4,
        seed: 5,
        ..Default::default()
    });
    // keep only one label per group
    for (i, g) in groups.iter_mut().enumerate() {
        let want = i % 2 == 0;
        g.members.retain(|c| c.label.is_correct() == want);
    }
    let split = CorpusSplit {
        train: groups[..10].to_vec(),
        validation: groups[10..].to_vec(),
        seed: 0,
        ratio: 0.8,
    };
    let mut model = init_params::<f32>(&tiny_config(Variant::Transformer, 0.2), 5).unwrap();
    let before = param_bits(&model);
    let err = train_loop(&split, &mut model, &TrainConfig::default(), &vocab, &BTreeMap::new());
    ensure(err.is_err(), || "training on degenerate groups did not fail".into())?;
    ensure(param_bits(&model) == before, || "parameters changed".into())?;

    // degenerate groups mixed into a trainable corpus leave the result unchanged
    let trainable = groups_from(&SyntheticConfig {
        groups: 6,
        pool: 4,
        seed: 6,
        ..Default::default()
    });
    let mut mixed = trainable.clone();
    mixed.splice(2..2, groups[..5].iter().cloned());
    let cfg = TrainConfig {
        epochs: 2,
        peak_lr: 1e-3,
        ..Default::default()
    };
    let run = |train: Vec<Group>| {
        let mut m = init_params::<f32>(&tiny_config(Variant::Transformer, 0.2), 5).unwrap();
        let s = CorpusSplit {
            train,
            validation: Vec::new(),
            seed: 0,
            ratio: 0.8,
        };
        let r = train_loop(&s, &mut m, &cfg, &vocab, &BTreeMap::new()).unwrap();
        (param_bits(&m), r.optimizer_steps, r.skipped_groups)
    };
    let (clean, steps, _) = run(trainable);
    let (with_degenerate, steps_mixed, skipped) = run(mixed);
    ensure(clean == with_degenerate && steps == steps_mixed, || {
        "degenerate groups changed the trained parameters".into()
    })?;
    Ok(format!(
        "all-degenerate corpus rejected, parameters bitwise unchanged; {skipped} degenerate visits skipped in a mixed run"
    ))
}

struct EndToEnd {
    val_rank_acc: f64,
    selection: f64,
    random_pick: f64,
    positive_rate: f64,
    epochs: usize,
    secs: f64,
}

fn synthetic_run(pattern: Pattern, variant: Variant) -> Result<EndToEnd, String> {
    let vocab = byte_fallback_vocab();
    let groups = groups_from(&SyntheticConfig {
        groups: 250,
        pool: 8,
        seed: 7,
        pattern,
        ..Default::default()
    });
    let split = split_corpus(groups, 0.8, 42).map_err(|e| e.to_string())?;
    ensure(split.train.len() == 200 && split.validation.len() == 50, || "bad split sizes".into())?;
    let model_cfg = ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_layers: 2,
        ff_mult: 4,
        dropout: 0.2,
        variant,
        ..ModelConfig::desk(vocab.vocab_size())
    };
    let cfg = TrainConfig {
        epochs: 10,
        peak_lr: 1e-3,
        weight_decay: 0.01,
        warmup_ratio: 0.2,
        clip_norm: 1.0,
        seed: 42,
        ..Default::default()
    };
    let start = Instant::now();
    let mut model = init_params::<f32>(&model_cfg, 42).map_err(|e| e.to_string())?;
    train_loop(&split, &mut model, &cfg, &vocab, &BTreeMap::new()).map_err(|e| e.to_string())?;
    let v = evaluate_validation(&split.validation, &model, &vocab).map_err(|e| e.to_string())?;
    let (summary, _) = evaluate(&split.validation, None, &model, &vocab, &[8], 1, 0).map_err(|e| e.to_string())?;
    let acc = |m| {
        summary
            .rows
            .iter()
            .find(|r| r.method == m && r.n == 8)
            .and_then(|r| r.accuracy)
            .unwrap_or(f64::NAN)
    };
    let cands: Vec<_> = split.validation.iter().flat_map(|g| &g.members).collect();
    Ok(EndToEnd {
        val_rank_acc: v.ranking_accuracy.unwrap_or(0.0),
        selection: acc(Method::Eorm),
        random_pick: acc(Method::RandomPick),
        positive_rate: cands.iter().filter(|c| c.label.is_correct()).count() as f64 / cands.len() as f64,
        epochs: cfg.epochs,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn criterion_6() -> Outcome {
    let r = synthetic_run(Pattern::Planted, Variant::Transformer)?;
    let summary = format!(
        "val rank acc {:.3}, best-of-8 {:.3}, random pick {:.3} (positive rate {:.3}), {} epochs in {:.0}s",
        r.val_rank_acc, r.selection, r.random_pick, r.positive_rate, r.epochs, r.secs
    );
    ensure(r.val_rank_acc >= 0.95, || summary.clone())?;
    ensure(r.selection >= 0.95, || summary.clone())?;
    // 400 validation candidates: three binomial standard deviations around 3/8
    let tol = 3.0 * (0.375f64 * 0.625 / 400.0).sqrt();
    ensure((r.random_pick - 0.375).abs() < tol, || summary.clone())?;
    ensure(r.secs < 300.0, || summary.clone())?;
    Ok(summary)
}

fn criterion_7() -> Outcome {
    let t = synthetic_run(Pattern::Ordered, Variant::Transformer)?;
    let m = synthetic_run(Pattern::Ordered, Variant::MlpBaseline)?;
    let gap = t.selection - m.selection;
    let summary = format!(
        "best-of-8 transformer {:.3} vs mlp_baseline {:.3}, gap {:.1} points",
        t.selection,
        m.selection,
        100.0 * gap
    );
    ensure(gap >= 0.10, || summary.clone())?;
    Ok(summary)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for variant in [Variant::Transformer, Variant::MlpBaseline] {
        let cfg = ModelConfig {
            vocab_size: 258,
            max_seq_len: 64,
            ..tiny_config(variant, 0.2)
        };
        let m32 = init_params::<f32>(&cfg, 8).unwrap();
        let m64 = random_model(&cfg, 9);
        for _ in 0..50 {
            let len = rng.gen_range(1..40);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..258)).collect();
            let longer: Vec<u32> = (0..rng.gen_range(len + 1..=64)).map(|_| rng.gen_range(0..258)).collect();
            let b = batch(&[&ids, &longer], 257).unwrap();
            let alone32 = m32.energy(&ids).unwrap();
            let padded32 = m32.energies(&b).unwrap()[0];
            let alone64 = m64.energy(&ids).unwrap();
            let padded64 = m64.energies(&b).unwrap()[0];
            ensure(alone32.to_bits() == padded32.to_bits() && alone64.to_bits() == padded64.to_bits(), || {
                format!("{variant}: padding changed the energy of a length-{len} row")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} padded rows, energy change exactly 0"))
}

fn criterion_9() -> Outcome {
    let vocab = byte_fallback_vocab();
    let cfg = ModelConfig {
        max_seq_len: 64,
        ..tiny_config(Variant::Transformer, 0.2)
    };
    let model = init_params::<f32>(&cfg, 9).unwrap();
    let texts = ["What is 2+2? It is 4.", "short", "A longer solution with \\boxed{12}."];
    let rows: Vec<Vec<u32>> = texts.iter().map(|t| vocab.encode_pair("q", t, 64).ids).collect();
    let refs: Vec<&[u32]> = rows.iter().map(Vec::as_slice).collect();
    let b = batch(&refs, vocab.pad_id).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&model, &BTreeMap::new(), &mut bytes).unwrap();
    let loaded = read_checkpoint(bytes.as_slice()).map_err(|e| e.to_string())?;
    let before = model.energies(&b).unwrap();
    let after = loaded.params.energies(&b).unwrap();
    ensure(before.iter().zip(&after).all(|(x, y)| x.to_bits() == y.to_bits()), || {
        "energies differ after reload".into()
    })?;

    let header = String::from_utf8_lossy(&bytes).into_owned();
    let corrupt = |from: &str, to: &str| {
        let at = header.find(from).unwrap();
        let mut c = bytes.clone();
        c.splice(at..at + from.len(), to.bytes());
        read_checkpoint(c.as_slice()).is_err()
    };
    let cases = [
        corrupt("EORM-CHECKPOINT 1", "EORM-CHECKPOINT 9"),
        corrupt("d_model=16", "d_model=18"),
        corrupt("leaf tok_emb 258 16", "leaf tok_emb 257 16"),
        corrupt("leaf pos_emb", "leaf pos_emx"),
        read_checkpoint(&bytes[..bytes.len() - 4]).is_err(),
    ];
    ensure(cases.iter().all(|&rejected| rejected), || format!("corruptions rejected: {cases:?}"))?;
    Ok(format!("{} energies bitwise equal after reload; {} corruptions rejected", after.len(), cases.len()))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("syn.jsonl");
    let o = eorm(&["generate-synthetic", "--out", p(&data), "--groups", "16", "--pool", "4", "--seed", "10"]);
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let out = dir.path().join("run");
    let files = ["best.ckpt", "last.ckpt", "train_report.txt", "config.txt"];
    let run = || -> Result<Vec<Vec<u8>>, String> {
        let o = eorm(&[
            "train", "--data", p(&data), "--out", p(&out), "--epochs", "3", "--d-model", "16", "--heads", "2",
            "--layers", "1", "--max-seq", "128", "--lr", "1e-3", "--dropout", "0.2",
        ]);
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        files
            .iter()
            .map(|f| fs::read(out.join(f)).map_err(|e| e.to_string()))
            .collect()
    };
    let a = run()?;
    let b = run()?;
    for (f, (x, y)) in files.iter().zip(a.iter().zip(&b)) {
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!("two training runs wrote identical {}", files.join(", ")))
}

fn parse_csv(text: &str) -> Vec<(String, String, usize, Option<f64>)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap(), f[3].parse().ok())
        })
        .collect()
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = write_bang_checkpoint(dir.path());
    let fx = fixture_dir();
    let eval = |n_values: &str, out: &std::path::Path| -> Result<String, String> {
        let o = eorm(&[
            "eval",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&fx.join("candidates.jsonl")),
            "--answers",
            p(&fx.join("answers.jsonl")),
            "--n-values",
            n_values,
            "--trials",
            "8",
            "--out",
            p(out),
        ]);
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        fs::read_to_string(out).map_err(|e| e.to_string())
    };
    let golden = fs::read_to_string(fx.join("expected.csv")).map_err(|e| e.to_string())?;
    let got = eval("4,5", &dir.path().join("a.csv"))?;
    ensure(got == golden, || format!("CSV differs from the golden file:\n{got}"))?;

    let curve = eval("1,2,3,4", &dir.path().join("b.csv"))?;
    let rows = parse_csv(&curve);
    let mut by_key: HashMap<(String, usize), HashMap<String, f64>> = HashMap::new();
    for (d, m, n, a) in rows {
        if let Some(a) = a {
            by_key.entry((d, n)).or_default().insert(m, a);
        }
    }
    for ((d, n), m) in &by_key {
        ensure(m["oracle"] + 1e-12 >= m["eorm"], || format!("{d} n={n}: oracle below eorm"))?;
    }
    Ok(format!("golden CSV matched byte-for-byte; oracle >= eorm on {} (dataset, n) cells", by_key.len()))
}

fn main() {
    // only the suite itself is run; libtest flags such as --nocapture are ignored
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient suite", criterion_1),
        ("loss oracle equivalence", criterion_2),
        ("shift invariance", criterion_3),
        ("argmin energy = argmax probability", criterion_4),
        ("degenerate groups skipped", criterion_5),
        ("synthetic end-to-end", criterion_6),
        ("transformer beats mlp_baseline on ordered pattern", criterion_7),
        ("padding invariance", criterion_8),
        ("checkpoint roundtrip", criterion_9),
        ("training determinism", criterion_10),
        ("evaluation golden file", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
