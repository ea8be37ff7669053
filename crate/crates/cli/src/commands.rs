use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use eorm::dataset::{group_candidates, load_records, split_corpus, Group, GroupStats};
use eorm::model::{init_params, load_checkpoint, Checkpoint, ModelConfig, ModelParams};
use eorm::rerank::{
    evaluate_scored, ground_truth, load_answers, pool_energies, score_group, EnergyReport, ScoredGroup, DEFAULT_DATASET,
};
use eorm::synthetic::{generate_jsonl, SyntheticConfig};
use eorm::tokenizer::Vocab;
use eorm::train::train_loop;
use eorm::{Error, Result};

use crate::config::{read_config_file, EvalRun, KvMap, TokenizerSpec, TrainRun};
use crate::{Command, EvalArgs, InspectArgs, ModelFlags, ScoreArgs, SyntheticArgs, TrainArgs};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Rerank(a) => cmd_rerank(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::InspectCheckpoint(a) => cmd_inspect(&a),
        Command::GenerateSynthetic(a) => cmd_generate_synthetic(&a),
    }
}

/// Worker pool for scoring, capped by `EORM_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("EORM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("EORM_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn load_groups(path: &Path, strict: bool) -> Result<Vec<Group>> {
    let parsed = load_records(path, strict)?;
    for issue in &parsed.issues {
        log::warn!("{}:{}: skipped record: {}", path.display(), issue.line, issue.message);
    }
    if parsed.candidates.is_empty() {
        return Err(Error::Data(format!("{} contains no usable records", path.display())));
    }
    Ok(group_candidates(parsed.candidates))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => read_config_file(p)?,
        None => KvMap::new(),
    };
    let (run, vocab) = TrainRun::resolve(&file, &a.flag_map())?;
    let echo = run.echo();
    eprint!("{echo}");

    let groups = load_groups(&run.data, run.strict)?;
    eprintln!("corpus: {}", GroupStats::of(&groups));
    let split = split_corpus(groups, run.split_ratio, run.train.seed)?;
    eprintln!("{}", split.summary());

    let mut model = init_params::<f32>(&run.model, run.train.seed)?;
    eprintln!("model: {} parameters", model.param_count());
    let meta = BTreeMap::from([
        ("tokenizer".to_string(), run.tokenizer.to_string()),
        ("seed".to_string(), run.train.seed.to_string()),
        ("split_ratio".to_string(), run.split_ratio.to_string()),
    ]);
    let out = run.train.checkpoint_dir.clone().expect("resolved");
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), &echo)?;
    let report = train_loop(&split, &mut model, &run.train, &vocab, &meta)?;
    print!("{}", report.table());
    println!(
        "optimizer steps {}, skipped groups {}, truncated rows {}, best epoch {}, {:.1}s",
        report.optimizer_steps,
        report.skipped_groups,
        report.truncated_rows,
        report.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
        report.wall_time.as_secs_f64()
    );
    println!("checkpoints written to {}", out.display());
    Ok(())
}

/// Given architecture flags must agree with the checkpoint.
fn check_model_flags(flags: &ModelFlags, cfg: &ModelConfig) -> Result<()> {
    let have: BTreeMap<String, String> = cfg
        .to_kv_lines()
        .iter()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    for (k, want) in flags.pairs() {
        let got = &have[k];
        let same = match (want.parse::<f64>(), got.parse::<f64>()) {
            (Ok(x), Ok(y)) => x == y,
            _ => want.replace("mlp_baseline", "mlp") == got.replace("mlp_baseline", "mlp"),
        };
        if !same {
            return Err(Error::Checkpoint(format!("{k}={want} requested but the checkpoint has {k}={got}")));
        }
    }
    Ok(())
}

/// Loads the checkpoint and the tokenizer it was trained with (or the one
/// given on the command line) and checks that they fit together.
fn load_model(path: &Path, tokenizer: Option<&str>, flags: &ModelFlags) -> Result<(Checkpoint, Vocab)> {
    let ckpt = load_checkpoint(path)?;
    check_model_flags(flags, &ckpt.params.config)?;
    let spec: TokenizerSpec = tokenizer
        .or(ckpt.meta.get("tokenizer").map(String::as_str))
        .unwrap_or("byte")
        .parse()?;
    let vocab = spec.load()?;
    if vocab.vocab_size() != ckpt.params.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "tokenizer {spec} has {} entries but {} expects vocab_size={}",
            vocab.vocab_size(),
            path.display(),
            ckpt.params.config.vocab_size
        )));
    }
    Ok((ckpt, vocab))
}

fn sorted(mut groups: Vec<Group>) -> Vec<Group> {
    groups.sort_by(|a, b| a.key.cmp(&b.key));
    groups
}

fn score_all(model: &ModelParams<f32>, vocab: &Vocab, groups: &[Group]) -> Result<Vec<EnergyReport>> {
    thread_pool()?.install(|| {
        groups
            .par_iter()
            .map(|g| score_group(model, vocab, &g.key, &g.members))
            .collect()
    })
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let (ckpt, vocab) = load_model(&a.checkpoint, a.tokenizer.as_deref(), &a.model)?;
    let groups = sorted(load_groups(&a.data, a.strict)?);
    let energies: Vec<Vec<f64>> = thread_pool()?.install(|| {
        groups
            .par_iter()
            .map(|g| pool_energies(&ckpt.params, &vocab, &g.members))
            .collect::<Result<_>>()
    })?;
    let mut s = String::new();
    for (g, es) in groups.iter().zip(&energies) {
        for (i, (c, e)) in g.members.iter().zip(es).enumerate() {
            let rec = json!({"key": g.key, "index": i, "energy": e, "label": c.label.as_int()});
            s.push_str(&rec.to_string());
            s.push('\n');
        }
    }
    write_output(a.out.as_deref(), &s)
}

fn cmd_rerank(a: &ScoreArgs) -> Result<()> {
    let (ckpt, vocab) = load_model(&a.checkpoint, a.tokenizer.as_deref(), &a.model)?;
    let groups = sorted(load_groups(&a.data, a.strict)?);
    let reports = score_all(&ckpt.params, &vocab, &groups)?;
    let mut s = String::new();
    for r in &reports {
        s.push_str(&r.to_json().to_string());
        s.push('\n');
    }
    write_output(a.out.as_deref(), &s)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => read_config_file(p)?,
        None => KvMap::new(),
    };
    let run = EvalRun::resolve(&file, &a.flag_map())?;
    eprint!("{}", run.echo());
    let (ckpt, vocab) = load_model(&a.checkpoint, a.tokenizer.as_deref(), &a.model)?;
    let answers = a.answers.as_deref().map(load_answers).transpose()?;
    let groups = sorted(load_groups(&a.data, a.strict)?);
    let truths = groups
        .iter()
        .map(|g| ground_truth(g, answers.as_ref()).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    let reports = score_all(&ckpt.params, &vocab, &groups)?;
    let scored = reports
        .iter()
        .zip(&groups)
        .zip(&truths)
        .map(|((r, g), t)| ScoredGroup::from_report(r, g.dataset().unwrap_or(DEFAULT_DATASET), t))
        .collect::<Result<Vec<_>>>()?;
    let summary = evaluate_scored(&scored, &run.n_values, run.trials, run.seed)?;
    eprint!("{}", summary.table());
    write_output(a.out.as_deref(), &summary.to_csv())?;
    if let Some(p) = &a.reports {
        let mut s = String::new();
        for r in &reports {
            s.push_str(&r.to_json().to_string());
            s.push('\n');
        }
        write_output(Some(p), &s)?;
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let p = &ckpt.params;
    let mut s = format!("checkpoint {}\n", a.checkpoint.display());
    for line in p.config.to_kv_lines() {
        s.push_str(&format!("  {line}\n"));
    }
    for (k, v) in &ckpt.meta {
        s.push_str(&format!("  meta.{k}={v}\n"));
    }
    s.push_str(&format!("parameters {}\n", p.param_count()));
    for l in p.leaves() {
        let (r, c) = l.shape();
        s.push_str(&format!("  {:<24} {r:>6} x {c:<6}{}\n", l.name, if l.decay { " decay" } else { "" }));
    }
    write_output(None, &s)
}

fn cmd_generate_synthetic(a: &SyntheticArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        groups: a.groups,
        pool: a.pool,
        seed: a.seed,
        positive_rate: a.positive_rate,
        pattern: a.pattern.parse()?,
        filler_sentences: a.filler,
    };
    let text = generate_jsonl(&cfg)?;
    write_output(a.out.as_deref(), &text)?;
    if let Some(p) = &a.out {
        eprintln!(
            "wrote {} candidates in {} groups ({} pattern) to {}",
            a.groups * a.pool,
            a.groups,
            cfg.pattern,
            p.display()
        );
    }
    Ok(())
}
