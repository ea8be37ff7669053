#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eorm::model::{save_checkpoint, ModelConfig, ModelParams, Variant};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval")
}

/// Mean-pool model on bytes that gives energy about -1.95 to any text
/// containing `!` and exactly 0 to everything else.
///
/// With d = 2 a layer norm maps `[a, -a]` to `[1, -1]` for `a > 0` and the
/// zero vector to zero, so only the presence of `!` reaches the head.
pub fn bang_model() -> ModelParams<f32> {
    let cfg = ModelConfig {
        vocab_size: 258,
        d_model: 2,
        n_heads: 1,
        n_layers: 1,
        ff_mult: 1,
        dropout: 0.0,
        max_seq_len: 256,
        variant: Variant::MlpBaseline,
        positional: false,
    };
    let mut m = ModelParams::<f32>::zeros(&cfg).unwrap();
    for leaf in m.leaves_mut() {
        let v = &mut leaf.value;
        match leaf.name.as_str() {
            "tok_emb" => v.row_mut(b'!' as usize).copy_from_slice(&[1.0, -1.0]),
            "final_ln.gain" | "head.ln.gain" => v.fill(1.0),
            "head.w1" => v.row_mut(0).copy_from_slice(&[1.0, -1.0]),
            "head.w2" => v.row_mut(0).copy_from_slice(&[-1.0, 0.0]),
            _ => {}
        }
    }
    m
}

pub fn write_bang_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("bang.ckpt");
    let meta = BTreeMap::from([("tokenizer".to_string(), "byte".to_string())]);
    save_checkpoint(&bang_model(), &meta, &path).unwrap();
    path
}

/// Runs the built binary single-threaded.
pub fn eorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eorm"))
        .args(args)
        .env("EORM_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
