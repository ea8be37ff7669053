//! Byte-level tokenization of (question, solution) pairs.
//!
//! Two vocabularies share one representation: the built-in byte fallback
//! (one id per byte plus CLS and PAD) and a byte-level BPE loaded from the
//! usual `vocab.json` + `merges.txt` pair.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use fancy_regex::Regex;

use crate::error::{Error, Result};

/// Inserted between question and solution text.
pub const SEPARATOR: &str = "\n";

const GPT2_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

const CLS_CANDIDATES: [&str; 4] = ["<|startoftext|>", "<s>", "<|bos|>", "<|endoftext|>"];
const PAD_CANDIDATES: [&str; 4] = ["<|endoftext|>", "</s>", "<|eos|>", "<pad>"];

fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(GPT2_PATTERN).expect("valid pretokenizer pattern"))
}

/// The reversible byte -> printable char table used by byte-level BPE files.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(next).expect("valid scalar");
            next += 1;
            c
        };
    }
    table
}

fn unicode_to_bytes() -> HashMap<char, u8> {
    bytes_to_unicode()
        .iter()
        .enumerate()
        .map(|(b, &c)| (c, b as u8))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Vocab {
    /// Byte content of each id. Special tokens keep their literal text.
    tokens: Vec<Vec<u8>>,
    special: Vec<bool>,
    token_to_id: HashMap<Vec<u8>, u32>,
    byte_ids: [u32; 256],
    /// `(left, right) -> (rank, merged id)`.
    merges: HashMap<(u32, u32), (u32, u32)>,
    pretokenize: bool,
    pub cls_id: u32,
    pub pad_id: u32,
}

/// One encoded (question, solution) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRow {
    pub ids: Vec<u32>,
    /// Whether tokens were dropped to fit the length limit.
    pub truncated: bool,
}

impl Vocab {
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn id_of(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Token ids for `text`, without CLS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        if !self.pretokenize {
            self.encode_word(text.as_bytes(), &mut out);
            return out;
        }
        for m in pretokenizer().find_iter(text) {
            // the pattern has no constructs that can hit the backtrack limit
            let m = m.expect("pretokenizer match");
            self.encode_word(m.as_str().as_bytes(), &mut out);
        }
        out
    }

    fn encode_word(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut word: Vec<u32> = bytes.iter().map(|&b| self.byte_ids[b as usize]).collect();
        if !self.merges.is_empty() {
            self.apply_merges(&mut word);
        }
        out.extend_from_slice(&word);
    }

    fn apply_merges(&self, word: &mut Vec<u32>) {
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&(rank, _)| (rank, (w[0], w[1]))))
                .min_by_key(|&(rank, _)| rank);
            let Some((_, pair)) = best else { break };
            let merged = self.merges[&pair].1;
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            *word = next;
        }
    }

    /// Concatenated bytes of non-special ids. Unknown ids are skipped.
    pub fn decode_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            if let Some(t) = self.tokens.get(id as usize) {
                if !self.special[id as usize] {
                    out.extend_from_slice(t);
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    /// `[cls] ++ encode(question ++ "\n" ++ cot)`, cut on the right to
    /// `max_seq_len` tokens.
    pub fn encode_pair(&self, question: &str, cot: &str, max_seq_len: usize) -> EncodedRow {
        assert!(max_seq_len >= 2, "max_seq_len must be at least 2");
        let text = if question.is_empty() && cot.is_empty() {
            String::new()
        } else {
            format!("{question}{SEPARATOR}{cot}")
        };
        let body = self.encode(&text);
        let keep = body.len().min(max_seq_len - 1);
        let mut ids = Vec::with_capacity(keep + 1);
        ids.push(self.cls_id);
        ids.extend_from_slice(&body[..keep]);
        EncodedRow {
            ids,
            truncated: keep < body.len(),
        }
    }
}

/// 256 byte ids followed by CLS (256) and PAD (257).
pub fn byte_fallback_vocab() -> Vocab {
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    tokens.push(b"<cls>".to_vec());
    tokens.push(b"<pad>".to_vec());
    let mut special = vec![false; 256];
    special.extend([true, true]);
    let mut byte_ids = [0u32; 256];
    for (b, slot) in byte_ids.iter_mut().enumerate() {
        *slot = b as u32;
    }
    Vocab {
        token_to_id: tokens[..256].iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect(),
        tokens,
        special,
        byte_ids,
        merges: HashMap::new(),
        pretokenize: false,
        cls_id: 256,
        pad_id: 257,
    }
}

fn load_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a byte-level BPE vocabulary (`token -> id` JSON map) and optional
/// ranked merges (one `left right` pair per line).
pub fn load_vocab(vocab_file: &Path, merges_file: Option<&Path>) -> Result<Vocab> {
    let text = fs::read_to_string(vocab_file).map_err(|e| load_err(vocab_file, e.to_string()))?;
    let map: HashMap<String, u64> =
        serde_json::from_str(&text).map_err(|e| load_err(vocab_file, format!("not a token->id map: {e}")))?;
    let merges_text = match merges_file {
        Some(p) => Some((p, fs::read_to_string(p).map_err(|e| load_err(p, e.to_string()))?)),
        None => None,
    };
    build_vocab(vocab_file, map, merges_text.as_ref().map(|(p, t)| (*p, t.as_str())))
}

fn build_vocab(vocab_file: &Path, map: HashMap<String, u64>, merges: Option<(&Path, &str)>) -> Result<Vocab> {
    let n = map.len();
    let mut slots: Vec<Option<String>> = vec![None; n];
    for (tok, id) in map {
        let idx = usize::try_from(id).ok().filter(|&i| i < n).ok_or_else(|| {
            load_err(vocab_file, format!("id {id} of {tok:?} outside dense range 0..{n}"))
        })?;
        if let Some(prev) = &slots[idx] {
            return Err(load_err(vocab_file, format!("duplicate id {id} for {prev:?} and {tok:?}")));
        }
        slots[idx] = Some(tok);
    }
    let strings: Vec<String> = slots.into_iter().map(|s| s.expect("dense ids")).collect();

    let decoder = unicode_to_bytes();
    let mut tokens = Vec::with_capacity(n);
    let mut special = Vec::with_capacity(n);
    for s in &strings {
        let is_special = CLS_CANDIDATES.contains(&s.as_str()) || PAD_CANDIDATES.contains(&s.as_str());
        let bytes: Option<Vec<u8>> = s.chars().map(|c| decoder.get(&c).copied()).collect();
        match bytes {
            Some(b) if !is_special => tokens.push(b),
            _ => tokens.push(s.as_bytes().to_vec()),
        }
        special.push(is_special);
    }
    let mut token_to_id = HashMap::with_capacity(n);
    for (i, t) in tokens.iter().enumerate() {
        if !special[i] {
            token_to_id.entry(t.clone()).or_insert(i as u32);
        }
    }
    let mut byte_ids = [0u32; 256];
    for b in 0..=255u8 {
        byte_ids[b as usize] = *token_to_id.get(&vec![b]).ok_or_else(|| {
            load_err(vocab_file, format!("missing single-byte token for byte {b:#04x}"))
        })?;
    }
    let lookup = |name: &[&str]| name.iter().find_map(|s| strings.iter().position(|t| t == s));
    let cls_id = lookup(&CLS_CANDIDATES)
        .ok_or_else(|| load_err(vocab_file, format!("no CLS token; expected one of {CLS_CANDIDATES:?}")))?
        as u32;
    let pad_id = lookup(&PAD_CANDIDATES)
        .ok_or_else(|| load_err(vocab_file, format!("no PAD token; expected one of {PAD_CANDIDATES:?}")))?
        as u32;

    let mut merge_map = HashMap::new();
    if let Some((path, text)) = merges {
        let mut rank = 0u32;
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| load_err(path, format!("line {}: {m}", lineno + 1));
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(format!("expected two tokens, got {line:?}")));
            };
            let id = |s: &str| -> std::result::Result<u32, Error> {
                let b: Option<Vec<u8>> = s.chars().map(|c| decoder.get(&c).copied()).collect();
                b.and_then(|b| token_to_id.get(&b).copied())
                    .ok_or_else(|| bad(format!("token {s:?} not in vocabulary")))
            };
            let (li, ri) = (id(l)?, id(r)?);
            let mut joined = tokens[li as usize].clone();
            joined.extend_from_slice(&tokens[ri as usize]);
            let merged = *token_to_id
                .get(&joined)
                .ok_or_else(|| bad(format!("merge result {l}{r:?} not in vocabulary")))?;
            merge_map.entry((li, ri)).or_insert((rank, merged));
            rank += 1;
        }
    }
    Ok(Vocab {
        tokens,
        special,
        token_to_id,
        byte_ids,
        merges: merge_map,
        pretokenize: true,
        cls_id,
        pad_id,
    })
}

/// Right-padded batch of encoded rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    /// Row-major `rows x width` ids.
    pub ids: Vec<u32>,
    /// 1 for real tokens, 0 for padding, same layout as `ids`.
    pub mask: Vec<u8>,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl TokenBatch {
    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    /// Padded row `r`.
    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..(r + 1) * self.width]
    }

    pub fn mask_row(&self, r: usize) -> &[u8] {
        &self.mask[r * self.width..(r + 1) * self.width]
    }

    /// Real (unpadded) tokens of row `r`.
    pub fn tokens(&self, r: usize) -> &[u32] {
        &self.row(r)[..self.lengths[r]]
    }
}

pub fn batch(rows: &[&[u32]], pad_id: u32) -> Result<TokenBatch> {
    if rows.is_empty() {
        return Err(Error::Data("cannot batch an empty list of rows".into()));
    }
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(rows.len() * width);
    let mut mask = Vec::with_capacity(rows.len() * width);
    for r in rows {
        ids.extend_from_slice(r);
        ids.resize(ids.len() + width - r.len(), pad_id);
        mask.extend(std::iter::repeat(1u8).take(r.len()));
        mask.extend(std::iter::repeat(0u8).take(width - r.len()));
    }
    Ok(TokenBatch {
        ids,
        mask,
        lengths: rows.iter().map(|r| r.len()).collect(),
        width,
    })
}
