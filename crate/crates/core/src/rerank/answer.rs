use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

/// Bumped whenever the normalization rules below change.
pub const NORMALIZATION_VERSION: u32 = 1;

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").expect("valid pattern"))
}

fn thousands_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-?\d{1,3}(?:,\d{3})+(?:\.\d+)?$").expect("valid pattern"))
}

fn plain_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(-?)(\d+)(?:\.(\d+))?$").expect("valid pattern"))
}

/// Contents of the last `boxed{...}` whose braces balance.
fn last_boxed(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find("boxed{") {
        let open = search + rel + "boxed{".len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(e) = end {
            found = Some(&text[open..e]);
        }
        search = open;
    }
    found
}

fn canonical_number(s: &str) -> Option<String> {
    let caps = plain_number_re().captures(s)?;
    let neg = !caps[1].is_empty();
    let int = caps[2].trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let frac = caps.get(3).map_or("", |m| m.as_str().trim_end_matches('0'));
    let body = if frac.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{frac}")
    };
    Some(if neg && body != "0" { format!("-{body}") } else { body })
}

/// Remove `$`, collapse whitespace, drop trailing periods, drop
/// thousands separators and write plain numbers canonically (`2.0` -> `2`).
/// Returns `None` when nothing is left.
pub fn normalize_answer(raw: &str) -> Option<String> {
    let collapsed = raw.replace('$', "").split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed
        .trim_end_matches(|c: char| c == '.' || c.is_whitespace())
        .to_string();
    if thousands_re().is_match(&s) {
        s = s.replace(',', "");
    }
    if let Some(c) = canonical_number(&s) {
        s = c;
    }
    (!s.is_empty()).then_some(s)
}

/// Final answer of a solution: the last balanced `boxed{...}`, otherwise the
/// last number in the text, normalized.
pub fn extract_answer(cot_text: &str) -> Option<String> {
    if let Some(b) = last_boxed(cot_text) {
        if let Some(a) = normalize_answer(b) {
            return Some(a);
        }
    }
    let last = number_re().find_iter(cot_text).last()?;
    normalize_answer(last.as_str())
}

/// Index of the first candidate in the most frequent answer class; ties go to
/// the class that appears first. Missing answers never form a class.
pub fn majority_vote<S: AsRef<str>>(answers: &[Option<S>]) -> Option<usize> {
    let mut classes: Vec<(&str, usize, usize)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, a) in answers.iter().enumerate() {
        let Some(a) = a.as_ref().map(AsRef::as_ref) else { continue };
        match index.get(a) {
            Some(&c) => classes[c].1 += 1,
            None => {
                index.insert(a, classes.len());
                classes.push((a, 1, i));
            }
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for &(_, count, first) in &classes {
        if best.map_or(true, |(c, _)| count > c) {
            best = Some((count, first));
        }
    }
    best.map(|(_, first)| first)
}
