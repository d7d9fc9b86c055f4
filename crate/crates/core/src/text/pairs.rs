//! Text pairs: parsing, group substitution, generation and storage.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::templates::{ctp_prompt, tp_prompt, DatasetText, Direction, ValidationError};
use crate::llm::{LlmClient, LlmError, PromptRequest};

pub const DEFAULT_REPROMPTS: u32 = 3;
pub const MAX_GROUPS: usize = 4;
/// Longest accepted substitution reply, in words.
pub const MAX_REPLY_WORDS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no well-formed reply after {attempts} attempt(s); last: {last:?}")]
    Exhausted { attempts: u32, last: String },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store line {line}: {message}")]
    Store { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "CTP")]
    Ctp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Initial,
    FeedbackIteration(u32),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Initial => f.write_str("initial"),
            Provenance::FeedbackIteration(k) => write!(f, "feedback_iteration_{k}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "initial" {
            return Ok(Provenance::Initial);
        }
        s.strip_prefix("feedback_iteration_")
            .and_then(|k| k.parse().ok())
            .map(Provenance::FeedbackIteration)
            .ok_or_else(|| format!("unknown provenance {s:?}"))
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A parsed description sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub raw: String,
    pub subgraphs: Vec<String>,
    pub most_influential: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub graph_id: u64,
    pub kind: PairKind,
    #[serde(default)]
    pub provenance: Provenance,
    pub raw: String,
    pub subgraphs: Vec<String>,
    pub most_influential: String,
    #[serde(default)]
    pub retry_count: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_op: bool,
}

impl TextPair {
    pub fn from_sentence(graph_id: u64, kind: PairKind, s: Sentence) -> Self {
        Self {
            graph_id,
            kind,
            provenance: Provenance::Initial,
            raw: s.raw,
            subgraphs: s.subgraphs,
            most_influential: s.most_influential,
            retry_count: 0,
            no_op: false,
        }
    }

    pub fn sentence(&self) -> Sentence {
        Sentence {
            raw: self.raw.clone(),
            subgraphs: self.subgraphs.clone(),
            most_influential: self.most_influential.clone(),
        }
    }
}

fn sentence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?is)This molecule contains\s+(.+?),?\s+functional groups?\s*,?\s+in which\s+(.+?)\s+may be the most influential for\s+(.+?)(?:\.(?:\s|$)|$)",
        )
        .unwrap()
    })
}

/// Lowercase with runs of whitespace collapsed.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn split_groups(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let part = part.trim();
        let part = part.strip_prefix("and ").unwrap_or(part);
        for piece in part.split(" and ") {
            let piece = piece.split_whitespace().collect::<Vec<_>>().join(" ");
            if !piece.is_empty() {
                out.push(piece);
            }
        }
    }
    out
}

/// Extracts the description sentence from a reply. The sentence may be
/// surrounded by other text; only the first match is used.
pub fn parse_tp_response(text: &str) -> Result<Sentence, TextError> {
    let caps = sentence_re()
        .captures(text)
        .ok_or_else(|| TextError::Malformed("no \"This molecule contains ... may be the most influential for ...\" sentence".into()))?;
    let groups = split_groups(&caps[1]);
    if groups.is_empty() || groups.len() > MAX_GROUPS {
        return Err(TextError::Malformed(format!("expected 1 to {MAX_GROUPS} groups, found {}", groups.len())));
    }
    let key = normalize_name(&caps[2]);
    let key = key.strip_prefix("the ").unwrap_or(&key);
    let most_influential = groups
        .iter()
        .find(|g| normalize_name(g) == key)
        .cloned()
        .ok_or_else(|| TextError::Malformed(format!("most influential group {:?} is not in the list", &caps[2])))?;
    let whole = caps.get(0).unwrap().as_str().trim_end();
    let mut raw = whole.split_whitespace().collect::<Vec<_>>().join(" ");
    if !raw.ends_with('.') {
        raw.push('.');
    }
    Ok(Sentence { raw, subgraphs: groups, most_influential })
}

/// "a", "a and b", "a, b, and c", ...
pub fn join_groups(groups: &[String]) -> String {
    match groups {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

pub fn render_sentence(groups: &[String], key: &str, property: &str) -> String {
    let noun = if groups.len() == 1 { "functional group" } else { "functional groups" };
    format!(
        "This molecule contains {} {noun}, in which {key} may be the most influential for {property}.",
        join_groups(groups)
    )
}

fn name_re(name: &str) -> Regex {
    let body = name.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+");
    Regex::new(&format!(r"(?i)\b{body}\b")).expect("escaped pattern")
}

/// Replaces `old` by `new` inside the group list and the key slot of the
/// sentence. Matching is case-insensitive and word-bounded; the rest of the
/// sentence is left untouched. The result must parse again with the same
/// number of groups.
pub fn substitute_group(sentence: &Sentence, old: &str, new: &str) -> Result<Sentence, TextError> {
    let new = new.split_whitespace().collect::<Vec<_>>().join(" ");
    if new.is_empty() {
        return Err(TextError::Malformed("empty replacement group".into()));
    }
    let target = normalize_name(old);
    if !sentence.subgraphs.iter().any(|g| normalize_name(g) == target) {
        return Err(TextError::Malformed(format!("group {old:?} does not occur in the sentence")));
    }
    let caps = sentence_re()
        .captures(&sentence.raw)
        .ok_or_else(|| TextError::Malformed("stored sentence does not parse".into()))?;
    let re = name_re(old);
    let mut raw = String::with_capacity(sentence.raw.len() + new.len());
    let mut cursor = 0;
    for idx in [1, 2] {
        let m = caps.get(idx).unwrap();
        raw.push_str(&sentence.raw[cursor..m.start()]);
        raw.push_str(&re.replace_all(m.as_str(), regex::NoExpand(&new)));
        cursor = m.end();
    }
    raw.push_str(&sentence.raw[cursor..]);
    let out = parse_tp_response(&raw)?;
    if out.subgraphs.len() != sentence.subgraphs.len() {
        return Err(TextError::Malformed(format!("replacement {new:?} changes the number of groups")));
    }
    Ok(out)
}

/// Asks `req`, reprompting up to `reprompts` times while `parse` rejects
/// the reply. Returns the parsed value, the number of reprompts used and
/// the accepted reply.
pub fn ask<T>(
    client: &LlmClient,
    req: &PromptRequest,
    reprompts: u32,
    mut parse: impl FnMut(&str) -> Result<T, TextError>,
) -> Result<(T, u32, String), TextError> {
    let mut last = String::new();
    for attempt in 0..=reprompts {
        let (reply, _) = client.cached_complete(&req.reprompt(attempt))?;
        match parse(&reply) {
            Ok(v) => return Ok((v, attempt, reply)),
            Err(TextError::Malformed(why)) => {
                tracing::debug!(attempt, %why, template = %req.template_id, "reprompting");
                last = reply;
            }
            Err(e) => return Err(e),
        }
    }
    Err(TextError::Exhausted { attempts: reprompts + 1, last })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub graph_id: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Generated {
    /// Sorted by graph id.
    pub pairs: Vec<TextPair>,
    pub failures: Vec<GenerationFailure>,
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every item processed")).collect()
}

fn collect(ids: impl Iterator<Item = u64>, results: Vec<Result<TextPair, String>>) -> Generated {
    let mut out = Generated::default();
    for (id, r) in ids.zip(results) {
        match r {
            Ok(p) => out.pairs.push(p),
            Err(reason) => {
                tracing::warn!(graph_id = id, %reason, "text pair generation failed");
                out.failures.push(GenerationFailure { graph_id: id, reason });
            }
        }
    }
    out.pairs.sort_by_key(|p| p.graph_id);
    out
}

/// One TP per `(graph_id, smiles)` item. Work is spread over
/// `client.config.max_parallel` threads.
pub fn generate_tps(items: &[(u64, String)], text: &DatasetText, client: &LlmClient, reprompts: u32) -> Generated {
    let results = par_map(items, client.config.max_parallel, |(id, smiles)| {
        tp_prompt(smiles, text)
            .map_err(TextError::from)
            .and_then(|req| ask(client, &req, reprompts, parse_tp_response))
            .map(|(s, retries, _)| {
                let mut tp = TextPair::from_sentence(*id, PairKind::Tp, s);
                tp.retry_count = retries;
                tp
            })
            .map_err(|e| e.to_string())
    });
    collect(items.iter().map(|(id, _)| *id), results)
}

/// CTPs for `(smiles, tp)` items, in parallel like [`generate_tps`].
pub fn generate_ctps(
    items: &[(String, TextPair)],
    text: &DatasetText,
    direction: Direction,
    client: &LlmClient,
    reprompts: u32,
) -> Generated {
    let results = par_map(items, client.config.max_parallel, |(smiles, tp)| {
        generate_ctp(smiles, tp, text, direction, client, reprompts).map_err(|e| e.to_string())
    });
    collect(items.iter().map(|(_, tp)| tp.graph_id), results)
}

/// A substitution reply: at most three words, trailing period dropped.
pub fn parse_substitution_reply(reply: &str) -> Result<String, TextError> {
    let words: Vec<&str> = reply.trim().trim_end_matches('.').split_whitespace().collect();
    if words.is_empty() {
        return Err(TextError::Malformed("empty reply".into()));
    }
    if words.len() > MAX_REPLY_WORDS {
        return Err(TextError::Malformed(format!("reply has {} words", words.len())));
    }
    Ok(words.join(" "))
}

/// Initial counterfactual text pair for one graph.
pub fn generate_ctp(
    smiles: &str,
    tp: &TextPair,
    text: &DatasetText,
    direction: Direction,
    client: &LlmClient,
    reprompts: u32,
) -> Result<TextPair, TextError> {
    let req = ctp_prompt(smiles, &tp.most_influential, &tp.raw, text, direction);
    let old = tp.most_influential.clone();
    let base = tp.sentence();
    let ((sentence, group), retries, _) = ask(client, &req, reprompts, |reply| {
        let group = parse_substitution_reply(reply)?;
        Ok((substitute_group(&base, &old, &group)?, group))
    })?;
    let mut ctp = TextPair::from_sentence(tp.graph_id, PairKind::Ctp, sentence);
    ctp.retry_count = retries;
    ctp.no_op = normalize_name(&group) == normalize_name(&old);
    Ok(ctp)
}

pub fn save_pairs(path: &Path, pairs: &[TextPair]) -> Result<(), TextError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut f, p).expect("text pair serializes");
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<TextPair>, TextError> {
    let body = fs::read_to_string(path)?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TextError::Store { line: i + 1, message: e.to_string() }))
        .collect()
}
