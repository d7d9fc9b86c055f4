//! Iterative refinement of counterfactual text pairs from classifier
//! feedback, and the direct-edit LLM baseline.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chem::{parse_smiles, MolecularGraph};
use crate::eval::distance::{graph_distance, DistanceWeights};
use crate::llm::LlmClient;
use crate::models::autoencoder::{discretize, CaError, CaItem, CaTrainer, CounterfactualAutoencoder, Discrete, LossRecord};
use crate::models::gtgnn::GtGnn;
use crate::text::pairs::{
    ask, normalize_name, par_map, substitute_group, GenerationFailure, PairKind, Provenance, Sentence, TextError, TextPair,
    DEFAULT_REPROMPTS,
};
use crate::text::templates::{direct_prompt, feedback_prompt, DatasetText, Direction};

/// Which part of the pipeline is switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    None,
    /// No text-encoder pretraining.
    Np,
    /// The autoencoder is not optimized between feedback rounds of an epoch.
    Nt,
    /// No feedback rounds.
    Nf,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Np => "np",
            Ablation::Nt => "nt",
            Ablation::Nf => "nf",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().trim_start_matches('-') {
            "none" | "full" => Ok(Ablation::None),
            "np" => Ok(Ablation::Np),
            "nt" => Ok(Ablation::Nt),
            "nf" => Ok(Ablation::Nf),
            other => Err(format!("unknown ablation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    /// Rounds per epoch.
    pub iterations: u32,
    pub reprompts: u32,
    pub direction: Direction,
    pub ablation: Ablation,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { iterations: 3, reprompts: DEFAULT_REPROMPTS, direction: Direction::Increase, ablation: Ablation::None }
    }
}

impl FeedbackConfig {
    /// Rounds actually run per epoch.
    pub fn rounds(&self) -> u32 {
        if self.ablation == Ablation::Nf {
            0
        } else {
            self.iterations
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error("feedback input: {0}")]
    Input(String),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path} line {line}: {message}")]
    Store { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub ctp: TextPair,
    pub cf_smiles: String,
    pub prob_desired: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackState {
    pub graph_id: u64,
    pub current_ctp: TextPair,
    pub iteration: u32,
    pub history: Vec<HistoryEntry>,
    /// Set after a fatal provider error; no further rounds run.
    pub failed: Option<String>,
}

impl FeedbackState {
    pub fn new(ctp: TextPair) -> Self {
        Self { graph_id: ctp.graph_id, current_ctp: ctp, iteration: 0, history: Vec::new(), failed: None }
    }
}

/// One line of the feedback transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub epoch: usize,
    pub graph_id: u64,
    pub iteration: u32,
    pub ctp_before: String,
    pub cf_smiles: String,
    pub prob: f64,
    pub llm_response: String,
    pub ctp_after: String,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

fn reply_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\(?\s*([^():]+?)\s*\)?\s*:\s*\(?\s*([^():]+?)\s*\)?\s*\.?\s*$").unwrap())
}

/// Reads `(old) : (new)`; parentheses are optional. `old` must name a
/// group of `ctp` and differ from `new`.
pub fn parse_feedback_response(text: &str, ctp: &Sentence) -> Result<(String, String), TextError> {
    let caps = reply_re()
        .captures(text.trim())
        .ok_or_else(|| TextError::Malformed(format!("not of the form (old) : (new): {text:?}")))?;
    let old = caps[1].split_whitespace().collect::<Vec<_>>().join(" ");
    let new = caps[2].split_whitespace().collect::<Vec<_>>().join(" ");
    let target = normalize_name(&old);
    let Some(found) = ctp.subgraphs.iter().find(|g| normalize_name(g) == target) else {
        return Err(TextError::Malformed(format!("unknown group {old:?}")));
    };
    if normalize_name(&new) == target {
        return Err(TextError::Malformed(format!("replacement of {old:?} by itself")));
    }
    Ok((found.clone(), new))
}

/// Substitutes one group and checks that exactly one slot of the group
/// list changed.
pub fn apply_feedback(ctp: &Sentence, old: &str, new: &str) -> Result<Sentence, TextError> {
    let out = substitute_group(ctp, old, new)?;
    let changed = ctp.subgraphs.iter().zip(&out.subgraphs).filter(|(a, b)| normalize_name(a) != normalize_name(b)).count();
    if changed != 1 {
        return Err(TextError::Malformed(format!("replacing {old:?} changed {changed} groups")));
    }
    Ok(out)
}

/// Next CTP after a round. `after` is `None` when the round was skipped.
pub fn advance(prev: &TextPair, iteration: u32, after: Option<Sentence>, retries: u32) -> TextPair {
    let mut next = match after {
        Some(s) => TextPair::from_sentence(prev.graph_id, PairKind::Ctp, s),
        None => prev.clone(),
    };
    next.provenance = Provenance::FeedbackIteration(iteration);
    next.retry_count = retries;
    next.no_op = false;
    next
}

/// A discretized counterfactual with its classifier verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// `None` when every node was deleted.
    pub discrete: Option<Discrete>,
    /// Empty for a degenerate graph.
    pub smiles: String,
    pub prob_desired: f64,
    pub label: u8,
    pub feasible: bool,
}

/// Decodes the latent mean of `item`'s current text and classifies it.
pub fn decode_counterfactual(ca: &CounterfactualAutoencoder, gt: &GtGnn, item: &CaItem) -> Result<Decoded, CaError> {
    let dense = ca.generate(&item.tokens, &item.q);
    match discretize(&dense, &ca.vocab) {
        Ok(d) => {
            let p = gt.predict(&d.graph)?;
            Ok(Decoded {
                smiles: d.graph.to_smiles(),
                prob_desired: p.prob_desired,
                label: p.label,
                feasible: d.graph.is_feasible(),
                discrete: Some(d),
            })
        }
        Err(_) => Ok(Decoded { discrete: None, smiles: String::new(), prob_desired: 0.0, label: 0, feasible: false }),
    }
}

/// Runs one round for one graph and updates `state`. An exhausted
/// reprompt budget keeps the previous text and still counts as a round;
/// provider failures are returned.
#[allow(clippy::too_many_arguments)]
pub fn feedback_iteration(
    state: &mut FeedbackState,
    item: &CaItem,
    ca: &CounterfactualAutoencoder,
    gt: &GtGnn,
    client: &LlmClient,
    text: &DatasetText,
    cfg: &FeedbackConfig,
    epoch: usize,
) -> Result<TranscriptRecord, FeedbackError> {
    if item.graph_id != state.graph_id {
        return Err(FeedbackError::Input(format!("item {} paired with state {}", item.graph_id, state.graph_id)));
    }
    let cf = decode_counterfactual(ca, gt, item)?;
    let before = state.current_ctp.clone();
    let req = feedback_prompt(&cf.smiles, cf.prob_desired, &before.raw, text, cfg.direction);
    let sentence = before.sentence();
    let asked = ask(client, &req, cfg.reprompts, |reply| {
        let (old, new) = parse_feedback_response(reply, &sentence)?;
        apply_feedback(&sentence, &old, &new)
    });
    let iteration = state.iteration + 1;
    let (after, retries, response, skipped) = match asked {
        Ok((s, retries, reply)) => (Some(s), retries, reply, false),
        Err(TextError::Exhausted { attempts, last }) => {
            tracing::warn!(graph_id = state.graph_id, iteration, "feedback reply unusable; keeping previous text");
            (None, attempts - 1, last, true)
        }
        Err(e) => return Err(e.into()),
    };
    let next = advance(&before, iteration, after, retries);
    let record = TranscriptRecord {
        epoch,
        graph_id: state.graph_id,
        iteration,
        ctp_before: before.raw.clone(),
        cf_smiles: cf.smiles.clone(),
        prob: cf.prob_desired,
        llm_response: response,
        ctp_after: next.raw.clone(),
        retries,
        skipped,
    };
    state.history.push(HistoryEntry { ctp: before, cf_smiles: cf.smiles, prob_desired: cf.prob_desired });
    state.current_ctp = next;
    state.iteration = iteration;
    Ok(record)
}

/// Rebuilds the final CTPs from the initial ones and a transcript.
pub fn replay_transcript(initial: &[TextPair], records: &[TranscriptRecord]) -> Result<Vec<TextPair>, FeedbackError> {
    let mut current: Vec<TextPair> = initial.to_vec();
    for r in records {
        let slot = current
            .iter_mut()
            .find(|p| p.graph_id == r.graph_id)
            .ok_or_else(|| FeedbackError::Input(format!("transcript names unknown graph {}", r.graph_id)))?;
        if slot.raw != r.ctp_before {
            return Err(FeedbackError::Input(format!("graph {} iteration {}: text before does not match", r.graph_id, r.iteration)));
        }
        let after = if r.skipped { None } else { Some(crate::text::pairs::parse_tp_response(&r.ctp_after)?) };
        *slot = advance(slot, r.iteration, after, r.retries);
    }
    Ok(current)
}

/// Per-round bookkeeping: a checksum of the autoencoder at the time the
/// round ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    pub epoch: usize,
    pub round: usize,
    pub ca_checksum: String,
}

/// SHA-256 over every parameter of the autoencoder and its text encoder.
pub fn param_checksum(ca: &CounterfactualAutoencoder) -> String {
    let mut h = Sha256::new();
    for m in ca.encoder.store.values().iter().chain(ca.store.values()) {
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    crate::llm::hex(&h.finalize())
}

/// One round over all live graphs, spread over the client's worker limit.
/// Items are re-tokenized with their new text afterwards.
#[allow(clippy::too_many_arguments)]
pub fn feedback_round(
    states: &mut [FeedbackState],
    items: &mut [CaItem],
    ca: &CounterfactualAutoencoder,
    gt: &GtGnn,
    client: &LlmClient,
    text: &DatasetText,
    cfg: &FeedbackConfig,
    epoch: usize,
) -> (Vec<TranscriptRecord>, Vec<GenerationFailure>) {
    let idx: Vec<usize> = (0..states.len()).collect();
    let done = par_map(&idx, client.config.max_parallel, |&i| {
        let mut state = states[i].clone();
        if state.failed.is_some() {
            return (state, None);
        }
        let r = feedback_iteration(&mut state, &items[i], ca, gt, client, text, cfg, epoch);
        if let Err(e) = &r {
            state.failed = Some(e.to_string());
        }
        (state, Some(r.map_err(|e| e.to_string())))
    });
    let mut transcript = Vec::new();
    let mut failures = Vec::new();
    for (i, (state, r)) in done.into_iter().enumerate() {
        states[i] = state;
        match r {
            Some(Ok(rec)) => {
                if let Err(e) = ca.retext(&mut items[i], &states[i].current_ctp.raw) {
                    states[i].failed = Some(e.to_string());
                    failures.push(GenerationFailure { graph_id: states[i].graph_id, reason: e.to_string() });
                }
                transcript.push(rec);
            }
            Some(Err(reason)) => {
                tracing::warn!(graph_id = states[i].graph_id, %reason, "feedback failed");
                failures.push(GenerationFailure { graph_id: states[i].graph_id, reason });
            }
            None => {}
        }
    }
    (transcript, failures)
}

#[derive(Debug, Clone, Default)]
pub struct FeedbackRun {
    pub losses: Vec<LossRecord>,
    /// Final CTP per item, in item order.
    pub ctps: Vec<TextPair>,
    pub transcript: Vec<TranscriptRecord>,
    pub failures: Vec<GenerationFailure>,
    pub rounds: Vec<RoundLog>,
}

/// Trains the autoencoder for `epochs` epochs with `cfg.rounds()` feedback
/// rounds per epoch. `items[i]` must carry the tokens of `ctps[i]`.
///
/// The shuffled batches of an epoch are split into as many runs as there
/// are rounds and a round follows each run. Under [`Ablation::Nt`] the
/// whole pass runs first and the rounds follow back to back. With zero
/// rounds this is plain training.
#[allow(clippy::too_many_arguments)]
pub fn run_feedback_loop(
    ca: &mut CounterfactualAutoencoder,
    gt: &GtGnn,
    items: &mut [CaItem],
    ctps: &[TextPair],
    client: &LlmClient,
    text: &DatasetText,
    cfg: &FeedbackConfig,
    epochs: usize,
    mut on_epoch: impl FnMut(&LossRecord),
) -> Result<FeedbackRun, FeedbackError> {
    if items.len() != ctps.len() || items.iter().zip(ctps).any(|(i, c)| i.graph_id != c.graph_id) {
        return Err(FeedbackError::Input("items and text pairs are not aligned".into()));
    }
    let mut states: Vec<FeedbackState> = ctps.iter().cloned().map(FeedbackState::new).collect();
    let mut run = FeedbackRun::default();
    let mut tr = CaTrainer::new(ca, gt);
    let rounds = cfg.rounds() as usize;
    for epoch in 0..epochs {
        let mut round = |k: usize, ca: &CounterfactualAutoencoder, items: &mut [CaItem]| {
            run.rounds.push(RoundLog { epoch, round: k, ca_checksum: param_checksum(ca) });
            let (t, f) = feedback_round(&mut states, items, ca, gt, client, text, cfg, epoch);
            run.transcript.extend(t);
            run.failures.extend(f);
        };
        let rec = if cfg.ablation == Ablation::Nt {
            let rec = tr.epoch_with(ca, items, 0, |_, _, _| {})?;
            for k in 0..rounds {
                round(k, ca, items);
            }
            rec
        } else {
            tr.epoch_with(ca, items, rounds, &mut round)?
        };
        on_epoch(&rec);
        run.losses.push(rec);
    }
    run.ctps = states.into_iter().map(|s| s.current_ctp).collect();
    Ok(run)
}

/// One generated counterfactual. `smiles` is empty and `distance` absent
/// when every node was deleted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub graph_id: u64,
    /// Classifier label of the input graph.
    pub input_label: u8,
    pub smiles: String,
    pub prob_desired: f64,
    pub label: u8,
    pub feasible: bool,
    pub degenerate: bool,
    pub distance: Option<f64>,
    pub ctp: String,
}

/// Decodes every item with its final text.
pub fn generate_counterfactuals(
    ca: &CounterfactualAutoencoder,
    gt: &GtGnn,
    items: &[CaItem],
    ctps: &[TextPair],
    weights: DistanceWeights,
) -> Result<Vec<CounterfactualRecord>, FeedbackError> {
    if items.len() != ctps.len() {
        return Err(FeedbackError::Input("items and text pairs are not aligned".into()));
    }
    items
        .iter()
        .zip(ctps)
        .map(|(item, ctp)| {
            let input = item.target.unpad(&ca.vocab).map_err(CaError::from)?;
            let input_label = gt.predict(&input).map_err(CaError::from)?.label;
            let cf = decode_counterfactual(ca, gt, item)?;
            let distance = match &cf.discrete {
                Some(d) => Some(graph_distance(&item.target, &d.padded, weights).map_err(|e| FeedbackError::Input(e.to_string()))?),
                None => None,
            };
            Ok(CounterfactualRecord {
                graph_id: item.graph_id,
                input_label,
                smiles: cf.smiles,
                prob_desired: cf.prob_desired,
                label: cf.label,
                feasible: cf.feasible,
                degenerate: cf.discrete.is_none(),
                distance,
                ctp: ctp.raw.clone(),
            })
        })
        .collect()
}

/// Result of asking the LLM to edit a molecule directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectRecord {
    pub graph_id: u64,
    pub input_smiles: String,
    pub reply: String,
    pub cf_smiles: Option<String>,
    pub prob_desired: Option<f64>,
    pub label: Option<u8>,
    pub feasible: bool,
    pub distance: Option<f64>,
    pub failure: Option<String>,
}

fn direct_candidate(reply: &str) -> Result<&str, String> {
    let s = reply.trim().trim_matches('`').trim().trim_end_matches('.');
    if s.is_empty() {
        return Err("empty reply".into());
    }
    if s.chars().any(char::is_whitespace) {
        return Err(format!("reply is not a single SMILES: {reply:?}"));
    }
    Ok(s)
}

/// Asks for a direct minimal edit of `g` and scores the reply. Replies
/// that do not parse, or use atoms unknown to the classifier, become
/// failure records; provider errors are returned.
pub fn direct_llm_counterfactual(
    graph_id: u64,
    smiles: &str,
    g: &MolecularGraph,
    gt: &GtGnn,
    client: &LlmClient,
    text: &DatasetText,
    weights: DistanceWeights,
) -> Result<DirectRecord, TextError> {
    let (reply, _) = client.cached_complete(&direct_prompt(smiles, text))?;
    let mut rec = DirectRecord {
        graph_id,
        input_smiles: smiles.to_string(),
        reply: reply.clone(),
        cf_smiles: None,
        prob_desired: None,
        label: None,
        feasible: false,
        distance: None,
        failure: None,
    };
    let scored = (|| -> Result<(String, f64, u8, bool, f64), String> {
        let cand = direct_candidate(&reply)?;
        let mol = parse_smiles(cand).map_err(|e| e.to_string())?;
        let cf = MolecularGraph::from_molecule(&mol, 0);
        let p = gt.predict(&cf).map_err(|e| e.to_string())?;
        let m = g.num_nodes().max(cf.num_nodes());
        let a = g.pad(&gt.vocab, m).map_err(|e| e.to_string())?;
        let b = cf.pad(&gt.vocab, m).map_err(|e| e.to_string())?;
        let d = graph_distance(&a, &b, weights).map_err(|e| e.to_string())?;
        Ok((cf.to_smiles(), p.prob_desired, p.label, cf.is_feasible(), d))
    })();
    match scored {
        Ok((s, prob, label, feasible, d)) => {
            rec.cf_smiles = Some(s);
            rec.prob_desired = Some(prob);
            rec.label = Some(label);
            rec.feasible = feasible;
            rec.distance = Some(d);
        }
        Err(why) => rec.failure = Some(why),
    }
    Ok(rec)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), FeedbackError> {
    use std::io::Write;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FeedbackError> {
    let body = std::fs::read_to_string(path)?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FeedbackError::Store {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::pairs::parse_tp_response;

    const S: &str = "This molecule contains amine, carboxyl, and benzene ring functional groups, in which carboxyl may be the most influential for X.";

    #[test]
    fn replies_parse_leniently() {
        let s = parse_tp_response(S).unwrap();
        assert_eq!(parse_feedback_response("(carboxyl) : (hydroxyl)", &s).unwrap(), ("carboxyl".into(), "hydroxyl".into()));
        assert_eq!(parse_feedback_response("carboxyl : hydroxyl", &s).unwrap(), ("carboxyl".into(), "hydroxyl".into()));
        assert_eq!(parse_feedback_response(" (Benzene  Ring):(pyridine).", &s).unwrap(), ("benzene ring".into(), "pyridine".into()));
        for bad in ["replace carboxyl with hydroxyl", "(nitro) : (amine)", "(amine) : (amine)", "", "(a) : (b) : (c)"] {
            assert!(matches!(parse_feedback_response(bad, &s), Err(TextError::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn one_slot_changes() {
        let s = parse_tp_response(S).unwrap();
        let out = apply_feedback(&s, "carboxyl", "hydroxyl").unwrap();
        assert_eq!(out.subgraphs, ["amine", "hydroxyl", "benzene ring"]);
        assert_eq!(out.most_influential, "hydroxyl");
        let twice = parse_tp_response(
            "This molecule contains amine, and aromatic amine functional groups, in which amine may be the most influential for X.",
        )
        .unwrap();
        assert!(apply_feedback(&twice, "amine", "nitro").is_err());
    }

    #[test]
    fn direct_replies_must_be_one_token() {
        assert!(direct_candidate("I am sorry, I can not help with that.").is_err());
        assert_eq!(direct_candidate(" `CCO`\n").unwrap(), "CCO");
        assert!(direct_candidate("  ").is_err());
    }

    #[test]
    fn ablation_names() {
        assert_eq!("-NT".parse::<Ablation>().unwrap(), Ablation::Nt);
        assert_eq!(FeedbackConfig { ablation: Ablation::Nf, ..Default::default() }.rounds(), 0);
        assert_eq!(serde_json::to_string(&Ablation::Np).unwrap(), "\"np\"");
    }
}
