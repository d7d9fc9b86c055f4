//! Deterministic offline provider.
//!
//! Scripted rules are tried first, in order. A prompt no rule matches is
//! answered by a small rule-based chemist that reads the SMILES or the
//! quoted sentence out of the prompt.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{PromptRequest, Provider, ProviderFailure, TemplateId};
use crate::chem::{groups, parse_smiles};
use crate::text::pairs::{normalize_name, parse_tp_response, render_sentence};

pub const REFUSAL: &str = "I am sorry, I can not help with that.";

/// Canned replies for prompts matching every given condition. The reply
/// for reprompt `k` is `responses[min(k, len - 1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub template: Option<TemplateId>,
    #[serde(default)]
    pub contains: Option<String>,
    /// Hex SHA-256 of the rendered prompt, unsalted.
    #[serde(default)]
    pub prompt_hash: Option<String>,
    pub responses: Vec<String>,
}

impl Rule {
    fn matches(&self, req: &PromptRequest) -> bool {
        self.template.is_none_or(|t| t == req.template_id)
            && self.contains.as_deref().is_none_or(|c| req.rendered_text.contains(c))
            && self.prompt_hash.as_deref().is_none_or(|h| req.reprompt(0).text_hash() == h)
    }
}

/// How the fallback answers direct-edit prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectMode {
    #[default]
    Refuse,
    /// Returns the input SMILES unchanged.
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<Rule>,
    pub direct: DirectMode,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("reading mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("mock script: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    script: MockScript,
    calls: Arc<AtomicUsize>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self { script, calls: Arc::default() }
    }

    pub fn with_rules(rules: Vec<Rule>) -> Self {
        Self::new(MockScript { rules, ..Default::default() })
    }

    /// Reads a `.toml` or `.json` script.
    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let body = std::fs::read_to_string(path)?;
        let script = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&body).map_err(|e| ScriptError::Format(e.to_string()))?
        } else {
            serde_json::from_str(&body).map_err(|e| ScriptError::Format(e.to_string()))?
        };
        Ok(Self::new(script))
    }

    /// Shared counter of provider calls, including ones made by clones.
    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }

    pub fn respond(&self, req: &PromptRequest) -> String {
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(req)) {
            let k = (req.attempt as usize).min(rule.responses.len().saturating_sub(1));
            return rule.responses.get(k).cloned().unwrap_or_default();
        }
        match req.template_id {
            TemplateId::TpQuery => describe_reply(&req.rendered_text),
            TemplateId::CtpQuery => substitution_reply(&req.rendered_text),
            TemplateId::Feedback => feedback_reply(&req.rendered_text),
            TemplateId::DirectCf => match self.script.direct {
                DirectMode::Refuse => REFUSAL.to_string(),
                DirectMode::Echo => capture(direct_re(), &req.rendered_text).unwrap_or_default(),
            },
        }
    }
}

impl Provider for ScriptedMock {
    fn complete(&self, req: &PromptRequest) -> Result<String, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.respond(req))
    }
}

macro_rules! lazy_re {
    ($name:ident, $pat:expr) => {
        fn $name() -> &'static Regex {
            static RE: OnceLock<Regex> = OnceLock::new();
            RE.get_or_init(|| Regex::new($pat).unwrap())
        }
    };
}

lazy_re!(tp_smiles_re, r"^Please describe this molecule: (.*?) Your generated response");
lazy_re!(tp_property_re, r#"may be the most influential for (.*?)\." NO OTHER"#);
lazy_re!(ctp_key_re, r"what can we change (.+?) to (?:increase|decrease) the likelihood");
lazy_re!(quoted_re, r#"(?s)"([^"]*)"\.$"#);
lazy_re!(direct_re, r"^Minimally edit (.*?) to be a ");

fn capture(re: &Regex, text: &str) -> Option<String> {
    re.captures(text).map(|c| c[1].to_string())
}

/// Deterministic "what to swap it for" table.
pub fn swap_for(group: &str) -> &'static str {
    match normalize_name(group).as_str() {
        "nitro" => "amine",
        "amine" => "hydroxyl",
        "hydroxyl" => "carboxyl",
        "carboxyl" => "hydroxyl",
        "chloro" => "fluoro",
        "fluoro" => "chloro",
        "bromo" => "chloro",
        "iodo" => "bromo",
        "benzene ring" => "pyridine",
        "pyridine" => "benzene ring",
        "ether" => "ester",
        "ester" => "amide",
        "amide" => "ester",
        "carbonyl" => "hydroxyl",
        "nitrile" => "amine",
        "alkene" => "alkyne",
        "alkyne" => "alkene",
        "azo" => "amine",
        "sulfonyl" => "carbonyl",
        "thiol" => "hydroxyl",
        "phosphate" => "sulfonyl",
        _ => "hydroxyl",
    }
}

const SPARE: &[&str] = &["hydroxyl", "amine", "carboxyl", "chloro", "ether", "nitro", "fluoro", "amide"];

fn describe_reply(prompt: &str) -> String {
    let property = capture(tp_property_re(), prompt).unwrap_or_else(|| "its label".into());
    let Some(mol) = capture(tp_smiles_re(), prompt).and_then(|s| parse_smiles(&s).ok()) else {
        return "I could not read that molecule.".into();
    };
    let (found, key) = groups::describe(&mol);
    render_sentence(&found, &key, &property)
}

/// Swap for the key group, skipping names the sentence already lists so
/// the CTP never names one group twice.
fn substitution_reply(prompt: &str) -> String {
    let Some(key) = capture(ctp_key_re(), prompt) else {
        return "hydroxyl".into();
    };
    let listed = capture(quoted_re(), prompt).and_then(|q| parse_tp_response(&q).ok()).map(|s| s.subgraphs).unwrap_or_default();
    let taken = |g: &str| listed.iter().any(|x| normalize_name(x) == g);
    std::iter::once(swap_for(&key)).chain(SPARE.iter().copied()).find(|g| !taken(g)).unwrap_or("alkyl chain").to_string()
}

/// Changes one group of the quoted sentence, picked by a hash of the
/// prompt, to a name not already listed.
fn feedback_reply(prompt: &str) -> String {
    let Some(s) = capture(quoted_re(), prompt).and_then(|q| parse_tp_response(&q).ok()) else {
        return "(hydroxyl) : (carboxyl)".into();
    };
    let pick = PromptRequest::new(TemplateId::Feedback, prompt.to_string()).text_hash();
    let idx = usize::from_str_radix(&pick[..8], 16).unwrap_or(0) % s.subgraphs.len();
    let old = &s.subgraphs[idx];
    let taken = |g: &str| s.subgraphs.iter().any(|x| normalize_name(x) == g);
    let new = std::iter::once(swap_for(old)).chain(SPARE.iter().copied()).find(|g| !taken(g)).unwrap_or("alkyl chain");
    format!("({old}) : ({new})")
}
