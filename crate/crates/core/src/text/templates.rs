//! Prompt templates and their rendering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chem::dataset::DatasetName;
use crate::llm::{PromptRequest, TemplateId};

pub const TP_QUERY: &str = "Please describe this molecule: {molecule data} Your generated response is a text description STRICTLY in the form of: \"This molecule contains __, __, __, and __ functional groups, in which __ may be the most influential for {dataset description}.\" NO OTHER sentence patterns are allowed. Here, __ is the functional groups (best each less than 10 atoms) or significant subgraphs alphabetically. If you can not find 4 functional groups as significant subgraphs, you may just put all you have found in the __ areas).";

pub const CTP_QUERY: &str = "In {smiles}, {key component} may be the most influential for {dataset description}; what can we change {key component} to {increase/decrease} the likelihood of it being {molecule description}? Please find the best substitution functional group for {key component} that can replace the \"__\" in the last sentence (shown below within \" \"). DO NOT reply with more than 3 words. Reply ONLY the substitution function group. \"{text pairs to be revised}\".";

pub const FEEDBACK: &str = "The generated counterfactual is {SMILES}. The probability of it being {molecule description} is {true prob}. Please adjust ONE of the functional groups in the last sentence (shown below within \" \") to {increase/decrease} the likelihood of the generated counterfactual being {molecule description}. ONLY the functional group names in the sentence may be changed. Reply ONLY in the format (old functional group) : (new functional group). \"{original text pairs}\".";

pub const DIRECT_CF: &str = "Minimally edit {SMILES} to be a {desired graph description} and output its SMILES representation only.  Please only output one SMILES molecule without brackets and quotation marks. Do not output anything besides the SMILES. Under no circumstance are you to output anything else lest your experiments fail.";

pub fn template(id: TemplateId) -> &'static str {
    match id {
        TemplateId::TpQuery => TP_QUERY,
        TemplateId::CtpQuery => CTP_QUERY,
        TemplateId::Feedback => FEEDBACK,
        TemplateId::DirectCf => DIRECT_CF,
    }
}

/// Single-pass `{name}` substitution: values are never rescanned, and
/// unknown placeholders are left as they are.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let map: HashMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail.find('}') {
            Some(close) => {
                let name = &tail[1..close];
                match map.get(name) {
                    Some(v) => out.push_str(v),
                    None => out.push_str(&tail[..=close]),
                }
                rest = &tail[close + 1..];
            }
            None => {
                out.push_str(tail);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
        }
    }
}

/// Wording used to fill the label-related placeholders for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetText {
    /// What the most influential group matters for.
    pub property: String,
    /// The desired class, phrased as something a molecule can be.
    pub positive: String,
}

impl DatasetText {
    pub fn for_dataset(name: DatasetName) -> Self {
        let (property, positive) = match name {
            DatasetName::Aids => ("AIDS treatment effectiveness", "effective against HIV"),
            DatasetName::Mutagenicity => ("mutagenicity", "mutagenic"),
            DatasetName::Bbbp => ("blood-brain barrier penetration", "able to penetrate the blood-brain barrier"),
            DatasetName::ClinTox => ("clinical toxicity", "clinically toxic"),
            DatasetName::Tox21 => ("androgen receptor toxicity", "toxic to the androgen receptor pathway"),
        };
        Self { property: property.into(), positive: positive.into() }
    }

    pub fn desired_graph(&self) -> String {
        format!("molecule that is {}", self.positive)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub fn tp_prompt(smiles: &str, text: &DatasetText) -> Result<PromptRequest, ValidationError> {
    if smiles.trim().is_empty() {
        return Err(ValidationError("empty SMILES".into()));
    }
    let body = render(TP_QUERY, &[("molecule data", smiles), ("dataset description", &text.property)]);
    Ok(PromptRequest::new(TemplateId::TpQuery, body))
}

pub fn ctp_prompt(
    smiles: &str,
    key_component: &str,
    tp_raw: &str,
    text: &DatasetText,
    direction: Direction,
) -> PromptRequest {
    let body = render(
        CTP_QUERY,
        &[
            ("smiles", smiles),
            ("key component", key_component),
            ("dataset description", &text.property),
            ("increase/decrease", direction.as_str()),
            ("molecule description", &text.positive),
            ("text pairs to be revised", tp_raw),
        ],
    );
    PromptRequest::new(TemplateId::CtpQuery, body)
}

/// Probability is shown with four decimals.
pub fn feedback_prompt(
    cf_smiles: &str,
    prob_desired: f64,
    ctp_raw: &str,
    text: &DatasetText,
    direction: Direction,
) -> PromptRequest {
    let prob = format!("{prob_desired:.4}");
    let body = render(
        FEEDBACK,
        &[
            ("SMILES", cf_smiles),
            ("molecule description", &text.positive),
            ("true prob", &prob),
            ("increase/decrease", direction.as_str()),
            ("original text pairs", ctp_raw),
        ],
    );
    PromptRequest::new(TemplateId::Feedback, body)
}

pub fn direct_prompt(smiles: &str, text: &DatasetText) -> PromptRequest {
    let body = render(DIRECT_CF, &[("SMILES", smiles), ("desired graph description", &text.desired_graph())]);
    PromptRequest::new(TemplateId::DirectCf, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]), "a {y} b 2 {z}");
    }

    #[test]
    fn tp_prompt_contents() {
        let t = DatasetText::for_dataset(DatasetName::Aids);
        let p = tp_prompt("CC", &t).unwrap();
        assert!(p.rendered_text.contains("STRICTLY in the form of"));
        assert!(p.rendered_text.starts_with("Please describe this molecule: CC Your"));
        assert_eq!(tp_prompt("  ", &t), Err(ValidationError("empty SMILES".into())));
    }

    #[test]
    fn ctp_and_feedback_prompts() {
        let t = DatasetText::for_dataset(DatasetName::Bbbp);
        let p = ctp_prompt("CC(=O)O", "carboxyl", "raw tp", &t, Direction::Increase);
        assert!(p.rendered_text.contains("what can we change carboxyl to increase"));
        assert!(p.rendered_text.contains("DO NOT reply with more than 3 words"));
        assert!(p.rendered_text.ends_with("\"raw tp\"."));
        let f = feedback_prompt("CCO", 0.5, "the ctp", &t, Direction::Increase);
        assert!(f.rendered_text.contains(" is 0.5000. "));
        assert!(f.rendered_text.contains("Reply ONLY in the format (old functional group) : (new functional group)"));
        assert!(f.rendered_text.contains("\"the ctp\""));
    }
}
