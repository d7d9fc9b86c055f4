//! Prompts and the structured text that describes molecules.

pub mod pairs;
pub mod templates;

pub use pairs::{
    generate_ctp, generate_tps, load_pairs, parse_substitution_reply, parse_tp_response, save_pairs, substitute_group,
    PairKind, Provenance, Sentence, TextError, TextPair,
};
pub use templates::{DatasetText, Direction, ValidationError};
