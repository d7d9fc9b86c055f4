//! SMILES reading and canonical writing over heavy-atom graphs.

pub(crate) mod read;
mod write;

pub use read::{parse_smiles, ParseError};
pub use write::{to_smiles, to_smiles_permissive, to_smiles_strict, SerializationError};
