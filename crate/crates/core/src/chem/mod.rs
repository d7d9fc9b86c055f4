pub mod canon;
pub mod dataset;
pub mod element;
pub mod groups;
pub mod graph;
pub mod kekulize;
pub mod molecule;
pub mod sanitize;
pub mod smiles;

pub use element::Element;
pub use graph::{GraphError, MolecularGraph, PaddedGraph, Vocabulary};
pub use molecule::{AtomKind, Bond, BondOrder, Molecule};
pub use sanitize::is_feasible;
pub use smiles::{parse_smiles, to_smiles, ParseError, SerializationError};
