pub mod chem;
pub mod nn;
pub mod models;
pub mod llm;
pub mod text;
pub mod eval;
pub mod feedback;
pub mod pipeline;
