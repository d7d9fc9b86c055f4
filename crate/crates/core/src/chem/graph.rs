//! Matrix view of molecules: vocabulary, one-hot encodings and padding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::molecule::{AtomKind, Bond, BondOrder, Molecule};
use super::sanitize::is_feasible;
use super::smiles::{parse_smiles, to_smiles, ParseError};

/// Number of real bond classes (single, double, triple, aromatic).
pub const BOND_CLASSES: usize = 4;
/// Column of the reserved "no bond" class in edge-attribute rows.
pub const NO_BOND: usize = BOND_CLASSES;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has {num_nodes} nodes but the decode size is {m_max}")]
    Size { num_nodes: usize, m_max: usize },
    #[error("atom type {0} is not in the vocabulary")]
    UnknownAtom(AtomKind),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Number of unordered node pairs, i.e. rows of the edge-attribute matrix.
pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Row of pair `(i, j)`, `i < j`, in upper-triangular lexicographic order.
pub fn pair_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * m - i * (i + 1) / 2 + (j - i - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_at(mut row: usize, m: usize) -> (usize, usize) {
    for i in 0..m {
        let len = m - i - 1;
        if row < len {
            return (i, i + 1 + row);
        }
        row -= len;
    }
    panic!("pair row out of range");
}

/// Atom classes of a dataset, sorted; the reserved no-atom class sits at
/// index `len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub atoms: Vec<AtomKind>,
}

impl Vocabulary {
    pub fn new(mut atoms: Vec<AtomKind>) -> Self {
        atoms.sort();
        atoms.dedup();
        Self { atoms }
    }

    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph>) -> Self {
        Self::new(graphs.into_iter().flat_map(|g| g.atoms.iter().copied()).collect())
    }

    /// `d`, the number of real atom classes.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn no_atom(&self) -> usize {
        self.atoms.len()
    }

    /// Width of node-attribute rows, `d + 1`.
    pub fn node_dim(&self) -> usize {
        self.atoms.len() + 1
    }

    pub fn index(&self, kind: AtomKind) -> Option<usize> {
        self.atoms.binary_search(&kind).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// Heavy-atom molecular graph with a binary label. Edges are kept with
/// `i < j` in lexicographic order, which makes structural equality
/// meaningful.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub atoms: Vec<AtomKind>,
    pub edges: Vec<Edge>,
    pub label: u8,
}

impl MolecularGraph {
    pub fn new(atoms: Vec<AtomKind>, edges: impl IntoIterator<Item = Edge>, label: u8) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| if e.i < e.j { e } else { Edge { i: e.j, j: e.i, order: e.order } })
            .collect();
        edges.sort_by_key(|e| (e.i, e.j));
        edges.dedup_by_key(|e| (e.i, e.j));
        Self { atoms, edges, label }
    }

    pub fn from_molecule(mol: &Molecule, label: u8) -> Self {
        Self::new(
            mol.atoms.clone(),
            mol.bonds.iter().map(|b| Edge { i: b.a, j: b.b, order: b.order }),
            label,
        )
    }

    pub fn from_smiles(smiles: &str, label: u8) -> Result<Self, ParseError> {
        Ok(Self::from_molecule(&parse_smiles(smiles)?, label))
    }

    pub fn to_molecule(&self) -> Molecule {
        Molecule {
            atoms: self.atoms.clone(),
            bonds: self
                .edges
                .iter()
                .map(|e| Bond { a: e.i, b: e.j, order: e.order })
                .collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.atoms.len()
    }

    /// Canonical SMILES; infeasible graphs use the permissive writer.
    pub fn to_smiles(&self) -> String {
        to_smiles(&self.to_molecule())
    }

    pub fn is_feasible(&self) -> bool {
        is_feasible(&self.to_molecule())
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let m = self.num_nodes();
        let mut a = Array2::zeros((m, m));
        for e in &self.edges {
            a[[e.i, e.j]] = 1.0;
            a[[e.j, e.i]] = 1.0;
        }
        a
    }

    pub fn node_attrs(&self, vocab: &Vocabulary) -> Result<Array2<f64>, GraphError> {
        let mut x = Array2::zeros((self.num_nodes(), vocab.node_dim()));
        for (r, &kind) in self.atoms.iter().enumerate() {
            let c = vocab.index(kind).ok_or(GraphError::UnknownAtom(kind))?;
            x[[r, c]] = 1.0;
        }
        Ok(x)
    }

    pub fn edge_attrs(&self) -> Array2<f64> {
        edge_attrs_sized(self, self.num_nodes())
    }

    /// Checks the structural invariants: edge endpoints in range, no self
    /// loops, no duplicates, sorted with `i < j`.
    pub fn validate(&self) -> Result<(), GraphError> {
        let m = self.num_nodes();
        let mut prev: Option<(usize, usize)> = None;
        for e in &self.edges {
            if e.i >= e.j || e.j >= m {
                return Err(GraphError::Invalid(format!("bad edge ({}, {})", e.i, e.j)));
            }
            if prev.is_some_and(|p| p >= (e.i, e.j)) {
                return Err(GraphError::Invalid("edges not sorted or duplicated".into()));
            }
            prev = Some((e.i, e.j));
        }
        Ok(())
    }

    /// Pads to `m_max` nodes with the reserved no-atom / no-bond classes.
    pub fn pad(&self, vocab: &Vocabulary, m_max: usize) -> Result<PaddedGraph, GraphError> {
        let m = self.num_nodes();
        if m > m_max {
            return Err(GraphError::Size { num_nodes: m, m_max });
        }
        let mut a = Array2::zeros((m_max, m_max));
        for e in &self.edges {
            a[[e.i, e.j]] = 1.0;
            a[[e.j, e.i]] = 1.0;
        }
        let mut x = Array2::zeros((m_max, vocab.node_dim()));
        for r in 0..m_max {
            let c = match self.atoms.get(r) {
                Some(&kind) => vocab.index(kind).ok_or(GraphError::UnknownAtom(kind))?,
                None => vocab.no_atom(),
            };
            x[[r, c]] = 1.0;
        }
        Ok(PaddedGraph {
            a,
            x,
            e: edge_attrs_sized(self, m_max),
            num_nodes: m,
            label: self.label,
        })
    }

    /// Same graph with nodes relabelled so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let mut atoms = self.atoms.clone();
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        MolecularGraph::new(
            atoms,
            self.edges.iter().map(|e| Edge { i: perm[e.i], j: perm[e.j], order: e.order }),
            self.label,
        )
    }
}

fn edge_attrs_sized(g: &MolecularGraph, m: usize) -> Array2<f64> {
    let mut e = Array2::zeros((pair_count(m), BOND_CLASSES + 1));
    for r in 0..pair_count(m) {
        e[[r, NO_BOND]] = 1.0;
    }
    for edge in &g.edges {
        let r = pair_index(edge.i, edge.j, m);
        e[[r, NO_BOND]] = 0.0;
        e[[r, edge.order.index()]] = 1.0;
    }
    e
}

/// Fixed-size matrix triple `(A, X, E)` fed to the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddedGraph {
    pub a: Array2<f64>,
    pub x: Array2<f64>,
    pub e: Array2<f64>,
    pub num_nodes: usize,
    pub label: u8,
}

impl PaddedGraph {
    pub fn m_max(&self) -> usize {
        self.a.nrows()
    }

    /// Mask of real nodes (1 for atoms, 0 for no-atom rows).
    pub fn node_mask(&self) -> Vec<f64> {
        let no_atom = self.x.ncols() - 1;
        self.x.rows().into_iter().map(|r| 1.0 - r[no_atom]).collect()
    }

    /// Inverse of [`MolecularGraph::pad`] for one-hot inputs.
    pub fn unpad(&self, vocab: &Vocabulary) -> Result<MolecularGraph, GraphError> {
        let m_max = self.m_max();
        if self.x.ncols() != vocab.node_dim() || self.e.nrows() != pair_count(m_max) {
            return Err(GraphError::Shape(format!(
                "x {:?}, e {:?} for m_max {m_max}",
                self.x.dim(),
                self.e.dim()
            )));
        }
        let mut atoms = Vec::with_capacity(self.num_nodes);
        for r in 0..self.num_nodes {
            let c = argmax(self.x.row(r).iter().copied());
            let kind = vocab
                .atoms
                .get(c)
                .copied()
                .ok_or_else(|| GraphError::Invalid(format!("row {r} is a padding row")))?;
            atoms.push(kind);
        }
        let mut edges = Vec::new();
        for i in 0..self.num_nodes {
            for j in i + 1..self.num_nodes {
                if self.a[[i, j]] > 0.5 {
                    let c = argmax(self.e.row(pair_index(i, j, m_max)).iter().copied());
                    if let Some(order) = BondOrder::from_index(c) {
                        edges.push(Edge { i, j, order });
                    }
                }
            }
        }
        Ok(MolecularGraph::new(atoms, edges, self.label))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::element::Element;

    fn ethane() -> MolecularGraph {
        MolecularGraph::from_smiles("CC", 0).unwrap()
    }

    #[test]
    fn pair_index_roundtrip() {
        for m in 2..9 {
            let mut seen = 0;
            for i in 0..m {
                for j in i + 1..m {
                    assert_eq!(pair_index(i, j, m), seen);
                    assert_eq!(pair_at(seen, m), (i, j));
                    seen += 1;
                }
            }
            assert_eq!(seen, pair_count(m));
        }
    }

    #[test]
    fn adjacency_of_ethane() {
        let a = ethane().adjacency();
        assert_eq!(a, ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn padding_uses_reserved_classes() {
        let g = ethane();
        let vocab = Vocabulary::from_graphs([&g]);
        let p = g.pad(&vocab, 3).unwrap();
        assert_eq!(p.x.row(2).to_vec(), vec![0.0, 1.0]);
        assert_eq!(p.a.row(2).to_vec(), vec![0.0; 3]);
        assert_eq!(p.a.column(2).to_vec(), vec![0.0; 3]);
        // pairs (0,1), (0,2), (1,2)
        assert_eq!(p.e.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.e.row(1).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.node_mask(), vec![1.0, 1.0, 0.0]);
        assert_eq!(p.unpad(&vocab).unwrap(), g);
    }

    #[test]
    fn exact_size_padding_is_identity() {
        let g = ethane();
        let vocab = Vocabulary::from_graphs([&g]);
        let p = g.pad(&vocab, 2).unwrap();
        assert_eq!(p.a, g.adjacency());
        assert_eq!(p.e, g.edge_attrs());
    }

    #[test]
    fn oversize_graph_is_rejected() {
        let g = MolecularGraph::from_smiles("CCC", 0).unwrap();
        let vocab = Vocabulary::from_graphs([&g]);
        assert_eq!(g.pad(&vocab, 2), Err(GraphError::Size { num_nodes: 3, m_max: 2 }));
    }

    #[test]
    fn unknown_atom_is_reported() {
        let g = MolecularGraph::from_smiles("CO", 0).unwrap();
        let vocab = Vocabulary::new(vec![AtomKind::neutral(Element::C)]);
        assert!(matches!(g.pad(&vocab, 2), Err(GraphError::UnknownAtom(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax([0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax([0.4, 0.4, 0.2]), 0);
    }
}
