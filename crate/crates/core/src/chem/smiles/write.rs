use std::fmt::Write as _;

use crate::chem::canon::{break_tie, first_tie, initial_ranks, refine};
use crate::chem::element::{Element, ValenceLimit};
use crate::chem::kekulize::{kekulize, KekuleMode};
use crate::chem::molecule::{BondOrder, Molecule};
use crate::chem::sanitize::first_valence_violation;

/// Upper bound on tie-break orderings tried when searching for the
/// lexicographically smallest string.
const CANON_LEAVES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SerializationError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("aromatic bonds cannot be kekulized")]
    NotKekulizable,
    #[error("atom {atom} exceeds its allowed valence")]
    Valence { atom: usize },
}

/// Canonical SMILES of the sanitized (kekulized, charge-separated) form.
/// Fails for molecules that do not pass sanitization.
pub fn to_smiles_strict(mol: &Molecule) -> Result<String, SerializationError> {
    if mol.num_atoms() == 0 {
        return Err(SerializationError::Empty);
    }
    let mut m = mol.clone();
    if m.has_aromatic_bonds() {
        let h = vec![None; m.num_atoms()];
        kekulize(&mut m, &h, KekuleMode::LenientHetero)
            .map_err(|_| SerializationError::NotKekulizable)?;
    }
    crate::chem::sanitize::cleanup(&mut m);
    if let Some(atom) = first_valence_violation(&m) {
        return Err(SerializationError::Valence { atom });
    }
    Ok(canonical_string(&m))
}

/// Canonical SMILES without sanitization: hypervalent atoms are written as
/// they are and un-kekulizable aromatic bonds are written as `:`.
pub fn to_smiles_permissive(mol: &Molecule) -> String {
    let mut m = mol.clone();
    if m.has_aromatic_bonds() {
        let h = vec![None; m.num_atoms()];
        let mut k = m.clone();
        if kekulize(&mut k, &h, KekuleMode::LenientHetero).is_ok() {
            m = k;
        }
    }
    canonical_string(&m)
}

/// Strict serialization with a permissive fallback; never fails.
pub fn to_smiles(mol: &Molecule) -> String {
    match to_smiles_strict(mol) {
        Ok(s) => s,
        Err(err) => {
            tracing::debug!(%err, "falling back to permissive SMILES");
            to_smiles_permissive(mol)
        }
    }
}

fn canonical_string(mol: &Molecule) -> String {
    if mol.num_atoms() == 0 {
        return String::new();
    }
    let adj = mol.adjacency();
    let start = refine(mol, &adj, initial_ranks(mol));
    let mut best: Option<String> = None;
    let mut leaves = 0;
    search(mol, &adj, start, &mut best, &mut leaves);
    best.unwrap()
}

fn search(
    mol: &Molecule,
    adj: &[Vec<(usize, usize)>],
    ranks: Vec<usize>,
    best: &mut Option<String>,
    leaves: &mut usize,
) {
    let Some(tie) = first_tie(&ranks) else {
        *leaves += 1;
        let s = write_ordered(mol, adj, &ranks);
        if best.as_ref().is_none_or(|b| s < *b) {
            *best = Some(s);
        }
        return;
    };
    for (n, &atom) in tie.iter().enumerate() {
        if n > 0 && *leaves >= CANON_LEAVES {
            break;
        }
        search(mol, adj, break_tie(mol, adj, &ranks, atom), best, leaves);
    }
}

struct Writer<'a> {
    mol: &'a Molecule,
    adj: &'a [Vec<(usize, usize)>],
    ranks: &'a [usize],
    visited: Vec<bool>,
    seen_bond: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    ring_open: Vec<Vec<usize>>,
    ring_close: Vec<Vec<usize>>,
    digit_of: Vec<usize>,
    free_digits: Vec<bool>,
    out: String,
}

fn write_ordered(mol: &Molecule, adj: &[Vec<(usize, usize)>], ranks: &[usize]) -> String {
    let n = mol.num_atoms();
    let mut w = Writer {
        mol,
        adj,
        ranks,
        visited: vec![false; n],
        seen_bond: vec![false; mol.bonds.len()],
        children: vec![Vec::new(); n],
        ring_open: vec![Vec::new(); n],
        ring_close: vec![Vec::new(); n],
        digit_of: vec![0; mol.bonds.len()],
        free_digits: vec![true; 100],
        out: String::new(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ranks[i]);
    let mut first = true;
    for &root in &order {
        if w.visited[root] {
            continue;
        }
        w.plan(root, None);
        if !first {
            w.out.push('.');
        }
        first = false;
        w.emit(root, None);
    }
    w.out
}

impl Writer<'_> {
    fn plan(&mut self, v: usize, parent_bond: Option<usize>) {
        self.visited[v] = true;
        let mut nbrs = self.adj[v].clone();
        nbrs.sort_by_key(|&(j, _)| self.ranks[j]);
        for (w, k) in nbrs {
            if Some(k) == parent_bond || self.seen_bond[k] {
                continue;
            }
            self.seen_bond[k] = true;
            if self.visited[w] {
                self.ring_open[w].push(k);
                self.ring_close[v].push(k);
            } else {
                self.children[v].push((w, k));
                self.plan(w, Some(k));
            }
        }
    }

    fn emit(&mut self, v: usize, parent_bond: Option<usize>) {
        if let Some(k) = parent_bond {
            self.out.push_str(bond_symbol(self.mol.bonds[k].order));
        }
        self.out.push_str(&atom_symbol(self.mol, v));
        let opens = std::mem::take(&mut self.ring_open[v]);
        let mut open_digits = Vec::with_capacity(opens.len());
        for &k in &opens {
            let d = self.free_digits.iter().skip(1).position(|f| *f).map_or(99, |p| p + 1);
            self.free_digits[d] = false;
            self.digit_of[k] = d;
            open_digits.push(d);
        }
        for k in std::mem::take(&mut self.ring_close[v]) {
            let d = self.digit_of[k];
            push_digit(&mut self.out, d);
            self.free_digits[d] = true;
        }
        for (&k, d) in opens.iter().zip(open_digits) {
            self.out.push_str(bond_symbol(self.mol.bonds[k].order));
            push_digit(&mut self.out, d);
        }
        let kids = std::mem::take(&mut self.children[v]);
        let last = kids.len().saturating_sub(1);
        for (n, (w, k)) in kids.into_iter().enumerate() {
            if n < last {
                self.out.push('(');
                self.emit(w, Some(k));
                self.out.push(')');
            } else {
                self.emit(w, Some(k));
            }
        }
    }
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        let _ = write!(out, "{d}");
    } else {
        let _ = write!(out, "%{d:02}");
    }
}

fn bond_symbol(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => ":",
    }
}

fn atom_symbol(mol: &Molecule, v: usize) -> String {
    let a = mol.atoms[v];
    if a.element == Element::WILDCARD && a.charge == 0 {
        return "*".into();
    }
    if a.charge == 0 && a.element.is_organic_subset() {
        return a.element.symbol().into();
    }
    let used = mol.explicit_valence(v);
    let h = match a.element.valence_limit(a.charge) {
        ValenceLimit::Unrestricted => 0,
        ValenceLimit::Max(_) => a.element.target_valence(a.charge, used).map_or(0, |t| t - used),
    };
    let mut s = format!("[{}", a.element.symbol());
    match h {
        0 => {}
        1 => s.push('H'),
        n => {
            let _ = write!(s, "H{n}");
        }
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => {
            let _ = write!(s, "+{c}");
        }
        c => {
            let _ = write!(s, "-{}", -(c as i32));
        }
    }
    s.push(']');
    s
}
