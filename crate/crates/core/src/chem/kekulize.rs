//! Assignment of alternating single/double bonds to aromatic systems.

use super::element::Element;
use super::molecule::{BondOrder, Molecule};

const SEARCH_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KekuleMode {
    /// Every aromatic atom with spare valence must receive a double bond.
    Strict,
    /// Pyrrole-type heteroatoms (N, P, As) may stay saturated; used when the
    /// source carries no hydrogen counts.
    LenientHetero,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot kekulize aromatic system around atom {atom}")]
pub struct KekulizeError {
    pub atom: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    None,
    Must,
    Optional,
}

/// Replaces every aromatic bond with a single or double bond. `explicit_h`
/// carries bracket hydrogen counts where known.
pub fn kekulize(
    mol: &mut Molecule,
    explicit_h: &[Option<u8>],
    mode: KekuleMode,
) -> Result<(), KekulizeError> {
    if !mol.has_aromatic_bonds() {
        return Ok(());
    }
    let n = mol.num_atoms();
    let adj = mol.adjacency();
    let mut roles = vec![Role::None; n];
    for i in 0..n {
        let mut aromatic = 0;
        let mut used = 0;
        for &(_, k) in &adj[i] {
            match mol.bonds[k].order {
                BondOrder::Aromatic => aromatic += 1,
                o => used += o.valence_contribution(),
            }
        }
        if aromatic == 0 {
            continue;
        }
        let h = explicit_h.get(i).copied().flatten().unwrap_or(0) as i32;
        used += aromatic + h;
        let kind = mol.atoms[i];
        let needs = matches!(kind.element.target_valence(kind.charge, used), Some(t) if t > used);
        if needs {
            let hetero = matches!(kind.element, Element::N | Element::P | Element(33));
            let h_known = explicit_h.get(i).copied().flatten().is_some();
            roles[i] = if mode == KekuleMode::LenientHetero && hetero && !h_known {
                Role::Optional
            } else {
                Role::Must
            };
        }
    }

    // aromatic neighbours restricted to candidate atoms
    let partners: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            if roles[i] == Role::None {
                return Vec::new();
            }
            adj[i]
                .iter()
                .filter(|&&(j, k)| {
                    mol.bonds[k].order == BondOrder::Aromatic && roles[j] != Role::None
                })
                .copied()
                .collect()
        })
        .collect();

    let mut mate: Vec<Option<usize>> = vec![None; n];
    let mut budget = SEARCH_BUDGET;
    if !search(&roles, &partners, &mut mate, &mut budget) {
        let atom = (0..n)
            .find(|&i| roles[i] == Role::Must && mate[i].is_none())
            .or_else(|| roles.iter().position(|r| *r == Role::Must))
            .unwrap_or(0);
        return Err(KekulizeError { atom });
    }

    for bond in mol.bonds.iter_mut() {
        if bond.order == BondOrder::Aromatic {
            bond.order = if mate[bond.a] == Some(bond.b) {
                BondOrder::Double
            } else {
                BondOrder::Single
            };
        }
    }
    Ok(())
}

fn search(
    roles: &[Role],
    partners: &[Vec<(usize, usize)>],
    mate: &mut Vec<Option<usize>>,
    budget: &mut usize,
) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    // most constrained unmatched must-atom first
    let mut best: Option<(usize, usize)> = None;
    for i in 0..roles.len() {
        if roles[i] != Role::Must || mate[i].is_some() {
            continue;
        }
        let options = partners[i].iter().filter(|(j, _)| mate[*j].is_none()).count();
        if options == 0 {
            return false;
        }
        if best.is_none_or(|(_, o)| options < o) {
            best = Some((i, options));
        }
    }
    let Some((atom, _)) = best else {
        return true;
    };
    // prefer must partners so optional atoms are left free when possible
    let mut options: Vec<usize> = partners[atom]
        .iter()
        .map(|&(j, _)| j)
        .filter(|&j| mate[j].is_none())
        .collect();
    options.sort_by_key(|&j| (roles[j] != Role::Must, j));
    for j in options {
        mate[atom] = Some(j);
        mate[j] = Some(atom);
        if search(roles, partners, mate, budget) {
            return true;
        }
        mate[atom] = None;
        mate[j] = None;
    }
    false
}
