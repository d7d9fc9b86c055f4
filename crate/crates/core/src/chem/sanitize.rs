//! Valence-based sanitization: charge-separation cleanup and the feasibility
//! test applied to generated graphs.

use super::element::{Element, ValenceLimit};
use super::kekulize::{kekulize, KekuleMode};
use super::molecule::{BondOrder, Molecule};

fn is_terminal(mol: &Molecule, adj: &[Vec<(usize, usize)>], atom: usize, element: Element) -> bool {
    let a = mol.atoms[atom];
    a.element == element && a.charge == 0 && adj[atom].len() == 1
}

/// Rewrites hypervalent textbook forms into their charge-separated
/// equivalents:
///
/// * `N(=O)=O` / `n=O` with a neutral pentavalent nitrogen becomes `[N+][O-]`
/// * `N=N#N` azides become `N=[N+]=[N-]`
/// * halogen oxides `Cl(=O)(=O)...` become `[Cl+k]([O-])...`
pub fn cleanup(mol: &mut Molecule) {
    let adj = mol.adjacency();
    for atom in 0..mol.num_atoms() {
        let kind = mol.atoms[atom];
        if kind.charge != 0 {
            continue;
        }
        let valence = mol.explicit_valence(atom);
        match kind.element {
            Element::N if valence == 5 => {
                let oxo = adj[atom].iter().find(|&&(o, k)| {
                    mol.bonds[k].order == BondOrder::Double && is_terminal(mol, &adj, o, Element::O)
                });
                if let Some(&(o, k)) = oxo {
                    mol.atoms[atom].charge = 1;
                    mol.atoms[o].charge = -1;
                    mol.bonds[k].order = BondOrder::Single;
                    continue;
                }
                let azide = adj[atom].iter().find(|&&(n, k)| {
                    mol.bonds[k].order == BondOrder::Triple && is_terminal(mol, &adj, n, Element::N)
                });
                if let Some(&(n, k)) = azide {
                    mol.atoms[atom].charge = 1;
                    mol.atoms[n].charge = -1;
                    mol.bonds[k].order = BondOrder::Double;
                }
            }
            Element::CL | Element::BR | Element::I if valence > 1 => {
                let all_oxygen = adj[atom]
                    .iter()
                    .all(|&(o, _)| mol.atoms[o].element == Element::O);
                if !all_oxygen {
                    continue;
                }
                let oxo: Vec<(usize, usize)> = adj[atom]
                    .iter()
                    .copied()
                    .filter(|&(o, k)| {
                        mol.bonds[k].order == BondOrder::Double && is_terminal(mol, &adj, o, Element::O)
                    })
                    .collect();
                if oxo.is_empty() {
                    continue;
                }
                mol.atoms[atom].charge = oxo.len() as i8;
                for (o, k) in oxo {
                    mol.atoms[o].charge = -1;
                    mol.bonds[k].order = BondOrder::Single;
                }
            }
            _ => {}
        }
    }
}

fn is_metal(e: Element) -> bool {
    e != Element::WILDCARD && e.valence_limit(0) == ValenceLimit::Unrestricted
}

/// Index of the first atom whose explicit valence exceeds what its element
/// and charge permit. One single bond from an over-valent atom (other than
/// fluorine) to a metal is read as dative and does not count against it.
pub fn first_valence_violation(mol: &Molecule) -> Option<usize> {
    let adj = mol.adjacency();
    (0..mol.num_atoms()).find(|&i| {
        let a = mol.atoms[i];
        let ValenceLimit::Max(max) = a.element.valence_limit(a.charge) else {
            return false;
        };
        let valence = mol.explicit_valence(i);
        if valence <= max {
            return false;
        }
        let dative = a.element != Element::F
            && adj[i].iter().any(|&(j, k)| {
                mol.bonds[k].order == BondOrder::Single && is_metal(mol.atoms[j].element)
            });
        valence - i32::from(dative) > max
    })
}

/// True when the molecule survives sanitization: aromatic bonds (if any) can
/// be kekulized and, after cleanup, no atom is over its valence limit.
pub fn is_feasible(mol: &Molecule) -> bool {
    let mut m = mol.clone();
    if m.has_aromatic_bonds() {
        let h = vec![None; m.num_atoms()];
        if kekulize(&mut m, &h, KekuleMode::LenientHetero).is_err() {
            return false;
        }
    }
    cleanup(&mut m);
    first_valence_violation(&m).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::molecule::AtomKind;

    fn star(center: Element, n: usize, order: BondOrder) -> Molecule {
        let mut m = Molecule::new();
        m.add_atom(AtomKind::neutral(center));
        for i in 0..n {
            m.add_atom(AtomKind::neutral(Element::C));
            m.add_bond(0, i + 1, order);
        }
        m
    }

    #[test]
    fn carbon_valence() {
        assert!(is_feasible(&star(Element::C, 4, BondOrder::Single)));
        assert!(!is_feasible(&star(Element::C, 5, BondOrder::Single)));
    }

    #[test]
    fn nitrogen_valence() {
        assert!(is_feasible(&star(Element::N, 3, BondOrder::Single)));
        assert!(!is_feasible(&star(Element::N, 4, BondOrder::Single)));
    }

    #[test]
    fn nitro_group_is_feasible_after_cleanup() {
        // C-N(=O)=O
        let mut m = Molecule::new();
        let c = m.add_atom(AtomKind::neutral(Element::C));
        let n = m.add_atom(AtomKind::neutral(Element::N));
        let o1 = m.add_atom(AtomKind::neutral(Element::O));
        let o2 = m.add_atom(AtomKind::neutral(Element::O));
        m.add_bond(c, n, BondOrder::Single);
        m.add_bond(n, o1, BondOrder::Double);
        m.add_bond(n, o2, BondOrder::Double);
        assert!(first_valence_violation(&m).is_some());
        assert!(is_feasible(&m));
        cleanup(&mut m);
        assert_eq!(m.atoms[n].charge, 1);
        assert_eq!(m.explicit_valence(n), 4);
    }

    #[test]
    fn charged_atoms_use_isoelectronic_limits() {
        let mut m = star(Element::N, 4, BondOrder::Single);
        m.atoms[0].charge = 1;
        assert!(is_feasible(&m));
        let mut m = star(Element::O, 2, BondOrder::Single);
        m.atoms[0].charge = -1;
        assert!(!is_feasible(&m));
    }

    #[test]
    fn sulfur_hypervalence_allowed() {
        assert!(is_feasible(&star(Element::S, 6, BondOrder::Single)));
        assert!(!is_feasible(&star(Element::S, 7, BondOrder::Single)));
    }

    #[test]
    fn broken_aromatic_ring_is_infeasible() {
        let mut m = Molecule::new();
        for _ in 0..5 {
            m.add_atom(AtomKind::neutral(Element::C));
        }
        for i in 0..5 {
            m.add_bond(i, (i + 1) % 5, BondOrder::Aromatic);
        }
        assert!(!is_feasible(&m));
    }
}
