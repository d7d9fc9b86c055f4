//! Rule-based functional-group detection on kekulé heavy-atom graphs.

use std::collections::BTreeSet;

use super::element::Element;
use super::molecule::{BondOrder, Molecule};

/// Group names in the order used to pick the most influential one.
pub const PRIORITY: &[&str] = &[
    "nitro", "azo", "nitrile", "sulfonyl", "phosphate", "carboxyl", "amide", "ester", "carbonyl", "pyridine",
    "benzene ring", "amine", "hydroxyl", "thiol", "ether", "chloro", "bromo", "iodo", "fluoro", "alkyne", "alkene",
];

fn neighbors(mol: &Molecule, adj: &[Vec<(usize, usize)>], i: usize) -> Vec<(usize, BondOrder)> {
    adj[i].iter().map(|&(j, k)| (j, mol.bonds[k].order)).collect()
}

fn is(mol: &Molecule, i: usize, e: Element) -> bool {
    mol.atoms[i].element == e
}

/// Six-membered rings with alternating single and double bonds.
fn benzenoid_rings(mol: &Molecule, adj: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let mut rings: BTreeSet<Vec<usize>> = BTreeSet::new();
    let n = mol.num_atoms();
    let mut path = Vec::with_capacity(6);
    fn walk(
        mol: &Molecule,
        adj: &[Vec<(usize, usize)>],
        path: &mut Vec<usize>,
        orders: &mut Vec<BondOrder>,
        rings: &mut BTreeSet<Vec<usize>>,
    ) {
        let last = *path.last().unwrap();
        let alternates = |a: BondOrder, b: Option<&BondOrder>| match (a, b) {
            (BondOrder::Triple, _) => false,
            (BondOrder::Aromatic, _) | (_, None) | (_, Some(BondOrder::Aromatic)) => true,
            (a, Some(&b)) => a != b,
        };
        for &(j, k) in &adj[last] {
            let o = mol.bonds[k].order;
            if !alternates(o, orders.last()) {
                continue;
            }
            if path.len() == 6 {
                if j == path[0] && alternates(o, orders.first()) {
                    let mut r = path.clone();
                    r.sort_unstable();
                    rings.insert(r);
                }
                continue;
            }
            if path.contains(&j) || j < path[0] {
                continue;
            }
            path.push(j);
            orders.push(o);
            walk(mol, adj, path, orders, rings);
            path.pop();
            orders.pop();
        }
    }
    for s in 0..n {
        path.clear();
        path.push(s);
        walk(mol, adj, &mut path, &mut Vec::new(), &mut rings);
    }
    rings.into_iter().collect()
}

/// Names of the functional groups present, alphabetically sorted and
/// without duplicates.
pub fn detect(mol: &Molecule) -> Vec<String> {
    let adj = mol.adjacency();
    let mut found: BTreeSet<&str> = BTreeSet::new();
    let mut in_ring6 = vec![false; mol.num_atoms()];
    for ring in benzenoid_rings(mol, &adj) {
        let ns = ring.iter().filter(|&&i| is(mol, i, Element::N)).count();
        let cs = ring.iter().filter(|&&i| is(mol, i, Element::C)).count();
        if cs == 6 {
            found.insert("benzene ring");
        } else if ns == 1 && cs == 5 {
            found.insert("pyridine");
        }
        for i in ring {
            in_ring6[i] = true;
        }
    }
    for i in 0..mol.num_atoms() {
        let a = mol.atoms[i];
        let nb = neighbors(mol, &adj, i);
        let double_o = |nb: &[(usize, BondOrder)]| {
            nb.iter().filter(|&&(j, o)| o == BondOrder::Double && is(mol, j, Element::O)).count()
        };
        match a.element {
            Element::C => {
                if double_o(&nb) == 1 {
                    let single_o = nb.iter().find(|&&(j, o)| o == BondOrder::Single && is(mol, j, Element::O));
                    let single_n = nb.iter().any(|&(j, o)| o == BondOrder::Single && is(mol, j, Element::N));
                    match single_o {
                        Some(&(o, _)) if adj[o].len() == 1 => {
                            found.insert("carboxyl");
                        }
                        Some(_) => {
                            found.insert("ester");
                        }
                        None if single_n => {
                            found.insert("amide");
                        }
                        None => {
                            found.insert("carbonyl");
                        }
                    }
                }
                for &(j, o) in &nb {
                    if o == BondOrder::Triple && is(mol, j, Element::N) {
                        found.insert("nitrile");
                    }
                    if j > i && is(mol, j, Element::C) && !(in_ring6[i] && in_ring6[j]) {
                        match o {
                            BondOrder::Triple => {
                                found.insert("alkyne");
                            }
                            BondOrder::Double => {
                                found.insert("alkene");
                            }
                            _ => {}
                        }
                    }
                }
            }
            Element::N => {
                let oxy = nb.iter().filter(|&&(j, _)| is(mol, j, Element::O)).count();
                if a.charge == 1 && oxy == 2 {
                    found.insert("nitro");
                } else if nb.iter().any(|&(j, o)| o == BondOrder::Double && is(mol, j, Element::N)) {
                    found.insert("azo");
                } else if a.charge == 0
                    && !in_ring6[i]
                    && nb.iter().all(|&(_, o)| o == BondOrder::Single)
                    && !nb.iter().any(|&(j, _)| {
                        is(mol, j, Element::C) && neighbors(mol, &adj, j).iter().any(|&(k, o)| o == BondOrder::Double && is(mol, k, Element::O))
                    })
                {
                    found.insert("amine");
                }
            }
            Element::O if a.charge == 0 && nb.iter().all(|&(_, o)| o == BondOrder::Single) => {
                let carbonyl_c = |j: usize| neighbors(mol, &adj, j).iter().any(|&(k, o)| o == BondOrder::Double && is(mol, k, Element::O));
                if nb.len() == 1 && is(mol, nb[0].0, Element::C) && !carbonyl_c(nb[0].0) {
                    found.insert("hydroxyl");
                } else if nb.len() == 2 && nb.iter().all(|&(j, _)| is(mol, j, Element::C) && !carbonyl_c(j)) {
                    found.insert("ether");
                }
            }
            Element::S => {
                if double_o(&nb) >= 2 {
                    found.insert("sulfonyl");
                } else if nb.len() == 1 && nb[0].1 == BondOrder::Single && a.charge == 0 {
                    found.insert("thiol");
                }
            }
            Element::P if double_o(&nb) >= 1 => {
                found.insert("phosphate");
            }
            Element::CL => {
                found.insert("chloro");
            }
            Element::BR => {
                found.insert("bromo");
            }
            Element::F => {
                found.insert("fluoro");
            }
            Element::I => {
                found.insert("iodo");
            }
            _ => {}
        }
    }
    found.into_iter().map(str::to_string).collect()
}

/// Up to four groups (highest priority first, then listed alphabetically)
/// and the most influential among them.
pub fn describe(mol: &Molecule) -> (Vec<String>, String) {
    let all = detect(mol);
    let mut ranked: Vec<&String> = all.iter().collect();
    ranked.sort_by_key(|g| PRIORITY.iter().position(|p| p == g).unwrap_or(usize::MAX));
    let mut chosen: Vec<String> = ranked.into_iter().take(4).cloned().collect();
    if chosen.is_empty() {
        chosen.push(if mol.bonds.is_empty() { "atom".to_string() } else { "alkyl chain".to_string() });
    }
    let key = chosen[0].clone();
    chosen.sort();
    (chosen, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn groups(s: &str) -> Vec<String> {
        detect(&parse_smiles(s).unwrap())
    }

    #[test]
    fn common_groups() {
        assert_eq!(groups("CC(=O)O"), ["carboxyl"]);
        assert_eq!(groups("CCO"), ["hydroxyl"]);
        assert_eq!(groups("CCOCC"), ["ether"]);
        assert_eq!(groups("CC(=O)OC"), ["ester"]);
        assert_eq!(groups("CC(=O)N"), ["amide"]);
        assert_eq!(groups("CCN"), ["amine"]);
        assert_eq!(groups("CC#N"), ["nitrile"]);
        assert_eq!(groups("CC(C)=O"), ["carbonyl"]);
        assert_eq!(groups("c1ccccc1"), ["benzene ring"]);
        assert_eq!(groups("c1ccncc1"), ["pyridine"]);
        assert_eq!(groups("O=[N+]([O-])c1ccc(Cl)cc1"), ["benzene ring", "chloro", "nitro"]);
        assert_eq!(groups("C=CC#C"), ["alkene", "alkyne"]);
    }

    #[test]
    fn describe_picks_priority_key() {
        let (g, key) = describe(&parse_smiles("Nc1ccc(O)cc1[N+](=O)[O-]").unwrap());
        assert_eq!(key, "nitro");
        assert_eq!(g, ["amine", "benzene ring", "hydroxyl", "nitro"]);
        let (g, key) = describe(&parse_smiles("CCCC").unwrap());
        assert_eq!((g, key), (vec!["alkyl chain".to_string()], "alkyl chain".to_string()));
    }
}
