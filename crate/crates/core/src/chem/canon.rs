//! Canonical atom ranking by iterative neighbourhood refinement.

use super::molecule::Molecule;

/// Dense ranks `0..k` of the given sortable keys.
fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap())
        .collect()
}

pub(crate) fn initial_ranks(mol: &Molecule) -> Vec<usize> {
    let adj = mol.adjacency();
    let keys: Vec<(u8, i8, usize, i32)> = (0..mol.num_atoms())
        .map(|i| {
            let a = mol.atoms[i];
            (a.element.0, a.charge, adj[i].len(), mol.explicit_valence(i))
        })
        .collect();
    dense_ranks(&keys)
}

/// Refines `ranks` until the partition is stable. Ties in the result are
/// atoms the refinement cannot tell apart.
pub(crate) fn refine(mol: &Molecule, adj: &[Vec<(usize, usize)>], mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = count_classes(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, usize)>)> = (0..ranks.len())
            .map(|i| {
                let mut nb: Vec<(usize, usize)> = adj[i]
                    .iter()
                    .map(|&(j, k)| (ranks[j], mol.bonds[k].order.index()))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let n = count_classes(&next);
        ranks = next;
        if n == classes {
            return ranks;
        }
        classes = n;
    }
}

fn count_classes(ranks: &[usize]) -> usize {
    ranks.iter().copied().max().map_or(0, |m| m + 1)
}

/// First (lowest-rank) class that still has more than one member.
pub(crate) fn first_tie(ranks: &[usize]) -> Option<Vec<usize>> {
    let n = count_classes(ranks);
    let mut members = vec![Vec::new(); n];
    for (i, &r) in ranks.iter().enumerate() {
        members[r].push(i);
    }
    members.into_iter().find(|m| m.len() > 1)
}

/// Splits `atom` out of its class (it sorts first) and re-refines.
pub(crate) fn break_tie(
    mol: &Molecule,
    adj: &[Vec<(usize, usize)>],
    ranks: &[usize],
    atom: usize,
) -> Vec<usize> {
    let split: Vec<usize> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| if i == atom { 2 * r } else { 2 * r + 1 })
        .collect();
    refine(mol, adj, dense_ranks(&split))
}

/// A total order on atoms, stable under relabelling up to automorphism
/// whenever refinement separates non-equivalent atoms.
pub fn canonical_ranks(mol: &Molecule) -> Vec<usize> {
    let adj = mol.adjacency();
    let mut ranks = refine(mol, &adj, initial_ranks(mol));
    while let Some(tie) = first_tie(&ranks) {
        ranks = break_tie(mol, &adj, &ranks, tie[0]);
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::smiles::parse_smiles;

    #[test]
    fn ranks_are_a_permutation() {
        let m = parse_smiles("CC(C)C(=O)O").unwrap();
        let mut r = canonical_ranks(&m);
        r.sort_unstable();
        assert_eq!(r, (0..m.num_atoms()).collect::<Vec<_>>());
    }

    #[test]
    fn symmetric_atoms_tie_before_breaking() {
        let m = parse_smiles("CC(C)C").unwrap();
        let adj = m.adjacency();
        let r = refine(&m, &adj, initial_ranks(&m));
        assert_eq!(r[0], r[2]);
        assert_eq!(r[0], r[3]);
        assert_ne!(r[0], r[1]);
    }
}
