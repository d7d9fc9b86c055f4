use molcf::chem::graph::{Edge, MolecularGraph, Vocabulary};
use molcf::chem::{AtomKind, BondOrder, Element};
use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use proptest::prelude::*;

const ELEMENTS: [Element; 6] = [Element::C, Element::C, Element::N, Element::O, Element::S, Element::CL];

fn arb_graph() -> impl Strategy<Value = MolecularGraph> {
    (2usize..14).prop_flat_map(|n| {
        (
            prop::collection::vec(0..ELEMENTS.len(), n),
            prop::collection::vec((any::<prop::sample::Index>(), 0u8..16), n - 1),
            prop::collection::vec((0..n, 0..n), 0..3),
            any::<bool>(),
        )
            .prop_map(move |(el, tree, extra, benzene)| {
                let mut atoms: Vec<AtomKind> = el.iter().map(|&k| AtomKind::neutral(ELEMENTS[k])).collect();
                let order = |w: u8| match w {
                    0 => BondOrder::Triple,
                    1 | 2 => BondOrder::Double,
                    _ => BondOrder::Single,
                };
                let mut edges: Vec<Edge> = tree
                    .iter()
                    .enumerate()
                    .map(|(k, (p, w))| Edge { i: p.index(k + 1), j: k + 1, order: order(*w) })
                    .collect();
                for &(i, j) in &extra {
                    if i != j && !edges.iter().any(|e| (e.i, e.j) == (i.min(j), i.max(j)) || (e.j, e.i) == (i.min(j), i.max(j))) {
                        edges.push(Edge { i, j, order: BondOrder::Single });
                    }
                }
                if benzene {
                    let base = atoms.len();
                    atoms.extend((0..6).map(|_| AtomKind::neutral(Element::C)));
                    for k in 0..6 {
                        let o = if k % 2 == 0 { BondOrder::Double } else { BondOrder::Single };
                        edges.push(Edge { i: base + k, j: base + (k + 1) % 6, order: o });
                    }
                    edges.push(Edge { i: 0, j: base, order: BondOrder::Single });
                }
                MolecularGraph::new(atoms, edges, 0)
            })
    })
}

fn to_petgraph(g: &MolecularGraph) -> UnGraph<AtomKind, BondOrder> {
    let mut p = UnGraph::new_undirected();
    let ids: Vec<_> = g.atoms.iter().map(|&a| p.add_node(a)).collect();
    for e in &g.edges {
        p.add_edge(ids[e.i], ids[e.j], e.order);
    }
    p
}

fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    is_isomorphic_matching(&to_petgraph(a), &to_petgraph(b), |x, y| x == y, |x, y| x == y)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, max_global_rejects: 20_000, ..ProptestConfig::default() })]

    #[test]
    fn smiles_round_trip_is_isomorphic(g in arb_graph()) {
        prop_assume!(g.is_feasible());
        let s = g.to_smiles();
        let back = MolecularGraph::from_smiles(&s, 0).unwrap();
        // parsing normalizes charge-separated forms, so compare after one pass
        let s2 = back.to_smiles();
        prop_assert_eq!(&s, &s2);
        let back2 = MolecularGraph::from_smiles(&s2, 0).unwrap();
        prop_assert!(isomorphic(&back, &back2));
        if back.atoms.iter().all(|a| a.charge == 0) {
            prop_assert!(isomorphic(&g, &back), "{}", s);
        }
    }

    #[test]
    fn canonical_smiles_ignores_atom_order(g in arb_graph(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(g.to_smiles(), g.permuted(&perm).to_smiles());
    }

    #[test]
    fn pad_unpad_identity(g in arb_graph(), extra in 0usize..5) {
        let vocab = Vocabulary::from_graphs([&g]);
        let p = g.pad(&vocab, g.num_nodes() + extra).unwrap();
        prop_assert_eq!(p.unpad(&vocab).unwrap(), g.clone());
        let a = &p.a;
        prop_assert_eq!(a, &a.t());
        prop_assert!((0..a.nrows()).all(|i| a[[i, i]] == 0.0));
        prop_assert!(p.x.rows().into_iter().all(|r| r.sum() == 1.0));
        prop_assert!(p.e.rows().into_iter().all(|r| r.sum() == 1.0));
        prop_assert!(g.pad(&vocab, g.num_nodes() - 1).is_err());
    }
}
