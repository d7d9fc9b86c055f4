use std::sync::OnceLock;

use molcf::chem::graph::{MolecularGraph, Vocabulary};
use molcf::models::gtgnn::{train_gtgnn, GtGnn, GtGnnConfig};
use molcf::nn::ParamId;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn graphs(smiles: &[&str]) -> Vec<MolecularGraph> {
    smiles.iter().enumerate().map(|(i, s)| MolecularGraph::from_smiles(s, (i % 2) as u8).unwrap()).collect()
}

const POOL: &[&str] = &[
    "CC(=O)Nc1ccc(O)cc1",
    "O=[N+]([O-])c1ccc(Cl)cc1",
    "CCN(CC)CC",
    "C1CCOC1",
    "NC(=O)c1cccnc1",
    "CSC1OC(C)(C)OC1=O",
    "OCC(O)CO",
    "Brc1ccccc1",
];

fn trained() -> (GtGnn, Vec<MolecularGraph>) {
    static MODEL: OnceLock<GtGnn> = OnceLock::new();
    let gs = graphs(POOL);
    let m = MODEL.get_or_init(|| {
        let cfg = GtGnnConfig { epochs: 20, seed: 4, ..Default::default() };
        train_gtgnn(&gs, &gs, &gs, Vocabulary::from_graphs(&gs), cfg).unwrap().0
    });
    (m.clone(), gs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn forward_is_permutation_invariant(which in 0..POOL.len(), seed in any::<u64>()) {
        let (model, gs) = trained();
        let g = &gs[which];
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = model.infer_dense(&model.tensors(g).unwrap());
        let b = model.infer_dense(&model.tensors(&g.permuted(&perm)).unwrap());
        prop_assert!((a.0[1] - b.0[1]).abs() < 1e-5);
        for (x, y) in a.1.iter().zip(&b.1) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn padding_rows_do_not_change_output() {
    let (model, _) = trained();
    for s in ["CCOCC", "c1ccoc1", "CC(N)OC", "NCCC=O", "ClCCCCl"] {
        let g = MolecularGraph::from_smiles(s, 0).unwrap();
        assert_eq!(g.num_nodes(), 5);
        let exact = model.infer_dense(&model.tensors(&g).unwrap());
        for m_max in [6, 9, 20] {
            let padded = model.infer_dense(&g.pad(&model.vocab, m_max).unwrap());
            assert_eq!(exact.0, padded.0, "{s} m_max {m_max}");
            assert_eq!(exact.1, padded.1);
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (mut model, gs) = trained();
    let batch: Vec<_> = gs[..3].iter().map(|g| model.tensors(g).unwrap()).collect();
    let refs: Vec<_> = batch.iter().collect();
    let (_, grads) = model.batch_gradients(&refs);
    // ten scalars spread over edge weights, both convolutions and the head
    let picks: Vec<(usize, usize, usize)> = vec![
        (0, 0, 0), (0, 1, 0), (0, 3, 0), (1, 0, 3), (1, 2, 7),
        (2, 0, 5), (3, 4, 11), (4, 0, 9), (5, 7, 1), (6, 0, 0),
    ];
    let h = 1e-5;
    for (p, r, c) in picks {
        let id = ParamId(p);
        let analytic = grads[p].as_ref().unwrap()[[r, c]];
        let orig = model.store.get(id)[[r, c]];
        model.store.get_mut(id)[[r, c]] = orig + h;
        let up = model.batch_gradients(&refs).0;
        model.store.get_mut(id)[[r, c]] = orig - h;
        let down = model.batch_gradients(&refs).0;
        model.store.get_mut(id)[[r, c]] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        assert!(rel < 1e-4 || (analytic - numeric).abs() < 1e-9, "{} [{r},{c}]: {analytic} vs {numeric}", model.store.name(id));
    }
}

#[test]
fn training_is_seed_deterministic() {
    let gs = graphs(POOL);
    let cfg = GtGnnConfig { epochs: 5, seed: 9, ..Default::default() };
    let run = || train_gtgnn(&gs, &gs, &gs, Vocabulary::from_graphs(&gs), cfg.clone()).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.store, b.store);
    assert_eq!(ra.history, rb.history);
}
