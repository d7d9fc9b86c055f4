mod common;

use std::sync::OnceLock;

use molcf::chem::graph::{pair_count, MolecularGraph, Vocabulary, BOND_CLASSES};
use molcf::models::autoencoder::{
    combine, discretize, kl_value, sample_latent, train_ca, CaConfig, CaItem, CounterfactualAutoencoder,
    DegenerateGraphError, DenseCounterfactual, DistMode, LatentDistribution,
};
use molcf::models::gtgnn::{train_gtgnn, GtGnn, GtGnnConfig};
use molcf::models::text_encoder::{TextEncoder, TextEncoderConfig};
use molcf::nn::{ParamId, Tape};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POOL: &[&str] = &[
    "CC(=O)Nc1ccc(O)cc1",
    "O=[N+]([O-])c1ccc(Cl)cc1",
    "CCN(CC)CC",
    "C1CCOC1",
    "NC(=O)c1cccnc1",
    "OCC(O)CO",
    "Brc1ccccc1",
    "CCOC(=O)C",
];

fn graphs() -> Vec<MolecularGraph> {
    POOL.iter().enumerate().map(|(i, s)| MolecularGraph::from_smiles(s, (i % 2) as u8).unwrap()).collect()
}

fn classifier() -> GtGnn {
    static M: OnceLock<GtGnn> = OnceLock::new();
    M.get_or_init(|| {
        let gs = graphs();
        let cfg = GtGnnConfig { epochs: 30, seed: 2, ..Default::default() };
        train_gtgnn(&gs, &gs, &gs, Vocabulary::from_graphs(&gs), cfg).unwrap().0
    })
    .clone()
}

fn small_encoder(proj_dim: usize) -> TextEncoder {
    TextEncoder::new(TextEncoderConfig {
        vocab_size: 256,
        dim: 16,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        proj_hidden: 16,
        proj_dim,
        ..Default::default()
    })
    .unwrap()
}

fn small_ca(gt: &GtGnn, m_max: usize, latent: usize) -> CounterfactualAutoencoder {
    let cfg = CaConfig { latent_dim: latent, hidden: vec![16, 24], batch_size: 4, learning_rate: 0.01, ..Default::default() };
    CounterfactualAutoencoder::new(cfg, small_encoder(8), gt.vocab.clone(), m_max, gt.embed_dim()).unwrap()
}

fn texts() -> Vec<String> {
    POOL.iter()
        .map(|s| format!("This molecule contains {s} pieces functional group, in which x may be the most influential for y."))
        .collect()
}

#[test]
fn discretize_thresholds_and_argmax() {
    let vocab = Vocabulary::from_graphs(&graphs());
    let d = vocab.node_dim();
    let m = 3;
    let mut x = Array2::from_elem((m, d), 0.1);
    x[[0, 0]] = 0.7;
    x[[1, 1]] = 0.7;
    x[[2, 0]] = 0.7;
    let mut e = Array2::from_elem((pair_count(m), BOND_CLASSES + 1), 0.1);
    for k in 0..3 {
        e[[k, 0]] = 0.9;
    }
    let a = array![[0.0, 0.6, 0.5], [0.6, 0.0, 0.4], [0.5, 0.4, 0.0]];
    let out = discretize(&DenseCounterfactual { a, x: x.clone(), e: e.clone() }, &vocab).unwrap();
    assert_eq!(out.padded.a, array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    assert_eq!(out.graph.num_nodes(), 3);
    assert_eq!(out.graph.edges.len(), 1);

    // ties go to the lowest index
    let mut tie = x.clone();
    tie.row_mut(1).fill(0.3);
    let out = discretize(&DenseCounterfactual { a: Array2::zeros((m, m)), x: tie, e: e.clone() }, &vocab).unwrap();
    assert_eq!(out.graph.atoms[1], vocab.atoms[0]);

    // a no-atom row deletes the node and its edges
    let mut gone = x.clone();
    gone[[1, vocab.no_atom()]] = 0.99;
    let a = Array2::from_elem((m, m), 0.9);
    let out = discretize(&DenseCounterfactual { a, x: gone, e: e.clone() }, &vocab).unwrap();
    assert_eq!(out.graph.num_nodes(), 2);
    assert_eq!(out.graph.edges.len(), 1);
    assert_eq!(out.padded.a.row(1).sum(), 0.0);

    let mut none = Array2::from_elem((m, d), 0.0);
    none.column_mut(vocab.no_atom()).fill(1.0);
    let err = discretize(&DenseCounterfactual { a: Array2::zeros((m, m)), x: none, e }, &vocab).unwrap_err();
    assert_eq!(err, DegenerateGraphError);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn discretize_is_idempotent(seed in any::<u64>(), m in 2usize..8) {
        let vocab = Vocabulary::from_graphs(&graphs());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rand::Rng::random::<f64>(&mut rng));
        let mut a = u(m, m);
        a = (&a + &a.t()) / 2.0;
        let dense = DenseCounterfactual { a, x: u(m, vocab.node_dim()), e: u(pair_count(m), BOND_CLASSES + 1) };
        match discretize(&dense, &vocab) {
            Ok(first) => {
                let again = discretize(&DenseCounterfactual::from_padded(&first.padded, 1e-3), &vocab).unwrap();
                prop_assert_eq!(&again, &first);
                first.graph.validate().unwrap();
            }
            Err(DegenerateGraphError) => {}
        }
    }
}

#[test]
fn decoder_outputs_are_symmetric_probabilities() {
    let gt = classifier();
    let ca = small_ca(&gt, 12, 4);
    let g = &graphs()[0];
    let item = ca.item(0, g, &gt, &texts()[0]).unwrap();
    let d = ca.generate(&item.tokens, &item.q);
    assert_eq!(d.a, d.a.t());
    for v in d.a.iter().chain(d.x.iter()).chain(d.e.iter()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
    assert_eq!(d, ca.generate(&item.tokens, &item.q));
    let dist = ca.encode_ctp(&item.tokens);
    assert!(dist.sigma.iter().all(|s| *s > 0.0));
    let other = ca.encode_ctp(&ca.item(1, &graphs()[1], &gt, &texts()[1]).unwrap().tokens);
    assert_ne!(dist.mu, other.mu);
}

fn items(ca: &CounterfactualAutoencoder, gt: &GtGnn, gs: &[MolecularGraph]) -> Vec<CaItem> {
    gs.iter().enumerate().map(|(i, g)| ca.item(i as u64, g, gt, &texts()[i % POOL.len()]).unwrap()).collect()
}

#[test]
fn loss_decomposes_into_components() {
    let gt = classifier();
    let ca = small_ca(&gt, 12, 4);
    let its = items(&ca, &gt, &graphs());
    let refs: Vec<&CaItem> = its.iter().collect();
    let r = ca.components(&gt, &refs, None, DistMode::Train);
    assert!((r.total - (r.l_dist + r.l_pred + r.l_kl)).abs() < 1e-9);
    assert!(r.l_dist > 0.0 && r.l_pred >= 0.0 && r.l_kl >= 0.0);
    let ev = ca.components(&gt, &refs, None, DistMode::Eval);
    assert!((ev.total - combine(1.0, 1.0, false, ev.l_dist, ev.l_pred, ev.l_kl)).abs() < 1e-9);
    assert_eq!(ev.l_pred, r.l_pred);
}

#[test]
fn decoder_gradient_matches_finite_differences() {
    let gt = classifier();
    let four: Vec<MolecularGraph> = ["CCOC", "NCC=O", "OCCO"].iter().map(|s| MolecularGraph::from_smiles(s, 0).unwrap()).collect();
    let ca = small_ca(&gt, 4, 4);
    let its = items(&ca, &gt, &four);
    let refs: Vec<&CaItem> = its.iter().collect();
    let eps = Array2::from_shape_fn((refs.len(), 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
    let toks: Vec<_> = refs.iter().map(|i| i.tokens.clone()).collect();
    let q = Array2::from_shape_fn((refs.len(), ca.q_dim), |(b, k)| refs[b].q[k]);
    let loss = |ca: &CounterfactualAutoencoder| {
        let mut t = Tape::new();
        let f = ca.forward(&mut t, &toks, &q, Some(&eps));
        let lv = ca.loss_vars(&mut t, &gt, &refs, &f);
        t.scalar(lv.total)
    };
    let grads = {
        let mut t = Tape::new();
        let f = ca.forward(&mut t, &toks, &q, Some(&eps));
        let lv = ca.loss_vars(&mut t, &gt, &refs, &f);
        t.backward(lv.total).for_store(&ca.store)
    };
    let h = 1e-6;
    let mut checked = 0;
    for pid in 0..ca.store.len() {
        let name = ca.store.name(ParamId(pid)).to_string();
        if !(name.starts_with("trunk") || name.starts_with("head")) {
            continue;
        }
        let g = grads[pid].as_ref().unwrap();
        let n = g.len();
        for k in [0, n / 3, n / 2, n - 1] {
            let (r, c) = (k / g.ncols(), k % g.ncols());
            let mut plus = ca.clone();
            plus.store.get_mut(ParamId(pid))[[r, c]] += h;
            let mut minus = ca.clone();
            minus.store.get_mut(ParamId(pid))[[r, c]] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = g[[r, c]];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "{name}[{r},{c}] fd {fd} analytic {an}");
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

#[test]
fn kl_matches_monte_carlo() {
    let dist = LatentDistribution { mu: array![[0.5, -1.0, 0.2]], sigma: array![[0.8, 1.3, 0.5]] };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut acc = 0.0;
    let mut mean = Array2::zeros((1, 3));
    for _ in 0..n {
        let z = sample_latent(&dist, &mut rng);
        let mut log_q = 0.0;
        let mut log_p = 0.0;
        for k in 0..3 {
            let (m, s, v) = (dist.mu[[0, k]], dist.sigma[[0, k]], z[[0, k]]);
            log_q += -0.5 * ((v - m) / s).powi(2) - s.ln();
            log_p += -0.5 * v * v;
        }
        acc += log_q - log_p;
        mean += &z;
    }
    let mc = acc / n as f64;
    assert!((mc - kl_value(&dist)).abs() < 1e-2, "mc {mc} closed {}", kl_value(&dist));
    mean /= n as f64;
    for k in 0..3 {
        let tol = 3.0 * dist.sigma[[0, k]] / (n as f64).sqrt();
        assert!((mean[[0, k]] - dist.mu[[0, k]]).abs() < tol);
    }
}

#[test]
fn training_lowers_prediction_loss_and_is_deterministic() {
    let (gt, _) = common::mutag_classifier();
    let before = gt.store.clone();
    let negatives = common::mutag_negatives(30);
    let m_max = common::mutag_m_max();
    let run = || {
        let cfg = CaConfig { latent_dim: 8, hidden: vec![64, 128], batch_size: 8, ..Default::default() };
        let mut ca = CounterfactualAutoencoder::new(cfg, small_encoder(8), gt.vocab.clone(), m_max, gt.embed_dim()).unwrap();
        let its: Vec<CaItem> = negatives
            .iter()
            .map(|(id, r)| ca.item(*id, &r.graph, gt, &format!("This molecule contains {} functional group, in which x may be the most influential for y.", r.smiles)).unwrap())
            .collect();
        train_ca(&mut ca, gt, &its, 30, |_| {}).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.len(), 30);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.total - y.total).abs() < 1e-6);
    }
    assert!(a.last().unwrap().l_pred < a[0].l_pred, "{:?} -> {:?}", a[0], a.last());
    assert!(a.last().unwrap().total < a[0].total);
    assert_eq!(gt.store, before);
}

#[test]
fn checkpoint_round_trip() {
    let gt = classifier();
    let ca = small_ca(&gt, 12, 4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ca.ck");
    ca.save(&p).unwrap();
    let back = CounterfactualAutoencoder::load(&p).unwrap();
    assert_eq!(back.store, ca.store);
    assert_eq!(back.encoder.store, ca.encoder.store);
}
