#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use molcf::chem::dataset::{load_tu, preprocess_dataset, split_dataset, DatasetName, DatasetRecord, SplitConfig, Splits};
use molcf::chem::graph::{MolecularGraph, Vocabulary};
use molcf::models::gtgnn::{train_gtgnn, GtGnn, GtGnnConfig};

pub fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/MUTAG")
}

pub fn mutag_splits() -> Splits {
    let raw = load_tu(&mutag_dir(), "MUTAG", None).unwrap();
    let (kept, _) = preprocess_dataset(&raw, DatasetName::Mutagenicity, 0).unwrap();
    split_dataset(kept, &SplitConfig::new(0)).unwrap()
}

fn graphs(v: &[DatasetRecord]) -> Vec<MolecularGraph> {
    v.iter().map(|r| r.graph.clone()).collect()
}

/// Classifier trained on the MUTAG fixture, shared within a test binary.
pub fn mutag_classifier() -> &'static (GtGnn, Vec<DatasetRecord>) {
    static M: OnceLock<(GtGnn, Vec<DatasetRecord>)> = OnceLock::new();
    M.get_or_init(|| {
        let sp = mutag_splits();
        let all: Vec<DatasetRecord> = sp.all().cloned().collect();
        let vocab = Vocabulary::from_graphs(all.iter().map(|r| &r.graph));
        let cfg = GtGnnConfig { epochs: 200, ..Default::default() };
        let (gt, _) = train_gtgnn(&graphs(&sp.train), &graphs(&sp.val), &graphs(&sp.test), vocab, cfg).unwrap();
        (gt, all)
    })
}

/// The first `n` records the classifier assigns to class 0, with their
/// position in the full record list as graph id.
pub fn mutag_negatives(n: usize) -> Vec<(u64, DatasetRecord)> {
    let (gt, all) = mutag_classifier();
    all.iter()
        .enumerate()
        .filter(|(_, r)| gt.predict(&r.graph).unwrap().label == 0)
        .take(n)
        .map(|(i, r)| (i as u64, r.clone()))
        .collect()
}

pub fn mutag_m_max() -> usize {
    mutag_classifier().1.iter().map(|r| r.graph.num_nodes()).max().unwrap()
}
