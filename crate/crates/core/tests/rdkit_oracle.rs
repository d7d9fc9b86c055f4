//! Agreement with frozen RDKit outputs (see tests/data/gen_rdkit_fixtures.py).

use molcf::chem::{is_feasible, parse_smiles, AtomKind, BondOrder, Element, Molecule};
use serde_json::Value;

fn lines(name: &str) -> Vec<Value> {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stats(m: &Molecule) -> (usize, usize, usize, usize, i64) {
    let count = |o| m.bonds.iter().filter(|b| b.order == o).count();
    let charge = m.atoms.iter().map(|a| a.charge as i64).sum();
    (m.num_atoms(), m.bonds.len(), count(BondOrder::Double), count(BondOrder::Triple), charge)
}

#[test]
fn corpus_counts_match() {
    for rec in lines("rdkit_corpus.jsonl") {
        let expected = (
            rec["atoms"].as_u64().unwrap() as usize,
            rec["bonds"].as_u64().unwrap() as usize,
            rec["doubles"].as_u64().unwrap() as usize,
            rec["triples"].as_u64().unwrap() as usize,
            rec["charge"].as_i64().unwrap(),
        );
        for key in ["smiles", "aromatic_smiles"] {
            let smi = rec[key].as_str().unwrap();
            let m = parse_smiles(smi).unwrap_or_else(|e| panic!("{smi}: {e}"));
            assert_eq!(stats(&m), expected, "{smi}");
            assert!(is_feasible(&m), "{smi}");
        }
    }
}

#[test]
fn mutated_smiles_readability_matches() {
    let recs = lines("rdkit_mutants.jsonl");
    let mut disagree = Vec::new();
    for rec in &recs {
        let smi = rec["smiles"].as_str().unwrap();
        let ours = parse_smiles(smi).is_ok();
        if ours != rec["readable"].as_bool().unwrap() {
            disagree.push(format!("{smi} rd={} ours={:?}", rec["readable"], parse_smiles(smi).err()));
        }
    }
    assert!(
        disagree.is_empty(),
        "{} / {} disagree: {:?}",
        disagree.len(),
        recs.len(),
        &disagree[..disagree.len().min(10)]
    );
}

fn molecule_from(rec: &Value) -> Molecule {
    let mut m = Molecule::new();
    for a in rec["atoms"].as_array().unwrap() {
        let e = Element::from_symbol(a[0].as_str().unwrap()).unwrap();
        m.add_atom(AtomKind::new(e, a[1].as_i64().unwrap() as i8));
    }
    for b in rec["bonds"].as_array().unwrap() {
        let o = BondOrder::from_index(b[2].as_u64().unwrap() as usize - 1).unwrap();
        m.add_bond(b[0].as_u64().unwrap() as usize, b[1].as_u64().unwrap() as usize, o);
    }
    m
}

#[test]
fn feasibility_matches_sanitizer() {
    let recs = lines("rdkit_feasibility.jsonl");
    let mut disagree = Vec::new();
    for rec in &recs {
        let m = molecule_from(rec);
        if is_feasible(&m) != rec["feasible"].as_bool().unwrap() {
            disagree.push(rec.clone());
        }
    }
    assert!(
        disagree.is_empty(),
        "{} / {} disagree, first: {}",
        disagree.len(),
        recs.len(),
        disagree[0]
    );
}

#[test]
fn spot_values() {
    assert_eq!(parse_smiles("CSC1OC(C)(C)OC1=O").unwrap().num_atoms(), 10);
    let amine = parse_smiles("CN(C)C").unwrap();
    assert!(is_feasible(&amine));
}
