//! Dataset loading, filtering, splitting and persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::element::Element;
use super::graph::MolecularGraph;
use super::kekulize::{kekulize, KekuleMode};
use super::molecule::{AtomKind, BondOrder, Molecule};
use super::sanitize::{cleanup, first_valence_violation};
use super::smiles::{parse_smiles, to_smiles_strict};

pub const MIN_ATOMS_EXCLUSIVE: usize = 1;
pub const MAX_ATOMS: usize = 100;
pub const TOX21_ZERO_QUOTA: usize = 600;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no records left after preprocessing {0}")]
    Empty(DatasetName),
    #[error("need at least {need} records to split, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn fmt_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetName {
    #[serde(rename = "AIDS")]
    Aids,
    Mutagenicity,
    #[serde(rename = "BBBP")]
    Bbbp,
    ClinTox,
    Tox21,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::Aids,
        DatasetName::Mutagenicity,
        DatasetName::Bbbp,
        DatasetName::ClinTox,
        DatasetName::Tox21,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Aids => "AIDS",
            DatasetName::Mutagenicity => "Mutagenicity",
            DatasetName::Bbbp => "BBBP",
            DatasetName::ClinTox => "ClinTox",
            DatasetName::Tox21 => "Tox21",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetName::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("muta") && *d == DatasetName::Mutagenicity))
            .ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub smiles: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub graph: MolecularGraph,
    pub smiles: String,
    pub dataset_name: DatasetName,
    pub split: Option<Split>,
}

impl DatasetRecord {
    pub fn label(&self) -> u8 {
        self.graph.label
    }
}

/// Counts of what preprocessing removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input: usize,
    pub unparseable: usize,
    pub too_small: usize,
    pub too_large: usize,
    pub downsampled: usize,
    pub kept: usize,
}

/// Parses, drops molecules with one atom or more than 100 atoms, and for
/// Tox21 keeps a seeded uniform sample of 600 zero-labelled graphs. The
/// relative input order is preserved.
pub fn preprocess_dataset(
    raw: &[RawRecord],
    name: DatasetName,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, PreprocessReport), DatasetError> {
    let mut report = PreprocessReport { input: raw.len(), ..Default::default() };
    let mut kept = Vec::new();
    for rec in raw {
        let graph = match MolecularGraph::from_smiles(&rec.smiles, rec.label) {
            Ok(g) => g,
            Err(err) => {
                tracing::debug!(smiles = %rec.smiles, %err, "dropping unparseable record");
                report.unparseable += 1;
                continue;
            }
        };
        let m = graph.num_nodes();
        if m <= MIN_ATOMS_EXCLUSIVE {
            report.too_small += 1;
            continue;
        }
        if m > MAX_ATOMS {
            report.too_large += 1;
            continue;
        }
        kept.push(DatasetRecord {
            graph,
            smiles: rec.smiles.clone(),
            dataset_name: name,
            split: None,
        });
    }
    if name == DatasetName::Tox21 {
        let zeros: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].label() == 0).collect();
        if zeros.len() > TOX21_ZERO_QUOTA {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = vec![true; kept.len()];
            for &z in &zeros {
                keep[z] = false;
            }
            for pick in index::sample(&mut rng, zeros.len(), TOX21_ZERO_QUOTA) {
                keep[zeros[pick]] = true;
            }
            report.downsampled = zeros.len() - TOX21_ZERO_QUOTA;
            let mut it = keep.into_iter();
            kept.retain(|_| it.next().unwrap());
        }
    }
    report.kept = kept.len();
    if kept.is_empty() {
        return Err(DatasetError::Empty(name));
    }
    Ok((kept, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(seed: u64) -> Self {
        Self { ratios: [0.5, 0.25, 0.25], seed }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle into train/val/test. Train and val sizes are rounded,
/// test takes the remainder; each part keeps the input order.
pub fn split_dataset(records: Vec<DatasetRecord>, cfg: &SplitConfig) -> Result<Splits, DatasetError> {
    let sum: f64 = cfg.ratios.iter().sum();
    if cfg.ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Ratios(cfg.ratios));
    }
    let n = records.len();
    if n < 4 {
        return Err(DatasetError::TooFew { need: 4, got: n });
    }
    let n_train = (n as f64 * cfg.ratios[0]).round() as usize;
    let n_val = ((n as f64 * cfg.ratios[1]).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut which = vec![Split::Test; n];
    for &i in &order[..n_train] {
        which[i] = Split::Train;
    }
    for &i in &order[n_train..n_train + n_val] {
        which[i] = Split::Val;
    }
    let mut out = Splits::default();
    for (mut rec, split) in records.into_iter().zip(which) {
        rec.split = Some(split);
        match split {
            Split::Train => out.train.push(rec),
            Split::Val => out.val.push(rec),
            Split::Test => out.test.push(rec),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    smiles: String,
    label: u8,
    split: Option<Split>,
    dataset_name: DatasetName,
}

/// Writes one JSON object per line: `{smiles, label, split, dataset_name}`.
pub fn save_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(&StoredRecord {
            smiles: r.smiles.clone(),
            label: r.label(),
            split: r.split,
            dataset_name: r.dataset_name,
        })
        .expect("record serializes");
        out.push_str(&line);
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: StoredRecord = serde_json::from_str(line)
            .map_err(|e| fmt_err(path, format!("line {}: {e}", n + 1)))?;
        let graph = MolecularGraph::from_smiles(&s.smiles, s.label)
            .map_err(|e| fmt_err(path, format!("line {}: {e}", n + 1)))?;
        out.push(DatasetRecord { graph, smiles: s.smiles, dataset_name: s.dataset_name, split: s.split });
    }
    Ok(out)
}

/// Regroups persisted records by their stored split.
pub fn regroup(records: Vec<DatasetRecord>) -> Splits {
    let mut out = Splits::default();
    for r in records {
        match r.split {
            Some(Split::Val) => out.val.push(r),
            Some(Split::Test) => out.test.push(r),
            _ => out.train.push(r),
        }
    }
    out
}

/// Reads a CSV with a SMILES column and a binary label column. Column names
/// are matched case-insensitively; rows with an empty label are skipped.
pub fn load_csv(path: &Path, smiles_col: &str, label_col: &str) -> Result<Vec<RawRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| fmt_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| fmt_err(path, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| fmt_err(path, format!("missing column {name:?}")))
    };
    let (si, li) = (find(smiles_col)?, find(label_col)?);
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| fmt_err(path, e.to_string()))?;
        let label = row.get(li).unwrap_or("").trim();
        if label.is_empty() {
            continue;
        }
        let value: f64 = label
            .parse()
            .map_err(|_| fmt_err(path, format!("row {}: label {label:?} is not numeric", n + 2)))?;
        out.push(RawRecord {
            smiles: row.get(si).unwrap_or("").trim().to_string(),
            label: u8::from(value > 0.5),
        });
    }
    Ok(out)
}

/// Label column of the MoleculeNet CSV releases.
pub fn native_label_column(name: DatasetName) -> Option<&'static str> {
    match name {
        DatasetName::Bbbp => Some("p_np"),
        DatasetName::ClinTox => Some("CT_TOX"),
        DatasetName::Tox21 => Some("NR-AR"),
        _ => None,
    }
}

/// Node and edge label tables of a TU-format dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TuLabelMaps {
    pub nodes: BTreeMap<i64, Element>,
    pub edges: BTreeMap<i64, BondOrder>,
    /// Column of `DS_node_attributes.txt` holding formal charges, if any.
    pub charge_column: Option<usize>,
}

/// Extracts the `Node labels:` / `Edge labels:` tables from a TU README.
pub fn parse_tu_readme(text: &str) -> TuLabelMaps {
    let mut maps = TuLabelMaps::default();
    let mut section = 0;
    for line in text.lines() {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        if lower.starts_with("node labels") {
            section = 1;
            continue;
        }
        if lower.starts_with("edge labels") {
            section = 2;
            continue;
        }
        if lower.starts_with("node attributes") && lower.contains("charge") {
            let inner = lower.split(['[', ']']).nth(1).unwrap_or("");
            maps.charge_column = inner.split(',').position(|c| c.trim() == "charge");
        }
        if t.is_empty() {
            continue;
        }
        let mut parts = t.split_whitespace();
        let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
            if section != 0 && !t.starts_with('[') {
                section = 0;
            }
            continue;
        };
        let Ok(k) = k.trim_end_matches(':').parse::<i64>() else {
            if !t.starts_with('[') {
                section = 0;
            }
            continue;
        };
        match section {
            1 => {
                if let Some(e) = Element::from_symbol(v) {
                    maps.nodes.insert(k, e);
                }
            }
            2 => {
                let order = match v.to_ascii_lowercase().as_str() {
                    "aromatic" => Some(BondOrder::Aromatic),
                    "single" | "1" => Some(BondOrder::Single),
                    "double" | "2" => Some(BondOrder::Double),
                    "triple" | "3" => Some(BondOrder::Triple),
                    _ => None,
                };
                if let Some(o) = order {
                    maps.edges.insert(k, o);
                }
            }
            _ => {}
        }
    }
    maps
}

fn read_ints(path: &Path) -> Result<Vec<Vec<i64>>, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<i64>, _> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map(|x| x as i64))
            .collect();
        out.push(row.map_err(|_| fmt_err(path, format!("line {}: not numeric", n + 1)))?);
    }
    Ok(out)
}

/// Reads a TU-format dataset (`DS_A.txt`, `DS_graph_indicator.txt`, ...)
/// from `dir`. Hydrogen nodes are dropped, aromatic edges are kekulized and
/// every graph is converted to SMILES; graphs that cannot be serialized are
/// skipped with a warning. The larger graph label maps to 1 unless
/// `positive_label` says otherwise.
pub fn load_tu(dir: &Path, prefix: &str, positive_label: Option<i64>) -> Result<Vec<RawRecord>, DatasetError> {
    let file = |suffix: &str| dir.join(format!("{prefix}_{suffix}.txt"));
    let readme_path = [dir.join("README.txt"), dir.join(format!("{prefix}_README.txt"))]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| fmt_err(dir, "README.txt with label tables not found"))?;
    let maps = parse_tu_readme(&fs::read_to_string(&readme_path).map_err(io_err(&readme_path))?);
    if maps.nodes.is_empty() {
        return Err(fmt_err(&readme_path, "no node label table"));
    }
    let edges = read_ints(&file("A"))?;
    let indicator = read_ints(&file("graph_indicator"))?;
    let graph_labels = read_ints(&file("graph_labels"))?;
    let node_labels = read_ints(&file("node_labels"))?;
    let edge_path = file("edge_labels");
    let edge_labels = if edge_path.exists() { Some(read_ints(&edge_path)?) } else { None };
    let charges = match maps.charge_column {
        Some(c) if file("node_attributes").exists() => {
            let rows = read_ints(&file("node_attributes"))?;
            Some(rows.into_iter().map(|r| r.get(c).copied().unwrap_or(0)).collect::<Vec<_>>())
        }
        _ => None,
    };
    if indicator.len() != node_labels.len() {
        return Err(fmt_err(dir, "node label and graph indicator lengths differ"));
    }

    let mut distinct: Vec<i64> = graph_labels.iter().map(|r| r[0]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let positive = positive_label.unwrap_or(*distinct.last().unwrap_or(&1));

    let n_graphs = graph_labels.len();
    let mut mols = vec![Molecule::new(); n_graphs];
    let mut local = vec![usize::MAX; indicator.len()];
    for (node, g) in indicator.iter().enumerate() {
        let g = (g[0] - 1) as usize;
        let label = node_labels[node][0];
        let element = *maps
            .nodes
            .get(&label)
            .ok_or_else(|| fmt_err(dir, format!("node label {label} not in README")))?;
        if element == Element::H {
            continue;
        }
        let charge = charges.as_ref().map_or(0, |c| c[node]) as i8;
        local[node] = mols[g].add_atom(AtomKind::new(element, charge));
    }
    for (k, e) in edges.iter().enumerate() {
        let (u, v) = ((e[0] - 1) as usize, (e[1] - 1) as usize);
        if local[u] == usize::MAX || local[v] == usize::MAX {
            continue;
        }
        let order = match &edge_labels {
            Some(l) => *maps
                .edges
                .get(&l[k][0])
                .ok_or_else(|| fmt_err(dir, format!("edge label {} not in README", l[k][0])))?,
            None => BondOrder::Single,
        };
        let g = (indicator[u][0] - 1) as usize;
        mols[g].add_bond(local[u], local[v], order);
    }

    let mut out = Vec::with_capacity(n_graphs);
    for (g, mut mol) in mols.into_iter().enumerate() {
        let h = vec![None; mol.num_atoms()];
        if kekulize(&mut mol, &h, KekuleMode::LenientHetero).is_err() {
            tracing::warn!(graph = g + 1, "skipping graph: aromatic system cannot be kekulized");
            continue;
        }
        cleanup(&mut mol);
        restore_charges(&mut mol);
        match to_smiles_strict(&mol) {
            Ok(smiles) if parse_smiles(&smiles).is_ok() => out.push(RawRecord {
                smiles,
                label: u8::from(graph_labels[g][0] == positive),
            }),
            Ok(_) | Err(_) => tracing::warn!(graph = g + 1, "skipping graph: not serializable"),
        }
    }
    Ok(out)
}

/// TU files drop formal charges, so `[N+](=O)[O-]` arrives as a neutral
/// tetravalent nitrogen with a single-bonded terminal oxygen. Such pairs get
/// their charges back. A tetravalent nitrogen without such an oxygen becomes
/// a plain cation.
fn restore_charges(mol: &mut Molecule) {
    let adj = mol.adjacency();
    while let Some(atom) = first_valence_violation(mol) {
        let kind = mol.atoms[atom];
        if kind.charge != 0 || !matches!(kind.element, Element::N | Element::P) || mol.explicit_valence(atom) != 4 {
            return;
        }
        let oxide = adj[atom].iter().find(|&&(o, k)| {
            let a = mol.atoms[o];
            a.element == Element::O && a.charge == 0 && adj[o].len() == 1 && mol.bonds[k].order == BondOrder::Single
        });
        mol.atoms[atom].charge = 1;
        if let Some(&(o, _)) = oxide {
            mol.atoms[o].charge = -1;
        }
    }
}

/// Writes raw records as a `smiles,label` CSV.
pub fn save_csv(path: &Path, records: &[RawRecord]) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut body = String::from("smiles,label\n");
    for r in records {
        body.push_str(&format!("{},{}\n", r.smiles, r.label));
    }
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, label: u8) -> RawRecord {
        RawRecord { smiles: "C".repeat(n), label }
    }

    #[test]
    fn size_filter_bounds() {
        let raw = vec![chain(1, 0), chain(2, 0), chain(100, 1), chain(101, 1), RawRecord { smiles: "C(".into(), label: 0 }];
        let (kept, rep) = preprocess_dataset(&raw, DatasetName::Bbbp, 0).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1].graph.num_nodes(), 100);
        assert_eq!((rep.too_small, rep.too_large, rep.unparseable), (1, 1, 1));
    }

    #[test]
    fn empty_after_filter_is_an_error() {
        let raw = vec![chain(1, 0)];
        assert!(matches!(
            preprocess_dataset(&raw, DatasetName::Aids, 0),
            Err(DatasetError::Empty(DatasetName::Aids))
        ));
    }

    #[test]
    fn tox21_keeps_600_zeros() {
        let mut raw: Vec<RawRecord> = (0..5000).map(|i| chain(2 + i % 5, 0)).collect();
        raw.extend((0..30).map(|_| chain(3, 1)));
        let (kept, rep) = preprocess_dataset(&raw, DatasetName::Tox21, 11).unwrap();
        assert_eq!(kept.iter().filter(|r| r.label() == 0).count(), 600);
        assert_eq!(kept.iter().filter(|r| r.label() == 1).count(), 30);
        assert_eq!(rep.downsampled, 4400);
        let (again, _) = preprocess_dataset(&raw, DatasetName::Tox21, 11).unwrap();
        assert_eq!(kept, again);
    }

    fn records(n: usize) -> Vec<DatasetRecord> {
        let raw: Vec<RawRecord> = (0..n).map(|i| chain(2 + i % 7, (i % 2) as u8)).collect();
        preprocess_dataset(&raw, DatasetName::Aids, 0).unwrap().0
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(records(2000), &SplitConfig::new(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1000, 500, 500));
        let s = split_dataset(records(4), &SplitConfig::new(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2, 1, 1));
        assert!(split_dataset(records(3), &SplitConfig::new(1)).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = split_dataset(records(50), &SplitConfig::new(5)).unwrap();
        let b = split_dataset(records(50), &SplitConfig::new(5)).unwrap();
        let c = split_dataset(records(50), &SplitConfig::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn readme_tables() {
        let text = "Node labels:\n\n  0  C\n  1  N\n  2  Cl\n\nEdge labels:\n\n  0  aromatic\n  1  single\n\n=== Previous ===\n 3 x";
        let maps = parse_tu_readme(text);
        assert_eq!(maps.nodes.len(), 3);
        assert_eq!(maps.nodes[&2], Element::CL);
        assert_eq!(maps.edges[&0], BondOrder::Aromatic);
        assert_eq!(maps.edges.len(), 2);
    }

    #[test]
    fn dataset_names_parse() {
        assert_eq!("aids".parse::<DatasetName>().unwrap(), DatasetName::Aids);
        assert_eq!("ClinTox".parse::<DatasetName>().unwrap(), DatasetName::ClinTox);
        assert!("zinc".parse::<DatasetName>().is_err());
    }
}
