//! Run configuration, file layout and overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::chem::dataset::DatasetName;
use crate::feedback::FeedbackConfig;
use crate::llm::ProviderConfig;
use crate::models::autoencoder::CaConfig;
use crate::models::gtgnn::GtGnnConfig;
use crate::models::text_encoder::{PretrainConfig, TextEncoderConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Raw graph label treated as class 1 for TU-format inputs; the largest
    /// label when unset.
    pub positive_label: Option<i64>,
    /// CSV label column; the dataset's usual column when unset.
    pub label_column: Option<String>,
    pub split_seed: u64,
    /// Cap on the number of class-0 graphs explained per run.
    pub max_graphs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaSection {
    pub epochs: usize,
    #[serde(flatten)]
    pub model: CaConfig,
}

impl Default for CaSection {
    fn default() -> Self {
        Self { epochs: 100, model: CaConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetName,
    /// Where raw dataset files are read from.
    pub data_dir: PathBuf,
    /// Root of everything the pipeline writes.
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Optional scripted-mock rules (TOML or JSON).
    pub mock_script: Option<PathBuf>,
    pub data: DataConfig,
    pub gtgnn: GtGnnConfig,
    pub encoder: TextEncoderConfig,
    pub pretrain: PretrainConfig,
    pub ca: CaSection,
    pub feedback: FeedbackConfig,
    pub provider: ProviderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Aids,
            data_dir: "data".into(),
            output_dir: "runs".into(),
            seeds: vec![0],
            mock_script: None,
            data: DataConfig::default(),
            gtgnn: GtGnnConfig::default(),
            encoder: TextEncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            ca: CaSection::default(),
            feedback: FeedbackConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(cfg_err)
    }

    /// Reads `path`; relative data and output directories stay relative to
    /// the working directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let body = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&body)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `dotted.key=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings. Keys must name an existing field or an
    /// unset optional one in an existing table.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self, PipelineError> {
        let mut root = toml::Value::try_from(self).map_err(cfg_err)?;
        for set in sets {
            let set = set.as_ref();
            let (key, raw) = set.split_once('=').ok_or_else(|| cfg_err(format!("override {set:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one part");
            let mut table = root.as_table_mut().expect("config is a table");
            for p in parents {
                table = table
                    .get_mut(*p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| cfg_err(format!("unknown config section {p:?} in {key:?}")))?;
            }
            if !table.contains_key(*last) && !optional_field(key.trim()) {
                return Err(cfg_err(format!("unknown config key {key:?}")));
            }
            table.insert((*last).to_string(), value);
        }
        let cfg: RunConfig = root.try_into().map_err(cfg_err)?;
        Ok(cfg)
    }

    /// Hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::llm::hex(&Sha256::digest(json.as_bytes()))
    }

    /// Short config hash plus UTC timestamp.
    pub fn run_id(&self) -> String {
        format!("{}-{}", &self.digest()[..10], chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ"))
    }

    /// Settings used for one seed.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.ca.model.seed = seed;
        c.encoder.seed = seed;
        c.pretrain.seed = seed;
        c
    }

    pub fn layout(&self) -> Layout {
        Layout { root: self.output_dir.join(self.dataset.as_str()) }
    }
}

/// Fields that serialize to nothing while unset.
fn optional_field(key: &str) -> bool {
    matches!(
        key,
        "mock_script"
            | "data.positive_label"
            | "data.label_column"
            | "data.max_graphs"
            | "pretrain.temperature"
            | "provider.cache_path"
    )
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Where each artifact of a dataset lives under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn prepared(&self) -> PathBuf {
        self.root.join("prepared")
    }
    pub fn records(&self) -> PathBuf {
        self.prepared().join("records.jsonl")
    }
    pub fn tps(&self) -> PathBuf {
        self.prepared().join("tps.jsonl")
    }
    pub fn tp_failures(&self) -> PathBuf {
        self.prepared().join("tp_failures.jsonl")
    }
    pub fn prep_summary(&self) -> PathBuf {
        self.prepared().join("summary.json")
    }
    pub fn gtgnn(&self) -> PathBuf {
        self.root.join("gtgnn").join("model.ckpt")
    }
    pub fn gtgnn_report(&self) -> PathBuf {
        self.root.join("gtgnn").join("report.json")
    }
    /// Pretrained encoders are keyed by everything that shapes them.
    pub fn encoder(&self, key: &str) -> PathBuf {
        self.root.join("encoders").join(format!("{key}.ckpt"))
    }
    pub fn default_cache(&self) -> PathBuf {
        self.root.join("llm_cache.jsonl")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn direct(&self) -> PathBuf {
        self.root.join("direct")
    }
}

/// Files inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn meta(&self) -> PathBuf {
        self.dir.join("meta.json")
    }
    pub fn summary_json(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
    pub fn summary_txt(&self) -> PathBuf {
        self.dir.join("summary.txt")
    }
    pub fn seed(&self, seed: u64) -> SeedLayout {
        SeedLayout { dir: self.dir.join(format!("seed_{seed}")) }
    }
    /// Seed directories present on disk, by seed.
    pub fn seeds(&self) -> Result<Vec<(u64, SeedLayout)>, PipelineError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.dir).map_err(|e| PipelineError::io(&self.dir, e))?;
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse().ok()) {
                out.push((seed, SeedLayout { dir: e.path() }));
            }
        }
        out.sort_by_key(|(s, _)| *s);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedLayout {
    pub dir: PathBuf,
}

impl SeedLayout {
    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
    pub fn counterfactuals(&self) -> PathBuf {
        self.file("counterfactuals.jsonl")
    }
    pub fn transcript(&self) -> PathBuf {
        self.file("transcript.jsonl")
    }
    pub fn losses(&self) -> PathBuf {
        self.file("losses.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.file("timing.json")
    }
    pub fn report_json(&self) -> PathBuf {
        self.file("report.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::Ablation;

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let partial = RunConfig::from_toml_str("dataset = \"BBBP\"\n[ca]\nepochs = 7\nbeta = 2.0\n").unwrap();
        assert_eq!((partial.dataset, partial.ca.epochs, partial.ca.model.beta), (DatasetName::Bbbp, 7, 2.0));
        assert_eq!(partial.ca.model.latent_dim, 32);

        let o = c
            .with_overrides(&["feedback.ablation=nt", "ca.alpha=0.5", "seeds=[1,2]", "data.max_graphs=30", "dataset=ClinTox"])
            .unwrap();
        assert_eq!(o.feedback.ablation, Ablation::Nt);
        assert_eq!((o.ca.model.alpha, o.seeds.clone(), o.data.max_graphs), (0.5, vec![1, 2], Some(30)));
        assert_eq!(o.dataset, DatasetName::ClinTox);
        assert!(c.with_overrides(&["ca.alhpa=1"]).is_err());
        assert!(c.with_overrides(&["nope.x=1"]).is_err());
        assert!(c.with_overrides(&["ca.epochs=many"]).is_err());
    }

    #[test]
    fn digests_follow_content() {
        let a = RunConfig::default();
        let b = a.with_overrides(&["ca.epochs=5"]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert!(a.run_id().starts_with(&a.digest()[..10]));
        let s = a.for_seed(7);
        assert_eq!((s.ca.model.seed, s.encoder.seed, s.pretrain.seed), (7, 7, 7));
    }
}
