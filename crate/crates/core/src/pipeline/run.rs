//! Pipeline stages: data preparation, classifier and encoder training,
//! counterfactual training with feedback, evaluation and the direct-edit
//! baseline.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Layout, RunConfig, RunLayout, SeedLayout};
use super::plot::{line_chart, Series};
use super::{PipelineError, StageExt};
use crate::chem::dataset::{
    load_csv, load_jsonl, load_tu, native_label_column, preprocess_dataset, regroup, save_jsonl, split_dataset,
    DatasetName, DatasetRecord, PreprocessReport, RawRecord, SplitConfig,
};
use crate::chem::graph::Vocabulary;
use crate::eval::metrics::{aggregate, evaluate as eval_outcomes, EvalReport, Outcome, Summary};
use crate::feedback::{
    direct_llm_counterfactual, generate_counterfactuals, read_jsonl, run_feedback_loop, write_jsonl, Ablation,
    CounterfactualRecord, DirectRecord,
};
use crate::llm::mock::ScriptedMock;
use crate::llm::LlmClient;
use crate::models::autoencoder::{write_loss_log, CaItem, CounterfactualAutoencoder};
use crate::models::gtgnn::{train_gtgnn_with, AccuracyReport, GtGnn};
use crate::models::text_encoder::{pretrain, PretrainReport, TextEncoder};
use crate::text::pairs::{generate_ctps, generate_tps, load_pairs, save_pairs, TextPair};
use crate::text::templates::{DatasetText, Direction};

fn mkdir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, body).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let body = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| PipelineError::Stage { stage: "read", message: format!("{}: {e}", path.display()) })
}

fn require(path: &Path, what: &'static str, hint: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing { what, path: path.to_path_buf(), hint })
    }
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(crate::llm::hex(&Sha256::digest(&bytes)))
}

/// Builds the LLM client of a run. The response cache defaults to one file
/// per dataset under the output directory.
pub fn client(cfg: &RunConfig) -> Result<LlmClient, PipelineError> {
    let mut pc = cfg.provider.clone();
    if pc.cache_path.is_none() {
        pc.cache_path = Some(cfg.layout().default_cache());
    }
    if let Some(dir) = pc.cache_path.as_ref().and_then(|p| p.parent()) {
        mkdir(dir)?;
    }
    let mock = match &cfg.mock_script {
        Some(p) => ScriptedMock::from_file(p).stage("llm")?,
        None => ScriptedMock::default(),
    };
    LlmClient::from_config(pc, mock).stage("llm")
}

/// Raw records from `data_dir`: TU-format directories for AIDS and
/// Mutagenicity, CSV files for the rest.
pub fn load_raw(cfg: &RunConfig) -> Result<Vec<RawRecord>, PipelineError> {
    let name = cfg.dataset;
    match name {
        DatasetName::Aids | DatasetName::Mutagenicity => {
            let dir = cfg.data_dir.join(name.as_str());
            require(&dir.join(format!("{name}_A.txt")), "raw dataset", "place the TU-format files there")?;
            load_tu(&dir, name.as_str(), cfg.data.positive_label).stage("load")
        }
        _ => {
            let candidates = [format!("{name}.csv"), format!("{}.csv", name.as_str().to_ascii_lowercase())];
            let path = candidates
                .iter()
                .map(|f| cfg.data_dir.join(f))
                .find(|p| p.exists())
                .ok_or_else(|| PipelineError::Missing {
                    what: "raw dataset",
                    path: cfg.data_dir.join(&candidates[1]),
                    hint: "place the CSV file there",
                })?;
            let col = cfg.data.label_column.as_deref().or(native_label_column(name)).unwrap_or("label");
            load_csv(&path, "smiles", col).stage("load")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub dataset: DatasetName,
    pub preprocess: PreprocessReport,
    pub kept: usize,
    pub positives: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub max_nodes: usize,
    pub tps: usize,
    pub tp_failures: usize,
    pub tp_retries: u32,
}

impl std::fmt::Display for PrepSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dataset      {}", self.dataset)?;
        writeln!(f, "raw          {}", self.preprocess.input)?;
        writeln!(f, "kept         {} ({} labelled 1)", self.kept, self.positives)?;
        writeln!(f, "split        {}/{}/{}", self.train, self.val, self.test)?;
        writeln!(f, "max nodes    {}", self.max_nodes)?;
        write!(f, "text pairs   {} ({} failed, {} reprompts)", self.tps, self.tp_failures, self.tp_retries)
    }
}

/// Preprocesses and splits the raw data, then asks for a text pair per
/// graph. Graph ids are positions in the stored record list.
pub fn prepare_data(cfg: &RunConfig) -> Result<PrepSummary, PipelineError> {
    let layout = cfg.layout();
    let raw = load_raw(cfg)?;
    let (kept, preprocess) = preprocess_dataset(&raw, cfg.dataset, cfg.data.split_seed).stage("preprocess")?;
    let splits = split_dataset(kept, &SplitConfig::new(cfg.data.split_seed)).stage("split")?;
    let (train, val, test) = (splits.train.len(), splits.val.len(), splits.test.len());
    let records: Vec<DatasetRecord> = splits.all().cloned().collect();
    save_jsonl(&layout.records(), &records).stage("persist")?;

    let client = client(cfg)?;
    let text = DatasetText::for_dataset(cfg.dataset);
    let items: Vec<(u64, String)> = records.iter().enumerate().map(|(i, r)| (i as u64, r.smiles.clone())).collect();
    let gen = generate_tps(&items, &text, &client, cfg.feedback.reprompts);
    save_pairs(&layout.tps(), &gen.pairs).stage("persist")?;
    write_jsonl(&layout.tp_failures(), &gen.failures).stage("persist")?;
    let summary = PrepSummary {
        dataset: cfg.dataset,
        preprocess,
        kept: records.len(),
        positives: records.iter().filter(|r| r.label() == 1).count(),
        train,
        val,
        test,
        max_nodes: records.iter().map(|r| r.graph.num_nodes()).max().unwrap_or(0),
        tps: gen.pairs.len(),
        tp_failures: gen.failures.len(),
        tp_retries: gen.pairs.iter().map(|p| p.retry_count).sum(),
    };
    write_json(&layout.prep_summary(), &summary)?;
    Ok(summary)
}

pub fn load_records(layout: &Layout) -> Result<Vec<DatasetRecord>, PipelineError> {
    require(&layout.records(), "prepared dataset", "run `prepare-data` first")?;
    load_jsonl(&layout.records()).stage("load")
}

pub fn load_tps(layout: &Layout) -> Result<Vec<TextPair>, PipelineError> {
    require(&layout.tps(), "text pairs", "run `prepare-data` first")?;
    load_pairs(&layout.tps()).stage("load")
}

/// Trains the classifier on the prepared splits and saves it.
pub fn train_gtgnn(cfg: &RunConfig) -> Result<(GtGnn, AccuracyReport), PipelineError> {
    let layout = cfg.layout();
    let records = load_records(&layout)?;
    let vocab = Vocabulary::from_graphs(records.iter().map(|r| &r.graph));
    let splits = regroup(records);
    let g = |v: &[DatasetRecord]| v.iter().map(|r| r.graph.clone()).collect::<Vec<_>>();
    let (model, report) = train_gtgnn_with(&g(&splits.train), &g(&splits.val), &g(&splits.test), vocab, cfg.gtgnn.clone(), |e| {
        if e.epoch % 50 == 0 {
            tracing::info!(epoch = e.epoch, loss = e.train_loss, val_acc = e.val_acc, "gtgnn");
        }
    })
    .stage("run `train-gtgnn` first")?;
    mkdir(layout.gtgnn().parent().expect("has parent"))?;
    model.save(&layout.gtgnn()).stage("run `train-gtgnn` first")?;
    write_json(&layout.gtgnn_report(), &report)?;
    Ok((model, report))
}

pub fn load_gtgnn(layout: &Layout) -> Result<GtGnn, PipelineError> {
    require(&layout.gtgnn(), "classifier checkpoint", "run `train-gtgnn` first")?;
    GtGnn::load(&layout.gtgnn()).stage("load-gtgnn")
}

/// Encoder settings with the projection sized to the classifier embedding.
fn encoder_config(cfg: &RunConfig, gt: &GtGnn) -> crate::models::text_encoder::TextEncoderConfig {
    let mut c = cfg.encoder.clone();
    c.proj_dim = gt.embed_dim();
    c
}

fn encoder_key(cfg: &RunConfig, gt: &GtGnn, layout: &Layout) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(encoder_config(cfg, gt), &cfg.pretrain)).expect("config serializes"));
    h.update(file_digest(&layout.gtgnn())?);
    h.update(file_digest(&layout.tps())?);
    Ok(format!("{}-seed{}", &crate::llm::hex(&h.finalize())[..16], cfg.pretrain.seed))
}

/// Pretrains an encoder on every stored text pair against the frozen
/// classifier embeddings, or loads the one already trained with the same
/// settings.
pub fn pretrain_encoder(cfg: &RunConfig, gt: &GtGnn) -> Result<(TextEncoder, Option<PretrainReport>, PathBuf), PipelineError> {
    let layout = cfg.layout();
    let path = layout.encoder(&encoder_key(cfg, gt, &layout)?);
    let report_path = path.with_extension("json");
    if path.exists() {
        let enc = TextEncoder::load(&path, gt.embed_dim()).stage("pretrain")?;
        let report = read_json(&report_path).ok();
        return Ok((enc, report, path));
    }
    let records = load_records(&layout)?;
    let tps = load_tps(&layout)?;
    let texts: Vec<&str> = tps.iter().map(|p| p.raw.as_str()).collect();
    let rows: Vec<Vec<f64>> = tps
        .iter()
        .map(|p| gt.embedding(&records[p.graph_id as usize].graph))
        .collect::<Result<_, _>>()
        .stage("pretrain")?;
    let embs = Array2::from_shape_fn((rows.len(), gt.embed_dim()), |(i, j)| rows[i][j]);
    let mut enc = TextEncoder::new(encoder_config(cfg, gt)).stage("pretrain")?;
    let report = pretrain(&mut enc, &texts, &embs, &cfg.pretrain, |epoch, loss| {
        if epoch % 10 == 0 {
            tracing::info!(epoch, loss, "pretrain");
        }
    })
    .stage("pretrain")?;
    mkdir(path.parent().expect("has parent"))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    enc.save(&tmp).stage("pretrain")?;
    std::fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))?;
    write_json(&report_path, &report)?;
    Ok((enc, Some(report), path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Default)]
struct Clock(Vec<StageTime>);

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        tracing::info!(stage, seconds, "stage done");
        self.0.push(StageTime { stage: stage.to_string(), seconds });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub dataset: DatasetName,
    pub created: String,
    pub version: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
}

/// Graphs the classifier puts in class 0, in record order, capped by
/// `max_graphs`.
pub fn candidates(records: &[DatasetRecord], gt: &GtGnn, max: Option<usize>) -> Result<Vec<u64>, PipelineError> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if max.is_some_and(|m| out.len() >= m) {
            break;
        }
        if gt.predict(&r.graph).stage("select")?.label == 0 {
            out.push(i as u64);
        }
    }
    Ok(out)
}

/// Full training run: every seed gets its own encoder, CTPs, autoencoder
/// and counterfactual store. Returns the run directory.
pub fn train(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let layout = cfg.layout();
    let records = load_records(&layout)?;
    let tps = load_tps(&layout)?;
    let gt = if layout.gtgnn().exists() {
        load_gtgnn(&layout)?
    } else {
        tracing::info!("no classifier checkpoint; training one");
        train_gtgnn(cfg)?.0
    };
    let run_id = cfg.run_id();
    let run = RunLayout { dir: layout.runs().join(&run_id) };
    mkdir(&run.dir)?;
    std::fs::write(run.config(), cfg.to_toml()).map_err(|e| PipelineError::io(&run.config(), e))?;
    let meta = RunMeta {
        run_id,
        dataset: cfg.dataset,
        created: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: cfg.digest(),
        seeds: cfg.seeds.clone(),
    };
    write_json(&run.meta(), &meta)?;
    let client = client(cfg)?;
    for &seed in &cfg.seeds {
        tracing::info!(seed, dir = %run.dir.display(), "training");
        train_seed(&cfg.for_seed(seed), &gt, &records, &tps, &client, &run.seed(seed))?;
    }
    evaluate(&run.dir)?;
    Ok(run.dir)
}

fn train_seed(
    cfg: &RunConfig,
    gt: &GtGnn,
    records: &[DatasetRecord],
    tps: &[TextPair],
    client: &LlmClient,
    out: &SeedLayout,
) -> Result<EvalReport, PipelineError> {
    mkdir(&out.dir)?;
    let mut clock = Clock::default();
    let text = DatasetText::for_dataset(cfg.dataset);
    let by_id: HashMap<u64, &TextPair> = tps.iter().map(|p| (p.graph_id, p)).collect();
    let ids: Vec<u64> = candidates(records, gt, None)?.into_iter().filter(|id| by_id.contains_key(id)).collect();
    let ids: Vec<u64> = ids.into_iter().take(cfg.data.max_graphs.unwrap_or(usize::MAX)).collect();
    if ids.is_empty() {
        return Err(PipelineError::Stage { stage: "select", message: "no class-0 graph with a text pair".into() });
    }

    let encoder = if cfg.feedback.ablation == Ablation::Np {
        TextEncoder::new(encoder_config(cfg, gt)).stage("pretrain")?
    } else {
        let (enc, report, path) = clock.time("pretrain", || pretrain_encoder(cfg, gt))?;
        tracing::info!(path = %path.display(), "encoder");
        if let Some(r) = report {
            write_json(&out.file("pretrain.json"), &r)?;
        }
        enc
    };

    let inputs: Vec<(String, TextPair)> =
        ids.iter().map(|id| (records[*id as usize].smiles.clone(), (*by_id[id]).clone())).collect();
    let gen = clock.time("ctp", || generate_ctps(&inputs, &text, Direction::Increase, client, cfg.feedback.reprompts));
    let ctps = gen.pairs;
    save_pairs(&out.file("ctps_initial.jsonl"), &ctps).stage("persist")?;

    let m_max = records.iter().map(|r| r.graph.num_nodes()).max().unwrap_or(1);
    let mut ca = CounterfactualAutoencoder::new(cfg.ca.model.clone(), encoder, gt.vocab.clone(), m_max, gt.embed_dim())
        .stage("train-ca")?;
    let mut items: Vec<CaItem> = ctps
        .iter()
        .map(|c| ca.item(c.graph_id, &records[c.graph_id as usize].graph, gt, &c.raw))
        .collect::<Result<_, _>>()
        .stage("train-ca")?;
    let run = clock.time("train-ca", || {
        run_feedback_loop(&mut ca, gt, &mut items, &ctps, client, &text, &cfg.feedback, cfg.ca.epochs, |r| {
            if r.epoch % 10 == 0 {
                tracing::info!(epoch = r.epoch, total = r.total, l_pred = r.l_pred, l_dist = r.l_dist, "ca");
            }
        })
    })
    .stage("train-ca")?;
    let _ = std::fs::remove_file(out.losses());
    write_loss_log(&out.losses(), &run.losses).stage("persist")?;
    write_jsonl(&out.transcript(), &run.transcript).stage("persist")?;
    write_jsonl(&out.file("rounds.jsonl"), &run.rounds).stage("persist")?;
    let mut failures = gen.failures;
    failures.extend(run.failures);
    write_jsonl(&out.file("failures.jsonl"), &failures).stage("persist")?;
    save_pairs(&out.file("ctps_final.jsonl"), &run.ctps).stage("persist")?;
    ca.save(&out.file("ca.ckpt")).stage("persist")?;

    let store = clock.time("generate", || generate_counterfactuals(&ca, gt, &items, &run.ctps, cfg.ca.model.distance)).stage("generate")?;
    write_jsonl(&out.counterfactuals(), &store).stage("persist")?;
    write_json(&out.timing(), &clock.0)?;

    let curves = [
        ("total", run.losses.iter().map(|r| r.total).collect::<Vec<_>>()),
        ("L_dist", run.losses.iter().map(|r| r.l_dist).collect()),
        ("L_pred", run.losses.iter().map(|r| r.l_pred).collect()),
        ("L_KL", run.losses.iter().map(|r| r.l_kl).collect()),
    ];
    let series: Vec<Series> = curves
        .into_iter()
        .map(|(n, v)| Series { name: n.into(), points: v.into_iter().enumerate().map(|(i, y)| (i as f64, y)).collect() })
        .collect();
    line_chart(&out.file("losses.svg"), "training loss", "epoch", "loss", &series)?;
    evaluate_seed(out)
}

fn outcomes(store: &[CounterfactualRecord]) -> Vec<Outcome> {
    store.iter().map(Outcome::from).collect()
}

/// Scores one seed directory and writes its report files.
pub fn evaluate_seed(out: &SeedLayout) -> Result<EvalReport, PipelineError> {
    require(&out.counterfactuals(), "counterfactual store", "run `train` first")?;
    let store: Vec<CounterfactualRecord> = read_jsonl(&out.counterfactuals()).stage("evaluate")?;
    let report = eval_outcomes(&outcomes(&store)).stage("evaluate")?;
    report.write_json(&out.report_json()).stage("evaluate")?;
    report.write_csv(&out.file("per_graph.csv")).stage("evaluate")?;
    std::fs::write(out.file("report.txt"), report.table()).map_err(|e| PipelineError::io(&out.file("report.txt"), e))?;
    Ok(report)
}

/// Scores every seed of a run and writes the seed aggregate.
pub fn evaluate(run_dir: &Path) -> Result<(Vec<(u64, EvalReport)>, Summary), PipelineError> {
    require(run_dir, "run directory", "run `train` first")?;
    let run = RunLayout { dir: run_dir.to_path_buf() };
    let seeds = run.seeds()?;
    if seeds.is_empty() {
        return Err(PipelineError::Missing { what: "seed directories", path: run.dir.join("seed_*"), hint: "run `train` first" });
    }
    let mut reports = Vec::new();
    for (seed, s) in seeds {
        reports.push((seed, evaluate_seed(&s)?));
    }
    let only: Vec<EvalReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let summary = aggregate(&only).stage("evaluate")?;
    write_json(&run.summary_json(), &summary)?;
    std::fs::write(run.summary_txt(), summary.table()).map_err(|e| PipelineError::io(&run.summary_txt(), e))?;
    Ok((reports, summary))
}

/// One line per run directory: dataset, ablation, seeds and the four
/// headline numbers.
pub fn report(run_dirs: &[PathBuf]) -> Result<String, PipelineError> {
    let mut rows = vec![format!(
        "{:<40} {:<13} {:<9} {:>18} {:>18} {:>18} {:>18}",
        "run", "dataset", "ablation", "validity", "validity (feas)", "proximity", "proximity (feas)"
    )];
    let c = |m: Option<crate::eval::MeanStd>| m.map_or_else(|| "n/a".to_string(), |m| m.to_string());
    for dir in run_dirs {
        let run = RunLayout { dir: dir.clone() };
        let cfg = RunConfig::load(&run.config())?;
        let summary = if run.summary_json().exists() { read_json::<Summary>(&run.summary_json())? } else { evaluate(dir)?.1 };
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(format!(
            "{:<40} {:<13} {:<9} {:>18} {:>18} {:>18} {:>18}",
            name,
            cfg.dataset.as_str(),
            cfg.feedback.ablation.as_str(),
            summary.validity_nofeas.to_string(),
            summary.validity_feas.to_string(),
            c(summary.proximity_nofeas),
            c(summary.proximity_feas),
        ));
    }
    Ok(rows.join("\n") + "\n")
}

/// Per-stage wall-clock of each run, summed over seeds.
pub fn timing(run_dirs: &[PathBuf]) -> Result<String, PipelineError> {
    let mut out = String::new();
    for dir in run_dirs {
        let run = RunLayout { dir: dir.clone() };
        out.push_str(&format!("{}\n", dir.display()));
        let mut totals: Vec<(String, f64, usize)> = Vec::new();
        for (_, s) in run.seeds()? {
            let times: Vec<StageTime> = read_json(&s.timing())?;
            for t in times {
                match totals.iter_mut().find(|(n, _, _)| *n == t.stage) {
                    Some(e) => {
                        e.1 += t.seconds;
                        e.2 += 1;
                    }
                    None => totals.push((t.stage, t.seconds, 1)),
                }
            }
        }
        for (stage, secs, n) in totals {
            out.push_str(&format!("  {stage:<10} {secs:>10.2}s  ({n} seed(s), {:.2}s each)\n", secs / n as f64));
        }
    }
    Ok(out)
}

/// Asks the LLM to edit every class-0 graph directly and scores the
/// replies. Results go to a fresh directory under `direct/`.
pub fn direct_baseline(cfg: &RunConfig) -> Result<(PathBuf, EvalReport), PipelineError> {
    let layout = cfg.layout();
    let records = load_records(&layout)?;
    let gt = load_gtgnn(&layout)?;
    let client = client(cfg)?;
    let text = DatasetText::for_dataset(cfg.dataset);
    let ids = candidates(&records, &gt, cfg.data.max_graphs)?;
    let results = crate::text::pairs::par_map(&ids, client.config.max_parallel, |&id| {
        let r = &records[id as usize];
        direct_llm_counterfactual(id, &r.smiles, &r.graph, &gt, &client, &text, cfg.ca.model.distance)
    });
    let recs: Vec<DirectRecord> = results.into_iter().collect::<Result<_, _>>().stage("direct")?;
    let dir = layout.direct().join(cfg.run_id());
    mkdir(&dir)?;
    write_jsonl(&dir.join("direct.jsonl"), &recs).stage("persist")?;
    let outcomes: Vec<Outcome> = recs.iter().map(|r| Outcome::from_direct(r, 0)).collect();
    let report = eval_outcomes(&outcomes).stage("evaluate")?;
    report.write_json(&dir.join("report.json")).stage("evaluate")?;
    std::fs::write(dir.join("report.txt"), report.table()).map_err(|e| PipelineError::io(&dir.join("report.txt"), e))?;
    Ok((dir, report))
}
