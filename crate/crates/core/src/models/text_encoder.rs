//! Small transformer text encoder with a projection head, and the
//! contrastive objective that aligns it with graph embeddings.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, Adam, CheckpointError, LayerNorm, Linear, Mat, Mlp, ParamId,
    ParamStore, Tape, Var,
};

pub const CHECKPOINT_KIND: &str = "text-encoder";
const PAD_SPECIALS: u32 = 2;
const CLS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Cls,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    /// Context length including the leading [CLS] token.
    pub max_len: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub pooling: Pooling,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            max_len: 128,
            dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            pooling: Pooling::Cls,
            proj_hidden: 64,
            proj_dim: 32,
            seed: 0,
        }
    }
}

impl TextEncoderConfig {
    /// Hex digest of the architecture (the seed is excluded).
    pub fn fingerprint(&self) -> String {
        let arch = Self { seed: 0, ..self.clone() };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&arch).expect("config serializes"));
        crate::llm::hex(&h.finalize()[..8])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TextEncoderError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    TokenLimit(#[from] TokenLimitError),
    #[error(transparent)]
    ZeroVector(#[from] ZeroVectorError),
    #[error("empty text")]
    EmptyText,
    #[error("loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("text has {tokens} tokens, context holds {limit}")]
pub struct TokenLimitError {
    pub tokens: usize,
    pub limit: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("row {row} of the {side} embeddings has zero norm")]
pub struct ZeroVectorError {
    pub side: &'static str,
    pub row: usize,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100000001b3))
}

/// Lowercased alphanumeric runs and single punctuation characters.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub store: ParamStore,
    parts: Parts,
}

#[derive(Debug, Clone)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    ffn: Mlp,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
struct Parts {
    tok: ParamId,
    pos: ParamId,
    ln0: LayerNorm,
    blocks: Vec<Block>,
    proj: Mlp,
}

impl Parts {
    fn find(store: &ParamStore, cfg: &TextEncoderConfig) -> Option<Self> {
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("block{l}");
                Some(Block {
                    q: Linear::find(store, &format!("{p}.q"))?,
                    k: Linear::find(store, &format!("{p}.k"))?,
                    v: Linear::find(store, &format!("{p}.v"))?,
                    o: Linear::find(store, &format!("{p}.o"))?,
                    ln1: LayerNorm::find(store, &format!("{p}.ln1"))?,
                    ffn: Mlp::find(store, &format!("{p}.ffn"), 2, Activation::Gelu)?,
                    ln2: LayerNorm::find(store, &format!("{p}.ln2"))?,
                })
            })
            .collect::<Option<_>>()?;
        Some(Self {
            tok: store.id("tok")?,
            pos: store.id("pos")?,
            ln0: LayerNorm::find(store, "ln0")?,
            blocks,
            proj: Mlp::find(store, "proj", 2, Activation::Relu)?,
        })
    }
}

/// Token ids of one text, [CLS] first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens(pub Vec<u32>);

/// Embeddings of a batch bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `B×dim` pooled encoder output.
    pub native: Var,
    /// `B×proj_dim`.
    pub projected: Var,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig) -> Result<Self, TextEncoderError> {
        let c = &config;
        if c.dim == 0 || c.heads == 0 || !c.dim.is_multiple_of(c.heads) {
            return Err(TextEncoderError::Config("dim must be a positive multiple of heads".into()));
        }
        if c.vocab_size <= PAD_SPECIALS as usize || c.max_len < 2 || c.proj_dim == 0 || c.proj_hidden == 0 {
            return Err(TextEncoderError::Config("vocabulary, context and projection sizes are too small".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let normal = |rng: &mut ChaCha8Rng, r: usize, k: usize| {
            let d = rand_distr::Normal::new(0.0, 0.02).unwrap();
            Array2::from_shape_simple_fn((r, k), || rand_distr::Distribution::sample(&d, rng))
        };
        let tok = normal(&mut rng, c.vocab_size, c.dim);
        store.add("tok", tok);
        let pos = normal(&mut rng, c.max_len, c.dim);
        store.add("pos", pos);
        LayerNorm::new(&mut store, "ln0", c.dim);
        for l in 0..c.layers {
            let p = format!("block{l}");
            for n in ["q", "k", "v", "o"] {
                Linear::new(&mut store, &mut rng, &format!("{p}.{n}"), c.dim, c.dim);
            }
            LayerNorm::new(&mut store, &format!("{p}.ln1"), c.dim);
            Mlp::new(&mut store, &mut rng, &format!("{p}.ffn"), &[c.dim, c.ffn_dim, c.dim], Activation::Gelu);
            LayerNorm::new(&mut store, &format!("{p}.ln2"), c.dim);
        }
        Mlp::new(&mut store, &mut rng, "proj", &[c.dim, c.proj_hidden, c.proj_dim], Activation::Relu);
        Self::from_parts(config, store)
    }

    fn from_parts(config: TextEncoderConfig, store: ParamStore) -> Result<Self, TextEncoderError> {
        let parts = Parts::find(&store, &config)
            .ok_or_else(|| TextEncoderError::Config("parameter store does not match the configuration".into()))?;
        Ok(Self { config, store, parts })
    }

    fn parts(&self) -> &Parts {
        &self.parts
    }

    /// Fails when the text does not fit the context.
    pub fn tokenize_strict(&self, text: &str) -> Result<Tokens, TextEncoderError> {
        let ws = words(text);
        if ws.is_empty() {
            return Err(TextEncoderError::EmptyText);
        }
        let limit = self.config.max_len - 1;
        if ws.len() > limit {
            return Err(TokenLimitError { tokens: ws.len(), limit }.into());
        }
        let buckets = self.config.vocab_size as u64 - u64::from(PAD_SPECIALS);
        let mut ids = vec![CLS];
        ids.extend(ws.iter().map(|w| PAD_SPECIALS + (fnv1a(w) % buckets) as u32));
        Ok(Tokens(ids))
    }

    /// Like [`tokenize_strict`](Self::tokenize_strict) but truncates over-long
    /// text with a warning.
    pub fn tokenize(&self, text: &str) -> Result<Tokens, TextEncoderError> {
        match self.tokenize_strict(text) {
            Err(TextEncoderError::TokenLimit(e)) => {
                tracing::warn!(%e, "truncating text");
                let cut: String = {
                    let ws = words(text);
                    ws[..e.limit].join(" ")
                };
                self.tokenize_strict(&cut)
            }
            other => other,
        }
    }

    pub fn tokenize_all(&self, texts: &[&str]) -> Result<Vec<Tokens>, TextEncoderError> {
        texts.iter().map(|t| self.tokenize(t)).collect()
    }

    /// Runs the encoder and projection on a batch.
    pub fn forward<'s>(&'s self, t: &mut Tape<'s>, batch: &[Tokens]) -> Encoded {
        let c = &self.config;
        let p = self.parts();
        let s = &self.store;
        let ids: Vec<usize> = batch.iter().flat_map(|b| b.0.iter().map(|&i| i as usize)).collect();
        let positions: Vec<usize> = batch.iter().flat_map(|b| 0..b.0.len()).collect();
        let mut spans = Vec::with_capacity(batch.len());
        let mut off = 0;
        for b in batch {
            spans.push((off, b.0.len()));
            off += b.0.len();
        }
        let tok = t.param(s, p.tok);
        let pos = t.param(s, p.pos);
        let te = t.gather_rows(tok, &ids);
        let pe = t.gather_rows(pos, &positions);
        let x0 = t.add(te, pe);
        let mut h = p.ln0.forward(t, s, x0);
        let dh = c.dim / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for blk in &p.blocks {
            let q = blk.q.forward(t, s, h);
            let k = blk.k.forward(t, s, h);
            let v = blk.v.forward(t, s, h);
            let mut per_text = Vec::with_capacity(batch.len());
            for &(start, len) in &spans {
                let (qs, ks, vs) = (t.slice_rows(q, start, len), t.slice_rows(k, start, len), t.slice_rows(v, start, len));
                let mut heads = Vec::with_capacity(c.heads);
                for hd in 0..c.heads {
                    let qh = t.slice_cols(qs, hd * dh, dh);
                    let kh = t.slice_cols(ks, hd * dh, dh);
                    let vh = t.slice_cols(vs, hd * dh, dh);
                    let kt = t.transpose(kh);
                    let sc = t.matmul(qh, kt);
                    let sc = t.scale(sc, scale);
                    let att = t.softmax(sc);
                    heads.push(t.matmul(att, vh));
                }
                per_text.push(t.concat_cols(&heads));
            }
            let att = t.concat_rows(&per_text);
            let att = blk.o.forward(t, s, att);
            let r = t.add(h, att);
            h = blk.ln1.forward(t, s, r);
            let f = blk.ffn.forward(t, s, h);
            let r = t.add(h, f);
            h = blk.ln2.forward(t, s, r);
        }
        let native = match c.pooling {
            Pooling::Cls => {
                let firsts: Vec<usize> = spans.iter().map(|&(start, _)| start).collect();
                t.gather_rows(h, &firsts)
            }
            Pooling::Mean => {
                let rows: Vec<Var> = spans
                    .iter()
                    .map(|&(start, len)| {
                        let sl = t.slice_rows(h, start, len);
                        let sm = t.sum_rows(sl);
                        t.scale(sm, 1.0 / len as f64)
                    })
                    .collect();
                t.concat_rows(&rows)
            }
        };
        let projected = p.proj.forward(t, s, native);
        Encoded { native, projected }
    }

    /// Inference-mode embedding `(native, projected)` of one text.
    pub fn encode_text(&self, text: &str) -> Result<(Vec<f64>, Vec<f64>), TextEncoderError> {
        let toks = self.tokenize(text)?;
        let mut t = Tape::new();
        let out = self.forward(&mut t, std::slice::from_ref(&toks));
        Ok((t.value(out.native).iter().copied().collect(), t.value(out.projected).iter().copied().collect()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TextEncoderError> {
        let cfg = serde_json::json!({ "config": self.config, "fingerprint": self.config.fingerprint() });
        save_checkpoint(path, CHECKPOINT_KIND, cfg, &[("encoder", &self.store)])?;
        Ok(())
    }

    /// Loads a checkpoint whose projection must produce `expected_proj_dim`
    /// columns.
    pub fn load(path: &Path, expected_proj_dim: usize) -> Result<Self, TextEncoderError> {
        let mut ck = load_checkpoint(path, CHECKPOINT_KIND)?;
        let config: TextEncoderConfig = serde_json::from_value(ck.config["config"].clone())
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let stored = ck.config["fingerprint"].as_str().unwrap_or_default().to_string();
        if stored != config.fingerprint() {
            return Err(CheckpointError::Fingerprint { expected: config.fingerprint(), found: stored }.into());
        }
        if config.proj_dim != expected_proj_dim {
            return Err(TextEncoderError::Shape(format!(
                "checkpoint projects to {} dimensions, expected {expected_proj_dim}",
                config.proj_dim
            )));
        }
        let store = ck.take_store("encoder").ok_or_else(|| CheckpointError::Format("missing encoder store".into()))?;
        Self::from_parts(config, store)
    }
}

fn check_rows(m: &Mat, side: &'static str) -> Result<(), ZeroVectorError> {
    for (row, r) in m.axis_iter(Axis(0)).enumerate() {
        if r.iter().all(|&x| x == 0.0) || !r.dot(&r).is_normal() {
            return Err(ZeroVectorError { side, row });
        }
    }
    Ok(())
}

fn unit_rows(t: &mut Tape<'_>, x: Var) -> Var {
    let sq = t.square(x);
    let n2 = t.sum_cols(sq);
    let inv = t.ln(n2);
    let inv = t.scale(inv, -0.5);
    let inv = t.exp(inv);
    t.mul(x, inv)
}

/// Cosine similarities `M[i][j] = cos(graph_i, text_j)`, divided by
/// `temperature` when one is given.
pub fn similarity_matrix(
    t: &mut Tape<'_>,
    graph: Var,
    text: Var,
    temperature: Option<f64>,
) -> Result<Var, TextEncoderError> {
    let (g, x) = (t.value(graph), t.value(text));
    if g.dim() != x.dim() {
        return Err(TextEncoderError::Shape(format!("graph {:?} vs text {:?}", g.dim(), x.dim())));
    }
    check_rows(g, "graph")?;
    check_rows(x, "text")?;
    let gn = unit_rows(t, graph);
    let xn = unit_rows(t, text);
    let xt = t.transpose(xn);
    let m = t.matmul(gn, xt);
    Ok(match temperature {
        Some(tau) => t.scale(m, 1.0 / tau),
        None => m,
    })
}

/// Mean of the row-wise and column-wise cross-entropies with the diagonal
/// as the target class.
pub fn contrastive_loss(t: &mut Tape<'_>, m: Var) -> Var {
    let b = t.value(m).nrows();
    let eye = t.constant(Array2::eye(b));
    let rows = t.log_softmax(m);
    let mt = t.transpose(m);
    let cols = t.log_softmax(mt);
    let both = t.add(rows, cols);
    let diag = t.mul(both, eye);
    let s = t.sum(diag);
    t.scale(s, -0.5 / b as f64)
}

/// Fraction of rows whose largest entry is on the diagonal.
pub fn retrieval_at_1(m: &Mat) -> f64 {
    let hits = m
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(i, r)| {
            let best = r.iter().enumerate().fold(0, |b, (j, &v)| if v > r[b] { j } else { b });
            best == *i
        })
        .count();
    hits as f64 / m.nrows().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Optional softmax temperature on the cosine logits; off by default.
    pub temperature: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, epochs: 100, learning_rate: 0.01, weight_decay: 0.01, temperature: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    /// Retrieval@1 over the first batch of the unshuffled set.
    pub retrieval_before: f64,
    pub retrieval_after: f64,
}

fn batch_similarity(
    enc: &TextEncoder,
    toks: &[Tokens],
    graph: &Mat,
    temperature: Option<f64>,
) -> Result<Mat, TextEncoderError> {
    let mut t = Tape::new();
    let e = enc.forward(&mut t, toks);
    let g = t.constant(graph.clone());
    let m = similarity_matrix(&mut t, g, e.projected, temperature)?;
    Ok(t.value(m).clone())
}

/// Trains encoder and projection so that each text lands near the
/// embedding of its own graph. `graph_embs` row `i` belongs to `texts[i]`.
pub fn pretrain(
    enc: &mut TextEncoder,
    texts: &[&str],
    graph_embs: &Mat,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<PretrainReport, TextEncoderError> {
    if cfg.batch_size < 2 {
        return Err(TextEncoderError::Config("contrastive batches need at least 2 pairs".into()));
    }
    if texts.len() != graph_embs.nrows() || texts.len() < 2 {
        return Err(TextEncoderError::Shape(format!("{} texts for {} graphs", texts.len(), graph_embs.nrows())));
    }
    if graph_embs.ncols() != enc.config.proj_dim {
        return Err(TextEncoderError::Shape(format!(
            "graph embeddings have {} columns, projection has {}",
            graph_embs.ncols(),
            enc.config.proj_dim
        )));
    }
    let toks = enc.tokenize_all(texts)?;
    let probe = cfg.batch_size.min(texts.len());
    let probe_g = graph_embs.slice(ndarray::s![..probe, ..]).to_owned();
    let retrieval_before = retrieval_at_1(&batch_similarity(enc, &toks[..probe], &probe_g, cfg.temperature)?);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::with_decay(&enc.store, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // a trailing single pair has no negatives; fold it into its neighbour
        if chunks.len() > 1 && chunks.last().unwrap().len() < 2 {
            let n = chunks.len();
            chunks[n - 2] = &order[(n - 2) * cfg.batch_size..];
            chunks.pop();
        }
        let mut total = 0.0;
        for idx in &chunks {
            let bt: Vec<Tokens> = idx.iter().map(|&i| toks[i].clone()).collect();
            let bg = graph_embs.select(Axis(0), idx);
            let (loss, grads) = {
                let mut t = Tape::new();
                let e = enc.forward(&mut t, &bt);
                let g = t.constant(bg);
                let m = similarity_matrix(&mut t, g, e.projected, cfg.temperature)?;
                let l = contrastive_loss(&mut t, m);
                (t.scalar(l), t.backward(l).for_store(&enc.store))
            };
            if !loss.is_finite() {
                return Err(TextEncoderError::Divergence { epoch });
            }
            opt.step(&mut enc.store, &grads);
            total += loss;
        }
        let mean = total / chunks.len() as f64;
        if !enc.store.all_finite() {
            return Err(TextEncoderError::Divergence { epoch });
        }
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    let retrieval_after = retrieval_at_1(&batch_similarity(enc, &toks[..probe], &probe_g, cfg.temperature)?);
    Ok(PretrainReport { losses, retrieval_before, retrieval_after })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn loss_of(m: Mat) -> f64 {
        let mut t = Tape::new();
        let v = t.variable(m);
        let l = contrastive_loss(&mut t, v);
        t.scalar(l)
    }

    #[test]
    fn contrastive_loss_reference_values() {
        assert_eq!(loss_of(array![[0.3]]), 0.0);
        assert!((loss_of(Array2::from_elem((2, 2), 0.4)) - std::f64::consts::LN_2).abs() < 1e-12);
        let sharp = loss_of(array![[10.0, -10.0], [-10.0, 10.0]]);
        assert!((sharp - (-20f64).exp().ln_1p()).abs() < 1e-15, "{sharp}");
    }

    #[test]
    fn similarity_checks() {
        let mut t = Tape::new();
        let g = t.constant(array![[1.0, 0.0], [0.0, 2.0]]);
        let x = t.constant(array![[0.0, 3.0], [1.0, 0.0]]);
        let m = similarity_matrix(&mut t, g, x, None).unwrap();
        assert_eq!(t.value(m), &array![[0.0, 1.0], [1.0, 0.0]]);
        let z = t.constant(array![[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            similarity_matrix(&mut t, g, z, None),
            Err(TextEncoderError::ZeroVector(ZeroVectorError { side: "text", row: 0 }))
        ));
    }

    #[test]
    fn tokenizer_and_truncation() {
        let enc = TextEncoder::new(TextEncoderConfig { max_len: 5, ..Default::default() }).unwrap();
        assert_eq!(words("This molecule, Nitro-group."), ["this", "molecule", ",", "nitro", "-", "group", "."]);
        assert!(matches!(enc.tokenize_strict("a b c d e"), Err(TextEncoderError::TokenLimit(_))));
        assert_eq!(enc.tokenize("a b c d e").unwrap().0.len(), 5);
        assert!(matches!(enc.tokenize(" "), Err(TextEncoderError::EmptyText)));
    }

    #[test]
    fn encoding_is_deterministic_and_sized() {
        let enc = TextEncoder::new(TextEncoderConfig::default()).unwrap();
        let a = enc.encode_text("This molecule contains nitro functional group.").unwrap();
        assert_eq!(a, enc.encode_text("This molecule contains nitro functional group.").unwrap());
        assert_eq!((a.0.len(), a.1.len()), (64, 32));
        assert_ne!(a.1, enc.encode_text("This molecule contains amine functional group.").unwrap().1);
    }

    #[test]
    fn checkpoint_round_trip_and_dimension_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.ck");
        let enc = TextEncoder::new(TextEncoderConfig { layers: 1, ..Default::default() }).unwrap();
        enc.save(&p).unwrap();
        let back = TextEncoder::load(&p, 32).unwrap();
        assert_eq!(back.store, enc.store);
        assert!(matches!(TextEncoder::load(&p, 16), Err(TextEncoderError::Shape(_))));
    }
}
