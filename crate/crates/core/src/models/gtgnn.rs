//! Ground-truth graph classifier: two graph convolutions over an adjacency
//! weighted by learned per-bond-type scalars, global max pooling and a
//! two-way softmax head.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::graph::{GraphError, MolecularGraph, PaddedGraph, Vocabulary, BOND_CLASSES};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, CheckpointError, Linear, Mat, ParamId, ParamStore, Tape, Var};

pub const CHECKPOINT_KIND: &str = "gtgnn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtGnnConfig {
    pub node_embed_dim: usize,
    pub edge_embed_dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GtGnnConfig {
    fn default() -> Self {
        Self { node_embed_dim: 32, edge_embed_dim: 1, layers: 2, learning_rate: 1e-3, epochs: 500, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GtGnnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
}

/// Dense inputs bound on a tape: adjacency `m×m`, node attributes
/// `m×(d+1)` and upper-triangle edge attributes `m(m-1)/2 × (s+1)`.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub a: Var,
    pub x: Var,
    pub e: Var,
}

impl GraphVars {
    pub fn constant<'s>(t: &mut Tape<'s>, g: &'s PaddedGraph) -> Self {
        Self { a: t.constant_ref(&g.a), x: t.constant_ref(&g.x), e: t.constant_ref(&g.e) }
    }
}

/// Tape outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    pub log_probs: Var,
    /// Pooled graph embedding `1×node_embed_dim`.
    pub q: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub prob_desired: f64,
}

/// Class decision with ties going to class 0.
pub fn decide(p0: f64, p1: f64) -> Prediction {
    Prediction { label: u8::from(p1 > p0), prob_desired: p1 }
}

/// `Â = A ⊙ E` elementwise.
pub fn enhanced_adjacency(a: &Mat, edge_embed: &Mat) -> Result<Mat, GtGnnError> {
    if a.dim() != edge_embed.dim() {
        return Err(GtGnnError::Shape(format!("A {:?} vs E {:?}", a.dim(), edge_embed.dim())));
    }
    Ok(a * edge_embed)
}

#[derive(Debug, Clone)]
pub struct GtGnn {
    pub config: GtGnnConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    edge_weight: ParamId,
    convs: Vec<Linear>,
    head: Linear,
}

#[derive(Serialize, Deserialize)]
struct SavedConfig {
    config: GtGnnConfig,
    vocab: Vocabulary,
}

impl GtGnn {
    pub fn new(config: GtGnnConfig, vocab: Vocabulary) -> Result<Self, GtGnnError> {
        if config.node_embed_dim == 0 || config.layers == 0 || config.epochs == 0 || config.batch_size == 0 {
            return Err(GtGnnError::Config("dimensions, layers, epochs and batch size must be positive".into()));
        }
        if config.edge_embed_dim != 1 {
            return Err(GtGnnError::Config("only scalar edge embeddings (d = 1) are supported".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut w = Array2::ones((BOND_CLASSES + 1, 1));
        w[[BOND_CLASSES, 0]] = 0.0;
        let edge_weight = store.add("edge_weight", w);
        let h = config.node_embed_dim;
        let mut convs = Vec::new();
        for k in 0..config.layers {
            let inp = if k == 0 { vocab.node_dim() } else { h };
            convs.push(Linear::new(&mut store, &mut rng, &format!("conv{k}"), inp, h));
        }
        let head = Linear::new(&mut store, &mut rng, "head", h, 2);
        Ok(Self { config, vocab, store, edge_weight, convs, head })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.node_embed_dim
    }

    /// Builds the forward pass on `t`. Inputs may be soft; row `r` counts as
    /// an atom with weight `1 - x[r, no_atom]`.
    pub fn forward<'s>(&'s self, t: &mut Tape<'s>, g: GraphVars) -> Forward {
        let m = t.value(g.a).nrows();
        let w = t.param(&self.store, self.edge_weight);
        let e_scalar = t.matmul(g.e, w);
        let e_mat = t.pairs_to_sym(e_scalar);
        let a_hat = t.mul(g.a, e_mat);
        let eye = t.constant(Array2::eye(m));
        let prop = t.add(a_hat, eye);

        let no_atom = self.vocab.no_atom();
        let absent = t.slice_cols(g.x, no_atom, 1);
        let neg = t.neg(absent);
        let mask = t.add_scalar(neg, 1.0);

        let mut h = g.x;
        for conv in &self.convs {
            let w = t.param(&self.store, conv.w);
            let b = t.param(&self.store, conv.b);
            let hw = t.matmul(h, w);
            let agg = t.matmul(prop, hw);
            let pre = t.add(agg, b);
            h = t.relu(pre);
        }
        // post-ReLU activations are non-negative, so zeroed rows never win
        let masked = t.mul(h, mask);
        let q = t.max_rows(masked);
        let logits = self.head.forward(t, &self.store, q);
        let probs = t.softmax(logits);
        let log_probs = t.log_softmax(logits);
        Forward { logits, probs, log_probs, q }
    }

    pub fn tensors(&self, g: &MolecularGraph) -> Result<PaddedGraph, GraphError> {
        g.pad(&self.vocab, g.num_nodes())
    }

    /// `(P(class 0), P(class 1))` and the pooled embedding.
    pub fn infer_dense(&self, g: &PaddedGraph) -> ([f64; 2], Vec<f64>) {
        let mut t = Tape::new();
        let vars = GraphVars::constant(&mut t, g);
        let f = self.forward(&mut t, vars);
        let p = t.value(f.probs);
        ([p[[0, 0]], p[[0, 1]]], t.value(f.q).iter().copied().collect())
    }

    pub fn predict(&self, g: &MolecularGraph) -> Result<Prediction, GraphError> {
        let ([p0, p1], _) = self.infer_dense(&self.tensors(g)?);
        Ok(decide(p0, p1))
    }

    pub fn embedding(&self, g: &MolecularGraph) -> Result<Vec<f64>, GraphError> {
        Ok(self.infer_dense(&self.tensors(g)?).1)
    }

    /// Mean cross-entropy and accuracy over `graphs`.
    pub fn evaluate(&self, graphs: &[PaddedGraph]) -> (f64, f64) {
        if graphs.is_empty() {
            return (0.0, 0.0);
        }
        let mut loss = 0.0;
        let mut correct = 0;
        for g in graphs {
            let ([p0, p1], _) = self.infer_dense(g);
            let p = if g.label == 1 { p1 } else { p0 };
            loss -= p.max(1e-300).ln();
            if decide(p0, p1).label == g.label {
                correct += 1;
            }
        }
        (loss / graphs.len() as f64, correct as f64 / graphs.len() as f64)
    }

    /// Cross-entropy of a batch on a fresh tape; returns the loss and the
    /// gradients for this model's parameters.
    pub fn batch_gradients(&self, batch: &[&PaddedGraph]) -> (f64, Vec<Option<Mat>>) {
        let mut t = Tape::new();
        let mut terms = Vec::with_capacity(batch.len());
        for g in batch {
            let vars = GraphVars::constant(&mut t, g);
            let f = self.forward(&mut t, vars);
            let lp = t.slice_cols(f.log_probs, usize::from(g.label), 1);
            terms.push(lp);
        }
        let all = t.concat_rows(&terms);
        let mean = t.mean(all);
        let loss = t.neg(mean);
        let value = t.scalar(loss);
        (value, t.backward(loss).for_store(&self.store))
    }

    pub fn save(&self, path: &Path) -> Result<(), GtGnnError> {
        let cfg = serde_json::to_value(SavedConfig { config: self.config.clone(), vocab: self.vocab.clone() })
            .expect("config serializes");
        save_checkpoint(path, CHECKPOINT_KIND, cfg, &[("params", &self.store)])?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GtGnnError> {
        let mut ck = load_checkpoint(path, CHECKPOINT_KIND)?;
        let saved: SavedConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut model = Self::new(saved.config, saved.vocab)?;
        let params = ck.take_store("params").ok_or_else(|| CheckpointError::Format("missing params".into()))?;
        if params.len() != model.store.len() || model.store.load_matching(&params) != params.len() {
            return Err(CheckpointError::Format("parameter layout differs from configuration".into()).into());
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub seconds: f64,
    pub history: Vec<EpochLog>,
}

/// Trains for the configured number of epochs and keeps the parameters with
/// the best validation accuracy (lower validation loss breaks ties). With an
/// empty validation split the training accuracy is used instead.
pub fn train_gtgnn(
    train: &[MolecularGraph],
    val: &[MolecularGraph],
    test: &[MolecularGraph],
    vocab: Vocabulary,
    config: GtGnnConfig,
) -> Result<(GtGnn, AccuracyReport), GtGnnError> {
    train_gtgnn_with(train, val, test, vocab, config, |_| {})
}

pub fn train_gtgnn_with(
    train: &[MolecularGraph],
    val: &[MolecularGraph],
    test: &[MolecularGraph],
    vocab: Vocabulary,
    config: GtGnnConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(GtGnn, AccuracyReport), GtGnnError> {
    if train.is_empty() {
        return Err(GtGnnError::EmptyTrainingSet);
    }
    let start = std::time::Instant::now();
    let mut model = GtGnn::new(config.clone(), vocab)?;
    let to_tensors = |gs: &[MolecularGraph], model: &GtGnn| -> Result<Vec<PaddedGraph>, GraphError> {
        gs.iter().map(|g| model.tensors(g)).collect()
    };
    let (tr, va, te) = (to_tensors(train, &model)?, to_tensors(val, &model)?, to_tensors(test, &model)?);
    let selection = if va.is_empty() { &tr } else { &va };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut opt = Adam::new(&model.store, config.learning_rate);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, model.store.clone());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PaddedGraph> = chunk.iter().map(|&i| &tr[i]).collect();
            let (loss, grads) = model.batch_gradients(&batch);
            if !loss.is_finite() {
                return Err(GtGnnError::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            opt.step(&mut model.store, &grads);
        }
        if !model.store.all_finite() {
            return Err(GtGnnError::Divergence { epoch });
        }
        let (val_loss, val_acc) = model.evaluate(selection);
        let log = EpochLog { epoch, train_loss: total / tr.len() as f64, val_loss, val_acc };
        on_epoch(&log);
        if val_acc > best.0 || (val_acc == best.0 && val_loss < best.1) {
            best = (val_acc, val_loss, epoch, model.store.clone());
        }
        history.push(log);
    }

    let (_, _, best_epoch, params) = best;
    model.store.load_matching(&params);
    let report = AccuracyReport {
        train_acc: model.evaluate(&tr).1,
        val_acc: model.evaluate(&va).1,
        test_acc: model.evaluate(&te).1,
        best_epoch,
        epochs: config.epochs,
        seconds: start.elapsed().as_secs_f64(),
        history,
    };
    Ok((model, report))
}
