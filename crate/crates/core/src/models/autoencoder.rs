//! Counterfactual autoencoder: counterfactual text → Gaussian latent →
//! (latent ⊕ graph embedding) → dense probabilistic graph → discrete graph.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gtgnn::{GraphVars, GtGnn};
use super::text_encoder::{TextEncoder, TextEncoderConfig, TextEncoderError, Tokens};
use crate::chem::graph::{
    argmax, pair_at, pair_count, Edge, GraphError, MolecularGraph, PaddedGraph, Vocabulary, BOND_CLASSES, NO_BOND,
};
use crate::chem::molecule::BondOrder;
use crate::eval::distance::{dense_distance, DistanceWeights};
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, Adam, CheckpointError, Linear, Mat, Mlp, ParamStore, Tape, Var,
};

pub const CHECKPOINT_KIND: &str = "counterfactual-autoencoder";
/// Probabilities fed to the log in the prediction loss are kept in
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Weight of the distance loss.
    pub alpha: f64,
    /// Weight of the prediction loss.
    pub beta: f64,
    pub distance: DistanceWeights,
    /// Subtract the KL term instead of adding it.
    pub negate_kl: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub finetune_encoder: bool,
    pub seed: u64,
}

impl Default for CaConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: vec![256, 512],
            alpha: 1.0,
            beta: 1.0,
            distance: DistanceWeights::default(),
            negate_kl: false,
            learning_rate: 0.01,
            weight_decay: 0.01,
            batch_size: 32,
            finetune_encoder: true,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] TextEncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("loss log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("discretized counterfactual has no atoms")]
pub struct DegenerateGraphError;

/// Latent Gaussian for each row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Mat,
    pub sigma: Mat,
}

/// `z = μ + σ ⊙ ε` with standard normal `ε`.
pub fn sample_latent(dist: &LatentDistribution, rng: &mut impl rand::Rng) -> Mat {
    let eps = standard_normal(rng, dist.mu.dim());
    &dist.mu + &(&dist.sigma * &eps)
}

fn standard_normal(rng: &mut impl rand::Rng, dim: (usize, usize)) -> Mat {
    Array2::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))` per row, averaged over rows.
pub fn kl_value(dist: &LatentDistribution) -> f64 {
    let terms = dist.mu.mapv(|m| m * m) + dist.sigma.mapv(|s| s * s - 1.0 - 2.0 * s.ln());
    0.5 * terms.sum() / dist.mu.nrows().max(1) as f64
}

/// Weighted sum of the three components.
pub fn combine(alpha: f64, beta: f64, negate_kl: bool, dist: f64, pred: f64, kl: f64) -> f64 {
    let kl = if negate_kl { -kl } else { kl };
    alpha * dist + beta * pred + kl
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    #[serde(rename = "L_dist")]
    pub l_dist: f64,
    #[serde(rename = "L_pred")]
    pub l_pred: f64,
    #[serde(rename = "L_KL")]
    pub l_kl: f64,
    pub total: f64,
}

/// Which adjacency term the distance loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistMode {
    /// Binary cross-entropy on the adjacency.
    Train,
    /// The evaluation distance.
    Eval,
}

/// Dense decoder output for one graph; every entry lies in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCounterfactual {
    pub a: Mat,
    pub x: Mat,
    pub e: Mat,
}

impl DenseCounterfactual {
    /// Maps a one-hot padded graph to `{eps, 1 - eps}` probabilities.
    pub fn from_padded(g: &PaddedGraph, eps: f64) -> Self {
        let soft = |m: &Mat| m.mapv(|v| if v > 0.5 { 1.0 - eps } else { eps });
        Self { a: soft(&g.a), x: soft(&g.x), e: soft(&g.e) }
    }

    pub fn m_max(&self) -> usize {
        self.a.nrows()
    }
}

/// A discretized counterfactual: the position-preserving padded form and
/// the compacted molecular graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    pub padded: PaddedGraph,
    pub graph: MolecularGraph,
}

/// Thresholds the adjacency at 0.5 (strictly greater), takes row-wise
/// argmax of attributes (ties to the lowest index), deletes no-atom nodes
/// and no-bond edges, and drops edges touching deleted nodes.
pub fn discretize(dense: &DenseCounterfactual, vocab: &Vocabulary) -> Result<Discrete, DegenerateGraphError> {
    let m = dense.m_max();
    let no_atom = vocab.no_atom();
    let classes: Vec<usize> = dense.x.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    let keep: Vec<bool> = classes.iter().map(|&c| c != no_atom).collect();
    let p = pair_count(m);
    let mut a = Array2::zeros((m, m));
    let mut x = Array2::zeros((m, vocab.node_dim()));
    let mut e = Array2::zeros((p, BOND_CLASSES + 1));
    for (r, &c) in classes.iter().enumerate() {
        x[[r, c]] = 1.0;
    }
    let mut index = vec![usize::MAX; m];
    let mut atoms = Vec::new();
    for r in 0..m {
        if keep[r] {
            index[r] = atoms.len();
            atoms.push(vocab.atoms[classes[r]]);
        }
    }
    if atoms.is_empty() {
        return Err(DegenerateGraphError);
    }
    let mut edges = Vec::new();
    for k in 0..p {
        let (i, j) = pair_at(k, m);
        let bond = argmax(dense.e.row(k).iter().copied());
        let present = dense.a[[i, j]] > 0.5 && bond != NO_BOND && keep[i] && keep[j];
        if present {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
            e[[k, bond]] = 1.0;
            let order = BondOrder::from_index(bond).expect("bond class below NO_BOND");
            edges.push(Edge { i: index[i], j: index[j], order });
        } else {
            e[[k, NO_BOND]] = 1.0;
        }
    }
    let num_nodes = atoms.len();
    let graph = MolecularGraph::new(atoms, edges, 0);
    Ok(Discrete { padded: PaddedGraph { a, x, e, num_nodes, label: 0 }, graph })
}

/// Training example: the padded input graph, its classifier embedding and
/// the tokens of its current counterfactual text.
#[derive(Debug, Clone)]
pub struct CaItem {
    pub graph_id: u64,
    pub target: PaddedGraph,
    pub q: Vec<f64>,
    pub tokens: Tokens,
}

#[derive(Debug, Clone)]
pub struct CounterfactualAutoencoder {
    pub config: CaConfig,
    pub vocab: Vocabulary,
    pub m_max: usize,
    pub q_dim: usize,
    pub encoder: TextEncoder,
    pub store: ParamStore,
    mu: Linear,
    sigma: Linear,
    trunk: Mlp,
    head_a: Linear,
    head_x: Linear,
    head_e: Linear,
    transpose_perm: Vec<usize>,
    upper: Vec<usize>,
}

/// Tape handles of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct CaForward {
    pub mu: Var,
    pub sigma: Var,
    pub z: Var,
    /// `B×m²`, symmetric per row block.
    pub a_logits: Var,
    pub a_prob: Var,
    pub x_prob: Var,
    pub e_prob: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub dist: Var,
    pub pred: Var,
    pub kl: Var,
    pub total: Var,
}

#[derive(Serialize, Deserialize)]
struct SavedConfig {
    config: CaConfig,
    vocab: Vocabulary,
    m_max: usize,
    q_dim: usize,
    encoder: TextEncoderConfig,
    fingerprint: String,
}

fn fingerprint(cfg: &CaConfig, vocab: &Vocabulary, m_max: usize, q_dim: usize, enc: &TextEncoderConfig) -> String {
    use sha2::{Digest, Sha256};
    let arch = serde_json::json!({
        "latent": cfg.latent_dim, "hidden": cfg.hidden, "vocab": vocab, "m_max": m_max, "q_dim": q_dim,
        "encoder": enc.fingerprint(),
    });
    crate::llm::hex(&Sha256::digest(arch.to_string().as_bytes())[..8])
}

impl CounterfactualAutoencoder {
    pub fn new(
        config: CaConfig,
        encoder: TextEncoder,
        vocab: Vocabulary,
        m_max: usize,
        q_dim: usize,
    ) -> Result<Self, CaError> {
        if config.latent_dim == 0 || config.hidden.is_empty() || config.hidden.contains(&0) || m_max < 2 {
            return Err(CaError::Config("latent size, hidden widths and m_max must be positive (m_max ≥ 2)".into()));
        }
        if config.batch_size == 0 {
            return Err(CaError::Config("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let l = config.latent_dim;
        let enc_out = encoder.config.proj_dim;
        let mu = Linear::new(&mut store, &mut rng, "mu", enc_out, l);
        let sigma = Linear::new(&mut store, &mut rng, "sigma", enc_out, l);
        let mut dims = vec![l + q_dim];
        dims.extend(&config.hidden);
        let trunk = Mlp::new(&mut store, &mut rng, "trunk", &dims, Activation::Relu);
        let h = *config.hidden.last().unwrap();
        let head_a = Linear::new(&mut store, &mut rng, "head_a", h, m_max * m_max);
        let head_x = Linear::new(&mut store, &mut rng, "head_x", h, m_max * vocab.node_dim());
        let head_e = Linear::new(&mut store, &mut rng, "head_e", h, pair_count(m_max) * (BOND_CLASSES + 1));
        let mut ca = Self {
            config,
            vocab,
            m_max,
            q_dim,
            encoder,
            store,
            mu,
            sigma,
            trunk,
            head_a,
            head_x,
            head_e,
            transpose_perm: Vec::new(),
            upper: Vec::new(),
        };
        ca.index_tables();
        ca.encoder.store.frozen = !ca.config.finetune_encoder;
        Ok(ca)
    }

    fn index_tables(&mut self) {
        let m = self.m_max;
        self.transpose_perm = (0..m * m).map(|k| (k % m) * m + k / m).collect();
        self.upper = (0..pair_count(m)).map(|k| {
            let (i, j) = pair_at(k, m);
            i * m + j
        }).collect();
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.config, &self.vocab, self.m_max, self.q_dim, &self.encoder.config)
    }

    /// Builds a training item for `g` with counterfactual text `text`.
    pub fn item(&self, graph_id: u64, g: &MolecularGraph, gt: &GtGnn, text: &str) -> Result<CaItem, CaError> {
        let target = g.pad(&self.vocab, self.m_max)?;
        let q = gt.embedding(g)?;
        if q.len() != self.q_dim {
            return Err(CaError::Shape(format!("graph embedding has {} entries, expected {}", q.len(), self.q_dim)));
        }
        Ok(CaItem { graph_id, target, q, tokens: self.encoder.tokenize(text)? })
    }

    /// Replaces the text of an item.
    pub fn retext(&self, item: &mut CaItem, text: &str) -> Result<(), CaError> {
        item.tokens = self.encoder.tokenize(text)?;
        Ok(())
    }

    /// Latent Gaussian of a batch on the tape.
    pub fn encode<'s>(&'s self, t: &mut Tape<'s>, tokens: &[Tokens]) -> (Var, Var) {
        let enc = self.encoder.forward(t, tokens);
        let mu = self.mu.forward(t, &self.store, enc.projected);
        let raw = self.sigma.forward(t, &self.store, enc.projected);
        let sp = t.softplus(raw);
        let sigma = t.add_scalar(sp, SIGMA_FLOOR);
        (mu, sigma)
    }

    /// Inference-mode latent distribution of one text.
    pub fn encode_ctp(&self, tokens: &Tokens) -> LatentDistribution {
        let mut t = Tape::new();
        let (mu, sigma) = self.encode(&mut t, std::slice::from_ref(tokens));
        LatentDistribution { mu: t.value(mu).clone(), sigma: t.value(sigma).clone() }
    }

    /// Decodes `B×(l+q)` combined embeddings.
    pub fn decode<'s>(&'s self, t: &mut Tape<'s>, e: Var) -> (Var, Var, Var, Var) {
        let h = self.trunk.forward(t, &self.store, e);
        let h = t.relu(h);
        let la = self.head_a.forward(t, &self.store, h);
        let lt = t.permute_cols(la, &self.transpose_perm);
        let sum = t.add(la, lt);
        let a_logits = t.scale(sum, 0.5);
        let a_prob = t.sigmoid(a_logits);
        let lx = self.head_x.forward(t, &self.store, h);
        let x_prob = t.sigmoid(lx);
        let le = self.head_e.forward(t, &self.store, h);
        let e_prob = t.sigmoid(le);
        (a_logits, a_prob, x_prob, e_prob)
    }

    /// Full forward pass. `eps` is the `B×l` noise; `None` decodes the mean.
    pub fn forward<'s>(&'s self, t: &mut Tape<'s>, tokens: &[Tokens], q: &Mat, eps: Option<&Mat>) -> CaForward {
        let (mu, sigma) = self.encode(t, tokens);
        let z = match eps {
            Some(eps) => {
                let eps = t.constant(eps.clone());
                let noise = t.mul(sigma, eps);
                t.add(mu, noise)
            }
            None => mu,
        };
        let qv = t.constant(q.clone());
        let e = t.concat_cols(&[z, qv]);
        let (a_logits, a_prob, x_prob, e_prob) = self.decode(t, e);
        CaForward { mu, sigma, z, a_logits, a_prob, x_prob, e_prob }
    }

    fn dense_row(&self, t: &Tape<'_>, f: &CaForward, b: usize) -> DenseCounterfactual {
        let m = self.m_max;
        let row = |v: Var, r: usize, c: usize| {
            t.value(v).row(b).to_owned().into_shape_with_order((r, c)).expect("row reshapes")
        };
        DenseCounterfactual {
            a: row(f.a_prob, m, m),
            x: row(f.x_prob, m, self.vocab.node_dim()),
            e: row(f.e_prob, pair_count(m), BOND_CLASSES + 1),
        }
    }

    /// Decodes the latent mean for one item.
    pub fn generate(&self, tokens: &Tokens, q: &[f64]) -> DenseCounterfactual {
        let mut t = Tape::new();
        let q = Array2::from_shape_vec((1, q.len()), q.to_vec()).expect("row vector");
        let f = self.forward(&mut t, std::slice::from_ref(tokens), &q, None);
        self.dense_row(&t, &f, 0)
    }

    fn batch_q(&self, items: &[&CaItem]) -> Mat {
        let mut q = Array2::zeros((items.len(), self.q_dim));
        for (b, it) in items.iter().enumerate() {
            q.row_mut(b).assign(&ndarray::ArrayView1::from(&it.q[..]));
        }
        q
    }

    /// Builds the training objective for a batch on the tape.
    pub fn loss_vars<'s>(
        &'s self,
        t: &mut Tape<'s>,
        gt: &'s GtGnn,
        items: &[&CaItem],
        f: &CaForward,
    ) -> LossVars {
        let bsz = items.len();
        let m = self.m_max;
        let p = pair_count(m);
        let w = self.config.distance;

        // adjacency: BCE with logits over the strict upper triangle
        let mut y = Array2::zeros((bsz, p));
        let (xn, en) = (m * self.vocab.node_dim(), p * (BOND_CLASSES + 1));
        let mut xt = Array2::zeros((bsz, xn));
        let mut et = Array2::zeros((bsz, en));
        for (b, it) in items.iter().enumerate() {
            for k in 0..p {
                let (i, j) = pair_at(k, m);
                y[[b, k]] = it.target.a[[i, j]];
            }
            xt.row_mut(b).assign(&it.target.x.view().into_shape_with_order(xn).unwrap());
            et.row_mut(b).assign(&it.target.e.view().into_shape_with_order(en).unwrap());
        }
        let u = t.permute_cols(f.a_logits, &self.upper);
        let sp = t.softplus(u);
        let yv = t.constant(y);
        let yu = t.mul(yv, u);
        let bce = t.sub(sp, yu);
        let a_term = t.mean(bce);

        let xt = t.constant(xt);
        let dx = t.sub(f.x_prob, xt);
        let et = t.constant(et);
        let de = t.sub(f.e_prob, et);
        let mut attr = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let rx = t.slice_rows(dx, b, 1);
            let nx = t.norm(rx);
            let re = t.slice_rows(de, b, 1);
            let ne = t.norm(re);
            let nx = t.scale(nx, w.lambda_x);
            let ne = t.scale(ne, w.lambda_e);
            attr.push(t.add(nx, ne));
        }
        let attr = t.concat_rows(&attr);
        let attr = t.mean(attr);
        let a_term = t.scale(a_term, w.lambda_a);
        let dist = t.add(a_term, attr);

        // prediction on the relaxed graph
        let off = t.constant(Array2::from_shape_fn((m, m), |(i, j)| f64::from(u8::from(i != j))));
        let mut preds = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let ar = t.slice_rows(f.a_prob, b, 1);
            let a = t.reshape(ar, m, m);
            let a = t.mul(a, off);
            let xr = t.slice_rows(f.x_prob, b, 1);
            let x = t.reshape(xr, m, self.vocab.node_dim());
            let er = t.slice_rows(f.e_prob, b, 1);
            let e = t.reshape(er, p, BOND_CLASSES + 1);
            let out = gt.forward(t, GraphVars { a, x, e });
            let p1 = t.slice_cols(out.probs, 1, 1);
            let p1 = t.clamp(p1, PROB_CLAMP, 1.0 - PROB_CLAMP);
            let lp = t.ln(p1);
            preds.push(t.neg(lp));
        }
        let pred = t.concat_rows(&preds);
        let pred = t.mean(pred);

        // KL against the standard normal, summed over latent dims
        let mu2 = t.square(f.mu);
        let s2 = t.square(f.sigma);
        let ls = t.ln(f.sigma);
        let ls2 = t.scale(ls, 2.0);
        let a1 = t.add(mu2, s2);
        let a2 = t.sub(a1, ls2);
        let a3 = t.add_scalar(a2, -1.0);
        let kl_sum = t.sum(a3);
        let kl = t.scale(kl_sum, 0.5 / bsz as f64);

        let ad = t.scale(dist, self.config.alpha);
        let bp = t.scale(pred, self.config.beta);
        let ab = t.add(ad, bp);
        let total = if self.config.negate_kl { t.sub(ab, kl) } else { t.add(ab, kl) };
        LossVars { dist, pred, kl, total }
    }

    /// Loss components on a batch without updating anything. With
    /// [`DistMode::Eval`] the distance term is the evaluation distance
    /// between the input and the dense output.
    pub fn components(&self, gt: &GtGnn, items: &[&CaItem], eps: Option<&Mat>, mode: DistMode) -> LossRecord {
        let toks: Vec<Tokens> = items.iter().map(|i| i.tokens.clone()).collect();
        let q = self.batch_q(items);
        let mut t = Tape::new();
        let f = self.forward(&mut t, &toks, &q, eps);
        let lv = self.loss_vars(&mut t, gt, items, &f);
        let mut dist = t.scalar(lv.dist);
        if mode == DistMode::Eval {
            dist = items
                .iter()
                .enumerate()
                .map(|(b, it)| {
                    let d = self.dense_row(&t, &f, b);
                    dense_distance((&it.target.a, &it.target.x, &it.target.e), (&d.a, &d.x, &d.e), self.config.distance)
                        .expect("shapes agree")
                })
                .sum::<f64>()
                / items.len().max(1) as f64;
        }
        let (pred, kl) = (t.scalar(lv.pred), t.scalar(lv.kl));
        LossRecord {
            epoch: 0,
            l_dist: dist,
            l_pred: pred,
            l_kl: kl,
            total: combine(self.config.alpha, self.config.beta, self.config.negate_kl, dist, pred, kl),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CaError> {
        let cfg = SavedConfig {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            m_max: self.m_max,
            q_dim: self.q_dim,
            encoder: self.encoder.config.clone(),
            fingerprint: self.fingerprint(),
        };
        let cfg = serde_json::to_value(cfg).map_err(|e| CheckpointError::Format(e.to_string()))?;
        save_checkpoint(path, CHECKPOINT_KIND, cfg, &[("encoder", &self.encoder.store), ("ca", &self.store)])?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CaError> {
        let mut ck = load_checkpoint(path, CHECKPOINT_KIND)?;
        let saved: SavedConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let expected = fingerprint(&saved.config, &saved.vocab, saved.m_max, saved.q_dim, &saved.encoder);
        if expected != saved.fingerprint {
            return Err(CheckpointError::Fingerprint { expected, found: saved.fingerprint }.into());
        }
        let encoder = TextEncoder::new(saved.encoder.clone())?;
        let mut ca = Self::new(saved.config, encoder, saved.vocab, saved.m_max, saved.q_dim)?;
        let enc = ck.take_store("encoder").ok_or_else(|| CheckpointError::Format("missing encoder store".into()))?;
        let own = ck.take_store("ca").ok_or_else(|| CheckpointError::Format("missing autoencoder store".into()))?;
        if ca.encoder.store.load_matching(&enc) != ca.encoder.store.len() || ca.store.load_matching(&own) != ca.store.len() {
            return Err(CheckpointError::Format("parameter shapes do not match the configuration".into()).into());
        }
        Ok(ca)
    }
}

/// Optimizer state and noise source for training.
pub struct CaTrainer {
    gt: GtGnn,
    opt_enc: Adam,
    opt_ca: Adam,
    rng: ChaCha8Rng,
    pub epoch: usize,
}

impl CaTrainer {
    /// The classifier is copied and frozen.
    pub fn new(ca: &CounterfactualAutoencoder, gt: &GtGnn) -> Self {
        let mut gt = gt.clone();
        gt.store.frozen = true;
        let c = &ca.config;
        Self {
            gt,
            opt_enc: Adam::with_decay(&ca.encoder.store, c.learning_rate, c.weight_decay),
            opt_ca: Adam::with_decay(&ca.store, c.learning_rate, c.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(c.seed ^ 0x5eed),
            epoch: 0,
        }
    }

    /// One pass over `items` in shuffled minibatches. Returns the mean
    /// components over batches.
    pub fn epoch(&mut self, ca: &mut CounterfactualAutoencoder, items: &[CaItem]) -> Result<LossRecord, CaError> {
        let mut owned = items.to_vec();
        self.epoch_with(ca, &mut owned, 0, |_, _, _| {})
    }

    /// Like [`epoch`](Self::epoch), but the shuffled batch list is cut into
    /// `segments` contiguous runs and `between(k, ca, items)` is called after
    /// run `k`. With `segments == 0` no callback happens and the result is
    /// identical to `epoch`.
    pub fn epoch_with(
        &mut self,
        ca: &mut CounterfactualAutoencoder,
        items: &mut [CaItem],
        segments: usize,
        mut between: impl FnMut(usize, &CounterfactualAutoencoder, &mut [CaItem]),
    ) -> Result<LossRecord, CaError> {
        if items.is_empty() {
            return Err(CaError::Config("no training items".into()));
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut self.rng);
        let chunks: Vec<&[usize]> = order.chunks(ca.config.batch_size).collect();
        let bounds = segment_bounds(chunks.len(), segments);
        let mut sums = [0.0; 4];
        let mut batches = 0;
        for (bi, chunk) in chunks.iter().enumerate() {
            let batch: Vec<&CaItem> = chunk.iter().map(|&i| &items[i]).collect();
            let toks: Vec<Tokens> = batch.iter().map(|i| i.tokens.clone()).collect();
            let q = ca.batch_q(&batch);
            let eps = standard_normal(&mut self.rng, (batch.len(), ca.config.latent_dim));
            let (vals, g_enc, g_ca) = {
                let mut t = Tape::new();
                let f = ca.forward(&mut t, &toks, &q, Some(&eps));
                let lv = ca.loss_vars(&mut t, &self.gt, &batch, &f);
                let vals = [t.scalar(lv.dist), t.scalar(lv.pred), t.scalar(lv.kl), t.scalar(lv.total)];
                let grads = t.backward(lv.total);
                (vals, grads.for_store(&ca.encoder.store), grads.for_store(&ca.store))
            };
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(CaError::Divergence { epoch: self.epoch });
            }
            if !ca.encoder.store.frozen {
                self.opt_enc.step(&mut ca.encoder.store, &g_enc);
            }
            self.opt_ca.step(&mut ca.store, &g_ca);
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
            batches += 1;
            for (k, _) in bounds.iter().enumerate().filter(|(_, &end)| end == bi + 1) {
                between(k, ca, items);
            }
        }
        let n = batches as f64;
        let rec = LossRecord { epoch: self.epoch, l_dist: sums[0] / n, l_pred: sums[1] / n, l_kl: sums[2] / n, total: sums[3] / n };
        self.epoch += 1;
        Ok(rec)
    }
}

/// End (exclusive batch index) of each of `segments` near-equal runs over
/// `batches` batches. With more segments than batches, several end together.
pub fn segment_bounds(batches: usize, segments: usize) -> Vec<usize> {
    (1..=segments).map(|k| (k * batches).div_ceil(segments)).collect()
}

/// Appends one JSON line per record.
pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<(), CaError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::OpenOptions::new().create(true).append(true).open(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).expect("record serializes");
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Trains for `epochs` epochs without feedback.
pub fn train_ca(
    ca: &mut CounterfactualAutoencoder,
    gt: &GtGnn,
    items: &[CaItem],
    epochs: usize,
    mut on_epoch: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>, CaError> {
    let mut tr = CaTrainer::new(ca, gt);
    let mut out = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let rec = tr.epoch(ca, items)?;
        on_epoch(&rec);
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kl_closed_form_cases() {
        let d = LatentDistribution { mu: Array2::zeros((1, 4)), sigma: Array2::ones((1, 4)) };
        assert_eq!(kl_value(&d), 0.0);
        let d = LatentDistribution { mu: array![[1.0, 0.0, 0.0]], sigma: Array2::ones((1, 3)) };
        assert!((kl_value(&d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn combine_signs() {
        assert!((combine(1.0, 1.0, false, 2.0, 0.5, 0.1) - 2.6).abs() < 1e-12);
        assert!((combine(1.0, 1.0, true, 2.0, 0.5, 0.1) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn segments_cover_all_batches() {
        assert_eq!(segment_bounds(4, 2), [2, 4]);
        assert_eq!(segment_bounds(5, 3), [2, 4, 5]);
        assert_eq!(segment_bounds(1, 3), [1, 1, 1]);
        assert!(segment_bounds(7, 0).is_empty());
    }

    #[test]
    fn sampling_with_zero_sigma_is_the_mean() {
        let d = LatentDistribution { mu: array![[0.3, -1.0]], sigma: Array2::zeros((1, 2)) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_latent(&d, &mut rng), d.mu);
    }
}
