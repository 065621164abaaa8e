//! The full network assembled from a knowledge base: gene embedding, per-level
//! propagation, batch normalization, masked maps between levels and an MLP head.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::layers::{
    edge_intensity, embed_genes, enhanced_adjacency, enhanced_propagate, gat_propagate, hypergraph_operator,
    hypergraph_propagate, masked_dense, Attention, EdgeScorer, Embedding, UpdateMode,
};
use crate::numerics::{
    batch_norm, evaluate, Activation, BatchStats, BnMode, Graph, Matrix, NodeId, ParamStore, RunningStats, BN_EPS,
};
use crate::rng::BfRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Basic,
    Enhanced,
    /// Knowledge-free baseline: embedding, batch norm and head only.
    Perceptron,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "enhanced" => Ok(Variant::Enhanced),
            "perceptron" => Ok(Variant::Perceptron),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_d() -> usize {
    4
}

fn default_hops() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_hops")]
    pub hops: usize,
    /// Damping of unknown pairs, one value per included level.
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub update_mode: UpdateMode,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    /// Head output width; tasks fill this in.
    #[serde(default)]
    pub head_output: usize,
    /// Included levels, a prefix of the knowledge base's level order. Empty
    /// means every level.
    #[serde(default)]
    pub levels: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Basic,
            d: default_d(),
            hops: default_hops(),
            alpha: Vec::new(),
            update_mode: UpdateMode::Sum,
            activation: default_activation(),
            head_hidden: Vec::new(),
            head_output: 1,
            levels: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Level indices this config uses.
    pub fn resolve_levels(&self, kb: &KnowledgeBase) -> Result<Vec<usize>> {
        if self.variant == Variant::Perceptron {
            return Ok(vec![0]);
        }
        if self.levels.is_empty() {
            return Ok((0..kb.levels().len()).collect());
        }
        let mut out = Vec::with_capacity(self.levels.len());
        for (pos, name) in self.levels.iter().enumerate() {
            let idx = kb.level_index(name)?;
            if idx != pos {
                return Err(Error::Config(format!(
                    "included levels must be a prefix of the knowledge base order; `{name}` is level {idx}, listed at {pos}"
                )));
            }
            out.push(idx);
        }
        Ok(out)
    }

    pub fn validate(&self, kb: &KnowledgeBase) -> Result<Vec<usize>> {
        if self.d == 0 {
            return Err(Error::Config("embedding size d must be at least 1".into()));
        }
        if self.hops == 0 {
            return Err(Error::Config("hops must be at least 1".into()));
        }
        if self.head_output == 0 {
            return Err(Error::Config("head output size must be at least 1".into()));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("head hidden sizes must be positive".into()));
        }
        let levels = self.resolve_levels(kb)?;
        if self.variant == Variant::Enhanced {
            if self.alpha.len() != levels.len() {
                return Err(Error::Config(format!(
                    "enhanced model needs one alpha per included level ({}), got {}",
                    levels.len(),
                    self.alpha.len()
                )));
            }
            if let Some(a) = self.alpha.iter().find(|a| !(0.0..1.0).contains(*a)) {
                return Err(Error::Config(format!("alpha must lie in [0, 1), got {a}")));
            }
        }
        Ok(levels)
    }
}

/// What one level does during the forward pass.
#[derive(Clone, Debug)]
struct LevelPlan {
    index: usize,
    /// Intra-level propagation along the level's adjacency.
    intra: bool,
    /// Hypergraph operator applied after intra hops (pathway members).
    hyper: Option<Matrix>,
    /// Mask to the next included level.
    next_mask: Option<Matrix>,
    nodes: usize,
}

/// Batch output of the trunk. Indices are `[level][sample]`.
pub struct Trunk {
    pub levels: Vec<Vec<NodeId>>,
    /// Edge intensities per `[level][hop][sample]`; empty for the basic model.
    pub omegas: Vec<Vec<Vec<NodeId>>>,
    pub stats: Vec<Option<BatchStats>>,
}

impl Trunk {
    pub fn last(&self) -> &[NodeId] {
        self.levels.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[derive(Clone, Debug)]
pub struct BfregModel {
    config: ModelConfig,
    kb: Arc<KnowledgeBase>,
    params: ParamStore,
    running: Vec<RunningStats>,
    plan: Vec<LevelPlan>,
}

pub const HEAD_PREFIX: &str = "head.";

fn level_prefix(l: usize) -> String {
    format!("l{l}")
}

impl BfregModel {
    pub fn new(config: ModelConfig, kb: Arc<KnowledgeBase>, rng: &mut BfRng) -> Result<Self> {
        let plan = build_plan(&config, &kb)?;
        let mut params = ParamStore::new();
        let d = config.d;
        Embedding::init(&mut params, "emb", d, rng)?;
        let mut running = Vec::with_capacity(plan.len());
        for p in &plan {
            let pre = level_prefix(p.index);
            if p.intra {
                match config.variant {
                    Variant::Basic => {
                        for k in 0..config.hops {
                            Attention::init(&mut params, &format!("{pre}.hop{k}"), d, config.update_mode, rng)?;
                        }
                    }
                    Variant::Enhanced => {
                        EdgeScorer::init(&mut params, &format!("{pre}.scorer"), d, rng)?;
                        for k in 0..config.hops {
                            params.insert_uniform(format!("{pre}.hop{k}.w"), d, d, d, rng)?;
                        }
                    }
                    Variant::Perceptron => {}
                }
            }
            if p.hyper.is_some() {
                for k in 0..config.hops {
                    params.insert_uniform(format!("{pre}.hyper{k}.w"), d, d, d, rng)?;
                }
            }
            let feats = p.nodes * d;
            params.insert(format!("{pre}.bn.gamma"), Matrix::filled(1, feats, 1.0), true)?;
            params.insert(format!("{pre}.bn.beta"), Matrix::zeros(1, feats), true)?;
            running.push(RunningStats::new(feats));
            if let Some(mask) = &p.next_mask {
                let fan_in = (0..mask.rows())
                    .map(|r| mask.row(r).iter().filter(|v| **v != 0.0).count())
                    .max()
                    .unwrap_or(1);
                params.insert_uniform(format!("{pre}.dense.w"), mask.rows(), mask.cols(), fan_in, rng)?;
                params.insert_uniform(format!("{pre}.dense.b"), mask.rows(), 1, fan_in, rng)?;
            }
        }
        let mut model = Self {
            config,
            kb,
            params,
            running,
            plan,
        };
        model.init_head(rng)?;
        Ok(model)
    }

    fn trunk_width(&self) -> usize {
        self.plan.last().map(|p| p.nodes).unwrap_or(0) * self.config.d
    }

    fn init_head(&mut self, rng: &mut BfRng) -> Result<()> {
        let mut width = self.trunk_width();
        let sizes: Vec<usize> = self
            .config
            .head_hidden
            .iter()
            .copied()
            .chain(std::iter::once(self.config.head_output))
            .collect();
        for (i, out) in sizes.into_iter().enumerate() {
            self.params.insert_uniform(format!("{HEAD_PREFIX}{i}.w"), width, out, width, rng)?;
            self.params.insert_uniform(format!("{HEAD_PREFIX}{i}.b"), 1, out, width, rng)?;
            width = out;
        }
        Ok(())
    }

    /// Discards the current head and initializes a fresh one.
    pub fn replace_head(&mut self, hidden: Vec<usize>, output: usize, rng: &mut BfRng) -> Result<()> {
        if output == 0 || hidden.contains(&0) {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        self.params.remove_prefix(HEAD_PREFIX);
        self.config.head_hidden = hidden;
        self.config.head_output = output;
        self.init_head(rng)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn kb_arc(&self) -> Arc<KnowledgeBase> {
        Arc::clone(&self.kb)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn gene_count(&self) -> usize {
        self.kb.gene_count()
    }

    /// Level indices in forward order.
    pub fn included_levels(&self) -> Vec<usize> {
        self.plan.iter().map(|p| p.index).collect()
    }

    /// Position of knowledge-base level `level` in the trunk output, if included.
    pub fn level_slot(&self, level: usize) -> Option<usize> {
        self.plan.iter().position(|p| p.index == level)
    }

    /// Whether level `level` learns edge intensities.
    pub fn scores_edges(&self, level: usize) -> bool {
        self.config.variant == Variant::Enhanced && self.plan.iter().any(|p| p.index == level && p.intra)
    }

    /// Hash of every non-head parameter.
    pub fn trunk_hash(&self) -> String {
        self.params.hash_where(|n| !n.starts_with(HEAD_PREFIX))
    }

    /// True when only head parameters are trainable; the trunk then runs with
    /// its running batch-norm statistics.
    pub fn trunk_frozen(&self) -> bool {
        self.params.trainable_names().all(|n| n.starts_with(HEAD_PREFIX))
    }

    /// Marks every parameter outside the head as frozen.
    pub fn freeze_trunk(&mut self) {
        self.params.freeze_all_except(HEAD_PREFIX);
    }

    /// Folds batch statistics from a training forward pass into the running
    /// estimates used in eval mode.
    pub fn update_running(&mut self, stats: &[Option<BatchStats>]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            if let Some(s) = s {
                r.update(s);
            }
        }
    }

    /// Runs embedding and all included levels for a batch of n×1 expression
    /// columns. Train-mode batch norm needs at least two samples.
    pub fn trunk(&self, g: &mut Graph<'_>, xs: &[NodeId], mode: BnMode) -> Result<Trunk> {
        let n = self.kb.gene_count();
        if xs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for x in xs {
            if g.shape(*x) != (n, 1) {
                return Err(Error::Shape(format!("expected {n}×1 expression, got {:?}", g.shape(*x))));
            }
        }
        let cfg = &self.config;
        let d = cfg.d;
        let emb = Embedding::bind(g, "emb")?;
        let mut hs: Vec<NodeId> = xs.iter().map(|x| embed_genes(g, *x, &emb)).collect::<Result<_>>()?;
        let mut levels = Vec::with_capacity(self.plan.len());
        let mut omegas = Vec::with_capacity(self.plan.len());
        let mut stats = Vec::with_capacity(self.plan.len());
        for (slot, p) in self.plan.iter().enumerate() {
            let pre = level_prefix(p.index);
            let adjacency = &self.kb.level(p.index).adjacency;
            let mut level_omegas = Vec::new();
            if p.intra {
                for k in 0..cfg.hops {
                    match cfg.variant {
                        Variant::Basic => {
                            let att = Attention::bind(g, &format!("{pre}.hop{k}"), cfg.update_mode)?;
                            for h in hs.iter_mut() {
                                *h = gat_propagate(g, *h, adjacency, &att, cfg.update_mode)?;
                            }
                        }
                        Variant::Enhanced => {
                            let scorer = EdgeScorer::bind(g, &format!("{pre}.scorer"))?;
                            let w = g.param(&format!("{pre}.hop{k}.w"))?;
                            let mut hop = Vec::with_capacity(hs.len());
                            for h in hs.iter_mut() {
                                let omega = edge_intensity(g, *h, &scorer)?;
                                let a = enhanced_adjacency(g, omega, adjacency, cfg.alpha[slot])?;
                                *h = enhanced_propagate(g, *h, a, w, cfg.activation)?;
                                hop.push(omega);
                            }
                            level_omegas.push(hop);
                        }
                        Variant::Perceptron => {}
                    }
                }
            }
            if let Some(op) = &p.hyper {
                for k in 0..cfg.hops {
                    let w = g.param(&format!("{pre}.hyper{k}.w"))?;
                    for h in hs.iter_mut() {
                        *h = hypergraph_propagate(g, *h, op, w, cfg.activation)?;
                    }
                }
            }
            let feats = p.nodes * d;
            let flat: Vec<NodeId> = hs.iter().map(|h| g.reshape(*h, 1, feats)).collect::<Result<_>>()?;
            let stacked = g.vconcat(&flat)?;
            let gamma = g.param(&format!("{pre}.bn.gamma"))?;
            let beta = g.param(&format!("{pre}.bn.beta"))?;
            let (normed, st) = batch_norm(g, stacked, gamma, beta, mode, &self.running[slot], BN_EPS)?;
            stats.push(st);
            hs = (0..hs.len())
                .map(|s| {
                    let row = g.slice_rows(normed, s, 1)?;
                    g.reshape(row, p.nodes, d)
                })
                .collect::<Result<_>>()?;
            levels.push(hs.clone());
            omegas.push(level_omegas);
            if let Some(mask) = &p.next_mask {
                let w = g.param(&format!("{pre}.dense.w"))?;
                let b = g.param(&format!("{pre}.dense.b"))?;
                for h in hs.iter_mut() {
                    *h = masked_dense(g, *h, mask, w, b, cfg.activation)?;
                }
            }
        }
        Ok(Trunk { levels, omegas, stats })
    }

    /// Final-level embeddings of each sample flattened row-major and stacked: B × (n_L·d).
    pub fn flatten(&self, g: &mut Graph<'_>, trunk: &Trunk) -> Result<NodeId> {
        let width = self.trunk_width();
        let rows: Vec<NodeId> = trunk
            .last()
            .iter()
            .map(|h| g.reshape(*h, 1, width))
            .collect::<Result<_>>()?;
        g.vconcat(&rows)
    }

    /// The head perceptron applied to B × input rows; hidden layers use the
    /// configured activation, the output layer is affine.
    pub fn head_on(&self, g: &mut Graph<'_>, input: NodeId) -> Result<NodeId> {
        let layers = self.config.head_hidden.len() + 1;
        let mut z = input;
        for i in 0..layers {
            let w = g.param(&format!("{HEAD_PREFIX}{i}.w"))?;
            let b = g.param(&format!("{HEAD_PREFIX}{i}.b"))?;
            z = g.matmul(z, w)?;
            z = g.add_row(z, b)?;
            if i + 1 < layers {
                z = g.activate(z, self.config.activation)?;
            }
        }
        Ok(z)
    }

    /// Head outputs for the batch: B × head_output.
    pub fn head(&self, g: &mut Graph<'_>, trunk: &Trunk) -> Result<NodeId> {
        let flat = self.flatten(g, trunk)?;
        self.head_on(g, flat)
    }

    /// Eval-mode head outputs for rows of `samples` (samples × genes).
    pub fn predict(&self, samples: &Matrix) -> Result<Matrix> {
        let xs = split_samples(samples)?;
        evaluate(&self.params, |g| {
            let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let trunk = self.trunk(g, &ids, BnMode::Eval)?;
            self.head(g, &trunk)
        })
    }

    /// Eval-mode edge intensities at `level`, from the last hop, averaged over samples.
    pub fn mean_intensity(&self, level: usize, samples: &Matrix) -> Result<Matrix> {
        let per_sample = self.intensities(level, samples)?;
        let (n, m) = per_sample[0].shape();
        let mut acc = Matrix::zeros(n, m);
        for o in &per_sample {
            acc.add_assign(o);
        }
        acc.scale(1.0 / per_sample.len() as f64)
    }

    /// Eval-mode edge intensities at `level` from the last hop, one matrix per sample.
    pub fn intensities(&self, level: usize, samples: &Matrix) -> Result<Vec<Matrix>> {
        if self.config.variant != Variant::Enhanced {
            return Err(Error::invalid("edge intensities exist only in the enhanced model"));
        }
        let slot = self
            .level_slot(level)
            .filter(|_| self.scores_edges(level))
            .ok_or_else(|| Error::invalid(format!("level {level} has no learned edge intensities")))?;
        let xs = split_samples(samples)?;
        let mut g = Graph::new(&self.params);
        let ids: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let trunk = self.trunk(&mut g, &ids, BnMode::Eval)?;
        let last = trunk.omegas[slot].last().ok_or_else(|| Error::invalid("no hops recorded"))?;
        Ok(last.iter().map(|id| g.value(*id).clone()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            config: self.config.clone(),
            kb_fingerprint: self.kb.fingerprint(),
            params: self.params.clone(),
            running: self.running.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Restores a checkpoint against `kb`; the knowledge fingerprint and the
    /// parameter inventory must match.
    pub fn load(path: &Path, kb: Arc<KnowledgeBase>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        let fp = kb.fingerprint();
        if ck.kb_fingerprint != fp {
            return Err(Error::Checkpoint(format!(
                "knowledge fingerprint {} does not match checkpoint {}",
                fp, ck.kb_fingerprint
            )));
        }
        let mut fresh = BfregModel::new(ck.config.clone(), kb, &mut BfRng::new(0))?;
        if fresh.params.inventory() != ck.params.inventory() {
            return Err(Error::Checkpoint("parameter inventory does not match the knowledge base".into()));
        }
        if fresh.running.iter().map(|r| r.mean.len()).ne(ck.running.iter().map(|r| r.mean.len())) {
            return Err(Error::Checkpoint("batch-norm statistics do not match the knowledge base".into()));
        }
        fresh.params = ck.params;
        fresh.running = ck.running;
        Ok(fresh)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    kb_fingerprint: String,
    params: ParamStore,
    running: Vec<RunningStats>,
}

/// Rows of a samples × genes matrix as n×1 columns.
pub fn split_samples(samples: &Matrix) -> Result<Vec<Matrix>> {
    (0..samples.rows())
        .map(|r| Matrix::col_vector(samples.row(r)))
        .collect()
}

fn build_plan(config: &ModelConfig, kb: &KnowledgeBase) -> Result<Vec<LevelPlan>> {
    let levels = config.validate(kb)?;
    let hyper_level = kb.incidence_level();
    let mut plan = Vec::with_capacity(levels.len());
    for (pos, &l) in levels.iter().enumerate() {
        let next_included = pos + 1 < levels.len();
        let is_hyper_top = hyper_level.is_some_and(|h| h + 1 == l);
        let perceptron = config.variant == Variant::Perceptron;
        let hyper = match (hyper_level, kb.incidence()) {
            (Some(h), Some(r)) if h == l && next_included && !perceptron => Some(hypergraph_operator(r)?),
            _ => None,
        };
        plan.push(LevelPlan {
            index: l,
            intra: !perceptron && !is_hyper_top,
            hyper,
            next_mask: next_included.then(|| kb.mapping(l).clone()),
            nodes: kb.level(l).len(),
        });
    }
    Ok(plan)
}
