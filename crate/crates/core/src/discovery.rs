//! Knowledge completion: ablate a node's edges, retrain the enhanced model
//! several times, and rank the missing edges by learned intensity.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, Level};
use crate::model::{BfregModel, ModelConfig, Variant};
use crate::numerics::Matrix;
use crate::rng::BfRng;
use crate::tasks::{train_imputation, ExpressionDataset, Split, TrainConfig};

pub type Edge = (String, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCandidate {
    pub level: String,
    pub source: String,
    pub target: String,
    pub intensity: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

impl EdgeCandidate {
    pub fn edge(&self) -> Edge {
        (self.source.clone(), self.target.clone())
    }
}

/// Ranks absent, non-self pairs of `level` by the intensity matrix `omega`
/// (`omega[i][j]` scores source j → target i): intensity descending, then
/// (source, target) ascending.
pub fn rank_intensities(level: &Level, omega: &Matrix, restrict_to: Option<&str>) -> Result<Vec<EdgeCandidate>> {
    let n = level.len();
    if omega.shape() != (n, n) {
        return Err(Error::Shape(format!("{}x{} intensities for a level of {n} nodes", omega.rows(), omega.cols())));
    }
    let only = match restrict_to {
        Some(node) => Some(level.index_of(node).ok_or_else(|| Error::UnknownNode {
            level: level.name.clone(),
            node: node.to_string(),
        })?),
        None => None,
    };
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || level.adjacency.get(i, j) != 0.0 {
                continue;
            }
            if only.is_some_and(|k| i != k && j != k) {
                continue;
            }
            out.push(EdgeCandidate {
                level: level.name.clone(),
                source: level.nodes[j].clone(),
                target: level.nodes[i].clone(),
                intensity: omega.get(i, j),
                rank: 0,
            });
        }
    }
    out.sort_by(|a, b| {
        b.intensity
            .total_cmp(&a.intensity)
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.target.cmp(&b.target))
    });
    for (r, c) in out.iter_mut().enumerate() {
        c.rank = r + 1;
    }
    Ok(out)
}

/// Ranks candidate edges of a trained enhanced model, with intensities
/// averaged over `samples` (samples × genes).
pub fn rank_edges(model: &BfregModel, level: &str, samples: &Matrix, restrict_to: Option<&str>) -> Result<Vec<EdgeCandidate>> {
    let idx = model.kb().level_index(level)?;
    let omega = model.mean_intensity(idx, samples)?;
    rank_intensities(model.kb().level(idx), &omega, restrict_to)
}

/// Fraction of runs whose top-k list holds each edge; edges never listed are absent.
pub fn edge_frequency(top_k: &[Vec<Edge>]) -> Result<BTreeMap<Edge, f64>> {
    if top_k.is_empty() {
        return Err(Error::invalid("edge frequency needs at least one run"));
    }
    let mut counts: BTreeMap<Edge, usize> = BTreeMap::new();
    for run in top_k {
        let mut seen: Vec<&Edge> = run.iter().collect();
        seen.sort();
        seen.dedup();
        for e in seen {
            *counts.entry(e.clone()).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(e, c)| (e, c as f64 / top_k.len() as f64))
        .collect())
}

/// Edges ordered by frequency descending, ties by (source, target).
pub fn by_frequency(freq: &BTreeMap<Edge, f64>) -> Vec<(Edge, f64)> {
    let mut v: Vec<(Edge, f64)> = freq.iter().map(|(e, f)| (e.clone(), *f)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// |removed ∩ top| / |removed|.
pub fn recall_at_k(removed: &[Edge], top: &[Edge]) -> Result<f64> {
    if removed.is_empty() {
        return Err(Error::invalid("recall needs at least one removed edge"));
    }
    let hit = removed.iter().filter(|e| top.contains(e)).count();
    Ok(hit as f64 / removed.len() as f64)
}

/// Which pairs compete in each run's ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Only pairs incident to the ablated node.
    #[default]
    Node,
    /// Every absent pair of the level.
    Level,
}

impl std::str::FromStr for CandidateScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(CandidateScope::Node),
            "level" => Ok(CandidateScope::Level),
            other => Err(Error::Config(format!("unknown candidate scope `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub level: String,
    pub node: String,
    pub runs: usize,
    pub k: usize,
    pub scope: CandidateScope,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub level: String,
    pub node: String,
    /// Runs that trained successfully.
    pub runs: usize,
    pub failed_runs: usize,
    pub k: usize,
    pub candidates: usize,
    pub removed: Vec<Edge>,
    pub top_k: Vec<Vec<Edge>>,
    /// Frequency-ranked edges.
    pub frequencies: Vec<(Edge, f64)>,
    pub recall: f64,
}

impl DiscoveryReport {
    /// Expected recall of a uniformly random ranking, k / #candidates capped at 1.
    pub fn random_recall(&self) -> f64 {
        (self.k as f64 / self.candidates as f64).min(1.0)
    }
}

/// Mean recall over several ablated nodes.
pub fn mean_recall(reports: &[DiscoveryReport]) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().map(|r| r.recall).sum::<f64>() / reports.len() as f64)
}

/// Removes `node`'s edges, trains the enhanced model `runs` times on
/// imputation with fresh seeds, and scores how often the removed edges
/// reach the top-k lists.
pub fn run_discovery(
    kb: &KnowledgeBase,
    data: &ExpressionDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cfg: &DiscoveryConfig,
) -> Result<DiscoveryReport> {
    if model_cfg.variant != Variant::Enhanced {
        return Err(Error::Config("discovery needs the enhanced variant".into()));
    }
    if cfg.runs == 0 || cfg.k == 0 {
        return Err(Error::Config("discovery needs runs ≥ 1 and k ≥ 1".into()));
    }
    let level = kb.level_index(&cfg.level)?;
    let removed = kb.incident_edges(level, &cfg.node);
    if removed.is_empty() {
        return Err(Error::invalid(format!("node `{}` has no edges to remove", cfg.node)));
    }
    let ablated = Arc::new(kb.remove_node_edges(&cfg.level, &cfg.node)?);
    let restrict = (cfg.scope == CandidateScope::Node).then_some(cfg.node.as_str());
    let root = BfRng::new(cfg.seed);
    let results: Vec<Result<Vec<EdgeCandidate>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let seed = root.derive(r as u64).next_u64();
            let split = Split::random(data.samples(), seed);
            let mut model = BfregModel::new(model_cfg.clone(), Arc::clone(&ablated), &mut BfRng::new(seed))?;
            let tc = TrainConfig { seed, ..train_cfg.clone() };
            train_imputation(&mut model, data, &split, &tc)?;
            let train = data.values.select_rows(&split.train);
            rank_edges(&model, &cfg.level, &train, restrict)
        })
        .collect();
    let mut lists = Vec::new();
    let mut candidates = 0;
    let mut failed = 0;
    let mut last_err = None;
    for res in results {
        match res {
            Ok(ranked) => {
                candidates = ranked.len();
                lists.push(ranked.iter().take(cfg.k).map(EdgeCandidate::edge).collect::<Vec<_>>());
            }
            Err(e @ (Error::Diverged(_) | Error::NonFinite(_))) => {
                log::warn!("discovery run diverged: {e}");
                failed += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    if lists.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Diverged("every discovery run failed".into())));
    }
    let frequencies = by_frequency(&edge_frequency(&lists)?);
    let top: Vec<Edge> = frequencies.iter().take(cfg.k).map(|(e, _)| e.clone()).collect();
    let recall = recall_at_k(&removed, &top)?;
    Ok(DiscoveryReport {
        level: cfg.level.clone(),
        node: cfg.node.clone(),
        runs: lists.len(),
        failed_runs: failed,
        k: cfg.k,
        candidates,
        removed,
        top_k: lists,
        frequencies,
        recall,
    })
}
