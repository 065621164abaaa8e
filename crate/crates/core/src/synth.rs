//! Seeded generators for knowledge bases and expression data with planted
//! regulatory structure.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, Level};
use crate::numerics::Matrix;
use crate::rng::BfRng;
use crate::tasks::{ExpressionDataset, FrameSet};

fn default_beta() -> f64 {
    0.3
}

fn default_noise() -> f64 {
    0.05
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub genes: usize,
    /// Probability of each ordered gene pair being a regulation edge.
    pub edge_prob: f64,
    /// Zero for a gene-only knowledge base.
    #[serde(default)]
    pub proteins: usize,
    /// Probability of each extra protein interaction beyond the image of the gene graph.
    #[serde(default)]
    pub ppi_noise: f64,
    #[serde(default)]
    pub pathways: usize,
    #[serde(default)]
    pub pathway_size: usize,
    /// When set, gene 0 is made a hub regulating exactly this many genes and
    /// nothing else touches it.
    #[serde(default)]
    pub hub_edges: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Probability of an entry being unobserved in generated expression.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            genes: 30,
            edge_prob: 0.1,
            proteins: 0,
            ppi_noise: 0.0,
            pathways: 0,
            pathway_size: 0,
            hub_edges: None,
            beta: default_beta(),
            noise: default_noise(),
            rho: default_rho(),
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.genes == 0 {
            return Err(Error::Config("synthetic gene count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) || !(0.0..=1.0).contains(&self.ppi_noise) {
            return Err(Error::Config("edge probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("relaxation rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.proteins > self.genes {
            return Err(Error::Config("more proteins than genes leaves some unmapped".into()));
        }
        if self.pathways > 0 && (self.proteins == 0 || self.pathway_size == 0 || self.pathway_size > self.proteins) {
            return Err(Error::Config("pathways need proteins and a size in 1..=proteins".into()));
        }
        if let Some(h) = self.hub_edges {
            if h >= self.genes {
                return Err(Error::Config(format!("hub with {h} targets needs more than {h} genes")));
            }
        }
        Ok(())
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Random gene graph, optional many-to-one protein level with interactions
/// induced by the gene graph, and optional pathways over proteins.
pub fn gen_knowledge(spec: &SynthSpec) -> Result<KnowledgeBase> {
    spec.validate()?;
    let mut rng = BfRng::new(spec.seed).derive(0);
    let n = spec.genes;
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.bernoulli(spec.edge_prob) {
                a.set(i, j, 1.0);
            }
        }
    }
    if let Some(k) = spec.hub_edges {
        for i in 0..n {
            a.set(0, i, 0.0);
            a.set(i, 0, 0.0);
        }
        for t in rng.choose_indices(n - 1, k) {
            a.set(t + 1, 0, 1.0);
        }
    }
    let genes = Level::new("gene", names("g", n), a.clone(), false)?;
    if spec.proteins == 0 {
        return KnowledgeBase::new(vec![genes], vec![], None);
    }
    let p = spec.proteins;
    let mut owner: Vec<usize> = (0..n).map(|i| if i < p { i } else { rng.below(p) }).collect();
    rng.shuffle(&mut owner);
    let m1 = Matrix::from_fn(p, n, |q, g| if owner[g] == q { 1.0 } else { 0.0 })?;
    let mut ap = Matrix::zeros(p, p);
    for i in 0..n {
        for j in 0..n {
            if a.get(i, j) != 0.0 && owner[i] != owner[j] {
                ap.set(owner[i], owner[j], 1.0);
            }
        }
    }
    for i in 0..p {
        for j in 0..p {
            if i != j && rng.bernoulli(spec.ppi_noise) {
                ap.set(i, j, 1.0);
            }
        }
    }
    let proteins = Level::new("protein", names("p", p), ap, false)?;
    if spec.pathways == 0 {
        return KnowledgeBase::new(vec![genes, proteins], vec![m1], None);
    }
    let k = spec.pathways;
    let mut r = Matrix::zeros(p, k);
    for e in 0..k {
        for q in rng.choose_indices(p, spec.pathway_size) {
            r.set(q, e, 1.0);
        }
    }
    let pathways = Level::new("pathway", names("pw", k), Matrix::zeros(k, k), true)?;
    KnowledgeBase::new(vec![genes, proteins, pathways], vec![m1, r.transpose()], Some(r))
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    to_dmatrix(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `(I − βA)⁻¹` for the gene adjacency, after checking the spectral condition.
pub fn static_response(adjacency: &Matrix, beta: f64) -> Result<Matrix> {
    let n = adjacency.rows();
    let rho = spectral_radius(&adjacency.scale(beta)?);
    if rho >= 1.0 {
        return Err(Error::invalid(format!("spectral radius of βA is {rho:.4}, must be below 1")));
    }
    let sys = DMatrix::<f64>::identity(n, n) - to_dmatrix(adjacency) * beta;
    let inv = sys
        .try_inverse()
        .ok_or_else(|| Error::invalid("I − βA is singular"))?;
    // `+ 0.0` folds negative zeros from the elimination.
    Matrix::from_fn(n, n, |i, j| inv[(i, j)] + 0.0)
}

/// Steady states `x = (I − βA)⁻¹ ε` with standard normal `ε`, so each gene
/// accumulates the influence of its regulators. Entries are dropped
/// (set to 0, mask 0) with probability `spec.dropout`.
pub fn gen_expression_static(kb: &KnowledgeBase, spec: &SynthSpec, samples: usize) -> Result<ExpressionDataset> {
    let n = kb.gene_count();
    let resp = static_response(&kb.level(0).adjacency, spec.beta)?;
    let mut rng = BfRng::new(spec.seed).derive(1);
    let mut values = Matrix::zeros(samples, n);
    let mut mask = Matrix::filled(samples, n, 1.0);
    let mut eps = vec![0.0; n];
    for s in 0..samples {
        for e in eps.iter_mut() {
            *e = rng.normal();
        }
        for i in 0..n {
            let x: f64 = resp.row(i).iter().zip(&eps).map(|(r, e)| r * e).sum();
            if spec.dropout > 0.0 && rng.bernoulli(spec.dropout) {
                mask.set(s, i, 0.0);
            } else {
                values.set(s, i, x);
            }
        }
    }
    ExpressionDataset::new(kb.genes().to_vec(), values, Some(mask), None)
}

/// Genes belonging to each pathway through the protein mapping.
fn pathway_members(kb: &KnowledgeBase) -> Result<Vec<Vec<usize>>> {
    let r = kb
        .incidence()
        .ok_or_else(|| Error::invalid("labels need pathways"))?;
    let m1 = kb.mapping(0);
    Ok((0..r.cols())
        .map(|e| {
            (0..kb.gene_count())
                .filter(|g| (0..r.rows()).any(|q| r.get(q, e) != 0.0 && m1.get(q, *g) != 0.0))
                .collect()
        })
        .collect())
}

/// Class of each sample: the pathway (among the first `classes`) whose member
/// genes have the highest mean observed expression; ties go to the lower class.
pub fn gen_labels(kb: &KnowledgeBase, data: &ExpressionDataset, classes: usize) -> Result<Vec<usize>> {
    let members = pathway_members(kb)?;
    if classes < 2 || classes > members.len() {
        return Err(Error::invalid(format!(
            "{classes} classes need between 2 and {} pathways",
            members.len()
        )));
    }
    Ok((0..data.samples())
        .map(|s| {
            let row = data.values.row(s);
            let mut best = (0, f64::NEG_INFINITY);
            for (c, genes) in members.iter().take(classes).enumerate() {
                let act = if genes.is_empty() {
                    0.0
                } else {
                    genes.iter().map(|g| row[*g]).sum::<f64>() / genes.len() as f64
                };
                if act > best.1 {
                    best = (c, act);
                }
            }
            best.0
        })
        .collect())
}

/// One relaxation step `x' = (1 − ρ)x + ρ·tanh(βAx)`, without noise.
pub fn relax_step(adjacency: &Matrix, x: &[f64], beta: f64, rho: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let drive: f64 = adjacency.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
            (1.0 - rho) * x[i] + rho * (beta * drive).tanh()
        })
        .collect()
}

/// `series` trajectories of `steps` frames from standard normal starts,
/// following [`relax_step`] plus Gaussian noise of scale `spec.noise`.
pub fn gen_timeseries(kb: &KnowledgeBase, spec: &SynthSpec, series: usize, steps: usize) -> Result<FrameSet> {
    spec.validate()?;
    let n = kb.gene_count();
    let a = &kb.level(0).adjacency;
    let mut rng = BfRng::new(spec.seed).derive(2);
    let mut state: Vec<Vec<f64>> = (0..series).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    let mut frames = Vec::with_capacity(steps);
    for _ in 0..steps {
        frames.push(Matrix::from_rows(&state)?);
        for x in state.iter_mut() {
            let mut next = relax_step(a, x, spec.beta, spec.rho);
            if spec.noise > 0.0 {
                for v in next.iter_mut() {
                    *v += spec.noise * rng.normal();
                }
            }
            *x = next;
        }
    }
    FrameSet::new(kb.genes().to_vec(), (0..steps).map(|t| t as f64).collect(), frames)
}
