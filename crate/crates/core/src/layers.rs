//! The architectural operators: per-gene embedding, attention propagation
//! along known regulation, hypergraph propagation over pathways, masked
//! inter-level dense maps, and the learnable edge intensities of the
//! enhanced variant.
//!
//! Every operator is a pure function of graph nodes. Parameter bundles such
//! as [`Embedding`] only hold node handles; `bind` resolves them by name from
//! the graph's [`ParamStore`], `init` creates them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, Matrix, NodeId, ParamStore, LEAKY_SLOPE};
use crate::rng::BfRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    #[default]
    Sum,
    Concat,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(UpdateMode::Sum),
            "concat" => Ok(UpdateMode::Concat),
            other => Err(Error::Config(format!("unknown update mode `{other}`"))),
        }
    }
}

/// Shared per-gene perceptron: `tanh(x·w1 + b1)·W2 + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl Embedding {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut BfRng) -> Result<()> {
        store.insert_uniform(format!("{prefix}.w1"), 1, d, 1, rng)?;
        store.insert_uniform(format!("{prefix}.b1"), 1, d, 1, rng)?;
        store.insert_uniform(format!("{prefix}.w2"), d, d, d, rng)?;
        store.insert_uniform(format!("{prefix}.b2"), 1, d, d, rng)?;
        Ok(())
    }

    pub fn bind(g: &mut Graph<'_>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: g.param(&format!("{prefix}.w1"))?,
            b1: g.param(&format!("{prefix}.b1"))?,
            w2: g.param(&format!("{prefix}.w2"))?,
            b2: g.param(&format!("{prefix}.b2"))?,
        })
    }
}

/// Encodes each entry of the n×1 expression column `x` independently into a
/// row of the n×d output.
pub fn embed_genes(g: &mut Graph<'_>, x: NodeId, emb: &Embedding) -> Result<NodeId> {
    if g.shape(x).1 != 1 {
        return Err(Error::Shape(format!("expression must be n×1, got {:?}", g.shape(x))));
    }
    let z = g.matmul(x, emb.w1)?;
    let z = g.add_row(z, emb.b1)?;
    let z = g.tanh(z)?;
    let z = g.matmul(z, emb.w2)?;
    g.add_row(z, emb.b2)
}

/// Single-head additive attention parameters for one hop at one level.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    /// 2d×1 attention vector; the first d entries score the receiver.
    pub a: NodeId,
    /// 2d×d update for concat mode.
    pub wu: Option<NodeId>,
}

impl Attention {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, mode: UpdateMode, rng: &mut BfRng) -> Result<()> {
        store.insert_uniform(format!("{prefix}.wq"), d, d, d, rng)?;
        store.insert_uniform(format!("{prefix}.wk"), d, d, d, rng)?;
        store.insert_uniform(format!("{prefix}.wv"), d, d, d, rng)?;
        store.insert_uniform(format!("{prefix}.a"), 2 * d, 1, 2 * d, rng)?;
        if mode == UpdateMode::Concat {
            store.insert_uniform(format!("{prefix}.wu"), 2 * d, d, 2 * d, rng)?;
        }
        Ok(())
    }

    pub fn bind(g: &mut Graph<'_>, prefix: &str, mode: UpdateMode) -> Result<Self> {
        Ok(Self {
            wq: g.param(&format!("{prefix}.wq"))?,
            wk: g.param(&format!("{prefix}.wk"))?,
            wv: g.param(&format!("{prefix}.wv"))?,
            a: g.param(&format!("{prefix}.a"))?,
            wu: match mode {
                UpdateMode::Sum => None,
                UpdateMode::Concat => Some(g.param(&format!("{prefix}.wu"))?),
            },
        })
    }
}

/// `A + I` as a binary mask: the neighborhood of each node plus itself.
pub fn with_self_loops(adjacency: &Matrix) -> Result<Matrix> {
    let n = adjacency.rows();
    let mut m = adjacency.clone();
    for i in 0..n {
        m.set(i, i, 1.0);
    }
    m.map(|v| if v != 0.0 { 1.0 } else { 0.0 })
}

/// One hop of attention-weighted message passing.
///
/// Node `i` attends over its in-neighbors and itself:
/// `e_ij = leaky(a_qᵀ W_q h_i + a_kᵀ W_k h_j)`, softmax over the neighborhood,
/// `s_i = Σ α_ij W_v h_j`. Sum mode returns `s_i + h_i`; concat mode returns
/// `[s_i ‖ h_i] W_u`.
pub fn gat_propagate(
    g: &mut Graph<'_>,
    h: NodeId,
    adjacency: &Matrix,
    att: &Attention,
    mode: UpdateMode,
) -> Result<NodeId> {
    let (n, d) = g.shape(h);
    if adjacency.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {n} nodes",
            adjacency.shape()
        )));
    }
    let mask = with_self_loops(adjacency)?;
    let q = g.matmul(h, att.wq)?;
    let k = g.matmul(h, att.wk)?;
    let v = g.matmul(h, att.wv)?;
    let a_q = g.slice_rows(att.a, 0, d)?;
    let a_k = g.slice_rows(att.a, d, d)?;
    let s_q = g.matmul(q, a_q)?;
    let s_k = g.matmul(k, a_k)?;
    let s_k_row = g.transpose(s_k)?;
    let zeros = g.constant(Matrix::zeros(n, n));
    let logits = g.add_col(zeros, s_q)?;
    let logits = g.add_row(logits, s_k_row)?;
    let logits = g.leaky_relu(logits, LEAKY_SLOPE)?;
    let alpha = g.masked_softmax_rows(logits, &mask)?;
    let s = g.matmul(alpha, v)?;
    match mode {
        UpdateMode::Sum => g.add(s, h),
        UpdateMode::Concat => {
            let wu = att
                .wu
                .ok_or_else(|| Error::Config("concat update needs a `wu` parameter".into()))?;
            let cat = g.hconcat(&[s, h])?;
            g.matmul(cat, wu)
        }
    }
}

/// The normalized hypergraph operator `D⁻¹ R B⁻¹ Rᵀ` for incidence `R`
/// (nodes × hyperedges). Rows of nodes in no hyperedge are identity rows.
pub fn hypergraph_operator(incidence: &Matrix) -> Result<Matrix> {
    let (n, e) = incidence.shape();
    if !incidence.is_binary() {
        return Err(Error::Knowledge("incidence must be binary".into()));
    }
    let sizes: Vec<f64> = (0..e).map(|c| incidence.col(c).iter().sum()).collect();
    if let Some(c) = sizes.iter().position(|s| *s == 0.0) {
        return Err(Error::Knowledge(format!("hyperedge {c} has no members")));
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let deg: f64 = incidence.row(i).iter().sum();
        if deg == 0.0 {
            out.set(i, i, 1.0);
            continue;
        }
        for j in 0..n {
            let mut acc = 0.0;
            for c in 0..e {
                acc += incidence.get(i, c) * incidence.get(j, c) / sizes[c];
            }
            out.set(i, j, acc / deg);
        }
    }
    Ok(out)
}

/// `activation(P H W)` with `P` from [`hypergraph_operator`].
pub fn hypergraph_propagate(
    g: &mut Graph<'_>,
    h: NodeId,
    operator: &Matrix,
    w: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let p = g.constant(operator.clone());
    let ph = g.matmul(p, h)?;
    let z = g.matmul(ph, w)?;
    g.activate(z, act)
}

/// `activation((M ⊙ W) H + b·1ᵀ)`; `mask` is n_{l+1}×n_l, `b` is n_{l+1}×1.
pub fn masked_dense(
    g: &mut Graph<'_>,
    h: NodeId,
    mask: &Matrix,
    w: NodeId,
    b: NodeId,
    act: Activation,
) -> Result<NodeId> {
    if g.shape(w) != mask.shape() {
        return Err(Error::Shape(format!(
            "masked weight {:?} vs mask {:?}",
            g.shape(w),
            mask.shape()
        )));
    }
    let m = g.constant(mask.clone());
    let mw = g.mul(m, w)?;
    let z = g.matmul(mw, h)?;
    let z = g.add_col(z, b)?;
    g.activate(z, act)
}

/// Perceptron scoring a directed pair from `[h_i ‖ h_j]`: 2d → d → 1.
#[derive(Clone, Copy, Debug)]
pub struct EdgeScorer {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl EdgeScorer {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut BfRng) -> Result<()> {
        store.insert_uniform(format!("{prefix}.w1"), 2 * d, d, 2 * d, rng)?;
        store.insert_uniform(format!("{prefix}.b1"), 1, d, 2 * d, rng)?;
        store.insert_uniform(format!("{prefix}.w2"), d, 1, d, rng)?;
        store.insert_uniform(format!("{prefix}.b2"), 1, 1, d, rng)?;
        Ok(())
    }

    pub fn bind(g: &mut Graph<'_>, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: g.param(&format!("{prefix}.w1"))?,
            b1: g.param(&format!("{prefix}.b1"))?,
            w2: g.param(&format!("{prefix}.w2"))?,
            b2: g.param(&format!("{prefix}.b2"))?,
        })
    }
}

/// `Ω[i][j] = sigmoid(w2ᵀ tanh(W1ᵀ[h_i ‖ h_j] + b1) + b2)` for all ordered pairs.
pub fn edge_intensity(g: &mut Graph<'_>, h: NodeId, scorer: &EdgeScorer) -> Result<NodeId> {
    let (n, d) = g.shape(h);
    if g.shape(scorer.w1).0 != 2 * d {
        return Err(Error::Shape(format!(
            "scorer expects {} input features, embeddings have {}",
            g.shape(scorer.w1).0,
            2 * d
        )));
    }
    let hidden = g.shape(scorer.w1).1;
    let top = g.slice_rows(scorer.w1, 0, d)?;
    let bottom = g.slice_rows(scorer.w1, d, d)?;
    let recv = g.matmul(h, top)?;
    let send = g.matmul(h, bottom)?;
    let ri: Vec<usize> = (0..n * n).map(|r| r / n).collect();
    let si: Vec<usize> = (0..n * n).map(|r| r % n).collect();
    let recv = g.gather_rows(recv, &ri)?;
    let send = g.gather_rows(send, &si)?;
    let z = g.add(recv, send)?;
    let z = g.add_row(z, scorer.b1)?;
    let z = g.tanh(z)?;
    debug_assert_eq!(g.shape(z), (n * n, hidden));
    let z = g.matmul(z, scorer.w2)?;
    let z = g.add_row(z, scorer.b2)?;
    let z = g.reshape(z, n, n)?;
    g.sigmoid(z)
}

/// Coefficients turning Ω into the reweighted adjacency: 1 on known edges,
/// `alpha` on other off-diagonal pairs, 0 on the diagonal.
pub fn enhancement_coefficients(adjacency: &Matrix, alpha: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let n = adjacency.rows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if adjacency.get(i, j) != 0.0 {
            1.0
        } else {
            alpha
        }
    })
}

/// `A′ = Ω` on known edges, `α·Ω` elsewhere off the diagonal, 0 on it.
pub fn enhanced_adjacency(g: &mut Graph<'_>, omega: NodeId, adjacency: &Matrix, alpha: f64) -> Result<NodeId> {
    if g.shape(omega) != adjacency.shape() {
        return Err(Error::Shape(format!(
            "intensity {:?} vs adjacency {:?}",
            g.shape(omega),
            adjacency.shape()
        )));
    }
    let coeff = g.constant(enhancement_coefficients(adjacency, alpha)?);
    g.mul(omega, coeff)
}

/// `activation((A′ + I) H W)`.
pub fn enhanced_propagate(
    g: &mut Graph<'_>,
    h: NodeId,
    a_prime: NodeId,
    w: NodeId,
    act: Activation,
) -> Result<NodeId> {
    let n = g.shape(h).0;
    let eye = g.constant(Matrix::identity(n));
    let a = g.add(a_prime, eye)?;
    let ah = g.matmul(a, h)?;
    let z = g.matmul(ah, w)?;
    g.activate(z, act)
}
