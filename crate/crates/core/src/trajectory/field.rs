//! Piecewise structured vector field f(x, t) = σ(A′ x W(t) + B(t)) U(t), with
//! W, U, B emitted per piece by a small time-conditioned perceptron.

use serde::{Deserialize, Serialize};

use super::ode::{piece_at, Dynamics, GraphDynamics};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::numerics::{evaluate, Activation, Graph, Matrix, NodeId, ParamStore};
use crate::rng::BfRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Hidden channels per gene.
    pub channels: usize,
    /// Sinusoid frequencies fed to the hypernetwork besides t itself.
    pub time_features: usize,
    pub hyper_hidden: usize,
    pub activation: Activation,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            time_features: 4,
            hyper_hidden: 16,
            activation: Activation::Tanh,
        }
    }
}

/// Weights of one piece at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct PieceWeights {
    /// 1 × c
    pub w: Vec<f64>,
    /// c × 1
    pub u: Vec<f64>,
    /// n × c, per-gene channel offsets
    pub b: Matrix,
}

#[derive(Clone, Debug)]
pub struct CnfField {
    config: FieldConfig,
    structures: Vec<Matrix>,
    params: ParamStore,
}

/// Structure masks over genes, one per piece: regulators plus self; genes
/// sharing a protein complex through the protein network; genes sharing a
/// pathway. Upper levels are skipped when absent.
pub fn structures_from_kb(kb: &KnowledgeBase) -> Result<Vec<Matrix>> {
    let n = kb.gene_count();
    let binarize = |m: Matrix| m.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let mut out = vec![binarize(kb.level(0).adjacency.add(&Matrix::identity(n))?)?];
    if kb.levels().len() > 1 && !kb.level(1).hyperedges {
        let m1 = kb.mapping(0);
        let p = kb.level(1).adjacency.add(&Matrix::identity(m1.rows()))?;
        out.push(binarize(m1.transpose().matmul(&p)?.matmul(m1)?)?);
    }
    if let (Some(r), Some(lvl)) = (kb.incidence(), kb.incidence_level()) {
        // Lift the incidence down to genes through the mappings below it.
        let mut lift = Matrix::identity(n);
        for l in 0..lvl {
            lift = kb.mapping(l).matmul(&lift)?;
        }
        let member = r.transpose().matmul(&lift)?;
        out.push(binarize(member.transpose().matmul(&member)?.add(&Matrix::identity(n))?)?);
    }
    Ok(out)
}

fn hyper_names(piece: usize) -> [String; 4] {
    let p = format!("cnf.p{piece}");
    [format!("{p}.h1.w"), format!("{p}.h1.b"), format!("{p}.h2.w"), format!("{p}.h2.b")]
}

impl CnfField {
    pub fn new(config: FieldConfig, structures: Vec<Matrix>, rng: &mut BfRng) -> Result<Self> {
        if config.channels == 0 || config.hyper_hidden == 0 {
            return Err(Error::Config("field channels and hypernetwork width must be positive".into()));
        }
        let n = structures.first().map(Matrix::rows).ok_or_else(|| Error::invalid("field needs at least one piece"))?;
        if let Some(s) = structures.iter().find(|s| s.shape() != (n, n)) {
            return Err(Error::Shape(format!("piece structure {}x{} for {n} genes", s.rows(), s.cols())));
        }
        let mut params = ParamStore::new();
        let feats = 1 + 2 * config.time_features;
        let out = 2 * config.channels + n * config.channels;
        for piece in 0..structures.len() {
            let [w1, b1, w2, b2] = hyper_names(piece);
            params.insert_uniform(w1, feats, config.hyper_hidden, feats, rng)?;
            params.insert_uniform(b1, 1, config.hyper_hidden, feats, rng)?;
            params.insert_uniform(w2, config.hyper_hidden, out, config.hyper_hidden, rng)?;
            params.insert_uniform(b2, 1, out, config.hyper_hidden, rng)?;
        }
        Ok(Self { config, structures, params })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn structures(&self) -> &[Matrix] {
        &self.structures
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the hypernetwork outputs, giving f ≡ 0.
    pub fn zero(&mut self) -> Result<()> {
        for piece in 0..self.structures.len() {
            let [_, _, w2, b2] = hyper_names(piece);
            for name in [w2, b2] {
                let (r, c) = self.params.get(&name)?.shape();
                self.params.set(&name, Matrix::zeros(r, c))?;
            }
        }
        Ok(())
    }

    pub fn time_features(&self, t: f64) -> Result<Matrix> {
        let mut f = vec![t];
        for k in 1..=self.config.time_features {
            f.push((k as f64 * t).sin());
            f.push((k as f64 * t).cos());
        }
        Matrix::row_vector(&f)
    }

    fn hyper_graph(&self, g: &mut Graph<'_>, piece: usize, t: f64) -> Result<NodeId> {
        let [w1, b1, w2, b2] = hyper_names(piece);
        let phi = g.constant(self.time_features(t)?);
        let (w1, b1, w2, b2) = (g.param(&w1)?, g.param(&b1)?, g.param(&w2)?, g.param(&b2)?);
        let h = g.matmul(phi, w1)?;
        let h = g.add(h, b1)?;
        let h = g.tanh(h)?;
        let o = g.matmul(h, w2)?;
        g.add(o, b2)
    }

    /// The hypernetwork's output for `piece` at time `t`.
    pub fn weights(&self, piece: usize, t: f64) -> Result<PieceWeights> {
        self.check_piece(piece)?;
        let out = evaluate(&self.params, |g| self.hyper_graph(g, piece, t))?;
        let c = self.config.channels;
        let d = out.data();
        Ok(PieceWeights {
            w: d[..c].to_vec(),
            u: d[c..2 * c].to_vec(),
            b: Matrix::new(self.dim(), c, d[2 * c..].to_vec())?,
        })
    }

    fn check_piece(&self, piece: usize) -> Result<()> {
        if piece >= self.structures.len() {
            return Err(Error::invalid(format!("piece {piece} of {}", self.structures.len())));
        }
        Ok(())
    }

    /// f(x, t) for `t` inside the interval `[lo, hi]`, picking the piece by
    /// sub-interval membership.
    pub fn vector_field_eval(&self, x: &[f64], t: f64, interval: (f64, f64)) -> Result<Vec<f64>> {
        let piece = piece_at(t, interval.0, interval.1, self.pieces())?;
        Ok(self.eval(piece, &Matrix::row_vector(x)?, t)?.into_data())
    }

    fn apply(&self, weights: &PieceWeights, s: &Matrix, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // Returns f and the diagonal factor g with ∂f/∂x = diag(g)·S.
        let n = x.len();
        let act = self.config.activation;
        let mut f = vec![0.0; n];
        let mut gain = vec![0.0; n];
        for i in 0..n {
            let z: f64 = s.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
            for c in 0..self.config.channels {
                let pre = z * weights.w[c] + weights.b.get(i, c);
                f[i] += weights.u[c] * act.eval(pre);
                gain[i] += weights.u[c] * weights.w[c] * act.derivative(pre);
            }
        }
        (f, gain)
    }
}

impl Dynamics for CnfField {
    fn dim(&self) -> usize {
        self.structures[0].rows()
    }

    fn pieces(&self) -> usize {
        self.structures.len()
    }

    fn eval(&self, piece: usize, x: &Matrix, t: f64) -> Result<Matrix> {
        let w = self.weights(piece, t)?;
        let s = &self.structures[piece];
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            data.extend(self.apply(&w, s, x.row(r)).0);
        }
        Matrix::new(x.rows(), x.cols(), data)
    }

    fn jacobian(&self, piece: usize, x: &[f64], t: f64) -> Result<Matrix> {
        let w = self.weights(piece, t)?;
        let s = &self.structures[piece];
        let (_, gain) = self.apply(&w, s, x);
        Matrix::from_fn(x.len(), x.len(), |i, j| gain[i] * s.get(i, j))
    }
}

impl GraphDynamics for CnfField {
    fn eval_graph(&self, g: &mut Graph<'_>, piece: usize, x: NodeId, t: f64) -> Result<NodeId> {
        self.check_piece(piece)?;
        let (batch, n) = g.shape(x);
        let c = self.config.channels;
        let out = self.hyper_graph(g, piece, t)?;
        let w = g.slice_cols(out, 0, c)?;
        let u = g.slice_cols(out, c, c)?;
        let u = g.reshape(u, c, 1)?;
        let b = g.slice_cols(out, 2 * c, n * c)?;
        let b = g.reshape(b, n, c)?;
        let st = g.constant(self.structures[piece].transpose());
        let z = g.matmul(x, st)?;
        let z = g.reshape(z, batch * n, 1)?;
        let pre = g.matmul(z, w)?;
        let tiled = g.vconcat(&vec![b; batch])?;
        let pre = g.add(pre, tiled)?;
        let a = g.activate(pre, self.config.activation)?;
        let f = g.matmul(a, u)?;
        g.reshape(f, batch, n)
    }
}
