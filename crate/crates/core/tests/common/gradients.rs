//! Central-difference gradient checks over every graph primitive, layer and
//! forward variant.

use std::sync::Arc;

use bfreg_core::knowledge::{KnowledgeBase, Level};
use bfreg_core::layers::*;
use bfreg_core::model::{BfregModel, ModelConfig, Variant};
use bfreg_core::numerics::*;
use bfreg_core::rng::BfRng;
use bfreg_core::tasks::LstmCell;
use bfreg_core::trajectory::{integrate_graph, CnfField, FieldConfig, GraphDynamics};
use bfreg_core::Result;

use super::Check;

pub const TOL: f64 = 1e-5;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = BfRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0)).unwrap()
}

fn store(entries: &[(&str, usize, usize)], seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, (name, r, c)) in entries.iter().enumerate() {
        s.insert(*name, random(*r, *c, seed * 1000 + k as u64), true).unwrap();
    }
    s
}

/// Reduces any output to a scalar through fixed random weights, so every
/// output entry contributes to the checked gradient.
fn project(g: &mut Graph<'_>, out: NodeId) -> Result<NodeId> {
    let (r, c) = g.shape(out);
    let w = g.constant(random(r, c, 7919 + (r * 131 + c) as u64));
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn fd<F>(name: &str, s: &ParamStore, build: F) -> Check
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let r = finite_difference_check(
        s,
        |g| {
            let out = build(g)?;
            project(g, out)
        },
        FdConfig::default(),
    );
    match r {
        Ok(rep) => {
            let worst = rep.worst().map(|e| e.name.clone()).unwrap_or_default();
            Check::new(
                name,
                rep.passed() && rep.max_rel_err() < TOL,
                format!("max rel err {:.2e} ({worst})", rep.max_rel_err()),
            )
        }
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

fn mask_pattern(n: usize) -> Matrix {
    // Every row keeps its diagonal; row 0 keeps only that.
    Matrix::from_fn(n, n, |i, j| if i == j || (i > 0 && (i + j) % 2 == 1) { 1.0 } else { 0.0 }).unwrap()
}

pub fn primitives() -> Vec<Check> {
    let mut out = Vec::new();
    let s = store(&[("a", 3, 4), ("b", 4, 2)], 1);
    out.push(fd("matmul", &s, |g| {
        let (a, b) = (g.param("a")?, g.param("b")?);
        g.matmul(a, b)
    }));
    let s = store(&[("a", 3, 2), ("b", 3, 2), ("r", 1, 2), ("c", 3, 1)], 2);
    out.push(fd("add", &s, |g| {
        let (a, b) = (g.param("a")?, g.param("b")?);
        g.add(a, b)
    }));
    out.push(fd("sub", &s, |g| {
        let (a, b) = (g.param("a")?, g.param("b")?);
        g.sub(a, b)
    }));
    out.push(fd("mul", &s, |g| {
        let (a, b) = (g.param("a")?, g.param("b")?);
        g.mul(a, b)
    }));
    out.push(fd("add_row", &s, |g| {
        let (a, r) = (g.param("a")?, g.param("r")?);
        g.add_row(a, r)
    }));
    out.push(fd("add_col", &s, |g| {
        let (a, c) = (g.param("a")?, g.param("c")?);
        g.add_col(a, c)
    }));
    out.push(fd("mul_row", &s, |g| {
        let (a, r) = (g.param("a")?, g.param("r")?);
        g.mul_row(a, r)
    }));
    out.push(fd("scale", &s, |g| {
        let a = g.param("a")?;
        g.scale(a, -2.5)
    }));
    out.push(fd("hconcat", &s, |g| {
        let (a, c) = (g.param("a")?, g.param("c")?);
        g.hconcat(&[a, c, a])
    }));
    out.push(fd("vconcat", &s, |g| {
        let (a, r) = (g.param("a")?, g.param("r")?);
        g.vconcat(&[r, a])
    }));
    let s = store(&[("x", 4, 4)], 3);
    out.push(fd("sigmoid", &s, |g| {
        let x = g.param("x")?;
        g.sigmoid(x)
    }));
    out.push(fd("tanh", &s, |g| {
        let x = g.param("x")?;
        g.tanh(x)
    }));
    out.push(fd("leaky_relu", &s, |g| {
        let x = g.param("x")?;
        g.leaky_relu(x, 0.2)
    }));
    out.push(fd("masked_softmax_rows", &s, |g| {
        let x = g.param("x")?;
        g.masked_softmax_rows(x, &mask_pattern(4))
    }));
    out.push(fd("log_softmax_rows", &s, |g| {
        let x = g.param("x")?;
        g.log_softmax_rows(x)
    }));
    out.push(fd("sum", &s, |g| {
        let x = g.param("x")?;
        let y = g.tanh(x)?;
        let t = g.sum(y)?;
        g.mul(t, t)
    }));
    out.push(fd("sum_rows", &s, |g| {
        let x = g.param("x")?;
        g.sum_rows(x)
    }));
    out.push(fd("sum_cols", &s, |g| {
        let x = g.param("x")?;
        g.sum_cols(x)
    }));
    out.push(fd("mean", &s, |g| {
        let x = g.param("x")?;
        let y = g.sigmoid(x)?;
        let m = g.mean(y)?;
        g.mul(m, m)
    }));
    out.push(fd("standardize_cols", &s, |g| {
        let x = g.param("x")?;
        Ok(g.standardize_cols(x, BN_EPS)?.0)
    }));
    out.push(fd("row_norms", &s, |g| {
        let x = g.param("x")?;
        g.row_norms(x)
    }));
    out.push(fd("transpose", &s, |g| {
        let x = g.param("x")?;
        g.transpose(x)
    }));
    out.push(fd("reshape", &s, |g| {
        let x = g.param("x")?;
        g.reshape(x, 2, 8)
    }));
    out.push(fd("slice_rows", &s, |g| {
        let x = g.param("x")?;
        g.slice_rows(x, 1, 2)
    }));
    out.push(fd("slice_cols", &s, |g| {
        let x = g.param("x")?;
        g.slice_cols(x, 2, 2)
    }));
    out.push(fd("gather_rows", &s, |g| {
        let x = g.param("x")?;
        g.gather_rows(x, &[3, 0, 3, 1, 1])
    }));
    let s = store(&[("h", 5, 3), ("gamma", 1, 3), ("beta", 1, 3)], 4);
    out.push(fd("batch_norm", &s, |g| {
        let (h, gamma, beta) = (g.param("h")?, g.param("gamma")?, g.param("beta")?);
        let running = RunningStats::new(3);
        Ok(batch_norm(g, h, gamma, beta, BnMode::Train, &running, BN_EPS)?.0)
    }));
    out
}

fn adjacency() -> Matrix {
    Matrix::from_rows(&[
        vec![0.0, 1.0, 1.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.0, 1.0, 0.0, 0.0],
    ])
    .unwrap()
}

pub fn layers() -> Vec<Check> {
    let mut out = Vec::new();
    let d = 3;
    let mut s = store(&[("x", 4, 1), ("h", 4, d)], 10);
    let mut rng = BfRng::new(11);
    Embedding::init(&mut s, "emb", d, &mut rng).unwrap();
    out.push(fd("embed_genes", &s, |g| {
        let x = g.param("x")?;
        let e = Embedding::bind(g, "emb")?;
        embed_genes(g, x, &e)
    }));
    for mode in [UpdateMode::Sum, UpdateMode::Concat] {
        let mut s = s.clone();
        Attention::init(&mut s, "att", d, mode, &mut rng).unwrap();
        out.push(fd(&format!("gat_propagate ({mode:?})"), &s, |g| {
            let h = g.param("h")?;
            let att = Attention::bind(g, "att", mode)?;
            gat_propagate(g, h, &adjacency(), &att, mode)
        }));
    }
    let incidence = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let op = hypergraph_operator(&incidence).unwrap();
    let mut s2 = s.clone();
    s2.insert("w", random(d, d, 12), true).unwrap();
    out.push(fd("hypergraph_propagate", &s2, |g| {
        let (h, w) = (g.param("h")?, g.param("w")?);
        hypergraph_propagate(g, h, &op, w, Activation::Tanh)
    }));
    let mask = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]).unwrap();
    let mut s3 = s.clone();
    s3.insert("w", random(2, 4, 13), true).unwrap();
    s3.insert("b", random(2, 1, 14), true).unwrap();
    out.push(fd("masked_dense", &s3, |g| {
        let (h, w, b) = (g.param("h")?, g.param("w")?, g.param("b")?);
        masked_dense(g, h, &mask, w, b, Activation::Tanh)
    }));
    let mut s4 = s.clone();
    EdgeScorer::init(&mut s4, "sc", d, &mut rng).unwrap();
    s4.insert("w", random(d, d, 15), true).unwrap();
    out.push(fd("edge_intensity", &s4, |g| {
        let h = g.param("h")?;
        let sc = EdgeScorer::bind(g, "sc")?;
        edge_intensity(g, h, &sc)
    }));
    out.push(fd("enhanced_propagate", &s4, |g| {
        let (h, w) = (g.param("h")?, g.param("w")?);
        let sc = EdgeScorer::bind(g, "sc")?;
        let omega = edge_intensity(g, h, &sc)?;
        let a = enhanced_adjacency(g, omega, &adjacency(), 0.1)?;
        enhanced_propagate(g, h, a, w, Activation::Tanh)
    }));
    let (hid, width) = (3, 4);
    let s5 = store(
        &[("x", 2, width), ("h0", 2, hid), ("c0", 2, hid), ("rnn.wx", width, 4 * hid), ("rnn.wh", hid, 4 * hid), ("rnn.b", 1, 4 * hid)],
        16,
    );
    out.push(fd("lstm_step", &s5, |g| {
        let cell = LstmCell::bind(g, "rnn")?;
        let (x, h, c) = (g.param("x")?, g.param("h0")?, g.param("c0")?);
        let (h1, c1) = cell.step(g, x, h, c)?;
        let (h2, c2) = cell.step(g, x, h1, c1)?;
        g.hconcat(&[h2, c2])
    }));
    out
}

fn cnf_field() -> CnfField {
    let s = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap();
    let cfg = FieldConfig {
        channels: 2,
        time_features: 2,
        hyper_hidden: 3,
        ..FieldConfig::default()
    };
    CnfField::new(cfg, vec![s.clone(), Matrix::identity(3)], &mut BfRng::new(17)).unwrap()
}

pub fn trajectory() -> Vec<Check> {
    let field = cnf_field();
    let x = random(2, 3, 18);
    vec![
        fd("cnf_vector_field", field.params(), |g| {
            let x = g.constant(x.clone());
            field.eval_graph(g, 1, x, 0.3)
        }),
        fd("cnf_rk4_backward_map", field.params(), |g| {
            let x = g.constant(x.clone());
            integrate_graph(&field, g, x, 1.0, 0.0, 4)
        }),
    ]
}

/// Gene level of 4 with edges, protein level of 2 with one interaction,
/// two pathways over the proteins.
pub fn toy_kb() -> KnowledgeBase {
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let genes = Level::new("gene", names("g", 4), adjacency(), false).unwrap();
    let mut ap = Matrix::zeros(2, 2);
    ap.set(0, 1, 1.0);
    let prots = Level::new("protein", names("p", 2), ap, false).unwrap();
    let r = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let paths = Level::new("pathway", names("P", 2), Matrix::zeros(2, 2), true).unwrap();
    let m1 = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 1.0]]).unwrap();
    KnowledgeBase::new(vec![genes, prots, paths], vec![m1, r.transpose()], Some(r)).unwrap()
}

fn model_check(name: &str, cfg: ModelConfig) -> Check {
    let kb = Arc::new(toy_kb());
    let model = match BfregModel::new(cfg, kb, &mut BfRng::new(19)) {
        Ok(m) => m,
        Err(e) => return Check::new(name, false, format!("error: {e}")),
    };
    let batch = random(3, 4, 20);
    fd(name, model.params(), |g| {
        let xs: Vec<NodeId> = (0..3)
            .map(|r| g.constant(Matrix::col_vector(batch.row(r)).unwrap()))
            .collect();
        let trunk = model.trunk(g, &xs, BnMode::Train)?;
        model.head(g, &trunk)
    })
}

pub fn models() -> Vec<Check> {
    let base = ModelConfig {
        d: 2,
        head_hidden: vec![3],
        head_output: 4,
        ..ModelConfig::default()
    };
    vec![
        model_check("forward basic (all levels)", base.clone()),
        model_check(
            "forward basic concat, two hops",
            ModelConfig {
                update_mode: UpdateMode::Concat,
                hops: 2,
                ..base.clone()
            },
        ),
        model_check(
            "forward enhanced (all levels)",
            ModelConfig {
                variant: Variant::Enhanced,
                alpha: vec![0.1, 0.05, 0.0],
                ..base.clone()
            },
        ),
        model_check(
            "forward perceptron",
            ModelConfig {
                variant: Variant::Perceptron,
                ..base
            },
        ),
    ]
}

pub fn suite() -> Vec<Check> {
    let mut out = primitives();
    out.extend(layers());
    out.extend(trajectory());
    out.extend(models());
    out
}
