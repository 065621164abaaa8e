//! Exact structural properties: mask invariance, α = 0 locality,
//! permutation equivariance and hypergraph constant preservation.

use std::sync::Arc;

use bfreg_core::layers::*;
use bfreg_core::model::{BfregModel, ModelConfig, Variant};
use bfreg_core::numerics::*;
use bfreg_core::rng::BfRng;
use bfreg_core::Result;

use super::gradients::toy_kb;
use super::Check;

pub const TOL: f64 = 1e-9;

fn random(rows: usize, cols: usize, rng: &mut BfRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0)).unwrap()
}

fn random_adjacency(n: usize, p: f64, rng: &mut BfRng) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i != j && rng.bernoulli(p) { 1.0 } else { 0.0 }).unwrap()
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    m.select_rows(perm)
}

fn permute_square(m: &Matrix, perm: &[usize]) -> Matrix {
    m.select_rows(perm).select_cols(perm)
}

fn diff_check(name: &str, a: &Matrix, b: &Matrix) -> Check {
    let d = a.max_abs_diff(b);
    Check::new(name, d <= TOL, format!("max abs diff {d:.2e}"))
}

fn run<F>(store: &ParamStore, build: F) -> Result<Matrix>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    evaluate(store, build)
}

fn gat_store(d: usize, mode: UpdateMode, rng: &mut BfRng) -> ParamStore {
    let mut s = ParamStore::new();
    Attention::init(&mut s, "att", d, mode, rng).unwrap();
    s
}

fn gat(s: &ParamStore, h: &Matrix, a: &Matrix, mode: UpdateMode) -> Result<Matrix> {
    run(s, |g| {
        let att = Attention::bind(g, "att", mode)?;
        let h = g.constant(h.clone());
        gat_propagate(g, h, a, &att, mode)
    })
}

fn enhanced_store(d: usize, rng: &mut BfRng) -> ParamStore {
    let mut s = ParamStore::new();
    EdgeScorer::init(&mut s, "sc", d, rng).unwrap();
    s.insert("w", random(d, d, rng), true).unwrap();
    s
}

fn enhanced(s: &ParamStore, h: &Matrix, a: &Matrix, alpha: f64) -> Result<Matrix> {
    run(s, |g| {
        let sc = EdgeScorer::bind(g, "sc")?;
        let w = g.param("w")?;
        let h = g.constant(h.clone());
        let om = edge_intensity(g, h, &sc)?;
        let ap = enhanced_adjacency(g, om, a, alpha)?;
        enhanced_propagate(g, h, ap, w, Activation::Tanh)
    })
}

fn dense(w: &Matrix, mask: &Matrix, h: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut s = ParamStore::new();
    s.insert("w", w.clone(), true)?;
    s.insert("b", b.clone(), true)?;
    run(&s, |g| {
        let (w, b) = (g.param("w")?, g.param("b")?);
        let h = g.constant(h.clone());
        masked_dense(g, h, mask, w, b, Activation::Tanh)
    })
}

fn hyper(op: &Matrix, h: &Matrix, w: &Matrix) -> Result<Matrix> {
    let mut s = ParamStore::new();
    s.insert("w", w.clone(), true)?;
    run(&s, |g| {
        let w = g.param("w")?;
        let h = g.constant(h.clone());
        hypergraph_propagate(g, h, op, w, Activation::Identity)
    })
}

/// Perturbs W wherever M = 0 and requires a bit-identical output.
pub fn mask_invariance(rng: &mut BfRng) -> Result<Vec<Check>> {
    let (n_out, n_in, d) = (5, 7, 3);
    let mask = Matrix::from_fn(n_out, n_in, |_, _| if rng.bernoulli(0.4) { 1.0 } else { 0.0 })?;
    let w = random(n_out, n_in, rng);
    let h = random(n_in, d, rng);
    let b = random(n_out, 1, rng);
    let mut w2 = w.clone();
    for i in 0..n_out {
        for j in 0..n_in {
            if mask.get(i, j) == 0.0 {
                w2.set(i, j, rng.uniform(-1e3, 1e3));
            }
        }
    }
    let a = dense(&w, &mask, &h, &b)?;
    let b2 = dense(&w2, &mask, &h, &b)?;
    let mut out = vec![Check::new("masked_dense mask invariance", a.bit_eq(&b2), "perturbed off-mask weights")];

    // End to end: the basic model's inter-level weights outside M.
    let kb = Arc::new(toy_kb());
    let cfg = ModelConfig {
        d: 2,
        head_hidden: vec![3],
        head_output: 2,
        ..ModelConfig::default()
    };
    let model = BfregModel::new(cfg, Arc::clone(&kb), rng)?;
    let mut other = model.clone();
    for l in 0..2 {
        let name = format!("l{l}.dense.w");
        let m = kb.mapping(l);
        let mut w = other.params().get(&name)?.clone();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if m.get(i, j) == 0.0 {
                    w.set(i, j, rng.uniform(-50.0, 50.0));
                }
            }
        }
        other.params_mut().set(&name, w)?;
    }
    let x = random(4, 4, rng);
    let p1 = model.predict(&x)?;
    let p2 = other.predict(&x)?;
    out.push(Check::new("basic model end-to-end mask invariance", p1.bit_eq(&p2), "perturbed off-mapping weights"));
    Ok(out)
}

/// Node i's output may depend only on {i} ∪ in-neighbors(i).
pub fn locality(rng: &mut BfRng) -> Result<Vec<Check>> {
    let (n, d) = (7, 3);
    let a = random_adjacency(n, 0.3, rng);
    let h = random(n, d, rng);
    let mut out = Vec::new();

    let s = enhanced_store(d, rng);
    let ap = run(&s, |g| {
        let sc = EdgeScorer::bind(g, "sc")?;
        let hn = g.constant(h.clone());
        let om = edge_intensity(g, hn, &sc)?;
        enhanced_adjacency(g, om, &a, 0.0)
    })?;
    let sparse = (0..n).all(|i| (0..n).all(|j| (a.get(i, j) != 0.0) || ap.get(i, j) == 0.0));
    out.push(Check::new("alpha=0 keeps the sparsity of A", sparse, "off-support entries exactly 0"));

    let gs = gat_store(d, UpdateMode::Sum, rng);
    for i in 0..n {
        let mut h2 = h.clone();
        for j in 0..n {
            if j != i && a.get(i, j) == 0.0 {
                for c in 0..d {
                    h2.set(j, c, rng.uniform(-5.0, 5.0));
                }
            }
        }
        let e1 = enhanced(&s, &h, &a, 0.0)?;
        let e2 = enhanced(&s, &h2, &a, 0.0)?;
        let g1 = gat(&gs, &h, &a, UpdateMode::Sum)?;
        let g2 = gat(&gs, &h2, &a, UpdateMode::Sum)?;
        let de = e1.select_rows(&[i]).max_abs_diff(&e2.select_rows(&[i]));
        let dg = g1.select_rows(&[i]).max_abs_diff(&g2.select_rows(&[i]));
        out.push(Check::new(format!("enhanced alpha=0 locality node {i}"), de <= TOL, format!("{de:.2e}")));
        out.push(Check::new(format!("gat locality node {i}"), dg <= TOL, format!("{dg:.2e}")));
    }
    Ok(out)
}

pub fn equivariance(rng: &mut BfRng) -> Result<Vec<Check>> {
    let (n, d) = (6, 3);
    let a = random_adjacency(n, 0.35, rng);
    let h = random(n, d, rng);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let (ph, pa) = (permute_rows(&h, &perm), permute_square(&a, &perm));
    let mut out = Vec::new();
    for mode in [UpdateMode::Sum, UpdateMode::Concat] {
        let s = gat_store(d, mode, rng);
        let lhs = gat(&s, &ph, &pa, mode)?;
        let rhs = permute_rows(&gat(&s, &h, &a, mode)?, &perm);
        out.push(diff_check(&format!("gat equivariance ({mode:?})"), &lhs, &rhs));
    }
    let s = enhanced_store(d, rng);
    for alpha in [0.0, 0.3] {
        let lhs = enhanced(&s, &ph, &pa, alpha)?;
        let rhs = permute_rows(&enhanced(&s, &h, &a, alpha)?, &perm);
        out.push(diff_check(&format!("enhanced equivariance (alpha={alpha})"), &lhs, &rhs));
    }
    let mask = Matrix::from_fn(4, n, |_, _| if rng.bernoulli(0.5) { 1.0 } else { 0.0 })?;
    let w = random(4, n, rng);
    let b = random(4, 1, rng);
    let lhs = dense(&w.select_cols(&perm), &mask.select_cols(&perm), &ph, &b)?;
    let rhs = dense(&w, &mask, &h, &b)?;
    out.push(diff_check("masked_dense equivariance", &lhs, &rhs));
    let inc = Matrix::from_fn(n, 3, |i, e| if (i + e) % 3 == 0 || i == e { 1.0 } else { 0.0 })?;
    let wh = random(d, d, rng);
    let lhs = hyper(&hypergraph_operator(&inc.select_rows(&perm))?, &ph, &wh)?;
    let rhs = permute_rows(&hyper(&hypergraph_operator(&inc)?, &h, &wh)?, &perm);
    out.push(diff_check("hypergraph equivariance", &lhs, &rhs));
    Ok(out)
}

pub fn constant_preservation(rng: &mut BfRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for trial in 0..5 {
        let (n, e, d) = (8, 4, 3);
        let mut inc = Matrix::from_fn(n, e, |_, _| if rng.bernoulli(0.4) { 1.0 } else { 0.0 })?;
        for c in 0..e {
            if inc.col(c).iter().all(|v| *v == 0.0) {
                inc.set(rng.below(n), c, 1.0);
            }
        }
        let row: Vec<f64> = (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let h = Matrix::from_fn(n, d, |_, c| row[c])?;
        let y = hyper(&hypergraph_operator(&inc)?, &h, &Matrix::identity(d))?;
        let worst = (0..n)
            .filter(|i| inc.row(*i).iter().any(|v| *v != 0.0))
            .flat_map(|i| (0..d).map(move |c| (i, c)))
            .map(|(i, c)| (y.get(i, c) - row[c]).abs())
            .fold(0.0, f64::max);
        out.push(Check::new(format!("hypergraph constant preservation #{trial}"), worst <= TOL, format!("{worst:.2e}")));
    }
    Ok(out)
}

/// Zero message weights collapse the gene-only basic model to batch-normed
/// embeddings: the enhanced and perceptron trunks then agree exactly.
pub fn zero_message_collapse(rng: &mut BfRng) -> Result<Vec<Check>> {
    let kb = Arc::new(toy_kb());
    let cfg = ModelConfig {
        d: 2,
        head_output: 3,
        levels: vec!["gene".into()],
        ..ModelConfig::default()
    };
    let mut basic = BfregModel::new(cfg.clone(), Arc::clone(&kb), &mut BfRng::new(3))?;
    basic.params_mut().set("l0.hop0.wv", Matrix::zeros(2, 2))?;
    let perceptron = BfregModel::new(
        ModelConfig {
            variant: Variant::Perceptron,
            ..cfg
        },
        kb,
        &mut BfRng::new(3),
    )?;
    let mut p = perceptron.clone();
    for name in ["emb.w1", "emb.b1", "emb.w2", "emb.b2", "head.0.w", "head.0.b"] {
        p.params_mut().set(name, basic.params().get(name)?.clone())?;
    }
    let x = random(5, 4, rng);
    Ok(vec![diff_check("zero-message basic equals perceptron", &basic.predict(&x)?, &p.predict(&x)?)])
}

pub fn suite() -> Vec<Check> {
    let mut rng = BfRng::new(2024);
    let parts: [(&str, fn(&mut BfRng) -> Result<Vec<Check>>); 5] = [
        ("mask invariance", mask_invariance),
        ("locality", locality),
        ("equivariance", equivariance),
        ("constant preservation", constant_preservation),
        ("zero-message collapse", zero_message_collapse),
    ];
    let mut out = Vec::new();
    for (name, f) in parts {
        match f(&mut rng) {
            Ok(c) => out.extend(c),
            Err(e) => out.push(Check::new(name, false, format!("error: {e}"))),
        }
    }
    out
}
