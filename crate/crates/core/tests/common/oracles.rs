//! Hand-computed reference values for each module, plus short optimizer runs
//! whose targets are reachable by construction.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use bfreg_core::cli;
use bfreg_core::discovery::rank_intensities;
use bfreg_core::knowledge::{load_knowledge, KnowledgeBase, Level};
use bfreg_core::layers::*;
use bfreg_core::model::{BfregModel, ModelConfig};
use bfreg_core::numerics::*;
use bfreg_core::rng::BfRng;
use bfreg_core::synth::{gen_expression_static, gen_knowledge, gen_labels, relax_step, static_response, SynthSpec};
use bfreg_core::tasks::*;
use bfreg_core::trajectory::{
    integrate_ode, log_density_change, simulate, wasserstein_distance, AffineField, CnfField, FieldConfig,
};
use bfreg_core::Result;

use super::Check;

const TIGHT: f64 = 1e-12;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn store(entries: &[(&str, Matrix)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in entries {
        s.insert(*k, v.clone(), true).unwrap();
    }
    s
}

fn max_diff(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    got.iter().zip(want).fold(0.0, |a, (g, w)| a.max((g - w).abs()))
}

fn near(name: &str, got: &[f64], want: &[f64], tol: f64) -> Check {
    let err = max_diff(got, want);
    Check::new(name, err <= tol, format!("got {got:?} want {want:?} err {err:.2e}"))
}

fn run(name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    Check::from_result(name, f())
}

fn leaky(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn sigmoid_ref(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn numerics() -> Vec<Check> {
    let w3 = store(&[("w", Matrix::scalar(3.0).unwrap())]);
    let square = |g: &mut Graph<'_>| {
        let w = g.param("w")?;
        g.mul(w, w)
    };
    vec![
        run("numerics/square value and gradient", || {
            let (v, grads) = evaluate_with_gradients(&w3, square)?;
            let got = [v.as_scalar().unwrap_or(f64::NAN), grads.get("w").map_or(f64::NAN, |g| g.get(0, 0))];
            Ok(Check::exact("", &got, &[9.0, 6.0]))
        }),
        run("numerics/central difference of square", || {
            let r = finite_difference_check(&w3, square, FdConfig { h: 1e-5, tol: 1e-6, floor: 1e-3 })?;
            Ok(Check::new("", r.passed() && r.max_rel_err() < 1e-6, format!("rel err {:.2e}", r.max_rel_err())))
        }),
        run("numerics/first adam step", || {
            let mut s = store(&[("w", Matrix::scalar(0.0).unwrap())]);
            let mut grads = Gradients::default();
            grads.insert("w", Matrix::scalar(1.0).unwrap());
            let mut st = AdamState::new(AdamConfig::with_lr(0.1));
            adam_step(&mut st, &grads, &mut s)?;
            Ok(Check::close("", s.get("w")?.get(0, 0), -0.1, 1e-6))
        }),
        run("numerics/batch norm of two values", || {
            let s = ParamStore::new();
            let mut g = Graph::new(&s);
            let x = g.constant(Matrix::col_vector(&[1.0, 3.0])?);
            let ga = g.constant(Matrix::filled(1, 1, 1.0));
            let be = g.constant(Matrix::zeros(1, 1));
            let (y, _) = batch_norm(&mut g, x, ga, be, BnMode::Train, &RunningStats::new(1), 0.0)?;
            Ok(Check::exact("", g.value(y).data(), &[-1.0, 1.0]))
        }),
    ]
}

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

/// g1 -> g2 -> g3; g1,g2 -> p1; g3 -> p2; p1 <-> p2; pathways {p1}, {p1,p2}.
fn chain3() -> Result<KnowledgeBase> {
    let mut a = Matrix::zeros(3, 3);
    a.set(1, 0, 1.0);
    a.set(2, 1, 1.0);
    let ap = m(&[&[0., 1.], &[1., 0.]]);
    let m1 = m(&[&[1., 1., 0.], &[0., 0., 1.]]);
    let r = m(&[&[1., 1.], &[0., 1.]]);
    KnowledgeBase::new(
        vec![
            Level::new("Gene", names("g", 3), a, false)?,
            Level::new("Protein", names("p", 2), ap, false)?,
            Level::new("Pathway", names("P", 2), Matrix::zeros(2, 2), true)?,
        ],
        vec![m1, r.transpose()],
        Some(r),
    )
}

fn knowledge() -> Vec<Check> {
    vec![
        run("knowledge/transcription of small files", || {
            let tmp = tempfile::tempdir().expect("temp dir");
            let dir = tmp.path();
            write(dir, "grn.tsv", "g1\tg2\n");
            write(dir, "map.tsv", "g1\tp1\ng2\tp1\n");
            write(dir, "path.tsv", "p1\tP1\n");
            write(
                dir,
                "manifest.toml",
                "[[level]]\nname = \"Gene\"\nedges = \"grn.tsv\"\n\n[[level]]\nname = \"Protein\"\nmapping = \"map.tsv\"\n\n[[level]]\nname = \"Pathway\"\nmembership = \"path.tsv\"\n",
            );
            let kb = load_knowledge(&dir.join("manifest.toml"))?;
            let ok = kb.level(0).adjacency.data() == [0.0, 0.0, 1.0, 0.0]
                && kb.mapping(0).data() == [1.0, 1.0]
                && kb.incidence().map(|r| r.data().to_vec()) == Some(vec![1.0]);
            Ok(Check::new(
                "",
                ok,
                format!("A {:?} M1 {:?} R {:?}", kb.level(0).adjacency.data(), kb.mapping(0).data(), kb.incidence()),
            ))
        }),
        run("knowledge/restriction closure", || {
            let r = chain3()?.restrict_to_genes(&names("g", 2))?;
            let ok = r.level(1).nodes == vec!["p1".to_string()]
                && r.level(1).edge_count() == 0
                && r.level(0).edges() == vec![("g1".to_string(), "g2".to_string())];
            Ok(Check::new("", ok, format!("proteins {:?}", r.level(1).nodes)))
        }),
        run("knowledge/node removal on a path", || {
            let kb = chain3()?;
            let r = kb.remove_node_edges("Gene", "g2")?;
            let a = &r.level(0).adjacency;
            let ok = a.shape() == (3, 3)
                && a.count_nonzero() == 0
                && r.level(1) == kb.level(1)
                && r.genes() == kb.genes();
            Ok(Check::new("", ok, format!("{:?}", a.data())))
        }),
    ]
}

fn layers() -> Vec<Check> {
    vec![
        run("layers/embedding", || {
            let s = store(&[
                ("emb.w1", m(&[&[1.0, 0.0]])),
                ("emb.b1", m(&[&[0.5, -0.5]])),
                ("emb.w2", m(&[&[1.0, 2.0], &[3.0, 4.0]])),
                ("emb.b2", m(&[&[0.1, 0.2]])),
            ]);
            let out = evaluate(&s, |g| {
                let e = Embedding::bind(g, "emb")?;
                let x = g.constant(Matrix::col_vector(&[1.0])?);
                embed_genes(g, x, &e)
            })?;
            let (z0, z1) = (1.5f64.tanh(), (-0.5f64).tanh());
            Ok(near("", out.data(), &[z0 + 3.0 * z1 + 0.1, 2.0 * z0 + 4.0 * z1 + 0.2], TIGHT))
        }),
        run("layers/attention over two nodes", || {
            // Node 2 regulates node 1, so node 1 attends over {1, 2}.
            let s = store(&[
                ("att.wq", m(&[&[2.0]])),
                ("att.wk", m(&[&[3.0]])),
                ("att.wv", m(&[&[0.5]])),
                ("att.a", m(&[&[1.0], &[-1.0]])),
            ]);
            let h = [1.0, 2.0];
            let out = evaluate(&s, |g| {
                let att = Attention::bind(g, "att", UpdateMode::Sum)?;
                let hn = g.constant(Matrix::col_vector(&h)?);
                gat_propagate(g, hn, &m(&[&[0., 1.], &[0., 0.]]), &att, UpdateMode::Sum)
            })?;
            let e = |j: usize| leaky(2.0 * h[0] - 3.0 * h[j]);
            let z = e(0).exp() + e(1).exp();
            let s0 = (e(0).exp() * 0.5 * h[0] + e(1).exp() * 0.5 * h[1]) / z;
            Ok(near("", out.data(), &[s0 + h[0], 0.5 * h[1] + h[1]], TIGHT))
        }),
        run("layers/hypergraph", || {
            let p = hypergraph_operator(&m(&[&[1., 0.], &[1., 1.], &[0., 1.]]))?;
            let s = store(&[("w", m(&[&[1.0]]))]);
            let out = evaluate(&s, |g| {
                let w = g.param("w")?;
                let h = g.constant(m(&[&[1.0], &[2.0], &[3.0]]));
                hypergraph_propagate(g, h, &p, w, Activation::Identity)
            })?;
            Ok(near("", out.data(), &[1.5, 2.0, 2.5], TIGHT))
        }),
        run("layers/masked dense", || {
            let s = store(&[("w", m(&[&[2.0, 9.0], &[9.0, 3.0]])), ("b", Matrix::zeros(2, 1))]);
            let out = evaluate(&s, |g| {
                let (w, b) = (g.param("w")?, g.param("b")?);
                let h = g.constant(m(&[&[1.0], &[1.0]]));
                masked_dense(g, h, &Matrix::identity(2), w, b, Activation::Identity)
            })?;
            Ok(Check::exact("", out.data(), &[2.0, 3.0]))
        }),
        run("layers/edge intensity", || {
            let s = store(&[
                ("sc.w1", m(&[&[1.0], &[2.0]])),
                ("sc.b1", m(&[&[0.1]])),
                ("sc.w2", m(&[&[3.0]])),
                ("sc.b2", m(&[&[-0.5]])),
            ]);
            let h = [0.3, 3f64.ln()];
            let out = evaluate(&s, |g| {
                let sc = EdgeScorer::bind(g, "sc")?;
                let hn = g.constant(Matrix::col_vector(&h)?);
                edge_intensity(g, hn, &sc)
            })?;
            let want: Vec<f64> = (0..4)
                .map(|k| sigmoid_ref(3.0 * (h[k / 2] + 2.0 * h[k % 2] + 0.1).tanh() - 0.5))
                .collect();
            Ok(near("", out.data(), &want, TIGHT))
        }),
        run("layers/enhanced adjacency", || {
            let s = ParamStore::new();
            let out = evaluate(&s, |g| {
                let om = g.constant(Matrix::filled(2, 2, 0.5));
                enhanced_adjacency(g, om, &m(&[&[0., 1.], &[0., 0.]]), 0.1)
            })?;
            Ok(near("", &[out.get(0, 1), out.get(1, 0)], &[0.5, 0.05], 1e-15))
        }),
        run("layers/enhanced propagation", || {
            let s = store(&[("w", m(&[&[2.0]]))]);
            let out = evaluate(&s, |g| {
                let w = g.param("w")?;
                let a = g.constant(m(&[&[0.0, 0.5], &[0.1, 0.0]]));
                let h = g.constant(m(&[&[1.0], &[2.0]]));
                enhanced_propagate(g, h, a, w, Activation::Identity)
            })?;
            Ok(near("", out.data(), &[4.0, 4.2], TIGHT))
        }),
    ]
}

/// Two genes (g2 regulates g1) feeding one protein.
fn two_gene_kb() -> Result<Arc<KnowledgeBase>> {
    let genes = Level::new("gene", names("g", 2), m(&[&[0., 1.], &[0., 0.]]), false)?;
    let prot = Level::new("protein", names("p", 1), Matrix::zeros(1, 1), false)?;
    Ok(Arc::new(KnowledgeBase::new(vec![genes, prot], vec![m(&[&[1., 1.]])], None)?))
}

fn hand_model(kb: Arc<KnowledgeBase>, head_output: usize) -> Result<BfregModel> {
    let cfg = ModelConfig {
        d: 1,
        head_output,
        ..ModelConfig::default()
    };
    BfregModel::new(cfg, kb, &mut BfRng::new(1))
}

fn set_all(model: &mut BfregModel, entries: &[(&str, Matrix)]) -> Result<Check> {
    for (k, v) in entries {
        model.params_mut().set(k, v.clone())?;
    }
    let ok = model.params().len() == entries.len();
    Ok(Check::new("", ok, format!("{} parameters, {} set", model.params().len(), entries.len())))
}

fn model() -> Vec<Check> {
    vec![
        run("model/end-to-end scalar pipeline", || {
            let mut model = hand_model(two_gene_kb()?, 1)?;
            let inventory = set_all(
                &mut model,
                &[
                    ("emb.w1", m(&[&[0.8]])),
                    ("emb.b1", m(&[&[0.1]])),
                    ("emb.w2", m(&[&[1.5]])),
                    ("emb.b2", m(&[&[-0.2]])),
                    ("l0.hop0.wq", m(&[&[2.0]])),
                    ("l0.hop0.wk", m(&[&[3.0]])),
                    ("l0.hop0.wv", m(&[&[0.5]])),
                    ("l0.hop0.a", m(&[&[1.0], &[-1.0]])),
                    ("l0.bn.gamma", m(&[&[1.2, 0.7]])),
                    ("l0.bn.beta", m(&[&[0.1, -0.3]])),
                    ("l0.dense.w", m(&[&[0.6, -0.4]])),
                    ("l0.dense.b", m(&[&[0.05]])),
                    ("l1.hop0.wq", m(&[&[1.0]])),
                    ("l1.hop0.wk", m(&[&[1.0]])),
                    ("l1.hop0.wv", m(&[&[0.3]])),
                    ("l1.hop0.a", m(&[&[0.2], &[0.4]])),
                    ("l1.bn.gamma", m(&[&[0.9]])),
                    ("l1.bn.beta", m(&[&[0.2]])),
                    ("head.0.w", m(&[&[1.7]])),
                    ("head.0.b", m(&[&[-0.5]])),
                ],
            )?;
            if !inventory.ok {
                return Ok(inventory);
            }
            let samples: [[f64; 2]; 2] = [[0.4, -1.1], [2.0, 0.3]];
            let bn = |v: f64, gamma: f64, beta: f64| v / (1.0 + BN_EPS).sqrt() * gamma + beta;
            let want: Vec<f64> = samples
                .iter()
                .map(|x| {
                    let e: Vec<f64> = x.iter().map(|v| 1.5 * (0.8 * v + 0.1).tanh() - 0.2).collect();
                    let logit = |j: usize| leaky(2.0 * e[0] - 3.0 * e[j]);
                    let z = logit(0).exp() + logit(1).exp();
                    let s0 = (logit(0).exp() * 0.5 * e[0] + logit(1).exp() * 0.5 * e[1]) / z;
                    let h0 = bn(s0 + e[0], 1.2, 0.1);
                    let h1 = bn(1.5 * e[1], 0.7, -0.3);
                    let p = (0.6 * h0 - 0.4 * h1 + 0.05).tanh();
                    let hp = bn(1.3 * p, 0.9, 0.2);
                    1.7 * hp - 0.5
                })
                .collect();
            let got = model.predict(&m(&[&samples[0], &samples[1]]))?;
            Ok(near("", got.data(), &want, TIGHT))
        }),
        run("model/head dot product", || {
            let kb = Arc::new(KnowledgeBase::new(
                vec![Level::new("gene", names("g", 3), Matrix::zeros(3, 3), false)?],
                vec![],
                None,
            )?);
            let mut model = hand_model(kb, 1)?;
            model.params_mut().set("head.0.w", m(&[&[0.5], &[-1.0], &[2.0]]))?;
            model.params_mut().set("head.0.b", m(&[&[0.25]]))?;
            let out = evaluate(model.params(), |g| {
                let h = g.constant(m(&[&[1.0, 2.0, 3.0], &[-1.0, 0.0, 0.5]]));
                model.head_on(g, h)
            })?;
            Ok(near("", out.data(), &[0.5 - 2.0 + 6.0 + 0.25, -0.5 + 1.0 + 0.25], TIGHT))
        }),
        run("model/vector head", || {
            let kb = Arc::new(KnowledgeBase::new(
                vec![Level::new("gene", names("g", 2), Matrix::zeros(2, 2), false)?],
                vec![],
                None,
            )?);
            let mut model = hand_model(kb, 2)?;
            model.params_mut().set("head.0.w", m(&[&[1.0, 2.0], &[3.0, -1.0]]))?;
            model.params_mut().set("head.0.b", m(&[&[0.5, -0.5]]))?;
            let out = evaluate(model.params(), |g| {
                let h = g.constant(m(&[&[2.0, 1.0]]));
                model.head_on(g, h)
            })?;
            Ok(Check::exact("", out.data(), &[2.0 + 3.0 + 0.5, 4.0 - 1.0 - 0.5]))
        }),
    ]
}

fn gaussian(rows: usize, cols: usize, rng: &mut BfRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal()).unwrap()
}

fn empty_kb(genes: usize) -> Result<Arc<KnowledgeBase>> {
    Ok(Arc::new(KnowledgeBase::new(
        vec![Level::new("gene", names("g", genes), Matrix::zeros(genes, genes), false)?],
        vec![],
        None,
    )?))
}

fn small_model(kb: Arc<KnowledgeBase>, head_hidden: Vec<usize>, head_output: usize, seed: u64) -> Result<BfregModel> {
    let cfg = ModelConfig {
        head_hidden,
        head_output,
        ..ModelConfig::default()
    };
    BfregModel::new(cfg, kb, &mut BfRng::new(seed))
}

fn copy_data(genes: usize, samples: usize, seed: u64) -> Result<ExpressionDataset> {
    let values = gaussian(samples, genes, &mut BfRng::new(seed));
    ExpressionDataset::new(names("g", genes), values, None, None)
}

fn all_train(n: usize) -> Split {
    Split {
        train: (0..n).collect(),
        validation: vec![],
        test: vec![],
        seed: 0,
    }
}

/// Frames of series that never change.
fn constant_frames(genes: usize, series: usize, steps: usize, seed: u64) -> Result<FrameSet> {
    let x = gaussian(series, genes, &mut BfRng::new(seed));
    FrameSet::new(names("g", genes), (0..steps).map(|t| t as f64).collect(), vec![x; steps])
}

fn final_loss(r: &TrainReport) -> f64 {
    r.train_losses.last().copied().unwrap_or(f64::NAN)
}

fn tasks() -> Vec<Check> {
    let copy = TrainConfig {
        lr: 1e-3,
        epochs: 500,
        batch_size: 64,
        mask_prob: 0.0,
        seed: 0,
    };
    vec![
        run("tasks/imputation loss skips zeros", || {
            Ok(Check::close("", imputation_loss(&[5.0, 2.0, 4.0], &[0.0, 2.0, 3.0])?, 0.5, 0.0))
        }),
        run("tasks/identity fixture", || {
            let data = copy_data(5, 64, 11)?;
            let mut model = small_model(empty_kb(5)?, vec![], 5, 0)?;
            let r = train_imputation(&mut model, &data, &all_train(64), &copy)?;
            Ok(Check::close("", final_loss(&r.train), 0.0, 1e-2))
        }),
        run("tasks/separable classes", || {
            let mut rng = BfRng::new(5);
            let labels: Vec<usize> = (0..64).map(|s| s % 2).collect();
            let values = Matrix::from_fn(64, 4, |s, c| {
                let shift = if c == labels[s] { 2.0 } else { 0.0 };
                shift + 0.3 * rng.normal()
            })?;
            let data = ExpressionDataset::new(names("g", 4), values, None, Some(labels))?;
            let mut model = small_model(empty_kb(4)?, vec![32], 2, 1)?;
            let cfg = TrainConfig { epochs: 200, ..copy.clone() };
            let r = train_classification(&mut model, &data, &all_train(64), &cfg)?;
            Ok(Check::close("", r.train_auc, 1.0, 0.0))
        }),
        run("tasks/macro auc with one inversion", || {
            let scores = m(&[&[0.9, 0.3], &[0.8, 0.6], &[0.1, 0.5], &[0.2, 0.7]]);
            Ok(Check::close("", macro_auc(&scores, &[0, 0, 1, 1])?, 0.875, 0.0))
        }),
        run("tasks/constant forecast", || {
            let frames = constant_frames(4, 64, 3, 21)?;
            let mut model = small_model(empty_kb(4)?, vec![], 8, 2)?;
            let split = Split {
                train: (0..56).collect(),
                validation: vec![],
                test: (56..64).collect(),
                seed: 0,
            };
            let cfg = TrainConfig { epochs: 1000, ..copy.clone() };
            let r = train_forecast_simultaneous(&mut model, &frames, &split, 2, &cfg)?;
            Ok(Check::close("", final_loss(&r.train), 0.0, 1e-3))
        }),
        run("tasks/recurrent identity dynamics", || {
            let frames = constant_frames(4, 256, 4, 22)?;
            let mut model = small_model(empty_kb(4)?, vec![], 4, 3)?;
            init_recurrent(&mut model, 32, &mut BfRng::new(4))?;
            let split = Split {
                train: (0..224).collect(),
                validation: vec![],
                test: (224..256).collect(),
                seed: 0,
            };
            let cfg = TrainConfig {
                lr: 5e-3,
                epochs: 1500,
                batch_size: 224,
                ..copy.clone()
            };
            let r = train_forecast_recurrent(&mut model, &frames, &split, 3, &cfg)?;
            Ok(Check::close("", r.mse, 0.0, 1e-2))
        }),
        run("tasks/recurrent cell gates", || {
            let mut b = vec![0.0; 8];
            b[0..2].copy_from_slice(&[-1e3, -1e3]);
            b[2..4].copy_from_slice(&[1e3, 1e3]);
            let step = |bias: Vec<f64>| -> Result<Vec<f64>> {
                let s = store(&[
                    ("cell.wx", Matrix::zeros(3, 8)),
                    ("cell.wh", Matrix::zeros(2, 8)),
                    ("cell.b", Matrix::row_vector(&bias)?),
                ]);
                let mut g = Graph::new(&s);
                let cell = LstmCell::bind(&mut g, "cell")?;
                let x = g.constant(Matrix::row_vector(&[5.0, -1.0, 2.0])?);
                let h = g.constant(Matrix::row_vector(&[0.3, 0.9])?);
                let c = g.constant(Matrix::row_vector(&[1.0, -4.0])?);
                let (_, c1) = cell.step(&mut g, x, h, c)?;
                Ok(g.value(c1).data().to_vec())
            };
            let open = step(vec![0.0; 8])?;
            let held = step(b)?;
            let ok = open == [0.5, -2.0] && held == [1.0, -4.0];
            Ok(Check::new("", ok, format!("half gates {open:?}, held {held:?}")))
        }),
        run("tasks/pearson correlation", || {
            Ok(Check::close("", pcc(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0])?, 0.982, 1e-3))
        }),
        run("tasks/head-only copy task", || {
            let data = copy_data(5, 64, 12)?;
            let pretrained = small_model(empty_kb(5)?, vec![32], 5, 5)?;
            let (_, r) = pretrain_finetune(&pretrained, vec![32], 5, &mut BfRng::new(6), |model| {
                train_imputation(model, &data, &all_train(64), &TrainConfig { epochs: 1500, ..copy.clone() })
            })?;
            Ok(Check::close("", final_loss(&r.train), 0.0, 1e-2))
        }),
    ]
}

fn trajectory() -> Vec<Check> {
    vec![
        run("trajectory/constant weights reduce to a linear field", || {
            let cfg = FieldConfig {
                channels: 1,
                activation: Activation::Identity,
                ..FieldConfig::default()
            };
            let mut f = CnfField::new(cfg, vec![Matrix::identity(3)], &mut BfRng::new(4))?;
            f.zero()?;
            let w = -0.7;
            let mut b2 = Matrix::zeros(1, 2 + 3);
            b2.set(0, 0, w);
            b2.set(0, 1, 1.0);
            f.params_mut().set("cnf.p0.h2.b", b2)?;
            let x = [1.0, -2.0, 4.0];
            let want: Vec<f64> = x.iter().map(|v| w * v).collect();
            Ok(near("", &f.vector_field_eval(&x, 0.5, (0.0, 1.0))?, &want, TIGHT))
        }),
        run("trajectory/exponential decay", || {
            let f = AffineField::linear(Matrix::identity(1).scale(-1.0)?);
            Ok(Check::close("", integrate_ode(&f, &[1.0], 0.0, 1.0, 100)?[0], (-1f64).exp(), 1e-6))
        }),
        run("trajectory/log density of contraction", || {
            let f = AffineField::linear(Matrix::identity(3).scale(-1.0)?);
            let (_, d) = log_density_change(&f, &[1.0, 2.0, 3.0], 0.0, 1.0, 40)?;
            Ok(Check::close("", d, 3.0, 1e-4))
        }),
        run("trajectory/log density of nilpotent field", || {
            let upper = m(&[&[0., 1., 2.], &[0., 0., 3.], &[0., 0., 0.]]);
            let (_, d) = log_density_change(&AffineField::linear(upper), &[1.0, 1.0, 1.0], 0.0, 1.0, 40)?;
            Ok(Check::close("", d, 0.0, 0.0))
        }),
        run("trajectory/one-dimensional transport", || {
            let p = vec![vec![0.0], vec![2.0]];
            let q = vec![vec![1.0], vec![3.0]];
            Ok(Check::close("", wasserstein_distance(&p, &q)?, 1.0, TIGHT))
        }),
        run("trajectory/contraction simulation", || {
            let f = AffineField::linear(Matrix::identity(2).scale(-1.0)?);
            let x0 = m(&[&[1.0, -2.0], &[0.5, 3.0]]);
            let sims = simulate(&f, &x0, 0.0, &[0.5, 1.25], 100)?;
            let mut err: f64 = 0.0;
            for (sim, t) in sims.iter().zip([0.5f64, 1.25]) {
                let want = x0.scale((-t).exp())?;
                err = err.max(sim.max_abs_diff(&want));
            }
            Ok(Check::close("", err, 0.0, 1e-6))
        }),
    ]
}

fn discovery() -> Vec<Check> {
    vec![run("discovery/ranking from a hand-set scorer", || {
        // h = (0, 1) with ω_ij = σ(w2·tanh(h_i) + b2): the edge into node 2 scores 0.9,
        // the edge into node 1 scores 0.4.
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let b2 = logit(0.4);
        let w2 = (logit(0.9) - b2) / 1f64.tanh();
        let s = store(&[
            ("sc.w1", m(&[&[1.0], &[0.0]])),
            ("sc.b1", m(&[&[0.0]])),
            ("sc.w2", m(&[&[w2]])),
            ("sc.b2", m(&[&[b2]])),
        ]);
        let omega = evaluate(&s, |g| {
            let sc = EdgeScorer::bind(g, "sc")?;
            let h = g.constant(Matrix::col_vector(&[0.0, 1.0])?);
            edge_intensity(g, h, &sc)
        })?;
        let level = Level::new("gene", names("", 2), Matrix::zeros(2, 2), false)?;
        let ranked = rank_intensities(&level, &omega, None)?;
        let order: Vec<(String, String)> = ranked.iter().map(|c| c.edge()).collect();
        let want = vec![("1".to_string(), "2".to_string()), ("2".to_string(), "1".to_string())];
        let scores = [omega.get(1, 0), omega.get(0, 1)];
        let ok = order == want && max_diff(&scores, &[0.9, 0.4]) < TIGHT;
        Ok(Check::new("", ok, format!("order {order:?} scores {scores:?}")))
    })]
}

fn synth() -> Vec<Check> {
    vec![
        run("synth/complete graph edge count", || {
            let kb = gen_knowledge(&SynthSpec {
                genes: 4,
                edge_prob: 1.0,
                ..SynthSpec::default()
            })?;
            Ok(Check::close("", kb.level(0).edge_count() as f64, 12.0, 0.0))
        }),
        run("synth/two-gene chain steady state", || {
            let r = static_response(&m(&[&[0., 0.], &[1., 0.]]), 0.5)?;
            Ok(near("", &r.col(0), &[1.0, 0.5], TIGHT))
        }),
        run("synth/covariance solves the steady-state relation", || {
            let spec = SynthSpec {
                genes: 6,
                edge_prob: 0.3,
                beta: 0.3,
                seed: 17,
                ..SynthSpec::default()
            };
            let kb = gen_knowledge(&spec)?;
            let n = kb.gene_count();
            let ba = kb.level(0).adjacency.scale(spec.beta)?;
            // (I − βA)⁻¹ by its Neumann series.
            let mut resp = Matrix::identity(n);
            let mut term = Matrix::identity(n);
            for _ in 0..200 {
                term = term.matmul(&ba)?;
                resp = resp.add(&term)?;
            }
            let sigma = resp.matmul(&resp.transpose())?;
            let samples = 10_000;
            let data = gen_expression_static(&kb, &spec, samples)?;
            let x = &data.values;
            let mean: Vec<f64> = (0..n).map(|j| x.col(j).iter().sum::<f64>() / samples as f64).collect();
            let mut worst: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let cov = (0..samples)
                        .map(|s| (x.get(s, i) - mean[i]) * (x.get(s, j) - mean[j]))
                        .sum::<f64>()
                        / (samples - 1) as f64;
                    let scale = (sigma.get(i, i) * sigma.get(j, j)).sqrt();
                    worst = worst.max((cov - sigma.get(i, j)).abs() / scale);
                }
            }
            Ok(Check::close("", worst, 0.0, 0.1))
        }),
        run("synth/pathway labels", || {
            // P1 = {g1, g2} through p1, p2; P2 = {g3} through p3.
            let kb = KnowledgeBase::new(
                vec![
                    Level::new("gene", names("g", 3), Matrix::zeros(3, 3), false)?,
                    Level::new("protein", names("p", 3), Matrix::zeros(3, 3), false)?,
                    Level::new("pathway", names("P", 2), Matrix::zeros(2, 2), true)?,
                ],
                vec![Matrix::identity(3), m(&[&[1., 1., 0.], &[0., 0., 1.]])],
                Some(m(&[&[1., 0.], &[1., 0.], &[0., 1.]])),
            )?;
            let values = m(&[&[1.0, -0.4, 0.25], &[1.0, -0.6, 0.25], &[0.5, 0.5, 0.5]]);
            let data = ExpressionDataset::new(names("g", 3), values, None, None)?;
            let labels = gen_labels(&kb, &data, 2)?;
            Ok(Check::new("", labels == [0, 1, 0], format!("{labels:?}")))
        }),
        run("synth/relaxation step", || {
            let a = m(&[&[0., 1.], &[0., 0.]]);
            let got = relax_step(&a, &[1.0, 2.0], 0.3, 0.5);
            Ok(near("", &got, &[0.5 + 0.5 * 0.6f64.tanh(), 1.0], TIGHT))
        }),
    ]
}

fn cli_copy() -> Check {
    run("cli/impute on a copy fixture", || {
        let tmp = tempfile::tempdir().expect("temp dir");
        let dir = tmp.path();
        let kb = empty_kb(5)?;
        let manifest = kb.write_dir(&dir.join("kb"))?;
        copy_data(5, 64, 13)?.write(&dir.join("x.csv"), None)?;
        let config = format!(
            "task = \"impute\"\nknowledge = {:?}\ndata = \"x.csv\"\n\n[model]\nhead_hidden = []\n\n[train]\nepochs = 500\nbatch_size = 64\nmask_prob = 0.0\n",
            manifest.strip_prefix(dir).unwrap_or(&manifest),
        );
        write(dir, "run.toml", &config);
        let out = dir.join("out");
        let report = cli::run([
            "bfreg",
            "impute",
            "--config",
            dir.join("run.toml").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        let mse: f64 = report.get("test_mse").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        Ok(Check::close("", mse, 0.0, 1e-2))
    })
}

pub fn suite() -> Vec<Check> {
    let mut out = numerics();
    out.extend(knowledge());
    out.extend(layers());
    out.extend(model());
    out.extend(tasks());
    out.extend(trajectory());
    out.extend(discovery());
    out.extend(synth());
    out.push(cli_copy());
    out
}
