//! Fixed-step RK4 over piecewise dynamics, with optional log-density bookkeeping.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId};

/// A vector field on ℝⁿ, possibly piecewise in time. Integration over an
/// interval splits it into `pieces()` equal sub-intervals and evaluates piece
/// `k` throughout the k-th one, so RK4 stages never straddle a boundary.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn pieces(&self) -> usize {
        1
    }

    /// dx/dt for every row of `x` (samples × n).
    fn eval(&self, piece: usize, x: &Matrix, t: f64) -> Result<Matrix>;

    /// ∂f/∂x at a single state.
    fn jacobian(&self, piece: usize, x: &[f64], t: f64) -> Result<Matrix>;
}

/// Dynamics that can also be recorded on a tape for training.
pub trait GraphDynamics: Dynamics {
    fn eval_graph(&self, g: &mut Graph<'_>, piece: usize, x: NodeId, t: f64) -> Result<NodeId>;
}

/// f(x) = A x + c, time invariant.
#[derive(Clone, Debug)]
pub struct AffineField {
    pub a: Matrix,
    pub c: Vec<f64>,
}

impl AffineField {
    pub fn linear(a: Matrix) -> Self {
        let n = a.rows();
        Self { a, c: vec![0.0; n] }
    }
}

impl Dynamics for AffineField {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn eval(&self, _piece: usize, x: &Matrix, _t: f64) -> Result<Matrix> {
        let mut out = x.matmul(&self.a.transpose())?;
        for r in 0..out.rows() {
            for (j, c) in self.c.iter().enumerate() {
                out.set(r, j, out.get(r, j) + c);
            }
        }
        Ok(out)
    }

    fn jacobian(&self, _piece: usize, _x: &[f64], _t: f64) -> Result<Matrix> {
        Ok(self.a.clone())
    }
}

/// One integration segment: piece index, start and end time, step count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub piece: usize,
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

/// Boundaries `lo + (hi - lo)·k/L` for k = 0..=L.
pub fn piece_bounds(lo: f64, hi: f64, pieces: usize) -> Vec<f64> {
    (0..=pieces)
        .map(|k| if k == pieces { hi } else { lo + (hi - lo) * k as f64 / pieces as f64 })
        .collect()
}

/// Piece owning time `t` in `[lo, hi]`: half-open sub-intervals, the last one closed.
pub fn piece_at(t: f64, lo: f64, hi: f64, pieces: usize) -> Result<usize> {
    if !(lo..=hi).contains(&t) || hi <= lo {
        return Err(Error::invalid(format!("time {t} outside the interval [{lo}, {hi}]")));
    }
    let bounds = piece_bounds(lo, hi, pieces);
    Ok(bounds[1..pieces].iter().filter(|b| t >= **b).count())
}

/// The segments traversed integrating from `t_a` to `t_b` (either direction).
pub fn schedule(t_a: f64, t_b: f64, pieces: usize, steps: usize) -> Result<Vec<Segment>> {
    if steps == 0 {
        return Err(Error::invalid("integration needs at least one step"));
    }
    if pieces == 0 {
        return Err(Error::invalid("dynamics with zero pieces"));
    }
    if !t_a.is_finite() || !t_b.is_finite() {
        return Err(Error::invalid("non-finite integration bounds"));
    }
    if t_a == t_b {
        return Ok(Vec::new());
    }
    let (lo, hi) = if t_a < t_b { (t_a, t_b) } else { (t_b, t_a) };
    let bounds = piece_bounds(lo, hi, pieces);
    let per = steps.div_ceil(pieces);
    let mut segs: Vec<Segment> = (0..pieces)
        .map(|k| Segment {
            piece: k,
            start: bounds[k],
            end: bounds[k + 1],
            steps: per,
        })
        .collect();
    if t_b < t_a {
        segs.reverse();
        for s in &mut segs {
            std::mem::swap(&mut s.start, &mut s.end);
        }
    }
    Ok(segs)
}

fn axpy(x: &Matrix, h: f64, k: &Matrix) -> Result<Matrix> {
    x.zip_map(k, |a, b| a + h * b)
}

fn check_finite(x: &Matrix, t: f64) -> Result<()> {
    if x.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("integration state at t = {t}")))
    }
}

/// Integrates every row of `x0` from `t_a` to `t_b` with classical RK4.
pub fn integrate_batch<D: Dynamics + ?Sized>(dynamics: &D, x0: &Matrix, t_a: f64, t_b: f64, steps: usize) -> Result<Matrix> {
    if x0.cols() != dynamics.dim() {
        return Err(Error::Shape(format!("state of width {} for a field on ℝ^{}", x0.cols(), dynamics.dim())));
    }
    let mut x = x0.clone();
    for seg in schedule(t_a, t_b, dynamics.pieces(), steps)? {
        let h = (seg.end - seg.start) / seg.steps as f64;
        for s in 0..seg.steps {
            let t = seg.start + h * s as f64;
            let p = seg.piece;
            let k1 = dynamics.eval(p, &x, t)?;
            let k2 = dynamics.eval(p, &axpy(&x, h / 2.0, &k1)?, t + h / 2.0)?;
            let k3 = dynamics.eval(p, &axpy(&x, h / 2.0, &k2)?, t + h / 2.0)?;
            let k4 = dynamics.eval(p, &axpy(&x, h, &k3)?, t + h)?;
            let data = (0..x.len())
                .map(|i| {
                    x.data()[i] + h / 6.0 * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i])
                })
                .collect();
            let next = Matrix::new(x.rows(), x.cols(), data).map_err(|_| Error::NonFinite(format!("integration state at t = {}", t + h)))?;
            x = next;
        }
    }
    Ok(x)
}

/// Integrates a single state.
pub fn integrate_ode<D: Dynamics + ?Sized>(dynamics: &D, x0: &[f64], t_a: f64, t_b: f64, steps: usize) -> Result<Vec<f64>> {
    let x = integrate_batch(dynamics, &Matrix::row_vector(x0)?, t_a, t_b, steps)?;
    Ok(x.into_data())
}

/// Integrates the state jointly with Δlog p = −∫ Tr(∂f/∂x) dt.
pub fn log_density_change<D: Dynamics + ?Sized>(
    dynamics: &D,
    x0: &[f64],
    t_a: f64,
    t_b: f64,
    steps: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = dynamics.dim();
    if x0.len() != n {
        return Err(Error::Shape(format!("state of length {} for a field on ℝ^{n}", x0.len())));
    }
    let rhs = |p: usize, x: &[f64], t: f64| -> Result<(Vec<f64>, f64)> {
        let f = dynamics.eval(p, &Matrix::row_vector(x)?, t)?.into_data();
        let j = dynamics.jacobian(p, x, t)?;
        let tr: f64 = (0..n).map(|i| j.get(i, i)).sum();
        Ok((f, -tr))
    };
    let step = |x: &[f64], h: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let mut x = x0.to_vec();
    let mut logp = 0.0;
    for seg in schedule(t_a, t_b, dynamics.pieces(), steps)? {
        let h = (seg.end - seg.start) / seg.steps as f64;
        for s in 0..seg.steps {
            let t = seg.start + h * s as f64;
            let p = seg.piece;
            let (k1, l1) = rhs(p, &x, t)?;
            let (k2, l2) = rhs(p, &step(&x, h / 2.0, &k1), t + h / 2.0)?;
            let (k3, l3) = rhs(p, &step(&x, h / 2.0, &k2), t + h / 2.0)?;
            let (k4, l4) = rhs(p, &step(&x, h, &k3), t + h)?;
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            logp += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            if !x.iter().all(|v| v.is_finite()) || !logp.is_finite() {
                return Err(Error::NonFinite(format!("integration state at t = {}", t + h)));
            }
        }
    }
    Ok((x, logp))
}

/// RK4 recorded on the tape, so gradients flow through every step.
pub fn integrate_graph<D: GraphDynamics + ?Sized>(
    dynamics: &D,
    g: &mut Graph<'_>,
    x0: NodeId,
    t_a: f64,
    t_b: f64,
    steps: usize,
) -> Result<NodeId> {
    let mut x = x0;
    for seg in schedule(t_a, t_b, dynamics.pieces(), steps)? {
        let h = (seg.end - seg.start) / seg.steps as f64;
        for s in 0..seg.steps {
            let t = seg.start + h * s as f64;
            let p = seg.piece;
            let k1 = dynamics.eval_graph(g, p, x, t)?;
            let d1 = g.scale(k1, h / 2.0)?;
            let x2 = g.add(x, d1)?;
            let k2 = dynamics.eval_graph(g, p, x2, t + h / 2.0)?;
            let d2 = g.scale(k2, h / 2.0)?;
            let x3 = g.add(x, d2)?;
            let k3 = dynamics.eval_graph(g, p, x3, t + h / 2.0)?;
            let d3 = g.scale(k3, h)?;
            let x4 = g.add(x, d3)?;
            let k4 = dynamics.eval_graph(g, p, x4, t + h)?;
            let k23 = g.add(k2, k3)?;
            let k23 = g.scale(k23, 2.0)?;
            let sum = g.add(k1, k4)?;
            let sum = g.add(sum, k23)?;
            let incr = g.scale(sum, h / 6.0)?;
            x = g.add(x, incr)?;
            check_finite(g.value(x), t + h)?;
        }
    }
    Ok(x)
}
