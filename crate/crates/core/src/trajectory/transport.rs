//! Exact 1-Wasserstein distance between equally sized sample sets via
//! optimal assignment.

use crate::error::{Error, Result};
use crate::rng::BfRng;

/// Minimum-cost perfect matching on a square cost matrix (row-major, n×n).
/// Returns `assignment[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Potentials formulation, rows and columns indexed from 1; column 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Optimal matching of `p` onto `q` under Euclidean cost.
pub fn optimal_matching(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_sets(p, q)?;
    let n = p.len();
    let mut cost = Vec::with_capacity(n * n);
    for a in p {
        for b in q {
            cost.push(euclid(a, b));
        }
    }
    Ok(hungarian(&cost, n))
}

fn check_sets(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("Wasserstein distance of an empty sample set"));
    }
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "sample sets of sizes {} and {}; equalize them first",
            p.len(),
            q.len()
        )));
    }
    let d = p[0].len();
    if p.iter().chain(q).any(|x| x.len() != d) {
        return Err(Error::Shape("samples of differing dimension".into()));
    }
    Ok(())
}

/// Mean Euclidean distance under the optimal matching of two equally sized sets.
pub fn wasserstein_distance(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    let m = optimal_matching(p, q)?;
    Ok(p.iter().zip(&m).map(|(a, j)| euclid(a, &q[*j])).sum::<f64>() / p.len() as f64)
}

/// Subsamples the larger set (seeded) so both have the smaller size.
pub fn equalize(p: &[Vec<f64>], q: &[Vec<f64>], rng: &mut BfRng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = p.len().min(q.len());
    let pick = |s: &[Vec<f64>], rng: &mut BfRng| -> Vec<Vec<f64>> {
        if s.len() == k {
            s.to_vec()
        } else {
            let mut idx = rng.choose_indices(s.len(), k);
            idx.sort_unstable();
            idx.into_iter().map(|i| s[i].clone()).collect()
        }
    };
    let a = pick(p, rng);
    let b = pick(q, rng);
    (a, b)
}
