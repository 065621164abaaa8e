use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mean squared error over the entries where `x` is non-zero.
pub fn imputation_loss(pred: &[f64], x: &[f64]) -> Result<f64> {
    let mask: Vec<f64> = x.iter().map(|v| if *v != 0.0 { 1.0 } else { 0.0 }).collect();
    masked_mse(pred, x, &mask)
}

/// Mean squared error over entries with non-zero `mask`.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || mask.len() != target.len() {
        return Err(Error::Shape(format!(
            "lengths {} / {} / {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for ((p, t), m) in pred.iter().zip(target).zip(mask) {
        if *m != 0.0 {
            acc += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no observed entries to score"));
    }
    Ok(acc / n as f64)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    masked_mse(pred, target, &vec![1.0; target.len()])
}

/// Unweighted mean of one-vs-rest AUCs; `scores` is samples × classes.
/// Ties between a positive and a negative count one half.
pub fn macro_auc(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    let (n, k) = scores.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} score rows", labels.len())));
    }
    if k < 2 {
        return Err(Error::invalid("macro AUC needs at least two classes"));
    }
    let mut total = 0.0;
    for c in 0..k {
        let pos: Vec<f64> = (0..n).filter(|i| labels[*i] == c).map(|i| scores.get(i, c)).collect();
        let neg: Vec<f64> = (0..n).filter(|i| labels[*i] != c).map(|i| scores.get(i, c)).collect();
        if pos.is_empty() {
            return Err(Error::invalid(format!("class {c} is absent from the labels")));
        }
        if neg.is_empty() {
            return Err(Error::invalid("macro AUC needs at least two classes present"));
        }
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
        total += wins / (pos.len() * neg.len()) as f64;
    }
    Ok(total / k as f64)
}

/// Pearson correlation of two equally long sequences.
pub fn pcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!("lengths {} and {}", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let (mp, mt) = (pred.iter().sum::<f64>() / n, target.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp) * (p - mp);
        syy += (t - mt) * (t - mt);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant sequence"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation per series, averaged over the series where it is defined.
pub fn mean_series_pcc(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} series", preds.len(), targets.len())));
    }
    let vals: Vec<f64> = preds.iter().zip(targets).filter_map(|(p, t)| pcc(p, t).ok()).collect();
    if vals.len() < preds.len() {
        log::warn!("{} constant series skipped in correlation", preds.len() - vals.len());
    }
    if vals.is_empty() {
        return Err(Error::invalid("no series with defined correlation"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
