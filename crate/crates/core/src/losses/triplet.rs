use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Soft-margin batch-hard triplet loss settings. Distance is Euclidean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    /// Margin ξ added inside the soft-plus.
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.0 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::config("loss.triplet_margin", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_labels(labels: &[usize], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} embeddings", labels.len())));
    }
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Precondition(format!(
            "label {l} occurs once in the batch, so it has no positive"
        )));
    }
    if counts.len() < 2 {
        let l = labels.first().copied().unwrap_or_default();
        return Err(Error::Precondition(format!(
            "every sample carries label {l}, so no anchor has a negative"
        )));
    }
    Ok(())
}

fn euclidean(e: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    e.row(i)
        .iter()
        .zip(e.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean over anchors of `softplus(ξ + max d(a,p) − min d(a,n))`.
pub fn triplet_soft_margin_batch_hard(embeddings: ArrayView2<f64>, labels: &[usize], config: &TripletConfig) -> Result<f64> {
    triplet_with_grad(embeddings, labels, config).map(|(l, _)| l)
}

/// Loss plus its gradient with respect to the embeddings. The hardest
/// positive/negative is the first index attaining the extreme distance;
/// coincident points contribute a zero subgradient.
pub fn triplet_with_grad(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    config: &TripletConfig,
) -> Result<(f64, Array2<f64>)> {
    config.validate()?;
    let n = embeddings.nrows();
    check_labels(labels, n)?;
    let dist = Array2::from_shape_fn((n, n), |(i, j)| euclidean(&embeddings, i, j));
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[[a, j]];
            if labels[j] == labels[a] {
                if hardest_pos.map_or(true, |(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.map_or(true, |(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        let (p, dp) = hardest_pos.expect("labels checked");
        let (q, dn) = hardest_neg.expect("labels checked");
        let z = config.margin + dp - dn;
        loss += softplus(z);
        let s = sigmoid(z) * inv_n;
        for (other, d, sign) in [(p, dp, 1.0), (q, dn, -1.0)] {
            if d > 0.0 {
                let coef = sign * s / d;
                for c in 0..embeddings.ncols() {
                    let diff = embeddings[[a, c]] - embeddings[[other, c]];
                    grad[[a, c]] += coef * diff;
                    grad[[other, c]] -= coef * diff;
                }
            }
        }
    }
    Ok((loss * inv_n, grad))
}
