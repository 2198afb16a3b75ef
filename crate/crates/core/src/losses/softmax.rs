use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{ClassifierHead, CosineForward};

/// Class distribution of one sample. Sums to 1 within 1e-6.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityDistribution {
    values: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Precondition("probabilities must be finite and non-negative".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Precondition(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Row-wise `softmax(scale · cosines)` with max subtraction.
pub fn probabilities_from_cosines(cosines: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let mut p = cosines.mapv(|c| scale * c);
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Class probabilities of one embedding: softmax of `γ · cos` without margin.
pub fn class_probabilities(embedding: ArrayView1<f64>, head: &ClassifierHead) -> Result<ProbabilityDistribution> {
    check_classes(head.num_classes())?;
    let e = embedding.insert_axis(Axis(0));
    let cos = CosineForward::new(e, head.weights.view())?;
    let p = probabilities_from_cosines(cos.cosines.view(), head.scale);
    ProbabilityDistribution::new(p.row(0).to_vec())
}

fn check_classes(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Precondition(format!("classification needs at least 2 classes, got {m}")));
    }
    Ok(())
}

/// Mean additive-margin softmax loss and its gradient with respect to the
/// cosines.
pub fn am_softmax_from_cosines(
    cosines: ArrayView2<f64>,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, m) = cosines.dim();
    check_classes(m)?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::Precondition(format!("label {bad} out of range for {m} classes")));
    }
    let mut dcos = Array2::zeros((n, m));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let mut z: Array1<f64> = cosines.row(i).mapv(|c| scale * c);
        z[y] -= scale * margin;
        let mx = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + z.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        for j in 0..m {
            let p = (z[j] - lse).exp();
            let t = if j == y { 1.0 } else { 0.0 };
            dcos[[i, j]] = (p - t) * scale * inv_n;
        }
    }
    Ok((loss * inv_n, dcos))
}

/// Additive-margin softmax loss on embeddings and head weights; zero-norm rows
/// are errors.
pub fn am_softmax_loss(embeddings: ArrayView2<f64>, labels: &[usize], head: &ClassifierHead) -> Result<f64> {
    am_softmax_with_grad(embeddings, labels, head).map(|(l, _, _)| l)
}

/// Returns (loss, d embeddings, d weights).
pub fn am_softmax_with_grad(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    head: &ClassifierHead,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let cos = CosineForward::new(embeddings, head.weights.view())?;
    let (loss, dcos) = am_softmax_from_cosines(cos.cosines.view(), labels, head.scale, head.margin)?;
    let (de, dw) = cos.backward(&dcos);
    Ok((loss, de, dw))
}
