//! Cosine classifier: inner products of L2-normalised embeddings with
//! L2-normalised class weight rows.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Class weight rows plus the fixed scale γ and additive margin m.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `M × d`, one row per class.
    pub weights: Array2<f64>,
    pub scale: f64,
    pub margin: f64,
}

impl ClassifierHead {
    pub fn new(weights: Array2<f64>, scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config("model.scale", "must be positive and finite"));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::config("model.margin", "must be finite and non-negative"));
        }
        Ok(Self { weights, scale, margin })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Rows divided by their norms. Rows with zero norm are an error.
pub fn l2_normalize_rows(x: ArrayView2<f64>, what: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::Precondition(format!("{what} row {i} has zero norm")));
    }
    let out = &x / &norms.view().insert_axis(Axis(1));
    Ok((out, norms))
}

/// Rows divided by `max(norm, 1e-12)`; zero rows stay zero.
pub fn l2_normalize_rows_safe(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let out = &x / &norms.view().insert_axis(Axis(1));
    (out, norms)
}

/// Backward of `y = x / n` per row with `n = ‖x‖` treated as a function of x.
pub fn l2_normalize_backward(unit: &Array2<f64>, norms: &Array1<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let dots = (unit * grad).sum_axis(Axis(1));
    let proj = unit * &dots.insert_axis(Axis(1));
    (grad - &proj) / &norms.view().insert_axis(Axis(1))
}

/// Forward pass of the cosine layer with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct CosineForward {
    /// `B × M` cosine similarities.
    pub cosines: Array2<f64>,
    emb_unit: Array2<f64>,
    emb_norm: Array1<f64>,
    w_unit: Array2<f64>,
    w_norm: Array1<f64>,
}

impl CosineForward {
    /// Strict variant used by the loss functions: zero-norm rows are errors.
    pub fn new(embeddings: ArrayView2<f64>, weights: ArrayView2<f64>) -> Result<Self> {
        if embeddings.ncols() != weights.ncols() {
            return Err(Error::Shape(format!(
                "embedding dim {} != classifier dim {}",
                embeddings.ncols(),
                weights.ncols()
            )));
        }
        let (emb_unit, emb_norm) = l2_normalize_rows(embeddings, "embedding")?;
        let (w_unit, w_norm) = l2_normalize_rows(weights, "classifier weight")?;
        Ok(Self::assemble(emb_unit, emb_norm, w_unit, w_norm))
    }

    /// Variant used inside the network, where an all-zero row yields zero
    /// cosines instead of an error.
    pub fn new_safe(embeddings: ArrayView2<f64>, weights: ArrayView2<f64>) -> Self {
        let (emb_unit, emb_norm) = l2_normalize_rows_safe(embeddings);
        let (w_unit, w_norm) = l2_normalize_rows_safe(weights);
        Self::assemble(emb_unit, emb_norm, w_unit, w_norm)
    }

    fn assemble(emb_unit: Array2<f64>, emb_norm: Array1<f64>, w_unit: Array2<f64>, w_norm: Array1<f64>) -> Self {
        let cosines = emb_unit.dot(&w_unit.t());
        Self {
            cosines,
            emb_unit,
            emb_norm,
            w_unit,
            w_norm,
        }
    }

    pub fn unit_embeddings(&self) -> &Array2<f64> {
        &self.emb_unit
    }

    /// Returns (d embeddings, d weights) for an upstream `d cosines`.
    pub fn backward(&self, dcos: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d_emb_unit = dcos.dot(&self.w_unit);
        let d_w_unit = dcos.t().dot(&self.emb_unit);
        (
            l2_normalize_backward(&self.emb_unit, &self.emb_norm, &d_emb_unit),
            l2_normalize_backward(&self.w_unit, &self.w_norm, &d_w_unit),
        )
    }
}
