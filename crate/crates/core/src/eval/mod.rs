//! Retrieval evaluation: concatenated-branch features, distance matrices and
//! single-query CMC / mAP.
//!
//! For each query, gallery entries sharing both its identity and its camera
//! are removed before ranking. Distractor entries (negative identity) stay in
//! the ranking but are never relevant. Ties in distance are broken by gallery
//! index. AP is the mean of precision@rank over the relevant positions.

use ndarray::{Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::augment::{inference_transform, normalize_into, AugmentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::MultiBranchModel;

mod container;

pub use container::{load_feature_table, save_feature_table, FeatureSidecar, FEATURE_MAGIC};

/// Identity value marking a distractor row.
pub const DISTRACTOR: i64 = -1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    /// `1 − cosine similarity`.
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metric: Metric,
    /// Images per inference forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Cosine,
            batch_size: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Feature rows with their identity (negative for distractors) and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub vectors: Array2<f32>,
    pub identities: Vec<i64>,
    pub cameras: Vec<usize>,
}

impl FeatureTable {
    pub fn new(vectors: Array2<f32>, identities: Vec<i64>, cameras: Vec<usize>) -> Result<Self> {
        let n = vectors.nrows();
        if identities.len() != n || cameras.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} identities, {} cameras",
                identities.len(),
                cameras.len()
            )));
        }
        if let Some(i) = vectors.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Precondition(format!("feature row {i} is not finite")));
        }
        Ok(Self {
            vectors,
            identities,
            cameras,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// `q × g` distances, computed in f64 by direct differences.
pub fn pairwise_distances(queries: &FeatureTable, gallery: &FeatureTable, metric: Metric) -> Result<Array2<f64>> {
    distance_matrix(queries.vectors.view(), gallery.vectors.view(), metric)
}

pub fn distance_matrix(q: ArrayView2<f32>, g: ArrayView2<f32>, metric: Metric) -> Result<Array2<f64>> {
    if q.ncols() != g.ncols() {
        return Err(Error::Shape(format!(
            "query dimension {} != gallery dimension {}",
            q.ncols(),
            g.ncols()
        )));
    }
    let q = q.mapv(f64::from);
    let g = g.mapv(f64::from);
    Ok(match metric {
        Metric::Euclidean => Array2::from_shape_fn((q.nrows(), g.nrows()), |(i, j)| {
            q.row(i)
                .iter()
                .zip(g.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        }),
        Metric::Cosine => {
            let norm = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect::<Vec<_>>();
            let (qn, gn) = (norm(&q), norm(&g));
            Array2::from_shape_fn((q.nrows(), g.nrows()), |(i, j)| {
                let denom = qn[i] * gn[j];
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - q.row(i).dot(&g.row(j)) / denom
                }
            })
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub num_valid_queries: usize,
    pub num_queries: usize,
    /// AP of each query in input order; `None` for excluded queries.
    pub per_query_ap: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn rank(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.rank1),
            5 => Some(self.rank5),
            10 => Some(self.rank10),
            _ => None,
        }
    }
}

/// Rank positions (1-based, after exclusion) of every relevant gallery entry
/// for one query, or `None` when the query has no relevant entry.
pub fn relevant_ranks(distances: &[f64], query: (i64, usize), g_ids: &[i64], g_cams: &[usize]) -> Option<Vec<usize>> {
    let (qid, qcam) = query;
    let mut order: Vec<usize> = (0..distances.len())
        .filter(|&j| !(g_ids[j] == qid && g_cams[j] == qcam))
        .collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let ranks: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(_, &j)| g_ids[j] >= 0 && g_ids[j] == qid)
        .map(|(pos, _)| pos + 1)
        .collect();
    (!ranks.is_empty()).then_some(ranks)
}

/// Mean precision at each relevant rank.
pub fn average_precision(ranks: &[usize]) -> f64 {
    ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn evaluate_cmc_map(
    distances: &Array2<f64>,
    query_ids: &[i64],
    query_cams: &[usize],
    gallery_ids: &[i64],
    gallery_cams: &[usize],
) -> Result<MetricsReport> {
    let (nq, ng) = distances.dim();
    if query_ids.len() != nq || query_cams.len() != nq || gallery_ids.len() != ng || gallery_cams.len() != ng {
        return Err(Error::Shape(format!("distance matrix {nq}x{ng} does not match the id/camera lists")));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Precondition("distance matrix contains non-finite values".into()));
    }
    let mut hits = [0usize; 3];
    let mut ap_sum = 0.0;
    let mut valid = 0;
    let mut per_query_ap = Vec::with_capacity(nq);
    for i in 0..nq {
        let row = distances.row(i);
        let row = row.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| row.to_vec());
        match relevant_ranks(&row, (query_ids[i], query_cams[i]), gallery_ids, gallery_cams) {
            None => {
                log::warn!("query {i} has no cross-camera match in the gallery; excluded");
                per_query_ap.push(None);
            }
            Some(ranks) => {
                valid += 1;
                for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
                    if ranks[0] <= k {
                        *h += 1;
                    }
                }
                let ap = average_precision(&ranks);
                ap_sum += ap;
                per_query_ap.push(Some(ap));
            }
        }
    }
    let frac = |x: f64| if valid == 0 { 0.0 } else { x / valid as f64 };
    Ok(MetricsReport {
        rank1: frac(hits[0] as f64),
        rank5: frac(hits[1] as f64),
        rank10: frac(hits[2] as f64),
        map: frac(ap_sum),
        num_valid_queries: valid,
        num_queries: nq,
        per_query_ap,
    })
}

/// Concatenated-branch features of every sample. Images are only resized and
/// normalised; every branch sees the same tensor.
pub fn extract_table(model: &mut MultiBranchModel, dataset: &Dataset, augment: &AugmentConfig, batch_size: usize) -> Result<FeatureTable> {
    let (h, w) = (augment.height as usize, augment.width as usize);
    let dim = model.num_branches() * model.embedding_dim();
    let mut vectors = Array2::zeros((dataset.len(), dim));
    for (c, chunk) in dataset.samples().chunks(batch_size.max(1)).enumerate() {
        let mut x = Array4::zeros((chunk.len(), 3, h, w));
        for (i, s) in chunk.iter().enumerate() {
            let img = inference_transform(&s.pixels, augment);
            normalize_into(&img, augment, x.index_axis_mut(ndarray::Axis(0), i));
        }
        let f = model.extract_features(&x)?;
        let start = c * batch_size.max(1);
        vectors.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&f);
    }
    let identities = dataset
        .samples()
        .iter()
        .map(|s| if s.distractor { DISTRACTOR } else { s.identity as i64 })
        .collect();
    let cameras = dataset.samples().iter().map(|s| s.camera).collect();
    FeatureTable::new(vectors, identities, cameras)
}

pub fn evaluate_tables(query: &FeatureTable, gallery: &FeatureTable, metric: Metric) -> Result<MetricsReport> {
    let d = pairwise_distances(query, gallery, metric)?;
    evaluate_cmc_map(&d, &query.identities, &query.cameras, &gallery.identities, &gallery.cameras)
}

/// Extracts query and gallery features and scores them.
pub fn evaluate_model(
    model: &mut MultiBranchModel,
    query: &Dataset,
    gallery: &Dataset,
    augment: &AugmentConfig,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let q = extract_table(model, query, augment, config.batch_size)?;
    let g = extract_table(model, gallery, augment, config.batch_size)?;
    evaluate_tables(&q, &g, config.metric)
}
