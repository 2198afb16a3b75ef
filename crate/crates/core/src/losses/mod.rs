//! Training objectives: batch-hard soft-margin triplet, additive-margin
//! softmax, mutual KL between branch class distributions, and their per-branch
//! and overall sums.
//!
//! Every function returns the gradient of its value with respect to the
//! branch outputs it consumed, so the model can backpropagate without a tape.
//! Peer distributions in the KL term are constants.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{l2_normalize_backward, l2_normalize_rows_safe, BranchGrad, BranchOutput, BranchRole};

mod kl;
mod softmax;
mod triplet;

pub use kl::{kl_rows, kl_terms, master_servant_kl_loss, mutual_kl_loss, mutual_kl_with_grad, peer_sets, KlDirection, KlMode};
pub use softmax::{
    am_softmax_from_cosines, am_softmax_loss, am_softmax_with_grad, class_probabilities, probabilities_from_cosines,
    ProbabilityDistribution,
};
pub use triplet::{softplus, triplet_soft_margin_batch_hard, triplet_with_grad, TripletConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub triplet_margin: f64,
    /// Feed L2-normalised embeddings to the triplet loss instead of raw
    /// BN-neck outputs.
    pub triplet_on_normalized: bool,
    pub kl_mode: KlMode,
    pub kl_direction: KlDirection,
    /// Probability floor inside the KL logarithms.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            triplet_margin: 0.0,
            triplet_on_normalized: false,
            kl_mode: KlMode::Mutual,
            kl_direction: KlDirection::Forward,
            epsilon: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.triplet().validate()?;
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::config("loss.epsilon", "must lie in (0, 1e-3)"));
        }
        Ok(())
    }

    pub fn triplet(&self) -> TripletConfig {
        TripletConfig {
            margin: self.triplet_margin,
        }
    }
}

/// Loss terms of one branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchLoss {
    pub triplet: f64,
    pub classification: f64,
    /// `triplet + classification`.
    pub conquer: f64,
    pub mutual_kl: f64,
    /// `mutual_kl + conquer`.
    pub branch_total: f64,
}

impl BranchLoss {
    fn assemble(triplet: f64, classification: f64, mutual_kl: f64) -> Self {
        let conquer = triplet + classification;
        Self {
            triplet,
            classification,
            conquer,
            mutual_kl,
            branch_total: mutual_kl + conquer,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub branches: Vec<BranchLoss>,
    /// Sum of the branch totals.
    pub total: f64,
}

impl LossBundle {
    pub fn from_branches(branches: Vec<BranchLoss>) -> Self {
        let total = branches.iter().map(|b| b.branch_total).sum();
        Self { branches, total }
    }

    /// Recomputes every sum from its parts and reports the first violation
    /// larger than `tol`.
    pub fn check_identities(&self, tol: f64) -> std::result::Result<(), String> {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
        for (k, b) in self.branches.iter().enumerate() {
            if !close(b.conquer, b.triplet + b.classification) {
                return Err(format!("branch {k}: conquer {} != triplet + classification", b.conquer));
            }
            if !close(b.branch_total, b.mutual_kl + b.conquer) {
                return Err(format!("branch {k}: total {} != kl + conquer", b.branch_total));
            }
        }
        let sum: f64 = self.branches.iter().map(|b| b.mutual_kl + b.triplet + b.classification).sum();
        if !close(self.total, sum) {
            return Err(format!("total {} != sum of parts {sum}", self.total));
        }
        Ok(())
    }

    /// Name and value of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<(String, f64)> {
        for (k, b) in self.branches.iter().enumerate() {
            for (name, v) in [
                ("triplet", b.triplet),
                ("classification", b.classification),
                ("mutual_kl", b.mutual_kl),
            ] {
                if !v.is_finite() {
                    return Some((format!("branch {k} {name}"), v));
                }
            }
        }
        (!self.total.is_finite()).then(|| ("total".to_string(), self.total))
    }

    pub fn mean_kl(&self) -> f64 {
        if self.branches.is_empty() {
            return 0.0;
        }
        self.branches.iter().map(|b| b.mutual_kl).sum::<f64>() / self.branches.len() as f64
    }
}

/// Loss bundle plus the gradient of the overall total w.r.t. each branch's
/// outputs.
#[derive(Clone, Debug)]
pub struct LossOutcome {
    pub bundle: LossBundle,
    pub grads: Vec<BranchGrad>,
}

struct Prepared {
    dists: Vec<Array2<f64>>,
    peers: Vec<Vec<usize>>,
}

fn prepare(outputs: &[BranchOutput], labels: &[usize], roles: &[BranchRole], config: &LossConfig) -> Result<Prepared> {
    config.validate()?;
    if outputs.is_empty() {
        return Err(Error::Precondition("no branch outputs".into()));
    }
    if roles.len() != outputs.len() {
        return Err(Error::Shape(format!("{} roles for {} branches", roles.len(), outputs.len())));
    }
    for (k, o) in outputs.iter().enumerate() {
        if o.batch_size() != labels.len() || o.cosines.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "branch {k} has {} rows for {} labels",
                o.batch_size(),
                labels.len()
            )));
        }
    }
    let dists = outputs
        .iter()
        .map(|o| probabilities_from_cosines(o.cosines.view(), o.scale))
        .collect();
    Ok(Prepared {
        dists,
        peers: peer_sets(config.kl_mode, roles)?,
    })
}

/// Terms of branch `theta` and the gradient of its total w.r.t. its own outputs.
fn own_terms(
    outputs: &[BranchOutput],
    labels: &[usize],
    config: &LossConfig,
    prep: &Prepared,
    theta: usize,
) -> Result<(BranchLoss, BranchGrad)> {
    let o = &outputs[theta];
    let (triplet, d_emb) = if config.triplet_on_normalized {
        let (unit, norms) = l2_normalize_rows_safe(o.embedding.view());
        let (l, g) = triplet_with_grad(unit.view(), labels, &config.triplet())?;
        (l, l2_normalize_backward(&unit, &norms, &g))
    } else {
        triplet_with_grad(o.embedding.view(), labels, &config.triplet())?
    };
    let (cls, mut dcos) = am_softmax_from_cosines(o.cosines.view(), labels, o.scale, o.margin)?;
    let mut kl = 0.0;
    let set = &prep.peers[theta];
    if !set.is_empty() {
        let own = &prep.dists[theta];
        let mut g = Array2::zeros(own.raw_dim());
        for &s in set {
            let (v, gs) = kl_rows(own, &prep.dists[s], config.kl_direction, config.epsilon);
            kl += v;
            g += &gs;
        }
        let inv = 1.0 / set.len() as f64;
        kl *= inv;
        // logits = scale · cosines
        dcos.scaled_add(inv * o.scale, &g);
    }
    Ok((
        BranchLoss::assemble(triplet, cls, kl),
        BranchGrad {
            embedding: d_emb,
            cosines: dcos,
        },
    ))
}

/// Per-branch conquer and KL terms, their sums, and gradients for every branch.
pub fn total_loss(outputs: &[BranchOutput], labels: &[usize], roles: &[BranchRole], config: &LossConfig) -> Result<LossOutcome> {
    let prep = prepare(outputs, labels, roles, config)?;
    let mut branches = Vec::with_capacity(outputs.len());
    let mut grads = Vec::with_capacity(outputs.len());
    for theta in 0..outputs.len() {
        let (l, g) = own_terms(outputs, labels, config, &prep, theta)?;
        branches.push(l);
        grads.push(g);
    }
    Ok(LossOutcome {
        bundle: LossBundle::from_branches(branches),
        grads,
    })
}

/// Loss of branch `theta` alone, with gradients for all branches. Peers enter
/// only as constants, so their gradients are exactly zero.
pub fn branch_loss(
    outputs: &[BranchOutput],
    labels: &[usize],
    roles: &[BranchRole],
    config: &LossConfig,
    theta: usize,
) -> Result<(BranchLoss, Vec<BranchGrad>)> {
    if theta >= outputs.len() {
        return Err(Error::Precondition(format!("branch {theta} out of range")));
    }
    let prep = prepare(outputs, labels, roles, config)?;
    let (l, g) = own_terms(outputs, labels, config, &prep, theta)?;
    let grads = outputs
        .iter()
        .enumerate()
        .map(|(k, o)| {
            if k == theta {
                g.clone()
            } else {
                BranchGrad::zeros(o.batch_size(), o.embedding.ncols(), o.cosines.ncols())
            }
        })
        .collect();
    Ok((l, grads))
}

/// Class distributions `B × M` of each branch.
pub fn branch_distributions(outputs: &[BranchOutput]) -> Vec<Array2<f64>> {
    outputs
        .iter()
        .map(|o| probabilities_from_cosines(o.cosines.view(), o.scale))
        .collect()
}
