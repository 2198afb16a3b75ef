use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BranchRole;

/// Which pairs of branches exchange KL terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Every branch learns from every other branch.
    #[default]
    Mutual,
    /// Master learns from all servants; each servant learns from the master only.
    MasterServant,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_self ‖ p_peer)`.
    #[default]
    Forward,
    /// `KL(p_peer ‖ p_self)`, the usual deep-mutual-learning direction.
    Reverse,
}

/// Batch-mean KL between the rows of `own` and `peer`, plus its gradient with
/// respect to the logits that produced `own` (`own = softmax(logits)`).
/// `peer` is a constant. Logs use `ln max(p, eps)`, so `0 · ln(0/q) = 0`.
pub fn kl_rows(own: &Array2<f64>, peer: &Array2<f64>, direction: KlDirection, eps: f64) -> (f64, Array2<f64>) {
    let (n, m) = own.dim();
    let mut grad = Array2::zeros((n, m));
    let mut total = 0.0;
    let lg = |v: f64| v.max(eps).ln();
    for i in 0..n {
        let p = own.row(i);
        let q = peer.row(i);
        let live = |j: usize| p[j] >= eps;
        match direction {
            KlDirection::Forward => {
                let a: Vec<f64> = (0..m).map(|j| lg(p[j]) - lg(q[j])).collect();
                let kl: f64 = (0..m).map(|j| p[j] * a[j]).sum();
                let live_mass: f64 = (0..m).filter(|&j| live(j)).map(|j| p[j]).sum();
                for k in 0..m {
                    let own_term = if live(k) { 1.0 } else { 0.0 };
                    grad[[i, k]] = p[k] * (a[k] - kl) + p[k] * (own_term - live_mass);
                }
                total += kl;
            }
            KlDirection::Reverse => {
                let kl: f64 = (0..m).map(|j| q[j] * (lg(q[j]) - lg(p[j]))).sum();
                let live_q: f64 = (0..m).filter(|&j| live(j)).map(|j| q[j]).sum();
                for k in 0..m {
                    let own_term = if live(k) { q[k] } else { 0.0 };
                    grad[[i, k]] = p[k] * live_q - own_term;
                }
                total += kl;
            }
        }
    }
    let inv = 1.0 / n.max(1) as f64;
    grad *= inv;
    (total * inv, grad)
}

fn check_distributions(dists: &[Array2<f64>]) -> Result<()> {
    let Some(first) = dists.first() else {
        return Ok(());
    };
    for (s, d) in dists.iter().enumerate() {
        if d.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "branch {s} distributions are {:?}, branch 0 are {:?}",
                d.dim(),
                first.dim()
            )));
        }
        for (i, row) in d.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Precondition(format!(
                    "branch {s} row {i} is not a probability distribution"
                )));
            }
        }
    }
    Ok(())
}

/// Peer set of every branch under `mode`.
pub fn peer_sets(mode: KlMode, roles: &[BranchRole]) -> Result<Vec<Vec<usize>>> {
    let s = roles.len();
    match mode {
        KlMode::None => Ok(vec![Vec::new(); s]),
        KlMode::Mutual => Ok((0..s).map(|t| (0..s).filter(|&j| j != t).collect()).collect()),
        KlMode::MasterServant => {
            let masters: Vec<usize> = (0..s).filter(|&j| roles[j].is_master()).collect();
            let [master] = masters[..] else {
                return Err(Error::Precondition(format!(
                    "master-servant learning needs exactly one master, found {}",
                    masters.len()
                )));
            };
            Ok((0..s)
                .map(|t| {
                    if t == master {
                        (0..s).filter(|&j| j != master).collect()
                    } else {
                        vec![master]
                    }
                })
                .collect())
        }
    }
}

/// Per-branch KL term averaged over its peers, with gradient w.r.t. that
/// branch's logits. Peers contribute no gradient. Empty peer sets give 0.
pub fn kl_terms(
    dists: &[Array2<f64>],
    peers: &[Vec<usize>],
    direction: KlDirection,
    eps: f64,
) -> Result<Vec<(f64, Array2<f64>)>> {
    check_distributions(dists)?;
    Ok(dists
        .iter()
        .zip(peers)
        .map(|(own, set)| {
            let mut grad = Array2::zeros(own.raw_dim());
            let mut value = 0.0;
            for &s in set {
                let (v, g) = kl_rows(own, &dists[s], direction, eps);
                value += v;
                grad += &g;
            }
            if !set.is_empty() {
                let inv = 1.0 / set.len() as f64;
                value *= inv;
                grad *= inv;
            }
            (value, grad)
        })
        .collect())
}

/// Mutual KL loss of branch `theta` over all `S − 1` peers.
pub fn mutual_kl_loss(dists: &[Array2<f64>], theta: usize, direction: KlDirection, eps: f64) -> Result<f64> {
    mutual_kl_with_grad(dists, theta, direction, eps).map(|(v, _)| v)
}

/// Mutual KL loss of branch `theta` and its gradient w.r.t. that branch's logits.
pub fn mutual_kl_with_grad(
    dists: &[Array2<f64>],
    theta: usize,
    direction: KlDirection,
    eps: f64,
) -> Result<(f64, Array2<f64>)> {
    let s = dists.len();
    if s < 2 {
        return Err(Error::Precondition(format!("mutual learning needs at least 2 branches, got {s}")));
    }
    if theta >= s {
        return Err(Error::Precondition(format!("branch {theta} out of range for {s} branches")));
    }
    check_distributions(dists)?;
    let own = &dists[theta];
    let mut grad = Array2::zeros(own.raw_dim());
    let mut value = 0.0;
    for (j, peer) in dists.iter().enumerate() {
        if j != theta {
            let (v, g) = kl_rows(own, peer, direction, eps);
            value += v;
            grad += &g;
        }
    }
    let inv = 1.0 / (s - 1) as f64;
    Ok((value * inv, grad * inv))
}

/// KL terms of every branch when only master↔servant pairs communicate.
pub fn master_servant_kl_loss(
    dists: &[Array2<f64>],
    roles: &[BranchRole],
    direction: KlDirection,
    eps: f64,
) -> Result<Vec<f64>> {
    if dists.len() != roles.len() {
        return Err(Error::Shape(format!("{} distributions for {} roles", dists.len(), roles.len())));
    }
    let peers = peer_sets(KlMode::MasterServant, roles)?;
    Ok(kl_terms(dists, &peers, direction, eps)?.into_iter().map(|(v, _)| v).collect())
}
