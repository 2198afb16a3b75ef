use rand::seq::index;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// P identities × K instances, grouped by identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Positions into the source dataset; may repeat when an identity has
    /// fewer than K images.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub p: usize,
    pub k: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Identity → sample positions index over one dataset.
#[derive(Clone, Debug)]
pub struct PkSampler {
    groups: Vec<(usize, Vec<usize>)>,
    p: usize,
    k: usize,
}

impl PkSampler {
    pub fn new(dataset: &Dataset, p: usize, k: usize) -> Result<Self> {
        if p < 2 || k < 2 {
            return Err(Error::Precondition(format!(
                "P and K must both be at least 2 (got P={p}, K={k})"
            )));
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        let counts = dataset.identity_counts();
        let slot: std::collections::BTreeMap<usize, usize> =
            counts.keys().enumerate().map(|(i, &id)| (id, i)).collect();
        groups.extend(counts.keys().map(|&id| (id, Vec::new())));
        for (i, s) in dataset.samples().iter().enumerate() {
            groups[slot[&s.identity]].1.push(i);
        }
        if p > groups.len() {
            return Err(Error::Precondition(format!(
                "P={p} exceeds the {} identities available",
                groups.len()
            )));
        }
        Ok(Self { groups, p, k })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Batch {
        let (p, k) = (self.p, self.k);
        let mut indices = Vec::with_capacity(p * k);
        let mut labels = Vec::with_capacity(p * k);
        for g in index::sample(rng, self.groups.len(), p) {
            let (id, members) = &self.groups[g];
            if members.len() >= k {
                indices.extend(index::sample(rng, members.len(), k).into_iter().map(|i| members[i]));
            } else {
                indices.extend((0..k).map(|_| members[rng.gen_range(0..members.len())]));
            }
            labels.extend(std::iter::repeat(*id).take(k));
        }
        Batch { indices, labels, p, k }
    }
}

pub fn sample_pk_batch<R: Rng + ?Sized>(dataset: &Dataset, p: usize, k: usize, rng: &mut R) -> Result<Batch> {
    Ok(PkSampler::new(dataset, p, k)?.sample(rng))
}
