//! Similarity-driven foreground negative sampling: a cosine graph over class
//! prototypes, a softmax distribution over negative classes, and exact
//! largest-remainder quota allocation.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{FbrError, Result};
use crate::numerics::{cosine_sim, softmax};

/// Pairwise cosine similarities between the prototypes of classes present in
/// the batch. Background is never a node.
#[derive(Debug, Clone)]
pub struct SemanticGraph {
    pub sims: Vec<Vec<f64>>,
    pub present: Vec<usize>,
    num_classes: usize,
}

impl SemanticGraph {
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.sims[a - 1][b - 1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Per-class pixel feature lists for every class present in the batch;
/// background pixels are excluded at construction.
#[derive(Debug, Clone, Default)]
pub struct NegativePool {
    features: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl NegativePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class_id: usize, features: Vec<Vec<f64>>) {
        self.features.entry(class_id).or_default().extend(features);
    }

    pub fn class_features(&self, class_id: usize) -> &[Vec<f64>] {
        self.features.get(&class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total_pixels(&self) -> usize {
        self.features.values().map(Vec::len).sum()
    }
}

/// Build the prototype similarity graph over present classes (1-based ids).
pub fn build_graph(prototypes: &[(usize, Vec<f64>)], num_classes: usize) -> Result<SemanticGraph> {
    if prototypes.len() < 2 {
        return Err(FbrError::InsufficientClasses(prototypes.len()));
    }
    let mut present: Vec<usize> = prototypes.iter().map(|(c, _)| *c).collect();
    present.sort_unstable();
    let mut sims = vec![vec![0.0; num_classes]; num_classes];
    for (i, (ci, pi)) in prototypes.iter().enumerate() {
        for (cj, pj) in prototypes.iter().skip(i + 1) {
            let s = cosine_sim(pi, pj)?;
            sims[ci - 1][cj - 1] = s;
            sims[cj - 1][ci - 1] = s;
        }
    }
    Ok(SemanticGraph { sims, present, num_classes })
}

/// Softmax over the query class's similarities to the other present classes.
/// Returns the negative class ids (ascending) with their probabilities.
pub fn negative_distribution(graph: &SemanticGraph, class_id: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if !graph.present.contains(&class_id) {
        return Err(FbrError::InvalidArgument(format!(
            "class {class_id} is not present in the graph"
        )));
    }
    let others: Vec<usize> = graph.present.iter().copied().filter(|&c| c != class_id).collect();
    if others.is_empty() {
        return Err(FbrError::InsufficientClasses(1));
    }
    let sims: Vec<f64> = others.iter().map(|&c| graph.similarity(class_id, c)).collect();
    Ok((others, softmax(&sims)?))
}

/// Allocate integer counts summing to `m` by largest remainder.
pub fn largest_remainder_quotas(probs: &[f64], m: usize) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * m as f64).collect();
    let mut quotas: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..m.saturating_sub(assigned) {
        quotas[order[i % order.len()]] += 1;
    }
    quotas
}

/// Draw exactly `m` negative keys for a query class: per-class counts follow
/// the largest-remainder quota of the distribution, and keys within a class
/// are uniform with replacement. Classes with no pixels have their mass
/// renormalized over the remaining classes.
pub fn sample_fg_negatives(
    pool: &NegativePool,
    class_ids: &[usize],
    probs: &[f64],
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    assert_eq!(class_ids.len(), probs.len(), "distribution shape mismatch");
    let usable: Vec<usize> = (0..class_ids.len())
        .filter(|&i| !pool.class_features(class_ids[i]).is_empty())
        .collect();
    if usable.is_empty() {
        return Err(FbrError::EmptyPool);
    }
    let mass: f64 = usable.iter().map(|&i| probs[i]).sum();
    if mass <= 0.0 {
        return Err(FbrError::EmptyPool);
    }
    let renormalized: Vec<f64> = usable.iter().map(|&i| probs[i] / mass).collect();
    let quotas = largest_remainder_quotas(&renormalized, m);

    let mut keys = Vec::with_capacity(m);
    for (slot, &i) in usable.iter().enumerate() {
        let features = pool.class_features(class_ids[i]);
        for _ in 0..quotas[slot] {
            keys.push(features[rng.gen_range(0..features.len())].clone());
        }
    }
    debug_assert_eq!(keys.len(), m);
    Ok(keys)
}
