//! Foreground prototype estimation and uncertainty-gated query selection.

use crate::cam::SeedMap;
use crate::error::{FbrError, Result};
use crate::numerics::{l2_norm, Graph, Var};

/// Activation-weighted mean of a class's most confident pixel features,
/// scaled to unit norm. The vector stays on the tape, so gradients flow
/// through both the features and the activation weights.
pub struct Prototype {
    pub class_id: usize,
    pub var: Var,
    pub support: usize,
}

/// Unit-normalized features of a class's uncertain pixels.
pub struct QuerySet {
    pub class_id: usize,
    pub vars: Vec<Var>,
    pub pixel_coords: Vec<(usize, usize)>,
}

impl QuerySet {
    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }
}

/// Compute a class prototype from its activation map and the projected
/// features: the `top_n` highest-scoring pixels are averaged with their
/// activations as weights, then unit-normalized.
///
/// `score_map` is a flat activation row and `features` a `[D, P]` matrix
/// over the same pixel ordering (possibly spanning several images).
pub fn compute_prototype(
    g: &mut Graph,
    score_map: Var,
    features: Var,
    class_id: usize,
    top_n: usize,
) -> Result<Prototype> {
    let p = g.numel(score_map);
    let fdims = g.dims(features).to_vec();
    if fdims.len() != 2 || fdims[1] != p {
        return Err(FbrError::InvalidArgument(format!(
            "features {fdims:?} do not cover {p} scored pixels"
        )));
    }
    if top_n == 0 {
        return Err(FbrError::InvalidArgument("top_n must be >= 1".into()));
    }

    let scores = g.value(score_map);
    let mut candidates: Vec<usize> = (0..p).filter(|&j| scores[j] > 0.0).collect();
    if candidates.is_empty() {
        return Err(FbrError::ClassAbsent(class_id));
    }
    candidates.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    candidates.truncate(top_n);

    let weights = g.gather(score_map, &candidates);
    let selected = g.gather_cols(features, &candidates);
    let w_col = g.reshape(weights, &[candidates.len(), 1]);
    let weighted = g.matmul(selected, w_col);
    let weighted_flat = g.reshape(weighted, &[fdims[0]]);
    let total = g.sum(weights);
    let pre = g.bcast_div(weighted_flat, total);
    if l2_norm(g.value(pre)) < 1e-12 {
        return Err(FbrError::DegenerateInput(format!(
            "class {class_id} prototype collapsed to the zero vector"
        )));
    }
    let unit = g.l2_normalize(pre);
    Ok(Prototype { class_id, var: unit, support: candidates.len() })
}

/// Select the uncertain pixels of a class: seed label equals `class_id` and
/// activation strictly below `beta`. Features are returned unit-normalized;
/// pixels whose projected feature is the zero vector are dropped since they
/// carry no direction to contrast.
pub fn select_queries(
    g: &mut Graph,
    seeds: &SeedMap,
    score_map: Var,
    features: Var,
    class_id: usize,
    beta: f64,
) -> Result<QuerySet> {
    let p = seeds.labels.len();
    if g.numel(score_map) != p {
        return Err(FbrError::InvalidArgument(format!(
            "score map covers {} pixels, seed map {p}",
            g.numel(score_map)
        )));
    }
    let fdims = g.dims(features).to_vec();
    if fdims.len() != 2 || fdims[1] != p {
        return Err(FbrError::InvalidArgument(format!(
            "features {fdims:?} do not align with {p} seeded pixels"
        )));
    }
    let scores = g.value(score_map).to_vec();
    let mut vars = Vec::new();
    let mut pixel_coords = Vec::new();
    for j in 0..p {
        if seeds.labels[j] as usize != class_id || scores[j] >= beta {
            continue;
        }
        let col = g.gather_cols(features, &[j]);
        let flat = g.reshape(col, &[fdims[0]]);
        if l2_norm(g.value(flat)) < 1e-12 {
            continue;
        }
        vars.push(g.l2_normalize(flat));
        pixel_coords.push((j / seeds.width, j % seeds.width));
    }
    Ok(QuerySet { class_id, vars, pixel_coords })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature_matrix(g: &mut Graph, cols: &[Vec<f64>]) -> Var {
        let d = cols[0].len();
        let p = cols.len();
        let mut data = vec![0.0; d * p];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * p + j] = *v;
            }
        }
        g.constant_shaped(&data, &[d, p])
    }

    #[test]
    fn weighted_average_hand_case() {
        // scores (0.9, 0.3) over basis features -> pre-normalization (0.75, 0.25)
        let mut g = Graph::new();
        let scores = g.constant(&[0.9, 0.3]);
        let feats = feature_matrix(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let proto = compute_prototype(&mut g, scores, feats, 1, 2).unwrap();
        let expected = crate::numerics::normalize(&[0.75, 0.25]).unwrap();
        let got = g.value(proto.var);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(proto.support, 2);
    }

    #[test]
    fn uniform_weights_give_normalized_mean() {
        let mut g = Graph::new();
        let scores = g.constant(&[0.5, 0.5, 0.5]);
        let cols = vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 1.0]];
        let feats = feature_matrix(&mut g, &cols);
        let proto = compute_prototype(&mut g, scores, feats, 2, 3).unwrap();
        let mean = [2.0, 1.0];
        let expected = crate::numerics::normalize(&mean).unwrap();
        for (a, b) in g.value(proto.var).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_qualifying_pixel_is_its_own_prototype() {
        let mut g = Graph::new();
        let scores = g.constant(&[0.0, 0.7]);
        let feats = feature_matrix(&mut g, &[vec![5.0, 5.0], vec![3.0, 4.0]]);
        let proto = compute_prototype(&mut g, scores, feats, 1, 4).unwrap();
        assert_eq!(proto.support, 1);
        let got = g.value(proto.var);
        assert!((got[0] - 0.6).abs() < 1e-12);
        assert!((got[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn top_n_keeps_highest_scores() {
        let mut g = Graph::new();
        let scores = g.constant(&[0.1, 0.9, 0.5, 0.8]);
        let feats = feature_matrix(
            &mut g,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 2.0]],
        );
        let proto = compute_prototype(&mut g, scores, feats, 1, 2).unwrap();
        // picks pixels 1 and 3: weighted mean of (0,1) and (0,2)
        let pre = [0.0, (0.9 * 1.0 + 0.8 * 2.0) / 1.7];
        let expected = crate::numerics::normalize(&pre).unwrap();
        for (a, b) in g.value(proto.var).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prototype_invariant_to_uniform_score_rescale() {
        let cols = vec![vec![0.3, 1.1, 0.2], vec![0.9, 0.1, 0.5], vec![0.4, 0.4, 0.4]];
        let run = |scale: f64| {
            let mut g = Graph::new();
            let scores: Vec<f64> = [0.2, 0.8, 0.5].iter().map(|s| s * scale).collect();
            let sv = g.constant(&scores);
            let feats = feature_matrix(&mut g, &cols);
            let proto = compute_prototype(&mut g, sv, feats, 1, 3).unwrap();
            g.value(proto.var).to_vec()
        };
        let a = run(1.0);
        let b = run(7.3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn prototype_permutation_invariant() {
        let cols = vec![vec![0.3, 1.1], vec![0.9, 0.1], vec![0.4, 0.4]];
        let scores = [0.2, 0.8, 0.5];
        let perm = [2usize, 0, 1];
        let mut g = Graph::new();
        let sv = g.constant(&scores);
        let feats = feature_matrix(&mut g, &cols);
        let a = compute_prototype(&mut g, sv, feats, 1, 3).unwrap();
        let mut g2 = Graph::new();
        let scores_p: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let cols_p: Vec<Vec<f64>> = perm.iter().map(|&i| cols[i].clone()).collect();
        let sv2 = g2.constant(&scores_p);
        let feats2 = feature_matrix(&mut g2, &cols_p);
        let b = compute_prototype(&mut g2, sv2, feats2, 1, 3).unwrap();
        for (x, y) in g.value(a.var).iter().zip(g2.value(b.var)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn absent_class_errors() {
        let mut g = Graph::new();
        let scores = g.constant(&[0.0, 0.0]);
        let feats = feature_matrix(&mut g, &[vec![1.0], vec![1.0]]);
        assert!(matches!(
            compute_prototype(&mut g, scores, feats, 3, 2),
            Err(FbrError::ClassAbsent(3))
        ));
    }

    #[test]
    fn queries_follow_label_and_threshold() {
        // pixels: (class 1, 0.3), (class 1, 0.5), (class 2, 0.3) -> only first
        let mut g = Graph::new();
        let seeds = SeedMap::new(vec![1, 1, 2], 1, 3).unwrap();
        let scores = g.constant(&[0.3, 0.5, 0.3]);
        let feats = feature_matrix(&mut g, &[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 2.0]]);
        let q = select_queries(&mut g, &seeds, scores, feats, 1, 0.4).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.pixel_coords, vec![(0, 0)]);
        let v = g.value(q.vars[0]);
        assert!((v[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn all_confident_pixels_give_empty_query_set() {
        let mut g = Graph::new();
        let seeds = SeedMap::new(vec![1, 1], 1, 2).unwrap();
        let scores = g.constant(&[0.9, 0.4]);
        let feats = feature_matrix(&mut g, &[vec![1.0], vec![1.0]]);
        let q = select_queries(&mut g, &seeds, scores, feats, 1, 0.4).unwrap();
        assert!(q.is_empty());
    }

    #[test]
    fn query_partition_identity() {
        // |queries| + |confident pixels of c| = |pixels seeded c|
        let mut g = Graph::new();
        let labels = vec![1, 2, 1, 1, 3, 1, 2, 1];
        let seeds = SeedMap::new(labels.clone(), 2, 4).unwrap();
        let scores_v = [0.1, 0.9, 0.6, 0.2, 0.3, 0.45, 0.1, 0.39];
        let scores = g.constant(&scores_v);
        let cols: Vec<Vec<f64>> = (0..8).map(|j| vec![1.0 + j as f64, 2.0]).collect();
        let feats = feature_matrix(&mut g, &cols);
        let beta = 0.4;
        let q = select_queries(&mut g, &seeds, scores, feats, 1, beta).unwrap();
        let seeded: usize = labels.iter().filter(|&&l| l == 1).count();
        let confident = (0..8)
            .filter(|&j| labels[j] == 1 && scores_v[j] >= beta)
            .count();
        assert_eq!(q.len() + confident, seeded);
    }
}
