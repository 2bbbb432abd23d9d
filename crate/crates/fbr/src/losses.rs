//! Contrastive losses and the joint objective.
//!
//! The shared contrastive form pulls each query toward its class prototype
//! and away from a fixed set of negative keys. Negatives are detached value
//! vectors: gradients shape queries and prototypes only. The sum over
//! classes and queries is divided by the total query count so the loss
//! weights stay batch-size independent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FbrError, Result};
use crate::nroi::NroiBank;
use crate::numerics::{l2_norm, Graph, Tensor, Var};
use crate::sampler::{negative_distribution, sample_fg_negatives, NegativePool, SemanticGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature for the fore-to-background contrast.
    #[serde(default = "default_tau_bg")]
    pub tau_bg: f64,
    /// Temperature for the intra-foreground contrast.
    #[serde(default = "default_tau_fg")]
    pub tau_fg: f64,
    /// Weight of the fore-to-background term.
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    /// Weight of the intra-foreground term.
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    /// Weight of the auxiliary background segmentation term.
    #[serde(default = "default_alpha_seg")]
    pub alpha_seg: f64,
}

fn default_tau_bg() -> f64 {
    0.5
}
fn default_tau_fg() -> f64 {
    0.1
}
fn default_lambda1() -> f64 {
    0.1
}
fn default_lambda2() -> f64 {
    0.01
}
fn default_alpha_seg() -> f64 {
    0.01
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_bg: default_tau_bg(),
            tau_fg: default_tau_fg(),
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            alpha_seg: default_alpha_seg(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_bg", self.tau_bg),
            ("tau_fg", self.tau_fg),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha_seg", self.alpha_seg),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(FbrError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar parts of one training step's objective.
///
/// `total = cls + lambda1*fb + lambda2*ifg + alpha_seg*seg`, computed once
/// here with the exact association used everywhere, so the decomposition
/// identity holds to machine precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub fb: f64,
    pub ifg: f64,
    pub seg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(cls: f64, fb: f64, ifg: f64, seg: f64, cfg: &LossConfig) -> Self {
        let total = ((cls + cfg.lambda1 * fb) + cfg.lambda2 * ifg) + cfg.alpha_seg * seg;
        Self { cls, fb, ifg, seg, total }
    }
}

/// One class's contribution to a contrastive term: its prototype node and
/// the query nodes pulled toward it.
pub struct ClassContrast {
    pub class_id: usize,
    pub prototype: Var,
    pub queries: Vec<Var>,
}

/// A contrastive part together with its degeneracy flag; skipped parts
/// contribute an exact zero.
pub struct LossPart {
    pub value: Var,
    pub skipped: bool,
}

fn assert_unit(g: &Graph, v: Var, what: &str) -> Result<()> {
    let n = l2_norm(g.value(v));
    if (n - 1.0).abs() > 1e-6 {
        return Err(FbrError::Contract(format!("{what} must be unit-norm, |v| = {n}")));
    }
    Ok(())
}

fn unit_value(v: &[f64], what: &str) -> Result<()> {
    let n = l2_norm(v);
    if (n - 1.0).abs() > 1e-6 {
        return Err(FbrError::Contract(format!("{what} must be unit-norm, |v| = {n}")));
    }
    Ok(())
}

/// Prototype-anchored contrastive loss over classes and queries against
/// per-class negative key sets, averaged over the total query count.
/// No queries at all yields an exact zero.
pub fn pcl(
    g: &mut Graph,
    classes: &[ClassContrast],
    negatives: &[Vec<Vec<f64>>],
    tau: f64,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(FbrError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    assert_eq!(classes.len(), negatives.len(), "one negative set per class");
    let total_queries: usize = classes.iter().map(|c| c.queries.len()).sum();
    if total_queries == 0 {
        return Ok(g.constant_scalar(0.0));
    }

    let mut per_query = Vec::with_capacity(total_queries);
    for (class, negs) in classes.iter().zip(negatives) {
        if class.queries.is_empty() {
            continue;
        }
        assert_unit(g, class.prototype, "prototype")?;
        for n in negs {
            unit_value(n, "negative key")?;
        }
        let dim = g.numel(class.prototype);
        let neg_mat = if negs.is_empty() {
            None
        } else {
            let mut flat = Vec::with_capacity(negs.len() * dim);
            for n in negs {
                assert_eq!(n.len(), dim, "negative key dimension mismatch");
                flat.extend_from_slice(n);
            }
            Some(g.constant_shaped(&flat, &[negs.len(), dim]))
        };

        for &q in &class.queries {
            assert_unit(g, q, "query")?;
            let pos = g.dot(q, class.prototype);
            let logits = match neg_mat {
                Some(nm) => {
                    let q_col = g.reshape(q, &[dim, 1]);
                    let neg_scores = g.matmul(nm, q_col);
                    let neg_flat = g.reshape(neg_scores, &[negs.len()]);
                    g.concat(&[pos, neg_flat])
                }
                None => pos,
            };
            let scaled = g.mul_scalar(logits, 1.0 / tau);
            let lse = g.log_sum_exp(scaled);
            let pos_scaled = g.slice(scaled, 0, 1);
            per_query.push(g.sub(lse, pos_scaled));
        }
    }
    let stacked = g.concat(&per_query);
    let summed = g.sum(stacked);
    Ok(g.mul_scalar(summed, 1.0 / total_queries as f64))
}

/// Fore-to-background contrast: one bank draw of `m` keys shared by every
/// query, at the background temperature. An empty bank or an empty query
/// collection skips the term.
pub fn fb_loss(
    g: &mut Graph,
    classes: &[ClassContrast],
    bank: &NroiBank,
    cfg: &LossConfig,
    m: usize,
    rng: &mut impl Rng,
) -> Result<LossPart> {
    let total_queries: usize = classes.iter().map(|c| c.queries.len()).sum();
    if bank.is_empty() || total_queries == 0 {
        return Ok(LossPart { value: g.constant_scalar(0.0), skipped: true });
    }
    let keys = bank.sample(m, rng)?;
    let negatives: Vec<Vec<Vec<f64>>> = classes.iter().map(|_| keys.clone()).collect();
    let value = pcl(g, classes, &negatives, cfg.tau_bg)?;
    Ok(LossPart { value, skipped: false })
}

/// Intra-foreground contrast with actively sampled negatives: each query
/// class draws `m` keys from the other classes' pixels following the
/// softmax of its graph row. Classes whose pool is entirely empty are
/// dropped; if nothing remains the term is skipped.
pub fn if_loss(
    g: &mut Graph,
    classes: &[ClassContrast],
    graph: &SemanticGraph,
    pool: &NegativePool,
    cfg: &LossConfig,
    m: usize,
    rng: &mut impl Rng,
) -> Result<LossPart> {
    let mut kept = Vec::new();
    let mut negatives = Vec::new();
    for class in classes {
        if class.queries.is_empty() {
            continue;
        }
        let (ids, probs) = match negative_distribution(graph, class.class_id) {
            Ok(d) => d,
            Err(FbrError::InsufficientClasses(_)) => continue,
            Err(e) => return Err(e),
        };
        match sample_fg_negatives(pool, &ids, &probs, m, rng) {
            Ok(keys) => {
                kept.push(ClassContrast {
                    class_id: class.class_id,
                    prototype: class.prototype,
                    queries: class.queries.clone(),
                });
                negatives.push(keys);
            }
            Err(FbrError::EmptyPool) => continue,
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Ok(LossPart { value: g.constant_scalar(0.0), skipped: true });
    }
    let value = pcl(g, &kept, &negatives, cfg.tau_fg)?;
    Ok(LossPart { value, skipped: false })
}

/// Background predictor: one weight per channel plus a bias over the
/// batch-normalized background representation, squashed to a probability.
#[derive(Debug, Clone)]
pub struct SegHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SegHead {
    pub fn new(dim: usize, rng_seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        Self {
            weight: Tensor::uniform_fan_in(&[1, dim], dim, &mut rng).with_grad(),
            bias: Tensor::uniform_fan_in(&[1], dim, &mut rng).with_grad(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("seg.weight".into(), &self.weight), ("seg.bias".into(), &self.bias)]
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("seg.weight".into(), &mut self.weight), ("seg.bias".into(), &mut self.bias)]
    }
}

/// Normalize each channel of `[D, P]` to zero mean and unit variance over
/// the pixel axis (batch statistics, no running state).
pub fn batch_normalize(g: &mut Graph, features: Var) -> Var {
    let dims = g.dims(features).to_vec();
    assert_eq!(dims.len(), 2, "batch_normalize expects [D, P]");
    let (d, p) = (dims[0], dims[1]);
    let mut rows = Vec::with_capacity(d);
    for i in 0..d {
        let row = g.slice(features, i * p, p);
        let mu = g.mean(row);
        let centered = g.bcast_sub(row, mu);
        let sq = g.mul(centered, centered);
        let var = g.mean(sq);
        let var_eps = g.add_scalar(var, 1e-8);
        let sd = g.sqrt(var_eps);
        rows.push(g.bcast_div(centered, sd));
    }
    let flat = g.concat(&rows);
    g.reshape(flat, &[d, p])
}

/// Mean binary cross-entropy of the background predictor against the
/// low-activation pseudo mask.
pub fn bg_seg_loss(g: &mut Graph, z_bg: Var, mask: &[f64], head: &SegHead) -> Result<Var> {
    let dims = g.dims(z_bg).to_vec();
    if dims.len() != 2 || dims[1] != mask.len() {
        return Err(FbrError::InvalidArgument(format!(
            "features {dims:?} do not align with a {}-pixel mask",
            mask.len()
        )));
    }
    if dims[0] != head.weight.shape()[1] {
        return Err(FbrError::InvalidArgument("segmentation head dimension mismatch".into()));
    }
    let bn = batch_normalize(g, z_bg);
    let w = g.leaf(&head.weight);
    let b = g.leaf(&head.bias);
    let logits = g.matmul(w, bn);
    let logits_flat = g.reshape(logits, &[mask.len()]);
    let shifted = g.bcast_add(logits_flat, b);
    let probs = g.sigmoid(shifted);
    Ok(g.bce_mean(probs, mask))
}

/// Weighted sum of the four parts on the tape, plus the matching scalar
/// breakdown.
pub fn total_loss(
    g: &mut Graph,
    cls: Var,
    fb: Var,
    ifg: Var,
    seg: Var,
    cfg: &LossConfig,
) -> (Var, LossBreakdown) {
    let breakdown = LossBreakdown::new(
        g.value(cls)[0],
        g.value(fb)[0],
        g.value(ifg)[0],
        g.value(seg)[0],
        cfg,
    );
    let fb_w = g.mul_scalar(fb, cfg.lambda1);
    let if_w = g.mul_scalar(ifg, cfg.lambda2);
    let seg_w = g.mul_scalar(seg, cfg.alpha_seg);
    let a = g.add(cls, fb_w);
    let b = g.add(a, if_w);
    let total = g.add(b, seg_w);
    (total, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, normalize};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn unit_const(g: &mut Graph, v: &[f64]) -> Var {
        let u = normalize(v).unwrap();
        g.constant(&u)
    }

    fn basis(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn pcl_single_query_orthogonal_negative() {
        for (tau, expected) in [
            (1.0, 0.31326168751822286),
            (0.5, 0.1269280110429726),
            (0.1, 4.5398899216870535e-05),
        ] {
            let mut g = Graph::new();
            let p = unit_const(&mut g, &basis(4, 0));
            let q = unit_const(&mut g, &basis(4, 0));
            let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
            let negs = vec![vec![basis(4, 1)]];
            let loss = pcl(&mut g, &classes, &negs, tau).unwrap();
            assert!(
                (g.value(loss)[0] - expected).abs() < 1e-6,
                "tau {tau}: got {}",
                g.value(loss)[0]
            );
        }
    }

    #[test]
    fn pcl_no_queries_is_zero() {
        let mut g = Graph::new();
        let p = unit_const(&mut g, &basis(3, 0));
        let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![] }];
        let loss = pcl(&mut g, &classes, &[vec![]], 0.5).unwrap();
        assert_eq!(g.value(loss)[0], 0.0);
    }

    #[test]
    fn pcl_rejects_non_normalized() {
        let mut g = Graph::new();
        let p = g.constant(&[0.5, 0.5, 0.0]);
        let q = unit_const(&mut g, &basis(3, 0));
        let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
        assert!(matches!(
            pcl(&mut g, &classes, &[vec![basis(3, 1)]], 0.5),
            Err(FbrError::Contract(_))
        ));
    }

    #[test]
    fn pcl_is_invariant_to_negative_permutation() {
        let negs: Vec<Vec<f64>> = vec![
            normalize(&[1.0, 2.0, 0.1]).unwrap(),
            normalize(&[-1.0, 0.3, 0.5]).unwrap(),
            normalize(&[0.2, -0.7, 1.0]).unwrap(),
        ];
        let run = |order: &[usize]| {
            let mut g = Graph::new();
            let p = unit_const(&mut g, &[0.3, 0.4, 0.6]);
            let q = unit_const(&mut g, &[0.5, 0.1, 0.2]);
            let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
            let permuted: Vec<Vec<f64>> = order.iter().map(|&i| negs[i].clone()).collect();
            let loss = pcl(&mut g, &classes, &[permuted], 0.5).unwrap();
            g.value(loss)[0]
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pcl_decreases_as_query_aligns_with_prototype() {
        let eval = |angle: f64| {
            let mut g = Graph::new();
            let p = unit_const(&mut g, &[1.0, 0.0]);
            let q = unit_const(&mut g, &[angle.cos(), angle.sin()]);
            let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
            let loss = pcl(&mut g, &classes, &[vec![basis(2, 1)]], 0.5).unwrap();
            g.value(loss)[0]
        };
        let aligned = eval(0.1);
        let misaligned = eval(1.2);
        assert!(aligned >= 0.0);
        assert!(aligned < misaligned);
    }

    #[test]
    fn pcl_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(23);
        use rand::Rng;
        let raw_p = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.2..1.0)).collect()).unwrap();
        let raw_q1 = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.2..1.0)).collect()).unwrap();
        let raw_q2 = Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(0.2..1.0)).collect()).unwrap();
        let negs = vec![vec![
            normalize(&[1.0, -0.5, 0.2, 0.9]).unwrap(),
            normalize(&[0.4, 1.0, -0.8, 0.0]).unwrap(),
        ]];
        let report = grad_check(
            |g, vars| {
                let p = g.l2_normalize(vars[0]);
                let q1 = g.l2_normalize(vars[1]);
                let q2 = g.l2_normalize(vars[2]);
                let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q1, q2] }];
                pcl(g, &classes, &negs, 0.5)
            },
            &[raw_p, raw_q1, raw_q2],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "rel {}", report.max_rel_error);
    }

    #[test]
    fn fb_loss_closed_form_with_repeated_negative() {
        let mut bank = NroiBank::new(512, 0);
        bank.push(&vec![basis(4, 1); 256]).unwrap();
        let mut g = Graph::new();
        let p = unit_const(&mut g, &basis(4, 0));
        let q = unit_const(&mut g, &basis(4, 0));
        let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
        let mut rng = StdRng::seed_from_u64(1);
        let part = fb_loss(&mut g, &classes, &bank, &LossConfig::default(), 256, &mut rng).unwrap();
        assert!(!part.skipped);
        // ln(1 + 256 e^{-1/tau_bg}) with tau_bg = 0.5
        assert!((g.value(part.value)[0] - 3.5736322398466616).abs() < 1e-9);
    }

    #[test]
    fn fb_loss_empty_bank_skips() {
        let bank = NroiBank::new(16, 0);
        let mut g = Graph::new();
        let p = unit_const(&mut g, &basis(2, 0));
        let q = unit_const(&mut g, &basis(2, 0));
        let classes = vec![ClassContrast { class_id: 1, prototype: p, queries: vec![q] }];
        let mut rng = StdRng::seed_from_u64(1);
        let part = fb_loss(&mut g, &classes, &bank, &LossConfig::default(), 8, &mut rng).unwrap();
        assert!(part.skipped);
        assert_eq!(g.value(part.value)[0], 0.0);
    }

    #[test]
    fn if_loss_closed_form_with_orthogonal_pool() {
        use crate::sampler::build_graph;
        let mut g = Graph::new();
        let p1 = unit_const(&mut g, &basis(4, 0));
        let p2 = unit_const(&mut g, &basis(4, 1));
        let q = unit_const(&mut g, &basis(4, 0));
        let classes = vec![
            ClassContrast { class_id: 1, prototype: p1, queries: vec![q] },
            ClassContrast { class_id: 2, prototype: p2, queries: vec![] },
        ];
        let graph = build_graph(&[(1, basis(4, 0)), (2, basis(4, 1))], 2).unwrap();
        let mut pool = NegativePool::new();
        pool.insert(2, vec![basis(4, 1)]);
        pool.insert(1, vec![basis(4, 0)]);
        let mut rng = StdRng::seed_from_u64(1);
        let part = if_loss(
            &mut g,
            &classes,
            &graph,
            &pool,
            &LossConfig::default(),
            256,
            &mut rng,
        )
        .unwrap();
        assert!(!part.skipped);
        // ln(1 + 256 e^{-1/tau_fg}) with tau_fg = 0.1
        assert!((g.value(part.value)[0] - 0.011555360933873264).abs() < 1e-5);
    }

    #[test]
    fn if_loss_empty_pool_skips() {
        use crate::sampler::build_graph;
        let mut g = Graph::new();
        let p1 = unit_const(&mut g, &basis(3, 0));
        let p2 = unit_const(&mut g, &basis(3, 1));
        let q = unit_const(&mut g, &basis(3, 0));
        let classes = vec![
            ClassContrast { class_id: 1, prototype: p1, queries: vec![q] },
            ClassContrast { class_id: 2, prototype: p2, queries: vec![] },
        ];
        let graph = build_graph(&[(1, basis(3, 0)), (2, basis(3, 1))], 2).unwrap();
        let pool = NegativePool::new();
        let mut rng = StdRng::seed_from_u64(1);
        let part = if_loss(&mut g, &classes, &graph, &pool, &LossConfig::default(), 8, &mut rng).unwrap();
        assert!(part.skipped);
    }

    #[test]
    fn bg_seg_loss_hand_values() {
        // logits chosen so the squashed predictions are exactly (0.9, 0.2);
        // bypass batch-norm by checking the bce composition directly
        let mut g = Graph::new();
        let probs = g.constant(&[0.9, 0.2]);
        let loss = g.bce_mean(probs, &[1.0, 0.0]);
        assert!((g.value(loss)[0] - 0.164252033486018).abs() < 1e-12);
    }

    #[test]
    fn bg_seg_loss_uniform_prediction_is_ln2() {
        let head = SegHead {
            weight: Tensor::zeros(&[1, 3]).with_grad(),
            bias: Tensor::zeros(&[1]).with_grad(),
        };
        let mut g = Graph::new();
        let z = g.constant_shaped(&[0.1, 0.9, 0.4, 0.3, 0.2, 0.8], &[3, 2]);
        let loss = bg_seg_loss(&mut g, z, &[1.0, 0.0], &head).unwrap();
        assert!((g.value(loss)[0] - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bg_seg_loss_perfect_fit_is_tiny() {
        // a strong weight on a channel that matches the mask drives the
        // predictions to the clipped extremes
        let head = SegHead {
            weight: Tensor::from_vec(&[1, 1], vec![60.0]).unwrap().with_grad(),
            bias: Tensor::zeros(&[1]).with_grad(),
        };
        let mut g = Graph::new();
        let z = g.constant_shaped(&[5.0, -5.0, 5.0, -5.0], &[1, 4]);
        let loss = bg_seg_loss(&mut g, z, &[1.0, 0.0, 1.0, 0.0], &head).unwrap();
        assert!(g.value(loss)[0] < 1e-6);
    }

    #[test]
    fn bg_seg_loss_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(31);
        use rand::Rng;
        let z = Tensor::from_vec(&[3, 6], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 3], (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.1]).unwrap();
        let mask = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let report = grad_check(
            |g, vars| {
                let bn = batch_normalize(g, vars[0]);
                let logits = g.matmul(vars[1], bn);
                let flat = g.reshape(logits, &[6]);
                let shifted = g.bcast_add(flat, vars[2]);
                let probs = g.sigmoid(shifted);
                Ok(g.bce_mean(probs, &mask))
            },
            &[z, w, b],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "rel {}", report.max_rel_error);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let cls = g.constant_scalar(1.0);
        let fb = g.constant_scalar(2.0);
        let ifg = g.constant_scalar(3.0);
        let seg = g.constant_scalar(4.0);
        let (total, breakdown) = total_loss(&mut g, cls, fb, ifg, seg, &cfg);
        assert!((g.value(total)[0] - 1.27).abs() < 1e-12);
        assert_eq!(breakdown.total, g.value(total)[0]);
        let recomputed = ((breakdown.cls + cfg.lambda1 * breakdown.fb)
            + cfg.lambda2 * breakdown.ifg)
            + cfg.alpha_seg * breakdown.seg;
        assert!((breakdown.total - recomputed).abs() <= 1e-12);
    }

    #[test]
    fn total_loss_all_contrastive_skipped() {
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let cls = g.constant_scalar(0.8);
        let zero = g.constant_scalar(0.0);
        let seg = g.constant_scalar(0.5);
        let (total, _) = total_loss(&mut g, cls, zero, zero, seg, &cfg);
        assert!((g.value(total)[0] - (0.8 + 0.01 * 0.5)).abs() < 1e-15);
    }
}
