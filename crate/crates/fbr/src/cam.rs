//! Classification scoring, class activation maps, and seed derivation.
//!
//! Class scores use thresholded average pooling: per feature channel, only
//! values above a threshold are averaged before the classifier weights are
//! applied. Activation maps are rectified, max-normalized per class over the
//! image, stacked with a constant background score, and renormalized per
//! pixel to a categorical distribution.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FbrError, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapConfig {
    /// Pooling threshold: channel values must exceed this to be averaged.
    #[serde(default = "default_alpha_tap")]
    pub alpha_tap: f64,
    /// Constant background channel score appended before renormalization.
    #[serde(default = "default_bg_score")]
    pub bg_score: f64,
    /// Query certainty threshold: pixels with activation below it are queries.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha_tap() -> f64 {
    0.1
}
fn default_bg_score() -> f64 {
    0.3
}
fn default_beta() -> f64 {
    0.4
}

impl Default for TapConfig {
    fn default() -> Self {
        Self {
            alpha_tap: default_alpha_tap(),
            bg_score: default_bg_score(),
            beta: default_beta(),
        }
    }
}

impl TapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_tap < 0.0 {
            return Err(FbrError::Config("alpha_tap must be >= 0".into()));
        }
        if !(self.bg_score > 0.0 && self.bg_score < 1.0) {
            return Err(FbrError::Config("bg_score must lie in (0, 1)".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(FbrError::Config("beta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Linear classifier over pooled features: one weight row per foreground class.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub theta: Tensor,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn new(num_classes: usize, feature_dim: usize, rng_seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        Self {
            theta: Tensor::uniform_fan_in(&[num_classes, feature_dim], feature_dim, &mut rng)
                .with_grad(),
            num_classes,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("cls.theta".into(), &self.theta)]
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("cls.theta".into(), &mut self.theta)]
    }
}

/// Per-pixel categorical scores over `C` foreground classes plus background.
///
/// `probs` holds `C + 1` rows of length `h * w`, the last being background;
/// `class_maps` are the rectified, max-normalized per-class maps before the
/// per-pixel renormalization (absent classes are zero rows).
pub struct CamStack {
    pub class_maps: Vec<Var>,
    pub probs: Vec<Var>,
    pub present: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl CamStack {
    pub fn num_classes(&self) -> usize {
        self.class_maps.len()
    }

    /// 1-based label reserved for background.
    pub fn bg_label(&self) -> u8 {
        (self.num_classes() + 1) as u8
    }
}

/// Per-pixel hard labels: `1..=C` for foreground classes, `C + 1` background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMap {
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl SeedMap {
    pub fn new(labels: Vec<u8>, height: usize, width: usize) -> Result<Self> {
        if labels.len() != height * width {
            return Err(FbrError::InvalidArgument(format!(
                "label count {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self { labels, height, width })
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> SeedMap {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut labels = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                labels[y * w + x] = self.labels[(y / factor) * self.width + x / factor];
            }
        }
        SeedMap { labels, height: h, width: w }
    }

    /// Write as binary PGM (P5), one byte per pixel holding the class index.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.labels)?;
        Ok(())
    }
}

/// Thresholded average pooling followed by the classifier: returns the
/// `[C]`-vector of class scores. Channels where no pixel exceeds the
/// threshold fall back to their plain spatial mean.
pub fn tap_scores(g: &mut Graph, features: Var, head: &ClassifierHead, alpha_tap: f64) -> Result<Var> {
    let dims = g.dims(features).to_vec();
    if dims.len() != 2 || dims[0] != head.theta.shape()[1] {
        return Err(FbrError::InvalidArgument(format!(
            "tap_scores expects [{}, P] features, got {dims:?}",
            head.theta.shape()[1]
        )));
    }
    let (l, p) = (dims[0], dims[1]);
    let mut pooled = Vec::with_capacity(l);
    for i in 0..l {
        let row = g.slice(features, i * p, p);
        let above: Vec<usize> = g
            .value(row)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > alpha_tap)
            .map(|(j, _)| j)
            .collect();
        let channel_mean = if above.is_empty() {
            g.mean(row)
        } else {
            let selected = g.gather(row, &above);
            g.mean(selected)
        };
        pooled.push(channel_mean);
    }
    let pooled_vec = g.concat(&pooled);
    let pooled_col = g.reshape(pooled_vec, &[l, 1]);
    let theta = g.leaf(&head.theta);
    let scores = g.matmul(theta, pooled_col);
    Ok(g.reshape(scores, &[head.num_classes]))
}

/// Per-class binary cross-entropy of the logistic-squashed scores against
/// the image-level label vector, averaged over classes.
pub fn cls_loss(g: &mut Graph, scores: Var, labels: &[bool]) -> Result<Var> {
    if g.numel(scores) != labels.len() {
        return Err(FbrError::InvalidArgument(format!(
            "got {} scores for {} labels",
            g.numel(scores),
            labels.len()
        )));
    }
    let targets: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let probs = g.sigmoid(scores);
    Ok(g.bce_mean(probs, &targets))
}

/// Build the activation stack for one image from its features and labels.
pub fn make_cam(
    g: &mut Graph,
    features: Var,
    head: &ClassifierHead,
    labels: &[bool],
    bg_score: f64,
    height: usize,
    width: usize,
) -> Result<CamStack> {
    let dims = g.dims(features).to_vec();
    let p = height * width;
    if dims.len() != 2 || dims[1] != p {
        return Err(FbrError::InvalidArgument(format!(
            "expected [L, {p}] features, got {dims:?}"
        )));
    }
    let l = dims[0];
    if head.theta.shape() != [labels.len(), l] {
        return Err(FbrError::InvalidArgument("classifier/label shape mismatch".into()));
    }
    if !labels.iter().any(|&y| y) {
        return Err(FbrError::InvalidArgument("label vector marks no class present".into()));
    }

    let theta = g.leaf(&head.theta);
    let zeros = vec![0.0; p];
    let mut class_maps = Vec::with_capacity(labels.len());
    for (c, &present) in labels.iter().enumerate() {
        if !present {
            class_maps.push(g.constant(&zeros));
            continue;
        }
        let row = g.slice(theta, c * l, l);
        let row_mat = g.reshape(row, &[1, l]);
        let raw = g.matmul(row_mat, features);
        let raw_flat = g.reshape(raw, &[p]);
        let rect = g.relu(raw_flat);
        let peak = g.max_all(rect);
        let denom = g.clamp_min(peak, 1e-12);
        class_maps.push(g.bcast_div(rect, denom));
    }

    let bg_row = g.constant(&vec![bg_score; p]);
    let mut total = bg_row;
    for &m in &class_maps {
        total = g.add(total, m);
    }
    let mut probs: Vec<Var> = class_maps.iter().map(|&m| g.div(m, total)).collect();
    probs.push(g.div(bg_row, total));

    Ok(CamStack {
        class_maps,
        probs,
        present: labels.to_vec(),
        height,
        width,
    })
}

/// Derive hard per-pixel labels by argmax over the stack. Ties resolve
/// toward background, then toward the lowest class index.
pub fn seed_map(g: &Graph, cam: &CamStack) -> SeedMap {
    let p = cam.height * cam.width;
    let c = cam.num_classes();
    let bg = g.value(cam.probs[c]);
    let rows: Vec<&[f64]> = (0..c).map(|i| g.value(cam.probs[i])).collect();
    let mut labels = vec![0u8; p];
    for j in 0..p {
        let mut best = bg[j];
        for row in &rows {
            if row[j] > best {
                best = row[j];
            }
        }
        labels[j] = if bg[j] >= best {
            cam.bg_label()
        } else {
            let class = rows.iter().position(|row| row[j] >= best).unwrap();
            (class + 1) as u8
        };
    }
    SeedMap { labels, height: cam.height, width: cam.width }
}

/// Binary mask of pixels whose summed per-class activation (on the
/// max-normalized maps) falls strictly below `threshold`.
pub fn bg_pseudo_mask(g: &Graph, cam: &CamStack, threshold: f64) -> Vec<f64> {
    let p = cam.height * cam.width;
    let rows: Vec<&[f64]> = cam.class_maps.iter().map(|&m| g.value(m)).collect();
    (0..p)
        .map(|j| {
            let total: f64 = rows.iter().map(|r| r[j]).sum();
            if total < threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
