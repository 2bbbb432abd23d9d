//! Synthetic dataset with controllable class/background-texture
//! co-occurrence. Each image places one or two foreground shapes on a
//! texture drawn from the first class's co-occurrence row, so a texture can
//! carry spurious evidence for its correlated class. Ground-truth masks are
//! exact by construction and reserved for evaluation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam::SeedMap;
use crate::error::{FbrError, Result};
use crate::numerics::Tensor;
use crate::par::parallel_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 0x51ab_17e0,
            Split::Val => 0xc3d2_94f1,
        }
    }

    pub fn count(self, config: &SynthConfig) -> usize {
        match self {
            Split::Train => config.train_count,
            Split::Val => config.val_count,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = FbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(FbrError::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_textures")]
    pub textures: usize,
    #[serde(default = "default_image_size")]
    pub image_size: (usize, usize),
    /// Row-stochastic class-to-texture matrix; `cooccurrence[c][t]` is the
    /// probability that class `c + 1` appears on texture `t`.
    #[serde(default)]
    pub cooccurrence: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    #[serde(default = "default_val_count")]
    pub val_count: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Bounds on the number of foreground shapes per image.
    #[serde(default = "default_min_shapes")]
    pub min_shapes: usize,
    #[serde(default = "default_max_shapes")]
    pub max_shapes: usize,
}

fn default_num_classes() -> usize {
    4
}
fn default_textures() -> usize {
    4
}
fn default_image_size() -> (usize, usize) {
    (64, 64)
}
fn default_train_count() -> usize {
    512
}
fn default_val_count() -> usize {
    128
}
fn default_min_shapes() -> usize {
    1
}
fn default_max_shapes() -> usize {
    2
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: default_num_classes(),
            textures: default_textures(),
            image_size: default_image_size(),
            cooccurrence: None,
            train_count: default_train_count(),
            val_count: default_val_count(),
            rng_seed: 0,
            min_shapes: default_min_shapes(),
            max_shapes: default_max_shapes(),
        }
    }
}

impl SynthConfig {
    /// Resolved co-occurrence matrix: the configured one, or 0.9 diagonal
    /// dominance with the rest spread uniformly.
    pub fn cooccurrence_matrix(&self) -> Vec<Vec<f64>> {
        match &self.cooccurrence {
            Some(m) => m.clone(),
            None => {
                let t = self.textures;
                (0..self.num_classes)
                    .map(|c| {
                        let main = c % t;
                        (0..t)
                            .map(|j| {
                                if j == main {
                                    0.9
                                } else {
                                    0.1 / (t - 1).max(1) as f64
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(FbrError::Config("num_classes must be >= 2".into()));
        }
        if self.textures == 0 {
            return Err(FbrError::Config("textures must be >= 1".into()));
        }
        let (h, w) = self.image_size;
        if h < 32 || w < 32 {
            return Err(FbrError::Config("image_size must be at least 32x32".into()));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(FbrError::Config("need 1 <= min_shapes <= max_shapes".into()));
        }
        if self.max_shapes > self.num_classes {
            return Err(FbrError::Config("max_shapes cannot exceed num_classes".into()));
        }
        let m = self.cooccurrence_matrix();
        if m.len() != self.num_classes {
            return Err(FbrError::Config("cooccurrence must have one row per class".into()));
        }
        for (c, row) in m.iter().enumerate() {
            if row.len() != self.textures {
                return Err(FbrError::Config(format!(
                    "cooccurrence row {c} must have {} entries",
                    self.textures
                )));
            }
            if row.iter().any(|p| *p < 0.0) {
                return Err(FbrError::Config("cooccurrence entries must be >= 0".into()));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(FbrError::Config(format!(
                    "cooccurrence row {c} sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn bg_label(&self) -> u8 {
        (self.num_classes + 1) as u8
    }
}

/// One generated image with its weak label and exact mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: Vec<bool>,
    pub gt_mask: SeedMap,
    pub texture_id: usize,
    pub index: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn sample_seed(root: u64, split: Split, index: usize) -> u64 {
    splitmix64(splitmix64(root ^ split.stream_id()) ^ index as u64)
}

/// Generate a full split deterministically; each sample derives its own
/// stream from `(rng_seed, split, index)`, so parallel generation matches
/// serial generation bit for bit.
pub fn generate(config: &SynthConfig, split: Split) -> Result<Vec<Sample>> {
    config.validate()?;
    let count = split.count(config);
    let results = parallel_map(count, |i| generate_sample(config, split, i));
    results.into_iter().collect()
}

fn generate_sample(config: &SynthConfig, split: Split, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.rng_seed, split, index));
    let (h, w) = config.image_size;
    let c = config.num_classes;
    let matrix = config.cooccurrence_matrix();

    for _attempt in 0..40 {
        let shape_count = rng.gen_range(config.min_shapes..=config.max_shapes);
        let mut classes: Vec<usize> = (1..=c).collect();
        // uniform choice of distinct classes, first drawn first
        let mut drawn = Vec::with_capacity(shape_count);
        for _ in 0..shape_count {
            let pick = rng.gen_range(0..classes.len());
            drawn.push(classes.swap_remove(pick));
        }

        let texture_id = draw_from_row(&matrix[drawn[0] - 1], &mut rng);
        let mut image = render_texture(texture_id, h, w, &mut rng);
        let mut mask = vec![config.bg_label(); h * w];

        let mut ok = true;
        for &class in &drawn {
            if !place_shape(&mut image, &mut mask, class, h, w, &mut rng) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }

        let fg = mask.iter().filter(|&&l| l != config.bg_label()).count();
        let fraction = fg as f64 / (h * w) as f64;
        if !(0.05..=0.5).contains(&fraction) {
            continue;
        }

        let mut label = vec![false; c];
        for &class in &drawn {
            label[class - 1] = true;
        }
        return Ok(Sample {
            image: Tensor::from_vec(&[3, h, w], image)?,
            label,
            gt_mask: SeedMap::new(mask, h, w)?,
            texture_id,
            index,
        });
    }
    Err(FbrError::Generation(format!(
        "shape placement failed after bounded retries (split {split:?}, index {index})"
    )))
}

fn draw_from_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut draw: f64 = rng.gen_range(0.0..1.0);
    for (t, p) in row.iter().enumerate() {
        if draw < *p {
            return t;
        }
        draw -= p;
    }
    row.len() - 1
}

/// Paint the background texture; each kind has a distinct hue and spatial
/// structure plus mild pixel noise.
fn render_texture(texture_id: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; 3 * h * w];
    let put = |img: &mut Vec<f64>, y: usize, x: usize, rgb: [f64; 3]| {
        for (ch, v) in rgb.iter().enumerate() {
            img[ch * h * w + y * w + x] = v.clamp(0.0, 1.0);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let rgb = match texture_id % 4 {
                0 => {
                    // horizontal stripes, blue
                    let t = 0.5 + 0.45 * (y as f64 * std::f64::consts::PI / 4.0).sin();
                    [0.10, 0.20, t]
                }
                1 => {
                    // checkerboard, green
                    let on = (y / 8 + x / 8) % 2 == 0;
                    [0.08, if on { 0.85 } else { 0.25 }, 0.12]
                }
                2 => {
                    // horizontal ramp, red
                    let t = 0.15 + 0.75 * x as f64 / w as f64;
                    [t, 0.15, 0.10]
                }
                _ => {
                    // speckle, yellow
                    let n: f64 = rng.gen_range(0.25..0.95);
                    [n, 0.8 * n, 0.10]
                }
            };
            put(&mut img, y, x, rgb);
        }
    }
    // mild sensor noise everywhere
    for v in img.iter_mut() {
        *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    img
}

fn shape_color(class: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let base = match (class - 1) % 4 {
        0 => [0.82, 0.58, 0.55],
        1 => [0.55, 0.82, 0.58],
        2 => [0.55, 0.60, 0.84],
        _ => [0.80, 0.78, 0.52],
    };
    let jitter: f64 = rng.gen_range(-0.05..0.05);
    [base[0] + jitter, base[1] + jitter, base[2] + jitter]
}

/// Rasterize a class's shape at a random free location. Returns false when
/// no non-overlapping placement was found in the bounded retries.
fn place_shape(
    image: &mut [f64],
    mask: &mut [u8],
    class: usize,
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    let s = h.min(w) as f64;
    let bg = *mask.iter().max().unwrap();
    for _ in 0..30 {
        let pixels = match (class - 1) % 4 {
            0 => {
                let side = rng.gen_range((0.25 * s) as usize..=(0.44 * s) as usize);
                let y0 = rng.gen_range(1..h - side - 1);
                let x0 = rng.gen_range(1..w - side - 1);
                square_pixels(y0, x0, side, w)
            }
            1 => {
                let r = rng.gen_range((0.14 * s) as usize..=(0.22 * s) as usize);
                let cy = rng.gen_range(r + 1..h - r - 1);
                let cx = rng.gen_range(r + 1..w - r - 1);
                disc_pixels(cy, cx, r, w)
            }
            2 => {
                let base = rng.gen_range((0.38 * s) as usize..=(0.5 * s) as usize);
                let y0 = rng.gen_range(1..h - base - 1);
                let x0 = rng.gen_range(1..w - base - 1);
                triangle_pixels(y0, x0, base, w)
            }
            _ => {
                let len = rng.gen_range((0.31 * s) as usize..=(0.47 * s) as usize);
                let arm = (0.125 * s) as usize;
                let cy = rng.gen_range(len / 2 + 1..h - len / 2 - 1);
                let cx = rng.gen_range(len / 2 + 1..w - len / 2 - 1);
                cross_pixels(cy, cx, len, arm, w)
            }
        };
        if pixels.iter().any(|&j| mask[j] != bg) {
            continue;
        }
        let color = shape_color(class, rng);
        let hw = h * w;
        for &j in &pixels {
            mask[j] = class as u8;
            for ch in 0..3 {
                let noisy = (color[ch] + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0);
                image[ch * hw + j] = noisy;
            }
        }
        return true;
    }
    false
}

fn square_pixels(y0: usize, x0: usize, side: usize, w: usize) -> Vec<usize> {
    let mut p = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            p.push(y * w + x);
        }
    }
    p
}

fn disc_pixels(cy: usize, cx: usize, r: usize, w: usize) -> Vec<usize> {
    let mut p = Vec::new();
    let r2 = (r * r) as isize;
    for dy in -(r as isize)..=r as isize {
        for dx in -(r as isize)..=r as isize {
            if dy * dy + dx * dx <= r2 {
                p.push(((cy as isize + dy) as usize) * w + (cx as isize + dx) as usize);
            }
        }
    }
    p
}

fn triangle_pixels(y0: usize, x0: usize, base: usize, w: usize) -> Vec<usize> {
    // upright isoceles triangle filling a base x base box
    let mut p = Vec::new();
    for row in 0..base {
        let half = (row * base) / (2 * base.max(1));
        let mid = x0 + base / 2;
        for x in mid.saturating_sub(half)..=(mid + half).min(x0 + base - 1) {
            p.push((y0 + row) * w + x);
        }
    }
    p
}

fn cross_pixels(cy: usize, cx: usize, len: usize, arm: usize, w: usize) -> Vec<usize> {
    let mut p = Vec::new();
    let half_len = (len / 2) as isize;
    let half_arm = (arm / 2).max(1) as isize;
    for dy in -half_len..=half_len {
        for dx in -half_arm..=half_arm {
            p.push(((cy as isize + dy) as usize) * w + (cx as isize + dx) as usize);
        }
    }
    for dy in -half_arm..=half_arm {
        for dx in -half_len..=half_len {
            let j = ((cy as isize + dy) as usize) * w + (cx as isize + dx) as usize;
            if !p.contains(&j) {
                p.push(j);
            }
        }
    }
    p
}

/// Write a sample's image as binary PPM (P6), 8 bits per channel.
pub fn write_ppm(sample: &Sample, path: &Path) -> Result<()> {
    let shape = sample.image.shape();
    let (h, w) = (shape[1], shape[2]);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    let data = sample.image.data();
    let hw = h * w;
    let mut row = Vec::with_capacity(3 * hw);
    for j in 0..hw {
        for ch in 0..3 {
            row.push((data[ch * hw + j] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    f.write_all(&row)?;
    Ok(())
}

/// Dump a whole split: PPM images, PGM masks, and a CSV of binary labels.
pub fn dump_split(samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut labels = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.csv"))?);
    for sample in samples {
        write_ppm(sample, &dir.join(format!("image_{:05}.ppm", sample.index)))?;
        sample
            .gt_mask
            .write_pgm(&dir.join(format!("mask_{:05}.pgm", sample.index)))?;
        let bits: Vec<String> = sample
            .label
            .iter()
            .map(|&b| if b { "1".into() } else { "0".to_string() })
            .collect();
        writeln!(labels, "{},{}", sample.index, bits.join(","))?;
    }
    Ok(())
}
