//! Background semantic discovery: per-image K-means over background pixel
//! features and the FIFO memory bank of the resulting centroids.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::cam::SeedMap;
use crate::error::{FbrError, Result};
use crate::numerics::{l2_norm, normalize};

/// Output of one clustering pass over an image's background pixels.
///
/// `assignments` maps each clustered background pixel (in scan order) to a
/// cluster id; `centroids` are the unit-normalized cluster means; `inertia`
/// is the sum of squared distances to the unnormalized means.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Fixed-capacity FIFO queue of background centroid vectors.
#[derive(Debug, Clone)]
pub struct NroiBank {
    pub capacity: usize,
    queue: VecDeque<Vec<f64>>,
    pub rng_seed: u64,
    dim: Option<usize>,
}

impl NroiBank {
    pub fn new(capacity: usize, rng_seed: u64) -> Self {
        Self { capacity, queue: VecDeque::new(), rng_seed, dim: None }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.queue.iter()
    }

    /// Append centroids in order, evicting the oldest entries once the
    /// capacity is exceeded. Never fails on a full bank.
    pub fn push(&mut self, centroids: &[Vec<f64>]) -> Result<()> {
        for c in centroids {
            match self.dim {
                Some(d) if d != c.len() => {
                    return Err(FbrError::InvalidArgument(format!(
                        "centroid dimension {} does not match bank dimension {d}",
                        c.len()
                    )));
                }
                None => self.dim = Some(c.len()),
                _ => {}
            }
            if (l2_norm(c) - 1.0).abs() > 1e-9 {
                return Err(FbrError::Contract("bank entries must be unit vectors".into()));
            }
            self.queue.push_back(c.clone());
            if self.queue.len() > self.capacity {
                self.queue.pop_front();
            }
        }
        Ok(())
    }

    /// Draw `m` entries uniformly with replacement.
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
        if self.queue.is_empty() {
            return Err(FbrError::EmptyBank);
        }
        Ok((0..m)
            .map(|_| self.queue[rng.gen_range(0..self.queue.len())].clone())
            .collect())
    }

    /// Dump the queue as CSV, one row per entry, for offline inspection.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for entry in &self.queue {
            let row: Vec<String> = entry.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Cluster the background pixels of one image into up to `k` semantic
/// centroids. Features are unit-normalized before clustering; `k` shrinks to
/// the number of distinct points when fewer are available. Returns
/// unit-normalized centroids.
pub fn extract_nrois(
    z_bg: &[f64],
    dim: usize,
    seeds: &SeedMap,
    bg_label: u8,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ClusterResult> {
    let p = seeds.labels.len();
    if z_bg.len() != dim * p {
        return Err(FbrError::InvalidArgument(format!(
            "feature buffer holds {} values, expected {dim}x{p}",
            z_bg.len()
        )));
    }
    if k == 0 {
        return Err(FbrError::InvalidArgument("k must be >= 1".into()));
    }
    let mut points = Vec::new();
    for j in 0..p {
        if seeds.labels[j] != bg_label {
            continue;
        }
        let col: Vec<f64> = (0..dim).map(|i| z_bg[i * p + j]).collect();
        if l2_norm(&col) >= 1e-12 {
            points.push(normalize(&col)?);
        }
    }
    if points.is_empty() {
        return Err(FbrError::EmptyBackground);
    }
    let (assignments, means, inertia) = lloyd_kmeans(&points, k, rng);
    let centroids = means
        .iter()
        .enumerate()
        .map(|(c, m)| match normalize(m) {
            Ok(u) => u,
            // unit members can cancel exactly; fall back to the first member
            Err(_) => {
                let member = assignments.iter().position(|&a| a == c).unwrap();
                points[member].clone()
            }
        })
        .collect();
    Ok(ClusterResult { assignments, centroids, inertia })
}

/// Standard Lloyd iteration with distance-squared-weighted seeding.
/// Runs to an assignment fixpoint or 50 iterations.
fn lloyd_kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let dim = points[0].len();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q.as_slice() == p.as_slice()) {
            distinct.push(p);
        }
    }
    let k = k.min(distinct.len());

    // seeding: first center uniform, rest weighted by squared distance
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| squared_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut draw = rng.gen_range(0.0..total);
        let mut pick = points.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if draw < *w {
                pick = i;
                break;
            }
            draw -= w;
        }
        centers.push(points[pick].clone());
    }
    let k = centers.len();

    let mut assignments = vec![0usize; points.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = squared_distance(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster with the point farthest from its center
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        squared_distance(&points[a], &centers[assignments[a]])
                            .partial_cmp(&squared_distance(&points[b], &centers[assignments[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                assignments[far] = c;
                changed = true;
            } else {
                for (i, s) in sums[c].iter().enumerate() {
                    centers[c][i] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    // recompute means at the final assignment so centroids match members
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut means = Vec::with_capacity(k);
    let mut inertia = 0.0;
    let mut live = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        live.push(c);
        means.push(mean);
    }
    let remap: Vec<usize> = (0..k)
        .map(|c| live.iter().position(|&l| l == c).unwrap_or(0))
        .collect();
    let assignments: Vec<usize> = assignments.iter().map(|&a| remap[a]).collect();
    for (p, &a) in points.iter().zip(&assignments) {
        inertia += squared_distance(p, &means[a]);
    }
    (assignments, means, inertia)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive minimum inertia over all assignments of `points` into at most
/// `k` groups. Exponential; only for small oracle instances.
pub fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; n];
    loop {
        let groups = *assignment.iter().max().unwrap() + 1;
        if groups <= k {
            let mut sums = vec![vec![0.0; dim]; groups];
            let mut counts = vec![0usize; groups];
            for (p, &a) in points.iter().zip(&assignment) {
                counts[a] += 1;
                for (s, v) in sums[a].iter_mut().zip(p) {
                    *s += v;
                }
            }
            let mut inertia = 0.0;
            for (p, &a) in points.iter().zip(&assignment) {
                for (i, v) in p.iter().enumerate() {
                    let m = sums[a][i] / counts[a] as f64;
                    inertia += (v - m) * (v - m);
                }
            }
            best = best.min(inertia);
        }
        // next restricted growth string (canonical set partitions)
        let mut i = n;
        loop {
            if i == 1 {
                return best;
            }
            i -= 1;
            let prefix_max = assignment[..i].iter().max().copied().unwrap_or(0);
            if assignment[i] <= prefix_max && assignment[i] < k - 1 {
                assignment[i] += 1;
                for a in assignment.iter_mut().skip(i + 1) {
                    *a = 0;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn features_from_points(points: &[Vec<f64>]) -> (Vec<f64>, usize, SeedMap) {
        let dim = points[0].len();
        let p = points.len();
        let mut buf = vec![0.0; dim * p];
        for (j, pt) in points.iter().enumerate() {
            for (i, v) in pt.iter().enumerate() {
                buf[i * p + j] = *v;
            }
        }
        let seeds = SeedMap::new(vec![2; p], 1, p).unwrap();
        (buf, dim, seeds)
    }

    #[test]
    fn two_separated_blobs_recovered() {
        let points = vec![
            vec![1.0, 0.0],
            vec![0.99, 0.14],
            vec![0.0, 1.0],
            vec![0.14, 0.99],
        ];
        let (buf, dim, seeds) = features_from_points(&points);
        let mut rng = StdRng::seed_from_u64(3);
        let result = extract_nrois(&buf, dim, &seeds, 2, 2, &mut rng).unwrap();
        assert_eq!(result.centroids.len(), 2);
        assert_eq!(result.assignments[0], result.assignments[1]);
        assert_eq!(result.assignments[2], result.assignments[3]);
        assert_ne!(result.assignments[0], result.assignments[2]);
        for c in &result.centroids {
            assert!((l2_norm(c) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn k_shrinks_to_distinct_point_count() {
        let points = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (buf, dim, seeds) = features_from_points(&points);
        let mut rng = StdRng::seed_from_u64(5);
        let result = extract_nrois(&buf, dim, &seeds, 2, 5, &mut rng).unwrap();
        assert_eq!(result.centroids.len(), 2);
        assert!(result.inertia < 1e-20);
    }

    #[test]
    fn no_background_pixels_errors() {
        let mut rng = StdRng::seed_from_u64(1);
        // no pixel labeled 3 at all
        let seeds_fg = SeedMap::new(vec![1, 2], 1, 2).unwrap();
        let buf = vec![1.0, 0.5, 0.3, 0.2];
        assert!(matches!(
            extract_nrois(&buf, 2, &seeds_fg, 3, 2, &mut rng),
            Err(FbrError::EmptyBackground)
        ));
        // a background pixel exists but its feature is the zero vector
        let buf_zero = vec![0.0, 0.5, 0.0, 0.2];
        assert!(matches!(
            extract_nrois(&buf_zero, 2, &seeds_fg, 1, 2, &mut rng),
            Err(FbrError::EmptyBackground)
        ));
    }

    #[test]
    fn lloyd_never_increases_inertia_against_restarts() {
        // monotone descent: the final inertia is never above the inertia of
        // the initial assignment (checked via brute force lower bound)
        let mut rng = StdRng::seed_from_u64(11);
        use rand::Rng;
        for _ in 0..20 {
            let n = rng.gen_range(4..10);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| normalize(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap())
                .collect();
            let (_, _, inertia) = lloyd_kmeans(&points, 2, &mut rng);
            let optimal = brute_force_inertia(&points, 2);
            assert!(inertia + 1e-12 >= optimal);
        }
    }

    #[test]
    fn small_instance_oracle_with_restarts() {
        let mut rng = StdRng::seed_from_u64(17);
        use rand::Rng;
        let mut hits = 0;
        for _ in 0..20 {
            let n = rng.gen_range(5..12);
            let k = rng.gen_range(2..4usize);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    normalize(&[
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ])
                    .unwrap()
                })
                .collect();
            let best = (0..10)
                .map(|_| lloyd_kmeans(&points, k, &mut rng).2)
                .fold(f64::INFINITY, f64::min);
            let optimal = brute_force_inertia(&points, k);
            if (best - optimal).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "only {hits}/20 instances hit the optimum");
    }

    #[test]
    fn bank_fifo_eviction() {
        let mut bank = NroiBank::new(3, 0);
        let v = |x: f64, y: f64| normalize(&[x, y]).unwrap();
        bank.push(&[v(1.0, 0.0), v(0.0, 1.0), v(1.0, 1.0)]).unwrap();
        bank.push(&[v(-1.0, 0.0)]).unwrap();
        let entries: Vec<_> = bank.entries().cloned().collect();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0], v(0.0, 1.0));
        assert_eq!(entries[2], v(-1.0, 0.0));
    }

    #[test]
    fn bank_occupancy_arithmetic() {
        // push 8 per step for 10 steps into capacity 50: the first 30 evicted
        let mut bank = NroiBank::new(50, 0);
        for step in 0..10 {
            let batch: Vec<Vec<f64>> = (0..8)
                .map(|i| normalize(&[1.0, (step * 8 + i) as f64]).unwrap())
                .collect();
            bank.push(&batch).unwrap();
        }
        assert_eq!(bank.len(), 50);
        let first = bank.entries().next().unwrap().clone();
        assert_eq!(first, normalize(&[1.0, 30.0]).unwrap());
    }

    #[test]
    fn bank_rejects_dimension_mismatch_and_non_unit() {
        let mut bank = NroiBank::new(4, 0);
        bank.push(&[normalize(&[1.0, 2.0]).unwrap()]).unwrap();
        assert!(bank.push(&[normalize(&[1.0, 2.0, 3.0]).unwrap()]).is_err());
        assert!(bank.push(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn sampling_single_entry_and_empty() {
        let mut bank = NroiBank::new(4, 0);
        let mut rng = StdRng::seed_from_u64(2);
        assert!(matches!(bank.sample(3, &mut rng), Err(FbrError::EmptyBank)));
        let v = normalize(&[3.0, 4.0]).unwrap();
        bank.push(std::slice::from_ref(&v)).unwrap();
        let s = bank.sample(5, &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|e| *e == v));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut bank = NroiBank::new(8, 0);
        for i in 0..6 {
            bank.push(&[normalize(&[1.0, i as f64]).unwrap()]).unwrap();
        }
        let a = bank.sample(20, &mut StdRng::seed_from_u64(9)).unwrap();
        let b = bank.sample(20, &mut StdRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
