//! k-means clustering and silhouette scoring over embedding rows.
//!
//! Seeding is k-means++ (each new centroid sampled proportionally to squared
//! distance from the nearest chosen one), refinement is Lloyd iteration with
//! empty clusters repaired by stealing the farthest point from the largest
//! cluster. Everything is deterministic for a fixed RNG: ties break toward
//! the lower index and the best-of-restarts comparison is strict.

use rand::Rng;

use crate::tensor::Tensor;

use super::SpectralError;

/// Output of one [`kmeans`] call: per-row labels, the `k x d` centroid
/// matrix, and the within-cluster sum of squared distances.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centroids: Tensor,
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Clusters the rows of `points` (`n x d`) into `k` groups, keeping the best
/// of `restarts` independent runs by WCSS.
pub fn kmeans<R: Rng>(
    points: &Tensor,
    k: usize,
    restarts: usize,
    iters: usize,
    rng: &mut R,
) -> Result<KmeansResult, SpectralError> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(SpectralError::BadK { k, n });
    }
    let mut best: Option<KmeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, k, iters, rng);
        let better = match &best {
            None => true,
            Some(b) => run.wcss < b.wcss,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd<R: Rng>(points: &Tensor, k: usize, iters: usize, rng: &mut R) -> KmeansResult {
    let (n, d) = (points.rows(), points.cols());
    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.row(rng.gen_range(0..n)).to_vec());
    let mut min_sq: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_sq.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in min_sq.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All points coincide with a centroid already; any pick works.
            rng.gen_range(0..n)
        };
        centroids.push(points.row(idx).to_vec());
        for i in 0..n {
            let dist = sq_dist(points.row(i), centroids.last().expect("just pushed"));
            if dist < min_sq[i] {
                min_sq[i] = dist;
            }
        }
    }

    let assign = |centroids: &[Vec<f64>], i: usize| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cen) in centroids.iter().enumerate() {
            let dist = sq_dist(points.row(i), cen);
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        best
    };

    let mut labels: Vec<usize> = (0..n).map(|i| assign(&centroids, i)).collect();
    for _ in 0..iters {
        repair_empty(points, &mut labels, k);
        // Recompute centroids.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for (c, (sum, &count)) in sums.iter_mut().zip(&counts).enumerate() {
            if count > 0 {
                sum.iter_mut().for_each(|s| *s /= count as f64);
                centroids[c] = sum.clone();
            }
        }
        let next: Vec<usize> = (0..n).map(|i| assign(&centroids, i)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    repair_empty(points, &mut labels, k);

    let mut centroid_mat = Tensor::zeros(&[k, d]);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..d {
            let v = centroid_mat.at(l, j) + points.row(i)[j];
            centroid_mat.set(l, j, v);
        }
    }
    for c in 0..k {
        for j in 0..d {
            let v = centroid_mat.at(c, j) / counts[c].max(1) as f64;
            centroid_mat.set(c, j, v);
        }
    }
    let wcss: f64 =
        labels.iter().enumerate().map(|(i, &l)| sq_dist(points.row(i), centroid_mat.row(l))).sum();
    KmeansResult { labels, centroids: centroid_mat, wcss }
}

/// Reassigns one point per empty cluster: the point of the largest cluster
/// farthest from that cluster's mean.
fn repair_empty(points: &Tensor, labels: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let largest = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("k > 0");
        let d = points.cols();
        let mut mean = vec![0.0; d];
        for (i, &l) in labels.iter().enumerate() {
            if l == largest {
                for (m, &x) in mean.iter_mut().zip(points.row(i)) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= counts[largest] as f64);
        let farthest = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == largest)
            .max_by(|(i, _), (j, _)| {
                sq_dist(points.row(*i), &mean)
                    .partial_cmp(&sq_dist(points.row(*j), &mean))
                    .expect("finite distances")
                    .then(j.cmp(i))
            })
            .map(|(i, _)| i)
            .expect("largest cluster is nonempty");
        labels[farthest] = empty;
    }
}

/// Per-point silhouette values `s(i) = (b - a) / max(a, b)` where `a` is the
/// mean distance to the point's own group and `b` the smallest mean distance
/// to any other group. Singletons score 0, as do points with `a = b = 0`.
pub fn silhouette_samples(points: &Tensor, labels: &[usize]) -> Result<Vec<f64>, SpectralError> {
    let n = points.rows();
    if labels.len() != n {
        return Err(SpectralError::LabelLen { got: labels.len(), want: n });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(SpectralError::SingleGroup(k.min(1)));
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let own = labels[i];
        if counts[own] <= 1 {
            continue; // singleton ⇒ 0
        }
        // Mean distance from i to every group.
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for (g, &count) in counts.iter().enumerate() {
            if g != own && count > 0 {
                b = b.min(sums[g] / count as f64);
            }
        }
        let denom = a.max(b);
        out[i] = if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(out)
}

/// Mean silhouette over all points; errors when fewer than two groups exist.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> Result<f64, SpectralError> {
    let samples = silhouette_samples(points, labels)?;
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}
