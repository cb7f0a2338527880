//! Dynamic agent grouping by spectral clustering of trajectory windows.
//!
//! The pipeline turns recent agent behavior into a partition of the agent set:
//!
//! 1. [`StateHistoryWindow`] keeps the last `window_len` observation vectors
//!    per agent, normalized by streaming per-feature statistics.
//! 2. [`build_knn_similarity`] links mutually similar trajectories into a
//!    binary symmetric graph.
//! 3. [`normalized_laplacian`] + [`spectral_embed`] produce a low-dimensional
//!    embedding (smallest-eigenvalue eigenvectors, rows L2-normalized).
//! 4. [`kmeans`] partitions the embedding for each candidate cluster count;
//!    [`silhouette`] picks the count with the best cohesion ([`cluster`]).
//! 5. [`maybe_update`] applies hysteresis: a freshly clustered candidate is
//!    adopted only when the fraction of agents that would change groups
//!    (under a greedy best-overlap matching of old to new groups, [`eta`])
//!    exceeds a stability threshold.
//!
//! [`ncut`] and [`potential`] are diagnostics: the normalized-cut objective of
//! a labeling and a within-group spread measure used to watch convergence.

mod eigen;
mod kmeans;

pub use eigen::eigh;
pub use kmeans::{kmeans, silhouette, silhouette_samples, KmeansResult};

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("k = {k} outside valid range [1, {n}]")]
    BadK { k: usize, n: usize },
    #[error("knn = {knn} must satisfy 1 <= knn < n = {n}")]
    BadKnn { knn: usize, n: usize },
    #[error("silhouette requires at least 2 groups, got {0}")]
    SingleGroup(usize),
    #[error("labels length {got} does not match point count {want}")]
    LabelLen { got: usize, want: usize },
    #[error("expected {want} features, got {got}")]
    FeatDim { got: usize, want: usize },
}

/// Knobs for the grouping pipeline.
#[derive(Debug, Clone)]
pub struct SpectralConfig {
    /// Smallest cluster count tried (raised to 2 internally; a value of 1 is
    /// only meaningful for the degenerate single-agent case).
    pub k_min: usize,
    /// Largest cluster count tried (clamped to the agent count).
    pub k_max: usize,
    /// Neighbors per node in the similarity graph.
    pub knn: usize,
    /// Hysteresis threshold: a candidate grouping is adopted only when the
    /// moved-agent fraction exceeds this.
    pub delta: f64,
    /// Environment steps between grouping update opportunities.
    pub interval: u64,
    /// Trajectory frames kept per agent.
    pub window_len: usize,
    /// Independent k-means restarts per candidate k.
    pub kmeans_restarts: usize,
    /// Lloyd iteration cap per restart.
    pub kmeans_iters: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 4,
            knn: 2,
            delta: 0.8,
            interval: 100,
            window_len: 8,
            kmeans_restarts: 8,
            kmeans_iters: 100,
        }
    }
}

/// A partition of the agents plus bookkeeping used by the hysteresis rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Group index per agent, relabeled to first-appearance order.
    pub labels: Vec<usize>,
    /// Number of groups.
    pub k: usize,
    /// Mean silhouette of each group's members (0 where undefined).
    pub cohesion: Vec<f64>,
    /// Bumped each time a candidate is adopted.
    pub version: u64,
    /// Moved-agent fraction measured at the latest update opportunity.
    pub eta_last: f64,
}

impl Grouping {
    /// The degenerate all-in-one-group partition.
    pub fn single_group(n_agents: usize) -> Self {
        Self { labels: vec![0; n_agents], k: 1, cohesion: vec![0.0], version: 0, eta_last: 0.0 }
    }

    /// Agent indices of every group, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (agent, &label) in self.labels.iter().enumerate() {
            out[label].push(agent);
        }
        out
    }
}

/// Rolling per-agent history of normalized observation vectors.
///
/// Normalization uses running per-feature mean/std shared by all agents,
/// updated as vectors stream in; each stored frame keeps the normalization it
/// had at push time.
#[derive(Debug, Clone)]
pub struct StateHistoryWindow {
    n_agents: usize,
    feat_dim: usize,
    window_len: usize,
    buffers: Vec<VecDeque<Vec<f64>>>,
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StateHistoryWindow {
    pub fn new(n_agents: usize, feat_dim: usize, window_len: usize) -> Self {
        Self {
            n_agents,
            feat_dim,
            window_len: window_len.max(1),
            buffers: vec![VecDeque::new(); n_agents],
            count: 0.0,
            mean: vec![0.0; feat_dim],
            m2: vec![0.0; feat_dim],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// Frames currently stored for `agent`.
    pub fn frames(&self, agent: usize) -> usize {
        self.buffers[agent].len()
    }

    /// Pushes one raw observation for one agent: updates the running
    /// statistics (Welford), then stores the normalized vector, evicting the
    /// oldest frame once the ring is full.
    pub fn push(&mut self, agent: usize, state: &[f64]) -> Result<(), SpectralError> {
        if state.len() != self.feat_dim {
            return Err(SpectralError::FeatDim { got: state.len(), want: self.feat_dim });
        }
        self.count += 1.0;
        for (j, &x) in state.iter().enumerate() {
            let d = x - self.mean[j];
            self.mean[j] += d / self.count;
            self.m2[j] += d * (x - self.mean[j]);
        }
        let normalized: Vec<f64> = state
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let var = self.m2[j] / self.count;
                (x - self.mean[j]) / (var.sqrt() + 1e-8)
            })
            .collect();
        let buf = &mut self.buffers[agent];
        if buf.len() == self.window_len {
            buf.pop_front();
        }
        buf.push_back(normalized);
        Ok(())
    }

    /// Flattened trajectory of one agent: `window_len x feat_dim` values,
    /// stored frames oldest-first, zero-padded at the tail when fewer frames
    /// have been seen.
    pub fn trajectory(&self, agent: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.window_len * self.feat_dim];
        for (f, frame) in self.buffers[agent].iter().enumerate() {
            out[f * self.feat_dim..(f + 1) * self.feat_dim].copy_from_slice(frame);
        }
        out
    }
}

/// A symmetric nonnegative similarity graph with zero diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub weights: Tensor,
    pub n: usize,
}

/// Builds the binary kNN similarity graph over flattened trajectories:
/// `w[i][j] = 1` when `j` is among `i`'s `knn` nearest trajectories or vice
/// versa. Distance ties break toward the lower index.
pub fn build_knn_similarity(
    window: &StateHistoryWindow,
    knn: usize,
) -> Result<SimilarityGraph, SpectralError> {
    let n = window.n_agents();
    if knn == 0 || knn >= n {
        return Err(SpectralError::BadKnn { knn, n });
    }
    let trajs: Vec<Vec<f64>> = (0..n).map(|i| window.trajectory(i)).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 =
                trajs[i].iter().zip(&trajs[j]).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut weights = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist[i][a].partial_cmp(&dist[i][b]).expect("finite distances").then(a.cmp(&b))
        });
        for &j in order.iter().take(knn) {
            weights.set(i, j, 1.0);
            weights.set(j, i, 1.0);
        }
    }
    Ok(SimilarityGraph { weights, n })
}

/// Symmetric normalized Laplacian `L = I - D^{-1/2} W D^{-1/2}`. Nodes with
/// zero degree receive a tiny self-loop first so the scaling stays finite.
pub fn normalized_laplacian(graph: &SimilarityGraph) -> Tensor {
    let n = graph.n;
    let mut w = graph.weights.clone();
    for i in 0..n {
        let row_sum: f64 = w.row(i).iter().sum();
        if row_sum == 0.0 {
            w.set(i, i, 1e-8);
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).iter().sum()).collect();
    let mut lap = Tensor::eye(n);
    for i in 0..n {
        for j in 0..n {
            let norm = w.at(i, j) / (deg[i].sqrt() * deg[j].sqrt());
            lap.set(i, j, lap.at(i, j) - norm);
        }
    }
    lap
}

/// Spectral embedding: the `k` smallest-eigenvalue eigenvectors of the
/// Laplacian as columns, with each row L2-normalized (rows of norm below
/// `1e-12` are left as zeros).
pub fn spectral_embed(laplacian: &Tensor, k: usize) -> Result<Tensor, SpectralError> {
    let n = laplacian.rows();
    if k == 0 || k > n {
        return Err(SpectralError::BadK { k, n });
    }
    let (_, vectors) = eigh(laplacian)?;
    let mut emb = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for j in 0..k {
            emb.set(i, j, vectors.at(i, j));
        }
    }
    for i in 0..n {
        let norm: f64 = emb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for j in 0..k {
                let v = emb.at(i, j) / norm;
                emb.set(i, j, v);
            }
        }
    }
    Ok(emb)
}

/// Normalized-cut objective of a labeling: for each group, crossing edge
/// weight divided by group volume, summed over groups. Zero-volume groups
/// contribute 0.
pub fn ncut(graph: &SimilarityGraph, labels: &[usize]) -> Result<f64, SpectralError> {
    let n = graph.n;
    if labels.len() != n {
        return Err(SpectralError::LabelLen { got: labels.len(), want: n });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut cut = vec![0.0f64; k];
    let mut vol = vec![0.0f64; k];
    for i in 0..n {
        for j in 0..n {
            let w = graph.weights.at(i, j);
            vol[labels[i]] += w;
            if labels[i] != labels[j] {
                cut[labels[i]] += w;
            }
        }
    }
    Ok(cut
        .iter()
        .zip(&vol)
        .map(|(&c, &v)| if v > 0.0 { c / v } else { 0.0 })
        .sum())
}

/// Relabels groups to first-appearance order and reorders per-group data to
/// match, so equal partitions always serialize identically.
fn canonicalize(labels: &mut [usize], per_group: &mut [f64]) {
    let mut map: Vec<Option<usize>> = vec![None; per_group.len()];
    let mut next = 0;
    let mut reordered = vec![0.0; per_group.len()];
    for l in labels.iter_mut() {
        let new = match map[*l] {
            Some(v) => v,
            None => {
                map[*l] = Some(next);
                reordered[next] = per_group[*l];
                next += 1;
                next - 1
            }
        };
        *l = new;
    }
    per_group.copy_from_slice(&reordered);
}

/// Clusters the current window into groups, selecting the cluster count in
/// `[max(2, k_min), min(k_max, n)]` by mean silhouette (ties prefer fewer
/// groups). Fewer than two agents yield the trivial single group.
pub fn cluster<R: Rng>(
    window: &StateHistoryWindow,
    cfg: &SpectralConfig,
    rng: &mut R,
) -> Result<Grouping, SpectralError> {
    let n = window.n_agents();
    if n < 2 {
        return Ok(Grouping::single_group(n));
    }
    let knn = cfg.knn.clamp(1, n - 1);
    let graph = build_knn_similarity(window, knn)?;
    let lap = normalized_laplacian(&graph);
    let lo = cfg.k_min.max(2);
    let hi = cfg.k_max.min(n);
    if lo > hi {
        return Ok(Grouping::single_group(n));
    }
    let mut best: Option<(f64, usize, Vec<usize>, Vec<f64>)> = None;
    for k in lo..=hi {
        let emb = spectral_embed(&lap, k)?;
        let km = kmeans(&emb, k, cfg.kmeans_restarts, cfg.kmeans_iters, rng)?;
        let samples = silhouette_samples(&emb, &km.labels)?;
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let better = match &best {
            None => true,
            Some((s, ..)) => mean > *s,
        };
        if better {
            best = Some((mean, k, km.labels, samples));
        }
    }
    let (_, k, mut labels, samples) = best.expect("candidate range is nonempty");
    let mut cohesion = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        cohesion[l] += samples[i];
        counts[l] += 1;
    }
    for (c, &count) in cohesion.iter_mut().zip(&counts) {
        if count > 0 {
            *c /= count as f64;
        }
    }
    canonicalize(&mut labels, &mut cohesion);
    Ok(Grouping { labels, k, cohesion, version: 0, eta_last: 0.0 })
}

/// Fraction of agents that land outside the greedy best-overlap matching of
/// `prev` groups to `next` groups. 0 means the partitions agree up to
/// relabeling; 1 means no agent kept its matched group.
pub fn eta(prev: &Grouping, next: &Grouping) -> f64 {
    let n = prev.labels.len();
    if n == 0 {
        return 0.0;
    }
    debug_assert_eq!(next.labels.len(), n, "groupings must cover the same agents");
    let (kp, kn) = (prev.k, next.k);
    let mut table = vec![vec![0usize; kn]; kp];
    for (&p, &q) in prev.labels.iter().zip(&next.labels) {
        table[p][q] += 1;
    }
    // Greedy matching: repeatedly take the largest remaining cell, ties
    // toward the smaller (prev, next) pair for determinism.
    let mut row_used = vec![false; kp];
    let mut col_used = vec![false; kn];
    let mut matches: Vec<(usize, usize)> = Vec::new();
    for _ in 0..kp.min(kn) {
        let mut best: Option<(usize, usize, usize)> = None;
        for (p, row) in table.iter().enumerate() {
            if row_used[p] {
                continue;
            }
            for (q, &count) in row.iter().enumerate() {
                if col_used[q] {
                    continue;
                }
                if best.map_or(true, |(_, _, c)| count > c) {
                    best = Some((p, q, count));
                }
            }
        }
        let Some((p, q, _)) = best else { break };
        row_used[p] = true;
        col_used[q] = true;
        matches.push((p, q));
    }
    let kept: usize = matches.iter().map(|&(p, q)| table[p][q]).sum();
    (n - kept) as f64 / n as f64
}

/// Hysteresis update: recluster the window and adopt the candidate only when
/// the moved-agent fraction exceeds `cfg.delta`; otherwise keep `prev`.
/// Either way the measured fraction is recorded on the returned grouping.
/// Call only at multiples of `cfg.interval`.
pub fn maybe_update<R: Rng>(
    prev: &Grouping,
    window: &StateHistoryWindow,
    cfg: &SpectralConfig,
    step: u64,
    rng: &mut R,
) -> Result<Grouping, SpectralError> {
    debug_assert!(
        cfg.interval == 0 || step % cfg.interval == 0,
        "update opportunity at step {step} is not a multiple of interval {}",
        cfg.interval
    );
    let mut candidate = cluster(window, cfg, rng)?;
    let moved = eta(prev, &candidate);
    if moved > cfg.delta {
        candidate.version = prev.version + 1;
        candidate.eta_last = moved;
        Ok(candidate)
    } else {
        let mut kept = prev.clone();
        kept.eta_last = moved;
        Ok(kept)
    }
}

/// Within-group spread: the sum over groups of squared Euclidean distances
/// between all unordered member pairs. Shrinks as groupmates behave alike.
pub fn potential(grouping: &Grouping, states: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for members in grouping.members() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                total += states[i]
                    .iter()
                    .zip(&states[j])
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fills a window with constant per-agent states so trajectory distances
    /// mirror state distances.
    fn constant_window(states: &[Vec<f64>], frames: usize) -> StateHistoryWindow {
        let mut w = StateHistoryWindow::new(states.len(), states[0].len(), 8);
        for _ in 0..frames {
            for (agent, s) in states.iter().enumerate() {
                w.push(agent, s).unwrap();
            }
        }
        w
    }

    #[test]
    fn window_pads_and_evicts() {
        let mut w = StateHistoryWindow::new(1, 2, 3);
        assert_eq!(w.trajectory(0), vec![0.0; 6]);
        for step in 0..5 {
            w.push(0, &[step as f64, -(step as f64)]).unwrap();
        }
        assert_eq!(w.frames(0), 3);
        // Oldest-first layout: first frame is step 2 after two evictions.
        let t = w.trajectory(0);
        assert_eq!(t.len(), 6);
        assert!(t[0] < t[2] && t[2] < t[4], "frames not oldest-first: {t:?}");
    }

    #[test]
    fn window_rejects_wrong_dimension() {
        let mut w = StateHistoryWindow::new(1, 2, 3);
        assert!(matches!(w.push(0, &[1.0]), Err(SpectralError::FeatDim { got: 1, want: 2 })));
    }

    #[test]
    fn knn_pairs_form_blocks() {
        // Two tight pairs far apart: with knn=1 the graph splits into blocks.
        let w = constant_window(
            &[vec![0.0, 0.0], vec![0.1, 0.0], vec![50.0, 50.0], vec![50.1, 50.0]],
            4,
        );
        let g = build_knn_similarity(&w, 1).unwrap();
        let want = [
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.weights.at(i, j), want[i][j], "w[{i}][{j}]");
            }
        }
    }

    #[test]
    fn knn_bounds_checked() {
        let w = constant_window(&[vec![0.0], vec![1.0]], 2);
        assert!(matches!(build_knn_similarity(&w, 2), Err(SpectralError::BadKnn { knn: 2, n: 2 })));
        assert!(matches!(build_knn_similarity(&w, 0), Err(SpectralError::BadKnn { knn: 0, n: 2 })));
    }

    #[test]
    fn laplacian_of_single_edge() {
        // Unit edge between two nodes: L = [[1,-1],[-1,1]].
        let graph = SimilarityGraph {
            weights: Tensor::from_vec(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap(),
            n: 2,
        };
        let lap = normalized_laplacian(&graph);
        assert_eq!(lap.data(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn laplacian_handles_isolated_nodes() {
        let graph = SimilarityGraph { weights: Tensor::zeros(&[2, 2]), n: 2 };
        let lap = normalized_laplacian(&graph);
        assert!(lap.is_finite());
        // Self-loop of weight ε normalizes to 1, cancelling the identity.
        assert_eq!(lap.at(0, 0), 0.0);
    }

    #[test]
    fn ncut_single_edge_split_is_two() {
        let graph = SimilarityGraph {
            weights: Tensor::from_vec(vec![0.0, 1.0, 1.0, 0.0], &[2, 2]).unwrap(),
            n: 2,
        };
        assert_eq!(ncut(&graph, &[0, 1]).unwrap(), 2.0);
        assert_eq!(ncut(&graph, &[0, 0]).unwrap(), 0.0);
        assert!(matches!(ncut(&graph, &[0]), Err(SpectralError::LabelLen { .. })));
    }

    /// Brute-force normalized-cut minimizer over all 2-partitions.
    fn brute_force_ncut2(graph: &SimilarityGraph) -> f64 {
        let n = graph.n;
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            best = best.min(ncut(graph, &labels).unwrap());
        }
        best
    }

    /// Random connected binary graph on `n` nodes.
    fn random_connected_graph<R: Rng>(n: usize, rng: &mut R) -> SimilarityGraph {
        loop {
            let mut w = Tensor::zeros(&[n, n]);
            let mut edges = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(0.5) {
                        w.set(i, j, 1.0);
                        w.set(j, i, 1.0);
                        edges += 1;
                    }
                }
            }
            if edges == 0 {
                continue;
            }
            // Connectivity check by BFS.
            let mut seen = vec![false; n];
            let mut queue = vec![0usize];
            seen[0] = true;
            while let Some(i) = queue.pop() {
                for j in 0..n {
                    if w.at(i, j) > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push(j);
                    }
                }
            }
            if seen.iter().all(|&s| s) {
                return SimilarityGraph { weights: w, n };
            }
        }
    }

    #[test]
    fn spectral_two_partition_close_to_bruteforce_optimum() {
        let mut rng = crate::test_rng(2024);
        for trial in 0..10 {
            let n = rng.gen_range(4..=7);
            let graph = random_connected_graph(n, &mut rng);
            let lap = normalized_laplacian(&graph);
            let emb = spectral_embed(&lap, 2).unwrap();
            let km = kmeans(&emb, 2, 8, 100, &mut rng).unwrap();
            let got = ncut(&graph, &km.labels).unwrap();
            let opt = brute_force_ncut2(&graph);
            assert!(
                got <= opt * (1.0 + 2.0 * std::f64::consts::LN_2) + 1e-9,
                "trial {trial}: ncut {got} vs optimum {opt}"
            );
        }
    }

    #[test]
    fn planted_two_blocks_recovered_exactly() {
        // Two 3-cliques joined by a single edge.
        let n = 6;
        let mut w = Tensor::zeros(&[n, n]);
        for block in [[0, 1, 2], [3, 4, 5]] {
            for &i in &block {
                for &j in &block {
                    if i != j {
                        w.set(i, j, 1.0);
                    }
                }
            }
        }
        w.set(2, 3, 1.0);
        w.set(3, 2, 1.0);
        let graph = SimilarityGraph { weights: w, n };
        let lap = normalized_laplacian(&graph);
        let emb = spectral_embed(&lap, 2).unwrap();
        let mut rng = crate::test_rng(5);
        let km = kmeans(&emb, 2, 8, 100, &mut rng).unwrap();
        assert_eq!(km.labels[0], km.labels[1]);
        assert_eq!(km.labels[0], km.labels[2]);
        assert_eq!(km.labels[3], km.labels[4]);
        assert_eq!(km.labels[3], km.labels[5]);
        assert_ne!(km.labels[0], km.labels[3]);
    }

    #[test]
    fn cluster_separates_two_behavior_groups() {
        // Both groups have more members than `knn`, so every node's nearest
        // neighbors stay in-group and the similarity graph splits cleanly.
        // Enough pushes that frames stored while the running statistics were
        // still warming up have been evicted from the ring.
        let w = constant_window(
            &[
                vec![0.0, 0.0],
                vec![0.2, 0.1],
                vec![0.1, 0.2],
                vec![30.0, 30.0],
                vec![30.2, 30.1],
                vec![30.1, 30.2],
            ],
            30,
        );
        let mut rng = crate::test_rng(8);
        let g = cluster(&w, &SpectralConfig::default(), &mut rng).unwrap();
        assert_eq!(g.k, 2, "silhouette should prefer the planted 2-way split");
        assert_eq!(g.labels, vec![0, 0, 0, 1, 1, 1], "canonical labels start at agent 0");
        assert_eq!(g.cohesion.len(), 2);
        assert!(g.cohesion.iter().all(|&c| c > 0.5), "cohesion {:?}", g.cohesion);
    }

    #[test]
    fn cluster_two_agents_gives_singletons() {
        let w = constant_window(&[vec![0.0], vec![10.0]], 4);
        let cfg = SpectralConfig { k_min: 2, k_max: 2, knn: 1, ..Default::default() };
        let mut rng = crate::test_rng(3);
        let g = cluster(&w, &cfg, &mut rng).unwrap();
        assert_eq!(g.k, 2);
        assert_eq!(g.labels, vec![0, 1]);
        assert_eq!(g.cohesion, vec![0.0, 0.0], "singletons have zero cohesion");
    }

    #[test]
    fn cluster_single_agent_is_trivial() {
        let w = constant_window(&[vec![1.0]], 2);
        let mut rng = crate::test_rng(4);
        let g = cluster(&w, &SpectralConfig::default(), &mut rng).unwrap();
        assert_eq!(g.k, 1);
        assert_eq!(g.labels, vec![0]);
    }

    fn grouping(labels: &[usize]) -> Grouping {
        let k = labels.iter().copied().max().map_or(1, |m| m + 1);
        Grouping { labels: labels.to_vec(), k, cohesion: vec![0.0; k], version: 0, eta_last: 0.0 }
    }

    #[test]
    fn eta_hand_case() {
        // Best matching keeps agents 0 and 2; agents 1 and 3 move.
        let prev = grouping(&[0, 0, 1, 1]);
        let next = grouping(&[0, 1, 1, 0]);
        assert_eq!(eta(&prev, &next), 0.5);
    }

    #[test]
    fn eta_zero_for_relabelings() {
        let prev = grouping(&[0, 0, 1, 1, 2]);
        let next = grouping(&[2, 2, 0, 0, 1]);
        assert_eq!(eta(&prev, &next), 0.0);
        assert_eq!(eta(&prev, &prev), 0.0);
    }

    #[test]
    fn eta_handles_different_group_counts() {
        let prev = grouping(&[0, 0, 0, 0]);
        let next = grouping(&[0, 0, 1, 1]);
        // Best match keeps one pair together; the other two moved.
        assert_eq!(eta(&prev, &next), 0.5);
    }

    #[test]
    fn maybe_update_adopts_on_large_change_only() {
        // Stream A: agents split {0,1} vs {2,3} behaviorally.
        let mut w = StateHistoryWindow::new(4, 1, 4);
        for _ in 0..4 {
            w.push(0, &[0.0]).unwrap();
            w.push(1, &[0.1]).unwrap();
            w.push(2, &[40.0]).unwrap();
            w.push(3, &[40.1]).unwrap();
        }
        let cfg = SpectralConfig { knn: 1, k_min: 2, k_max: 2, delta: 0.8, ..Default::default() };
        let mut rng = crate::test_rng(11);
        let initial = Grouping::single_group(4);
        // From the single group, the 2-way split moves 2 of 4 agents (η=0.5),
        // which does not clear δ=0.8: keep the old grouping.
        let kept = maybe_update(&initial, &w, &cfg, 100, &mut rng).unwrap();
        assert_eq!(kept.version, 0);
        assert_eq!(kept.k, 1);
        assert_eq!(kept.eta_last, 0.5);
        // With δ=0.4 the same candidate is adopted and the version bumps.
        let cfg_low = SpectralConfig { delta: 0.4, ..cfg.clone() };
        let adopted = maybe_update(&initial, &w, &cfg_low, 100, &mut rng).unwrap();
        assert_eq!(adopted.version, 1);
        assert_eq!(adopted.k, 2);
        assert_eq!(adopted.eta_last, 0.5);
        // Re-running against the adopted grouping is now a no-op (η = 0).
        let stable = maybe_update(&adopted, &w, &cfg_low, 200, &mut rng).unwrap();
        assert_eq!(stable.version, 1);
        assert_eq!(stable.eta_last, 0.0);
    }

    #[test]
    fn potential_hand_cases() {
        let g = grouping(&[0, 0]);
        let states = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(potential(&g, &states), 4.0);
        let singletons = grouping(&[0, 1]);
        assert_eq!(potential(&singletons, &states), 0.0);
    }

    #[test]
    fn spectral_embed_rows_are_unit_norm() {
        let w = constant_window(
            &[vec![0.0], vec![0.2], vec![10.0], vec![10.2], vec![20.0]],
            3,
        );
        let g = build_knn_similarity(&w, 2).unwrap();
        let lap = normalized_laplacian(&g);
        let emb = spectral_embed(&lap, 3).unwrap();
        for i in 0..5 {
            let norm: f64 = emb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9 || norm < 1e-12, "row {i} norm {norm}");
        }
    }
}
