//! Group-structured message passing over agent embeddings.
//!
//! A [`Grouping`](crate::spectral::Grouping) becomes a [`Hypergraph`] with one
//! hyperedge per group ([`build_hypergraph`]); edge weights come from group
//! cohesion with a floor so weak groups still pass messages. [`GroupConv`]
//! then mixes agent embeddings along that structure in one of two ways:
//!
//! - [`ConvVariant::Attention`]: each hyperedge aggregates its members with
//!   degree normalization, and redistributes the aggregate to members scaled
//!   by per-member attention coefficients (a masked softmax over member
//!   scores). Non-members receive exactly zero — membership masks are applied
//!   both additively before the softmax and multiplicatively after it.
//! - [`ConvVariant::Clique`]: each group is expanded to a pairwise clique and
//!   a symmetric-normalized adjacency propagates embeddings. No attention.
//!
//! Both variants apply a learned projection per layer and an exponential
//! linear unit between layers. [`message_count`] counts the ordered
//! within-group pairs a clique expansion would message, the cost metric that
//! hyperedge aggregation avoids.

use rand::Rng;

use crate::spectral::Grouping;
use crate::tensor::{elu, ParamId, ParamSet, Result, Tape, Tensor, TensorError, Var};

/// Edge weights are floored here so a group with zero or negative measured
/// cohesion still exchanges messages.
pub const MIN_EDGE_WEIGHT: f64 = 0.1;

/// Negative-side slope of the attention score nonlinearity.
pub const ATT_LEAK: f64 = 0.2;

/// Additive pre-softmax mask for non-members; large enough that the softmax
/// numerator underflows to exactly zero.
const MASK_NEG: f64 = -1e30;

/// One hyperedge per agent group.
#[derive(Debug, Clone)]
pub struct Hypergraph {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// Member agent indices per edge, ascending.
    pub members: Vec<Vec<usize>>,
    /// Per-edge weight: `max(cohesion, MIN_EDGE_WEIGHT)`.
    pub edge_weights: Vec<f64>,
    /// Incidence matrix, nodes x edges, entries 0/1.
    pub incidence: Tensor,
    /// Weighted node degree: sum of incident edge weights.
    pub node_degrees: Vec<f64>,
    /// Edge degree: member count.
    pub edge_degrees: Vec<f64>,
}

/// Builds the hypergraph induced by a grouping: one edge per group, weighted
/// by that group's cohesion (floored at [`MIN_EDGE_WEIGHT`]).
pub fn build_hypergraph(grouping: &Grouping) -> Hypergraph {
    let n = grouping.labels.len();
    let members = grouping.members();
    let e = members.len();
    let edge_weights: Vec<f64> =
        grouping.cohesion.iter().map(|&c| c.max(MIN_EDGE_WEIGHT)).collect();
    let mut incidence = Tensor::zeros(&[n, e]);
    for (edge, group) in members.iter().enumerate() {
        for &agent in group {
            incidence.set(agent, edge, 1.0);
        }
    }
    let node_degrees: Vec<f64> = (0..n)
        .map(|i| (0..e).map(|j| incidence.at(i, j) * edge_weights[j]).sum())
        .collect();
    let edge_degrees: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
    Hypergraph { n_nodes: n, n_edges: e, members, edge_weights, incidence, node_degrees, edge_degrees }
}

/// Ordered within-group pairs a pairwise (clique) expansion would message.
/// Hyperedge aggregation replaces these with one aggregate per group, so this
/// is the cost the hypergraph form avoids.
pub fn message_count(grouping: &Grouping) -> usize {
    grouping.members().iter().map(|m| m.len() * m.len().saturating_sub(1)).sum()
}

/// How group structure enters the convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvVariant {
    /// Hyperedge aggregation with per-member attention.
    Attention,
    /// Pairwise group cliques with symmetric normalization; no attention.
    Clique,
}

/// Dimensions and structure of the stack.
#[derive(Debug, Clone)]
pub struct ConvConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub att_dim: usize,
    pub variant: ConvVariant,
}

#[derive(Debug, Clone)]
struct AttHead {
    /// Score projection, layer-output x att_dim.
    w_s: ParamId,
    /// Score weights, stacked `[node half; edge half]` as a 2*att_dim x 1
    /// column.
    a: ParamId,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    /// Feature projection, in x out.
    p: ParamId,
    heads: Vec<AttHead>,
}

/// A stack of group-structured convolution layers. Parameters live in a
/// [`ParamSet`]; bind to a tape per forward pass.
#[derive(Debug, Clone)]
pub struct GroupConv {
    layers: Vec<ConvLayer>,
    dims: Vec<(usize, usize)>,
    variant: ConvVariant,
}

/// Tape-bound parameters of a [`GroupConv`].
pub struct BoundConv {
    layers: Vec<(Var, Vec<(Var, Var)>)>,
    variant: ConvVariant,
}

impl GroupConv {
    pub fn init<R: Rng>(cfg: &ConvConfig, prefix: &str, ps: &mut ParamSet, rng: &mut R) -> Self {
        assert!(cfg.layers >= 1, "need at least one layer");
        assert!(cfg.heads >= 1, "need at least one attention head");
        let mut dims = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { cfg.in_dim } else { cfg.hidden_dim };
            let d_out = if l + 1 == cfg.layers { cfg.out_dim } else { cfg.hidden_dim };
            dims.push((d_in, d_out));
        }
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(d_in, d_out))| {
                let p = ps.add(
                    format!("{prefix}.layer{l}.p"),
                    Tensor::init_uniform(&[d_in, d_out], d_in, rng),
                );
                let heads = match cfg.variant {
                    ConvVariant::Clique => Vec::new(),
                    ConvVariant::Attention => (0..cfg.heads)
                        .map(|h| AttHead {
                            w_s: ps.add(
                                format!("{prefix}.layer{l}.head{h}.w_s"),
                                Tensor::init_uniform(&[d_out, cfg.att_dim], d_out, rng),
                            ),
                            a: ps.add(
                                format!("{prefix}.layer{l}.head{h}.a"),
                                Tensor::init_uniform(&[2 * cfg.att_dim, 1], cfg.att_dim, rng),
                            ),
                        })
                        .collect(),
                };
                ConvLayer { p, heads }
            })
            .collect();
        Self { layers, dims, variant: cfg.variant }
    }

    pub fn out_dim(&self) -> usize {
        self.dims.last().expect("at least one layer").1
    }

    pub fn bind(&self, tape: &mut Tape, ps: &ParamSet) -> BoundConv {
        BoundConv {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let p = tape.param(ps, l.p);
                    let heads = l
                        .heads
                        .iter()
                        .map(|h| (tape.param(ps, h.w_s), tape.param(ps, h.a)))
                        .collect();
                    (p, heads)
                })
                .collect(),
            variant: self.variant,
        }
    }
}

/// Membership-derived constants reused by every layer of a forward pass.
struct Structure {
    /// diag(node_degree^{-1/2}), nodes x nodes.
    dm: Var,
    /// Edge aggregation, edges x nodes: `w_e / |e|` at members.
    agg: Var,
    /// Row-mean over members, edges x nodes: `1 / |e|` at members.
    mean_members: Var,
    /// Additive mask, edges x nodes: 0 at members, large negative elsewhere.
    mask_add: Var,
    /// Multiplicative membership indicator, edges x nodes: 1/0.
    indicator: Var,
    /// Column of ones, edges x 1.
    ones_e: Var,
    /// Row of ones, 1 x nodes.
    ones_n: Var,
    /// Clique-normalized adjacency, nodes x nodes (Clique variant).
    clique: Var,
}

fn structure(tape: &mut Tape, hg: &Hypergraph) -> Structure {
    let (n, e) = (hg.n_nodes, hg.n_edges);
    let mut dm = Tensor::zeros(&[n, n]);
    for i in 0..n {
        dm.set(i, i, 1.0 / hg.node_degrees[i].sqrt());
    }
    let mut agg = Tensor::zeros(&[e, n]);
    let mut mean_members = Tensor::zeros(&[e, n]);
    let mut mask_add = Tensor::full(&[e, n], MASK_NEG);
    let mut indicator = Tensor::zeros(&[e, n]);
    for (edge, group) in hg.members.iter().enumerate() {
        for &i in group {
            agg.set(edge, i, hg.edge_weights[edge] / hg.edge_degrees[edge]);
            mean_members.set(edge, i, 1.0 / hg.edge_degrees[edge]);
            mask_add.set(edge, i, 0.0);
            indicator.set(edge, i, 1.0);
        }
    }
    // Group cliques with self-loops under symmetric normalization.
    let mut adj = Tensor::eye(n);
    for group in &hg.members {
        for &i in group {
            for &j in group {
                if i != j {
                    adj.set(i, j, 1.0);
                }
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| adj.row(i).iter().sum()).collect();
    let mut clique = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            clique.set(i, j, adj.at(i, j) / (deg[i].sqrt() * deg[j].sqrt()));
        }
    }
    Structure {
        dm: tape.constant(dm),
        agg: tape.constant(agg),
        mean_members: tape.constant(mean_members),
        mask_add: tape.constant(mask_add),
        indicator: tape.constant(indicator),
        ones_e: tape.constant(Tensor::full(&[e, 1], 1.0)),
        ones_n: tape.constant(Tensor::full(&[1, n], 1.0)),
        clique: tape.constant(clique),
    }
}

impl BoundConv {
    /// Runs the stack on node features `x` (nodes x in_dim). Returns the
    /// final embeddings (nodes x out_dim) and the attention matrices, one
    /// per layer-head (edges x nodes; rows sum to 1 over members, exactly 0
    /// elsewhere). The list is empty for the clique variant.
    pub fn forward(&self, tape: &mut Tape, x: Var, hg: &Hypergraph) -> Result<(Var, Vec<Var>)> {
        if tape.value(x).rows() != hg.n_nodes {
            return Err(TensorError::Invalid {
                op: "group_conv",
                msg: format!(
                    "feature rows {} != node count {}",
                    tape.value(x).rows(),
                    hg.n_nodes
                ),
            });
        }
        let s = structure(tape, hg);
        let mut h = x;
        let mut alphas = Vec::new();
        for (p, heads) in &self.layers {
            let xp = tape.matmul(h, *p)?;
            let pre = match self.variant {
                ConvVariant::Clique => tape.matmul(s.clique, xp)?,
                ConvVariant::Attention => {
                    // One aggregate per edge from degree-scaled members.
                    let scaled = tape.matmul(s.dm, xp)?;
                    let edge_msg = tape.matmul(s.agg, scaled)?;
                    let mut head_outs = Vec::with_capacity(heads.len());
                    for &(w_s, a) in heads {
                        let alpha = attention(tape, xp, w_s, a, &s)?;
                        alphas.push(alpha);
                        let spread = tape.transpose(alpha)?;
                        let gathered = tape.matmul(spread, edge_msg)?;
                        head_outs.push(tape.matmul(s.dm, gathered)?);
                    }
                    let mut acc = head_outs[0];
                    for &o in &head_outs[1..] {
                        acc = tape.add(acc, o)?;
                    }
                    tape.scalar_mul(acc, 1.0 / heads.len() as f64)
                }
            };
            h = elu(tape, pre)?;
        }
        Ok((h, alphas))
    }
}

/// One head's attention matrix (edges x nodes): scores combine a projection
/// of the member's features with a projection of the edge mean, pass through
/// a leaky rectifier, and normalize over members. Non-members are masked
/// before the softmax and zeroed after it, so their coefficients are exactly
/// zero and their features cannot reach other nodes.
fn attention(tape: &mut Tape, xp: Var, w_s: Var, a: Var, s: &Structure) -> Result<Var> {
    let att_dim = tape.value(w_s).cols();
    let node_scores = tape.matmul(xp, w_s)?;
    let edge_feats = tape.matmul(s.mean_members, xp)?;
    let edge_scores = tape.matmul(edge_feats, w_s)?;
    let a_node = tape.slice(a, 0, 0, att_dim)?;
    let a_edge = tape.slice(a, 0, att_dim, att_dim)?;
    let per_node = tape.matmul(node_scores, a_node)?;
    let per_edge = tape.matmul(edge_scores, a_edge)?;
    // score[e][i] = per_node[i] + per_edge[e], via rank-1 replication.
    let node_part = tape.transpose(per_node)?;
    let node_grid = tape.matmul(s.ones_e, node_part)?;
    let edge_grid = tape.matmul(per_edge, s.ones_n)?;
    let raw = tape.add(node_grid, edge_grid)?;
    let scored = tape.leaky_relu(raw, ATT_LEAK);
    let masked = tape.add(scored, s.mask_add)?;
    let soft = tape.softmax(masked, 1)?;
    tape.mul(soft, s.indicator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn grouping(labels: &[usize], cohesion: Vec<f64>) -> Grouping {
        let k = cohesion.len();
        Grouping { labels: labels.to_vec(), k, cohesion, version: 0, eta_last: 0.0 }
    }

    #[test]
    fn hypergraph_structure_from_grouping() {
        let g = grouping(&[0, 0, 1, 0, 1], vec![0.8, -0.2]);
        let hg = build_hypergraph(&g);
        assert_eq!(hg.n_nodes, 5);
        assert_eq!(hg.n_edges, 2);
        assert_eq!(hg.members, vec![vec![0, 1, 3], vec![2, 4]]);
        assert_eq!(hg.edge_weights, vec![0.8, MIN_EDGE_WEIGHT], "cohesion floored");
        assert_eq!(hg.edge_degrees, vec![3.0, 2.0]);
        assert_eq!(hg.node_degrees, vec![0.8, 0.8, MIN_EDGE_WEIGHT, 0.8, MIN_EDGE_WEIGHT]);
        for i in 0..5 {
            for e in 0..2 {
                let want = if hg.members[e].contains(&i) { 1.0 } else { 0.0 };
                assert_eq!(hg.incidence.at(i, e), want);
            }
        }
    }

    #[test]
    fn message_count_contrasts_grouped_and_flat() {
        // Five pairs message 5*2*1 = 10 ordered pairs; one flat group of the
        // same ten agents messages 10*9 = 90.
        let paired = grouping(&[0, 0, 1, 1, 2, 2, 3, 3, 4, 4], vec![0.5; 5]);
        assert_eq!(message_count(&paired), 10);
        let flat = Grouping::single_group(10);
        assert_eq!(message_count(&flat), 90);
        let singletons = grouping(&[0, 1, 2], vec![0.5; 3]);
        assert_eq!(message_count(&singletons), 0);
    }

    fn test_conv(
        variant: ConvVariant,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        seed: u64,
    ) -> (GroupConv, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = crate::test_rng(seed);
        let cfg = ConvConfig {
            in_dim,
            hidden_dim: 4,
            out_dim,
            layers: 1,
            heads,
            att_dim: 3,
            variant,
        };
        let conv = GroupConv::init(&cfg, "conv", &mut ps, &mut rng);
        (conv, ps)
    }

    #[test]
    fn attention_rows_sum_to_one_over_members() {
        let g = grouping(&[0, 1, 0, 1, 1], vec![0.6, 0.4]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Attention, 3, 4, 2, 7);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::rand_uniform(&[5, 3], -1.0, 1.0, &mut crate::test_rng(9)));
        let bound = conv.bind(&mut tape, &ps);
        let (_, alphas) = bound.forward(&mut tape, x, &hg).unwrap();
        assert_eq!(alphas.len(), 2, "one matrix per layer-head");
        for alpha in &alphas {
            let t = tape.value(*alpha);
            assert_eq!(t.shape(), &[2, 5]);
            for e in 0..2 {
                let row_sum: f64 = t.row(e).iter().sum();
                assert!((row_sum - 1.0).abs() < 1e-12, "edge {e} sums to {row_sum}");
                for i in 0..5 {
                    if hg.members[e].contains(&i) {
                        assert!(t.at(e, i) > 0.0);
                    } else {
                        assert_eq!(t.at(e, i).to_bits(), 0.0f64.to_bits(), "exact zero");
                    }
                }
            }
        }
    }

    #[test]
    fn identical_features_attend_uniformly() {
        let g = grouping(&[0, 0, 1, 1], vec![0.9, 0.9]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Attention, 3, 4, 1, 21);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 3], 0.37));
        let bound = conv.bind(&mut tape, &ps);
        let (_, alphas) = bound.forward(&mut tape, x, &hg).unwrap();
        let t = tape.value(alphas[0]);
        for e in 0..2 {
            for &i in &hg.members[e] {
                assert!((t.at(e, i) - 0.5).abs() < 1e-15, "alpha[{e}][{i}] = {}", t.at(e, i));
            }
        }
    }

    #[test]
    fn single_edge_forward_matches_loop_oracle() {
        // One edge over both nodes; 1 head, 1 layer; recompute by hand.
        let g = grouping(&[0, 0], vec![0.5]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Attention, 2, 2, 1, 33);
        let mut tape = Tape::new();
        let x_t = Tensor::from_vec(vec![0.3, -0.7, 1.1, 0.4], &[2, 2]).unwrap();
        let x = tape.constant(x_t.clone());
        let bound = conv.bind(&mut tape, &ps);
        let (out, alphas) = bound.forward(&mut tape, x, &hg).unwrap();

        let p = ps.value(ps.find("conv.layer0.p").unwrap());
        let w_s = ps.value(ps.find("conv.layer0.head0.w_s").unwrap());
        let a = ps.value(ps.find("conv.layer0.head0.a").unwrap());
        let att = 3;
        // xp = x P
        let mut xp = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    xp[i][j] += x_t.at(i, l) * p.at(l, j);
                }
            }
        }
        // Edge mean and per-row score projections.
        let ef: Vec<f64> = (0..2).map(|j| (xp[0][j] + xp[1][j]) / 2.0).collect();
        let proj = |row: &[f64]| -> Vec<f64> {
            (0..att).map(|t| (0..2).map(|j| row[j] * w_s.at(j, t)).sum()).collect()
        };
        let score_of = |node_row: &[f64]| -> f64 {
            let sn = proj(node_row);
            let se = proj(&ef);
            let raw: f64 = (0..att)
                .map(|t| sn[t] * a.at(t, 0) + se[t] * a.at(att + t, 0))
                .sum();
            if raw > 0.0 {
                raw
            } else {
                ATT_LEAK * raw
            }
        };
        let (s0, s1) = (score_of(&xp[0]), score_of(&xp[1]));
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        let alpha = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let got_alpha = tape.value(alphas[0]);
        assert!((got_alpha.at(0, 0) - alpha[0]).abs() < 1e-12);
        assert!((got_alpha.at(0, 1) - alpha[1]).abs() < 1e-12);
        // Degrees: both nodes have degree w = 0.5; edge degree 2.
        let dm = 1.0 / 0.5f64.sqrt();
        let msg: Vec<f64> =
            (0..2).map(|j| (0.5 / 2.0) * (dm * xp[0][j] + dm * xp[1][j])).collect();
        let elu_ref = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let got = tape.value(out);
        for i in 0..2 {
            for j in 0..2 {
                let want = elu_ref(dm * alpha[i] * msg[j]);
                assert!(
                    (got.at(i, j) - want).abs() < 1e-12,
                    "out[{i}][{j}] = {} want {want}",
                    got.at(i, j)
                );
            }
        }
    }

    #[test]
    fn non_member_features_cannot_leak() {
        // Changing an agent in one group must leave the other group's
        // embeddings bitwise identical.
        let g = grouping(&[0, 0, 1, 1], vec![0.7, 0.7]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Attention, 3, 4, 2, 55);
        let run = |x_t: Tensor| -> Tensor {
            let mut tape = Tape::new();
            let x = tape.constant(x_t);
            let bound = conv.bind(&mut tape, &ps);
            let (out, _) = bound.forward(&mut tape, x, &hg).unwrap();
            tape.value(out).clone()
        };
        let base = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut crate::test_rng(56));
        let mut changed = base.clone();
        for j in 0..3 {
            changed.set(3, j, 9.0 - changed.at(3, j));
        }
        let (out_a, out_b) = (run(base), run(changed));
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(
                    out_a.at(i, j).to_bits(),
                    out_b.at(i, j).to_bits(),
                    "node {i} embedding moved when a non-groupmate changed"
                );
            }
        }
        // Sanity: the changed agent's own group did move.
        assert_ne!(out_a.at(2, 0).to_bits(), out_b.at(2, 0).to_bits());
    }

    #[test]
    fn permuting_agents_permutes_outputs() {
        // Reversing agent order (with the grouping relabeled canonically)
        // must reverse the output rows, attention included.
        let labels = [0usize, 1, 0, 1, 1];
        let g = grouping(&labels, vec![0.9, 0.3]);
        // Reversed agents [4,3,2,1,0] carry labels [1,1,0,1,0]; canonical
        // first-appearance relabel maps old 1 -> 0 and old 0 -> 1.
        let g_rev = grouping(&[0, 0, 1, 0, 1], vec![0.3, 0.9]);
        let (conv, ps) = test_conv(ConvVariant::Attention, 3, 4, 2, 77);
        let x_t = Tensor::rand_uniform(&[5, 3], -1.0, 1.0, &mut crate::test_rng(78));
        let mut rev_data = Vec::new();
        for i in (0..5).rev() {
            rev_data.extend_from_slice(x_t.row(i));
        }
        let x_rev = Tensor::from_vec(rev_data, &[5, 3]).unwrap();
        let run = |x_t: &Tensor, g: &Grouping| -> Tensor {
            let hg = build_hypergraph(g);
            let mut tape = Tape::new();
            let x = tape.constant(x_t.clone());
            let bound = conv.bind(&mut tape, &ps);
            let (out, _) = bound.forward(&mut tape, x, &hg).unwrap();
            tape.value(out).clone()
        };
        let out = run(&x_t, &g);
        let out_rev = run(&x_rev, &g_rev);
        for i in 0..5 {
            for j in 0..4 {
                assert!(
                    (out.at(i, j) - out_rev.at(4 - i, j)).abs() < 1e-10,
                    "row {i} col {j}: {} vs {}",
                    out.at(i, j),
                    out_rev.at(4 - i, j)
                );
            }
        }
    }

    #[test]
    fn clique_variant_averages_groupmates() {
        // Within a group of two with self-loops, every degree is 2, so each
        // output row pre-activation is the group mean of projected features.
        let g = grouping(&[0, 0, 1, 1], vec![0.5, 0.5]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Clique, 2, 2, 1, 91);
        let mut tape = Tape::new();
        let x_t = Tensor::rand_uniform(&[4, 2], -1.0, 1.0, &mut crate::test_rng(92));
        let x = tape.constant(x_t.clone());
        let bound = conv.bind(&mut tape, &ps);
        let (out, alphas) = bound.forward(&mut tape, x, &hg).unwrap();
        assert!(alphas.is_empty(), "clique variant has no attention");
        let p = ps.value(ps.find("conv.layer0.p").unwrap());
        let elu_ref = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let mut xp = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                for l in 0..2 {
                    xp[i][j] += x_t.at(i, l) * p.at(l, j);
                }
            }
        }
        let got = tape.value(out);
        for (i, mate) in [(0usize, 1usize), (1, 0), (2, 3), (3, 2)] {
            for j in 0..2 {
                let want = elu_ref((xp[i][j] + xp[mate][j]) / 2.0);
                assert!((got.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_gradients_match_finite_differences() {
        let g = grouping(&[0, 1, 0, 1], vec![0.6, 0.8]);
        let hg = build_hypergraph(&g);
        for variant in [ConvVariant::Attention, ConvVariant::Clique] {
            let (conv, ps) = test_conv(variant, 3, 2, 2, 101);
            let x0 = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut crate::test_rng(102));
            let err = grad_check(
                |tape, x| {
                    let bound = conv.bind(tape, &ps);
                    let (out, _) = bound.forward(tape, x, &hg)?;
                    let sq = tape.square(out);
                    tape.sum(sq, None)
                },
                &x0,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{variant:?}: gradient error {err}");
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Central differences on every parameter coordinate of a small stack.
        let g = grouping(&[0, 1, 0], vec![0.5, 0.5]);
        let hg = build_hypergraph(&g);
        let (conv, mut ps) = test_conv(ConvVariant::Attention, 2, 2, 1, 111);
        let x_t = Tensor::rand_uniform(&[3, 2], -1.0, 1.0, &mut crate::test_rng(112));
        let loss_of = |ps: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let x = tape.constant(x_t.clone());
            let bound = conv.bind(&mut tape, ps);
            let (out, _) = bound.forward(&mut tape, x, &hg).unwrap();
            let sq = tape.square(out);
            let loss = tape.sum(sq, None).unwrap();
            tape.value(loss).data()[0]
        };
        // Analytic gradients.
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let bound = conv.bind(&mut tape, &ps);
        let (out, _) = bound.forward(&mut tape, x, &hg).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq, None).unwrap();
        tape.backward(loss).unwrap();
        ps.zero_grad();
        tape.accumulate_param_grads(&mut ps);
        let names: Vec<String> = ps.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let id = ps.find(&name).unwrap();
            let n = ps.value(id).numel();
            for c in 0..n {
                let eps = 1e-6;
                let orig = ps.value(id).data()[c];
                ps.value_mut(id).data_mut()[c] = orig + eps;
                let up = loss_of(&ps);
                ps.value_mut(id).data_mut()[c] = orig - eps;
                let down = loss_of(&ps);
                ps.value_mut(id).data_mut()[c] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = ps.grad(id)[c];
                let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
                assert!(err < 1e-6, "{name}[{c}]: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn forward_rejects_row_mismatch() {
        let g = grouping(&[0, 0], vec![0.5]);
        let hg = build_hypergraph(&g);
        let (conv, ps) = test_conv(ConvVariant::Attention, 2, 2, 1, 121);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        let bound = conv.bind(&mut tape, &ps);
        assert!(bound.forward(&mut tape, x, &hg).is_err());
    }
}
