//! Regularization terms of the joint objective.

use crate::spectral::Grouping;
use crate::tensor::{Result, Tape, Tensor, Var};

/// The group-consistency loss plus a diagnostic variant.
pub struct GroupLossTerms {
    /// Differentiable loss: per group, mean intra-pair distance minus `beta`
    /// times the smallest mean cross-group distance (cross means normalized
    /// by the pair count).
    pub loss: Var,
    /// Same expression with the cross term normalized by the other group's
    /// size only, recorded for comparison; not optimized.
    pub raw_literal: f64,
}

/// Euclidean distance between two embedding rows as a tape scalar. Coincident
/// rows short-circuit to an exact constant zero (a valid subgradient choice,
/// and the square root of zero is undefined on the tape).
fn pair_distance(tape: &mut Tape, h: Var, i: usize, j: usize) -> Result<Var> {
    let a = tape.gather(h, &[i])?;
    let b = tape.gather(h, &[j])?;
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff);
    let ssum = tape.sum(sq, None)?;
    if tape.value(ssum).data()[0] == 0.0 {
        Ok(tape.constant(Tensor::scalar(0.0)))
    } else {
        tape.sqrt(ssum)
    }
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scalar_mul(acc, 1.0 / terms.len() as f64))
}

/// Group-consistency objective over group-aware embeddings `h` (agents x
/// dim): groupmates are pulled together (mean pairwise distance), distinct
/// groups pushed apart (minus `beta` times the nearest other group's mean
/// cross distance). Single-member groups contribute no intra term; with one
/// group the separation term is zero by convention.
pub fn group_loss(
    tape: &mut Tape,
    h: Var,
    grouping: &Grouping,
    beta: f64,
) -> Result<GroupLossTerms> {
    let members = grouping.members();
    let k = members.len();
    let mut total: Option<Var> = None;
    let mut raw_total = 0.0;
    for gk in 0..k {
        // Mean distance over unordered pairs inside the group.
        let mut intra_terms = Vec::new();
        for (a, &i) in members[gk].iter().enumerate() {
            for &j in &members[gk][a + 1..] {
                intra_terms.push(pair_distance(tape, h, i, j)?);
            }
        }
        let intra =
            if intra_terms.is_empty() { zero(tape) } else { mean_of(tape, &intra_terms)? };
        let intra_val = tape.value(intra).data()[0];
        // Nearest other group by mean cross distance; the min is realized by
        // keeping the achieving branch in the graph.
        let mut best: Option<(f64, Var)> = None;
        let mut best_raw = f64::INFINITY;
        for gl in 0..k {
            if gl == gk {
                continue;
            }
            let mut cross_terms = Vec::new();
            for &i in &members[gk] {
                for &j in &members[gl] {
                    cross_terms.push(pair_distance(tape, h, i, j)?);
                }
            }
            let cross = mean_of(tape, &cross_terms)?;
            let val = tape.value(cross).data()[0];
            if best.as_ref().map_or(true, |(v, _)| val < *v) {
                best = Some((val, cross));
            }
            // Literal form: pair sum over the other group's size only.
            let raw = val * members[gk].len() as f64;
            best_raw = best_raw.min(raw);
        }
        let term = match best {
            Some((_, cross)) => {
                let scaled = tape.scalar_mul(cross, -beta);
                tape.add(intra, scaled)?
            }
            None => intra,
        };
        raw_total += intra_val - if best_raw.is_finite() { beta * best_raw } else { 0.0 };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let loss = total.unwrap_or_else(|| zero(tape));
    Ok(GroupLossTerms { loss, raw_literal: raw_total })
}

/// Total entropy of the attention matrices: `-Σ α log α` per matrix with the
/// `0·log 0 = 0` convention, averaged over matrices. Zero exactly on one-hot
/// rows, maximal at uniform rows, never negative.
pub fn att_entropy_loss(tape: &mut Tape, alphas: &[Var]) -> Result<Var> {
    if alphas.is_empty() {
        return Ok(zero(tape));
    }
    let mut acc: Option<Var> = None;
    for &alpha in alphas {
        // Entries that are exactly zero are lifted to 1 before the log, so
        // they contribute 0·log 1 = 0 and the log input stays positive.
        let lift: Vec<f64> = tape
            .value(alpha)
            .data()
            .iter()
            .map(|&v| if v == 0.0 { 1.0 } else { 0.0 })
            .collect();
        let shape = tape.value(alpha).shape().to_vec();
        let lift = tape.constant(Tensor::from_vec(lift, &shape)?);
        let shifted = tape.add(alpha, lift)?;
        let lg = tape.log(shifted)?;
        let prod = tape.mul(alpha, lg)?;
        let s = tape.sum(prod, None)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let total = acc.expect("nonempty alphas");
    Ok(tape.scalar_mul(total, -1.0 / alphas.len() as f64))
}

/// Joint objective: task loss plus weighted group-consistency and
/// attention-entropy terms.
pub fn total_loss(
    tape: &mut Tape,
    task: Var,
    group: Var,
    att: Var,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let g = tape.scalar_mul(group, lambda1);
    let a = tape.scalar_mul(att, lambda2);
    let t = tape.add(task, g)?;
    tape.add(t, a)
}
