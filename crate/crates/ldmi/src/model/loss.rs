use ndarray::{Array2, ArrayView1};

use crate::model::forward::{backward_user, UserState};
use crate::model::params::{Gradients, ModelParams};

/// Hard readout: the item score is the maximum dot product over the interest
/// vectors; ties resolve to the smallest interest index. Gradients flow only
/// through the winning interest.
pub fn readout_score(interests: &Array2<f64>, item_embed: ArrayView1<f64>) -> (f64, usize) {
    assert!(interests.nrows() >= 1);
    let mut best = f64::NEG_INFINITY;
    let mut best_k = 0;
    for (k, row) in interests.rows().into_iter().enumerate() {
        let s = row.dot(&item_embed);
        if s > best {
            best = s;
            best_k = k;
        }
    }
    (best, best_k)
}

/// InfoNCE recommendation loss for one training example. The candidate set is
/// the target followed by its sampled negatives (or the full vocabulary when
/// `negatives` is empty and `full_softmax` is set by passing all other items).
///
/// When `grads` is given, accumulates `weight` times the gradient of the
/// example loss into it (interest path via `backward_user`, plus the direct
/// candidate-embedding terms).
pub fn rec_example_loss(
    params: &ModelParams,
    state: &UserState,
    target: usize,
    negatives: &[usize],
    weight: f64,
    grads: Option<&mut Gradients>,
) -> f64 {
    debug_assert!(!negatives.contains(&target));
    let n_cand = 1 + negatives.len();
    let mut scores = Vec::with_capacity(n_cand);
    let mut winners = Vec::with_capacity(n_cand);
    let candidates = std::iter::once(target).chain(negatives.iter().copied());
    for item in candidates.clone() {
        let (s, k) = readout_score(&state.interests, params.item_embeddings.row(item));
        scores.push(s);
        winners.push(k);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let loss = -(exp[0] / sum).ln();

    if let Some(grads) = grads {
        let mut d_interests = Array2::zeros(state.interests.raw_dim());
        for (idx, item) in candidates.enumerate() {
            let p = exp[idx] / sum;
            let d_score = weight * (p - if idx == 0 { 1.0 } else { 0.0 });
            let k = winners[idx];
            d_interests
                .row_mut(k)
                .scaled_add(d_score, &params.item_embeddings.row(item));
            grads
                .item_embeddings
                .row_mut(item)
                .scaled_add(d_score, &state.interests.row(k));
        }
        backward_user(params, state, &d_interests, grads);
    }
    weight * loss
}

/// Contrastive refinement loss for one synthesized user.
///
/// `items` are the item ids of the behavior union; `clusters` hold member
/// positions into `items` (overlap allowed). For every anchor position, the
/// positives are the other members of any shared cluster and the negatives
/// are the positions sharing no cluster with the anchor. A pair with no
/// negatives contributes nothing; so does a clustering with fewer than two
/// clusters.
pub fn contrastive_user_loss(
    params: &ModelParams,
    items: &[usize],
    clusters: &[Vec<usize>],
    tau: f64,
    weight: f64,
    mut grads: Option<&mut Gradients>,
) -> f64 {
    assert!(tau > 0.0);
    if clusters.len() < 2 {
        return 0.0;
    }
    let n = items.len();
    let mut membership: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (f, members) in clusters.iter().enumerate() {
        for &p in members {
            membership[p].push(f);
        }
    }
    let shares_cluster = |a: usize, b: usize| {
        membership[a].iter().any(|fa| membership[b].contains(fa))
    };

    let mut total = 0.0;
    for anchor in 0..n {
        if membership[anchor].is_empty() {
            continue;
        }
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != anchor && shares_cluster(anchor, p))
            .collect();
        let negatives: Vec<usize> = (0..n)
            .filter(|&p| p != anchor && membership[anchor].iter().all(|fa| !membership[p].contains(fa)))
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let v_anchor = params.item_embeddings.row(items[anchor]);
        let neg_sims: Vec<f64> = negatives
            .iter()
            .map(|&p| v_anchor.dot(&params.item_embeddings.row(items[p])) / tau)
            .collect();
        let max = neg_sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let neg_exp: Vec<f64> = neg_sims.iter().map(|s| (s - max).exp()).collect();
        let neg_sum: f64 = neg_exp.iter().sum();
        let log_denom = max + neg_sum.ln();

        for &pos in &positives {
            let v_pos = params.item_embeddings.row(items[pos]);
            let sim_pos = v_anchor.dot(&v_pos) / tau;
            total += weight * (log_denom - sim_pos);

            if let Some(g) = grads.as_deref_mut() {
                // d/dv_anchor = (-v_pos + sum_n p_n v_n) / tau
                let mut d_anchor = v_pos.mapv(|x| -x);
                for (ni, &negp) in negatives.iter().enumerate() {
                    let p_n = neg_exp[ni] / neg_sum;
                    d_anchor.scaled_add(p_n, &params.item_embeddings.row(items[negp]));
                    g.item_embeddings
                        .row_mut(items[negp])
                        .scaled_add(weight * p_n / tau, &v_anchor);
                }
                g.item_embeddings
                    .row_mut(items[anchor])
                    .scaled_add(weight / tau, &d_anchor);
                g.item_embeddings
                    .row_mut(items[pos])
                    .scaled_add(-weight / tau, &v_anchor);
            }
        }
    }
    total
}

/// Per-step loss bookkeeping for the weighted multi-task objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub rec_loss: f64,
    pub cst_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Combined objective: `rec + lambda * cst` when the contrastive term was
/// evaluated this step, otherwise `rec` alone (the cst value is still
/// reported, unweighted).
pub fn total_loss(rec: f64, cst: f64, lambda: f64, step_evaluates_cst: bool) -> LossReport {
    assert!(lambda >= 0.0);
    let total = if step_evaluates_cst { rec + lambda * cst } else { rec };
    LossReport {
        rec_loss: rec,
        cst_loss: cst,
        total,
        lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::{build_user_state, InterestMode, RoutingSpec};
    use crate::model::params::Hyper;
    use ndarray::array;

    fn params_with_embeds(embeds: Array2<f64>, k: usize) -> ModelParams {
        let d = embeds.ncols();
        let mut p = ModelParams::init(
            embeds.nrows(),
            Hyper {
                dim: d,
                interests: k,
                routing_iters: 3,
                tau: 0.1,
            },
            13,
        );
        p.item_embeddings = embeds;
        p
    }

    #[test]
    fn readout_single_interest_is_dot() {
        let o = array![[1.0, 2.0]];
        let (s, k) = readout_score(&o, array![3.0, 0.5].view());
        assert_eq!(k, 0);
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn readout_picks_max() {
        let o = array![[2.0, 0.0], [5.0, 0.0]];
        let (s, k) = readout_score(&o, array![1.0, 0.0].view());
        assert_eq!((s, k), (5.0, 1));
    }

    #[test]
    fn readout_tie_prefers_smaller_index() {
        let o = array![[1.0, 0.0], [1.0, 0.0]];
        let (_, k) = readout_score(&o, array![1.0, 1.0].view());
        assert_eq!(k, 0);
    }

    #[test]
    fn readout_argmax_invariant_under_score_shift() {
        let o = array![[0.4, -1.0], [0.2, 0.8], [1.0, 0.1]];
        let v = array![0.7, -0.3];
        let (_, k) = readout_score(&o, v.view());
        // Shifting every score by the same constant keeps the argmax.
        let scores: Vec<f64> = o.rows().into_iter().map(|r| r.dot(&v) + 42.0).collect();
        let shifted_k = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        assert_eq!(k, shifted_k);
    }

    fn simple_state(p: &ModelParams) -> UserState {
        build_user_state(p, &[0, 1], None, InterestMode::NoSem, RoutingSpec::Dynamic { seed: 1 })
    }

    #[test]
    fn rec_loss_target_only_is_zero() {
        let p = params_with_embeds(array![[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]], 2);
        let state = simple_state(&p);
        let loss = rec_example_loss(&p, &state, 2, &[], 1.0, None);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn rec_loss_symmetric_pair_is_ln2() {
        // Two identical candidate embeddings give equal scores.
        let p = params_with_embeds(array![[0.5, 0.5], [1.0, 0.0], [1.0, 0.0]], 1);
        let state = simple_state(&p);
        let loss = rec_example_loss(&p, &state, 1, &[2], 1.0, None);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn rec_loss_hand_value() {
        // f(target)=2, two negatives at 0 -> -ln(e^2/(e^2+2)) ~ 0.2395.
        let p = params_with_embeds(array![[1.0, 0.0], [2.0, 0.0], [0.0, 0.0], [0.0, 3.0]], 1);
        // Single item 0 with capsule_w = I so o = v_0 = (1,0).
        let mut p = p;
        p.capsule_w = Array2::eye(2);
        let state = build_user_state(&p, &[0], None, InterestMode::NoSem, RoutingSpec::Dynamic { seed: 1 });
        assert!((state.interests[[0, 0]] - 1.0).abs() < 1e-12);
        let loss = rec_example_loss(&p, &state, 1, &[2, 2], 1.0, None);
        let expect = -((2.0f64).exp() / ((2.0f64).exp() + 2.0)).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!((expect - 0.2395).abs() < 1e-4);
    }

    #[test]
    fn contrastive_single_cluster_contributes_zero() {
        let p = params_with_embeds(array![[1.0, 0.0], [0.0, 1.0]], 1);
        let loss = contrastive_user_loss(&p, &[0, 1], &[vec![0, 1]], 0.1, 1.0, None);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contrastive_equal_similarity_zero_per_pair() {
        // v_a . v_pos == v_a . v_neg with one negative -> pair loss 0.
        let p = params_with_embeds(array![[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]], 1);
        let loss = contrastive_user_loss(&p, &[0, 1, 2], &[vec![0, 1], vec![2]], 0.7, 1.0, None);
        // Anchors 0,1 pair with each other against negative 2; anchor 2 has
        // no positives. Each pair: sim_pos = sim_neg -> 0.
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn contrastive_matches_scripted_formula() {
        // 2 clusters of 2 items, fixed 2-d embeddings, tau = 0.1.
        let e = array![[1.0, 0.2], [0.8, 0.1], [-0.3, 0.9], [0.1, 1.1]];
        let p = params_with_embeds(e.clone(), 1);
        let clusters = vec![vec![0, 1], vec![2, 3]];
        let tau = 0.1;
        let loss = contrastive_user_loss(&p, &[0, 1, 2, 3], &clusters, tau, 1.0, None);

        // Scripted evaluation of the displayed sum with scalar loops.
        let dot = |a: usize, b: usize| e[[a, 0]] * e[[b, 0]] + e[[a, 1]] * e[[b, 1]];
        let mut expect = 0.0;
        let partners = [(0, 1, [2, 3]), (1, 0, [2, 3]), (2, 3, [0, 1]), (3, 2, [0, 1])];
        for (anchor, pos, negs) in partners {
            let denom: f64 = negs.iter().map(|&n| (dot(anchor, n) / tau).exp()).sum();
            expect += -((dot(anchor, pos) / tau).exp() / denom).ln();
        }
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn total_loss_schedule() {
        assert_eq!(total_loss(1.0, 5.0, 0.0, true).total, 1.0);
        let r = total_loss(1.0, 2.0, 0.01, true);
        assert!((r.total - 1.02).abs() < 1e-12);
        let skipped = total_loss(1.0, 2.0, 0.01, false);
        assert_eq!(skipped.total, 1.0);
        assert_eq!(skipped.cst_loss, 2.0);
    }

    /// One small gradient step on the contrastive loss decreases it.
    #[test]
    fn contrastive_descent_property() {
        let e = array![[1.0, 0.2], [0.4, 0.1], [-0.3, 0.9], [0.1, 1.1], [0.5, -0.5]];
        let mut p = params_with_embeds(e, 1);
        let items = [0, 1, 2, 3, 4];
        let clusters = vec![vec![0, 1], vec![2, 3], vec![4]];
        let before = contrastive_user_loss(&p, &items, &clusters, 0.5, 1.0, None);
        let mut g = Gradients::zeros_like(&p);
        contrastive_user_loss(&p, &items, &clusters, 0.5, 1.0, Some(&mut g));
        p.item_embeddings.scaled_add(-1e-3, &g.item_embeddings);
        let after = contrastive_user_loss(&p, &items, &clusters, 0.5, 1.0, None);
        assert!(after < before, "{after} !< {before}");
    }
}
