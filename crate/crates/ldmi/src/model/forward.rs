use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::llm::SemanticClustering;
use crate::model::params::{Gradients, ModelParams};

/// Capsule squash nonlinearity: same direction, norm mapped to
/// `n^2 / (1 + n^2)` which is strictly below 1. Zero maps to zero.
pub fn squash(m: ArrayView1<f64>) -> Array1<f64> {
    let norm_sq: f64 = m.iter().map(|v| v * v).sum();
    if norm_sq == 0.0 {
        return Array1::zeros(m.len());
    }
    let norm = norm_sq.sqrt();
    let coeff = norm_sq / (norm_sq + 1.0) / norm;
    m.mapv(|v| v * coeff)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Seeded Gaussian initialization for the routing logits. Excluded from
/// backpropagation; the seed makes forward passes reproducible.
pub fn init_routing_logits(seq_len: usize, n_interests: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((seq_len, n_interests), |_| normal.sample(&mut rng))
}

/// Capsules from fixed routing weights: `m_k = sum_j b_jk * W * v_j`. This is
/// the only expression gradients flow through; routing weights are constants.
pub fn capsules_from_routing(
    seq_embeds: ArrayView2<f64>,
    capsule_w: &Array2<f64>,
    routing: &Array2<f64>,
) -> Array2<f64> {
    let transformed = seq_embeds.dot(&capsule_w.t()); // L x d, rows W v_j
    routing.t().dot(&transformed) // K x d
}

/// Dynamic routing. Each iteration recomputes routing weights from the
/// logits, forms the capsules, squashes them, and updates the logits by the
/// agreement `v_j . (W e_k)`. Returns the final capsules together with the
/// routing weights that produced them.
pub fn capsule_forward(
    seq_embeds: ArrayView2<f64>,
    params: &ModelParams,
    logits_seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let seq_len = seq_embeds.nrows();
    assert!(seq_len >= 1);
    let k = params.hyper.interests;
    let transformed = seq_embeds.dot(&params.capsule_w.t()); // L x d
    let mut logits = init_routing_logits(seq_len, k, logits_seed);
    let mut routing = softmax_rows(&logits);
    let mut capsules = routing.t().dot(&transformed);
    for _ in 0..params.hyper.routing_iters {
        routing = softmax_rows(&logits);
        capsules = routing.t().dot(&transformed);
        let mut squashed = Array2::zeros(capsules.raw_dim());
        for (mut row, m_row) in squashed.rows_mut().into_iter().zip(capsules.rows()) {
            row.assign(&squash(m_row));
        }
        // g_jk += v_j . (W e_k)
        let we = squashed.dot(&params.capsule_w.t()); // K x d
        logits = logits + seq_embeds.dot(&we.t());
    }
    (capsules, routing)
}

/// Attention pooling over one semantic cluster: logits `w . v_j + b`,
/// softmax within the cluster, weighted sum of member embeddings.
pub fn semantic_cluster_embed(
    member_embeds: ArrayView2<f64>,
    attn_w: &Array1<f64>,
    attn_b: f64,
) -> (Array1<f64>, Array1<f64>) {
    assert!(member_embeds.nrows() >= 1);
    let logits = member_embeds.dot(attn_w) + attn_b;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha = logits.mapv(|v| (v - max).exp());
    let sum = alpha.sum();
    alpha.mapv_inplace(|v| v / sum);
    let h = alpha.dot(&member_embeds);
    (h, alpha)
}

/// Attention alignment of semantic clusters onto collaborative interests:
/// score `m_k . tanh(W1 h_f)`, softmax over clusters, weighted cluster sum.
/// Returns `(z, alpha, tanh(W1 h))`.
pub fn align(
    capsules: &Array2<f64>,
    cluster_embeds: &Array2<f64>,
    align_w: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let k = capsules.nrows();
    let d = capsules.ncols();
    if cluster_embeds.nrows() == 0 {
        // No clusters: the semantic term vanishes.
        return (
            Array2::zeros((k, d)),
            Array2::zeros((k, 0)),
            Array2::zeros((0, d)),
        );
    }
    let projected = cluster_embeds.dot(&align_w.t()).mapv(f64::tanh); // F x d
    let scores = capsules.dot(&projected.t()); // K x F
    let alpha = softmax_rows(&scores);
    let z = alpha.dot(cluster_embeds);
    (z, alpha, projected)
}

/// Hybrid interest: elementwise sum of collaborative and aligned-semantic
/// interest vectors.
pub fn hybrid(capsules: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    capsules + z
}

/// Which parts of the interest representation are active (Table-3 ablations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterestMode {
    Full,
    /// Semantic term forced to zero (`z = 0`).
    NoSem,
    /// Semantic-only: interests are the cluster embeddings, capped at K.
    NoCol,
}

/// How routing weights are obtained for the capsule layer.
pub enum RoutingSpec {
    Dynamic { seed: u64 },
    /// Reuse precomputed routing weights; lets finite differences see the
    /// same constants the analytic gradient treats as frozen.
    Frozen(Array2<f64>),
}

/// Per-user forward artifacts, cached for backpropagation.
#[derive(Debug, Clone)]
pub struct UserState {
    pub seq: Vec<usize>,
    /// L x K routing weights (constants for backpropagation).
    pub routing: Array2<f64>,
    /// K x d pre-squash capsules m.
    pub capsules: Array2<f64>,
    /// Per cluster: member positions into `seq`.
    pub clusters: Vec<Vec<usize>>,
    pub cluster_alpha: Vec<Array1<f64>>,
    /// F x d cluster embeddings h.
    pub cluster_embeds: Array2<f64>,
    /// F x d tanh(W1 h) cache.
    pub align_tanh: Array2<f64>,
    /// K x F alignment attention.
    pub align_alpha: Array2<f64>,
    /// K x d aligned semantic interests z.
    pub z: Array2<f64>,
    /// Final interest vectors o used for scoring (K x d, or F' x d in
    /// semantic-only mode).
    pub interests: Array2<f64>,
    pub mode: InterestMode,
}

fn gather(params: &ModelParams, items: &[usize]) -> Array2<f64> {
    let d = params.hyper.dim;
    let mut out = Array2::zeros((items.len(), d));
    for (row, &item) in items.iter().enumerate() {
        out.row_mut(row).assign(&params.item_embeddings.row(item));
    }
    out
}

/// Restrict a clustering (positions into the owner's full behavior list) to
/// the first `prefix_len` positions, dropping clusters that become empty.
fn restrict_clusters(clustering: Option<&SemanticClustering>, prefix_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if let Some(c) = clustering {
        for cluster in &c.clusters {
            let members: Vec<usize> = cluster.members.iter().copied().filter(|&m| m < prefix_len).collect();
            if !members.is_empty() {
                out.push(members);
            }
        }
    }
    out
}

/// Full forward pass for one user prefix.
pub fn build_user_state(
    params: &ModelParams,
    seq: &[usize],
    clustering: Option<&SemanticClustering>,
    mode: InterestMode,
    routing_spec: RoutingSpec,
) -> UserState {
    assert!(!seq.is_empty());
    let d = params.hyper.dim;
    let k = params.hyper.interests;
    let seq_embeds = gather(params, seq);

    let (capsules, routing) = match routing_spec {
        RoutingSpec::Dynamic { seed } => capsule_forward(seq_embeds.view(), params, seed),
        RoutingSpec::Frozen(b) => {
            let m = capsules_from_routing(seq_embeds.view(), &params.capsule_w, &b);
            (m, b)
        }
    };

    let clusters = match mode {
        InterestMode::NoSem => Vec::new(),
        _ => restrict_clusters(clustering, seq.len()),
    };

    let mut cluster_alpha = Vec::with_capacity(clusters.len());
    let mut cluster_embeds = Array2::zeros((clusters.len(), d));
    for (f, members) in clusters.iter().enumerate() {
        let member_items: Vec<usize> = members.iter().map(|&p| seq[p]).collect();
        let member_embeds = gather(params, &member_items);
        let (h, alpha) = semantic_cluster_embed(member_embeds.view(), &params.attn_w, params.attn_b);
        cluster_embeds.row_mut(f).assign(&h);
        cluster_alpha.push(alpha);
    }

    match mode {
        InterestMode::NoCol => {
            // Interests are the first K cluster embeddings; with no clusters
            // at all, fall back to a single mean-of-sequence interest.
            let interests = if clusters.is_empty() {
                let mean = seq_embeds.mean_axis(Axis(0)).unwrap();
                mean.insert_axis(Axis(0))
            } else {
                let k_eff = k.min(clusters.len());
                cluster_embeds.slice(ndarray::s![..k_eff, ..]).to_owned()
            };
            UserState {
                seq: seq.to_vec(),
                routing,
                capsules,
                clusters,
                cluster_alpha,
                cluster_embeds,
                align_tanh: Array2::zeros((0, d)),
                align_alpha: Array2::zeros((0, 0)),
                z: Array2::zeros((0, d)),
                interests,
                mode,
            }
        }
        _ => {
            let (z, align_alpha, align_tanh) = if mode == InterestMode::NoSem {
                (
                    Array2::zeros((k, d)),
                    Array2::zeros((k, 0)),
                    Array2::zeros((0, d)),
                )
            } else {
                align(&capsules, &cluster_embeds, &params.align_w)
            };
            let interests = hybrid(&capsules, &z);
            UserState {
                seq: seq.to_vec(),
                routing,
                capsules,
                clusters,
                cluster_alpha,
                cluster_embeds,
                align_tanh,
                align_alpha,
                z,
                interests,
                mode,
            }
        }
    }
}

/// Backpropagate `d_interests` (gradient of the loss w.r.t. the interest
/// vectors) into the parameter gradient accumulator.
pub fn backward_user(
    params: &ModelParams,
    state: &UserState,
    d_interests: &Array2<f64>,
    grads: &mut Gradients,
) {
    match state.mode {
        InterestMode::NoCol => backward_semantic_only(params, state, d_interests, grads),
        InterestMode::NoSem => {
            backward_capsules(params, state, d_interests, grads);
        }
        InterestMode::Full => {
            let f = state.cluster_embeds.nrows();
            if f == 0 {
                // z was identically zero; only the capsule path is live.
                backward_capsules(params, state, d_interests, grads);
                return;
            }
            // o = m + z, so d_interests reaches both branches.
            let mut d_capsules = d_interests.clone();
            let d_z = d_interests;

            // Alignment: z_k = sum_f alpha_kf h_f, alpha = softmax_f(m_k . t_f),
            // t_f = tanh(W1 h_f).
            let mut d_h = Array2::zeros(state.cluster_embeds.raw_dim());
            let mut d_t = Array2::zeros(state.align_tanh.raw_dim());
            for ki in 0..state.capsules.nrows() {
                let dz_k = d_z.row(ki);
                let alpha_k = state.align_alpha.row(ki);
                // Direct term and softmax backward.
                let d_alpha: Vec<f64> = (0..f).map(|fi| dz_k.dot(&state.cluster_embeds.row(fi))).collect();
                let dot: f64 = (0..f).map(|fi| alpha_k[fi] * d_alpha[fi]).sum();
                for fi in 0..f {
                    d_h.row_mut(fi).scaled_add(alpha_k[fi], &dz_k);
                    let d_score = alpha_k[fi] * (d_alpha[fi] - dot);
                    // score_kf = m_k . t_f
                    d_capsules.row_mut(ki).scaled_add(d_score, &state.align_tanh.row(fi));
                    d_t.row_mut(fi).scaled_add(d_score, &state.capsules.row(ki));
                }
            }
            // t_f = tanh(u_f), u_f = W1 h_f.
            for fi in 0..f {
                let t_row = state.align_tanh.row(fi);
                let d_u: Array1<f64> = (0..t_row.len())
                    .map(|c| d_t[[fi, c]] * (1.0 - t_row[c] * t_row[c]))
                    .collect();
                // dW1 += d_u h_f^T, dh_f += W1^T d_u
                for r in 0..d_u.len() {
                    grads.align_w.row_mut(r).scaled_add(d_u[r], &state.cluster_embeds.row(fi));
                }
                d_h.row_mut(fi).scaled_add(1.0, &params.align_w.t().dot(&d_u));
            }

            backward_clusters(params, state, &d_h, grads);
            backward_capsules(params, state, &d_capsules, grads);
        }
    }
}

/// Cluster-attention backward: h_f = sum_j alpha_j v_j with
/// alpha = softmax(w . v_j + b) over the cluster members.
fn backward_clusters(
    params: &ModelParams,
    state: &UserState,
    d_h: &Array2<f64>,
    grads: &mut Gradients,
) {
    for (f, members) in state.clusters.iter().enumerate() {
        let alpha = &state.cluster_alpha[f];
        let dh_f = d_h.row(f);
        let dots: Vec<f64> = members
            .iter()
            .map(|&p| dh_f.dot(&params.item_embeddings.row(state.seq[p])))
            .collect();
        let weighted: f64 = alpha.iter().zip(&dots).map(|(a, d)| a * d).sum();
        for (j, &p) in members.iter().enumerate() {
            let item = state.seq[p];
            let d_logit = alpha[j] * (dots[j] - weighted);
            // Direct embedding term plus the logit term.
            let mut row = grads.item_embeddings.row_mut(item);
            row.scaled_add(alpha[j], &dh_f);
            row.scaled_add(d_logit, &params.attn_w);
            grads
                .attn_w
                .scaled_add(d_logit, &params.item_embeddings.row(item));
            grads.attn_b += d_logit;
        }
    }
}

/// Capsule backward with frozen routing: m_k = sum_j b_jk W v_j.
fn backward_capsules(
    params: &ModelParams,
    state: &UserState,
    d_capsules: &Array2<f64>,
    grads: &mut Gradients,
) {
    // dW += sum_k dm_k (sum_j b_jk v_j)^T ; dv_j += sum_k b_jk W^T dm_k
    let seq_embeds = gather(params, &state.seq);
    let weighted_inputs = state.routing.t().dot(&seq_embeds); // K x d
    for ki in 0..d_capsules.nrows() {
        let dm_k = d_capsules.row(ki);
        for r in 0..dm_k.len() {
            grads.capsule_w.row_mut(r).scaled_add(dm_k[r], &weighted_inputs.row(ki));
        }
    }
    let back = d_capsules.dot(&params.capsule_w); // K x d, rows W^T dm_k
    for (j, &item) in state.seq.iter().enumerate() {
        for ki in 0..d_capsules.nrows() {
            grads
                .item_embeddings
                .row_mut(item)
                .scaled_add(state.routing[[j, ki]], &back.row(ki));
        }
    }
}

fn backward_semantic_only(
    params: &ModelParams,
    state: &UserState,
    d_interests: &Array2<f64>,
    grads: &mut Gradients,
) {
    if state.clusters.is_empty() {
        // Mean-of-sequence fallback interest.
        let scale = 1.0 / state.seq.len() as f64;
        for &item in &state.seq {
            grads
                .item_embeddings
                .row_mut(item)
                .scaled_add(scale, &d_interests.row(0));
        }
        return;
    }
    let k_eff = d_interests.nrows();
    let mut d_h = Array2::zeros(state.cluster_embeds.raw_dim());
    for f in 0..k_eff {
        d_h.row_mut(f).assign(&d_interests.row(f));
    }
    backward_clusters(params, state, &d_h, grads);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Hyper;
    use ndarray::array;

    fn params(n_items: usize, d: usize, k: usize) -> ModelParams {
        ModelParams::init(
            n_items,
            Hyper {
                dim: d,
                interests: k,
                routing_iters: 3,
                tau: 0.1,
            },
            11,
        )
    }

    #[test]
    fn squash_zero_is_zero() {
        let out = squash(array![0.0, 0.0, 0.0].view());
        assert_eq!(out, array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn squash_unit_norm_halves() {
        let out = squash(array![1.0, 0.0].view());
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn squash_norm_three_gives_norm_point_nine() {
        let out = squash(array![3.0, 0.0].view());
        let norm = (out.dot(&out)).sqrt();
        assert!((norm - 0.9).abs() < 1e-12);
    }

    #[test]
    fn squash_norm_below_one_and_monotone() {
        let mut last = 0.0;
        for scale in [0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
            let v = array![scale, scale];
            let norm = squash(v.view()).mapv(|x| x * x).sum().sqrt();
            assert!(norm < 1.0);
            assert!(norm > last);
            last = norm;
        }
    }

    #[test]
    fn uniform_logits_give_uniform_routing() {
        let logits = Array2::zeros((4, 3));
        let b = softmax_rows(&logits);
        for v in b.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_capsule_sums_transformed_inputs() {
        let p = params(5, 4, 1);
        let seq = [0usize, 2, 4];
        let embeds = gather(&p, &seq);
        let (m, b) = capsule_forward(embeds.view(), &p, 3);
        assert!(b.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let expected = embeds.dot(&p.capsule_w.t()).sum_axis(Axis(0));
        for (a, e) in m.row(0).iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn routing_rows_sum_to_one() {
        let p = params(6, 4, 3);
        let embeds = gather(&p, &[0, 1, 2, 3]);
        let (_, b) = capsule_forward(embeds.view(), &p, 99);
        for row in b.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    /// Independent scripted trace of the routing equations with plain loops.
    #[test]
    fn capsule_matches_hand_trace() {
        let mut p = params(2, 2, 2);
        p.capsule_w = Array2::eye(2);
        p.item_embeddings = array![[1.0, 0.0], [0.0, 2.0]];
        let embeds = gather(&p, &[0, 1]);
        let seed = 5;
        let (m, b) = capsule_forward(embeds.view(), &p, seed);

        // Oracle: direct transcription with scalar loops.
        let v = [[1.0, 0.0], [0.0, 2.0]];
        let mut g: Vec<Vec<f64>> = {
            let init = init_routing_logits(2, 2, seed);
            (0..2).map(|j| (0..2).map(|k| init[[j, k]]).collect()).collect()
        };
        let mut bb = vec![vec![0.0; 2]; 2];
        let mut mm = vec![vec![0.0; 2]; 2];
        for _ in 0..3 {
            for j in 0..2 {
                let mx = g[j][0].max(g[j][1]);
                let e0 = (g[j][0] - mx).exp();
                let e1 = (g[j][1] - mx).exp();
                bb[j][0] = e0 / (e0 + e1);
                bb[j][1] = e1 / (e0 + e1);
            }
            for k in 0..2 {
                for c in 0..2 {
                    mm[k][c] = (0..2).map(|j| bb[j][k] * v[j][c]).sum();
                }
            }
            for k in 0..2 {
                let n2: f64 = mm[k][0] * mm[k][0] + mm[k][1] * mm[k][1];
                let coeff = if n2 == 0.0 { 0.0 } else { n2 / (n2 + 1.0) / n2.sqrt() };
                let e = [mm[k][0] * coeff, mm[k][1] * coeff];
                for j in 0..2 {
                    g[j][k] += v[j][0] * e[0] + v[j][1] * e[1];
                }
            }
        }
        for k in 0..2 {
            for c in 0..2 {
                assert!((m[[k, c]] - mm[k][c]).abs() < 1e-10, "capsule mismatch at {k},{c}");
            }
            for j in 0..2 {
                assert!((b[[j, k]] - bb[j][k]).abs() < 1e-10, "routing mismatch at {j},{k}");
            }
        }
    }

    #[test]
    fn singleton_cluster_attention_is_identity() {
        let p = params(3, 4, 2);
        let embeds = gather(&p, &[1]);
        let (h, alpha) = semantic_cluster_embed(embeds.view(), &p.attn_w, p.attn_b);
        assert_eq!(alpha.len(), 1);
        assert!((alpha[0] - 1.0).abs() < 1e-12);
        for (a, b) in h.iter().zip(p.item_embeddings.row(1).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logits_give_mean() {
        let embeds = array![[1.0, 3.0], [3.0, 1.0]];
        // attn_w orthogonal to the difference so both logits match.
        let w = array![1.0, 1.0];
        let (h, alpha) = semantic_cluster_embed(embeds.view(), &w, 0.5);
        assert!((alpha[0] - 0.5).abs() < 1e-12);
        assert!((h[0] - 2.0).abs() < 1e-12);
        assert!((h[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_hand_value() {
        // Logits (1, 0) -> (0.7311, 0.2689).
        let embeds = array![[1.0], [0.0]];
        let w = array![1.0];
        let (_, alpha) = semantic_cluster_embed(embeds.view(), &w, 0.0);
        assert!((alpha[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((alpha[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn align_single_cluster_copies_h() {
        let p = params(4, 3, 2);
        let m = array![[0.3, -0.2, 0.1], [1.0, 0.0, -1.0]];
        let h = array![[0.5, 0.5, 0.5]];
        let (z, alpha, _) = align(&m, &h, &p.align_w);
        for ki in 0..2 {
            assert!((alpha[[ki, 0]] - 1.0).abs() < 1e-12);
            for c in 0..3 {
                assert_eq!(z[[ki, c]], h[[0, c]]);
            }
        }
    }

    #[test]
    fn align_zero_projection_gives_mean() {
        let m = array![[0.3, -0.2], [1.0, 0.0]];
        let h = array![[1.0, 0.0], [0.0, 1.0]];
        let zero = Array2::zeros((2, 2));
        let (z, alpha, _) = align(&m, &h, &zero);
        for v in alpha.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        for row in z.rows() {
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[1] - 0.5).abs() < 1e-12);
        }
    }

    /// Scripted softmax-attention evaluation with scalar loops.
    #[test]
    fn align_matches_scripted_evaluation() {
        let m = array![[0.5, -1.0], [2.0, 0.25]];
        let h = array![[1.0, 1.0], [-0.5, 0.75]];
        let w1 = array![[0.2, -0.3], [0.4, 0.1]];
        let (z, alpha, _) = align(&m, &h, &w1);
        for ki in 0..2 {
            let mut scores = [0.0f64; 2];
            for fi in 0..2 {
                let u = [
                    w1[[0, 0]] * h[[fi, 0]] + w1[[0, 1]] * h[[fi, 1]],
                    w1[[1, 0]] * h[[fi, 0]] + w1[[1, 1]] * h[[fi, 1]],
                ];
                scores[fi] = m[[ki, 0]] * u[0].tanh() + m[[ki, 1]] * u[1].tanh();
            }
            let mx = scores[0].max(scores[1]);
            let e = [(scores[0] - mx).exp(), (scores[1] - mx).exp()];
            let s = e[0] + e[1];
            for fi in 0..2 {
                assert!((alpha[[ki, fi]] - e[fi] / s).abs() < 1e-12);
            }
            for c in 0..2 {
                let expect = e[0] / s * h[[0, c]] + e[1] / s * h[[1, c]];
                assert!((z[[ki, c]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn align_no_clusters_zeroes_z() {
        let p = params(4, 3, 2);
        let m = array![[0.3, -0.2, 0.1], [1.0, 0.0, -1.0]];
        let h = Array2::zeros((0, 3));
        let (z, _, _) = align(&m, &h, &p.align_w);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hybrid_is_elementwise_sum() {
        let m = array![[1.0, 2.0]];
        let z = array![[0.5, -2.0]];
        assert_eq!(hybrid(&m, &z), array![[1.5, 0.0]]);
        assert_eq!(hybrid(&m, &Array2::zeros((1, 2))), m);
        assert_eq!(hybrid(&Array2::zeros((1, 2)), &z), z);
    }
}
