use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Structural hyper-parameters carried with the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Embedding dimension d.
    pub dim: usize,
    /// Number of interests K.
    pub interests: usize,
    /// Dynamic-routing iterations R.
    pub routing_iters: usize,
    /// Contrastive temperature.
    pub tau: f64,
}

/// Embedding table plus all trainable matrices and vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// N x d item embedding table, shared by the capsule input, the cluster
    /// attention, and the scoring targets.
    pub item_embeddings: Array2<f64>,
    /// d x d capsule transformation matrix.
    pub capsule_w: Array2<f64>,
    /// d x d alignment projection.
    pub align_w: Array2<f64>,
    /// Cluster-attention weight vector and bias.
    pub attn_w: Array1<f64>,
    pub attn_b: f64,
    pub hyper: Hyper,
}

impl ModelParams {
    pub fn init(n_items: usize, hyper: Hyper, seed: u64) -> Self {
        assert!(hyper.dim > 0 && hyper.interests >= 1 && hyper.routing_iters >= 1);
        assert!(hyper.tau > 0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = hyper.dim;
        let emb_scale = Normal::new(0.0, 0.1).unwrap();
        let mat_scale = Normal::new(0.0, 1.0 / (d as f64).sqrt()).unwrap();
        let mut draw2 = |rows: usize, cols: usize, dist: Normal<f64>| {
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let item_embeddings = draw2(n_items, d, emb_scale);
        let capsule_w = draw2(d, d, mat_scale);
        let align_w = draw2(d, d, mat_scale);
        let attn_w = Array1::from_shape_fn(d, |_| emb_scale.sample(&mut rng));
        ModelParams {
            item_embeddings,
            capsule_w,
            align_w,
            attn_w,
            attn_b: 0.0,
            hyper,
        }
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.nrows()
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.item_embeddings.len() + self.capsule_w.len() + self.align_w.len() + self.attn_w.len() + 1
    }

    /// Flat read access in the fixed order: embeddings, capsule_w, align_w,
    /// attn_w, attn_b. Used by the gradient checker.
    pub fn get_flat(&self, idx: usize) -> f64 {
        let mut i = idx;
        for arr in [&self.item_embeddings, &self.capsule_w, &self.align_w] {
            let s = arr.as_slice().expect("standard layout");
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        let s = self.attn_w.as_slice().expect("standard layout");
        if i < s.len() {
            return s[i];
        }
        i -= s.len();
        assert_eq!(i, 0);
        self.attn_b
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for arr in [
            &mut self.item_embeddings,
            &mut self.capsule_w,
            &mut self.align_w,
        ] {
            let s = arr.as_slice_mut().expect("standard layout");
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        let s = self.attn_w.as_slice_mut().expect("standard layout");
        if i < s.len() {
            s[i] = value;
            return;
        }
        i -= s.len();
        assert_eq!(i, 0);
        self.attn_b = value;
    }

    pub fn all_finite(&self) -> bool {
        self.item_embeddings.iter().all(|v| v.is_finite())
            && self.capsule_w.iter().all(|v| v.is_finite())
            && self.align_w.iter().all(|v| v.is_finite())
            && self.attn_w.iter().all(|v| v.is_finite())
            && self.attn_b.is_finite()
    }
}

/// Gradient accumulator with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub item_embeddings: Array2<f64>,
    pub capsule_w: Array2<f64>,
    pub align_w: Array2<f64>,
    pub attn_w: Array1<f64>,
    pub attn_b: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            item_embeddings: Array2::zeros(params.item_embeddings.raw_dim()),
            capsule_w: Array2::zeros(params.capsule_w.raw_dim()),
            align_w: Array2::zeros(params.align_w.raw_dim()),
            attn_w: Array1::zeros(params.attn_w.raw_dim()),
            attn_b: 0.0,
        }
    }

    pub fn fill_zero(&mut self) {
        self.item_embeddings.fill(0.0);
        self.capsule_w.fill(0.0);
        self.align_w.fill(0.0);
        self.attn_w.fill(0.0);
        self.attn_b = 0.0;
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        self.item_embeddings.scaled_add(scale, &other.item_embeddings);
        self.capsule_w.scaled_add(scale, &other.capsule_w);
        self.align_w.scaled_add(scale, &other.align_w);
        self.attn_w.scaled_add(scale, &other.attn_w);
        self.attn_b += scale * other.attn_b;
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        let mut i = idx;
        for arr in [&self.item_embeddings, &self.capsule_w, &self.align_w] {
            let s = arr.as_slice().expect("standard layout");
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        let s = self.attn_w.as_slice().expect("standard layout");
        if i < s.len() {
            return s[i];
        }
        i -= s.len();
        assert_eq!(i, 0);
        self.attn_b
    }

    pub fn all_finite(&self) -> bool {
        self.item_embeddings.iter().all(|v| v.is_finite())
            && self.capsule_w.iter().all(|v| v.is_finite())
            && self.align_w.iter().all(|v| v.is_finite())
            && self.attn_w.iter().all(|v| v.is_finite())
            && self.attn_b.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelParams {
        ModelParams::init(
            3,
            Hyper {
                dim: 4,
                interests: 2,
                routing_iters: 3,
                tau: 0.1,
            },
            7,
        )
    }

    #[test]
    fn init_is_deterministic() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let mut p = tiny();
        let n = p.n_params();
        assert_eq!(n, 3 * 4 + 16 + 16 + 4 + 1);
        for i in 0..n {
            let v = p.get_flat(i);
            p.set_flat(i, v + 1.0);
            assert_eq!(p.get_flat(i), v + 1.0);
            p.set_flat(i, v);
        }
    }
}
