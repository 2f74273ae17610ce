//! All differentiable math: embeddings, capsule dynamic routing, semantic
//! cluster attention, alignment, hybrid readout, both losses, and the
//! finite-difference gradient checker that validates the analytic gradients.

mod checkpoint;
mod forward;
mod gradcheck;
mod loss;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    align, backward_user, build_user_state, capsule_forward, capsules_from_routing, hybrid,
    init_routing_logits, semantic_cluster_embed, squash, InterestMode, RoutingSpec, UserState,
};
pub use gradcheck::numeric_gradient_check;
pub use loss::{
    contrastive_user_loss, readout_score, rec_example_loss, total_loss, LossReport,
};
pub use params::{Gradients, Hyper, ModelParams};
