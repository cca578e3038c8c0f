//! Small dense-network substrate: layers, losses, Adam, finite-difference
//! gradient checking and a JSON checkpoint format.

mod checkpoint;
mod gradcheck;
mod loss;
mod mlp;
mod optim;

pub use checkpoint::{mlp_bytes, Checkpoint, ParamGroup, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use loss::{cross_entropy, sigmoid, softmax, softplus, CrossEntropy, PROB_FLOOR};
pub use mlp::{Activation, Dense, Mlp, MlpCache, MlpGrads};
pub use optim::{Adam, AdamConfig};

/// Deterministic RNG used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
