//! Numerical lab for linear mode connectivity modulo permutation in
//! two-layer ReLU teacher-student networks.
//!
//! The teacher is `f*(x) = Σ_j σ(x_j)` for `j < M`, inputs are uniform on the
//! unit sphere in `R^d`, and a student of width `m` is an `m × d` weight
//! matrix whose rows are neurons. Everything downstream rests on the closed
//! form of the population loss in [`kernel`].
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernel`] | arc-cosine kernel, exact loss and gradient, Monte-Carlo oracle |
//! | [`manifold`] | global-minima membership, classification, uniform sampling |
//! | [`train`] | population GD and online SGD |
//! | [`align`] | sorted type matching, overlap statistics, barriers |
//! | [`sparsity`] | PQ index and zero-row counting |
//! | [`harness`] | experiment configs, sweeps, CSV output |

pub mod align;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod manifold;
pub mod sparsity;
pub mod train;
mod weights;

pub use error::{Error, Result};
pub use kernel::{LossValue, McEstimate, ProblemConfig};
pub use weights::WeightMatrix;

pub(crate) mod rng {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub type Rng = ChaCha8Rng;

    pub fn seeded(seed: u64) -> Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent stream `stream` under a base seed.
    pub fn stream(seed: u64, stream: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}
