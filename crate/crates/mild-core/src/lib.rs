//! Two-stage learning to defer under expert imbalance.
//!
//! The library splits into:
//! - [`types`], [`router`], [`eval`]: domain objects and the target deferral
//!   loss everything else is measured against;
//! - [`losses`]: margin and surrogate kernels with analytic gradients;
//! - [`train`]: regularized empirical objectives, gradient descent, and the
//!   closed-form margin-scale allocation;
//! - [`oracle`]: brute-force verifiers for the reformulation identities and
//!   consistency bounds;
//! - [`synth`]: seeded generators for the imbalance protocols;
//! - [`io`]: the text formats shared with the CLI;
//! - [`checks`]: the bundled verification suites the CLI exposes.

pub mod checks;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod oracle;
pub mod router;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use eval::{conditional_expert_dist, evaluate, EvalReport, ExpertConditional};
pub use losses::{Aggregation, SurrogateSpec};
pub use router::{FeatureMap, Router};
pub use types::{
    rewards_from_costs, CostTensor, CostType, Dataset, ExpertPanel, MarginVector, RewardScheme,
    RewardTensor,
};
