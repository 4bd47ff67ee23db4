//! Contextual-bandit policy for the unfolded network.
//!
//! A context summarizes the channel statistics of one downlink block; the
//! action carries every layer's compensation matrices and the stopping
//! coefficients whose argmax sets the depth. The reward is the EWSR gain
//! over the uncompensated full-depth network on common channel draws.

pub mod action;
pub mod env;
pub mod features;
pub mod gaussian;
pub mod net;
pub mod train;

pub use action::{select_depth, ActionLayout};
pub use env::{
    baseline_ewsr, reward, reward_against, run_rlddu, BanditEnv, EnvConfig, PrecodingEnv,
    QuadraticBandit,
};
pub use features::{encode_context, ContextFeatures, CONTEXT_CHANNELS};
pub use gaussian::{PolicyMeta, PolicyParams, PolicySample};
pub use train::{improvement_trend, train_policy, Adam, TraceRow, TrainConfig, TrainOutput};
