//! Robust WMMSE precoding for massive MU-MIMO-OFDM with imperfect CSI.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: posterior beam-domain channel statistics, channel aging,
//!   sampling and the beam/antenna DFT map.
//! - [`swmmse`]: the wideband stochastic WMMSE solver (block coordinate
//!   descent with sample average approximation) and Monte Carlo EWSR
//!   evaluation. It is the reference the unfolded network is checked against.
//! - [`du`]: one unfolded layer built from closed-form second-order
//!   expectations, diagonal Taylor inverses and additive compensation terms.
//! - [`accel`]: beam-support pruning, the diagonal-plus-block solver,
//!   three-point Lagrange interpolation across subcarriers and flop models.
//! - [`policy`]: the contextual-bandit Gaussian policy that emits
//!   compensation matrices and stopping coefficients, and its trainer.
//!
//! All randomness is drawn from keyed ChaCha substreams (see [`rng`]) so
//! results do not depend on evaluation order.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod accel;
pub mod channel;
pub mod du;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod swmmse;
pub mod telemetry;

mod error;

pub use error::{Error, Result};
pub use linalg::{CMat, RMat, C64};
pub use telemetry::{FlopCounter, Telemetry};
