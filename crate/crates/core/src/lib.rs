//! Stochastic bilevel optimization with accelerated lower- and upper-level updates.
//!
//! The crate is organised bottom-up:
//!
//! - [`constants`] and [`schedule`]: smoothness/noise constants of a bilevel
//!   problem and the step-size/iteration schedule derived from them.
//! - [`stream`]: deterministic, path-addressed random streams.
//! - [`problems`]: synthetic bilevel instances with exact ground truth and
//!   noisy stochastic oracles.
//! - [`snag`]: stochastic Nesterov accelerated gradient under minimizer drift,
//!   its potential function and high-probability tracking bounds.
//! - [`hypergrad`]: the Neumann-series stochastic hypergradient estimator.
//! - [`accbo`]: the full accelerated bilevel optimizer.
//! - [`baselines`]: SGD tracking and a plain-momentum bilevel method.
//! - [`io`]: fixed-format CSV rendering shared by trajectory and run logs.

pub mod accbo;
pub mod baselines;
pub mod constants;
pub mod error;
pub mod hypergrad;
pub mod io;
pub mod linalg;
pub mod problems;
pub mod schedule;
pub mod snag;
pub mod stream;

pub use constants::{DerivedConstants, ProblemConstants};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use problems::BilevelInstance;
pub use schedule::{Schedule, ScheduleMode, ScheduleRequest};
pub use stream::RandomStream;
