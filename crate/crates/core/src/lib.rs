//! Policy iteration for infinite-horizon stochastic linear-quadratic control
//! of `dX = (AX + Bu)ds + (CX + Du)dW` with cost
//! `E ∫ X'QX + 2u'SX + u'Ru ds`.
//!
//! Two evaluation routes share one improvement step:
//!
//! * [`lyapunov::policy_iteration_exact`] solves each policy evaluation as a
//!   generalized Lyapunov equation (needs the full model);
//! * [`rlpi::run`] estimates each evaluation from simulated closed-loop
//!   trajectories and never touches the drift matrix `A`.
//!
//! [`sysid`] provides the identify-then-solve baseline.

pub mod error;
pub mod instances;
pub mod lyapunov;
pub mod matlib;
pub mod model;
pub mod rlpi;
pub mod sde;
pub mod sysid;

pub use error::{Result, SlqError};
pub use lyapunov::{Iterate, PiTrace};
pub use matlib::{Matrix, SymMatrix};
pub use model::{CostSpec, FeedbackGain, InputModel, SystemModel, ValueMatrix};
pub use rlpi::{ExcitationPlan, ProbeMode, RlOptions};
pub use sde::{Plant, SimConfig};
