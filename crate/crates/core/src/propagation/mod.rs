//! The propagation engine.
//!
//! Each iteration predicts metrics for the current code, sets targets just
//! beyond the predictions (`t_acc = p_acc + delta_acc`,
//! `t_flops = p_flops - delta_flops`), and backpropagates
//!
//! ```text
//! L = smoothL1(p_acc - t_acc) + lambda * smoothL1(p_flops - t_flops)
//! ```
//!
//! to the code. The continuous strategy moves every dimension along
//! `-eta * grad`; winner-takes-all moves the single dimension with the best
//! gradient per unit of FLOPs by one grid step; one-hot mode runs continuous
//! updates on grouped one-hot codes and snaps each group to its argmax
//! periodically.

mod config;
mod engine;
mod onehot;
mod trace;
mod wta;

pub use config::{Profile, PropagationConfig, StepSpace, Strategy};
pub use engine::{accumulate_gradients, propagate_continuous, propagate_multitask, transfer};
pub use onehot::{project_onehot, projection_steps, propagate_onehot};
pub use trace::{PropagationTrace, Step, StopReason, TraceRow};
pub use wta::{propagate_wta, select_dimension, Selection};
