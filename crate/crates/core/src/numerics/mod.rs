//! Dense linear algebra, log-domain arithmetic and reverse-mode
//! differentiation used by the model and the transducer loss.

mod gradcheck;
mod graph;
mod logspace;
mod lstm;
mod matrix;
mod real;

pub use gradcheck::check_gradient;
pub use graph::{Gradients, Graph, NodeId};
pub use logspace::{log_add, log_softmax, log_sum_exp};
pub use lstm::{lstm_sequence_graph, lstm_step, lstm_step_graph, LstmNodes, LstmParams, LstmState};
pub use matrix::Matrix;
pub use real::Real;

pub(crate) use logspace::{log_softmax_in_place, log_sum_exp_unchecked};
pub(crate) use lstm::{accumulate_row, apply_gates};

/// Initialization bound `1/√fan_in`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
