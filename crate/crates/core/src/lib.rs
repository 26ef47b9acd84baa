// `!(a > b)` is used on purpose so that NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod poly;
pub mod gp;
pub mod sos;
pub mod roa;
pub mod explore;
pub mod sim;
pub mod pendulum;
pub mod orchestrator;
