#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covering;
pub mod dynamics;
pub mod functionals;
pub mod history;
pub mod kernel;
pub mod numeric;
pub mod spectral;
