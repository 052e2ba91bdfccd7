//! Many-server queues with general service: exact event simulation of the
//! N-server system, its deterministic fluid model, the diffusion-limit
//! objects, and the statistics that tie the three together.

// `!(x > 0.0)` is the NaN-rejecting form; index loops mirror the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod dists;
pub mod fluid;
pub mod limitsim;
pub mod microsim;
pub mod rng;
pub mod scalestats;
