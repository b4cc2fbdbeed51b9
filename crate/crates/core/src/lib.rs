//! Generation of high-quality, structurally diverse TSP tour pools.
//!
//! The pipeline has three stages. A sequential edge-selection policy
//! (graph-convolutional encoder, recurrent state tracker, attention decoder)
//! samples spanning trees or perfect matchings over a Euclidean instance.
//! Tour construction turns sampled trees into Hamiltonian cycles, either by
//! randomized double-tree traversal or by a Christofides-style combination
//! with a learned matching. Dispersion selection then filters the candidate
//! pool by a cost factor and greedily extracts a maximally dissimilar
//! k-subset under the Jaccard edge-set similarity.
//!
//! Modules follow that flow: [`instance`] and [`reference`] supply the
//! geometry and the reference optimum, [`policy`] and [`training`] cover the
//! learned sampler, [`construction`] builds tours, and [`dispersion`] selects
//! the final subset. [`tape`] is the reverse-mode differentiation engine the
//! policy runs on.

pub mod construction;
pub mod dispersion;
pub mod instance;
pub mod policy;
pub mod reference;
pub mod rngstream;
pub mod tape;
pub mod training;
mod unionfind;

pub use instance::{EdgeId, Instance};
pub use policy::{Matching, Mode, PolicyParams, RolloutTrace, SpanningTree};
pub use reference::ReferenceCost;
