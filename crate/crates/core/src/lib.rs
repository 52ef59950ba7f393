//! Declarative weak memory models: litmus programs, execution graphs,
//! consistency predicates, Weakestmo event structures, traversals and the
//! simulation that ties them together.

pub mod es;
pub mod graph;
pub mod lang;
pub mod models;
pub mod rel;
pub mod runner;
pub mod simulation;
pub mod traversal;

#[cfg(test)]
pub(crate) mod fixtures;
