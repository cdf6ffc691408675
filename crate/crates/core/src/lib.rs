//! Dataflow kernel language, single-assignment store and abstract machine.

pub mod lang;
pub mod machine;
pub mod runner;
pub mod snapshot;
pub mod store;
pub mod term;
