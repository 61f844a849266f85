//! Model label learning: describe every model in a hub by how it responds to
//! the nodes of a shared semantic graph, then pick and combine models for a
//! new task from those labels alone.

pub mod chco;
pub mod labelling;
pub mod matrix;
pub mod reuse;
pub mod sdag;
pub mod selection;
pub mod store;
pub mod synth;
