//! Multi-agent multi-scale A* over dyadic map abstractions.

pub mod abstraction;
pub mod merge;
pub mod network;
pub mod search;
pub mod geom;
pub mod world;
