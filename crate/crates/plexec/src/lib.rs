pub mod agents;
pub mod baseline;
pub mod bench;
pub mod condition;
pub mod depgraph;
pub mod dsl;
pub mod env;
pub mod executor;
pub mod logic;
pub mod plan;
pub mod value;
