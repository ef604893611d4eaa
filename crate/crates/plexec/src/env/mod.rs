//! Tool environments.

pub mod grid;
mod registry;
pub mod synthetic;
pub mod wiki;

pub use registry::{ArgSpec, Args, DuplicateTool, Handler, ToolError, ToolRegistry, ToolSpec};
