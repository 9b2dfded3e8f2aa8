//! Closed-loop tool-program runtime.
//!
//! A task is solved by generating a plan and a straight-line tool program,
//! executing it against a toolkit, and judging the result. Failures are
//! attributed to a tool (or to the planner) by global and local reflection,
//! and the attribution drives learning: per-concept prompt pools for the
//! updatable tools, and a demonstration pool for the program generator.
//!
//! Everything runs against a deterministic synthetic world and a scripted
//! language-model backend so that every phase is reproducible.

pub mod backend;
pub mod bench;
pub mod cli;
pub mod controller;
pub mod demos;
pub mod dsl;
pub mod error;
pub mod learning;
pub mod model;
pub mod reflection;
pub mod tools;
pub mod vecmath;

pub use error::{Error, Result};
