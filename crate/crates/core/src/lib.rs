//! Instructor-Worker LLM orchestration over hourly air-quality histories.

pub mod airdata;
pub mod chunking;
pub mod codeexec;
pub mod cost;
pub mod eval;
pub mod gateway;
pub mod orchestrator;
pub mod stats;
