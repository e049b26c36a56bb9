//! Malicious-agent detection for multi-agent LLM systems.
//!
//! A conversation is unrolled into a temporal DAG ([`graph`]), every message
//! edge is signed by a judge ([`judge`]), contribution scores flow back from
//! the final decision ([`contribution`]) and agents that stand apart from the
//! rest get their outbound messages cut ([`repair`]). [`sim`] and
//! [`campaign`] provide a seeded simulator to exercise the whole loop.

pub mod campaign;
pub mod cli;
pub mod contribution;
pub mod graph;
pub mod judge;
pub mod pipeline;
pub mod repair;
pub mod report;
pub mod sim;

pub use contribution::{DetectionConfig, DetectionReport, Method};
pub use graph::{AgentId, MasGraph, MessageEvent, TemporalNode, Transcript};
pub use judge::{JudgeConfig, Sign, SignedGraph};
pub use pipeline::{analyze, Analysis, AnalyzeError};
pub use repair::{QuarantineState, RepairPolicy};
