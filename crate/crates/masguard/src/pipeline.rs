//! Transcript in, detection report out.

use serde::Serialize;
use thiserror::Error;

use crate::contribution::{
    backpropagate, detect, detect_no_bp, init_final_scores, total_scores, AgentScores, ContributionError,
    DetectionConfig, DetectionReport, Method, ScoreMap,
};
use crate::graph::{build_graph, GraphError, Transcript};
use crate::judge::{score_all_edges, JudgeConfig, JudgeError, SignedGraph};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyzeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Contribution(#[from] ContributionError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub signed: SignedGraph,
    /// Node scores; backprop only.
    pub node_scores: Option<ScoreMap>,
    pub agent_scores: Option<AgentScores>,
    pub report: DetectionReport,
}

pub fn analyze(
    transcript: &Transcript,
    judge: &JudgeConfig,
    detection: &DetectionConfig,
    method: Method,
) -> Result<Analysis, AnalyzeError> {
    let graph = build_graph(transcript)?;
    let signed = score_all_edges(&graph, judge)?;
    match method {
        Method::Backprop => {
            let init = init_final_scores(&signed.graph, transcript)?;
            let scores = backpropagate(&signed, &init)?;
            let agents = total_scores(&scores, &signed.graph);
            let report = detect(&agents, detection)?;
            Ok(Analysis { signed, node_scores: Some(scores), agent_scores: Some(agents), report })
        }
        Method::NoBp => {
            let report = detect_no_bp(&signed)?;
            Ok(Analysis { signed, node_scores: None, agent_scores: None, report })
        }
    }
}
