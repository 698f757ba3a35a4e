use serde::{Deserialize, Serialize};

use super::DEFAULT_RETRY_LIMIT;
use crate::agents::{role_sequence, AgentRole, PayloadKind};
use crate::method::{Method, Tier};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub role: AgentRole,
    pub retry_limit: u32,
    /// Stages sharing a tag may run concurrently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel_group: Option<String>,
}

impl StageSpec {
    pub fn input_kind(&self) -> PayloadKind {
        self.role.input_kind()
    }

    pub fn output_kind(&self) -> PayloadKind {
        self.role.output_kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineGraph {
    pub method: Method,
    pub stages: Vec<StageSpec>,
    pub result_shape: Vec<Tier>,
}

impl PipelineGraph {
    /// Indices of stages grouped into execution steps: a step is either a
    /// single stage or a run of consecutive stages sharing a parallel group.
    pub fn steps(&self) -> Vec<Vec<usize>> {
        let mut steps: Vec<Vec<usize>> = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let joins_previous = i > 0
                && stage.parallel_group.is_some()
                && stage.parallel_group == self.stages[i - 1].parallel_group;
            match steps.last_mut() {
                Some(step) if joins_previous => step.push(i),
                _ => steps.push(vec![i]),
            }
        }
        steps
    }

    /// Checks that each step's stages consume what the previous step made.
    /// Parallel stages share their predecessor's output.
    pub fn is_well_typed(&self) -> bool {
        let steps = self.steps();
        steps.windows(2).all(|w| {
            let produced = self.stages[*w[0].last().unwrap()].output_kind();
            let feeder = self.stages[w[0][0]].output_kind();
            w[1].iter().all(|&i| {
                let wanted = self.stages[i].input_kind();
                wanted == produced || wanted == feeder
            })
        }) && self.stages.first().is_some_and(|s| s.input_kind() == PayloadKind::RawText)
    }
}

pub fn plan(method: Method) -> PipelineGraph {
    let stages = role_sequence(method)
        .iter()
        .map(|&role| StageSpec {
            role,
            retry_limit: DEFAULT_RETRY_LIMIT,
            parallel_group: matches!(role, AgentRole::LanguageAnalyzer | AgentRole::ContextInterpreter)
                .then(|| "discourse-interpretation".to_string()),
        })
        .collect();
    PipelineGraph {
        method,
        stages,
        result_shape: method.result_shape().to_vec(),
    }
}
