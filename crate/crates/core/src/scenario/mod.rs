//! Scripted scenarios: sensor programs, injected events, decision points
//! and the driver that plays them through the platform.

mod driver;
pub mod metrics;
pub mod script;
pub mod sensors;

use thiserror::Error;

use crate::cloud::CloudError;
use crate::dcep::DcepError;
use crate::orchestrator::OrchestratorError;
use crate::sar::SarError;

pub use driver::{
    ChoiceRecord, ChoiceRequest, DecisionMode, DecisionPointView, Driver, OptionView, PointState, RunLog, Step,
};
pub use metrics::{check_milestones, milestone_table, run_metrics, MilestoneResult, PhaseRate, RunMetrics};
pub use script::{ScenarioScript, ValueProgram};
pub use sensors::{Sensor, SensorGroup};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("invalid scenario: {0}")]
    Semantic(String),
    #[error("{0}")]
    Io(String),
    #[error("decision point {0} has no scripted choice")]
    MissingScriptedChoice(String),
    #[error("unknown or unissued decision point {0}")]
    UnknownPoint(String),
    #[error("decision point {0} is already decided")]
    AlreadyDecided(String),
    #[error("run aborted while waiting for a decision")]
    AbortedByOperator,
    #[error("the run has finished")]
    Finished,
    #[error(transparent)]
    Proposal(#[from] SarError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Dcep(#[from] DcepError),
}

/// The nuclear accident exercise shipped with the crate.
pub mod builtin {
    use super::{ScenarioError, ScenarioScript};

    pub const NUCLEAR: &str = include_str!("../../../../scenarios/nuclear.scenario");

    pub const PROCESSES: [(&str, &str); 6] = [
        ("processes/manage-situation.process", include_str!("../../../../scenarios/processes/manage-situation.process")),
        ("processes/assess-situation.process", include_str!("../../../../scenarios/processes/assess-situation.process")),
        (
            "processes/confine-population.process",
            include_str!("../../../../scenarios/processes/confine-population.process"),
        ),
        (
            "processes/design-circulation-plan.process",
            include_str!("../../../../scenarios/processes/design-circulation-plan.process"),
        ),
        (
            "processes/implement-circulation-plan.process",
            include_str!("../../../../scenarios/processes/implement-circulation-plan.process"),
        ),
        ("processes/manage-resources.process", include_str!("../../../../scenarios/processes/manage-resources.process")),
    ];

    pub fn resolve(path: &str) -> Result<String, std::io::Error> {
        PROCESSES
            .iter()
            .find(|(p, _)| *p == path)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, path.to_string()))
    }

    /// Loads a scenario whose process files are the built-in ones.
    pub fn load(text: &str) -> Result<ScenarioScript, ScenarioError> {
        ScenarioScript::load(text, &resolve)
    }

    pub fn nuclear() -> ScenarioScript {
        load(NUCLEAR).expect("built-in scenario is valid")
    }
}
