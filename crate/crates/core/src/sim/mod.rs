mod churn;
mod engine;
mod scenario;
mod select;
mod trace;

pub use churn::{churn_process, ChurnSpec, Transition};
pub use engine::{branch_oracle, churn_seed, run, Event, Payload, RunOutput};
pub use scenario::{load_scenario, JobSpec, NodeSpec, Scenario, ScenarioError, TaskDef, PPM};
pub use select::select_provider;
pub use trace::{Audit, EventTrace, Metrics, TraceLine};
