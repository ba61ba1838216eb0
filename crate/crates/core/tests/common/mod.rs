#![allow(dead_code)]

pub mod dynamics_oracle;
pub mod moment_oracle;

use std::path::PathBuf;

use ccplan::scenario::ScenarioFile;
use ccplan::{BoundKind, CcpConfig, ClarabelBackend, PlanSolution, Reformulation, Scenario};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub struct Loaded {
    pub file: ScenarioFile,
    pub scenario: Scenario,
}

pub fn load(name: &str) -> Loaded {
    let file = ScenarioFile::from_path(fixture_path(name)).expect("fixture parses");
    let scenario = file.to_scenario().expect("fixture builds");
    Loaded { file, scenario }
}

pub fn reformulation(loaded: &Loaded, kind: BoundKind) -> Reformulation {
    let alloc = loaded.file.allocation(&loaded.scenario, kind).expect("allocation");
    Reformulation::new(&loaded.scenario, &alloc).expect("reformulation")
}

pub fn solve(loaded: &Loaded, kind: BoundKind) -> PlanSolution {
    let reform = reformulation(loaded, kind);
    ccplan::solve_ccp(&reform, &ClarabelBackend::default(), &loaded.file.ccp).expect("solve")
}

pub fn config(loaded: &Loaded) -> CcpConfig {
    loaded.file.ccp.clone()
}
