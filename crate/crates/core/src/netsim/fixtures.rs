use super::Scenario;

/// The checked-in two-venue concert scenario.
pub const REPLICATION_TOML: &str = include_str!("../../scenarios/replication.toml");

pub fn replication_scenario() -> Scenario {
    Scenario::from_toml_str(REPLICATION_TOML).expect("checked-in scenario is valid")
}

/// The same conditions over 300 s.
pub fn replication_scenario_300() -> Scenario {
    let mut s = replication_scenario();
    s.name = "replication-300".into();
    s.duration_s = 300;
    s
}
