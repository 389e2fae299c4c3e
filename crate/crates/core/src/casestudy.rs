//! The bundled smart-factory case study.

use crate::bestpractices::RuleSet;
use crate::model::{load_models, InfrastructureModel, SoftwareModel};
use std::path::PathBuf;

pub const INFRASTRUCTURE: &str = include_str!("../fixtures/casestudy/infrastructure.json");
pub const SOFTWARE: &str = include_str!("../fixtures/casestudy/software.json");
pub const PIPELINE: &str = include_str!("../fixtures/casestudy/pipeline.json");

pub fn models() -> (InfrastructureModel, SoftwareModel) {
    load_models(INFRASTRUCTURE, SOFTWARE).expect("bundled fixture is valid")
}

/// The rule set of the bundled pipeline configuration.
pub fn rules() -> RuleSet {
    let doc: serde_json::Value = serde_json::from_str(PIPELINE).expect("bundled fixture is valid");
    serde_json::from_value(doc["rules"].clone()).expect("bundled rules are valid")
}

/// Directory holding the fixture files, for tools that want paths rather than strings.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("casestudy")
}
