//! Projects and runs as plain JSON documents under a data root:
//!
//! ```text
//! projects/{id}/project.json        name
//! projects/{id}/infrastructure.json
//! projects/{id}/software.json
//! projects/{id}/rules.json
//! projects/{id}/mappings.json       saved design options by name
//! runs/{id}/run.json                status and funnel so far
//! runs/{id}/request.json            the config overrides the run started with
//! runs/{id}/out/                    pipeline artifacts
//! ```

use crate::error::ApiError;
use fogforge_core::bestpractices::RuleSet;
use fogforge_core::enumerate::DesignOption;
use fogforge_core::model::{load_models, to_document, validate_models, InfrastructureModel, SoftwareModel};
use fogforge_core::pipeline::{Recommendation, StageName, StageRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use uuid::Uuid;

pub type Mappings = BTreeMap<String, DesignOption>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectMeta {
    pub id: String,
    #[serde(default)]
    pub name: String,
}

/// A project with validated models.
#[derive(Debug, Clone)]
pub struct Project {
    pub meta: ProjectMeta,
    pub infra: InfrastructureModel,
    pub software: SoftwareModel,
    pub rules: RuleSet,
    pub mappings: Mappings,
}

impl Project {
    /// Checks the models against each other and the rules against both.
    pub fn validate(&self) -> Result<(), ApiError> {
        validate_models(&self.infra, &self.software).map_err(ApiError::invalid)?;
        self.rules.validate(&self.infra, &self.software).map_err(ApiError::invalid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    pub fn is_active(self) -> bool {
        matches!(self, RunStatus::Queued | RunStatus::Running)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunInfo {
    pub id: String,
    pub project_id: String,
    pub status: RunStatus,
    /// Stage in progress while running.
    pub stage: Option<StageName>,
    /// Completed stages.
    pub stages: Vec<StageRecord>,
    #[serde(rename = "final")]
    pub recommendation: Option<Recommendation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("{}: {e}", path.display()))
}

fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T, ApiError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

fn write_doc<T: Serialize>(path: &Path, value: &T) -> Result<(), ApiError> {
    // Write then rename so readers never see half a document.
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, to_document(value)).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

/// Ids are generated UUIDs; anything else cannot name a stored entry.
fn checked(id: &str) -> Option<&str> {
    Uuid::parse_str(id).ok().map(|_| id)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ApiError> {
        let root = root.into();
        for sub in ["projects", "runs"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn new_id() -> String {
        Uuid::new_v4().to_string()
    }

    fn project_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        let dir = checked(id).map(|id| self.root.join("projects").join(id));
        match dir {
            Some(d) if d.is_dir() => Ok(d),
            _ => Err(ApiError::NotFound(format!("unknown project `{id}`"))),
        }
    }

    fn run_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        let dir = checked(id).map(|id| self.root.join("runs").join(id));
        match dir {
            Some(d) if d.is_dir() => Ok(d),
            _ => Err(ApiError::NotFound(format!("unknown run `{id}`"))),
        }
    }

    pub fn infrastructure_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        Ok(self.project_dir(id)?.join("infrastructure.json"))
    }

    pub fn software_path(&self, id: &str) -> Result<PathBuf, ApiError> {
        Ok(self.project_dir(id)?.join("software.json"))
    }

    pub fn project_ids(&self) -> Result<Vec<String>, ApiError> {
        ids_in(&self.root.join("projects"))
    }

    pub fn run_ids(&self) -> Result<Vec<String>, ApiError> {
        ids_in(&self.root.join("runs"))
    }

    pub fn load_project(&self, id: &str) -> Result<Project, ApiError> {
        let dir = self.project_dir(id)?;
        let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| io(&dir.join(name), e));
        let (infra, software) = load_models(&read("infrastructure.json")?, &read("software.json")?)
            .map_err(|e| ApiError::internal(format!("stored models of `{id}`: {e}")))?;
        Ok(Project {
            meta: read_doc(&dir.join("project.json"))?,
            infra,
            software,
            rules: read_doc(&dir.join("rules.json"))?,
            mappings: read_doc(&dir.join("mappings.json"))?,
        })
    }

    /// Writes every document of `project`, creating its directory when new.
    pub fn save_project(&self, project: &Project) -> Result<(), ApiError> {
        let dir = self.root.join("projects").join(&project.meta.id);
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        write_doc(&dir.join("infrastructure.json"), &project.infra)?;
        write_doc(&dir.join("software.json"), &project.software)?;
        write_doc(&dir.join("rules.json"), &project.rules)?;
        write_doc(&dir.join("mappings.json"), &project.mappings)?;
        write_doc(&dir.join("project.json"), &project.meta)
    }

    pub fn run_out_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        Ok(self.run_dir(id)?.join("out"))
    }

    /// Output directory a run about to be created will use.
    pub fn run_dir_for_new(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id).join("out")
    }

    pub fn create_run(&self, info: &RunInfo, request: &serde_json::Value) -> Result<PathBuf, ApiError> {
        let dir = self.root.join("runs").join(&info.id);
        fs::create_dir_all(dir.join("out")).map_err(|e| io(&dir, e))?;
        write_doc(&dir.join("request.json"), request)?;
        write_doc(&dir.join("run.json"), info)?;
        Ok(dir.join("out"))
    }

    pub fn load_run(&self, id: &str) -> Result<RunInfo, ApiError> {
        read_doc(&self.run_dir(id)?.join("run.json"))
    }

    pub fn save_run(&self, info: &RunInfo) -> Result<(), ApiError> {
        write_doc(&self.run_dir(&info.id)?.join("run.json"), info)
    }
}

fn ids_in(dir: &Path) -> Result<Vec<String>, ApiError> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|id| checked(id).is_some())
        .collect();
    ids.sort();
    Ok(ids)
}
