//! HTTP service over the exploration engine: project models, instant evaluation
//! of a single design, pipeline runs and result browsing.
//!
//! State lives in a directory of JSON documents (see [`store`]). There is no
//! authentication; bind to loopback.

mod error;
mod routes;
pub mod store;

pub use error::ApiError;
pub use store::{Project, RunInfo, RunStatus, Store};

use axum::Router;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use tokio::sync::RwLock;

/// Shared service state.
#[derive(Debug)]
pub struct App {
    store: Store,
    /// Model mutation and run start take a project's lock exclusively.
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    /// Project id to the id of its queued or running run.
    active: Mutex<HashMap<String, String>>,
}

impl App {
    /// Opens the data root. Runs left queued or running by an earlier process are
    /// marked failed, since nothing will finish them.
    pub fn open(root: impl Into<PathBuf>) -> Result<Arc<Self>, ApiError> {
        let store = Store::open(root)?;
        for id in store.run_ids()? {
            let mut info = store.load_run(&id)?;
            if info.status.is_active() {
                info.status = RunStatus::Failed;
                info.stage = None;
                info.error = Some("interrupted by a service restart".into());
                store.save_run(&info)?;
            }
        }
        Ok(Arc::new(Self {
            store,
            locks: Mutex::default(),
            active: Mutex::default(),
        }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn lock(&self, project: &str) -> Arc<RwLock<()>> {
        let mut locks = self.locks.lock().expect("lock map");
        locks.entry(project.to_string()).or_default().clone()
    }

    fn active_run(&self, project: &str) -> Option<String> {
        self.active.lock().expect("active map").get(project).cloned()
    }
}

pub fn router(app: Arc<App>) -> Router {
    routes::router().with_state(app)
}
