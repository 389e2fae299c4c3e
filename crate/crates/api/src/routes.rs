use crate::error::ApiError;
use crate::store::{Project, ProjectMeta, RunInfo, RunStatus, Store};
use crate::App;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use fogforge_core::bestpractices::RuleSet;
use fogforge_core::enumerate::{DesignOption, ModelIndex};
use fogforge_core::model::load_models;
use fogforge_core::pipeline::{explain, FunnelReport, PipelineConfig, Session, StageName, StageRecord};
use fogforge_core::simulator::{simulate, SimRecord, SimulationMetrics};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::sync::{Arc, Mutex};

type AppState = State<Arc<App>>;
type ApiResult<T> = Result<T, ApiError>;

pub(crate) fn router() -> Router<Arc<App>> {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/infrastructure", get(get_infrastructure).put(put_infrastructure))
        .route("/projects/{id}/software", get(get_software).put(put_software))
        .route("/projects/{id}/rules", get(get_rules).put(put_rules))
        .route("/projects/{id}/evaluate", post(evaluate))
        .route("/projects/{id}/mappings", get(list_mappings))
        .route(
            "/projects/{id}/mappings/{name}",
            put(put_mapping).get(get_mapping).delete(delete_mapping),
        )
        .route("/projects/{id}/runs", post(start_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/results", get(results))
        .route("/runs/{id}/funnel", get(funnel))
        .route("/runs/{id}/emulation", get(emulation))
        .route("/runs/{id}/explain/{option_id}", get(explain_option))
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

// ---- projects

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NewProject {
    #[serde(default)]
    name: String,
    infrastructure: Value,
    software: Value,
    #[serde(default)]
    rules: RuleSet,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ProjectView<'a> {
    id: &'a str,
    name: &'a str,
    infrastructure: &'a fogforge_core::model::InfrastructureModel,
    software: &'a fogforge_core::model::SoftwareModel,
    rules: &'a RuleSet,
    mappings: &'a crate::store::Mappings,
    runs: Vec<String>,
    active_run: Option<String>,
}

async fn create_project(State(app): AppState, body: Bytes) -> ApiResult<Response> {
    let req: NewProject = parse(&body)?;
    let (infra, software) =
        load_models(&req.infrastructure.to_string(), &req.software.to_string()).map_err(ApiError::invalid)?;
    let project = Project {
        meta: ProjectMeta {
            id: Store::new_id(),
            name: req.name,
        },
        infra,
        software,
        rules: req.rules,
        mappings: Default::default(),
    };
    project.validate()?;
    app.store().save_project(&project)?;
    Ok((StatusCode::CREATED, Json(&project.meta)).into_response())
}

async fn list_projects(State(app): AppState) -> ApiResult<Json<Vec<ProjectMeta>>> {
    let store = app.store();
    let metas = store
        .project_ids()?
        .iter()
        .map(|id| store.load_project(id).map(|p| p.meta))
        .collect::<ApiResult<_>>()?;
    Ok(Json(metas))
}

fn runs_of(store: &Store, project: &str) -> ApiResult<Vec<String>> {
    let mut runs = Vec::new();
    for id in store.run_ids()? {
        if store.load_run(&id)?.project_id == project {
            runs.push(id);
        }
    }
    Ok(runs)
}

async fn get_project(State(app): AppState, Path(id): Path<String>) -> ApiResult<Response> {
    let lock = app.lock(&id);
    let _guard = lock.read().await;
    let p = app.store().load_project(&id)?;
    let view = ProjectView {
        id: &p.meta.id,
        name: &p.meta.name,
        infrastructure: &p.infra,
        software: &p.software,
        rules: &p.rules,
        mappings: &p.mappings,
        runs: runs_of(app.store(), &id)?,
        active_run: app.active_run(&id),
    };
    Ok(Json(view).into_response())
}

/// Loads, changes, validates and saves a project while holding its lock. Refused
/// while a run of the project is queued or running.
async fn mutate(app: &App, id: &str, change: impl FnOnce(&mut Project) -> ApiResult<()>) -> ApiResult<Project> {
    let lock = app.lock(id);
    let _guard = lock.write().await;
    let mut p = app.store().load_project(id)?;
    if let Some(run) = app.active_run(id) {
        return Err(ApiError::Conflict(format!("run `{run}` of this project is still active")));
    }
    change(&mut p)?;
    p.validate()?;
    app.store().save_project(&p)?;
    Ok(p)
}

async fn read_project(app: &App, id: &str) -> ApiResult<Project> {
    let lock = app.lock(id);
    let _guard = lock.read().await;
    app.store().load_project(id)
}

async fn get_infrastructure(State(app): AppState, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(read_project(&app, &id).await?.infra).into_response())
}

async fn get_software(State(app): AppState, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(read_project(&app, &id).await?.software).into_response())
}

async fn get_rules(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<RuleSet>> {
    Ok(Json(read_project(&app, &id).await?.rules))
}

async fn put_infrastructure(State(app): AppState, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let doc: Value = parse(&body)?;
    let p = mutate(&app, &id, |p| {
        let sw = serde_json::to_string(&p.software).map_err(ApiError::internal)?;
        p.infra = load_models(&doc.to_string(), &sw).map_err(ApiError::invalid)?.0;
        Ok(())
    })
    .await?;
    Ok(Json(p.infra).into_response())
}

async fn put_software(State(app): AppState, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let doc: Value = parse(&body)?;
    let p = mutate(&app, &id, |p| {
        let infra = serde_json::to_string(&p.infra).map_err(ApiError::internal)?;
        p.software = load_models(&infra, &doc.to_string()).map_err(ApiError::invalid)?.1;
        Ok(())
    })
    .await?;
    Ok(Json(p.software).into_response())
}

async fn put_rules(State(app): AppState, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<RuleSet>> {
    let rules: RuleSet = parse(&body)?;
    let p = mutate(&app, &id, |p| {
        p.rules = rules;
        Ok(())
    })
    .await?;
    Ok(Json(p.rules))
}

// ---- evaluation and saved mappings

async fn evaluate(State(app): AppState, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SimulationMetrics>> {
    let p = read_project(&app, &id).await?;
    let option: DesignOption = parse(&body)?;
    Ok(Json(simulate(&option, &p.infra, &p.software)?))
}

async fn list_mappings(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<crate::store::Mappings>> {
    Ok(Json(read_project(&app, &id).await?.mappings))
}

async fn get_mapping(State(app): AppState, Path((id, name)): Path<(String, String)>) -> ApiResult<Json<DesignOption>> {
    let mut mappings = read_project(&app, &id).await?.mappings;
    mappings
        .remove(&name)
        .map(Json)
        .ok_or_else(|| ApiError::NotFound(format!("no saved mapping `{name}`")))
}

async fn put_mapping(
    State(app): AppState,
    Path((id, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<DesignOption>> {
    let option: DesignOption = parse(&body)?;
    let lock = app.lock(&id);
    let _guard = lock.write().await;
    let mut p = app.store().load_project(&id)?;
    ModelIndex::new(&p.infra, &p.software)
        .indexed(&option)
        .map_err(|e| ApiError::from(fogforge_core::simulator::SimError::from(e)))?;
    p.mappings.insert(name, option.clone());
    app.store().save_project(&p)?;
    Ok(Json(option))
}

async fn delete_mapping(State(app): AppState, Path((id, name)): Path<(String, String)>) -> ApiResult<StatusCode> {
    let lock = app.lock(&id);
    let _guard = lock.write().await;
    let mut p = app.store().load_project(&id)?;
    if p.mappings.remove(&name).is_none() {
        return Err(ApiError::NotFound(format!("no saved mapping `{name}`")));
    }
    app.store().save_project(&p)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- runs

/// Keys a run request may not set; the project supplies them.
const RESERVED: [&str; 4] = ["infrastructure", "software", "rules", "outputDir"];

async fn start_run(State(app): AppState, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let overrides: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        parse(&body)?
    };
    let Value::Object(fields) = &overrides else {
        return Err(ApiError::invalid("run request must be a JSON object"));
    };
    if let Some(k) = fields.keys().find(|k| RESERVED.contains(&k.as_str())) {
        return Err(ApiError::invalid(format!("`{k}` comes from the project and cannot be overridden")));
    }

    let lock = app.lock(&id);
    let _guard = lock.write().await;
    let project = app.store().load_project(&id)?;
    if let Some(run) = app.active_run(&id) {
        return Err(ApiError::Conflict(format!("run `{run}` of this project is still active")));
    }

    let run_id = Store::new_id();
    let store = app.store();
    let mut doc = json!({
        "infrastructure": store.infrastructure_path(&id)?,
        "software": store.software_path(&id)?,
        "rules": project.rules,
    });
    doc.as_object_mut().expect("object").extend(fields.clone());
    let base = store.infrastructure_path(&id)?.parent().expect("project dir").to_path_buf();
    let mut config = PipelineConfig::parse(&doc.to_string(), &base)?;
    let info = RunInfo {
        id: run_id.clone(),
        project_id: id.clone(),
        status: RunStatus::Queued,
        stage: None,
        stages: Vec::new(),
        recommendation: None,
        error: None,
    };
    config.output_dir = store.run_dir_for_new(&run_id);
    let session = Session::from_config(config)?;
    store.create_run(&info, &overrides)?;
    app.active.lock().expect("active map").insert(id.clone(), run_id.clone());

    let worker = app.clone();
    tokio::spawn(async move {
        let task_app = worker.clone();
        let task_info = info.clone();
        let outcome = tokio::task::spawn_blocking(move || execute(&task_app, task_info, &session)).await;
        let mut info = match outcome {
            Ok(info) => info,
            Err(e) => RunInfo {
                status: RunStatus::Failed,
                error: Some(format!("run aborted: {e}")),
                ..info
            },
        };
        info.stage = None;
        let _ = worker.store().save_run(&info);
        worker.active.lock().expect("active map").remove(&info.project_id);
    });

    Ok((StatusCode::ACCEPTED, Json(json!({ "runId": run_id })))
        .into_response())
}

fn execute(app: &App, info: RunInfo, session: &Session) -> RunInfo {
    let state = Mutex::new(info);
    let progress = |stage: StageName, done: &[StageRecord]| {
        let mut info = state.lock().expect("run state");
        info.status = RunStatus::Running;
        info.stage = Some(stage);
        info.stages = done.to_vec();
        let _ = app.store().save_run(&info);
    };
    let result = session.run(Some(&progress));
    let mut info = state.into_inner().expect("run state");
    match result {
        Ok(report) => {
            info.status = RunStatus::Done;
            info.stages = report.stages;
            info.recommendation = report.recommendation;
        }
        Err(e) => {
            info.status = RunStatus::Failed;
            info.error = Some(e.to_string());
        }
    }
    info
}

async fn list_runs(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<Vec<RunInfo>>> {
    read_project(&app, &id).await?;
    let store = app.store();
    let runs = runs_of(store, &id)?
        .iter()
        .map(|r| store.load_run(r))
        .collect::<ApiResult<_>>()?;
    Ok(Json(runs))
}

async fn get_run(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<RunInfo>> {
    Ok(Json(app.store().load_run(&id)?))
}

/// Output directory of a finished run.
fn finished(app: &App, id: &str) -> ApiResult<std::path::PathBuf> {
    let info = app.store().load_run(id)?;
    if info.status.is_active() {
        return Err(ApiError::Conflict(format!("run `{id}` has not finished")));
    }
    app.store().run_out_dir(id)
}

fn artifact(out: &std::path::Path, name: &str) -> ApiResult<Vec<u8>> {
    let path = out.join(name);
    fs::read(&path).map_err(|_| ApiError::NotFound(format!("the run produced no {name}")))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ResultsQuery {
    feasible: Option<bool>,
    resources_ok: Option<bool>,
    min_cost: Option<f64>,
    max_cost: Option<f64>,
    #[serde(default)]
    sort: SortKey,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SortKey {
    /// Enumeration order.
    #[default]
    Id,
    /// Cheapest first, ties by id.
    Cost,
    /// Lowest worst-path latency first, ties by id.
    Latency,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ResultsPage {
    total: usize,
    page: usize,
    page_size: usize,
    records: Vec<SimRecord>,
}

const MAX_PAGE_SIZE: usize = 1000;

async fn results(
    State(app): AppState,
    Path(id): Path<String>,
    query: Result<Query<ResultsQuery>, QueryRejection>,
) -> ApiResult<Json<ResultsPage>> {
    let Query(q) = query.map_err(|e| ApiError::invalid(e.body_text()))?;
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(50);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::invalid(format!(
            "page starts at 1 and pageSize must be within 1..={MAX_PAGE_SIZE}"
        )));
    }
    let out = finished(&app, &id)?;
    blocking(move || {
        let bytes = artifact(&out, "records.jsonl")?;
        let text = String::from_utf8(bytes).map_err(ApiError::internal)?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: SimRecord = serde_json::from_str(line).map_err(ApiError::internal)?;
            let m = &r.metrics;
            let keep = q.feasible.is_none_or(|f| m.feasible == f)
                && q.resources_ok.is_none_or(|f| m.resources_ok() == f)
                && q.min_cost.is_none_or(|c| m.total_cost_month >= c)
                && q.max_cost.is_none_or(|c| m.total_cost_month <= c);
            if keep {
                records.push(r);
            }
        }
        match q.sort {
            SortKey::Id => records.sort_by_key(|r| r.option_id),
            SortKey::Cost => records.sort_by(|a, b| {
                a.metrics
                    .total_cost_month
                    .total_cmp(&b.metrics.total_cost_month)
                    .then(a.option_id.cmp(&b.option_id))
            }),
            SortKey::Latency => records.sort_by(|a, b| {
                a.metrics
                    .worst_path_ms()
                    .total_cmp(&b.metrics.worst_path_ms())
                    .then(a.option_id.cmp(&b.option_id))
            }),
        }
        let total = records.len();
        let records = records
            .into_iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .collect();
        Ok(Json(ResultsPage {
            total,
            page,
            page_size,
            records,
        }))
    })
    .await
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

/// `funnel.json` exactly as the pipeline wrote it.
async fn funnel(State(app): AppState, Path(id): Path<String>) -> ApiResult<Response> {
    let out = finished(&app, &id)?;
    Ok(json_bytes(artifact(&out, "funnel.json")?))
}

async fn emulation(State(app): AppState, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let out = finished(&app, &id)?;
    let funnel: FunnelReport = serde_json::from_slice(&artifact(&out, "funnel.json")?).map_err(ApiError::internal)?;
    let skipped = funnel.stage(StageName::Emulation).is_none_or(|s| s.skipped);
    let report: Value = match fs::read(out.join("emulation.json")) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(ApiError::internal)?,
        Err(_) => Value::Null,
    };
    Ok(Json(json!({ "skipped": skipped, "report": report })))
}

async fn explain_option(State(app): AppState, Path((id, option_id)): Path<(String, u64)>) -> ApiResult<Response> {
    let out = finished(&app, &id)?;
    let text = blocking(move || Ok(explain(option_id, &out)?)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}
