use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use coannotate_core::domain::{
    AnnotatorId, CategoryId, Decision, Instance, InstanceId, ProjectId, TaskSpec,
};
use coannotate_core::protocol::{Engine, ProjectSettings, ProtocolError, QueueStatus};
use coannotate_core::scaffold::{
    GenConfig, HttpProvider, Provider, ProviderSettings, ScaffoldOutcome, StubProvider,
    DEFAULT_TEMPERATURE,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{Role, Session, TokenTable};
use crate::error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub tokens: Arc<TokenTable>,
    pub provider: Option<ProviderSettings>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, tokens: TokenTable, provider: Option<ProviderSettings>) -> Self {
        Self {
            engine,
            tokens: Arc::new(tokens),
            provider,
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking engine work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ProtocolError>
where
    F: FnOnce() -> Result<T, ProtocolError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .expect("engine task panicked")
}

async fn authenticate(
    State(st): State<AppState>,
    mut req: Request,
    next: Next,
) -> Result<Response, ApiError> {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(ApiError::unauthorized)?;
    let session = st
        .tokens
        .lookup(token.trim())
        .cloned()
        .ok_or_else(ApiError::unauthorized)?;
    req.extensions_mut().insert(session);
    Ok(next.run(req).await)
}

fn admin_scope(s: &Session, pid: &ProjectId) -> ApiResult<()> {
    if s.role != Role::Admin {
        return Err(ApiError::forbidden("admin role required"));
    }
    if !s.may_access(pid) {
        return Err(ApiError::forbidden("token is not valid for this project"));
    }
    Ok(())
}

fn require_admin(s: &Session) -> ApiResult<()> {
    match s.role {
        Role::Admin => Ok(()),
        Role::Annotator(_) => Err(ApiError::forbidden("admin role required")),
    }
}

fn annotator_scope(s: &Session, pid: &ProjectId) -> ApiResult<AnnotatorId> {
    let Role::Annotator(a) = &s.role else {
        return Err(ApiError::forbidden("annotator role required"));
    };
    if !s.may_access(pid) {
        return Err(ApiError::forbidden("token is not valid for this project"));
    }
    Ok(a.clone())
}

pub fn router(state: AppState) -> Router {
    let admin = Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{pid}", get(project_status))
        .route("/projects/{pid}/instances", post(import_instances))
        .route("/projects/{pid}/annotators", post(register_annotator))
        .route("/projects/{pid}/passes/{pass}/open", post(open_pass))
        .route("/projects/{pid}/passes/{pass}/close", post(close_pass))
        .route("/projects/{pid}/scaffolds", post(attach_scaffolds))
        .route("/projects/{pid}/scaffolds/generate", post(generate_scaffolds))
        .route("/projects/{pid}/scaffolds/{iid}", get(admin_scaffold))
        .route("/projects/{pid}/report", get(build_report).post(build_report))
        .route("/projects/{pid}/events", get(events));
    let annotator = Router::new()
        .route("/projects/{pid}/queue", get(my_queue))
        .route("/projects/{pid}/progress", get(my_progress))
        .route("/projects/{pid}/labels", post(submit_label))
        .route("/projects/{pid}/items/{iid}/explanation", get(explanation))
        .route("/projects/{pid}/decisions", post(submit_decision));
    Router::new()
        .nest("/admin", admin)
        .nest("/me", annotator)
        .layer(middleware::from_fn_with_state(state.clone(), authenticate))
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct CreateProject {
    pub task: TaskSpec,
    #[serde(default)]
    pub settings: ProjectSettings,
    #[serde(default)]
    pub project_id: Option<ProjectId>,
}

async fn create_project(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Json(body): Json<CreateProject>,
) -> ApiResult<impl IntoResponse> {
    require_admin(&s)?;
    let pid = blocking(move || st.engine.create_project(body.task, body.settings, body.project_id))
        .await
        .map_err(ApiError::admin)?;
    Ok((StatusCode::CREATED, Json(json!({ "project_id": pid }))))
}

async fn list_projects(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
) -> ApiResult<impl IntoResponse> {
    require_admin(&s)?;
    let ids: Vec<ProjectId> = st
        .engine
        .list_projects()
        .into_iter()
        .filter(|p| s.may_access(p))
        .collect();
    Ok(Json(json!({ "projects": ids })))
}

async fn project_status(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    Ok(Json(st.engine.project_status(&pid).map_err(ApiError::admin)?))
}

async fn import_instances(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(batch): Json<Vec<Instance>>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let out = blocking(move || st.engine.import_instances(&pid, batch))
        .await
        .map_err(ApiError::admin)?;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct RegisterAnnotator {
    annotator_id: AnnotatorId,
}

async fn register_annotator(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(body): Json<RegisterAnnotator>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let id = body.annotator_id.clone();
    blocking(move || st.engine.register_annotator(&pid, body.annotator_id))
        .await
        .map_err(ApiError::admin)?;
    Ok((StatusCode::CREATED, Json(json!({ "annotator_id": id }))))
}

fn pass_number(n: u8) -> ApiResult<u8> {
    match n {
        1 | 2 => Ok(n),
        _ => Err(ApiError::bad_request(format!("pass must be 1 or 2, got {n}"))),
    }
}

async fn open_pass(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path((pid, pass)): Path<(ProjectId, u8)>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let pass = pass_number(pass)?;
    let engine = st.engine.clone();
    let p = pid.clone();
    blocking(move || match pass {
        1 => engine.open_pass1(&p),
        _ => engine.open_pass2(&p),
    })
    .await
    .map_err(ApiError::admin)?;
    Ok(Json(st.engine.project_status(&pid).map_err(ApiError::admin)?))
}

#[derive(Debug, Default, Deserialize)]
struct CloseBody {
    #[serde(default)]
    force: bool,
}

async fn close_pass(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path((pid, pass)): Path<(ProjectId, u8)>,
    body: Option<Json<CloseBody>>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let pass = pass_number(pass)?;
    let force = body.map(|b| b.force).unwrap_or_default();
    let summary = blocking(move || match pass {
        1 => st.engine.close_pass1(&pid, force),
        _ => st.engine.close_pass2(&pid, force),
    })
    .await
    .map_err(ApiError::admin)?;
    Ok(Json(summary))
}

#[derive(Debug, Deserialize)]
struct AttachBody {
    outcomes: Vec<ScaffoldOutcome>,
}

async fn attach_scaffolds(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(body): Json<AttachBody>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let out = blocking(move || st.engine.attach_scaffolds(&pid, body.outcomes))
        .await
        .map_err(ApiError::admin)?;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct GenerateBody {
    #[serde(default)]
    pub stub: bool,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub parallelism: Option<usize>,
}

async fn generate_scaffolds(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(body): Json<GenerateBody>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let task = st.engine.state(&pid).map_err(ApiError::admin)?.task;
    let provider: Box<dyn Provider> = if body.stub {
        Box::new(StubProvider::new(task))
    } else {
        let mut settings = st.provider.clone().ok_or_else(|| {
            ApiError::bad_request("no provider configured; set LLM_ENDPOINT or request the stub")
        })?;
        if let Some(m) = &body.model {
            settings.model = m.clone();
        }
        Box::new(HttpProvider::new(settings))
    };
    let defaults = GenConfig::default();
    let cfg = GenConfig {
        model: provider.model().to_owned(),
        temperature: body.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        max_retries: body.max_retries.unwrap_or(defaults.max_retries),
        run_index: 0,
    };
    let parallelism = body.parallelism.unwrap_or(4).max(1);
    let out = blocking(move || {
        st.engine
            .generate_scaffolds(&pid, provider.as_ref(), &cfg, parallelism)
    })
    .await
    .map_err(ApiError::admin)?;
    Ok(Json(out))
}

async fn admin_scaffold(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path((pid, iid)): Path<(ProjectId, InstanceId)>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    match st.engine.scaffold(&pid, &iid).map_err(ApiError::admin)? {
        Some(scaffold) => Ok(Json(scaffold)),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no scaffold for '{iid}'"),
        )),
    }
}

#[derive(Debug, Default, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    interrun_r: Option<f64>,
}

async fn build_report(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    body: Option<Json<ReportQuery>>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    let interrun = body.and_then(|b| b.interrun_r);
    let report = blocking(move || st.engine.build_report(&pid, interrun))
        .await
        .map_err(ApiError::admin)?;
    let table = coannotate_core::metrics::render_table(std::slice::from_ref(&report));
    Ok(Json(json!({ "report": report, "table": table })))
}

async fn events(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
) -> ApiResult<impl IntoResponse> {
    admin_scope(&s, &pid)?;
    Ok(Json(st.engine.events(&pid).map_err(ApiError::admin)?))
}

async fn my_queue(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
) -> ApiResult<impl IntoResponse> {
    let me = annotator_scope(&s, &pid)?;
    Ok(Json(
        st.engine
            .annotator_queue(&pid, &me)
            .map_err(ApiError::annotator)?,
    ))
}

#[derive(Debug, Serialize)]
struct Progress {
    status: QueueStatus,
    completed: usize,
    total: usize,
}

async fn my_progress(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
) -> ApiResult<impl IntoResponse> {
    let me = annotator_scope(&s, &pid)?;
    let q = st
        .engine
        .annotator_queue(&pid, &me)
        .map_err(ApiError::annotator)?;
    Ok(Json(Progress {
        status: q.status,
        completed: q.completed,
        total: q.total,
    }))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    instance_id: InstanceId,
    label: CategoryId,
}

async fn submit_label(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(body): Json<LabelBody>,
) -> ApiResult<impl IntoResponse> {
    let me = annotator_scope(&s, &pid)?;
    let record = blocking(move || {
        st.engine
            .submit_pass1_label(&pid, &me, &body.instance_id, body.label)
    })
    .await
    .map_err(ApiError::annotator)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "instance_id": record.instance_id, "label": record.label })),
    ))
}

async fn explanation(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path((pid, iid)): Path<(ProjectId, InstanceId)>,
) -> ApiResult<impl IntoResponse> {
    let me = annotator_scope(&s, &pid)?;
    let view = blocking(move || st.engine.fetch_scaffold_view(&pid, &me, &iid))
        .await
        .map_err(ApiError::annotator)?;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    instance_id: InstanceId,
    #[serde(flatten)]
    decision: Decision,
}

async fn submit_decision(
    State(st): State<AppState>,
    Extension(s): Extension<Session>,
    Path(pid): Path<ProjectId>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<impl IntoResponse> {
    let me = annotator_scope(&s, &pid)?;
    let record = blocking(move || {
        st.engine
            .submit_pass2_decision(&pid, &me, &body.instance_id, body.decision)
    })
    .await
    .map_err(ApiError::annotator)?;
    Ok((StatusCode::CREATED, Json(record)))
}
