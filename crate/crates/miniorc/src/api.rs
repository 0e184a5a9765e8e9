//! HTTP routes. Bodies are JSON in both directions; errors are [`ApiError`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use miniorc_core::broker::{PlacementRequest, RuleOwner};
use miniorc_core::catalog::{MonitorSample, SiteDescriptor};
use miniorc_core::datamgr::{DatasetSpec, StorageQos};
use miniorc_core::iam::{Claims, ExternalIdentity, IdentityKind, TranslationTarget};
use miniorc_core::ids::{AccountId, DatasetId, DeploymentId, ServiceId, SiteId, TaskId, TransferId};
use miniorc_core::orchestrator::iaas::{Fault, ScheduledFault};
use miniorc_core::orchestrator::{Deployment, DeploymentState};
use miniorc_core::platform::{Command, Outcome, Platform, PlatformEvent, SiteSimulation};
use miniorc_core::slam::{SlaCaps, SlaClass};
use miniorc_core::tosca::{Scenario, Value};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ClockMode;
use crate::error::ApiError;
use crate::service::{RequestCtx, Service, parse_rule_owner};

pub const REQUEST_ID: &str = "x-request-id";

pub type Shared = Arc<Service>;

pub fn router(service: Shared) -> Router {
    let limit = service.config().server.max_body_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/readyz", get(readyz))
        .route("/iam/login", post(login))
        .route("/iam/link", post(link))
        .route("/iam/introspect", post(introspect))
        .route("/iam/users", get(list_users))
        .route("/iam/users/{account}", axum::routing::patch(set_enabled))
        .route("/iam/groups", get(list_groups))
        .route("/iam/groups/{group}/members", post(add_member))
        .route("/iam/groups/{group}/members/{account}", axum::routing::delete(remove_member))
        .route("/iam/clients", post(register_client))
        .route("/iam/translate", post(translate))
        .route("/iam/revoke", post(revoke))
        .route("/deployments", get(list_deployments).post(submit))
        .route("/deployments/{id}", get(get_deployment).delete(delete_deployment).patch(scale_deployment))
        .route("/deployments/{id}/events", get(deployment_events))
        .route("/events", get(all_events))
        .route("/sites", get(list_sites).post(register_site))
        .route("/sites/{id}/faults", post(site_fault))
        .route("/metrics/ingest", post(ingest))
        .route("/rank", get(rank))
        .route("/rules", get(list_rules).put(put_rules))
        .route("/slas", get(list_slas).post(negotiate_sla))
        .route("/datasets", get(list_datasets).post(add_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/replicas", post(put_replica))
        .route("/datasets/{id}/qos", post(enforce_qos))
        .route("/transfers", get(list_transfers).post(schedule_transfer))
        .route("/transfers/{id}", get(get_transfer).delete(cancel_transfer))
        .route("/namespace", get(namespace))
        .route("/cluster", get(cluster))
        .route("/cluster/services/{service}/kill", post(kill_task))
        .route("/clock", get(clock))
        .route("/clock/advance", post(advance))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(service)
}

async fn not_found() -> ApiError {
    ApiError::new("NOT_FOUND", "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new("METHOD_NOT_ALLOWED", "method not allowed on this route")
}

/// Successful reply carrying the request id header.
struct Reply {
    status: StatusCode,
    request_id: String,
    body: serde_json::Value,
}

impl Reply {
    fn ok(request_id: String, body: impl Serialize) -> Reply {
        Reply::with(StatusCode::OK, request_id, body)
    }

    fn with(status: StatusCode, request_id: String, body: impl Serialize) -> Reply {
        let body = serde_json::to_value(body).unwrap_or_else(|e| json!({ "error": e.to_string() }));
        Reply { status, request_id, body }
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        let mut resp = (self.status, Json(self.body)).into_response();
        if let Ok(v) = HeaderValue::from_str(&self.request_id) {
            resp.headers_mut().insert(REQUEST_ID, v);
        }
        resp
    }
}

type ApiResult = Result<Reply, ApiError>;

/// Client-supplied request id, if any.
struct ReqId(Option<String>);

impl<S: Send + Sync> FromRequestParts<S> for ReqId {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let id = parts.headers.get(REQUEST_ID).and_then(|v| v.to_str().ok());
        match id {
            Some(s) if s.is_empty() || s.len() > 128 || !s.chars().all(|c| c.is_ascii_graphic()) => {
                Err(ApiError::bad_request("x-request-id must be 1-128 visible ASCII characters"))
            }
            other => Ok(ReqId(other.map(str::to_string))),
        }
    }
}

impl ReqId {
    fn for_read(self, service: &Service) -> String {
        self.0.unwrap_or_else(|| service.next_read_id())
    }
}

/// Verified bearer token claims.
struct Auth(Claims);

impl FromRequestParts<Shared> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, service: &Shared) -> Result<Self, Self::Rejection> {
        let header = parts.headers.get(axum::http::header::AUTHORIZATION).ok_or_else(ApiError::auth_required)?;
        let text = header.to_str().map_err(|_| ApiError::auth_required())?;
        let token = text
            .strip_prefix("Bearer ")
            .or_else(|| text.strip_prefix("bearer "))
            .ok_or_else(ApiError::auth_required)?;
        service.authenticate(token.trim()).map(Auth)
    }
}

impl Auth {
    fn account(&self) -> &AccountId {
        &self.0.account_id
    }

    fn require_admin(&self) -> Result<(), ApiError> {
        if self.0.is_admin() { Ok(()) } else { Err(ApiError::forbidden("admin group required")) }
    }

    fn may_act_for(&self, account: &AccountId) -> Result<(), ApiError> {
        if self.account() == account || self.0.is_admin() {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!("not allowed to act for {account}")))
        }
    }

    fn ctx(&self, req: ReqId) -> RequestCtx {
        RequestCtx::as_account(self.account(), req.0)
    }
}

/// JSON body parsed without trusting the content type header.
struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state).await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::new("PAYLOAD_TOO_LARGE", e.body_text())
            } else {
                ApiError::bad_request(e.body_text())
            }
        })?;
        let bytes = if bytes.iter().all(u8::is_ascii_whitespace) { Bytes::from_static(b"{}") } else { bytes };
        serde_json::from_slice(&bytes)
            .map(Body)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
    }
}

/// Query string parsed into an [`ApiError`] on failure.
struct Q<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Q<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Q(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

/// Path parameters parsed into an [`ApiError`] on failure.
struct P<T>(T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for P<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| P(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

// ---- health ----

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn readyz(axum::extract::State(s): axum::extract::State<Shared>) -> Json<serde_json::Value> {
    let (now, seq) = (s.read(Platform::now), s.last_seq());
    Json(json!({ "status": "ready", "now": now, "journal_seq": seq }))
}

type St = axum::extract::State<Shared>;

// ---- iam ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityBody {
    issuer: String,
    subject: String,
    #[serde(default = "oidc")]
    kind: IdentityKind,
}

fn oidc() -> IdentityKind {
    IdentityKind::Oidc
}

impl IdentityBody {
    fn identity(&self) -> ExternalIdentity {
        ExternalIdentity::new(&self.issuer, &self.subject, self.kind)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginBody {
    issuer: String,
    subject: String,
    #[serde(default = "oidc")]
    kind: IdentityKind,
    #[serde(default)]
    audience: Option<String>,
}

async fn login(axum::extract::State(s): St, req: ReqId, Body(body): Body<LoginBody>) -> ApiResult {
    let identity = ExternalIdentity::new(&body.issuer, &body.subject, body.kind);
    let audience = body.audience.unwrap_or_else(|| s.config().auth.default_audience.clone());
    let ctx = RequestCtx { request_id: req.0, actor: None };
    if s.config().auth.auto_link && s.account_of(&identity).is_none() {
        let link_ctx = RequestCtx { request_id: ctx.request_id.as_ref().map(|r| format!("{r}/link")), actor: None };
        s.run(Command::LinkCredential { identity: identity.clone(), account: None }, &link_ctx)?;
    }
    let (outcome, rid) = s.run(Command::Login { identity, audience }, &ctx)?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkBody {
    identity: IdentityBody,
    #[serde(default)]
    account: Option<AccountId>,
}

async fn link(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<LinkBody>) -> ApiResult {
    let account = body.account.unwrap_or_else(|| auth.account().clone());
    auth.may_act_for(&account)?;
    let cmd = Command::LinkCredential { identity: body.identity.identity(), account: Some(account) };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrospectBody {
    token: String,
}

/// Reports validity in the body; an invalid token is not an error here.
async fn introspect(axum::extract::State(s): St, _auth: Auth, req: ReqId, Body(body): Body<IntrospectBody>) -> ApiResult {
    let rid = req.for_read(&s);
    let now = s.read(Platform::now);
    match s.authenticate(&body.token) {
        Ok(claims) => Ok(Reply::ok(rid, json!({ "active": true, "claims": claims }))),
        Err(e) if e.status == 401 || e.status == 403 => {
            Ok(Reply::ok(rid, json!({ "active": false, "code": e.code, "reason": e.message, "now": now })))
        }
        Err(e) => Err(e),
    }
}

#[derive(Deserialize)]
struct PageQuery {
    #[serde(default)]
    filter: Option<String>,
    #[serde(default)]
    after: Option<String>,
    #[serde(default = "page_size")]
    limit: usize,
}

fn page_size() -> usize {
    50
}

async fn list_users(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<PageQuery>) -> ApiResult {
    let page = s
        .read(|p| p.iam().list_users(&auth.0, q.filter.as_deref(), q.after.as_deref(), q.limit.min(1000)))
        .map_err(platform_err)?;
    Ok(Reply::ok(req.for_read(&s), page))
}

async fn list_groups(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<PageQuery>) -> ApiResult {
    let page = s.read(|p| p.iam().list_groups(&auth.0, q.after.as_deref(), q.limit.min(1000))).map_err(platform_err)?;
    Ok(Reply::ok(req.for_read(&s), page))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnabledBody {
    enabled: bool,
}

async fn set_enabled(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(account): P<String>,
    Body(body): Body<EnabledBody>,
) -> ApiResult {
    auth.require_admin()?;
    let cmd = Command::SetEnabled { account: AccountId::new(account), enabled: body.enabled };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemberBody {
    account: AccountId,
}

async fn add_member(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(group): P<String>,
    Body(body): Body<MemberBody>,
) -> ApiResult {
    auth.require_admin()?;
    let (outcome, rid) = s.run(Command::AddToGroup { account: body.account, group }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

async fn remove_member(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P((group, account)): P<(String, String)>,
) -> ApiResult {
    auth.require_admin()?;
    let cmd = Command::RemoveFromGroup { account: AccountId::new(account), group };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientBody {
    name: String,
}

async fn register_client(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<ClientBody>) -> ApiResult {
    auth.require_admin()?;
    let (outcome, rid) = s.run(Command::RegisterClient { name: body.name }, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::CREATED, rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslateBody {
    target: TranslationTarget,
    /// Defaults to the caller's own bearer token.
    #[serde(default)]
    token: Option<String>,
}

async fn translate(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    headers: axum::http::HeaderMap,
    Body(body): Body<TranslateBody>,
) -> ApiResult {
    let token = match body.token {
        Some(t) => t,
        None => bearer(&headers).ok_or_else(ApiError::auth_required)?,
    };
    let (outcome, rid) = s.run(Command::Translate { token, target: body.target }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

fn bearer(headers: &axum::http::HeaderMap) -> Option<String> {
    let text = headers.get(axum::http::header::AUTHORIZATION)?.to_str().ok()?;
    text.strip_prefix("Bearer ").or_else(|| text.strip_prefix("bearer ")).map(|t| t.trim().to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RevokeBody {
    token_id: String,
}

async fn revoke(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<RevokeBody>) -> ApiResult {
    if body.token_id != auth.0.token_id {
        auth.require_admin()?;
    }
    let (outcome, rid) = s.run(Command::Revoke { token_id: body.token_id }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

// ---- deployments ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    template: String,
    #[serde(default)]
    inputs: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    scenario: Option<Scenario>,
}

pub fn json_to_value(v: &serde_json::Value) -> Value {
    match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(items) => Value::Seq(items.iter().map(json_to_value).collect()),
        serde_json::Value::Object(map) => Value::Map(map.iter().map(|(k, v)| (k.clone(), json_to_value(v))).collect()),
    }
}

async fn submit(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<SubmitBody>) -> ApiResult {
    let inputs = body.inputs.iter().map(|(k, v)| (k.clone(), json_to_value(v))).collect();
    let cmd = Command::Submit {
        owner: auth.account().clone(),
        groups: auth.0.groups.clone(),
        template: body.template,
        inputs,
        scenario: body.scenario,
    };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    let Outcome::Deployment { deployment_id, state } = outcome else {
        return Err(ApiError::new("INTERNAL", "submit returned no deployment"));
    };
    let (report, failure) = s.read(|p| {
        p.orchestrator()
            .deployment(&deployment_id)
            .map(|d| (serde_json::to_value(&d.report).ok(), d.failure.clone()))
            .unwrap_or((None, None))
    });
    Ok(Reply::with(
        StatusCode::CREATED,
        rid.clone(),
        json!({ "deployment_id": deployment_id, "state": state, "request_id": rid, "report": report, "failure": failure }),
    ))
}

#[derive(Serialize)]
struct DeploymentSummary<'a> {
    deployment_id: &'a DeploymentId,
    owner: &'a AccountId,
    scenario: Scenario,
    state: DeploymentState,
    site: Option<&'a SiteId>,
    created_at: u64,
    failure: Option<&'a miniorc_core::orchestrator::Failure>,
}

fn summary(d: &Deployment) -> DeploymentSummary<'_> {
    DeploymentSummary {
        deployment_id: &d.deployment_id,
        owner: &d.owner,
        scenario: d.scenario,
        state: d.state,
        site: d.placement.as_ref().map(|p| &p.site_id),
        created_at: d.created_at,
        failure: d.failure.as_ref(),
    }
}

#[derive(Deserialize)]
struct DeploymentQuery {
    #[serde(default)]
    state: Option<DeploymentState>,
    #[serde(default)]
    owner: Option<AccountId>,
}

async fn list_deployments(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<DeploymentQuery>) -> ApiResult {
    let admin = auth.0.is_admin();
    let body = s.read(|p| {
        let items: Vec<serde_json::Value> = p
            .orchestrator()
            .deployments()
            .filter(|d| admin || &d.owner == auth.account())
            .filter(|d| q.state.is_none_or(|st| d.state == st))
            .filter(|d| q.owner.as_ref().is_none_or(|o| &d.owner == o))
            .map(|d| serde_json::to_value(summary(d)).unwrap_or_default())
            .collect();
        json!({ "items": items })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

fn owned(p: &Platform, auth: &Auth, id: &DeploymentId) -> Result<(), ApiError> {
    let d = p
        .orchestrator()
        .deployment(id)
        .ok_or_else(|| ApiError::new("UNKNOWN_DEPLOYMENT", format!("unknown deployment {id}")))?;
    auth.may_act_for(&d.owner)
}

async fn get_deployment(axum::extract::State(s): St, auth: Auth, req: ReqId, P(id): P<String>) -> ApiResult {
    let id = DeploymentId::new(id);
    let body = s.read(|p| {
        owned(p, &auth, &id)?;
        Ok::<_, ApiError>(serde_json::to_value(p.orchestrator().deployment(&id)).unwrap_or_default())
    })?;
    Ok(Reply::ok(req.for_read(&s), body))
}

async fn delete_deployment(axum::extract::State(s): St, auth: Auth, req: ReqId, P(id): P<String>) -> ApiResult {
    let id = DeploymentId::new(id);
    s.read(|p| owned(p, &auth, &id))?;
    let (outcome, rid) = s.run(Command::Delete { deployment: id }, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::ACCEPTED, rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleBody {
    replicas: u32,
}

async fn scale_deployment(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(id): P<String>,
    Body(body): Body<ScaleBody>,
) -> ApiResult {
    let id = DeploymentId::new(id);
    s.read(|p| owned(p, &auth, &id))?;
    let (outcome, rid) = s.run(Command::Scale { deployment: id, replicas: body.replicas }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
struct EventQuery {
    #[serde(default)]
    after: u64,
    /// Seconds, capped by the server's poll timeout.
    #[serde(default)]
    timeout: Option<u64>,
}

#[derive(Serialize)]
struct EventPage {
    events: Vec<PlatformEvent>,
    /// Pass back as `after`.
    next: u64,
    keep_alive: bool,
}

async fn wait_events(s: &Shared, after: u64, timeout: Option<u64>, deployment: Option<&DeploymentId>) -> EventPage {
    let cap = s.config().server.poll_timeout;
    let wait = Duration::from_secs(timeout.unwrap_or(cap).min(cap));
    let deadline = tokio::time::Instant::now() + wait;
    let mut rx = s.subscribe();
    loop {
        let (events, last) = s.read(|p| (p.events_since(after, deployment).cloned().collect::<Vec<_>>(), p.last_event_seq()));
        if !events.is_empty() {
            let next = events.last().map_or(after, |e| e.seq);
            return EventPage { events, next, keep_alive: false };
        }
        let next = last.max(after);
        rx.borrow_and_update();
        if tokio::time::timeout_at(deadline, rx.changed()).await.is_err() {
            return EventPage { events: Vec::new(), next, keep_alive: true };
        }
    }
}

async fn deployment_events(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(id): P<String>,
    Q(q): Q<EventQuery>,
) -> ApiResult {
    let id = DeploymentId::new(id);
    s.read(|p| owned(p, &auth, &id))?;
    let rid = req.for_read(&s);
    let page = wait_events(&s, q.after, q.timeout, Some(&id)).await;
    Ok(Reply::ok(rid, page))
}

async fn all_events(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<EventQuery>) -> ApiResult {
    auth.require_admin()?;
    let rid = req.for_read(&s);
    let page = wait_events(&s, q.after, q.timeout, None).await;
    Ok(Reply::ok(rid, page))
}

// ---- sites, monitoring, broker ----

async fn list_sites(axum::extract::State(s): St, _auth: Auth, req: ReqId) -> ApiResult {
    let body = s.read(|p| {
        let items: Vec<serde_json::Value> = p
            .catalog()
            .snapshot(p.now())
            .into_iter()
            .map(|st| {
                let down = p.iaas().site(st.site_id()).is_some_and(|site| site.is_down(p.now()));
                json!({ "site": st, "simulated_free": p.iaas().free(st.site_id()), "down": down })
            })
            .collect();
        json!({ "now": p.now(), "items": items })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteBody {
    descriptor: SiteDescriptor,
    #[serde(default)]
    simulation: SiteSimulation,
}

async fn register_site(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<SiteBody>) -> ApiResult {
    auth.require_admin()?;
    let cmd = Command::RegisterSite { descriptor: body.descriptor, simulation: body.simulation };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::CREATED, rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultBody {
    fault: Fault,
    /// Schedules the fault instead of injecting it now.
    #[serde(default)]
    at: Option<u64>,
}

async fn site_fault(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(id): P<String>,
    Body(body): Body<FaultBody>,
) -> ApiResult {
    auth.require_admin()?;
    let site = SiteId::new(id);
    let cmd = match body.at {
        Some(at) => Command::ScheduleFault { site, fault: ScheduledFault { at, fault: body.fault } },
        None => Command::InjectFault { site, fault: body.fault },
    };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    sample: MonitorSample,
}

pub const SIMULATOR_GROUP: &str = "simulator";

async fn ingest(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<IngestBody>) -> ApiResult {
    if !auth.0.in_group(SIMULATOR_GROUP) {
        auth.require_admin()?;
    }
    let (outcome, rid) = s.run(Command::IngestMetrics { sample: body.sample }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
struct RankQuery {
    user: Option<AccountId>,
    /// Comma-separated site ids holding the required data.
    #[serde(default)]
    data_locality: Option<String>,
}

async fn rank(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<RankQuery>) -> ApiResult {
    let user = q.user.unwrap_or_else(|| auth.account().clone());
    auth.may_act_for(&user)?;
    let request = PlacementRequest {
        data_locality: q
            .data_locality
            .iter()
            .flat_map(|l| l.split(','))
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(SiteId::from)
            .collect::<BTreeSet<_>>(),
    };
    let body = s.read(|p| {
        if p.iam().account(&user).is_none() {
            return Err(ApiError::new("UNKNOWN_ACCOUNT", format!("unknown account {user}")));
        }
        Ok(p.rank_for(&user, &request))
    })?;
    Ok(Reply::ok(req.for_read(&s), body))
}

async fn list_rules(axum::extract::State(s): St, auth: Auth, req: ReqId) -> ApiResult {
    let admin = auth.0.is_admin();
    let body = s.read(|p| {
        let items: Vec<serde_json::Value> = p
            .rules()
            .iter()
            .filter(|(owner, _)| admin || visible_owner(owner, &auth.0))
            .map(|(owner, rules)| json!({ "owner": owner, "text": rules.to_text(), "rules": rules }))
            .collect();
        json!({ "items": items })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

fn visible_owner(owner: &RuleOwner, claims: &Claims) -> bool {
    match owner {
        RuleOwner::Global => true,
        RuleOwner::Group(g) => claims.in_group(g),
        RuleOwner::User(a) => a == &claims.account_id,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesBody {
    /// `global`, `group:<name>` or `user:<account>`; defaults to the caller.
    #[serde(default)]
    owner: Option<String>,
    text: String,
}

async fn put_rules(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<RulesBody>) -> ApiResult {
    let owner = match &body.owner {
        Some(key) => parse_rule_owner(key).map_err(ApiError::bad_request)?,
        None => RuleOwner::User(auth.account().clone()),
    };
    match &owner {
        RuleOwner::User(a) => auth.may_act_for(a)?,
        _ => auth.require_admin()?,
    }
    let (outcome, rid) = s.run(Command::SetRules { owner, text: body.text }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

// ---- slas ----

#[derive(Deserialize)]
struct SlaQuery {
    account: Option<AccountId>,
}

async fn list_slas(axum::extract::State(s): St, auth: Auth, req: ReqId, Q(q): Q<SlaQuery>) -> ApiResult {
    let account = q.account.unwrap_or_else(|| auth.account().clone());
    auth.may_act_for(&account)?;
    let body = s.read(|p| {
        let now = p.now();
        let items: Vec<serde_json::Value> = p
            .slam()
            .records_for(&account)
            .map(|r| json!({ "record": r, "active": r.is_active(now) }))
            .collect();
        json!({ "items": items, "qos": p.slam().qos_of(&account, now) })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlaBody {
    #[serde(default)]
    account: Option<AccountId>,
    site: SiteId,
    class: SlaClass,
    #[serde(default)]
    caps: Option<SlaCaps>,
}

async fn negotiate_sla(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<SlaBody>) -> ApiResult {
    let account = body.account.unwrap_or_else(|| auth.account().clone());
    auth.may_act_for(&account)?;
    let cmd = Command::NegotiateSla { account, site: body.site, class: body.class, caps: body.caps };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::CREATED, rid, outcome_body(outcome)))
}

// ---- data ----

async fn list_datasets(axum::extract::State(s): St, _auth: Auth, req: ReqId) -> ApiResult {
    let body = s.read(|p| {
        let items: Vec<serde_json::Value> = p.data().datasets().map(|d| dataset_view(p, &d.dataset_id)).collect();
        json!({ "items": items })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

fn dataset_view(p: &Platform, id: &DatasetId) -> serde_json::Value {
    let replicas: Vec<serde_json::Value> = p
        .data()
        .replicas()
        .filter(|r| &r.dataset_id == id)
        .map(|r| json!({ "replica": r, "completeness": r.completeness(), "complete": r.is_complete() }))
        .collect();
    json!({ "dataset": p.data().dataset(id), "replicas": replicas })
}

async fn get_dataset(axum::extract::State(s): St, _auth: Auth, req: ReqId, P(id): P<String>) -> ApiResult {
    let id = DatasetId::new(id);
    let body = s.read(|p| {
        p.data()
            .dataset(&id)
            .map(|_| dataset_view(p, &id))
            .ok_or_else(|| ApiError::new("UNKNOWN_DATASET", format!("unknown dataset {id}")))
    })?;
    Ok(Reply::ok(req.for_read(&s), body))
}

async fn add_dataset(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(spec): Body<DatasetSpec>) -> ApiResult {
    auth.may_act_for(&spec.owner)?;
    let (outcome, rid) = s.run(Command::AddDataset { spec }, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::CREATED, rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplicaBody {
    site: SiteId,
    fraction: f64,
    qos: StorageQos,
}

async fn put_replica(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(id): P<String>,
    Body(body): Body<ReplicaBody>,
) -> ApiResult {
    auth.require_admin()?;
    let cmd = Command::PutReplica { dataset: DatasetId::new(id), site: body.site, fraction: body.fraction, qos: body.qos };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QosBody {
    #[serde(default)]
    floor: Option<u32>,
}

async fn enforce_qos(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(id): P<String>,
    Body(body): Body<QosBody>,
) -> ApiResult {
    let dataset = DatasetId::new(id);
    let owner = s
        .read(|p| p.data().dataset(&dataset).map(|d| d.owner.clone()))
        .ok_or_else(|| ApiError::new("UNKNOWN_DATASET", format!("unknown dataset {dataset}")))?;
    auth.may_act_for(&owner)?;
    let (outcome, rid) = s.run(Command::EnforceQos { dataset, floor: body.floor }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

async fn list_transfers(axum::extract::State(s): St, _auth: Auth, req: ReqId) -> ApiResult {
    let body = s.read(|p| json!({ "items": p.data().transfers().collect::<Vec<_>>() }));
    Ok(Reply::ok(req.for_read(&s), body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferBody {
    dataset: DatasetId,
    #[serde(default)]
    src: Option<SiteId>,
    dst: SiteId,
}

async fn schedule_transfer(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<TransferBody>) -> ApiResult {
    let owner = s
        .read(|p| p.data().dataset(&body.dataset).map(|d| d.owner.clone()))
        .ok_or_else(|| ApiError::new("UNKNOWN_DATASET", format!("unknown dataset {}", body.dataset)))?;
    auth.may_act_for(&owner)?;
    let cmd = Command::ScheduleTransfer { dataset: body.dataset, src: body.src, dst: body.dst };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::with(StatusCode::CREATED, rid, outcome_body(outcome)))
}

async fn get_transfer(axum::extract::State(s): St, _auth: Auth, req: ReqId, P(id): P<String>) -> ApiResult {
    let id = TransferId::new(id);
    let body = s.read(|p| {
        p.data()
            .transfer(&id)
            .map(|t| serde_json::to_value(t).unwrap_or_default())
            .ok_or_else(|| ApiError::new("UNKNOWN_TRANSFER", format!("unknown transfer {id}")))
    })?;
    Ok(Reply::ok(req.for_read(&s), body))
}

async fn cancel_transfer(axum::extract::State(s): St, auth: Auth, req: ReqId, P(id): P<String>) -> ApiResult {
    auth.require_admin()?;
    let (outcome, rid) = s.run(Command::CancelTransfer { transfer: TransferId::new(id) }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

#[derive(Deserialize)]
struct NamespaceQuery {
    /// Comma-separated space names; all spaces when absent.
    #[serde(default)]
    space: Option<String>,
}

async fn namespace(axum::extract::State(s): St, _auth: Auth, req: ReqId, Q(q): Q<NamespaceQuery>) -> ApiResult {
    let body = s.read(|p| {
        let spaces: Vec<String> = match &q.space {
            Some(list) => list.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect(),
            None => p.data().datasets().map(|d| d.space.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
        };
        json!({ "spaces": spaces, "entries": p.data().federated_namespace(&spaces) })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

// ---- cluster ----

async fn cluster(axum::extract::State(s): St, _auth: Auth, req: ReqId) -> ApiResult {
    let body = s.read(|p| {
        let c = p.cluster();
        let frameworks: Vec<serde_json::Value> = c
            .frameworks()
            .map(|f| json!({ "framework": f, "dominant_share": c.dominant_share(&f.framework_id) }))
            .collect();
        json!({
            "now": p.now(),
            "total": c.cluster_total(),
            "nodes": c.nodes().collect::<Vec<_>>(),
            "machines": p.machines().collect::<Vec<_>>(),
            "frameworks": frameworks,
            "pending": c.pending_tasks().collect::<Vec<_>>(),
            "services": c.services().collect::<Vec<_>>(),
            "jobs": c.jobs().collect::<Vec<_>>(),
        })
    });
    Ok(Reply::ok(req.for_read(&s), body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KillBody {
    task: TaskId,
}

async fn kill_task(
    axum::extract::State(s): St,
    auth: Auth,
    req: ReqId,
    P(service): P<String>,
    Body(body): Body<KillBody>,
) -> ApiResult {
    auth.require_admin()?;
    let cmd = Command::KillTask { service: ServiceId::new(service), task: body.task };
    let (outcome, rid) = s.run(cmd, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

// ---- clock ----

async fn clock(axum::extract::State(s): St, _auth: Auth, req: ReqId) -> ApiResult {
    let body = json!({ "now": s.read(Platform::now), "mode": s.clock_mode() });
    Ok(Reply::ok(req.for_read(&s), body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    dt: u64,
}

/// Longest single advance, simulated seconds.
pub const MAX_ADVANCE: u64 = 24 * 3600;

async fn advance(axum::extract::State(s): St, auth: Auth, req: ReqId, Body(body): Body<AdvanceBody>) -> ApiResult {
    auth.require_admin()?;
    if s.clock_mode() == ClockMode::Realtime {
        return Err(ApiError::new("ADVANCE_IN_REALTIME", "the clock advances by itself in realtime mode"));
    }
    if body.dt > MAX_ADVANCE {
        return Err(ApiError::bad_request(format!("dt must be at most {MAX_ADVANCE}")));
    }
    let (outcome, rid) = s.run(Command::Advance { dt: body.dt }, &auth.ctx(req))?;
    Ok(Reply::ok(rid, outcome_body(outcome)))
}

fn outcome_body(outcome: Outcome) -> serde_json::Value {
    serde_json::to_value(outcome).unwrap_or_default()
}

fn platform_err(e: miniorc_core::iam::IamError) -> ApiError {
    ApiError::from(miniorc_core::platform::PlatformError::from(e))
}
