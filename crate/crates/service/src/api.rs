use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::Json;
use medledger_core::chain::VerificationReport;
use medledger_core::ledger::{MinedInfo, StoredRecord, Submitted};
use medledger_core::policy::{
    make_appointment, make_grant, make_revoke, AppointmentEntry, AuditEntry, Identity,
};
use medledger_core::vault::Decimal;
use medledger_core::{
    audit_trail, evaluate_access, Access, Action, Chain, ContentAddress, Digest, Ledger,
    PatientRecord, PublicKey, Role, Scope, Signature, Transaction, TxKind,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::session::{Challenge, Session, SessionStore};

/// The banner text the record form shows on success. UI contract: byte-exact.
pub const STORED_STATUS: &str = "Data Successfully stored into Block chain";

#[derive(Clone)]
pub struct AppState {
    pub ledger: Arc<Ledger>,
    pub sessions: Arc<SessionStore>,
    pub debug_hooks: bool,
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs ledger work (mining, disk IO) off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

/// An authenticated caller: the session plus its on-chain identity.
pub struct Caller {
    pub session: Session,
    pub identity: Identity,
}

impl Caller {
    fn is_admin(&self) -> bool {
        self.identity.role == Role::Admin
    }

    fn id(&self) -> &Digest {
        &self.identity.identity_id
    }
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| {
                ApiError::unauthorized("MissingToken", "Authorization: Bearer <token> required")
            })?;
        let session = state.sessions.authenticate(token.trim())?;
        let identity = state
            .ledger
            .snapshot()
            .state()
            .identity(&session.identity_id)
            .cloned()
            .ok_or_else(|| {
                ApiError::unauthorized("UnknownIdentity", "session identity is not on chain")
            })?;
        Ok(Caller { session, identity })
    }
}

fn check_access(
    state: &AppState,
    caller: &Caller,
    patient_id: u64,
    action: Action,
) -> Result<(), ApiError> {
    let snapshot = state.ledger.snapshot();
    match evaluate_access(
        snapshot.state(),
        caller.id(),
        patient_id,
        action,
        state.ledger.now_ms(),
    ) {
        Access::Allow => Ok(()),
        Access::Deny(reason) => Err(ApiError::denied(reason, patient_id)),
    }
}

fn owns_or_admin(state: &AppState, caller: &Caller, patient_id: u64) -> Result<(), ApiError> {
    let snapshot = state.ledger.snapshot();
    if caller.is_admin()
        || snapshot
            .state()
            .owner_of(patient_id)
            .map(|o| &o.identity_id)
            == Some(caller.id())
    {
        Ok(())
    } else {
        Err(ApiError::forbidden(
            "NotOwner",
            format!("caller does not own patient {patient_id}"),
        ))
    }
}

#[derive(Serialize)]
pub struct Health {
    pub ok: bool,
    pub height: u64,
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        ok: true,
        height: state.ledger.snapshot().tip_header().index,
    })
}

#[derive(Deserialize)]
pub struct ChallengeQuery {
    pub username: String,
}

pub async fn challenge(
    State(state): State<AppState>,
    query: Result<Query<ChallengeQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Challenge> {
    let Query(q) = query?;
    if state
        .ledger
        .snapshot()
        .state()
        .identity_by_name(&q.username)
        .is_none()
    {
        return Err(ApiError::not_found(
            "UnknownUser",
            format!("no identity named {:?}", q.username),
        ));
    }
    Ok(Json(state.sessions.challenge(&q.username)))
}

#[derive(Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub signature: Signature,
}

#[derive(Serialize)]
pub struct LoginResponse {
    pub token: String,
    pub identity_id: Digest,
    pub role: Role,
    pub display_name: String,
    pub patient_id: Option<u64>,
    pub expires_at_ms: u64,
}

pub async fn login(
    State(state): State<AppState>,
    body: Result<Json<LoginRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<LoginResponse> {
    let Json(req) = body?;
    let identity = state
        .ledger
        .snapshot()
        .state()
        .identity_by_name(&req.username)
        .cloned()
        .ok_or_else(|| {
            ApiError::not_found(
                "UnknownUser",
                format!("no identity named {:?}", req.username),
            )
        })?;
    let session = state
        .sessions
        .login(&req.username, &identity.public_key, &req.signature)?;
    tracing::info!(identity = %identity.identity_id, "login");
    Ok(Json(LoginResponse {
        expires_at_ms: session.expires_at_ms(),
        token: session.token,
        identity_id: identity.identity_id,
        role: identity.role,
        display_name: identity.display_name,
        patient_id: identity.patient_id,
    }))
}

#[derive(Serialize)]
pub struct Ok_ {
    pub ok: bool,
}

pub async fn logout(State(state): State<AppState>, caller: Caller) -> Json<Ok_> {
    Json(Ok_ {
        ok: state.sessions.logout(&caller.session.token),
    })
}

pub async fn me(caller: Caller) -> Json<Identity> {
    Json(caller.identity)
}

/// Self-registration: the body is a client-signed `IdentityReg` transaction.
pub async fn register(
    State(state): State<AppState>,
    body: Result<Json<Transaction>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(tx) = body?;
    let TxKind::IdentityReg { patient_id, .. } = tx.kind() else {
        return Err(ApiError::bad_request(
            "NotARegistration",
            "expected an IdentityReg transaction",
        ));
    };
    let patient_id = *patient_id;
    blocking(move || {
        let out = state.ledger.submit(tx)?;
        if let Some(p) = patient_id {
            state
                .ledger
                .keystore()
                .get_or_create(p)
                .map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(out)
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
pub struct IdentityRequest {
    pub public_key: PublicKey,
    pub role: Role,
    pub display_name: String,
    #[serde(default)]
    pub patient_id: Option<u64>,
}

/// Admin-signed registration of someone else's key.
pub async fn create_identity(
    State(state): State<AppState>,
    caller: Caller,
    body: Result<Json<IdentityRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(req) = body?;
    if !caller.is_admin() {
        return Err(ApiError::forbidden(
            "NotAdmin",
            "only admins register other identities",
        ));
    }
    blocking(move || {
        Ok(state
            .ledger
            .register(&req.public_key, req.role, &req.display_name, req.patient_id)?)
    })
    .await
    .map(Json)
}

/// Any client-signed transaction. Signature and chain rules are the only gate.
pub async fn submit_tx(
    State(state): State<AppState>,
    body: Result<Json<Transaction>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(tx) = body?;
    blocking(move || Ok(state.ledger.submit(tx)?))
        .await
        .map(Json)
}

/// Accepts a JSON number or a string for the numeric record fields, so both
/// `"temperature": 100` and `"temperature": "100"` work.
#[derive(Deserialize)]
#[serde(untagged)]
pub enum NumberText {
    Number(serde_json::Number),
    Text(String),
}

impl NumberText {
    fn into_decimal(self) -> Result<Decimal, ApiError> {
        let text = match self {
            NumberText::Number(n) => n.to_string(),
            NumberText::Text(s) => s,
        };
        Decimal::new(text).map_err(|e| ApiError::bad_request("InvalidRecord", e.to_string()))
    }
}

#[derive(Deserialize)]
pub struct RecordRequest {
    pub username: String,
    pub age: i64,
    pub temperature: NumberText,
    pub time: NumberText,
    pub patient_id: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl RecordRequest {
    fn into_record(self) -> Result<PatientRecord, ApiError> {
        let age = u32::try_from(self.age).map_err(|_| {
            ApiError::bad_request("InvalidRecord", format!("age {} out of range", self.age))
        })?;
        let record = PatientRecord {
            username: self.username,
            age,
            temperature: self.temperature.into_decimal()?,
            time: self.time.into_decimal()?,
            patient_id: self.patient_id,
            extra: self.extra,
        };
        record.validate()?;
        Ok(record)
    }
}

#[derive(Serialize)]
pub struct RecordReceipt {
    pub status: &'static str,
    pub content_address: ContentAddress,
    pub tx_id: Digest,
    pub mined: Option<MinedInfo>,
}

pub async fn submit_record(
    State(state): State<AppState>,
    caller: Caller,
    body: Result<Json<RecordRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<RecordReceipt> {
    let Json(req) = body?;
    let record = req.into_record()?;
    check_access(&state, &caller, record.patient_id, Action::Write)?;
    let author = caller.identity.identity_id;
    let (content_address, submitted) =
        blocking(move || Ok(state.ledger.submit_record(&record, author)?)).await?;
    tracing::info!(author = %author, address = %content_address.0, "record stored");
    Ok(Json(RecordReceipt {
        status: STORED_STATUS,
        content_address,
        tx_id: submitted.tx_id,
        mined: submitted.mined,
    }))
}

#[derive(Serialize)]
pub struct RecordList {
    pub patient_id: u64,
    pub records: Vec<StoredRecord>,
}

pub async fn get_records(
    State(state): State<AppState>,
    caller: Caller,
    path: Result<Path<u64>, axum::extract::rejection::PathRejection>,
) -> ApiResult<RecordList> {
    let Path(patient_id) = path?;
    check_access(&state, &caller, patient_id, Action::Read)?;
    let records = blocking(move || Ok(state.ledger.read_records(patient_id)?)).await?;
    Ok(Json(RecordList {
        patient_id,
        records,
    }))
}

#[derive(Deserialize)]
pub struct GrantRequest {
    pub patient_id: u64,
    pub grantee_id: Digest,
    pub scope: Scope,
    #[serde(default)]
    pub expires_at_ms: Option<u64>,
}

pub async fn grant(
    State(state): State<AppState>,
    caller: Caller,
    body: Result<Json<GrantRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(req) = body?;
    owns_or_admin(&state, &caller, req.patient_id)?;
    blocking(move || {
        let l = &state.ledger;
        let tx = make_grant(
            l.node_key(),
            req.patient_id,
            req.grantee_id,
            req.scope,
            req.expires_at_ms,
            l.next_issued_ms(),
        );
        Ok(l.submit(tx)?)
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
pub struct RevokeRequest {
    pub patient_id: u64,
    pub grantee_id: Digest,
}

pub async fn revoke(
    State(state): State<AppState>,
    caller: Caller,
    body: Result<Json<RevokeRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(req) = body?;
    owns_or_admin(&state, &caller, req.patient_id)?;
    blocking(move || {
        let l = &state.ledger;
        let tx = make_revoke(
            l.node_key(),
            req.patient_id,
            req.grantee_id,
            l.next_issued_ms(),
        );
        Ok(l.submit(tx)?)
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
pub struct AppointmentRequest {
    pub patient_id: u64,
    pub provider_id: Digest,
    pub slot_ms: u64,
    #[serde(default)]
    pub note: String,
}

pub async fn book_appointment(
    State(state): State<AppState>,
    caller: Caller,
    body: Result<Json<AppointmentRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Submitted> {
    let Json(req) = body?;
    let snapshot = state.ledger.snapshot();
    let participant = caller.is_admin()
        || snapshot
            .state()
            .owner_of(req.patient_id)
            .map(|o| &o.identity_id)
            == Some(caller.id())
        || req.provider_id == *caller.id();
    if !participant {
        return Err(ApiError::forbidden(
            "NotParticipant",
            "caller is neither the patient nor the provider",
        ));
    }
    blocking(move || {
        let l = &state.ledger;
        let tx = make_appointment(
            l.node_key(),
            req.patient_id,
            req.provider_id,
            req.slot_ms,
            &req.note,
            l.next_issued_ms(),
        );
        Ok(l.submit(tx)?)
    })
    .await
    .map(Json)
}

/// Appointments visible to the caller: their own as patient or provider;
/// admins see all.
pub async fn list_appointments(
    State(state): State<AppState>,
    caller: Caller,
) -> Json<Vec<AppointmentEntry>> {
    let snapshot = state.ledger.snapshot();
    let s = snapshot.state();
    let visible = s
        .appointments
        .iter()
        .filter(|a| {
            caller.is_admin()
                || a.provider_id == *caller.id()
                || s.owner_of(a.patient_id).map(|o| &o.identity_id) == Some(caller.id())
        })
        .cloned()
        .collect();
    Json(visible)
}

#[derive(Serialize)]
pub struct ProviderInfo {
    pub identity_id: Digest,
    pub display_name: String,
}

pub async fn providers(State(state): State<AppState>, _caller: Caller) -> Json<Vec<ProviderInfo>> {
    let snapshot = state.ledger.snapshot();
    Json(
        snapshot
            .state()
            .providers()
            .map(|i| ProviderInfo {
                identity_id: i.identity_id,
                display_name: i.display_name.clone(),
            })
            .collect(),
    )
}

/// Verifies the chain log as persisted on disk, not the in-memory copy, so
/// on-disk tampering is visible.
pub async fn verify(
    State(state): State<AppState>,
    _caller: Caller,
) -> ApiResult<VerificationReport> {
    blocking(move || Ok(state.ledger.verify_log()?))
        .await
        .map(Json)
}

#[derive(Serialize)]
pub struct BlockSummary {
    pub index: u64,
    pub digest: Digest,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub timestamp_ms: u64,
    pub difficulty_bits: u8,
    pub nonce: u64,
    pub tx_count: usize,
}

fn summarize(chain: &Chain) -> Vec<BlockSummary> {
    chain
        .blocks()
        .iter()
        .map(|b| BlockSummary {
            index: b.header.index,
            digest: b.digest(),
            prev_hash: b.header.prev_hash,
            tx_root: b.header.tx_root,
            timestamp_ms: b.header.timestamp_ms,
            difficulty_bits: b.header.difficulty_bits,
            nonce: b.header.nonce,
            tx_count: b.transactions.len(),
        })
        .collect()
}

pub async fn blocks(State(state): State<AppState>, _caller: Caller) -> Json<Vec<BlockSummary>> {
    Json(summarize(&state.ledger.snapshot()))
}

#[derive(Serialize)]
pub struct PendingTx {
    pub tx_id: Digest,
    pub kind: &'static str,
    pub summary: String,
}

pub async fn pending(State(state): State<AppState>, _caller: Caller) -> Json<Vec<PendingTx>> {
    Json(
        state
            .ledger
            .pending()
            .iter()
            .map(|tx| PendingTx {
                tx_id: tx.tx_id,
                kind: tx.kind().name(),
                summary: tx.summary(),
            })
            .collect(),
    )
}

pub async fn mine(State(state): State<AppState>, _caller: Caller) -> ApiResult<MinedInfo> {
    blocking(move || Ok(state.ledger.mine()?)).await.map(Json)
}

pub async fn audit(
    State(state): State<AppState>,
    caller: Caller,
    path: Result<Path<u64>, axum::extract::rejection::PathRejection>,
) -> ApiResult<Vec<AuditEntry>> {
    let Path(patient_id) = path?;
    check_access(&state, &caller, patient_id, Action::Read)?;
    Ok(Json(audit_trail(&state.ledger.snapshot(), patient_id)))
}

#[derive(Deserialize)]
pub struct CorruptRequest {
    pub block_index: usize,
}

/// Test hook: flips a byte of a persisted block. Only routed when
/// `debug_hooks` is on.
pub async fn debug_corrupt(
    State(state): State<AppState>,
    _caller: Caller,
    body: Result<Json<CorruptRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Ok_> {
    let Json(req) = body?;
    if !state.debug_hooks {
        return Err(ApiError::not_found("NotFound", "debug hooks disabled"));
    }
    tracing::warn!(
        block = req.block_index,
        "corrupting persisted block (debug hook)"
    );
    blocking(move || {
        state.ledger.corrupt_persisted_block(req.block_index)?;
        Ok(Ok_ { ok: true })
    })
    .await
    .map(Json)
}
