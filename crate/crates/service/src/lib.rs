//! HTTP API over a [`medledger_core::Ledger`] deployment.
//!
//! All mutations funnel through the ledger's single-writer commit path;
//! reads work on immutable chain snapshots. Sessions come from an ed25519
//! challenge–response login. See `openapi.yaml` for the wire contract.

pub mod api;
pub mod error;
pub mod session;

use std::path::Path;
use std::sync::Arc;

use axum::response::Redirect;
use axum::routing::{get, post};
use axum::Router;
use medledger_core::ledger::{system_clock, Clock};
use medledger_core::{Config, Ledger, LedgerError};
use tower_http::services::{ServeDir, ServeFile};
use tower_http::trace::{DefaultMakeSpan, DefaultOnResponse, TraceLayer};
use tracing::Level;

pub use api::{AppState, STORED_STATUS};
pub use error::ApiError;
pub use session::{login_message, Session, SessionStore};

pub fn router(state: AppState, webui_dir: Option<&Path>) -> Router {
    let mut api = Router::new()
        .route("/api/health", get(api::health))
        .route("/api/challenge", get(api::challenge))
        .route("/api/login", post(api::login))
        .route("/api/logout", post(api::logout))
        .route("/api/me", get(api::me))
        .route("/api/register", post(api::register))
        .route("/api/identities", post(api::create_identity))
        .route("/api/tx", post(api::submit_tx))
        .route("/api/records", post(api::submit_record))
        .route("/api/records/{patient_id}", get(api::get_records))
        .route("/api/grants", post(api::grant))
        .route("/api/revokes", post(api::revoke))
        .route(
            "/api/appointments",
            get(api::list_appointments).post(api::book_appointment),
        )
        .route("/api/providers", get(api::providers))
        .route("/api/chain", get(api::blocks))
        .route("/api/chain/verify", get(api::verify))
        .route("/api/pending", get(api::pending))
        .route("/api/mine", post(api::mine))
        .route("/api/audit/{patient_id}", get(api::audit));
    if state.debug_hooks {
        api = api.route("/api/debug/corrupt", post(api::debug_corrupt));
    }
    if let Some(dir) = webui_dir {
        let index = dir.join("index.html");
        api = api
            .nest_service("/app", ServeDir::new(dir).fallback(ServeFile::new(index)))
            .route("/", get(|| async { Redirect::temporary("/app/") }));
    }
    api.layer(
        TraceLayer::new_for_http()
            .make_span_with(DefaultMakeSpan::new().level(Level::INFO))
            .on_response(DefaultOnResponse::new().level(Level::INFO)),
    )
    .with_state(state)
}

/// Opens the deployment and builds the full app.
pub fn app(config: Config, clock: Clock) -> Result<(Router, Arc<Ledger>), LedgerError> {
    let sessions = Arc::new(SessionStore::new(config.session_ttl_ms, clock.clone()));
    let webui_dir = config.webui_dir.clone();
    let debug_hooks = config.debug_hooks;
    let ledger = Arc::new(Ledger::open_with_clock(config, clock)?);
    let state = AppState {
        ledger: ledger.clone(),
        sessions,
        debug_hooks,
    };
    Ok((router(state, webui_dir.as_deref()), ledger))
}

/// Binds `listen_addr` and serves until ctrl-c.
pub async fn serve(config: Config) -> anyhow::Result<()> {
    let addr = config.listen_addr.clone();
    let (app, ledger) = app(config, system_clock())?;
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        height = ledger.snapshot().tip_header().index,
        "medledger listening"
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
