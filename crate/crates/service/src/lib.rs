//! HTTP front end for trained stroke diffusion checkpoints.
//!
//! Every route is a thin wrapper over the library: requests are validated,
//! charged against a per-request network-evaluation budget, and computed on
//! the blocking pool with a generator seeded from the request. Responses
//! echo the seed so a result can be reproduced by resubmitting it.
//!
//! ```text
//! GET    /models
//! POST   /models/{id}/sample       {length, sampler, steps?, seed?, k?}
//! POST   /models/{id}/heal         {sketch, th_frac, seed?}
//! POST   /models/{id}/implicit     {sketch, tc_frac, n, seed?}
//! POST   /models/{id}/mix          {base, reference?, delta?, mode, omega?, steps?, seed?}
//! POST   /models/{id}/vectorize    {points, n, length?, seed?}
//! POST   /models/{id}/reconstruct  {sketch, length_factor, steps?, seed?}
//! POST   /admin/models             {id, path}
//! DELETE /admin/models/{id}
//! ```

mod api;
mod error;
mod registry;

use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{delete, get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ApiResult};
pub use registry::{LoadedModel, ModelSummary, Registry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSource {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Most network evaluations (reverse steps times samples) one request may use.
    pub step_budget: usize,
    pub models: Vec<ModelSource>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), step_budget: 20_000, models: Vec::new() }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub registry: Registry,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(registry: Registry, config: ServiceConfig) -> Self {
        Self { registry, config: Arc::new(config) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/models", get(api::list_models))
        .route("/models/{id}/sample", post(api::sample))
        .route("/models/{id}/heal", post(api::heal))
        .route("/models/{id}/implicit", post(api::implicit))
        .route("/models/{id}/mix", post(api::mix))
        .route("/models/{id}/vectorize", post(api::vectorize))
        .route("/models/{id}/reconstruct", post(api::reconstruct))
        .route("/admin/models", post(api::admin_load))
        .route("/admin/models/{id}", delete(api::admin_unload))
        .with_state(state)
}

/// Binds, starts loading every configured checkpoint in the background and
/// serves until the process is stopped. Models answer 503 until loaded.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let registry = Registry::new();
    for src in &config.models {
        registry.begin_loading(&src.id).map_err(|e| std::io::Error::other(e.message))?;
        let (reg, src) = (registry.clone(), src.clone());
        tokio::task::spawn_blocking(move || match reg.finish_loading(&src.id, &src.path) {
            Ok(()) => log::info!("model '{}' ready", src.id),
            Err(e) => log::error!("model '{}' failed to load: {}", src.id, e.message),
        });
    }
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(registry, config))).await
}
