use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use strokediff::model::ConditionMode;
use strokediff::train::load_checkpoint;
use strokediff::{Model, ModelCheckpoint, Real};

use crate::error::{ApiError, ApiResult};

/// A checkpoint that has finished loading. Never mutated after insertion.
#[derive(Debug)]
pub struct LoadedModel {
    pub id: String,
    pub model: Model,
    pub fingerprint: String,
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone)]
enum Entry {
    Loading,
    Ready(Arc<LoadedModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub id: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ConditionMode>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

/// Id-keyed checkpoints. Lookups take a read lock and clone an `Arc`, so
/// requests never hold the lock while computing.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    inner: Arc<RwLock<BTreeMap<String, Entry>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, id: impl Into<String>, ckpt: ModelCheckpoint, source: Option<PathBuf>) -> ApiResult<()> {
        let id = id.into();
        let fingerprint = ckpt.fingerprint()?;
        let loaded = LoadedModel { id: id.clone(), model: ckpt.model, fingerprint, source };
        self.inner.write().expect("registry lock").insert(id, Entry::Ready(Arc::new(loaded)));
        Ok(())
    }

    /// Reserves `id` in the loading state. Fails if the id is taken.
    pub fn begin_loading(&self, id: &str) -> ApiResult<()> {
        let mut map = self.inner.write().expect("registry lock");
        if map.contains_key(id) {
            return Err(ApiError::new(axum::http::StatusCode::CONFLICT, format!("model id '{id}' already in use")));
        }
        map.insert(id.to_string(), Entry::Loading);
        Ok(())
    }

    /// Blocking load of a checkpoint into a slot reserved by `begin_loading`.
    /// A failed load frees the slot again.
    pub fn finish_loading(&self, id: &str, path: &Path) -> ApiResult<()> {
        match load_checkpoint::<Real>(path) {
            Ok(ckpt) => self.insert(id, ckpt, Some(path.to_path_buf())),
            Err(e) => {
                self.inner.write().expect("registry lock").remove(id);
                Err(e.into())
            }
        }
    }

    pub fn load_file(&self, id: &str, path: &Path) -> ApiResult<()> {
        self.begin_loading(id)?;
        self.finish_loading(id, path)
    }

    pub fn remove(&self, id: &str) -> ApiResult<()> {
        match self.inner.write().expect("registry lock").remove(id) {
            Some(_) => Ok(()),
            None => Err(ApiError::not_found(id)),
        }
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<LoadedModel>> {
        match self.inner.read().expect("registry lock").get(id) {
            Some(Entry::Ready(m)) => Ok(Arc::clone(m)),
            Some(Entry::Loading) => Err(ApiError::loading(id)),
            None => Err(ApiError::not_found(id)),
        }
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.inner
            .read()
            .expect("registry lock")
            .iter()
            .map(|(id, e)| match e {
                Entry::Loading => ModelSummary {
                    id: id.clone(),
                    status: "loading",
                    mode: None,
                    steps: None,
                    latent_dim: None,
                    fingerprint: None,
                },
                Entry::Ready(m) => ModelSummary {
                    id: id.clone(),
                    status: "ready",
                    mode: Some(m.model.mode()),
                    steps: Some(m.model.schedule().steps()),
                    latent_dim: Some(m.model.latent_dim()),
                    fingerprint: Some(m.fingerprint.clone()),
                },
            })
            .collect()
    }
}
