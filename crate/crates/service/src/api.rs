use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use strokediff::apps::{self, MixMode, DEFAULT_OMEGA};
use strokediff::diffusion::{SamplerKind, SamplerSpec};
use strokediff::io::{sketch_from_json, sketch_to_json};
use strokediff::model::ConditionMode;
use strokediff::render::topology_index;
use strokediff::sketch::{PointSet, Sketch};

use crate::error::{ApiError, ApiResult};
use crate::registry::LoadedModel;
use crate::AppState;

const MAX_LENGTH: usize = 4096;
const MAX_BATCH: usize = 256;
const DEFAULT_DDIM_STEPS: usize = 50;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn sketch_in(v: &Value) -> ApiResult<Sketch> {
    let s = sketch_from_json(v)?;
    if s.arc_length() == 0.0 {
        return Err(ApiError::degenerate("sketch has zero arc length"));
    }
    Ok(s)
}

fn sketches_out(sketches: &[Sketch]) -> Value {
    Value::Array(sketches.iter().map(sketch_to_json).collect())
}

fn seed_or_draw(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn step_of(frac: f64, steps: usize, name: &str) -> ApiResult<usize> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(ApiError::bad_request(format!("{name} must lie in [0, 1], got {frac}")));
    }
    Ok((frac * steps as f64).round() as usize)
}

fn check_count(n: usize, name: &str, max: usize) -> ApiResult<()> {
    if n == 0 || n > max {
        return Err(ApiError::bad_request(format!("{name} must be in 1..={max}, got {n}")));
    }
    Ok(())
}

fn charge(state: &AppState, evals: usize) -> ApiResult<()> {
    if evals > state.config.step_budget {
        return Err(ApiError::bad_request(format!(
            "request needs {evals} network evaluations, budget is {}; use fewer DDIM steps or samples",
            state.config.step_budget
        )));
    }
    Ok(())
}

async fn compute<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn ddim_steps(m: &LoadedModel, steps: Option<usize>) -> usize {
    steps.unwrap_or(DEFAULT_DDIM_STEPS).clamp(1, m.model.schedule().steps())
}

pub async fn list_models(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.registry.summaries()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub length: usize,
    pub sampler: SamplerKind,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<f64>,
}

pub async fn sample(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: SampleRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    if m.model.mode() != ConditionMode::None {
        return Err(ApiError::bad_request(format!("sampling needs an unconditional model, '{id}' is {}", m.model.mode())));
    }
    if !(2..=MAX_LENGTH).contains(&req.length) {
        return Err(ApiError::bad_request(format!("length must be in 2..={MAX_LENGTH}")));
    }
    let sampler = match req.sampler {
        SamplerKind::Ddpm => SamplerSpec::ddpm(m.model.schedule()),
        SamplerKind::Ddim => SamplerSpec::ddim(ddim_steps(&m, req.steps)),
    };
    if req.k.is_some() && req.sampler != SamplerKind::Ddpm {
        return Err(ApiError::bad_request("k scales the stochastic reverse variance and needs the ddpm sampler"));
    }
    charge(&state, sampler.steps)?;
    let seed = seed_or_draw(req.seed);
    let sketch = compute(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = match req.k {
            Some(k) => apps::abstract_sample(&m.model, k, 1, req.length, &mut rng)?,
            None => m.model.sample(1, req.length, sampler, None, &mut rng)?,
        };
        Ok(out.into_iter().next().expect("one sample"))
    })
    .await?;
    Ok(Json(json!({ "sketch": sketch_to_json(&sketch), "topology": topology_index(&sketch), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealRequest {
    pub sketch: Value,
    pub th_frac: f64,
    pub seed: Option<u64>,
}

pub async fn heal(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: HealRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    let sketch = sketch_in(&req.sketch)?;
    let t_h = step_of(req.th_frac, m.model.schedule().steps(), "th_frac")?;
    charge(&state, t_h)?;
    let seed = seed_or_draw(req.seed);
    let out = compute(move || Ok(apps::heal(&m.model, &sketch, t_h, &mut ChaCha8Rng::seed_from_u64(seed))?)).await?;
    Ok(Json(json!({ "sketch": sketch_to_json(&out), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplicitRequest {
    pub sketch: Value,
    pub tc_frac: f64,
    pub seed: Option<u64>,
    pub n: usize,
}

pub async fn implicit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ImplicitRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    let sketch = sketch_in(&req.sketch)?;
    check_count(req.n, "n", MAX_BATCH)?;
    let t_c = step_of(req.tc_frac, m.model.schedule().steps(), "tc_frac")?;
    charge(&state, t_c * req.n)?;
    let seed = seed_or_draw(req.seed);
    let out = compute(move || {
        let conds = vec![sketch; req.n];
        Ok(apps::implicit_condition_batch(&m.model, &conds, t_c, &mut ChaCha8Rng::seed_from_u64(seed))?)
    })
    .await?;
    Ok(Json(json!({ "sketches": sketches_out(&out), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRequest {
    pub base: Value,
    pub reference: Option<Value>,
    pub delta: Option<f64>,
    pub mode: MixMode,
    pub omega: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

pub async fn mix(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: MixRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    let base = sketch_in(&req.base)?;
    let reference = req.reference.as_ref().map(sketch_in).transpose()?;
    let seed = seed_or_draw(req.seed);
    let out = match req.mode {
        MixMode::LatentDdim => {
            if req.omega.is_some() {
                return Err(ApiError::bad_request("omega applies to ilvr mixing only"));
            }
            let steps = ddim_steps(&m, req.steps);
            charge(&state, steps)?;
            let delta = req.delta.unwrap_or(0.0);
            compute(move || {
                let other = reference.unwrap_or_else(|| base.clone());
                Ok(apps::interpolate_latent(&m.model, &base, &other, delta, steps)?)
            })
            .await?
        }
        MixMode::Ilvr => {
            let reference = reference.ok_or_else(|| ApiError::bad_request("ilvr mixing needs a reference sketch"))?;
            if req.delta.is_some() || req.steps.is_some() {
                return Err(ApiError::bad_request("delta and steps apply to latent-ddim mixing only"));
            }
            charge(&state, m.model.schedule().steps())?;
            let omega = req.omega.unwrap_or(DEFAULT_OMEGA);
            compute(move || {
                Ok(apps::ilvr_mix(&m.model, &base, &reference, omega, &mut ChaCha8Rng::seed_from_u64(seed))?)
            })
            .await?
        }
    };
    Ok(Json(json!({ "sketch": sketch_to_json(&out), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorizeRequest {
    pub points: Vec<[f64; 2]>,
    pub n: usize,
    pub length: Option<usize>,
    pub seed: Option<u64>,
}

pub async fn vectorize(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: VectorizeRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    if m.model.mode() != ConditionMode::SetEncoder {
        return Err(ApiError::bad_request(format!("vectorization needs a set-encoder model, '{id}' is {}", m.model.mode())));
    }
    check_count(req.n, "n", MAX_BATCH)?;
    if let Some(l) = req.length {
        if !(2..=MAX_LENGTH).contains(&l) {
            return Err(ApiError::bad_request(format!("length must be in 2..={MAX_LENGTH}")));
        }
    }
    if req.points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ApiError::bad_request("points must be finite"));
    }
    charge(&state, m.model.schedule().steps() * req.n)?;
    let seed = seed_or_draw(req.seed);
    let out = compute(move || {
        let set = PointSet::new(req.points.iter().map(|p| (p[0], p[1])).collect());
        Ok(apps::vectorize(&m.model, &set, req.n, req.length, &mut ChaCha8Rng::seed_from_u64(seed))?)
    })
    .await?;
    Ok(Json(json!({ "sketches": sketches_out(&out), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructRequest {
    pub sketch: Value,
    pub length_factor: f64,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

pub async fn reconstruct(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ReconstructRequest = parse(&body)?;
    let m = state.registry.get(&id)?;
    let sketch = sketch_in(&req.sketch)?;
    if !(req.length_factor >= 1.0) || req.length_factor * sketch.len() as f64 > MAX_LENGTH as f64 {
        return Err(ApiError::bad_request("length_factor must be at least 1 and keep the output within the length cap"));
    }
    let steps = ddim_steps(&m, req.steps);
    charge(&state, steps)?;
    let seed = seed_or_draw(req.seed);
    let out = compute(move || {
        let sampler = SamplerSpec::ddim(steps);
        Ok(apps::reconstruct(&m.model, &sketch, req.length_factor, sampler, &mut ChaCha8Rng::seed_from_u64(seed))?)
    })
    .await?;
    Ok(Json(json!({ "sketch": sketch_to_json(&out), "seed": seed })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRequest {
    pub id: String,
    pub path: std::path::PathBuf,
}

pub async fn admin_load(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: LoadRequest = parse(&body)?;
    if req.id.is_empty() || req.id.contains('/') {
        return Err(ApiError::bad_request("model id must be non-empty and contain no '/'"));
    }
    state.registry.begin_loading(&req.id)?;
    let registry = state.registry.clone();
    let id = req.id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = registry.finish_loading(&id, &req.path) {
            log::error!("loading '{id}' from {} failed: {}", req.path.display(), e.message);
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": req.id, "status": "loading" }))))
}

pub async fn admin_unload(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.registry.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}
