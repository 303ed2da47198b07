//! Forward sequence diffusion and the DDPM / DDIM reverse updates.
//!
//! Every element and every channel (including the analog pen bit) is noised
//! independently with the same scalar schedule, so all step functions here are
//! elementwise and work on arrays of any dimension.

use ndarray::{Array, Array2, Array3, Dimension, ShapeBuilder, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// Standard normal array drawn element by element in logical order.
pub fn standard_normal<F: Scalar, D: Dimension, Sh: ShapeBuilder<Dim = D>, R: Rng + ?Sized>(
    shape: Sh,
    rng: &mut R,
) -> Array<F, D> {
    let mut a = Array::zeros(shape);
    for x in a.iter_mut() {
        *x = F::of(rng.sample::<f64, _>(StandardNormal));
    }
    a
}

fn check_step(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > sched.steps() {
        return Err(Error::Contract(format!("step {t} outside [1, {}]", sched.steps())));
    }
    Ok(())
}

/// `V_t = sqrt(alpha_t) V_0 + sqrt(1 - alpha_t) eps`
pub fn forward_diffuse<F: Scalar, D: Dimension>(
    v0: &Array<F, D>,
    t: usize,
    eps: &Array<F, D>,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    check_step(t, sched)?;
    if v0.shape() != eps.shape() {
        return Err(Error::Contract(format!("noise shape {:?} != data shape {:?}", eps.shape(), v0.shape())));
    }
    let a = sched.alpha(t);
    let (ca, cn) = (F::of(a.sqrt()), F::of((1.0 - a).sqrt()));
    Ok(Zip::from(v0).and(eps).map_collect(|&x, &e| ca * x + cn * e))
}

/// Posterior mean from a noise estimate:
/// `mu = (V_t - beta_t / sqrt(1 - alpha_t) * eps) / sqrt(1 - beta_t)`.
pub fn mean_from_eps<F: Scalar, D: Dimension>(
    v_t: &Array<F, D>,
    t: usize,
    eps_hat: &Array<F, D>,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    check_step(t, sched)?;
    let b = sched.beta(t);
    let ke = F::of(b / (1.0 - sched.alpha(t)).sqrt());
    let kv = F::of(1.0 / (1.0 - b).sqrt());
    Ok(Zip::from(v_t).and(eps_hat).map_collect(|&x, &e| kv * (x - ke * e)))
}

/// Ancestral step `V_{t-1} = mu + sigma_t xi` with `sigma_t^2 = sigma_scale * beta_tilde_t`.
///
/// `xi` is always drawn, even when `sigma_t == 0`, so chains that differ only
/// in `sigma_scale` consume the random stream identically.
pub fn ddpm_step<F: Scalar, D: Dimension, R: Rng + ?Sized>(
    v_t: &Array<F, D>,
    t: usize,
    eps_hat: &Array<F, D>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array<F, D>> {
    let mut mu = mean_from_eps(v_t, t, eps_hat, sched)?;
    let sigma = F::of(sched.sigma(t));
    for x in mu.iter_mut() {
        let xi = F::of(rng.sample::<f64, _>(StandardNormal));
        *x += sigma * xi;
    }
    Ok(mu)
}

/// Deterministic implicit step from `t` to any earlier `t_prev`:
/// `sqrt(a_prev) (V_t - sqrt(1 - a_t) eps) / sqrt(a_t) + sqrt(1 - a_prev) eps`.
pub fn ddim_step<F: Scalar, D: Dimension>(
    v_t: &Array<F, D>,
    t: usize,
    t_prev: usize,
    eps_hat: &Array<F, D>,
    sched: &NoiseSchedule,
) -> Result<Array<F, D>> {
    check_step(t, sched)?;
    if t_prev >= t {
        return Err(Error::Contract(format!("ddim needs t_prev < t, got {t_prev} >= {t}")));
    }
    let (a, ap) = (sched.alpha(t), sched.alpha(t_prev));
    Ok(ddim_update(v_t, eps_hat, a, ap))
}

/// The implicit update for explicit cumulative alphas.
pub fn ddim_update<F: Scalar, D: Dimension>(v_t: &Array<F, D>, eps_hat: &Array<F, D>, alpha_t: f64, alpha_prev: f64) -> Array<F, D> {
    let k0 = F::of(alpha_prev.sqrt() / alpha_t.sqrt());
    let kn = F::of((1.0 - alpha_t).sqrt());
    let kp = F::of((1.0 - alpha_prev).sqrt());
    Zip::from(v_t).and(eps_hat).map_collect(|&x, &e| k0 * (x - kn * e) + kp * e)
}

/// Descending DDIM visit order `T_start = t_k > ... > t_0 = 0` with
/// `t_i = floor(i * T_start / steps)`.
pub fn ddim_timesteps(t_start: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, t_start.max(1));
    (0..=steps).rev().map(|i| i * t_start / steps).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(Error::Config(format!("unknown sampler '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Reverse steps; must equal `T` for DDPM.
    pub steps: usize,
}

impl SamplerSpec {
    pub fn ddpm(sched: &NoiseSchedule) -> Self {
        Self { kind: SamplerKind::Ddpm, steps: sched.steps() }
    }

    pub fn ddim(steps: usize) -> Self {
        Self { kind: SamplerKind::Ddim, steps }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        match self.kind {
            SamplerKind::Ddpm if self.steps != sched.steps() => Err(Error::Config(format!(
                "ddpm sampling runs all {} steps, got steps = {}",
                sched.steps(),
                self.steps
            ))),
            _ if self.steps == 0 || self.steps > sched.steps() => Err(Error::Config(format!(
                "steps must be in [1, {}], got {}",
                sched.steps(),
                self.steps
            ))),
            _ => Ok(()),
        }
    }
}

/// A noise estimator over batches of padded sequences `(B, L, 3)`.
pub trait NoiseModel<F: Scalar> {
    fn predict_noise(&self, v_t: &Array3<F>, lengths: &[usize], t: usize, z: Option<&Array2<F>>) -> Result<Array3<F>>;
}

/// Callback run on every intermediate state `V_{t_prev}`.
pub type StepHook<'a, F> = dyn FnMut(usize, &mut Array3<F>) -> Result<()> + 'a;

/// Runs the reverse chain from `V_{t_start}` down to `V_0`.
///
/// DDPM visits every step; DDIM visits [`ddim_timesteps`] with `steps`
/// capped at `t_start`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_chain<F: Scalar, M: NoiseModel<F> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mut v: Array3<F>,
    lengths: &[usize],
    t_start: usize,
    kind: SamplerKind,
    steps: usize,
    sched: &NoiseSchedule,
    z: Option<&Array2<F>>,
    rng: &mut R,
    mut hook: Option<&mut StepHook<'_, F>>,
) -> Result<Array3<F>> {
    if t_start > sched.steps() {
        return Err(Error::Contract(format!("start step {t_start} beyond T = {}", sched.steps())));
    }
    match kind {
        SamplerKind::Ddpm => {
            for t in (1..=t_start).rev() {
                let eps = model.predict_noise(&v, lengths, t, z)?;
                v = ddpm_step(&v, t, &eps, sched, rng)?;
                if let Some(h) = hook.as_mut() {
                    h(t - 1, &mut v)?;
                }
            }
        }
        SamplerKind::Ddim => {
            if t_start == 0 {
                return Ok(v);
            }
            let ts = ddim_timesteps(t_start, steps);
            for w in ts.windows(2) {
                let eps = model.predict_noise(&v, lengths, w[0], z)?;
                v = ddim_step(&v, w[0], w[1], &eps, sched)?;
                if let Some(h) = hook.as_mut() {
                    h(w[1], &mut v)?;
                }
            }
        }
    }
    Ok(v)
}
