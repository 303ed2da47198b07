//! The trainable composite: noise estimator, optional encoder, schedule and
//! the velocity normalisation that maps sketches into diffusion space.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_chain, standard_normal, NoiseModel, SamplerSpec, StepHook};
use crate::error::{Error, Result};
use crate::nn::{
    EstimatorConfig, NoiseEstimator, ParamStore, SequenceEncoder, SequenceEncoderConfig, SetEncoder, SetEncoderConfig,
};
use crate::scalar::Scalar;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::sketch::{quantize_pen, to_point_set, to_velocities, Point, PointSet, Sketch};

/// How the estimator is conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionMode {
    None,
    SequenceEncoder,
    SetEncoder,
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "sequence-encoder" => Ok(Self::SequenceEncoder),
            "set-encoder" => Ok(Self::SetEncoder),
            _ => Err(Error::Config(format!("unknown condition mode '{s}'"))),
        }
    }
}

impl fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::SequenceEncoder => "sequence-encoder",
            Self::SetEncoder => "set-encoder",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ConditionMode,
    pub schedule: ScheduleConfig,
    pub estimator: EstimatorConfig,
    pub latent_dim: usize,
    pub sequence_encoder: SequenceEncoderConfig,
    pub set_encoder: SetEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ConditionMode::None,
            schedule: ScheduleConfig::linear(1000),
            estimator: EstimatorConfig::default(),
            latent_dim: 64,
            sequence_encoder: SequenceEncoderConfig::default(),
            set_encoder: SetEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Copy with every latent width made consistent with `mode`.
    pub fn resolved(&self) -> Self {
        let mut c = *self;
        let z = if c.mode == ConditionMode::None { 0 } else { c.latent_dim };
        c.estimator.latent_dim = z;
        c.sequence_encoder.latent_dim = c.latent_dim;
        c.set_encoder.latent_dim = c.latent_dim;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<F> {
    Sequence(SequenceEncoder<F>),
    Set(SetEncoder<F>),
}

impl<F: Scalar> Encoder<F> {
    pub fn params(&self) -> &ParamStore<F> {
        match self {
            Self::Sequence(e) => e.params(),
            Self::Set(e) => e.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        match self {
            Self::Sequence(e) => e.params_mut(),
            Self::Set(e) => e.params_mut(),
        }
    }
}

/// Estimator plus encoder, schedule and data normalisation.
///
/// Diffusion space divides the xy velocity channels by `velocity_scale`
/// (their standard deviation over the training set); the pen channel keeps
/// its `{-1, +1}` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel<F> {
    config: ModelConfig,
    pub estimator: NoiseEstimator<F>,
    pub encoder: Option<Encoder<F>>,
    schedule: NoiseSchedule,
    velocity_scale: f64,
    train_len: usize,
}

impl<F: Scalar> DiffusionModel<F> {
    pub fn new(config: &ModelConfig, velocity_scale: f64, train_len: usize, seed: u64) -> Result<Self> {
        let config = config.resolved();
        let estimator = NoiseEstimator::new(config.estimator, seed)?;
        let encoder = match config.mode {
            ConditionMode::None => None,
            ConditionMode::SequenceEncoder => {
                Some(Encoder::Sequence(SequenceEncoder::new(config.sequence_encoder, seed.wrapping_add(1))?))
            }
            ConditionMode::SetEncoder => Some(Encoder::Set(SetEncoder::new(config.set_encoder, seed.wrapping_add(1))?)),
        };
        Self::assemble(config, estimator, encoder, velocity_scale, train_len)
    }

    /// Rebuilds a model from stored weights.
    pub fn from_parts(
        config: &ModelConfig,
        estimator: ParamStore<F>,
        encoder: Option<ParamStore<F>>,
        velocity_scale: f64,
        train_len: usize,
    ) -> Result<Self> {
        let config = config.resolved();
        let est = NoiseEstimator::from_params(config.estimator, estimator)?;
        let enc = match (config.mode, encoder) {
            (ConditionMode::None, None) => None,
            (ConditionMode::SequenceEncoder, Some(p)) => {
                Some(Encoder::Sequence(SequenceEncoder::from_params(config.sequence_encoder, p)?))
            }
            (ConditionMode::SetEncoder, Some(p)) => Some(Encoder::Set(SetEncoder::from_params(config.set_encoder, p)?)),
            (mode, _) => return Err(Error::State(format!("encoder weights do not match mode {mode}"))),
        };
        Self::assemble(config, est, enc, velocity_scale, train_len)
    }

    fn assemble(
        config: ModelConfig,
        estimator: NoiseEstimator<F>,
        encoder: Option<Encoder<F>>,
        velocity_scale: f64,
        train_len: usize,
    ) -> Result<Self> {
        if !(velocity_scale.is_finite() && velocity_scale > 0.0) {
            return Err(Error::Config(format!("velocity scale must be positive, got {velocity_scale}")));
        }
        if train_len < 2 {
            return Err(Error::Config(format!("training length must be at least 2, got {train_len}")));
        }
        let schedule = NoiseSchedule::new(config.schedule)?;
        Ok(Self { config, estimator, encoder, schedule, velocity_scale, train_len })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ConditionMode {
        self.config.mode
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Replaces the reverse-variance multiplier; the learned weights are
    /// unaffected.
    pub fn set_sigma_scale(&mut self, k: f64) -> Result<()> {
        self.schedule = self.schedule.with_sigma_scale(k)?;
        self.config.schedule = self.schedule.config();
        Ok(())
    }

    pub fn velocity_scale(&self) -> f64 {
        self.velocity_scale
    }

    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn latent_dim(&self) -> usize {
        self.config.estimator.latent_dim
    }

    pub fn stores(&self) -> Vec<&ParamStore<F>> {
        let mut v = vec![self.estimator.params()];
        if let Some(e) = &self.encoder {
            v.push(e.params());
        }
        v
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParamStore<F>> {
        let mut v = vec![self.estimator.params_mut()];
        if let Some(e) = &mut self.encoder {
            v.push(e.params_mut());
        }
        v
    }

    /// Diffusion-space `(L, 3)` array of a sketch.
    pub fn embed(&self, sketch: &Sketch) -> Array2<F> {
        let v = to_velocities(sketch);
        let k = 1.0 / self.velocity_scale;
        let mut out = Array2::zeros((v.len(), 3));
        for (j, e) in v.elements.iter().enumerate() {
            out[[j, 0]] = F::of(e.vx * k);
            out[[j, 1]] = F::of(e.vy * k);
            out[[j, 2]] = F::of(e.pen);
        }
        out
    }

    /// Padded `(B, L_max, 3)` batch in diffusion space.
    pub fn embed_batch(&self, sketches: &[Sketch]) -> (Array3<F>, Vec<usize>) {
        let lengths: Vec<usize> = sketches.iter().map(Sketch::len).collect();
        let l = lengths.iter().copied().max().unwrap_or(0);
        let mut out = Array3::zeros((sketches.len(), l, 3));
        for (j, sk) in sketches.iter().enumerate() {
            out.slice_mut(s![j, 0..lengths[j], ..]).assign(&self.embed(sk));
        }
        (out, lengths)
    }

    /// Quantizes pen bits, undoes the velocity normalisation, integrates
    /// from the origin and moves the bounding box to start at `(0, 0)`.
    pub fn decode(&self, v: ndarray::ArrayView2<'_, F>) -> Result<Sketch> {
        let (mut x, mut y) = (0.0, 0.0);
        let mut points = Vec::with_capacity(v.nrows());
        for row in v.rows() {
            if !(row[0].is_finite() && row[1].is_finite()) {
                return Err(Error::Data("non-finite velocity in generated sequence".into()));
            }
            points.push(Point::new(x, y, quantize_pen(row[2])?));
            x += row[0].as_f64() * self.velocity_scale;
            y += row[1].as_f64() * self.velocity_scale;
        }
        Ok(Sketch::new(points)?.recentered())
    }

    pub fn decode_batch(&self, v: &Array3<F>, lengths: &[usize]) -> Result<Vec<Sketch>> {
        lengths.iter().enumerate().map(|(j, &n)| self.decode(v.slice(s![j, 0..n, ..]))).collect()
    }

    /// Point set fed to the set encoder for a sketch.
    pub fn perceive(&self, sketch: &Sketch) -> Result<PointSet> {
        to_point_set(sketch, self.config.set_encoder.points.max(sketch.len()))
    }

    /// Latent codes `(B, latent_dim)` for clean sketches.
    pub fn encode(&self, sketches: &[Sketch]) -> Result<Array2<F>> {
        match &self.encoder {
            None => Err(Error::Mode("model has no encoder".into())),
            Some(Encoder::Sequence(e)) => {
                let (v, lengths) = self.embed_batch(sketches);
                e.encode(&v, &lengths)
            }
            Some(Encoder::Set(e)) => {
                let sets = sketches.iter().map(|s| self.perceive(s).map(|p| cast_set(&p))).collect::<Result<Vec<_>>>()?;
                e.encode(&sets)
            }
        }
    }

    /// Latent codes for raw point sets; set-encoder models only.
    pub fn encode_sets(&self, sets: &[PointSet]) -> Result<Array2<F>> {
        match &self.encoder {
            Some(Encoder::Set(e)) => e.encode(&sets.iter().map(cast_set).collect::<Vec<_>>()),
            _ => Err(Error::Mode(format!("point-set encoding needs a set-encoder model, this one is {}", self.mode()))),
        }
    }

    /// Runs the reverse chain from `v` at step `t_start`.
    #[allow(clippy::too_many_arguments)]
    pub fn denoise<R: Rng + ?Sized>(
        &self,
        v: Array3<F>,
        lengths: &[usize],
        t_start: usize,
        sampler: SamplerSpec,
        z: Option<&Array2<F>>,
        rng: &mut R,
        hook: Option<&mut StepHook<'_, F>>,
    ) -> Result<Array3<F>> {
        if sampler.kind == crate::diffusion::SamplerKind::Ddim {
            sampler.validate(&self.schedule)?;
        }
        reverse_chain(&self.estimator, v, lengths, t_start, sampler.kind, sampler.steps, &self.schedule, z, rng, hook)
    }

    /// Draws `n` sketches of length `len` from the full reverse chain.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        len: usize,
        sampler: SamplerSpec,
        z: Option<&Array2<F>>,
        rng: &mut R,
    ) -> Result<Vec<Sketch>> {
        if len < 2 {
            return Err(Error::Contract(format!("sample length must be at least 2, got {len}")));
        }
        sampler.validate(&self.schedule)?;
        let v_t: Array3<F> = standard_normal((n, len, 3), rng);
        self.sample_from(v_t, sampler, z, rng)
    }

    /// Reverse chain from a given `V_T`.
    pub fn sample_from<R: Rng + ?Sized>(
        &self,
        v_t: Array3<F>,
        sampler: SamplerSpec,
        z: Option<&Array2<F>>,
        rng: &mut R,
    ) -> Result<Vec<Sketch>> {
        let lengths = vec![v_t.dim().1; v_t.dim().0];
        let v0 = self.denoise(v_t, &lengths, self.schedule.steps(), sampler, z, rng, None)?;
        self.decode_batch(&v0, &lengths)
    }
}

impl<F: Scalar> NoiseModel<F> for DiffusionModel<F> {
    fn predict_noise(&self, v_t: &Array3<F>, lengths: &[usize], t: usize, z: Option<&Array2<F>>) -> Result<Array3<F>> {
        self.estimator.predict_noise(v_t, lengths, t, z)
    }
}

fn cast_set<F: Scalar>(p: &PointSet) -> PointSet<F> {
    PointSet::new(p.points.iter().map(|&(x, y)| (F::of(x), F::of(y))).collect())
}
