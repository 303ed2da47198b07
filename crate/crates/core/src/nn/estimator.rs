use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::{from_time_major, to_time_major};
use crate::diffusion::NoiseModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::embedding::time_embedding;
use super::params::ParamStore;
use super::recurrent::{position_features, BiGruSpec, SeqLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    /// Width of the conditioning latent; zero for an unconditional model.
    #[serde(default)]
    pub latent_dim: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { hidden: 48, layers: 2, time_dim: 16, latent_dim: 0 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("estimator needs at least one layer of non-zero width".into()));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!("time embedding dimension must be even and positive, got {}", self.time_dim)));
        }
        Ok(())
    }

    fn specs(&self) -> Vec<BiGruSpec> {
        (0..self.layers)
            .map(|l| BiGruSpec {
                input: if l == 0 { 5 } else { 2 * self.hidden },
                cond: self.time_dim + self.latent_dim,
                hidden: self.hidden,
            })
            .collect()
    }
}

/// Bidirectional recurrent noise estimator `eps(V_t, t, z)`.
///
/// Each element sees its velocity, its absolute position, and the step
/// embedding (plus latent) injected into every layer's input projection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimator<F> {
    config: EstimatorConfig,
    params: ParamStore<F>,
}

const HEAD_INIT: f64 = 1e-3;

impl<F: Scalar> NoiseEstimator<F> {
    pub fn new(config: EstimatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (l, spec) in config.specs().iter().enumerate() {
            spec.register(&mut params, &format!("layer{l}"), &mut rng);
        }
        params.push_uniform("head.w", (2 * config.hidden, 3), HEAD_INIT, &mut rng);
        params.push("head.b", Array2::zeros((1, 3)));
        Ok(Self { config, params })
    }

    /// Rebuilds an estimator from stored weights, checking names and shapes.
    pub fn from_params(config: EstimatorConfig, params: ParamStore<F>) -> Result<Self> {
        let params = conform(Self::new(config, 0)?.params(), params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> EstimatorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn is_conditional(&self) -> bool {
        self.config.latent_dim > 0
    }

    /// Records the estimator on `tape`. `feats` is the time-major
    /// `(L*B, 5)` output of [`position_features`]; `steps` holds one
    /// diffusion step per sample.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        feats: Var,
        layout: &SeqLayout,
        steps: &[usize],
        z: Option<Var>,
    ) -> Result<Var> {
        if steps.len() != layout.batch {
            return Err(Error::Contract(format!("{} steps for a batch of {}", steps.len(), layout.batch)));
        }
        let z = self.check_latent(z.map(|v| tape.shape(v)), layout.batch).map(|_| z)?;
        let e = self.config.time_dim;
        let mut temb = Array2::zeros((layout.batch, e));
        for (mut row, &t) in temb.rows_mut().into_iter().zip(steps) {
            row.assign(&time_embedding::<F>(t, e)?);
        }
        let temb = tape.leaf(temb);
        let cond = match z {
            Some(z) => tape.concat_cols(&[temb, z]),
            None => temb,
        };
        let rev = layout.reversal();
        let mut h = feats;
        let mut offset = 0;
        for spec in self.config.specs() {
            let n = spec.param_count();
            h = spec.forward(tape, &vars[offset..offset + n], h, Some(cond), layout, &rev).0;
            offset += n;
        }
        let out = tape.matmul(h, vars[offset]);
        Ok(tape.add_row(out, vars[offset + 1]))
    }

    fn check_latent(&self, z_shape: Option<(usize, usize)>, batch: usize) -> Result<()> {
        match (z_shape, self.is_conditional()) {
            (Some(_), false) => Err(Error::Config("latent supplied to an unconditional estimator".into())),
            (None, true) => Err(Error::Config("conditional estimator requires a latent".into())),
            (Some((b, d)), true) if b != batch || d != self.config.latent_dim => Err(Error::Contract(format!(
                "latent shape ({b}, {d}) does not match ({batch}, {})",
                self.config.latent_dim
            ))),
            _ => Ok(()),
        }
    }

    /// Noise prediction for a padded batch with one step per sample.
    pub fn predict_steps(&self, v_t: &Array3<F>, lengths: &[usize], steps: &[usize], z: Option<&Array2<F>>) -> Result<Array3<F>> {
        let (b, l, c) = v_t.dim();
        if c != 3 {
            return Err(Error::Contract(format!("expected 3 channels, got {c}")));
        }
        if lengths.len() != b || lengths.iter().any(|&n| n == 0 || n > l) {
            return Err(Error::Contract(format!("lengths {lengths:?} inconsistent with batch shape ({b}, {l})")));
        }
        self.check_latent(z.map(|z| z.dim()), b)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let feats = tape.leaf(to_time_major(&position_features(v_t, lengths)));
        let zv = z.map(|z| tape.leaf(z.clone()));
        let layout = SeqLayout::new(lengths, l);
        let out = self.forward(&mut tape, &vars, feats, &layout, steps, zv)?;
        let mut eps = from_time_major(tape.value(out), b);
        for (j, &n) in lengths.iter().enumerate() {
            eps.slice_mut(ndarray::s![j, n.., ..]).fill(F::zero());
        }
        Ok(eps)
    }
}

impl<F: Scalar> NoiseModel<F> for NoiseEstimator<F> {
    fn predict_noise(&self, v_t: &Array3<F>, lengths: &[usize], t: usize, z: Option<&Array2<F>>) -> Result<Array3<F>> {
        self.predict_steps(v_t, lengths, &vec![t; lengths.len()], z)
    }
}

/// Reorders `got` to match `reference`, failing on missing, extra or
/// misshapen weights.
pub(crate) fn conform<F: Scalar>(reference: &ParamStore<F>, got: ParamStore<F>) -> Result<ParamStore<F>> {
    if got.len() != reference.len() {
        return Err(Error::State(format!("{} weights stored, expected {}", got.len(), reference.len())));
    }
    let mut out = ParamStore::new();
    for (name, value) in reference.iter() {
        match got.get(name) {
            None => return Err(Error::State(format!("missing weight '{name}'"))),
            Some(w) if w.dim() != value.dim() => {
                return Err(Error::State(format!("weight '{name}' has shape {:?}, expected {:?}", w.dim(), value.dim())))
            }
            Some(w) => {
                out.push(name, w.clone());
            }
        }
    }
    Ok(out)
}
