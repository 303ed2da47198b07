use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::to_time_major;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketch::PointSet;

use super::estimator::conform;
use super::params::ParamStore;
use super::recurrent::{position_features, BiGruSpec, SeqLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEncoderConfig {
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Default for SequenceEncoderConfig {
    fn default() -> Self {
        Self { hidden: 48, latent_dim: 64 }
    }
}

/// Bidirectional recurrent encoder of clean velocity sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder<F> {
    config: SequenceEncoderConfig,
    params: ParamStore<F>,
}

impl<F: Scalar> SequenceEncoder<F> {
    fn spec(config: &SequenceEncoderConfig) -> BiGruSpec {
        BiGruSpec { input: 5, cond: 0, hidden: config.hidden }
    }

    pub fn new(config: SequenceEncoderConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.latent_dim == 0 {
            return Err(Error::Config("sequence encoder widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        Self::spec(&config).register(&mut params, "gru", &mut rng);
        let k = 1.0 / ((2 * config.hidden) as f64).sqrt();
        params.push_uniform("proj.w", (2 * config.hidden, config.latent_dim), k, &mut rng);
        params.push("proj.b", Array2::zeros((1, config.latent_dim)));
        Ok(Self { config, params })
    }

    pub fn from_params(config: SequenceEncoderConfig, params: ParamStore<F>) -> Result<Self> {
        let params = conform(Self::new(config, 0)?.params(), params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> SequenceEncoderConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// `feats` is the time-major `(L*B, 5)` position-augmented batch.
    pub fn forward(&self, tape: &mut Tape<F>, vars: &[Var], feats: Var, layout: &SeqLayout) -> Var {
        let spec = Self::spec(&self.config);
        let n = spec.param_count();
        let (_, finals) = spec.forward(tape, &vars[..n], feats, None, layout, &layout.reversal());
        let z = tape.matmul(finals, vars[n]);
        tape.add_row(z, vars[n + 1])
    }

    /// Latents `(B, latent_dim)` for a padded velocity batch.
    pub fn encode(&self, v: &Array3<F>, lengths: &[usize]) -> Result<Array2<F>> {
        let (b, l, c) = v.dim();
        if c != 3 || lengths.len() != b || lengths.iter().any(|&n| n < 2 || n > l) {
            return Err(Error::Contract(format!("batch ({b}, {l}, {c}) inconsistent with lengths {lengths:?}")));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let feats = tape.leaf(to_time_major(&position_features(v, lengths)));
        let z = self.forward(&mut tape, &vars, feats, &SeqLayout::new(lengths, l));
        Ok(tape.value(z).clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetEncoderConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub latent_dim: usize,
    /// Number of points sampled along each sketch before encoding.
    pub points: usize,
}

impl Default for SetEncoderConfig {
    fn default() -> Self {
        Self { hidden: 128, blocks: 2, latent_dim: 64, points: 64 }
    }
}

/// Permutation-invariant encoder of 2D point sets: a pointwise MLP,
/// single-head self-attention blocks with residual feed-forward layers,
/// then a max-pool and a linear projection.
///
/// Inputs are sorted lexicographically first, so the output is identical
/// for every ordering of the same set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEncoder<F> {
    config: SetEncoderConfig,
    params: ParamStore<F>,
}

impl<F: Scalar> SetEncoder<F> {
    pub fn new(config: SetEncoderConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.latent_dim == 0 || config.points == 0 {
            return Err(Error::Config("set encoder widths must be positive".into()));
        }
        let h = config.hidden;
        let k = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.push_uniform("embed.w1", (2, h), 1.0 / 2f64.sqrt(), &mut rng);
        p.push("embed.b1", Array2::zeros((1, h)));
        p.push_uniform("embed.w2", (h, h), k, &mut rng);
        p.push("embed.b2", Array2::zeros((1, h)));
        for i in 0..config.blocks {
            for m in ["wq", "wk", "wv", "wo", "ff1"] {
                p.push_uniform(format!("block{i}.{m}"), (h, h), k, &mut rng);
            }
            p.push(format!("block{i}.bf1"), Array2::zeros((1, h)));
            p.push_uniform(format!("block{i}.ff2"), (h, h), k, &mut rng);
            p.push(format!("block{i}.bf2"), Array2::zeros((1, h)));
        }
        p.push_uniform("proj.w", (h, config.latent_dim), k, &mut rng);
        p.push("proj.b", Array2::zeros((1, config.latent_dim)));
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: SetEncoderConfig, params: ParamStore<F>) -> Result<Self> {
        let params = conform(Self::new(config, 0)?.params(), params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> SetEncoderConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Canonical `(n, 2)` matrix for a point set.
    pub fn prepare(set: &PointSet<F>) -> Result<Array2<F>> {
        if set.points.is_empty() {
            return Err(Error::Contract("empty point set".into()));
        }
        let c = set.canonical();
        Ok(Array2::from_shape_fn((c.len(), 2), |(i, j)| if j == 0 { c[i].0 } else { c[i].1 }))
    }

    /// Records the encoder for a batch of prepared sets; returns `(B, latent_dim)`.
    pub fn forward(&self, tape: &mut Tape<F>, vars: &[Var], sets: &[Array2<F>]) -> Var {
        let scale = F::of(1.0 / (self.config.hidden as f64).sqrt());
        let mut pooled = Vec::with_capacity(sets.len());
        for set in sets {
            let x = tape.leaf(set.clone());
            let a = tape.matmul(x, vars[0]);
            let a = tape.add_row(a, vars[1]);
            let a = tape.relu(a);
            let a = tape.matmul(a, vars[2]);
            let mut h = tape.add_row(a, vars[3]);
            for i in 0..self.config.blocks {
                let w = &vars[4 + 8 * i..4 + 8 * (i + 1)];
                let q = tape.matmul(h, w[0]);
                let k = tape.matmul(h, w[1]);
                let v = tape.matmul(h, w[2]);
                let logits = tape.matmul_t(q, k);
                let logits = tape.scale(logits, scale);
                let attn = tape.softmax_rows(logits);
                let mixed = tape.matmul(attn, v);
                let mixed = tape.matmul(mixed, w[3]);
                h = tape.add(h, mixed);
                let f = tape.matmul(h, w[4]);
                let f = tape.add_row(f, w[5]);
                let f = tape.relu(f);
                let f = tape.matmul(f, w[6]);
                let f = tape.add_row(f, w[7]);
                h = tape.add(h, f);
            }
            pooled.push(tape.max_rows(h));
        }
        let n = vars.len();
        let pooled = tape.stack_rows(&pooled);
        let z = tape.matmul(pooled, vars[n - 2]);
        tape.add_row(z, vars[n - 1])
    }

    pub fn encode(&self, sets: &[PointSet<F>]) -> Result<Array2<F>> {
        let prepared = sets.iter().map(Self::prepare).collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let z = self.forward(&mut tape, &vars, &prepared);
        Ok(tape.value(z).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_set_encoder() -> SetEncoder<f64> {
        SetEncoder::new(SetEncoderConfig { hidden: 8, blocks: 2, latent_dim: 3, points: 10 }, 1).unwrap()
    }

    #[test]
    fn sequence_encoder_shape() {
        let enc = SequenceEncoder::<f64>::new(SequenceEncoderConfig { hidden: 5, latent_dim: 4 }, 0).unwrap();
        let v: Array3<f64> = crate::diffusion::standard_normal((3, 6, 3), &mut ChaCha8Rng::seed_from_u64(2));
        let z = enc.encode(&v, &[6, 3, 4]).unwrap();
        assert_eq!(z.dim(), (3, 4));
        assert!(enc.encode(&v, &[6, 7, 4]).is_err());
    }

    #[test]
    fn empty_set_rejected() {
        let enc = small_set_encoder();
        assert!(enc.encode(&[PointSet { points: vec![] }]).is_err());
    }

    #[test]
    fn duplicate_point_is_idempotent_under_pooling() {
        let enc = SetEncoder::<f64>::new(SetEncoderConfig { hidden: 8, blocks: 0, latent_dim: 3, points: 4 }, 2).unwrap();
        let pts = vec![(0.1, 0.2), (0.7, 0.3), (0.4, 0.9)];
        let mut dup = pts.clone();
        dup.push(pts[1]);
        let a = enc.encode(&[PointSet { points: pts }]).unwrap();
        let b = enc.encode(&[PointSet { points: dup }]).unwrap();
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn set_encoder_ignores_order(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let enc = small_set_encoder();
            let a = PointSet { points: pts.clone() };
            let mut shuffled = a.points.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = PointSet { points: shuffled };
            prop_assert_eq!(enc.encode(&[a]).unwrap(), enc.encode(&[b]).unwrap());
        }
    }
}
