//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

use super::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probed: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    /// Up to five worst coordinates as `(weight name, flat index, relative error)`.
    pub worst: Vec<(String, usize, f64)>,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        self.passed as f64 / self.probed.max(1) as f64
    }

    /// Fails with the worst coordinates unless `min_fraction` of probes passed.
    pub fn require(&self, min_fraction: f64) -> Result<()> {
        if self.pass_fraction() >= min_fraction {
            return Ok(());
        }
        Err(Error::GradCheck(format!(
            "{}/{} coordinates within tolerance; worst: {:?}",
            self.passed, self.probed, self.worst
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Gradients with both magnitudes below this are compared absolutely.
    pub floor: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-3, floor: 1e-7, probes: 200, seed: 0 }
    }
}

/// Compares backprop gradients of `loss` with central differences on
/// randomly chosen coordinates of `stores`.
///
/// `loss` receives a fresh tape and the bound variables of every store and
/// must be deterministic.
pub fn check_gradients<L>(stores: &[ParamStore<f64>], opts: GradCheckOptions, loss: L) -> Result<GradCheckReport>
where
    L: Fn(&mut Tape<f64>, &[Vec<Var>]) -> Result<Var>,
{
    let eval = |stores: &[ParamStore<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Vec<Var>> = stores.iter().map(|s| s.bind(&mut tape)).collect();
        let root = loss(&mut tape, &vars)?;
        Ok(tape.scalar(root))
    };

    let mut tape = Tape::new();
    let vars: Vec<Vec<Var>> = stores.iter().map(|s| s.bind(&mut tape)).collect();
    let root = loss(&mut tape, &vars)?;
    let mut grads = tape.backward(root);

    let mut coords = Vec::new();
    for (si, store) in stores.iter().enumerate() {
        for (pi, v) in store.values().iter().enumerate() {
            coords.extend((0..v.len()).map(|k| (si, pi, k)));
        }
    }
    if coords.is_empty() {
        return Err(Error::GradCheck("no parameters to probe".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picks: Vec<_> = if coords.len() <= opts.probes {
        coords
    } else {
        (0..opts.probes).map(|_| coords[rng.random_range(0..coords.len())]).collect()
    };

    let analytic: Vec<Vec<_>> = stores
        .iter()
        .zip(&vars)
        .map(|(s, vs)| vs.iter().zip(s.values()).map(|(&v, a)| grads.take_or_zeros(v, a.dim())).collect())
        .collect();

    let mut work = stores.to_vec();
    let mut report = GradCheckReport { probed: picks.len(), passed: 0, max_rel_error: 0.0, worst: Vec::new() };
    let mut errors = Vec::with_capacity(picks.len());
    for (si, pi, k) in picks {
        let orig = work[si].values()[pi].as_slice().expect("standard layout")[k];
        let set = |w: &mut Vec<ParamStore<f64>>, x: f64| {
            w[si].values_mut()[pi].as_slice_mut().expect("standard layout")[k] = x;
        };
        set(&mut work, orig + opts.step);
        let up = eval(&work)?;
        set(&mut work, orig - opts.step);
        let down = eval(&work)?;
        set(&mut work, orig);
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[si][pi].as_slice().expect("standard layout")[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel < opts.tolerance {
            report.passed += 1;
        }
        errors.push((work[si].names()[pi].clone(), k, rel));
    }
    errors.sort_by(|a, b| b.2.total_cmp(&a.2));
    errors.truncate(5);
    report.worst = errors;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::to_time_major;
    use crate::diffusion::standard_normal;
    use crate::nn::{
        position_features, EstimatorConfig, NoiseEstimator, SeqLayout, SequenceEncoder, SequenceEncoderConfig, SetEncoder,
        SetEncoderConfig,
    };
    use ndarray::{Array2, Array3};

    fn opts() -> GradCheckOptions {
        GradCheckOptions { probes: 150, ..Default::default() }
    }

    fn randomize_head(est: &mut NoiseEstimator<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in ["head.w", "head.b"] {
            est.params_mut().get_mut(name).unwrap().mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }

    #[test]
    fn estimator_with_sequence_latent() {
        let mut est = NoiseEstimator::<f64>::new(EstimatorConfig { hidden: 5, layers: 2, time_dim: 4, latent_dim: 3 }, 1).unwrap();
        randomize_head(&mut est);
        let enc = SequenceEncoder::<f64>::new(SequenceEncoderConfig { hidden: 4, latent_dim: 3 }, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Array3<f64> = standard_normal((3, 5, 3), &mut rng);
        let target: Array2<f64> = standard_normal((15, 3), &mut rng);
        let lengths = [5, 3, 4];
        let layout = SeqLayout::new(&lengths, 5);
        let feats = to_time_major(&position_features(&v, &lengths));
        let w = layout.mean_weights::<f64>(3);
        let stores = [est.params().clone(), enc.params().clone()];
        let report = check_gradients(&stores, opts(), |tape, vars| {
            let f = tape.leaf(feats.clone());
            let z = enc.forward(tape, &vars[1], f, &layout);
            let out = est.forward(tape, &vars[0], f, &layout, &[7, 300, 42], Some(z))?;
            Ok(tape.weighted_sq_err(out, target.clone(), w.clone()))
        })
        .unwrap();
        report.require(0.99).unwrap();
    }

    #[test]
    fn set_encoder_through_estimator() {
        let mut est = NoiseEstimator::<f64>::new(EstimatorConfig { hidden: 4, layers: 1, time_dim: 2, latent_dim: 2 }, 4).unwrap();
        randomize_head(&mut est);
        let enc = SetEncoder::<f64>::new(SetEncoderConfig { hidden: 6, blocks: 2, latent_dim: 2, points: 7 }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sets: Vec<Array2<f64>> = (0..2).map(|_| standard_normal((7, 2), &mut rng)).collect();
        let v: Array3<f64> = standard_normal((2, 4, 3), &mut rng);
        let target: Array2<f64> = standard_normal((8, 3), &mut rng);
        let layout = SeqLayout::new(&[4, 4], 4);
        let feats = to_time_major(&position_features(&v, &[4, 4]));
        let w = layout.mean_weights::<f64>(3);
        let stores = [est.params().clone(), enc.params().clone()];
        let report = check_gradients(&stores, opts(), |tape, vars| {
            let z = enc.forward(tape, &vars[1], &sets);
            let f = tape.leaf(feats.clone());
            let out = est.forward(tape, &vars[0], f, &layout, &[10, 20], Some(z))?;
            Ok(tape.weighted_sq_err(out, target.clone(), w.clone()))
        })
        .unwrap();
        report.require(0.99).unwrap();
    }
}
