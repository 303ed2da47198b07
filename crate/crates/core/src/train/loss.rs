use ndarray::{s, Array2, Array3};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::batch::to_time_major;
use crate::diffusion::{forward_diffuse, standard_normal};
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, Encoder};
use crate::nn::{position_features, SeqLayout, SetEncoder};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// A padded diffusion-space batch plus, for set-encoder models, each
/// sample's canonical point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch<F> {
    pub v0: Array3<F>,
    pub lengths: Vec<usize>,
    pub sets: Option<Vec<Array2<F>>>,
}

/// One `(t, eps)` draw per sample. `eps` covers padding too, so the draw
/// depends only on the batch shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<F> {
    pub steps: Vec<usize>,
    pub eps: Array3<F>,
}

pub fn draw_noise<F: Scalar, R: Rng + ?Sized>(shape: (usize, usize), sched: &NoiseSchedule, rng: &mut R) -> NoiseDraw<F> {
    let (b, l) = shape;
    let steps = (0..b).map(|_| rng.random_range(1..=sched.steps())).collect();
    NoiseDraw { steps, eps: standard_normal((b, l, 3), rng) }
}

/// `V_t` for every sample at its own step.
pub fn diffuse_batch<F: Scalar>(v0: &Array3<F>, draw: &NoiseDraw<F>, sched: &NoiseSchedule) -> Result<Array3<F>> {
    let mut v_t = Array3::zeros(v0.raw_dim());
    for (j, &t) in draw.steps.iter().enumerate() {
        let x = forward_diffuse(&v0.slice(s![j, .., ..]).to_owned(), t, &draw.eps.slice(s![j, .., ..]).to_owned(), sched)?;
        v_t.slice_mut(s![j, .., ..]).assign(&x);
    }
    Ok(v_t)
}

/// Mean squared error over valid elements and the three channels, averaged
/// per sample and then over the batch.
pub fn masked_mse<F: Scalar>(pred: &Array3<F>, target: &Array3<F>, lengths: &[usize]) -> F {
    let b = lengths.len();
    let mut total = F::zero();
    for (j, &n) in lengths.iter().enumerate() {
        let d = &pred.slice(s![j, 0..n, ..]) - &target.slice(s![j, 0..n, ..]);
        total += d.mapv(|x| x * x).sum() / F::of((3 * n) as f64);
    }
    total / F::of(b as f64)
}

/// The simple objective with an arbitrary noise predictor, given
/// `(V_t, steps)`. Used to check the objective against stub models.
pub fn loss_simple_with<F, P, R>(predict: P, batch: &TrainBatch<F>, sched: &NoiseSchedule, rng: &mut R) -> Result<F>
where
    F: Scalar,
    P: FnOnce(&Array3<F>, &[usize]) -> Result<Array3<F>>,
    R: Rng + ?Sized,
{
    let (b, l, _) = batch.v0.dim();
    let draw = draw_noise(( b, l), sched, rng);
    let v_t = diffuse_batch(&batch.v0, &draw, sched)?;
    let pred = predict(&v_t, &draw.steps)?;
    Ok(masked_mse(&pred, &draw.eps, &batch.lengths))
}

/// Bound tape variables of a model, estimator first.
pub struct BoundModel {
    pub estimator: Vec<Var>,
    pub encoder: Vec<Var>,
}

impl BoundModel {
    pub fn bind<F: Scalar>(model: &DiffusionModel<F>, tape: &mut Tape<F>) -> Self {
        let estimator = model.estimator.params().bind(tape);
        let encoder = model.encoder.as_ref().map(|e| e.params().bind(tape)).unwrap_or_default();
        Self { estimator, encoder }
    }
}

/// Records the objective for one batch and draw on `tape`.
pub fn loss_on_tape<F: Scalar>(
    model: &DiffusionModel<F>,
    tape: &mut Tape<F>,
    vars: &BoundModel,
    batch: &TrainBatch<F>,
    draw: &NoiseDraw<F>,
) -> Result<Var> {
    let (b, l, _) = batch.v0.dim();
    if batch.lengths.len() != b || draw.eps.dim() != batch.v0.dim() {
        return Err(Error::Contract("batch, lengths and noise draw disagree".into()));
    }
    let layout = SeqLayout::new(&batch.lengths, l);
    let z = match &model.encoder {
        None => None,
        Some(Encoder::Sequence(e)) => {
            let clean = tape.leaf(to_time_major(&position_features(&batch.v0, &batch.lengths)));
            Some(e.forward(tape, &vars.encoder, clean, &layout))
        }
        Some(Encoder::Set(e)) => {
            let sets = batch.sets.as_ref().ok_or_else(|| Error::Contract("set-encoder batch without point sets".into()))?;
            Some(e.forward(tape, &vars.encoder, sets))
        }
    };
    let v_t = diffuse_batch(&batch.v0, draw, model.schedule())?;
    let feats = tape.leaf(to_time_major(&position_features(&v_t, &batch.lengths)));
    let out = model.estimator.forward(tape, &vars.estimator, feats, &layout, &draw.steps, z)?;
    Ok(tape.weighted_sq_err(out, to_time_major(&draw.eps), layout.mean_weights(3)))
}

/// The simple objective for a model: fresh `(t, eps)` per sample, latent
/// from the clean sample when the model is conditional.
pub fn loss_simple<F: Scalar, R: Rng + ?Sized>(model: &DiffusionModel<F>, batch: &TrainBatch<F>, rng: &mut R) -> Result<F> {
    let (b, l, _) = batch.v0.dim();
    let draw = draw_noise((b, l), model.schedule(), rng);
    let mut tape = Tape::new();
    let vars = BoundModel::bind(model, &mut tape);
    let root = loss_on_tape(model, &mut tape, &vars, batch, &draw)?;
    Ok(tape.scalar(root))
}

/// Canonical point matrices for a set-encoder model.
pub fn prepare_sets<F: Scalar>(model: &DiffusionModel<F>, sketches: &[crate::sketch::Sketch]) -> Result<Vec<Array2<F>>> {
    sketches
        .iter()
        .map(|s| {
            let p = model.perceive(s)?;
            SetEncoder::<F>::prepare(&crate::sketch::PointSet::new(
                p.points.iter().map(|&(x, y)| (F::of(x), F::of(y))).collect(),
            ))
        })
        .collect()
}

/// Diffusion-space training batch for `sketches`.
pub fn make_train_batch<F: Scalar>(model: &DiffusionModel<F>, sketches: &[crate::sketch::Sketch]) -> Result<TrainBatch<F>> {
    if sketches.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let (v0, lengths) = model.embed_batch(sketches);
    let sets = match model.encoder {
        Some(Encoder::Set(_)) => Some(prepare_sets(model, sketches)?),
        _ => None,
    };
    Ok(TrainBatch { v0, lengths, sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConditionMode, ModelConfig};
    use crate::nn::{EstimatorConfig, SequenceEncoderConfig, SetEncoderConfig};
    use crate::schedule::ScheduleConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(b: usize, l: usize, seed: u64) -> TrainBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v0: Array3<f64> = standard_normal((b, l, 3), &mut rng);
        let lengths: Vec<usize> = (0..b).map(|j| l - j % (l - 1)).collect();
        for (j, &n) in lengths.iter().enumerate() {
            v0.slice_mut(s![j, n.., ..]).fill(0.0);
        }
        TrainBatch { v0, lengths, sets: None }
    }

    #[test]
    fn oracle_stub_gives_zero_and_zero_stub_gives_one() {
        let sched = NoiseSchedule::linear(100).unwrap();
        let batch = random_batch(6, 5, 1);
        let v0 = batch.v0.clone();
        let oracle = |v_t: &Array3<f64>, steps: &[usize]| {
            let mut eps = Array3::zeros(v_t.raw_dim());
            for (j, &t) in steps.iter().enumerate() {
                let a = sched.alpha(t);
                let e = (&v_t.slice(s![j, .., ..]) - &v0.slice(s![j, .., ..]).mapv(|x| a.sqrt() * x)) / (1.0 - a).sqrt();
                eps.slice_mut(s![j, .., ..]).assign(&e);
            }
            Ok(eps)
        };
        let l = loss_simple_with(oracle, &batch, &sched, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(l < 1e-25, "{l}");

        let big = random_batch(400, 20, 3);
        let zero = |v: &Array3<f64>, _: &[usize]| Ok(Array3::zeros(v.raw_dim()));
        let l = loss_simple_with(zero, &big, &sched, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!((l - 1.0).abs() < 0.05, "{l}");
    }

    fn tiny_model(mode: ConditionMode) -> DiffusionModel<f64> {
        let cfg = ModelConfig {
            mode,
            schedule: ScheduleConfig::linear(50),
            estimator: EstimatorConfig { hidden: 5, layers: 1, time_dim: 4, latent_dim: 0 },
            latent_dim: 3,
            sequence_encoder: SequenceEncoderConfig { hidden: 4, latent_dim: 3 },
            set_encoder: SetEncoderConfig { hidden: 4, blocks: 1, latent_dim: 3, points: 8 },
        };
        DiffusionModel::new(&cfg, 1.0, 6, 7).unwrap()
    }

    #[test]
    fn padding_perturbation_leaves_loss_unchanged() {
        for mode in [ConditionMode::None, ConditionMode::SequenceEncoder] {
            let m = tiny_model(mode);
            let batch = random_batch(4, 6, 5);
            let mut noisy = batch.clone();
            for (j, &n) in batch.lengths.iter().enumerate() {
                noisy.v0.slice_mut(s![j, n.., ..]).fill(77.0);
            }
            let a = loss_simple(&m, &batch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let b = loss_simple(&m, &noisy, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tape_objective_matches_reference() {
        let m = tiny_model(ConditionMode::None);
        let batch = random_batch(3, 6, 11);
        let tape_loss = loss_simple(&m, &batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let predict = |v: &Array3<f64>, steps: &[usize]| m.estimator.predict_steps(v, &batch.lengths, steps, None);
        let reference = loss_simple_with(predict, &batch, m.schedule(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((tape_loss - reference).abs() < 1e-12);
    }
}
