//! Downstream uses of a trained model: reconstruction, implicit
//! conditioning and healing, latent and low-pass mixing, controlled
//! abstraction, and vectorization of point sets.

use ndarray::{s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, standard_normal, SamplerSpec};
use crate::error::{Error, Result};
use crate::model::{ConditionMode, DiffusionModel};
use crate::scalar::Scalar;
use crate::sketch::{resample, PointSet, Sketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixMode {
    LatentDdim,
    Ilvr,
}

/// Default low-pass window for mixing.
pub const DEFAULT_OMEGA: usize = 7;

fn require_mode<F: Scalar>(model: &DiffusionModel<F>, mode: ConditionMode, what: &str) -> Result<()> {
    if model.mode() != mode {
        return Err(Error::Mode(format!("{what} needs a {mode} model, this one is {}", model.mode())));
    }
    Ok(())
}

fn repeat_rows<F: Scalar>(z: &Array2<F>, n: usize) -> Array2<F> {
    let row = z.row(0);
    Array2::from_shape_fn((n, z.ncols()), |(_, c)| row[c])
}

/// Re-draws a sketch from its own latent at `round(length_factor * L)` points.
pub fn reconstruct<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    sketch: &Sketch,
    length_factor: f64,
    sampler: SamplerSpec,
    rng: &mut R,
) -> Result<Sketch> {
    Ok(reconstruct_batch(model, std::slice::from_ref(sketch), length_factor, sampler, rng)?.remove(0))
}

/// [`reconstruct`] for many sketches at once.
pub fn reconstruct_batch<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    sketches: &[Sketch],
    length_factor: f64,
    sampler: SamplerSpec,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    require_mode(model, ConditionMode::SequenceEncoder, "reconstruction")?;
    let lengths = reconstruction_lengths(sketches, length_factor)?;
    let l = lengths.iter().copied().max().unwrap_or(0);
    let v_t: Array3<F> = standard_normal((sketches.len(), l, 3), rng);
    reconstruct_from_noise(model, sketches, v_t, &lengths, sampler, rng)
}

/// Output lengths `round(length_factor * L)` for each sketch.
pub fn reconstruction_lengths(sketches: &[Sketch], length_factor: f64) -> Result<Vec<usize>> {
    if !(length_factor >= 1.0 && length_factor.is_finite()) {
        return Err(Error::Config(format!("length factor must be >= 1, got {length_factor}")));
    }
    Ok(sketches.iter().map(|s| (length_factor * s.len() as f64).round() as usize).collect())
}

/// Reconstruction from a caller-supplied padded `V_T`.
pub fn reconstruct_from_noise<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    sketches: &[Sketch],
    v_t: Array3<F>,
    lengths: &[usize],
    sampler: SamplerSpec,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    require_mode(model, ConditionMode::SequenceEncoder, "reconstruction")?;
    sampler.validate(model.schedule())?;
    let z = model.encode(sketches)?;
    let v0 = model.denoise(v_t, lengths, model.schedule().steps(), sampler, Some(&z), rng, None)?;
    model.decode_batch(&v0, lengths)
}

/// Forward-noises each condition to step `t_c` and runs the stochastic
/// reverse chain from there. `t_c == 0` returns the conditions unchanged.
///
/// Conditional models are given the latent of the condition itself.
pub fn implicit_condition_batch<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    conditions: &[Sketch],
    t_c: usize,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    let sched = model.schedule();
    if t_c > sched.steps() {
        return Err(Error::Config(format!("start step {t_c} beyond T = {}", sched.steps())));
    }
    if t_c == 0 {
        return Ok(conditions.to_vec());
    }
    let z = match model.mode() {
        ConditionMode::None => None,
        _ => Some(model.encode(conditions)?),
    };
    let (v0, lengths) = model.embed_batch(conditions);
    let eps: Array3<F> = standard_normal(v0.raw_dim(), rng);
    let v_t = forward_diffuse(&v0, t_c, &eps, sched)?;
    let out = model.denoise(v_t, &lengths, t_c, SamplerSpec::ddpm(sched), z.as_ref(), rng, None)?;
    model.decode_batch(&out, &lengths)
}

pub fn implicit_condition<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    condition: &Sketch,
    t_c: usize,
    rng: &mut R,
) -> Result<Sketch> {
    Ok(implicit_condition_batch(model, std::slice::from_ref(condition), t_c, rng)?.remove(0))
}

/// Projects a corrupted sketch back toward the data manifold; implicit
/// conditioning started at `t_h`.
pub fn heal<F: Scalar, R: Rng + ?Sized>(model: &DiffusionModel<F>, corrupted: &Sketch, t_h: usize, rng: &mut R) -> Result<Sketch> {
    implicit_condition(model, corrupted, t_h, rng)
}

/// Deterministic DDIM decode of `(1 - delta) z1 + delta z2` from the
/// all-zero `V_T` of length `max(|s1|, |s2|)`.
pub fn interpolate_latent<F: Scalar>(
    model: &DiffusionModel<F>,
    s1: &Sketch,
    s2: &Sketch,
    delta: f64,
    steps: usize,
) -> Result<Sketch> {
    Ok(interpolate_path(model, s1, s2, &[delta], steps)?.remove(0))
}

/// Decodes every `delta` along the latent path in one batch.
pub fn interpolate_path<F: Scalar>(
    model: &DiffusionModel<F>,
    s1: &Sketch,
    s2: &Sketch,
    deltas: &[f64],
    steps: usize,
) -> Result<Vec<Sketch>> {
    require_mode(model, ConditionMode::SequenceEncoder, "latent interpolation")?;
    if let Some(d) = deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("delta {d} outside [0, 1]")));
    }
    let z = model.encode(&[s1.clone(), s2.clone()])?;
    let mut zi = Array2::zeros((deltas.len(), z.ncols()));
    for (mut row, &d) in zi.rows_mut().into_iter().zip(deltas) {
        let (a, b) = (F::of(1.0 - d), F::of(d));
        row.assign(&(&z.row(0).mapv(|x| x * a) + &z.row(1).mapv(|x| x * b)));
    }
    let l = s1.len().max(s2.len());
    let v_t = Array3::zeros((deltas.len(), l, 3));
    // DDIM never draws, so the generator is only a placeholder
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    model.sample_from(v_t, SamplerSpec::ddim(steps), Some(&zi), &mut unused)
}

/// Per-coordinate moving average over an odd window `omega` along the
/// first axis, with edge values replicated.
pub fn temporal_lowpass<F: Scalar>(x: &Array2<F>, omega: usize) -> Result<Array2<F>> {
    if omega == 0 || omega % 2 == 0 {
        return Err(Error::Config(format!("low-pass window must be odd and positive, got {omega}")));
    }
    let (l, c) = x.dim();
    if l == 0 {
        return Ok(x.clone());
    }
    let half = (omega / 2) as isize;
    let w = F::of(omega as f64);
    let mut out = Array2::zeros((l, c));
    for j in 0..l as isize {
        for k in -half..=half {
            let src = (j + k).clamp(0, l as isize - 1) as usize;
            for ch in 0..c {
                out[[j as usize, ch]] += x[[src, ch]];
            }
        }
    }
    out.mapv_inplace(|v| v / w);
    Ok(out)
}

/// Positions `P` of length `L + 1` with `P[0] = 0` and `P[j+1] = P[j] + v[j]`.
fn integrate<F: Scalar>(v: ndarray::ArrayView2<'_, F>) -> Array2<F> {
    let mut p = Array2::zeros((v.nrows() + 1, 2));
    for j in 0..v.nrows() {
        for c in 0..2 {
            p[[j + 1, c]] = p[[j, c]] + v[[j, c]];
        }
    }
    p
}

/// `X' - lowpass(X') + lowpass(X_ref)`, applied to the xy velocities of
/// `proposal` through their positions; the pen channel is left alone.
pub fn mix_low_band<F: Scalar>(proposal: &Array2<F>, reference: &Array2<F>, omega: usize) -> Result<Array2<F>> {
    if proposal.dim() != reference.dim() {
        return Err(Error::Contract("mixed sequences must have equal shapes".into()));
    }
    let xp = integrate(proposal.view());
    let xr = integrate(reference.view());
    let mixed = &(&xp - &temporal_lowpass(&xp, omega)?) + &temporal_lowpass(&xr, omega)?;
    let mut out = proposal.clone();
    for j in 0..out.nrows() {
        for c in 0..2 {
            out[[j, c]] = mixed[[j + 1, c]] - mixed[[j, c]];
        }
    }
    Ok(out)
}

/// Low-frequency substitution: the base's latent drives the chain while,
/// after every reverse step, the proposal's low temporal band is swapped
/// for that of the reference noised to the same step with fresh noise.
pub fn ilvr_mix<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    base: &Sketch,
    reference: &Sketch,
    omega: usize,
    rng: &mut R,
) -> Result<Sketch> {
    require_mode(model, ConditionMode::SequenceEncoder, "low-pass mixing")?;
    temporal_lowpass(&Array2::<F>::zeros((1, 2)), omega)?;
    let sched = model.schedule();
    let l = base.len();
    let z = model.encode(std::slice::from_ref(base))?;
    let reference = if reference.len() == l { reference.clone() } else { resample(reference, l)? };
    let v0_ref = model.embed(&reference);
    let mut ref_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut hook = |t_prev: usize, v: &mut Array3<F>| -> Result<()> {
        let r = if t_prev == 0 {
            v0_ref.clone()
        } else {
            let eps: Array2<F> = standard_normal((l, 3), &mut ref_rng);
            forward_diffuse(&v0_ref, t_prev, &eps, sched)?
        };
        let mixed = mix_low_band(&v.index_axis(Axis(0), 0).to_owned(), &r, omega)?;
        v.index_axis_mut(Axis(0), 0).assign(&mixed);
        Ok(())
    };
    let v_t: Array3<F> = standard_normal((1, l, 3), rng);
    let v0 = model.denoise(v_t, &[l], sched.steps(), SamplerSpec::ddpm(sched), Some(&z), rng, Some(&mut hook))?;
    model.decode(v0.slice(s![0, .., ..]))
}

/// Unconditional DDPM sampling with reverse variance `k * beta_tilde`.
pub fn abstract_sample<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    k: f64,
    n: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    let mut m = model.clone();
    m.set_sigma_scale(k)?;
    let z = match m.mode() {
        ConditionMode::None => None,
        mode => return Err(Error::Mode(format!("abstraction samples unconditionally, this model is {mode}"))),
    };
    let sampler = SamplerSpec::ddpm(m.schedule());
    m.sample(n, len, sampler, z, rng)
}

/// `n` stochastic stroke sequences drawn for one point set.
pub fn vectorize<F: Scalar, R: Rng + ?Sized>(
    model: &DiffusionModel<F>,
    points: &PointSet,
    n: usize,
    len: Option<usize>,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    require_mode(model, ConditionMode::SetEncoder, "vectorization")?;
    if points.len() < 2 {
        return Err(Error::Contract(format!("point set needs at least 2 points, got {}", points.len())));
    }
    let z = repeat_rows(&model.encode_sets(std::slice::from_ref(points))?, n);
    let sampler = SamplerSpec::ddpm(model.schedule());
    model.sample(n, len.unwrap_or(model.train_len()), sampler, Some(&z), rng)
}

/// Topology signature: the ordered stroke boundaries of a sketch plus the
/// quantized start of every stroke.
pub fn topology_key(sketch: &Sketch, grid: f64) -> Vec<(i64, i64, usize)> {
    sketch
        .strokes()
        .iter()
        .map(|st| ((st[0].0 / grid).round() as i64, (st[0].1 / grid).round() as i64, st.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::{EstimatorConfig, SequenceEncoderConfig, SetEncoderConfig};
    use crate::schedule::ScheduleConfig;
    use crate::toy::{generate_toy_dataset, ToyKind};
    use proptest::prelude::*;

    fn model(mode: ConditionMode) -> DiffusionModel<f64> {
        let cfg = ModelConfig {
            mode,
            schedule: ScheduleConfig::linear(20),
            estimator: EstimatorConfig { hidden: 6, layers: 1, time_dim: 4, latent_dim: 0 },
            latent_dim: 3,
            sequence_encoder: SequenceEncoderConfig { hidden: 4, latent_dim: 3 },
            set_encoder: SetEncoderConfig { hidden: 4, blocks: 1, latent_dim: 3, points: 16 },
        };
        DiffusionModel::new(&cfg, 0.05, 12, 0).unwrap()
    }

    fn sketches() -> Vec<Sketch> {
        generate_toy_dataset(ToyKind::TwoClass, 10, 12, 0.0, 3).unwrap().train.sketches
    }

    fn direct_convolution(x: &[f64], omega: usize) -> Vec<f64> {
        let h = omega as i64 / 2;
        let n = x.len() as i64;
        (0..n)
            .map(|j| (j - h..=j + h).map(|k| x[k.clamp(0, n - 1) as usize]).sum::<f64>() / omega as f64)
            .collect()
    }

    #[test]
    fn lowpass_examples() {
        let mut x = Array2::zeros((15, 2));
        x[[7, 0]] = 1.0;
        let y = temporal_lowpass(&x, 7).unwrap();
        for j in 0..15 {
            let expect = if (4..=10).contains(&j) { 1.0 / 7.0 } else { 0.0 };
            assert_eq!(y[[j, 0]], expect);
        }
        let c = Array2::from_elem((9, 2), 0.25);
        assert_eq!(temporal_lowpass(&c, 5).unwrap(), c);
        assert_eq!(temporal_lowpass(&x, 1).unwrap(), x);
        assert!(matches!(temporal_lowpass(&x, 4), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn lowpass_matches_direct_convolution(xs in prop::collection::vec(-5.0f64..5.0, 1..40), half in 0usize..6) {
            let omega = 2 * half + 1;
            let x = Array2::from_shape_fn((xs.len(), 2), |(j, c)| if c == 0 { xs[j] } else { -xs[j] });
            let y = temporal_lowpass(&x, omega).unwrap();
            let col: Vec<f64> = xs.clone();
            prop_assert_eq!(y.column(0).to_vec(), direct_convolution(&col, omega));
        }

        #[test]
        fn lowpass_commutes_with_translation(xs in prop::collection::vec(-5.0f64..5.0, 2..30), d in -3.0f64..3.0) {
            let x = Array2::from_shape_fn((xs.len(), 2), |(j, _)| xs[j]);
            let a = temporal_lowpass(&x.mapv(|v| v + d), 5).unwrap();
            let b = temporal_lowpass(&x, 5).unwrap().mapv(|v| v + d);
            prop_assert!((&a - &b).iter().all(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn mixing_with_itself_is_identity() {
        let v: Array2<f64> = standard_normal((10, 3), &mut ChaCha8Rng::seed_from_u64(2));
        let m = mix_low_band(&v, &v, 7).unwrap();
        assert!((&m - &v).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn boundaries_and_modes() {
        let data = sketches();
        let unc = model(ConditionMode::None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(implicit_condition(&unc, &data[0], 0, &mut rng).unwrap(), data[0]);
        assert_eq!(heal(&unc, &data[1], 0, &mut rng).unwrap(), data[1]);
        assert!(matches!(reconstruct(&unc, &data[0], 1.0, SamplerSpec::ddim(5), &mut rng), Err(Error::Mode(_))));
        assert!(matches!(interpolate_latent(&unc, &data[0], &data[1], 0.5, 5), Err(Error::Mode(_))));
        assert!(matches!(ilvr_mix(&unc, &data[0], &data[1], 7, &mut rng), Err(Error::Mode(_))));
        let pts = PointSet::new(data[0].coords());
        assert!(matches!(vectorize(&unc, &pts, 2, None, &mut rng), Err(Error::Mode(_))));
        assert!(matches!(abstract_sample(&unc, 1.5, 1, 8, &mut rng), Err(Error::Config(_))));
        let out = implicit_condition(&unc, &data[0], 20, &mut rng).unwrap();
        assert_eq!(out.len(), data[0].len());
    }

    #[test]
    fn reconstruction_length_and_determinism() {
        let data = sketches();
        let m = model(ConditionMode::SequenceEncoder);
        let a = reconstruct(&m, &data[0], 2.0, SamplerSpec::ddim(5), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = reconstruct(&m, &data[0], 2.0, SamplerSpec::ddim(5), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.len(), 2 * data[0].len());
        assert_eq!(a, b);
        assert!(ilvr_mix(&m, &data[0], &data[1], 3, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn interpolation_endpoints() {
        let data = sketches();
        let m = model(ConditionMode::SequenceEncoder);
        let path = interpolate_path(&m, &data[0], &data[1], &[0.0, 1.0], 5).unwrap();
        let l = data[0].len().max(data[1].len());
        let z = m.encode(&data[..2]).unwrap();
        let zero = Array3::zeros((1, l, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d1 = m.sample_from(zero.clone(), SamplerSpec::ddim(5), Some(&z.slice(s![0..1, ..]).to_owned()), &mut rng).unwrap();
        let d2 = m.sample_from(zero, SamplerSpec::ddim(5), Some(&z.slice(s![1..2, ..]).to_owned()), &mut rng).unwrap();
        assert_eq!(path[0], d1[0]);
        assert_eq!(path[1], d2[0]);
        assert_eq!(interpolate_latent(&m, &data[0], &data[1], 0.0, 5).unwrap(), d1[0]);
    }

    #[test]
    fn abstraction_shares_the_mean_path() {
        let m = model(ConditionMode::None);
        let a = abstract_sample(&m, 0.3, 2, 10, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = abstract_sample(&m, 0.3, 2, 10, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vectorization_ignores_point_order() {
        let data = sketches();
        let m = model(ConditionMode::SetEncoder);
        let pts = PointSet::new(data[2].coords());
        let mut rev = pts.points.clone();
        rev.reverse();
        let z1 = m.encode_sets(&[pts.clone()]).unwrap();
        let z2 = m.encode_sets(&[PointSet::new(rev)]).unwrap();
        assert_eq!(z1, z2);
        let out = vectorize(&m, &pts, 3, Some(9), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|s| s.len() == 9));
    }
}
