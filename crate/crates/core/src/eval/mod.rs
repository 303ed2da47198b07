//! Desk-scale quantitative harness.

mod classifier;
mod frechet;

pub use classifier::{train_toy_classifier, ClassifierConfig, ToyClassifier};
pub use frechet::{frechet_distance, Frechet, MIN_ITEMS};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apps::{implicit_condition_batch, reconstruct_batch};
use crate::diffusion::{standard_normal, SamplerSpec};
use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::scalar::Scalar;
use crate::sketch::{chamfer_distance, to_point_set, Point, Sketch, PEN_DOWN, PEN_UP};

/// Points both sketches are densified to before a Chamfer comparison.
pub const DEFAULT_DENSIFY: usize = 128;

/// Chamfer distance between two sketches after equispaced densification,
/// so sketches of different lengths are compared at equal density.
pub fn sketch_cd(a: &Sketch, b: &Sketch, densify: usize) -> Result<f64> {
    let pa = to_point_set(a, densify.max(a.len()))?;
    let pb = to_point_set(b, densify.max(b.len()))?;
    chamfer_distance(&pa, &pb)
}

/// Order-independent mean: values are sorted before summation.
pub fn stable_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// FNV-1a hash of a sketch's coordinates and pen states.
pub fn item_key(sketch: &Sketch) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in sketch.points() {
        for word in [p.x.to_bits(), p.y.to_bits(), p.pen as u64] {
            h ^= word;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdRow {
    pub factor: f64,
    pub mean_cd: f64,
}

/// Mean Chamfer distance between each test sketch and its reconstruction
/// at every length factor. Initial noise and any per-step noise come from
/// per-item generators, so the table does not depend on test-set order.
pub fn cd_vs_rate_curve<F: Scalar>(
    model: &DiffusionModel<F>,
    test: &[Sketch],
    factors: &[f64],
    sampler: SamplerSpec,
    seed: u64,
) -> Result<Vec<CdRow>> {
    if test.is_empty() {
        return Err(Error::Metric("empty test set".into()));
    }
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&i| item_key(&test[i]));
    let canonical: Vec<Sketch> = order.iter().map(|&i| test[i].clone()).collect();
    factors
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let recon = reconstruct_batch(model, &canonical, f, sampler, &mut rng)?;
            Ok(CdRow { factor: f, mean_cd: mean_paired_cd(&canonical, &recon)? })
        })
        .collect()
}

/// Mean pairwise Chamfer distance between aligned collections.
pub fn mean_paired_cd(a: &[Sketch], b: &[Sketch]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Metric("paired collections must be non-empty and equally long".into()));
    }
    let cds = a.iter().zip(b).map(|(x, y)| sketch_cd(x, y, DEFAULT_DENSIFY)).collect::<Result<Vec<_>>>()?;
    Ok(stable_mean(cds))
}

/// Fraction of implicit-conditioning outputs that the classifier assigns
/// to the condition's class; `n_per_item` draws per test item.
pub fn class_consistency<F: Scalar>(
    model: &DiffusionModel<F>,
    classifier: &ToyClassifier,
    items: &[Sketch],
    labels: &[usize],
    t_c: usize,
    n_per_item: usize,
    seed: u64,
) -> Result<f64> {
    if items.len() != labels.len() || items.is_empty() || n_per_item == 0 {
        return Err(Error::Metric("need labelled items and at least one draw per item".into()));
    }
    let conds: Vec<Sketch> = items.iter().flat_map(|s| std::iter::repeat_n(s.clone(), n_per_item)).collect();
    let want: Vec<usize> = labels.iter().flat_map(|&y| std::iter::repeat_n(y, n_per_item)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for (chunk, ys) in conds.chunks(256).zip(want.chunks(256)) {
        let out = implicit_condition_batch(model, chunk, t_c, &mut rng)?;
        hits += classifier.predict(&out).iter().zip(ys).filter(|(p, y)| p == y).count();
    }
    Ok(hits as f64 / conds.len() as f64)
}

/// Mean over samples of the mean squared second difference of positions.
pub fn abstraction_energy(samples: &[Sketch]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("abstraction energy of no samples".into()));
    }
    let per: Vec<f64> = samples
        .iter()
        .map(|s| {
            let p = s.points();
            if p.len() < 3 {
                return 0.0;
            }
            let total: f64 = p
                .windows(3)
                .map(|w| {
                    let dx = w[2].x - 2.0 * w[1].x + w[0].x;
                    let dy = w[2].y - 2.0 * w[1].y + w[0].y;
                    dx * dx + dy * dy
                })
                .sum();
            total / (p.len() - 2) as f64
        })
        .collect();
    Ok(stable_mean(per))
}

/// Unstructured baseline sketches: Gaussian random walks boxed into the
/// unit square with a random pen lift every few steps.
pub fn random_walk_sketches(n: usize, len: usize, seed: u64) -> Result<Vec<Sketch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let steps: ndarray::Array2<f64> = standard_normal((len, 2), &mut rng);
            let (mut x, mut y) = (0.0, 0.0);
            let pts: Vec<Point> = (0..len)
                .map(|j| {
                    x += steps[[j, 0]];
                    y += steps[[j, 1]];
                    let pen = if j + 1 == len || rng.random_bool(0.1) { PEN_UP } else { PEN_DOWN };
                    Point::new(x, y, pen)
                })
                .collect();
            let sk = Sketch::new(pts)?;
            let (x0, y0, x1, y1) = sk.bounding_box();
            let k = 1.0 / (x1 - x0).max(y1 - y0).max(1e-12);
            Ok(sk.recentered().scale(k))
        })
        .collect()
}

/// Named scalar metrics plus the reconstruction table, tagged with the seed
/// and checkpoint hash that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub checkpoint: String,
    pub metrics: BTreeMap<String, f64>,
    pub cd_table: Vec<CdRow>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn new(seed: u64, checkpoint: impl Into<String>) -> Self {
        Self { seed, checkpoint: checkpoint.into(), metrics: BTreeMap::new(), cd_table: Vec::new(), notes: Vec::new() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `section,key,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        let _ = writeln!(out, "meta,seed,{}", self.seed);
        let _ = writeln!(out, "meta,checkpoint,{}", self.checkpoint);
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "metric,{k},{v}");
        }
        for row in &self.cd_table {
            let _ = writeln!(out, "cd,{},{}", row.factor, row.mean_cd);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConditionMode, ModelConfig};
    use crate::nn::{EstimatorConfig, SequenceEncoderConfig};
    use crate::schedule::ScheduleConfig;
    use crate::toy::{generate_toy_dataset, ToyKind};

    #[test]
    fn energy_oracles() {
        let line = Sketch::from_triples(&[(0.0, 0.0, -1), (1.0, 0.0, -1), (2.0, 0.0, -1), (3.0, 0.0, 1)]).unwrap();
        assert_eq!(abstraction_energy(&[line]).unwrap(), 0.0);
        let zig: Vec<(f64, f64, i8)> = (0..9).map(|j| (j as f64, if j % 2 == 0 { 1.0 } else { -1.0 }, if j == 8 { 1 } else { -1 })).collect();
        assert_eq!(abstraction_energy(&[Sketch::from_triples(&zig).unwrap()]).unwrap(), 16.0);
        assert!(abstraction_energy(&[]).is_err());
    }

    #[test]
    fn cd_curve_ignores_order_and_reruns_identically() {
        let data = generate_toy_dataset(ToyKind::TwoClass, 20, 10, 0.0, 1).unwrap();
        let cfg = ModelConfig {
            mode: ConditionMode::SequenceEncoder,
            schedule: ScheduleConfig::linear(10),
            estimator: EstimatorConfig { hidden: 4, layers: 1, time_dim: 2, latent_dim: 0 },
            latent_dim: 2,
            sequence_encoder: SequenceEncoderConfig { hidden: 3, latent_dim: 2 },
            ..ModelConfig::default()
        };
        let m = DiffusionModel::<f64>::new(&cfg, 0.1, 10, 0).unwrap();
        let test = &data.train.sketches[..6];
        let a = cd_vs_rate_curve(&m, test, &[1.0, 2.0], SamplerSpec::ddpm(m.schedule()), 3).unwrap();
        let mut rev = test.to_vec();
        rev.reverse();
        let b = cd_vs_rate_curve(&m, &rev, &[1.0, 2.0], SamplerSpec::ddpm(m.schedule()), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.mean_cd >= 0.0));
        assert_eq!(cd_vs_rate_curve(&m, test, &[1.0], SamplerSpec::ddim(5), 3).unwrap().len(), 1);
    }

    #[test]
    fn report_serializes() {
        let mut r = MetricReport::new(7, "abc");
        r.metrics.insert("fd".into(), 1.5);
        r.cd_table.push(CdRow { factor: 2.0, mean_cd: 0.1 });
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().contains("cd,2,0.1"));
    }

    #[test]
    fn random_walks_fill_the_unit_box() {
        let walks = random_walk_sketches(5, 20, 1).unwrap();
        for w in walks {
            let (x0, y0, x1, y1) = w.bounding_box();
            assert!(x0.abs() < 1e-12 && y0.abs() < 1e-12 && (x1.max(y1) - 1.0).abs() < 1e-9);
        }
    }
}
