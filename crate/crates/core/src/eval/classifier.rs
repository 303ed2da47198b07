use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::to_time_major;
use crate::error::{Error, Result};
use crate::nn::{BiGruSpec, ParamStore, SeqLayout};
use crate::sketch::{to_velocities, Sketch};
use crate::toy::{DatasetSplit, Split};
use crate::train::velocity_std;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Test accuracy below this is a harness error.
    pub min_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 32, feature_dim: 32, epochs: 12, batch_size: 32, lr: 3e-3, seed: 0, min_accuracy: 0.95 }
    }
}

/// Small bidirectional recurrent classifier whose penultimate activations
/// serve as the feature space for distribution metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    config: ClassifierConfig,
    classes: usize,
    velocity_scale: f64,
    params: ParamStore<f64>,
    test_accuracy: f64,
}

impl ToyClassifier {
    fn init(config: ClassifierConfig, classes: usize, velocity_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        Self::gru(&config).register(&mut params, "gru", &mut rng);
        let k = 1.0 / ((2 * config.hidden) as f64).sqrt();
        params.push_uniform("feat.w", (2 * config.hidden, config.feature_dim), k, &mut rng);
        params.push("feat.b", Array2::zeros((1, config.feature_dim)));
        let k = 1.0 / (config.feature_dim as f64).sqrt();
        params.push_uniform("out.w", (config.feature_dim, classes), k, &mut rng);
        params.push("out.b", Array2::zeros((1, classes)));
        Self { config, classes, velocity_scale, params, test_accuracy: f64::NAN }
    }

    fn gru(config: &ClassifierConfig) -> BiGruSpec {
        BiGruSpec { input: 5, cond: 0, hidden: config.hidden }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn test_accuracy(&self) -> f64 {
        self.test_accuracy
    }

    fn inputs(&self, sketches: &[Sketch]) -> (Array2<f64>, SeqLayout) {
        let lengths: Vec<usize> = sketches.iter().map(Sketch::len).collect();
        let l = lengths.iter().copied().max().unwrap_or(0);
        let mut x = Array3::zeros((sketches.len(), l, 5));
        for (j, sk) in sketches.iter().enumerate() {
            let v = to_velocities(sk);
            for (i, (e, p)) in v.elements.iter().zip(sk.points()).enumerate() {
                x[[j, i, 0]] = e.vx / self.velocity_scale;
                x[[j, i, 1]] = e.vy / self.velocity_scale;
                x[[j, i, 2]] = e.pen;
                x[[j, i, 3]] = p.x - sk.points()[0].x;
                x[[j, i, 4]] = p.y - sk.points()[0].y;
            }
        }
        (to_time_major(&x), SeqLayout::new(&lengths, l))
    }

    fn forward(&self, tape: &mut Tape<f64>, vars: &[Var], sketches: &[Sketch]) -> (Var, Var) {
        let (x, layout) = self.inputs(sketches);
        let x = tape.leaf(x);
        let gru = Self::gru(&self.config);
        let n = gru.param_count();
        let (_, fin) = gru.forward(tape, &vars[..n], x, None, &layout, &layout.reversal());
        let f = tape.matmul(fin, vars[n]);
        let f = tape.add_row(f, vars[n + 1]);
        let feats = tape.tanh(f);
        let logits = tape.matmul(feats, vars[n + 2]);
        (feats, tape.add_row(logits, vars[n + 3]))
    }

    /// Penultimate activations, one row per sketch.
    pub fn features(&self, sketches: &[Sketch]) -> Array2<f64> {
        let mut out = Array2::zeros((sketches.len(), self.config.feature_dim));
        for (k, chunk) in sketches.chunks(256).enumerate() {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let (f, _) = self.forward(&mut tape, &vars, chunk);
            out.slice_mut(s![k * 256..k * 256 + chunk.len(), ..]).assign(tape.value(f));
        }
        out
    }

    pub fn predict(&self, sketches: &[Sketch]) -> Vec<usize> {
        let mut out = Vec::with_capacity(sketches.len());
        for chunk in sketches.chunks(256) {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let (_, logits) = self.forward(&mut tape, &vars, chunk);
            out.extend(tape.value(logits).rows().into_iter().map(|r| {
                r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best })
            }));
        }
        out
    }

    pub fn accuracy(&self, split: &Split) -> Result<f64> {
        let labels = split.labels.as_ref().ok_or_else(|| Error::Harness("split has no labels".into()))?;
        if split.is_empty() {
            return Err(Error::Harness("empty split".into()));
        }
        let hits = self.predict(&split.sketches).iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / split.len() as f64)
    }
}

/// Trains on the labelled train split and checks test accuracy.
pub fn train_toy_classifier(data: &DatasetSplit, config: ClassifierConfig) -> Result<ToyClassifier> {
    let labels = data.train.labels.as_ref().ok_or_else(|| Error::Harness("training split has no labels".into()))?;
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(data.classes.len());
    if classes < 2 {
        return Err(Error::Harness("classifier needs at least two classes".into()));
    }
    let mut clf = ToyClassifier::init(config, classes, velocity_std(&data.train.sketches)?);
    let mut m: Vec<Array2<f64>> = clf.params.values().iter().map(|v| Array2::zeros(v.raw_dim())).collect();
    let mut v = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut t = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let sk: Vec<Sketch> = idx.iter().map(|&i| data.train.sketches[i].clone()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let vars = clf.params.bind(&mut tape);
            let (_, logits) = clf.forward(&mut tape, &vars, &sk);
            let loss = tape.cross_entropy(logits, y);
            let mut g = tape.backward(loss);
            t += 1;
            let (c1, c2) = (1.0 / (1.0 - 0.9f64.powi(t)), 1.0 / (1.0 - 0.999f64.powi(t)));
            for (i, p) in clf.params.values_mut().iter_mut().enumerate() {
                let gi = g.take_or_zeros(vars[i], p.dim());
                ndarray::Zip::from(p).and(&gi).and(&mut m[i]).and(&mut v[i]).for_each(|p, &g, m, v| {
                    *m = 0.9 * *m + 0.1 * g;
                    *v = 0.999 * *v + 0.001 * g * g;
                    *p -= config.lr * (*m * c1) / ((*v * c2).sqrt() + 1e-8);
                });
            }
        }
    }
    let eval = if data.test.is_empty() { &data.val } else { &data.test };
    clf.test_accuracy = clf.accuracy(eval)?;
    if clf.test_accuracy < config.min_accuracy {
        return Err(Error::Harness(format!(
            "toy classifier accuracy {:.3} below {:.2}; downstream metrics would be meaningless",
            clf.test_accuracy, config.min_accuracy
        )));
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{generate_toy_dataset, ToyKind};

    #[test]
    fn separates_two_class_toy_set() {
        let data = generate_toy_dataset(ToyKind::TwoClass, 300, 24, 0.0, 4).unwrap();
        let clf = train_toy_classifier(&data, ClassifierConfig::default()).unwrap();
        assert!(clf.test_accuracy() >= 0.95);
        let f = clf.features(&data.test.sketches);
        assert_eq!(f.dim(), (data.test.len(), clf.feature_dim()));

        let mut rev = data.test.clone();
        rev.sketches.reverse();
        rev.labels.as_mut().unwrap().reverse();
        assert_eq!(clf.accuracy(&rev).unwrap(), clf.accuracy(&data.test).unwrap());
    }

    #[test]
    fn unlabeled_data_is_a_harness_error() {
        let data = generate_toy_dataset(ToyKind::Circles, 20, 12, 0.0, 4).unwrap();
        assert!(matches!(train_toy_classifier(&data, ClassifierConfig::default()), Err(Error::Harness(_))));
    }
}
