//! Deterministic synthetic stroke datasets for desk-scale experiments.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{preprocess, Point, Sketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    /// One to three straight strokes.
    Lines,
    /// A single closed circular stroke with random start and direction.
    Circles,
    /// Regular polygons with 3 to 6 sides.
    Polygons,
    /// Zigzag strokes with 2 to 5 teeth.
    Zigzags,
    /// Balanced, labelled circles (class 0) and zigzags (class 1).
    TwoClass,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lines" => Self::Lines,
            "circles" => Self::Circles,
            "polygons" => Self::Polygons,
            "zigzags" => Self::Zigzags,
            "two-class" => Self::TwoClass,
            other => return Err(Error::Config(format!("unknown toy dataset '{other}'"))),
        })
    }
}

/// Sketches with optional class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub sketches: Vec<Sketch>,
    pub labels: Option<Vec<usize>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    /// Resamples every sketch to a length drawn uniformly from `lo..=hi`,
    /// keeping the unit box. Labels are untouched.
    pub fn with_varied_lengths(&self, lo: usize, hi: usize, seed: u64) -> Result<Self> {
        if lo < 4 || hi < lo {
            return Err(Error::Config(format!("length range {lo}..={hi} is invalid")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sketches = self
            .sketches
            .iter()
            .map(|s| preprocess(s, rng.random_range(lo..=hi), 1.0))
            .collect::<Result<_>>()?;
        Ok(Self { sketches, labels: self.labels.clone() })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub classes: Vec<String>,
}

impl DatasetSplit {
    /// Partitions `items` 80-10-10 in order.
    pub fn from_items(items: Vec<(Sketch, Option<usize>)>, classes: Vec<String>) -> Self {
        let n = items.len();
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = (n as f64 * 0.1).round() as usize;
        let labelled = items.iter().all(|(_, l)| l.is_some());
        let mut parts = [Split::default(), Split::default(), Split::default()];
        for (i, (s, l)) in items.into_iter().enumerate() {
            let k = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            parts[k].sketches.push(s);
            if labelled {
                parts[k].labels.get_or_insert_with(Vec::new).push(l.expect("labelled"));
            }
        }
        let [train, val, test] = parts;
        Self { train, val, test, classes }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn circle(rng: &mut ChaCha8Rng, len: usize) -> Result<Sketch> {
    let start = rng.random_range(0.0..TAU);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let pts: Vec<(f64, f64)> = (0..len)
        .map(|k| {
            let a = start + dir * TAU * k as f64 / (len - 1) as f64;
            (0.5 * a.cos(), 0.5 * a.sin())
        })
        .collect();
    let s = Sketch::from_strokes(&[pts])?;
    normalize_box(&s)
}

fn zigzag(rng: &mut ChaCha8Rng, len: usize) -> Result<Sketch> {
    let teeth = rng.random_range(2..=5usize);
    let amp = rng.random_range(0.15..0.5);
    let tilt = rng.random_range(-0.26..0.26f64);
    let flip = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (c, s) = (tilt.cos(), tilt.sin());
    let pts: Vec<(f64, f64)> = (0..=2 * teeth)
        .map(|i| {
            let x = flip * i as f64 / (2 * teeth) as f64;
            let y = if i % 2 == 0 { 0.0 } else { amp };
            (c * x - s * y, s * x + c * y)
        })
        .collect();
    preprocess(&Sketch::from_strokes(&[pts])?, len, 1.0)
}

fn polygon(rng: &mut ChaCha8Rng, len: usize) -> Result<Sketch> {
    let sides = rng.random_range(3..=6usize);
    let rot = rng.random_range(0.0..TAU);
    let pts: Vec<(f64, f64)> = (0..=sides)
        .map(|k| {
            let a = rot + TAU * k as f64 / sides as f64;
            (a.cos(), a.sin())
        })
        .collect();
    preprocess(&Sketch::from_strokes(&[pts])?, len, 1.0)
}

fn lines(rng: &mut ChaCha8Rng, len: usize) -> Result<Sketch> {
    let count = rng.random_range(1..=3usize).min(len / 2);
    let strokes: Vec<Vec<(f64, f64)>> = (0..count)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let a = rng.random_range(0.0..PI * 2.0);
            let l = rng.random_range(0.3..1.0);
            vec![(x, y), (x + l * a.cos(), y + l * a.sin())]
        })
        .collect();
    preprocess(&Sketch::from_strokes(&strokes)?, len, 1.0)
}

/// Translates and scales so the longer bounding-box side spans `[0, 1]`.
fn normalize_box(s: &Sketch) -> Result<Sketch> {
    let (x0, y0, x1, y1) = s.bounding_box();
    let k = 1.0 / (x1 - x0).max(y1 - y0);
    Sketch::new(s.points().iter().map(|p| Point::new((p.x - x0) * k, (p.y - y0) * k, p.pen)).collect())
}

fn jitter(s: &Sketch, noise: f64, rng: &mut ChaCha8Rng) -> Result<Sketch> {
    if noise == 0.0 {
        return Ok(s.clone());
    }
    let moved = Sketch::new(
        s.points()
            .iter()
            .map(|p| Point::new(p.x + noise * normal(rng), p.y + noise * normal(rng), p.pen))
            .collect(),
    )?;
    normalize_box(&moved)
}

/// Generates `n` sketches of exactly `len` points in `[0, 1]^2`, shuffled
/// and split 80-10-10. Output depends only on the arguments.
pub fn generate_toy_dataset(kind: ToyKind, n: usize, len: usize, noise: f64, seed: u64) -> Result<DatasetSplit> {
    if n < 10 {
        return Err(Error::Config(format!("toy dataset needs n >= 10, got {n}")));
    }
    if len < 4 {
        return Err(Error::Config(format!("toy sketches need at least 4 points, got {len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let (shape, label) = match kind {
            ToyKind::Lines => (lines(&mut rng, len)?, None),
            ToyKind::Circles => (circle(&mut rng, len)?, None),
            ToyKind::Polygons => (polygon(&mut rng, len)?, None),
            ToyKind::Zigzags => (zigzag(&mut rng, len)?, None),
            ToyKind::TwoClass if i % 2 == 0 => (circle(&mut rng, len)?, Some(0)),
            ToyKind::TwoClass => (zigzag(&mut rng, len)?, Some(1)),
        };
        items.push((jitter(&shape, noise, &mut rng)?, label));
    }
    items.shuffle(&mut rng);
    let classes = match kind {
        ToyKind::TwoClass => vec!["circle".to_string(), "zigzag".to_string()],
        _ => Vec::new(),
    };
    Ok(DatasetSplit::from_items(items, classes))
}
