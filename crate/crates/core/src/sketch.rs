//! Stroke-sequence data types and the geometric conversions between them.
//!
//! A [`Sketch`] is the three-point format: an ordered list of `(x, y, pen)`
//! where `pen == +1` marks the last point of a stroke. Diffusion works on the
//! [`VelocitySequence`] form, the per-step forward differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pen bit for a point that continues the current stroke.
pub const PEN_DOWN: i8 = -1;
/// Pen bit for the last point of a stroke.
pub const PEN_UP: i8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<F = f64> {
    pub x: F,
    pub y: F,
    pub pen: i8,
}

impl<F: Scalar> Point<F> {
    pub fn new(x: F, y: F, pen: i8) -> Self {
        Self { x, y, pen }
    }
}

/// Ordered `(x, y, pen)` points; at least two, all finite, pen in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Sketch<F = f64> {
    points: Vec<Point<F>>,
}

impl<F: Scalar> Sketch<F> {
    pub fn new(points: Vec<Point<F>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Data(format!("sketch needs at least 2 points, got {}", points.len())));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Data(format!("non-finite coordinate at point {i}")));
            }
            if p.pen != PEN_DOWN && p.pen != PEN_UP {
                return Err(Error::Data(format!("pen bit {} at point {i} is not -1 or +1", p.pen)));
            }
        }
        Ok(Self { points })
    }

    /// Builds a sketch from `(x, y, pen)` triples.
    pub fn from_triples(triples: &[(f64, f64, i8)]) -> Result<Self> {
        Self::new(triples.iter().map(|&(x, y, p)| Point::new(F::of(x), F::of(y), p)).collect())
    }

    /// A sketch from strokes; each stroke's last point gets the pen-up bit.
    pub fn from_strokes(strokes: &[Vec<(F, F)>]) -> Result<Self> {
        let mut points = Vec::new();
        for stroke in strokes.iter().filter(|s| !s.is_empty()) {
            for (i, &(x, y)) in stroke.iter().enumerate() {
                let pen = if i + 1 == stroke.len() { PEN_UP } else { PEN_DOWN };
                points.push(Point::new(x, y, pen));
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Point<F>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cast<G: Scalar>(&self) -> Sketch<G> {
        Sketch {
            points: self
                .points
                .iter()
                .map(|p| Point::new(G::of(p.x.as_f64()), G::of(p.y.as_f64()), p.pen))
                .collect(),
        }
    }

    /// Splits into strokes. The final point always closes a stroke.
    pub fn strokes(&self) -> Vec<Vec<(F, F)>> {
        let mut strokes = Vec::new();
        let mut current = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            current.push((p.x, p.y));
            if p.pen == PEN_UP || i + 1 == self.points.len() {
                strokes.push(std::mem::take(&mut current));
            }
        }
        strokes
    }

    /// The same drawing traced backwards: stroke order and point order within
    /// each stroke are reversed.
    pub fn reversed(&self) -> Self {
        let strokes: Vec<Vec<(F, F)>> = self
            .strokes()
            .into_iter()
            .rev()
            .map(|s| s.into_iter().rev().collect())
            .collect();
        Self::from_strokes(&strokes).expect("reversal keeps validity")
    }

    /// `(min_x, min_y, max_x, max_y)`
    pub fn bounding_box(&self) -> (F, F, F, F) {
        let first = self.points[0];
        self.points.iter().fold((first.x, first.y, first.x, first.y), |(a, b, c, d), p| {
            (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y))
        })
    }

    pub fn translate(&self, dx: F, dy: F) -> Self {
        Self {
            points: self.points.iter().map(|p| Point::new(p.x + dx, p.y + dy, p.pen)).collect(),
        }
    }

    pub fn scale(&self, k: F) -> Self {
        Self { points: self.points.iter().map(|p| Point::new(p.x * k, p.y * k, p.pen)).collect() }
    }

    /// Translates so the bounding box starts at the origin.
    pub fn recentered(&self) -> Self {
        let (x0, y0, _, _) = self.bounding_box();
        self.translate(-x0, -y0)
    }

    /// Total drawn length, summed inside strokes only.
    pub fn arc_length(&self) -> F {
        self.strokes().iter().map(|s| polyline_length(s)).fold(F::zero(), |a, b| a + b)
    }

    pub fn coords(&self) -> Vec<(F, F)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }
}

fn polyline_length<F: Scalar>(pts: &[(F, F)]) -> F {
    pts.windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .fold(F::zero(), |a, b| a + b)
}

/// One velocity element; `pen` is analog while diffusing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Velocity<F = f64> {
    pub vx: F,
    pub vy: F,
    pub pen: F,
}

/// Forward differences of a sketch plus the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct VelocitySequence<F = f64> {
    pub elements: Vec<Velocity<F>>,
    pub origin: (F, F),
}

impl<F: Scalar> VelocitySequence<F> {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// `v[j] = x[j+1] - x[j]`, with a trailing zero velocity so lengths agree.
pub fn to_velocities<F: Scalar>(sketch: &Sketch<F>) -> VelocitySequence<F> {
    let pts = sketch.points();
    let elements = pts
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let (vx, vy) = match pts.get(j + 1) {
                Some(next) => (next.x - p.x, next.y - p.y),
                None => (F::zero(), F::zero()),
            };
            Velocity { vx, vy, pen: F::of(p.pen as f64) }
        })
        .collect();
    VelocitySequence { elements, origin: (pts[0].x, pts[0].y) }
}

/// Cumulative sum back to positions: `x[0] = origin`, `x[j+1] = x[j] + v[j]`.
///
/// Analog pen values are quantized.
pub fn to_positions<F: Scalar>(v: &VelocitySequence<F>, origin: (F, F)) -> Result<Sketch<F>> {
    let mut points = Vec::with_capacity(v.len());
    let (mut x, mut y) = origin;
    for e in &v.elements {
        points.push(Point::new(x, y, quantize_pen(e.pen)?));
        x += e.vx;
        y += e.vy;
    }
    Sketch::new(points)
}

/// Thresholds an analog pen value at zero; ties go to pen-up.
pub fn quantize_pen<F: Scalar>(p: F) -> Result<i8> {
    if p.is_nan() {
        return Err(Error::Data("pen value is NaN".into()));
    }
    Ok(if p >= F::zero() { PEN_UP } else { PEN_DOWN })
}

/// Splits `target` points across strokes proportionally to arc length, with
/// a floor of two points per stroke (largest-remainder rounding).
pub fn allocate_points(lengths: &[f64], target: usize) -> Result<Vec<usize>> {
    let k = lengths.len();
    if target < 2 * k {
        return Err(Error::Preprocess(format!(
            "target length {target} cannot give {k} strokes two points each"
        )));
    }
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return Err(Error::Preprocess("sketch has zero arc length".into()));
    }
    let ideal: Vec<f64> = lengths.iter().map(|l| target as f64 * l / total).collect();
    let mut alloc: Vec<usize> = ideal.iter().map(|q| (q.floor() as usize).max(2)).collect();
    let mut sum: usize = alloc.iter().sum();
    // deterministic order: largest remainder first, then stroke index
    while sum < target {
        let i = (0..k)
            .max_by(|&a, &b| {
                let ra = ideal[a] - alloc[a] as f64;
                let rb = ideal[b] - alloc[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("non-empty");
        alloc[i] += 1;
        sum += 1;
    }
    while sum > target {
        let i = (0..k)
            .filter(|&i| alloc[i] > 2)
            .min_by(|&a, &b| {
                let ra = ideal[a] - alloc[a] as f64;
                let rb = ideal[b] - alloc[b] as f64;
                ra.total_cmp(&rb).then(a.cmp(&b))
            })
            .expect("target >= 2k leaves a removable point");
        alloc[i] -= 1;
        sum -= 1;
    }
    Ok(alloc)
}

/// `n >= 2` points at equal arc-length spacing along a polyline, endpoints kept.
pub fn resample_polyline<F: Scalar>(pts: &[(F, F)], n: usize) -> Vec<(F, F)> {
    debug_assert!(n >= 2 && !pts.is_empty());
    let total = polyline_length(pts);
    if pts.len() == 1 || total == F::zero() {
        return vec![pts[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut seg = 0;
    let mut seg_start = F::zero();
    let seg_len = |i: usize| ((pts[i + 1].0 - pts[i].0).powi(2) + (pts[i + 1].1 - pts[i].1).powi(2)).sqrt();
    let mut cur_len = seg_len(0);
    for k in 1..n - 1 {
        let target = total * F::of(k as f64) / F::of((n - 1) as f64);
        while seg + 2 < pts.len() && seg_start + cur_len < target {
            seg_start += cur_len;
            seg += 1;
            cur_len = seg_len(seg);
        }
        let frac = if cur_len > F::zero() {
            ((target - seg_start) / cur_len).max(F::zero()).min(F::one())
        } else {
            F::zero()
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push((a.0 + (b.0 - a.0) * frac, a.1 + (b.1 - a.1) * frac));
    }
    out.push(*pts.last().expect("non-empty"));
    out
}

/// Equispaced resampling to exactly `target_len` points with the per-stroke
/// budget from [`allocate_points`]. Coordinates are not rescaled.
pub fn resample<F: Scalar>(sketch: &Sketch<F>, target_len: usize) -> Result<Sketch<F>> {
    if target_len < 2 {
        return Err(Error::Preprocess("target length must be at least 2".into()));
    }
    let strokes = sketch.strokes();
    let lengths: Vec<f64> = strokes.iter().map(|s| polyline_length(s).as_f64()).collect();
    let alloc = allocate_points(&lengths, target_len)?;
    let resampled: Vec<Vec<(F, F)>> =
        strokes.iter().zip(&alloc).map(|(s, &n)| resample_polyline(s, n)).collect();
    Sketch::from_strokes(&resampled)
}

/// Resamples to `target_len` points and scales isotropically so the bounding
/// box fits `[0, scale_box]^2` with its longer side equal to `scale_box`.
pub fn preprocess<F: Scalar>(sketch: &Sketch<F>, target_len: usize, scale_box: F) -> Result<Sketch<F>> {
    if !(scale_box > F::zero()) {
        return Err(Error::Preprocess("scale_box must be positive".into()));
    }
    if sketch.arc_length() <= F::zero() {
        return Err(Error::Preprocess("sketch has zero arc length".into()));
    }
    let resampled = resample(sketch, target_len)?;
    let (x0, y0, x1, y1) = resampled.bounding_box();
    let side = (x1 - x0).max(y1 - y0);
    let k = scale_box / side;
    Ok(Sketch::new(
        resampled
            .points()
            .iter()
            .map(|p| Point::new((p.x - x0) * k, (p.y - y0) * k, p.pen))
            .collect(),
    )?)
}

/// Unordered 2-D points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PointSet<F = f64> {
    pub points: Vec<(F, F)>,
}

impl<F: Scalar> PointSet<F> {
    pub fn new(points: Vec<(F, F)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points in lexicographic `(x, y)` order; the canonical representative
    /// of the set.
    pub fn canonical(&self) -> Vec<(F, F)> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
        pts
    }
}

impl<F: Scalar> PartialEq for PointSet<F> {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

/// Coordinates after equispaced densification to `densify` points; pen bits
/// are dropped.
pub fn to_point_set<F: Scalar>(sketch: &Sketch<F>, densify: usize) -> Result<PointSet<F>> {
    if densify < sketch.len() {
        return Err(Error::Contract(format!(
            "densify ({densify}) must be at least the sketch length ({})",
            sketch.len()
        )));
    }
    if densify == sketch.len() || sketch.arc_length() == F::zero() {
        let mut pts = sketch.coords();
        while pts.len() < densify {
            pts.push(pts[pts.len() % sketch.len()]);
        }
        return Ok(PointSet::new(pts));
    }
    Ok(PointSet::new(resample(sketch, densify)?.coords()))
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance<F: Scalar>(a: &PointSet<F>, b: &PointSet<F>) -> Result<F> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("chamfer distance of an empty point set".into()));
    }
    Ok(directed_mean_nn(&a.points, &b.points) + directed_mean_nn(&b.points, &a.points))
}

fn directed_mean_nn<F: Scalar>(from: &[(F, F)], to: &[(F, F)]) -> F {
    let sum = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1))
                .fold(F::infinity(), F::min)
        })
        .fold(F::zero(), |acc, d| acc + d);
    sum / F::of(from.len() as f64)
}

/// Chamfer distance between the coordinates of two sketches.
pub fn sketch_chamfer<F: Scalar>(a: &Sketch<F>, b: &Sketch<F>) -> F {
    chamfer_distance(&PointSet::new(a.coords()), &PointSet::new(b.coords())).expect("sketches are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sk(t: &[(f64, f64, i8)]) -> Sketch {
        Sketch::from_triples(t).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let x = sk(&[(0., 0., -1), (1., 0., -1), (1., 1., 1)]);
        let v = to_velocities(&x);
        let got: Vec<(f64, f64)> = v.elements.iter().map(|e| (e.vx, e.vy)).collect();
        assert_eq!(got, vec![(1., 0.), (0., 1.), (0., 0.)]);
        assert_eq!(v.origin, (0., 0.));
        assert_eq!(to_positions(&v, (0., 0.)).unwrap(), x);

        let zeros = VelocitySequence {
            elements: vec![Velocity { vx: 0.0, vy: 0.0, pen: 1.0 }; 3],
            origin: (0.0, 0.0),
        };
        let c = to_positions(&zeros, (5.0, 5.0)).unwrap();
        assert!(c.points().iter().all(|p| p.x == 5.0 && p.y == 5.0));
    }

    #[test]
    fn invalid_sketches_rejected() {
        assert!(Sketch::<f64>::from_triples(&[(0., 0., 1)]).is_err());
        assert!(Sketch::<f64>::from_triples(&[(0., 0., 1), (f64::NAN, 0., 1)]).is_err());
        assert!(Sketch::<f64>::from_triples(&[(0., 0., 0), (1., 0., 1)]).is_err());
    }

    #[test]
    fn pen_quantization() {
        assert_eq!(quantize_pen(0.3).unwrap(), 1);
        assert_eq!(quantize_pen(-0.2).unwrap(), -1);
        assert_eq!(quantize_pen(0.0).unwrap(), 1);
        assert!(quantize_pen(f64::NAN).is_err());
    }

    #[test]
    fn straight_stroke_equispaced() {
        let s = sk(&[(0., 0., -1), (0., 10., 1)]);
        let r = resample(&s, 5).unwrap();
        let ys: Vec<f64> = r.points().iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
    }

    /// Exhaustive search for the split minimizing the variance of per-point
    /// spacing (arc length / points) across strokes.
    fn best_split_oracle(lengths: &[f64], target: usize) -> Vec<usize> {
        fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                if left >= 2 {
                    cur.push(left);
                    out.push(cur.clone());
                    cur.pop();
                }
                return;
            }
            for n in 2..=left.saturating_sub(2 * (k - 1)) {
                cur.push(n);
                rec(k - 1, left - n, cur, out);
                cur.pop();
            }
        }
        let mut all = Vec::new();
        rec(lengths.len(), target, &mut Vec::new(), &mut all);
        let var = |a: &Vec<usize>| {
            let sp: Vec<f64> = lengths.iter().zip(a).map(|(l, &n)| l / n as f64).collect();
            let m = sp.iter().sum::<f64>() / sp.len() as f64;
            sp.iter().map(|s| (s - m).powi(2)).sum::<f64>()
        };
        all.into_iter().min_by(|a, b| var(a).total_cmp(&var(b))).unwrap()
    }

    #[test]
    fn two_stroke_allocation_matches_oracle() {
        let oracle = best_split_oracle(&[3.0, 1.0], 8);
        assert_eq!(oracle, vec![6, 2]);
        assert_eq!(allocate_points(&[3.0, 1.0], 8).unwrap(), oracle);
        let s = sk(&[(0., 0., -1), (3., 0., 1), (0., 1., -1), (1., 1., 1)]);
        let r = resample(&s, 8).unwrap();
        let counts: Vec<usize> = r.strokes().iter().map(|s| s.len()).collect();
        assert_eq!(counts, vec![6, 2]);
    }

    #[test]
    fn allocation_floor_and_errors() {
        assert_eq!(allocate_points(&[10.0, 0.0], 6).unwrap(), vec![4, 2]);
        assert!(allocate_points(&[1.0, 1.0, 1.0], 5).is_err());
        assert!(allocate_points(&[0.0], 5).is_err());
    }

    #[test]
    fn preprocess_zero_arc_length_errors() {
        let s = sk(&[(1., 1., -1), (1., 1., 1)]);
        assert!(matches!(preprocess(&s, 8, 1.0), Err(Error::Preprocess(_))));
    }

    #[test]
    fn point_set_examples() {
        let s = sk(&[(0., 0., -1), (2., 0., 1)]);
        let ps = to_point_set(&s, 3).unwrap();
        assert_eq!(ps, PointSet::new(vec![(0., 0.), (1., 0.), (2., 0.)]));
        let tri = sk(&[(0., 0., -1), (1., 0.3, -1), (2., 2., 1)]);
        assert_eq!(to_point_set(&tri, 3).unwrap(), PointSet::new(tri.coords()));
        assert!(to_point_set(&tri, 2).is_err());
    }

    #[test]
    fn densified_circle_is_evenly_spaced() {
        // coarse circle drawn with uneven vertex spacing
        let angles = [0.0, 0.3, 1.2, 1.5, 2.9, 3.3, 4.4, 5.0, 5.9, std::f64::consts::TAU];
        let pts: Vec<(f64, f64)> = angles.iter().map(|a| (a.cos(), a.sin())).collect();
        let circle = Sketch::from_strokes(&[pts]).unwrap();
        let ps = to_point_set(&circle, 64).unwrap();
        // arc-length oracle: consecutive gaps along the drawn path
        let gaps: Vec<f64> = ps
            .points
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64).sqrt();
        assert!(sd / mean < 0.05, "cv = {}", sd / mean);
    }

    #[test]
    fn chamfer_examples() {
        let a = PointSet::new(vec![(0.0, 0.0)]);
        let b = PointSet::new(vec![(3.0, 4.0)]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 50.0);
        assert_eq!(chamfer_distance(&b, &b).unwrap(), 0.0);
        assert!(chamfer_distance(&a, &PointSet::new(vec![])).is_err());
    }

    fn arb_sketch() -> impl Strategy<Value = Sketch> {
        prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, prop::bool::ANY), 2..40).prop_map(|v| {
            let n = v.len();
            let pts = v
                .into_iter()
                .enumerate()
                .map(|(i, (x, y, up))| Point::new(x, y, if up || i + 1 == n { PEN_UP } else { PEN_DOWN }))
                .collect();
            Sketch::new(pts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn velocity_roundtrip(s in arb_sketch()) {
            let v = to_velocities(&s);
            prop_assert_eq!(v.len(), s.len());
            let back = to_positions(&v, v.origin).unwrap();
            for (p, q) in s.points().iter().zip(back.points()) {
                prop_assert!((p.x - q.x).abs() <= 1e-9 && (p.y - q.y).abs() <= 1e-9);
                prop_assert_eq!(p.pen, q.pen);
            }
        }

        #[test]
        fn preprocess_fits_box(s in arb_sketch(), scale in 0.1f64..10.0) {
            let strokes = s.strokes().len();
            let target = (2 * strokes).max(16);
            if s.arc_length() > 1e-6 {
                let p = preprocess(&s, target, scale).unwrap();
                prop_assert_eq!(p.len(), target);
                let (x0, y0, x1, y1) = p.bounding_box();
                prop_assert!(x0.abs() < 1e-9 && y0.abs() < 1e-9);
                prop_assert!(((x1 - x0).max(y1 - y0) - scale).abs() < 1e-9);
            }
        }

        #[test]
        fn chamfer_symmetric_nonnegative(
            a in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
            b in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
        ) {
            let (a, b) = (PointSet::new(a), PointSet::new(b));
            let ab = chamfer_distance(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, chamfer_distance(&b, &a).unwrap());
            prop_assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn point_set_ignores_drawing_direction(
            lens in prop::collection::vec(0.5f64..5.0, 1..4),
            densify in 24usize..64,
        ) {
            // zigzag strokes with distinct lengths so allocation has no ties
            let strokes: Vec<Vec<(f64, f64)>> = lens.iter().enumerate().map(|(i, &l)| {
                let l = l + i as f64 * 0.013;
                vec![(0.0, i as f64), (l * 0.5, i as f64 + 0.3), (l, i as f64)]
            }).collect();
            let s = Sketch::from_strokes(&strokes).unwrap();
            let fwd = to_point_set(&s, densify).unwrap();
            let back = to_point_set(&s.reversed(), densify).unwrap();
            prop_assert!(chamfer_distance(&fwd, &back).unwrap() < 1e-20);
        }
    }
}
