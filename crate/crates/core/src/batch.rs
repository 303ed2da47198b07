//! Padding variable-length velocity sequences into dense batches.

use ndarray::{Array2, Array3};

use crate::scalar::Scalar;
use crate::sketch::VelocitySequence;

/// Zero-padded velocities `(batch, max_len, 3)` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchBatch<F> {
    pub velocities: Array3<F>,
    pub mask: Array2<bool>,
    pub lengths: Vec<usize>,
}

impl<F: Scalar> SketchBatch<F> {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.velocities.dim().1
    }

    /// Per-channel mean and variance over masked-in elements only.
    pub fn channel_moments(&self) -> [(F, F); 3] {
        let mut sum = [F::zero(); 3];
        let mut sq = [F::zero(); 3];
        let mut count = F::zero();
        for (b, &len) in self.lengths.iter().enumerate() {
            for j in 0..len {
                for c in 0..3 {
                    let v = self.velocities[[b, j, c]];
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += F::one();
            }
        }
        std::array::from_fn(|c| {
            let m = sum[c] / count;
            (m, sq[c] / count - m * m)
        })
    }
}

pub fn make_batch<F: Scalar>(seqs: &[VelocitySequence<F>]) -> SketchBatch<F> {
    assert!(!seqs.is_empty(), "cannot batch zero sequences");
    let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut velocities = Array3::zeros((seqs.len(), max_len, 3));
    let mut mask = Array2::from_elem((seqs.len(), max_len), false);
    for (b, s) in seqs.iter().enumerate() {
        for (j, e) in s.elements.iter().enumerate() {
            velocities[[b, j, 0]] = e.vx;
            velocities[[b, j, 1]] = e.vy;
            velocities[[b, j, 2]] = e.pen;
            mask[[b, j]] = true;
        }
    }
    SketchBatch { velocities, mask, lengths: seqs.iter().map(|s| s.len()).collect() }
}

/// `(B, L, C)` to the time-major `(L*B, C)` layout used by the networks.
pub fn to_time_major<F: Scalar>(x: &Array3<F>) -> Array2<F> {
    let (b, l, c) = x.dim();
    Array2::from_shape_fn((l * b, c), |(r, ch)| x[[r % b, r / b, ch]])
}

pub fn from_time_major<F: Scalar>(x: &Array2<F>, batch: usize) -> Array3<F> {
    let (rows, c) = x.dim();
    Array3::from_shape_fn((batch, rows / batch, c), |(b, s, ch)| x[[s * batch + b, ch]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::Velocity;

    fn seq(n: usize) -> VelocitySequence<f64> {
        VelocitySequence {
            elements: (0..n).map(|i| Velocity { vx: i as f64, vy: 1.0, pen: -1.0 }).collect(),
            origin: (0.0, 0.0),
        }
    }

    #[test]
    fn padding_and_mask() {
        let b = make_batch(&[seq(3), seq(5)]);
        assert_eq!(b.max_len(), 5);
        let rows: Vec<Vec<bool>> = b.mask.rows().into_iter().map(|r| r.to_vec()).collect();
        assert_eq!(rows, vec![vec![true, true, true, false, false], vec![true; 5]]);
        assert_eq!(b.velocities[[0, 4, 0]], 0.0);
        let single = make_batch(&[seq(4)]);
        assert!(single.mask.iter().all(|&m| m));
    }

    #[test]
    fn moments_ignore_padding() {
        let mut b = make_batch(&[seq(2), seq(4)]);
        let before = b.channel_moments();
        b.velocities[[0, 3, 0]] = 1e6;
        assert_eq!(before, b.channel_moments());
        // vx values: 0,1,0,1,2,3 -> mean 7/6
        assert!((before[0].0 - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn time_major_roundtrip() {
        let x = Array3::from_shape_fn((2, 3, 2), |(a, b, c)| (a * 100 + b * 10 + c) as f64);
        let tm = to_time_major(&x);
        assert_eq!(tm.row(1).to_vec(), vec![100.0, 101.0]);
        assert_eq!(from_time_major(&tm, 2), x);
    }
}
