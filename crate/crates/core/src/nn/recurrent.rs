use ndarray::{Array2, Array3};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

use super::params::ParamStore;

/// Index bookkeeping for a padded time-major batch: row `s * B + b` holds
/// element `s` of sample `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqLayout {
    pub batch: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
}

impl SeqLayout {
    pub fn new(lengths: &[usize], max_len: usize) -> Self {
        Self { batch: lengths.len(), max_len, lengths: lengths.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.max_len
    }

    /// Per-sample time reversal over valid elements; padding rows map to
    /// themselves.
    pub fn reversal(&self) -> Vec<usize> {
        let b = self.batch;
        let mut idx: Vec<usize> = (0..self.rows()).collect();
        for (j, &len) in self.lengths.iter().enumerate() {
            for s in 0..len {
                idx[s * b + j] = (len - 1 - s) * b + j;
            }
        }
        idx
    }

    /// `None` when every sample is valid at step `s`.
    pub fn step_mask<F: Scalar>(&self, s: usize) -> Option<Vec<F>> {
        if self.lengths.iter().all(|&l| s < l) {
            return None;
        }
        Some(self.lengths.iter().map(|&l| if s < l { F::one() } else { F::zero() }).collect())
    }

    /// `1 / (channels * len_b * B)` for valid rows and zero for padding, so a
    /// weighted squared error is the batch mean of per-sample element means.
    pub fn mean_weights<F: Scalar>(&self, channels: usize) -> Vec<F> {
        let b = self.batch;
        let mut w = vec![F::zero(); self.rows()];
        for (j, &len) in self.lengths.iter().enumerate() {
            let v = F::of(1.0 / (channels * len * b) as f64);
            for s in 0..len {
                w[s * b + j] = v;
            }
        }
        w
    }
}

/// Appends absolute positions (exclusive cumulative sum of the xy
/// velocities) to a `(B, L, 3)` batch, giving `(B, L, 5)`. Padding
/// positions are zero.
pub fn position_features<F: Scalar>(v: &Array3<F>, lengths: &[usize]) -> Array3<F> {
    let (b, l, _) = v.dim();
    let mut out = Array3::zeros((b, l, 5));
    for (j, &len) in lengths.iter().enumerate() {
        let (mut x, mut y) = (F::zero(), F::zero());
        for s in 0..len.min(l) {
            out[[j, s, 0]] = v[[j, s, 0]];
            out[[j, s, 1]] = v[[j, s, 1]];
            out[[j, s, 2]] = v[[j, s, 2]];
            out[[j, s, 3]] = x;
            out[[j, s, 4]] = y;
            x += v[[j, s, 0]];
            y += v[[j, s, 1]];
        }
    }
    out
}

/// Shapes of one bidirectional recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BiGruSpec {
    pub input: usize,
    pub cond: usize,
    pub hidden: usize,
}

impl BiGruSpec {
    fn per_direction(&self) -> usize {
        if self.cond > 0 { 5 } else { 4 }
    }

    pub fn param_count(&self) -> usize {
        2 * self.per_direction()
    }

    /// Registers forward then backward weights; returns the first index.
    pub fn register<F: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<F>, prefix: &str, rng: &mut R) -> usize {
        let first = store.len();
        let h3 = 3 * self.hidden;
        let k = 1.0 / (self.hidden as f64).sqrt();
        for dir in ["fwd", "bwd"] {
            store.push_uniform(format!("{prefix}.{dir}.w_in"), (self.input, h3), k, rng);
            if self.cond > 0 {
                store.push_uniform(format!("{prefix}.{dir}.w_cond"), (self.cond, h3), k, rng);
            }
            store.push_uniform(format!("{prefix}.{dir}.b_in"), (1, h3), k, rng);
            store.push_uniform(format!("{prefix}.{dir}.w_h"), (self.hidden, h3), k, rng);
            store.push_uniform(format!("{prefix}.{dir}.b_h"), (1, h3), k, rng);
        }
        first
    }

    /// Runs both directions over `input` `(L*B, input)` with an optional
    /// per-sample condition `(B, cond)` added to every input projection.
    ///
    /// Returns the concatenated outputs `(L*B, 2H)` and the concatenated
    /// final states `(B, 2H)`; the backward final state is the one after
    /// reading the first element.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        input: Var,
        cond: Option<Var>,
        layout: &SeqLayout,
        reversal: &[usize],
    ) -> (Var, Var) {
        let per = self.per_direction();
        let mut outs = Vec::with_capacity(2);
        let mut finals = Vec::with_capacity(2);
        for (d, reverse) in [false, true].into_iter().enumerate() {
            let p = &params[d * per..(d + 1) * per];
            let (w_in, rest) = (p[0], &p[1..]);
            let (w_cond, rest) = if self.cond > 0 { (Some(rest[0]), &rest[1..]) } else { (None, rest) };
            let (b_in, w_h, b_h) = (rest[0], rest[1], rest[2]);

            let mut xp = tape.matmul(input, w_in);
            if let (Some(w), Some(c)) = (w_cond, cond) {
                let cp = tape.matmul(c, w);
                let tiled = tape.tile_rows(cp, layout.max_len);
                xp = tape.add(xp, tiled);
            }
            xp = tape.add_row(xp, b_in);
            if reverse {
                xp = tape.gather_rows(xp, reversal.to_vec());
            }

            let b = layout.batch;
            let mut h = tape.leaf(Array2::zeros((b, self.hidden)));
            let mut states = Vec::with_capacity(layout.max_len);
            for s in 0..layout.max_len {
                let xs = tape.slice_rows(xp, s * b, (s + 1) * b);
                let hm = tape.matmul(h, w_h);
                let hp = tape.add_row(hm, b_h);
                h = tape.gru(xs, hp, h, layout.step_mask(s));
                states.push(h);
            }
            let mut out = tape.stack_rows(&states);
            if reverse {
                out = tape.gather_rows(out, reversal.to_vec());
            }
            outs.push(out);
            finals.push(h);
        }
        (tape.concat_cols(&outs), tape.concat_cols(&finals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::to_time_major;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reversal_is_per_sample() {
        let lay = SeqLayout::new(&[3, 1], 3);
        // rows: s*2 + b
        assert_eq!(lay.reversal(), vec![4, 1, 2, 3, 0, 5]);
        assert_eq!(lay.step_mask::<f64>(0), None);
        assert_eq!(lay.step_mask::<f64>(1), Some(vec![1.0, 0.0]));
        let w: Vec<f64> = lay.mean_weights(3);
        assert!((w.iter().sum::<f64>() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn positions_are_exclusive_cumsum() {
        let v = Array3::from_shape_vec((1, 3, 3), vec![1.0, 2.0, -1.0, 3.0, 4.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = position_features(&v, &[3]);
        assert_eq!(f.slice(ndarray::s![0, .., 3]).to_vec(), vec![0.0, 1.0, 4.0]);
        assert_eq!(f.slice(ndarray::s![0, .., 4]).to_vec(), vec![0.0, 2.0, 6.0]);
    }

    #[test]
    fn padding_does_not_leak() {
        let spec = BiGruSpec { input: 2, cond: 1, hidden: 4 };
        let mut store = ParamStore::<f64>::new();
        spec.register(&mut store, "g", &mut ChaCha8Rng::seed_from_u64(0));
        let run = |x: &Array3<f64>, lens: &[usize]| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let lay = SeqLayout::new(lens, x.dim().1);
            let inp = tape.leaf(to_time_major(x));
            let c = tape.leaf(Array2::from_shape_vec((x.dim().0, 1), vec![0.5; x.dim().0]).unwrap());
            let (out, fin) = spec.forward(&mut tape, &p, inp, Some(c), &lay, &lay.reversal());
            (tape.value(out).clone(), tape.value(fin).clone())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let short: Array3<f64> = crate::diffusion::standard_normal((1, 3, 2), &mut rng);
        let mut padded = Array3::from_elem((2, 5, 2), 9.0);
        padded.slice_mut(ndarray::s![0, 0..3, ..]).assign(&short.slice(ndarray::s![0, .., ..]));
        let (o1, f1) = run(&short, &[3]);
        let (o2, f2) = run(&padded, &[3, 5]);
        for s in 0..3 {
            for c in 0..8 {
                assert!((o1[[s, c]] - o2[[s * 2, c]]).abs() < 1e-12);
            }
        }
        for c in 0..8 {
            assert!((f1[[0, c]] - f2[[0, c]]).abs() < 1e-12);
        }
    }
}
