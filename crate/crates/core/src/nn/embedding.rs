use ndarray::Array1;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sinusoidal embedding of a diffusion step: entry `2i` is
/// `sin(t / 10000^(2i/dim))` and entry `2i+1` the matching cosine.
pub fn time_embedding<F: Scalar>(t: usize, dim: usize) -> Result<Array1<F>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dimension must be even, got {dim}")));
    }
    let mut out = Array1::zeros(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / dim as f64);
        let arg = t as f64 / freq;
        out[2 * i] = F::of(arg.sin());
        out[2 * i + 1] = F::of(arg.cos());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_pair_and_bounds() {
        let e = time_embedding::<f64>(37, 16).unwrap();
        assert_eq!((e[0], e[1]), (37f64.sin(), 37f64.cos()));
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(time_embedding::<f64>(3, 15).is_err());
    }

    #[test]
    fn all_steps_distinct() {
        let embs: Vec<Array1<f64>> = (1..=1000).map(|t| time_embedding(t, 32).unwrap()).collect();
        let mut min_gap = f64::INFINITY;
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d = (&embs[i] - &embs[j]).mapv(|x| x * x).sum().sqrt();
                min_gap = min_gap.min(d);
            }
        }
        assert!(min_gap > 0.0);
    }
}
