use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest feature rows accepted on either side.
pub const MIN_ITEMS: usize = 32;
const JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frechet {
    pub distance: f64,
    /// Whether diagonal jitter was needed for a singular covariance.
    pub jittered: bool,
}

fn moments(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        let c = DVector::from_fn(d, |j, _| row[j] - mean[j]);
        cov += &c * c.transpose();
    }
    (mean, cov / (n as f64 - 1.0))
}

/// Symmetric square root with negative eigenvalues clipped to zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max().max(0.0);
    eig.eigenvalues.min() <= 1e-12 * max.max(1e-300)
}

/// Fréchet distance between Gaussians fitted to two feature matrices:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// The cross term is computed as `tr((R S2 R)^(1/2))` with `R = S1^(1/2)`,
/// which keeps every square root symmetric.
pub fn frechet_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<Frechet> {
    if a.nrows() < MIN_ITEMS || b.nrows() < MIN_ITEMS {
        return Err(Error::Metric(format!(
            "Fréchet distance needs at least {MIN_ITEMS} items per side, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Metric("feature dimensions differ".into()));
    }
    let (m1, mut s1) = moments(a);
    let (m2, mut s2) = moments(b);
    let jittered = is_singular(&s1) || is_singular(&s2);
    if jittered {
        let d = s1.nrows();
        s1 += DMatrix::identity(d, d) * JITTER;
        s2 += DMatrix::identity(d, d) * JITTER;
    }
    let r = sqrtm_psd(&s1);
    let cross = sqrtm_psd(&(&r * &s2 * &r)).trace();
    let diff = &m1 - &m2;
    let distance = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(Frechet { distance: distance.max(0.0), jittered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_collections_are_at_zero() {
        let x: Array2<f64> = standard_normal((64, 5), &mut ChaCha8Rng::seed_from_u64(0));
        let f = frechet_distance(&x, &x).unwrap();
        assert!(f.distance < 1e-8, "{f:?}");
        assert!(!f.jittered);
    }

    #[test]
    fn mean_shift_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Array2<f64> = standard_normal((20_000, 4), &mut rng);
        let b: Array2<f64> = standard_normal((20_000, 4), &mut rng);
        let m = [1.0, -0.5, 0.25, 2.0];
        let shifted = Array2::from_shape_fn(b.dim(), |(i, j)| b[[i, j]] + m[j]);
        let expect: f64 = m.iter().map(|x| x * x).sum();
        let f = frechet_distance(&a, &shifted).unwrap().distance;
        assert!((f - expect).abs() < 0.05 * expect, "{f} vs {expect}");
        let g = frechet_distance(&shifted, &a).unwrap().distance;
        assert!((f - g).abs() < 1e-9);
        let half = Array2::from_shape_fn(b.dim(), |(i, j)| b[[i, j]] + 0.5 * m[j]);
        assert!(frechet_distance(&a, &half).unwrap().distance < f);
    }

    #[test]
    fn singular_covariance_gets_jitter() {
        let x: Array2<f64> = standard_normal((40, 3), &mut ChaCha8Rng::seed_from_u64(2));
        let mut y = x.clone();
        y.column_mut(2).fill(0.0);
        assert!(frechet_distance(&x, &y).unwrap().jittered);
        assert!(frechet_distance(&x.slice(ndarray::s![..10, ..]).to_owned(), &x).is_err());
    }
}
