//! Principal-component projection of real-valued descriptors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormal top-variance basis plus the training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `target_dim` rows of length `source_dim`, sorted by variance.
    pub basis: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues of the kept components.
    pub variances: Vec<f64>,
}

impl Projection {
    pub fn source_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.len()
    }
}

pub fn fit_projection(descriptors: &[Vec<f32>], target_dim: usize) -> Result<Projection> {
    let n = descriptors.len();
    let dim = descriptors.first().map_or(0, Vec::len);
    if target_dim == 0 || target_dim > dim {
        return Err(Error::DegenerateInput(format!(
            "target dimension {target_dim} not in 1..={dim}"
        )));
    }
    if n < target_dim || n < 2 {
        return Err(Error::DegenerateInput(format!(
            "{n} samples cannot span {target_dim} dimensions"
        )));
    }
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::DegenerateInput("descriptor lengths differ".into()));
    }
    let mut mean = vec![0.0f64; dim];
    for d in descriptors {
        for (m, &v) in mean.iter_mut().zip(d) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for d in descriptors {
        let centered: Vec<f64> = d.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect();
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / (n as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = top * 1e-10 + 1e-300;
    if eig.eigenvalues[order[target_dim - 1]] <= rank_tol {
        return Err(Error::DegenerateInput(format!(
            "covariance rank below {target_dim}"
        )));
    }

    let mut basis = Vec::with_capacity(target_dim);
    let mut variances = Vec::with_capacity(target_dim);
    for &k in &order[..target_dim] {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: largest-magnitude component positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(v);
        variances.push(eig.eigenvalues[k]);
    }
    Ok(Projection {
        mean,
        basis,
        variances,
    })
}

pub fn project(p: &Projection, v: &[f32]) -> Vec<f32> {
    p.basis
        .iter()
        .map(|row| {
            row.iter()
                .zip(v.iter().zip(&p.mean))
                .map(|(b, (&x, m))| b * (x as f64 - m))
                .sum::<f64>() as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn output_dimension_and_orthonormal_basis() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..40).map(|_| rng.random::<f32>()).collect())
            .collect();
        let p = fit_projection(&data, 16).unwrap();
        assert_eq!(project(&p, &data[0]).len(), 16);
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = p.basis[i].iter().zip(&p.basis[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn planar_data_reconstructs_exactly() {
        // Points on the plane spanned by (1, 2, 0) and (0, 1, 1), offset.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f32>> = (0..50)
            .map(|_| {
                let (a, b) = (rng.random_range(-1.0..1.0f32), rng.random_range(-1.0..1.0f32));
                vec![a + 0.5, 2.0 * a + b - 1.0, b + 2.0]
            })
            .collect();
        let p = fit_projection(&data, 2).unwrap();
        for v in &data {
            let z = project(&p, v);
            for k in 0..3 {
                let rec = p.mean[k] + p.basis[0][k] * z[0] as f64 + p.basis[1][k] * z[1] as f64;
                assert!((rec - v[k] as f64).abs() <= 1e-5, "{rec} vs {}", v[k]);
            }
        }
        assert!(matches!(fit_projection(&data, 3), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn too_few_samples_is_degenerate() {
        let data = vec![vec![1.0f32, 2.0, 3.0], vec![0.0, 1.0, 5.0]];
        assert!(matches!(fit_projection(&data, 3), Err(Error::DegenerateInput(_))));
        assert!(matches!(fit_projection(&data, 4), Err(Error::DegenerateInput(_))));
    }
}
