//! The Jacobi eigensolver and projection against nalgebra.

use dadin::pca::{pca_project, symmetric_eigen};
use dadin::tensor::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Anisotropic cloud so the leading eigenvalues are well separated.
    (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (d - j) as f64).collect())
        .collect()
}

/// Eigenpairs of the sample covariance, descending, signs following the
/// largest-magnitude-entry-positive convention.
fn oracle(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let (n, d) = (rows.len(), rows[0].len());
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (values, vectors, mean)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn projection_matches_nalgebra(n in 3usize..60, d in 2usize..9, seed in any::<u64>()) {
        let rows = random_rows(n, d, seed);
        let (values, vectors, mean) = oracle(&rows);
        let ours = pca_project(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
        for k in 0..2 {
            prop_assert!((ours.explained[k] - values[k] / total).abs() < 1e-9);
            // Component directions are only defined for distinct eigenvalues.
            let gap = |j: Option<&f64>| j.is_none_or(|v| (values[k] - v).abs() > 1e-6 * total);
            if gap(values.get(k + 1)) && gap(k.checked_sub(1).and_then(|j| values.get(j))) {
                for (a, b) in ours.components[k].iter().zip(&vectors[k]) {
                    prop_assert!((a - b).abs() < 1e-7, "component {}: {} vs {}", k, a, b);
                }
                for (i, row) in rows.iter().enumerate() {
                    let coord: f64 = row.iter().zip(&mean).zip(&vectors[k]).map(|((x, m), v)| (x - m) * v).sum();
                    prop_assert!((ours.coords[i][k] - coord).abs() < 1e-6 * (1.0 + coord.abs()));
                }
            }
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra(d in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sym: Vec<f64> = (0..d * d).map(|k| (a[k] + a[(k % d) * d + k / d]) / 2.0).collect();
        let (ours, vecs) = symmetric_eigen(&sym, d).unwrap();
        let mut theirs: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &sym)).eigenvalues.iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
        // A v = λ v for every returned pair.
        for (lam, v) in ours.iter().zip(&vecs) {
            for i in 0..d {
                let av: f64 = (0..d).map(|j| sym[i * d + j] * v[j]).sum();
                prop_assert!((av - lam * v[i]).abs() < 1e-9);
            }
        }
    }
}
