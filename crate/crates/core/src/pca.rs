//! Two-component PCA for inspecting learned representations.

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues below this share of the total variance count as zero.
const RANK_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric `n×n` matrix (row-major) by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(crate::error::dim_err("symmetric_eigen", &[a.len()], &[n, n]));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..n).map(|k| v[k * n + j]).collect())
        .collect();
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Share of total variance along each component.
    pub explained: [f64; 2],
    pub coords: Vec<[f64; 2]>,
    /// Set when fewer than two directions carry variance; the coordinates
    /// along a missing direction are zero.
    pub rank_deficient: bool,
}

/// Centers the rows of `states` and projects them onto the top two
/// eigenvectors of the sample covariance.
pub fn pca_project(states: &Tensor) -> Result<Projection> {
    let (n, d) = states.dims2()?;
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least two rows, got {n}")));
    }
    let x = states.data();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<f64> = (0..n * d).map(|k| x[k] - mean[k % d]).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = &centered[i * d..(i + 1) * d];
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= (n - 1) as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let (values, mut vectors) = symmetric_eigen(&cov, d)?;
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut comps: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    let mut active = [false; 2];
    for k in 0..2.min(d) {
        let mut vk = std::mem::take(&mut vectors[k]);
        fix_sign(&mut vk);
        comps[k] = vk;
        let lam = values[k].max(0.0);
        active[k] = total > 0.0 && lam > RANK_TOL * total;
        explained[k] = if total > 0.0 { lam / total } else { 0.0 };
    }
    let coords = (0..n)
        .map(|i| {
            let row = &centered[i * d..(i + 1) * d];
            [0, 1].map(|k| {
                if active[k] {
                    row.iter().zip(&comps[k]).map(|(a, b)| a * b).sum()
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(Projection {
        mean,
        components: comps,
        explained,
        coords,
        rank_deficient: !(active[0] && active[1]),
    })
}

/// Mean of the selected 2-D points, or `None` when nothing is selected.
pub fn centroid(coords: &[[f64; 2]], keep: impl Fn(usize) -> bool) -> Option<[f64; 2]> {
    let sel: Vec<&[f64; 2]> = coords.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, c)| c).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some([
        sel.iter().map(|c| c[0]).sum::<f64>() / n,
        sel.iter().map(|c| c[1]).sum::<f64>() / n,
    ])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Root-mean-square distance of the points from their mean.
fn spread(coords: &[[f64; 2]]) -> f64 {
    let c = centroid(coords, |_| true).unwrap_or([0.0, 0.0]);
    (coords.iter().map(|p| dist(*p, c).powi(2)).sum::<f64>() / coords.len().max(1) as f64).sqrt()
}

/// Alignment of one representation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub projection: Projection,
    /// Centroids keyed as `[source-negative, source-positive, target-negative, target-positive]`.
    pub centroids: [Option<[f64; 2]>; 4],
    /// Distance between the source-positive and target-positive centroids.
    pub positive_distance: f64,
    /// The same distance divided by the RMS spread of the projected cloud.
    pub positive_distance_normalized: f64,
}

/// PCA views of `h_spec` and `h_DA`, each fitted on both domains together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub domains: Vec<Domain>,
    pub labels: Vec<f64>,
    pub spec: StageReport,
    pub da: StageReport,
}

fn stage(states: &Tensor, domains: &[Domain], labels: &[f64]) -> Result<StageReport> {
    let projection = pca_project(states)?;
    let group = |dom: Domain, y: f64| centroid(&projection.coords, |i| domains[i] == dom && labels[i] == y);
    let centroids = [
        group(Domain::Source, 0.0),
        group(Domain::Source, 1.0),
        group(Domain::Target, 0.0),
        group(Domain::Target, 1.0),
    ];
    let (positive_distance, positive_distance_normalized) = match (centroids[1], centroids[3]) {
        (Some(s), Some(t)) => {
            let d = dist(s, t);
            let sp = spread(&projection.coords);
            (d, if sp > 0.0 { d / sp } else { 0.0 })
        }
        _ => (f64::NAN, f64::NAN),
    };
    Ok(StageReport {
        projection,
        centroids,
        positive_distance,
        positive_distance_normalized,
    })
}

pub fn projection_report(h_spec: &Tensor, h_da: &Tensor, domains: &[Domain], labels: &[f64]) -> Result<ProjectionReport> {
    let n = h_spec.dims2()?.0;
    if h_da.dims2()?.0 != n || domains.len() != n || labels.len() != n {
        return Err(Error::Contract("projection inputs disagree on the number of rows".into()));
    }
    Ok(ProjectionReport {
        domains: domains.to_vec(),
        labels: labels.to_vec(),
        spec: stage(h_spec, domains, labels)?,
        da: stage(h_da, domains, labels)?,
    })
}

impl ProjectionReport {
    /// Tab-separated rows `x, y, domain, label, stage` for both stages.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("x\ty\tdomain\tlabel\tstage\n");
        for (name, st) in [("spec", &self.spec), ("DA", &self.da)] {
            for (i, c) in st.projection.coords.iter().enumerate() {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{name}\n",
                    c[0],
                    c[1],
                    self.domains[i].as_str(),
                    self.labels[i]
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_eigen() {
        let (vals, vecs) = symmetric_eigen(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert!((vecs[0][1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_points_have_no_second_component() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&Tensor::from_rows(&rows).unwrap()).unwrap();
        assert!(p.rank_deficient);
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-12));
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let rows = vec![vec![-3.0, 0.1], vec![3.0, -0.1], vec![0.0, 0.0], vec![0.5, 1.0]];
        let p = pca_project(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for c in &p.components {
            let big = c.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn single_row_is_degenerate() {
        assert!(pca_project(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).is_err());
    }
}
