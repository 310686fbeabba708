//! PCA projection of feature sets for scatter plots.

use log::warn;

use crate::error::{Error, Result};
use crate::network::Model;
use crate::pipeline::{model_inputs, PreparedPoint};

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Stops once the off-diagonal Frobenius norm falls below
/// `tol` times the full Frobenius norm. Returns eigenvalues and the matching
/// eigenvectors as rows, in no particular order.
pub fn jacobi_eigen(a: &[f64], n: usize, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != n * n {
        return Err(Error::Shape(format!("{} values for a {n}x{n} matrix", a.len())));
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                return Err(Error::invalid("matrix is not symmetric"));
            }
        }
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > tol * total && total > 0.0 {
        if sweeps == max_sweeps {
            warn!("Jacobi stopped after {max_sweeps} sweeps without converging");
            break;
        }
        sweeps += 1;
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
    let values = (0..n).map(|i| m[i * n + i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i * n + j]).collect()).collect();
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `D`.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Every eigenvalue of the covariance, non-increasing.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fraction of the total variance captured by the retained components.
    pub fn explained_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            0.0
        } else {
            self.explained_variance.iter().sum::<f64>() / total
        }
    }
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("rows have different lengths".into()));
    }
    Ok(d)
}

/// Sample covariance (divisor `N - 1`) of the rows of `x`, with the mean.
pub fn covariance(x: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = check_rows(x)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least 2 rows"));
    }
    let mut mean = vec![0.0; d];
    for r in x {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in x {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((cov, mean))
}

/// Top-`k` principal components. Each component's largest-magnitude entry
/// is made positive (first such entry on ties).
pub fn pca_fit(x: &[Vec<f64>], k: usize) -> Result<Pca> {
    let d = check_rows(x)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(format!("k = {k} out of range for {n} rows of dimension {d}")));
    }
    let (cov, mean) = covariance(x)?;
    let (values, vectors) = jacobi_eigen(&cov, d, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut c = vectors[i].clone();
            let mut big = 0;
            for (j, v) in c.iter().enumerate() {
                if v.abs() > c[big].abs() {
                    big = j;
                }
            }
            if c[big] < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect();
    let explained_variance = eigenvalues[..k].to_vec();
    if let Some(i) = explained_variance.iter().position(|&v| v < 1e-12) {
        warn!("PCA component {} has eigenvalue below 1e-12; data are rank deficient", i + 1);
    }
    Ok(Pca {
        mean,
        components,
        explained_variance,
        eigenvalues,
    })
}

/// `(x - mean) * components^T`.
pub fn pca_project(x: &[Vec<f64>], pca: &Pca) -> Result<Vec<Vec<f64>>> {
    x.iter()
        .map(|r| {
            if r.len() != pca.dim() {
                return Err(Error::Shape(format!("row of length {} for a PCA of dimension {}", r.len(), pca.dim())));
            }
            Ok(pca
                .components
                .iter()
                .map(|c| c.iter().zip(r).zip(&pca.mean).map(|((a, v), m)| a * (v - m)).sum())
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterFeatures {
    Gait,
    Gesture,
    GaitGesture,
    Deep,
}

impl std::str::FromStr for ScatterFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gait" => Ok(ScatterFeatures::Gait),
            "gesture" | "gestures" => Ok(ScatterFeatures::Gesture),
            "gait+gesture" | "gait+gestures" => Ok(ScatterFeatures::GaitGesture),
            "deep" => Ok(ScatterFeatures::Deep),
            _ => Err(Error::invalid(format!(
                "unknown feature selector '{s}' (expected gait, gesture, gait+gesture or deep)"
            ))),
        }
    }
}

/// Feature rows of the selected set: 29, 7, 36 or 32 columns.
pub fn feature_matrix(points: &[PreparedPoint], which: ScatterFeatures, model: Option<&Model>) -> Result<Vec<Vec<f64>>> {
    Ok(match which {
        ScatterFeatures::Gait => points.iter().map(|p| p.gait.0.to_vec()).collect(),
        ScatterFeatures::Gesture => points.iter().map(|p| p.gesture.0.to_vec()).collect(),
        ScatterFeatures::GaitGesture => points
            .iter()
            .map(|p| p.gait.0.iter().chain(&p.gesture.0).copied().collect())
            .collect(),
        ScatterFeatures::Deep => {
            let model = model.ok_or_else(|| Error::invalid("deep features need a trained model (--model)"))?;
            let inputs = model_inputs(model, points)?;
            let mut rows = Vec::with_capacity(points.len());
            for chunk in inputs.chunks(64) {
                rows.extend(model.deep_features(chunk)?);
            }
            rows
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub coords: Vec<Vec<f64>>,
    pub pca: Pca,
}

impl Scatter {
    pub fn to_csv(&self) -> String {
        let k = self.pca.components.len();
        let mut out = String::from("id,label");
        for i in 1..=k {
            out.push_str(&format!(",pc{i}"));
        }
        out.push('\n');
        for ((id, label), c) in self.ids.iter().zip(&self.labels).zip(&self.coords) {
            out.push_str(&format!("{id},{label}"));
            for v in c {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Distance between the two class centroids divided by the RMS distance
    /// of points to their own centroid, in the projected space.
    pub fn class_separation(&self) -> f64 {
        let k = self.pca.components.len();
        let mut cent = [vec![0.0; k], vec![0.0; k]];
        let mut count = [0usize; 2];
        for (l, c) in self.labels.iter().zip(&self.coords) {
            count[*l as usize] += 1;
            cent[*l as usize].iter_mut().zip(c).for_each(|(a, v)| *a += v);
        }
        if count.contains(&0) {
            return 0.0;
        }
        for (c, n) in cent.iter_mut().zip(count) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let within: f64 = self
            .labels
            .iter()
            .zip(&self.coords)
            .map(|(l, c)| dist(c, &cent[*l as usize]))
            .sum::<f64>()
            / self.coords.len() as f64;
        let between = dist(&cent[0], &cent[1]).sqrt();
        if within == 0.0 {
            f64::INFINITY
        } else {
            between / within.sqrt()
        }
    }
}

/// 3-D PCA scatter of one feature set, one row per point.
pub fn export_scatter(points: &[PreparedPoint], which: ScatterFeatures, model: Option<&Model>) -> Result<Scatter> {
    let x = feature_matrix(points, which, model)?;
    let pca = pca_fit(&x, 3)?;
    let coords = pca_project(&x, &pca)?;
    Ok(Scatter {
        ids: points.iter().map(|p| p.id().to_string()).collect(),
        labels: points.iter().map(|p| p.label).collect(),
        coords,
        pca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 / 4.0)).collect()).collect()
    }

    #[test]
    fn rank_one_data_is_fully_captured() {
        let dir = [0.3, -1.2, 0.5, 2.0];
        let mean = [5.0, -1.0, 0.0, 3.0];
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37 - 3.0;
                (0..4).map(|j| mean[j] + t * dir[j]).collect()
            })
            .collect();
        let pca = pca_fit(&x, 1).unwrap();
        assert!((pca.explained_ratio() - 1.0).abs() < 1e-10);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (c, d) in pca.components[0].iter().zip(dir) {
            assert!((c - d / norm).abs() < 1e-10);
        }
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let x = random_rows(200, 29, 1);
        let pca = pca_fit(&x, 29 - 1).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            for (j, b) in pca.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
        assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(pca.eigenvalues.iter().all(|&v| v >= 0.0));
        let (cov, _) = covariance(&x).unwrap();
        let trace: f64 = (0..29).map(|i| cov[i * 29 + i]).sum();
        assert!((pca.eigenvalues.iter().sum::<f64>() - trace).abs() < 1e-8);
    }

    #[test]
    fn sign_convention() {
        let pca = pca_fit(&random_rows(50, 6, 2), 3).unwrap();
        for c in &pca.components {
            let big = c.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn projection_properties() {
        let x = random_rows(40, 5, 3);
        let pca = pca_fit(&x, 3).unwrap();
        let p = pca_project(std::slice::from_ref(&pca.mean), &pca).unwrap();
        assert!(p[0].iter().all(|v| v.abs() < 1e-12));

        let shifted: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v + 7.5).collect()).collect();
        let a = pca_project(&x, &pca).unwrap();
        let b = pca_project(&shifted, &pca_fit(&shifted, 3).unwrap()).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-10);
            }
        }

        let n = a.len() as f64;
        for (c, ev) in pca.explained_variance.iter().enumerate() {
            let var = a.iter().map(|r| r[c] * r[c]).sum::<f64>() / (n - 1.0);
            assert!((var - ev).abs() < 1e-8);
        }
        assert!(pca_project(&[vec![0.0; 4]], &pca).is_err());
    }

    #[test]
    fn projection_is_isometric_on_the_span() {
        let basis = [[0.6, 0.8, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [-0.8, 0.6, 0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let w: [f64; 3] = [rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)];
                (0..4).map(|j| 1.0 + (0..3).map(|i| w[i] * basis[i][j]).sum::<f64>()).collect()
            })
            .collect();
        let pca = pca_fit(&x, 3).unwrap();
        let p = pca_project(&x, &pca).unwrap();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        for i in 0..x.len() {
            for j in 0..x.len() {
                assert!((d(&x[i], &x[j]) - d(&p[i], &p[j])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bad_arguments() {
        let x = random_rows(5, 3, 5);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&x[..1], 1).is_err());
        assert!("pose".parse::<ScatterFeatures>().is_err());
        assert!(jacobi_eigen(&[1.0, 2.0, 3.0, 4.0], 2, 1e-12, 10).is_err());
    }

    #[test]
    fn deep_scatter_needs_a_model() {
        let err = feature_matrix(&[], ScatterFeatures::Deep, None).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
