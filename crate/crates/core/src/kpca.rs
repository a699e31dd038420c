//! Kernel principal component analysis with a polynomial kernel.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::Tensor;

const DESCRIPTOR_HEADER: &str = "kpca v1";

/// Eigenvalues at or below this fraction of the largest are rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// `(gamma * <x, y> + coef0)^degree`
pub fn poly_kernel(x: &[f64], y: &[f64], gamma: f64, coef0: f64, degree: u32) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::param(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(poly_unchecked(x, y, gamma, coef0, degree))
}

fn poly_unchecked(x: &[f64], y: &[f64], gamma: f64, coef0: f64, degree: u32) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (gamma * dot + coef0).powi(degree as i32)
}

/// A fitted kernel PCA.
#[derive(Clone, Debug, PartialEq)]
pub struct KpcaModel {
    training_vectors: Vec<Vec<f64>>,
    gamma: f64,
    coef0: f64,
    degree: u32,
    row_means: Vec<f64>,
    grand_mean: f64,
    /// Usable (positive, above tolerance) eigenvalues of the centered kernel, descending.
    eigenvalues: Vec<f64>,
    /// `[N x n_components]`, row-major by training point.
    dual_coefficients: Vec<Vec<f64>>,
    n_components: usize,
}

impl KpcaModel {
    /// Assembles a model from stored parts (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        training_vectors: Vec<Vec<f64>>,
        gamma: f64,
        coef0: f64,
        degree: u32,
        row_means: Vec<f64>,
        grand_mean: f64,
        eigenvalues: Vec<f64>,
        dual_coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = training_vectors.len();
        let n_components = dual_coefficients.first().map_or(0, Vec::len);
        if row_means.len() != n || dual_coefficients.len() != n {
            return Err(Error::shape("KPCA parts disagree on training-set size"));
        }
        if n_components == 0 || eigenvalues.len() < n_components {
            return Err(Error::shape("KPCA parts disagree on component count"));
        }
        Ok(Self {
            training_vectors,
            gamma,
            coef0,
            degree,
            row_means,
            grand_mean,
            eigenvalues,
            dual_coefficients,
            n_components,
        })
    }

    pub fn training_vectors(&self) -> &[Vec<f64>] {
        &self.training_vectors
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn coef0(&self) -> f64 {
        self.coef0
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dual_coefficients(&self) -> &[Vec<f64>] {
        &self.dual_coefficients
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn input_dim(&self) -> usize {
        self.training_vectors.first().map_or(0, Vec::len)
    }

    /// Projects rows of `x` onto the fitted components.
    pub fn transform(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.input_dim();
        if let Some(row) = x.iter().find(|r| r.len() != d) {
            return Err(Error::param(format!(
                "query has dimension {}, model was fitted on {d}",
                row.len()
            )));
        }
        let n = self.training_vectors.len() as f64;
        Ok(x.iter()
            .map(|q| {
                let k: Vec<f64> = self
                    .training_vectors
                    .iter()
                    .map(|t| poly_unchecked(q, t, self.gamma, self.coef0, self.degree))
                    .collect();
                let q_mean = k.iter().sum::<f64>() / n;
                let mut out = vec![0.0; self.n_components];
                for ((ki, rm), alpha) in k.iter().zip(&self.row_means).zip(&self.dual_coefficients) {
                    let kc = ki - q_mean - rm + self.grand_mean;
                    for (o, a) in out.iter_mut().zip(alpha) {
                        *o += kc * a;
                    }
                }
                out
            })
            .collect())
    }

    /// Cumulative explained-variance ratios over the usable rank.
    pub fn explained_variance(&self) -> Vec<f64> {
        cumulative_explained_variance(&self.eigenvalues)
    }

    /// Training vectors, centering statistics and coefficients as named matrices;
    /// kernel parameters as descriptor metadata.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(format!(
            "{DESCRIPTOR_HEADER}\ngamma={}\ncoef0={}\ndegree={}\ngrand_mean={}\n",
            self.gamma, self.coef0, self.degree, self.grand_mean
        ));
        let n = self.training_vectors.len();
        let vectors = Tensor::from_vec(
            &[n, self.input_dim()],
            self.training_vectors.iter().flatten().copied().collect(),
        )
        .expect("training vectors are rectangular");
        let coefs = Tensor::from_vec(
            &[n, self.n_components],
            self.dual_coefficients.iter().flatten().copied().collect(),
        )
        .expect("coefficients are rectangular");
        c.push("training_vectors", vectors);
        c.push("row_means", Tensor::from_vec(&[n], self.row_means.clone()).expect("length n"));
        c.push(
            "eigenvalues",
            Tensor::from_vec(&[self.eigenvalues.len()], self.eigenvalues.clone()).expect("1-d"),
        );
        c.push("dual_coefficients", coefs);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.descriptor.lines().next() != Some(DESCRIPTOR_HEADER) {
            return Err(Error::param("checkpoint does not describe a KPCA model"));
        }
        let scalar = |key: &str| -> Result<f64> {
            let v = c.meta(key).ok_or_else(|| Error::Lookup {
                kind: "KPCA metadata",
                name: key.to_string(),
            })?;
            v.parse().map_err(|e| Error::param(format!("KPCA metadata {key}='{v}': {e}")))
        };
        let degree = scalar("degree")?;
        if degree.fract() != 0.0 || !(1.0..=16.0).contains(&degree) {
            return Err(Error::param(format!("KPCA degree {degree} is not a small positive integer")));
        }
        let rows = |name: &str| -> Result<Vec<Vec<f64>>> {
            let t = c.require(name)?;
            if t.shape().len() != 2 {
                return Err(Error::shape(format!("{name} must be a matrix")));
            }
            Ok(t.to_rows())
        };
        Self::from_parts(
            rows("training_vectors")?,
            scalar("gamma")?,
            scalar("coef0")?,
            degree as u32,
            c.require("row_means")?.data().to_vec(),
            scalar("grand_mean")?,
            c.require("eigenvalues")?.data().to_vec(),
            rows("dual_coefficients")?,
        )
    }
}

/// Cumulative sums of the positive entries of a descending spectrum,
/// divided by their total.
pub fn cumulative_explained_variance(eigenvalues: &[f64]) -> Vec<f64> {
    let positive: Vec<f64> = eigenvalues.iter().copied().filter(|v| *v > 0.0).collect();
    let total: f64 = positive.iter().sum();
    let mut acc = 0.0;
    positive
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect()
}

/// Fits kernel PCA on the rows of `x`.
pub fn fit_kpca(x: &[Vec<f64>], n_components: usize, gamma: f64, coef0: f64) -> Result<KpcaModel> {
    fit_kpca_with_degree(x, n_components, gamma, coef0, 3)
}

pub fn fit_kpca_with_degree(
    x: &[Vec<f64>],
    n_components: usize,
    gamma: f64,
    coef0: f64,
    degree: u32,
) -> Result<KpcaModel> {
    let n = x.len();
    if n_components == 0 {
        return Err(Error::param("n_components must be at least 1"));
    }
    if n_components > n {
        return Err(Error::param(format!(
            "n_components {n_components} exceeds {n} training points"
        )));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::shape("training rows have unequal dimensions"));
    }

    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = poly_unchecked(&x[i], &x[j], gamma, coef0, degree);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] += grand_mean - row_means[i] - row_means[j];
        }
    }

    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let usable: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| lambda_max > 0.0 && eig.eigenvalues[i] > RANK_TOLERANCE * lambda_max)
        .collect();
    if usable.len() < n_components {
        return Err(Error::Rank {
            requested: n_components,
            usable: usable.len(),
        });
    }

    let mut dual = vec![vec![0.0; n_components]; n];
    for (c, &i) in usable[..n_components].iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        // Sign convention: largest-magnitude coefficient positive.
        let pivot = (0..n).fold(0, |best, r| if v[r].abs() > v[best].abs() { r } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / lambda.sqrt();
        for (r, row) in dual.iter_mut().enumerate() {
            row[c] = v[r] * scale;
        }
    }

    Ok(KpcaModel {
        training_vectors: x.to_vec(),
        gamma,
        coef0,
        degree,
        row_means,
        grand_mean,
        eigenvalues: usable.iter().map(|&i| eig.eigenvalues[i]).collect(),
        dual_coefficients: dual,
        n_components,
    })
}
