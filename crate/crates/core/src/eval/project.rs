use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::store::EmbeddingStore;
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    /// `N x k` coordinates.
    pub coords: Matrix,
    /// `k x d` principal axes (unit rows, or zero rows for zero variance).
    pub axes: Matrix,
    pub mean: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

pub fn pca_project(store: &EmbeddingStore, k: usize) -> Result<Projection> {
    let rows: Vec<Vec<f64>> = (0..store.len()).map(|i| store.row_f64(i)).collect();
    let x = if rows.is_empty() {
        Matrix::zeros(0, store.dim())
    } else {
        Matrix::from_rows(&rows)?
    };
    pca_project_matrix(&x, k)
}

/// Projects mean-centred rows of `x` onto the top `k` eigenvectors of the
/// sample covariance. Each axis is signed so its largest-magnitude entry is
/// positive.
pub fn pca_project_matrix(x: &Matrix, k: usize) -> Result<Projection> {
    let (n, d) = (x.rows, x.cols);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("projection needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("cannot project {d}-dimensional data onto {k} axes")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = x.clone();
    for r in 0..n {
        for (v, m) in centred.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centred.matmul_tn(&centred).scale(1.0 / (n - 1) as f64);
    // Symmetrise against rounding in the product.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov.data));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut axes = Matrix::zeros(k, d);
    let mut ratios = vec![0.0; k];
    if total <= f64::EPSILON * d as f64 {
        warn!("data has zero variance; projection axes are zero");
    } else {
        for (a, &col) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(col);
            let mut pivot = 0;
            for i in 0..d {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..d {
                axes.set(a, i, sign * v[i]);
            }
            ratios[a] = eig.eigenvalues[col].max(0.0) / total;
        }
    }
    Ok(Projection {
        coords: centred.matmul_nt(&axes),
        axes,
        mean,
        explained_variance_ratio: ratios,
    })
}

impl Projection {
    /// `id,x,y,...` lines for the given ids.
    pub fn to_csv(&self, ids: &[String]) -> String {
        let mut out = String::from("id");
        for a in 0..self.coords.cols {
            out.push_str(&format!(",pc{}", a + 1));
        }
        out.push('\n');
        for (r, id) in ids.iter().enumerate() {
            out.push_str(id);
            for v in self.coords.row(r) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
