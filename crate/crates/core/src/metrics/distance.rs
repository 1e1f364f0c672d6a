use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::map_indexed;
use crate::error::{Error, Result};
use crate::models::LatentModel;
use crate::rng;
use crate::tensor::Tensor;

/// Mean squared error over all entries of paired sample sets.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!("mse: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.numel() as f64)
}

fn check_sets(name: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::Dim(format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sorted_projection(set: &Tensor, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = (0..set.rows())
        .map(|i| set.row_slice(i).iter().zip(dir).map(|(&v, &d)| v as f64 * d).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Sliced Wasserstein-2 distance: the mean over `n_proj` random unit
/// directions of the 1-D W2 distance between the projected sets. Sets of
/// different sizes are matched by quantile.
pub fn swd(a: &Tensor, b: &Tensor, n_proj: usize, seed: u64, threads: usize) -> Result<f64> {
    check_sets("swd", a, b)?;
    if n_proj == 0 {
        return Err(Error::Metric("swd needs at least one projection".into()));
    }
    let dim = a.cols();
    let per_proj = map_indexed(n_proj, threads, |k| {
        let mut r = rng::stream(seed, k as u64);
        let mut dir: Vec<f64> = (0..dim).map(|_| rng::gaussian(&mut r) as f64).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        let pa = sorted_projection(a, &dir);
        let pb = sorted_projection(b, &dir);
        let n = pa.len().max(pb.len());
        let sq: f64 = (0..n)
            .map(|i| {
                let d = pa[i * pa.len() / n] - pb[i * pb.len() / n];
                d * d
            })
            .sum();
        Ok((sq / n as f64).sqrt())
    })?;
    Ok(per_proj.iter().sum::<f64>() / n_proj as f64)
}

fn mean_and_cov(f: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (f.rows(), f.cols());
    let m = DMatrix::from_row_iterator(n, d, f.data().iter().map(|&v| v as f64));
    let mean = m.row_mean().transpose();
    let centred = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    (mean, cov)
}

fn eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, 1e-12, 10_000)
        .ok_or_else(|| Error::Metric("eigendecomposition did not converge".into()))
}

/// Frechet distance between Gaussians fitted to two feature sets:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
pub fn ffd_features(fa: &Tensor, fb: &Tensor) -> Result<f64> {
    check_sets("ffd", fa, fb)?;
    let d = fa.cols();
    if fa.rows() <= d || fb.rows() <= d {
        return Err(Error::Metric(format!(
            "ffd needs more samples than feature dimensions ({d}), got {} and {}",
            fa.rows(),
            fb.rows()
        )));
    }
    let (ma, ca) = mean_and_cov(fa);
    let (mb, cb) = mean_and_cov(fb);
    // tr (S_a S_b)^(1/2) = tr (S_a^(1/2) S_b S_a^(1/2))^(1/2), which is symmetric PSD.
    let ea = eigen(ca.clone())?;
    let sqrt_vals = ea.eigenvalues.map(|v| v.max(0.0).sqrt());
    let sqrt_a = &ea.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * ea.eigenvectors.transpose();
    let inner = &sqrt_a * &cb * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = eigen(inner)?.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let gap = (ma - mb).norm_squared();
    Ok((gap + ca.trace() + cb.trace() - 2.0 * cross).max(0.0))
}

/// [`ffd_features`] in the model's feature space.
pub fn ffd<M: LatentModel>(model: &M, a: &Tensor, b: &Tensor) -> Result<f64> {
    ffd_features(&model.features(a)?, &model.features(b)?)
}
