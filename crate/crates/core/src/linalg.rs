use nalgebra::{SMatrix, SVector};

pub(crate) type Vec6 = SVector<f64, 6>;
pub(crate) type Mat6 = SMatrix<f64, 6, 6>;

/// Symmetrizes `m` and clamps eigenvalues that dipped below zero from round-off.
pub(crate) fn make_psd(m: &Mat6) -> Mat6 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Mat6::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

/// Sample mean and unbiased covariance (+ `ridge`·I) of a non-empty set.
pub(crate) fn mean_cov(samples: &[Vec6], ridge: f64) -> (Vec6, Mat6) {
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vec6::zeros(), |acc, s| acc + s) / n;
    let mut cov = Mat6::zeros();
    if samples.len() > 1 {
        for s in samples {
            let d = s - mean;
            cov += d * d.transpose();
        }
        cov /= n - 1.0;
    }
    cov += Mat6::identity() * ridge;
    (mean, cov)
}
