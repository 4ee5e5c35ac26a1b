//! Small Hermitian-matrix toolkit on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// Frobenius norm of the anti-Hermitian part relative to the norm of `m`.
pub fn anti_hermitian_ratio(m: &CMatrix) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((m - m.adjoint()).map(|z| z * 0.5)).norm() / norm
}

/// Eigen-decomposition of a Hermitian matrix. Only the Hermitian part of `m` is used.
pub fn eigh(m: &CMatrix) -> (DVector<f64>, CMatrix) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    (eig.eigenvalues, eig.eigenvectors)
}

/// Applies a real function to the spectrum: V f(Λ) V†.
pub fn spectral_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (values, vectors) = eigh(m);
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * f(values[j])
    });
    hermitian_part(&(scaled * vectors.adjoint()))
}

pub fn sqrt_psd(m: &CMatrix) -> CMatrix {
    spectral_map(m, |v| v.max(0.0).sqrt())
}

pub fn trace_re(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Frobenius-nearest positive semidefinite matrix (eigenvalue clipping at zero)
/// and the Frobenius distance moved.
pub fn nearest_psd(m: &CMatrix) -> (CMatrix, f64) {
    let h = hermitian_part(m);
    let (values, _) = eigh(&h);
    if values.iter().all(|&v| v >= 0.0) {
        let distance = (m - &h).norm();
        return (h, distance);
    }
    let projected = spectral_map(&h, |v| v.max(0.0));
    let distance = (m - &projected).norm();
    (projected, distance)
}


/// Serde adapter writing complex matrices as nested row arrays of `[re, im]` pairs.
pub mod serde_cmatrix {
    use super::CMatrix;
    use num_complex::Complex64;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix, String> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged complex matrix".into());
        }
        Ok(CMatrix::from_fn(n, cols, |i, j| {
            Complex64::new(rows[i][j][0], rows[i][j][1])
        }))
    }

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}
