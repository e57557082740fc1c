//! Small dense helpers on top of nalgebra. Everything here works with
//! zero-sized matrices so that empty channels need no special casing.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Assemble a dense matrix from a grid of blocks. Row heights are taken from
/// the first column, column widths from the first row.
pub fn block(grid: &[&[&Mat]]) -> Mat {
    if grid.is_empty() {
        return zeros(0, 0);
    }
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    let mut out = zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in grid.iter().enumerate() {
        assert_eq!(row.len(), widths.len(), "ragged block grid");
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            assert_eq!(b.shape(), (heights[i], widths[j]), "block ({i},{j}) has wrong shape");
            out.view_mut((r0, c0), b.shape()).copy_from(b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out
}

pub fn vstack(parts: &[&Mat]) -> Mat {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "vstack column mismatch");
        out.view_mut((r0, 0), p.shape()).copy_from(p);
        r0 += p.nrows();
    }
    out
}

pub fn hstack(parts: &[&Mat]) -> Mat {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = zeros(rows, cols);
    let mut c0 = 0;
    for p in parts {
        assert_eq!(p.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c0), p.shape()).copy_from(p);
        c0 += p.ncols();
    }
    out
}

pub fn block_diag(parts: &[&Mat]) -> Mat {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for p in parts {
        out.view_mut((r0, c0), p.shape()).copy_from(p);
        r0 += p.nrows();
        c0 += p.ncols();
    }
    out
}

pub fn diag_vec(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(v))
}

pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    // the unbounded QR iteration can stall on nilpotent blocks
    match nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        Some(s) => s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_estimate(a),
    }
}

/// `||A^(2^k)||^(1/2^k)` for growing `k`; converges to the spectral radius from above.
fn gelfand_estimate(a: &Mat) -> f64 {
    let mut m = a.clone();
    let mut exp = 1.0;
    let mut log_scale = 0.0;
    for _ in 0..30 {
        let n = m.norm();
        if n == 0.0 {
            return 0.0;
        }
        m /= n;
        log_scale = 2.0 * (log_scale + n.ln());
        m = &m * &m;
        exp *= 2.0;
    }
    ((log_scale + m.norm().max(f64::MIN_POSITIVE).ln()) / exp).exp()
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of the symmetric part of `a`.
pub fn sym_eig_range(a: &Mat) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let e = symmetrize(a).symmetric_eigenvalues();
    (e.min(), e.max())
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn is_zero(a: &Mat) -> bool {
    a.iter().all(|v| *v == 0.0)
}

pub fn quad(m: &Mat, v: &Vector) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.dot(&(m * v))
}

/// Symmetric matrix square root of a positive semidefinite matrix.
pub fn psd_sqrt(a: &Mat) -> Mat {
    let e = symmetrize(a).symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * Mat::from_diagonal(&d) * e.eigenvectors.transpose()
}

pub fn condition_number(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Row-major nested-array (de)serialisation for matrices.
pub mod serde_mat {
    use super::Mat;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    /// Rectangular rows to a matrix; an empty list gives a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
            return Err(format!("row {} has {} entries, expected {ncols}", i + 1, rows[i].len()));
        }
        Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub mod map {
        use std::collections::BTreeMap;

        use super::super::Mat;
        use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, Mat>, s: S) -> Result<S::Ok, S::Error> {
            let rows: BTreeMap<&String, Vec<Vec<f64>>> = m.iter().map(|(k, v)| (k, super::to_rows(v))).collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Mat>, D::Error> {
            let raw = BTreeMap::<String, Vec<Vec<f64>>>::deserialize(d)?;
            raw.into_iter()
                .map(|(k, v)| super::from_rows(&v).map(|m| (k.clone(), m)).map_err(|e| D::Error::custom(format!("{k}: {e}"))))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and_stacks_agree() {
        let a = from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = from_rows(&[&[5.0], &[6.0]]);
        let c = from_rows(&[&[7.0, 8.0]]);
        let d = from_rows(&[&[9.0]]);
        let m = block(&[&[&a, &b], &[&c, &d]]);
        let m2 = vstack(&[&hstack(&[&a, &b]), &hstack(&[&c, &d])]);
        assert_eq!(m, m2);
        assert_eq!(m[(2, 2)], 9.0);
    }

    #[test]
    fn spectral_radius_of_shift_blocks_terminates() {
        let mut a = zeros(2, 2);
        a[(1, 0)] = 1.0;
        assert_eq!(spectral_radius(&zeros(1, 1)), 0.0);
        assert!(spectral_radius(&a) < 1e-6);
        let k = crate::linalg::kron(&eye(2), &a);
        assert!(spectral_radius(&k) < 1e-6);
    }

    #[test]
    fn gelfand_estimate_matches_eigenvalues() {
        let a = from_rows(&[&[0.5, 3.0], &[0.0, -0.8]]);
        assert!((gelfand_estimate(&a) - 0.8).abs() < 1e-6);
        assert_eq!(gelfand_estimate(&zeros(2, 2)), 0.0);
    }

    #[test]
    fn empty_matrices_are_fine() {
        let e = zeros(0, 3);
        let a = from_rows(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(vstack(&[&e, &a]), a);
        assert_eq!(spectral_radius(&zeros(0, 0)), 0.0);
        assert_eq!(sym_eig_range(&zeros(0, 0)), (0.0, 0.0));
        assert_eq!(block_diag(&[&zeros(0, 0), &eye(2)]), eye(2));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let s = psd_sqrt(&a);
        assert!((&s * &s - &a).norm() < 1e-12);
    }
}
