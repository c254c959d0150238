//! Row-major `[re, im]` pair encodings for complex matrices and vectors,
//! shared by every JSON interface in the crate.

use num_complex::Complex64 as C64;

use crate::operator::{CMat, CVec};

pub fn mat_to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn rows_to_mat(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
    let nr = rows.len();
    if nr == 0 {
        return Err("empty matrix".into());
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err("ragged matrix rows".into());
    }
    Ok(CMat::from_fn(nr, nc, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

pub fn square_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat, String> {
    let m = rows_to_mat(rows)?;
    if m.nrows() != m.ncols() {
        return Err(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()));
    }
    Ok(m)
}

pub fn vec_to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn pairs_to_vec(p: &[[f64; 2]]) -> CVec {
    CVec::from_fn(p.len(), |k, _| C64::new(p[k][0], p[k][1]))
}
