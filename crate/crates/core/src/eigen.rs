//! Cyclic Jacobi diagonalization of small dense complex Hermitian matrices.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spin::CMatrix;

const MAX_SWEEPS: usize = 100;
const HERMITIAN_TOL: f64 = 1e-9;
const CONVERGENCE_TOL: f64 = 1e-13;

/// Ascending eigenvalues with eigenvectors stored as matrix columns.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn off_norm(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Largest |H_ij - conj(H_ji)|.
pub fn hermitian_defect(h: &CMatrix) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn jacobi_eigh(h: &CMatrix) -> Result<Eigh> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::InvalidInput(format!("matrix is {}x{}, not square", n, h.ncols())));
    }
    let scale = frobenius(h);
    let defect = hermitian_defect(h);
    if defect > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::NotHermitian { max_asymmetry: defect });
    }

    let mut a = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let mut v = CMatrix::identity(n, n);
    let target = CONVERGENCE_TOL * scale;

    let mut converged = off_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 || mag <= f64::EPSILON * 1e-3 * scale {
                    a[(p, q)] = Complex64::new(0.0, 0.0);
                    a[(q, p)] = Complex64::new(0.0, 0.0);
                    continue;
                }
                rotate(&mut a, &mut v, p, q);
            }
        }
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::NotConverged {
            sweeps,
            off_norm: off_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&k| a[(k, k)].re).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut c = v.column(k).into_owned();
        fix_phase(c.as_mut_slice());
        vectors.set_column(col, &c);
    }
    Ok(Eigh { values, vectors })
}

/// One complex Jacobi rotation zeroing a[p, q].
///
/// The block [[a, h], [h*, b]] is first made real by P = diag(1, e^{-iφ})
/// with h = |h| e^{iφ}, then rotated by the real Givens G = [[c, s], [-s, c]].
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let n = a.nrows();
    let h = a[(p, q)];
    let r = h.norm();
    let phase = h / r;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // W = P G
    let w_pp = Complex64::new(c, 0.0);
    let w_pq = Complex64::new(s, 0.0);
    let w_qp = -phase.conj() * s;
    let w_qq = phase.conj() * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * w_pp + akq * w_qp;
        a[(k, q)] = akp * w_pq + akq * w_qq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = w_pp.conj() * apk + w_qp.conj() * aqk;
        a[(q, k)] = w_pq.conj() * apk + w_qq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * w_pp + vkq * w_qp;
        v[(k, q)] = vkp * w_pq + vkq * w_qq;
    }
}

/// Rotates the vector so that its largest-magnitude component (first one on
/// ties) is real and positive.
pub fn fix_phase(c: &mut [Complex64]) {
    let max = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let k = c
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    let ph = c[k].conj() / c[k].norm();
    for z in c.iter_mut() {
        *z *= ph;
    }
}
