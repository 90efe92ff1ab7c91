//! Small dense kernels on fixed-size matrices.
//!
//! Everything here works on `SMatrix<f64, D, D>` for the handful of sizes the
//! crate needs (2 and 3, occasionally the 2D x 2D block matrices). The
//! nonsymmetric eigenvalue path goes through nalgebra's real Schur form; the
//! rest is hand-rolled so it stays generic over the const dimension.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{GsmError, Result};

const JACOBI_MAX_SWEEPS: usize = 64;
const SCHUR_MAX_ITERS: usize = 2000;

/// Relative singularity threshold for the pivoted QR solver.
pub const QR_SINGULAR_RTOL: f64 = 1e-12;

/// Eigen-decomposition of a real symmetric matrix.
///
/// Eigenvalues are ascending. Each eigenvector column is signed so that its
/// largest-magnitude component (first one on ties) is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricEigen<const D: usize> {
    pub eigenvalues: SVector<f64, D>,
    pub eigenvectors: SMatrix<f64, D, D>,
}

impl<const D: usize> SymmetricEigen<D> {
    /// Cyclic Jacobi on the symmetrized input `(m + mᵀ) / 2`.
    pub fn new(m: &SMatrix<f64, D, D>) -> Result<Self> {
        let mut a = (m + m.transpose()) * 0.5;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(GsmError::InvalidParameter("non-finite matrix entry".into()));
        }
        let mut v = SMatrix::<f64, D, D>::identity();

        let mut converged = false;
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..D {
                for q in (p + 1)..D {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    if apq.abs() <= 1e-3 * f64::EPSILON * (app.abs() + aqq.abs()) {
                        a[(p, q)] = 0.0;
                        a[(q, p)] = 0.0;
                        continue;
                    }
                    rotated = true;
                    let theta = (aqq - app) / (2.0 * apq);
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..D {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..D {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    for k in 0..D {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(GsmError::EigenFailure);
        }

        let mut order: [usize; D] = std::array::from_fn(|i| i);
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));

        let mut eigenvalues = SVector::<f64, D>::zeros();
        let mut eigenvectors = SMatrix::<f64, D, D>::zeros();
        for (dst, &src) in order.iter().enumerate() {
            eigenvalues[dst] = a[(src, src)];
            let mut col = v.column(src).into_owned();
            let mut lead = 0;
            for k in 1..D {
                if col[k].abs() > col[lead].abs() {
                    lead = k;
                }
            }
            if col[lead] < 0.0 {
                col = -col;
            }
            eigenvectors.set_column(dst, &col);
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// `V · diag(f(λ)) · Vᵀ`
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SMatrix<f64, D, D> {
        compose(&self.eigenvectors, &self.eigenvalues.map(f))
    }
}

/// `R · diag(d) · Rᵀ`
pub fn compose<const D: usize>(
    rotation: &SMatrix<f64, D, D>,
    diag: &SVector<f64, D>,
) -> SMatrix<f64, D, D> {
    let mut scaled = *rotation;
    for j in 0..D {
        scaled.column_mut(j).scale_mut(diag[j]);
    }
    let mut out = scaled * rotation.transpose();
    // exact symmetry
    for i in 0..D {
        for j in (i + 1)..D {
            let m = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    out
}

/// Real part of the eigenvalue with the lowest real part.
///
/// Uses the real Schur form (Hessenberg reduction followed by Francis
/// double-shift QR), so complex-conjugate pairs are handled without complex
/// arithmetic in the iteration.
pub fn min_real_eigenvalue(m: DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GsmError::EigenFailure);
    }
    // The shifted QR iteration occasionally stalls on either the raw or the
    // balanced matrix; the fallbacks below rescue those cases.
    let schur = m.clone().try_schur(f64::EPSILON, SCHUR_MAX_ITERS).or_else(|| {
        let mut balanced = m.clone();
        balance(&mut balanced);
        let rescued = [(&balanced, 1.0), (&m, 64.0), (&balanced, 64.0)]
            .into_iter()
            .find_map(|(a, k)| a.clone().try_schur(k * f64::EPSILON, SCHUR_MAX_ITERS));
        rescued
    });
    let schur = schur.ok_or(GsmError::EigenFailure)?;
    schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .min_by(|a, b| a.total_cmp(b))
        .ok_or(GsmError::EigenFailure)
}

/// Parlett-Reinsch balancing: a diagonal similarity by powers of two that
/// evens out row and column norms. Eigenvalues are unchanged exactly.
pub fn balance(m: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = m.nrows();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                c += m[(j, i)].abs();
                r += m[(i, j)].abs();
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * total {
                done = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
    }
}

/// Solves `a x = b` by Householder QR with column pivoting.
///
/// Fails with [`GsmError::SingularSystem`] when a pivot falls below
/// `QR_SINGULAR_RTOL · max|a_ij|`.
pub fn solve_pivoted_qr<const D: usize>(
    a: &SMatrix<f64, D, D>,
    b: &SVector<f64, D>,
) -> Result<SVector<f64, D>> {
    let scale = a.amax();
    if !(scale.is_finite() && scale > 0.0) || b.iter().any(|x| !x.is_finite()) {
        return Err(GsmError::SingularSystem);
    }
    let tol = QR_SINGULAR_RTOL * scale;
    let mut r = *a;
    let mut rhs = *b;
    let mut perm: [usize; D] = std::array::from_fn(|i| i);

    for k in 0..D {
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..D {
            let n: f64 = (k..D).map(|i| r[(i, j)] * r[(i, j)]).sum();
            if n > best_norm {
                best_norm = n;
                best = j;
            }
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }
        let norm = best_norm.sqrt();
        if norm <= tol {
            return Err(GsmError::SingularSystem);
        }
        let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
        let mut v = SVector::<f64, D>::zeros();
        for i in k..D {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let vv: f64 = (k..D).map(|i| v[i] * v[i]).sum();
        if vv > 0.0 {
            for j in k..D {
                let dot: f64 = (k..D).map(|i| v[i] * r[(i, j)]).sum();
                let f = 2.0 * dot / vv;
                for i in k..D {
                    r[(i, j)] -= f * v[i];
                }
            }
            let dot: f64 = (k..D).map(|i| v[i] * rhs[i]).sum();
            let f = 2.0 * dot / vv;
            for i in k..D {
                rhs[i] -= f * v[i];
            }
        }
    }

    let mut z = SVector::<f64, D>::zeros();
    for i in (0..D).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..D {
            s -= r[(i, j)] * z[j];
        }
        z[i] = s / r[(i, i)];
    }
    let mut x = SVector::<f64, D>::zeros();
    for i in 0..D {
        x[perm[i]] = z[i];
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky<const D: usize>(a: &SMatrix<f64, D, D>) -> Result<SMatrix<f64, D, D>> {
    let diag_max = (0..D).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = diag_max * f64::EPSILON * D as f64;
    let mut l = SMatrix::<f64, D, D>::zeros();
    for j in 0..D {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > floor) || !s.is_finite() {
            return Err(GsmError::CholeskyFailure);
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..D {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Forward substitution `L x = b`.
pub fn solve_lower<const D: usize>(l: &SMatrix<f64, D, D>, b: &SVector<f64, D>) -> SVector<f64, D> {
    let mut x = *b;
    for i in 0..D {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Back substitution `Lᵀ x = b`.
pub fn solve_lower_transpose<const D: usize>(
    l: &SMatrix<f64, D, D>,
    b: &SVector<f64, D>,
) -> SVector<f64, D> {
    let mut x = *b;
    for i in (0..D).rev() {
        let mut s = x[i];
        for k in (i + 1)..D {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Determinant by LU with partial pivoting.
pub fn determinant<const D: usize>(m: &SMatrix<f64, D, D>) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for k in 0..D {
        let mut p = k;
        for i in (k + 1)..D {
            if a[(i, k)].abs() > a[(p, k)].abs() {
                p = i;
            }
        }
        if a[(p, k)] == 0.0 {
            return 0.0;
        }
        if p != k {
            a.swap_rows(p, k);
            det = -det;
        }
        det *= a[(k, k)];
        for i in (k + 1)..D {
            let f = a[(i, k)] / a[(k, k)];
            for j in k..D {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    det
}

/// Largest absolute asymmetry `max |m_ij − m_ji|`.
pub fn asymmetry<const D: usize>(m: &SMatrix<f64, D, D>) -> f64 {
    (m - m.transpose()).amax()
}
