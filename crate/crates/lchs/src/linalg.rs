use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{LchsError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Largest entrywise deviation from M = M^dagger.
pub fn hermitian_error(m: &CMatrix) -> f64 {
    let adj = m.adjoint();
    (m - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn check_hermitian(m: &CMatrix, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(LchsError::Dimension(format!(
            "{what}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let err = hermitian_error(m);
    if err > tol {
        return Err(LchsError::NotHermitian(format!(
            "{what}: |M - M^dagger| = {err:.3e} exceeds {tol:.1e}"
        )));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues (ascending is
/// not guaranteed) and a unitary matrix of column eigenvectors.
///
/// The QL iteration behind SymmetricEigen can deflate early on clustered
/// spectra: U comes back orthonormal to round-off while ||U L U^dagger - H||
/// sits orders of magnitude above it. A residual check catches that case and
/// hands off to a Jacobi polish; the healthy case pays one extra matmul.
pub fn hermitian_eigen(h: &CMatrix) -> (DVector<f64>, CMatrix) {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let mut u = eig.eigenvectors;
    let hu = h * &u;
    let n = h.nrows();
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let resid: f64 = (0..n)
        .flat_map(|col| (0..n).map(move |row| (row, col)))
        .map(|(row, col)| (hu[(row, col)] - u[(row, col)] * eig.eigenvalues[col]).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if resid <= (n as f64).powf(1.5) * f64::EPSILON * scale {
        return (eig.eigenvalues, u);
    }
    let t = u.adjoint() * hu;
    let vals = jacobi_polish(t, &mut u);
    (vals, u)
}

/// Cyclic complex Jacobi sweeps on T = U^dagger H U, accumulating the
/// rotations into U. From a near-diagonal start this converges in a couple
/// of sweeps, and Jacobi does not share the QL deflation weakness. Returns
/// the polished eigenvalues.
fn jacobi_polish(mut t: CMatrix, u: &mut CMatrix) -> DVector<f64> {
    let n = t.nrows();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let target = n as f64 * f64::EPSILON * scale;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| t[(p, q)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let c = t[(p, q)];
                if c.norm() <= f64::EPSILON * scale / 1e3 {
                    continue;
                }
                // Unitary 2x2 zeroing t_pq: a phase folds the pivot to a real
                // value, then a standard Jacobi rotation kills it.
                let phase = Complex64::from_polar(1.0, -c.arg());
                let tau = (t[(q, q)].re - t[(p, p)].re) / (2.0 * c.norm());
                let tn = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + tn * tn).sqrt();
                let sn = tn * cs;
                // J = [[cs, sn], [-sn e^{-i phi}, cs e^{-i phi}]]; apply
                // T <- J^dagger T J and U <- U J touching only rows/columns
                // p and q.
                for r in 0..n {
                    let tp = t[(p, r)];
                    let tq = t[(q, r)];
                    t[(p, r)] = tp * cs - tq * sn * phase.conj();
                    t[(q, r)] = tp * sn + tq * cs * phase.conj();
                }
                for r in 0..n {
                    let tp = t[(r, p)];
                    let tq = t[(r, q)];
                    t[(r, p)] = tp * cs - tq * sn * phase;
                    t[(r, q)] = tp * sn + tq * cs * phase;
                }
                for r in 0..n {
                    let up = u[(r, p)];
                    let uq = u[(r, q)];
                    u[(r, p)] = up * cs - uq * sn * phase;
                    u[(r, q)] = up * sn + uq * cs * phase;
                }
            }
        }
    }
    DVector::from_iterator(n, (0..n).map(|j| t[(j, j)].re))
}

const JACOBI_MAX_SWEEPS: usize = 20;

pub fn min_eigenvalue_hermitian(h: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(h);
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral norm (largest singular value) of a Hermitian matrix: max |lambda|.
pub fn spectral_norm_hermitian(h: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(h);
    vals.iter().map(|l| l.abs()).fold(0.0, f64::max)
}

/// Spectral norm of a general matrix via the Hermitian Gram matrix M^dagger M.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    eig.eigenvalues
        .iter()
        .map(|l| l.max(0.0))
        .fold(0.0, f64::max)
        .sqrt()
}

/// exp(z H) for Hermitian H and any complex z. Dimension 2 uses the closed
/// form H = a I + V with traceless V, exp(zH) = e^{za}(cosh(zw) I +
/// sinh(zw)/w V), w = |V|; larger dimensions diagonalize.
pub fn exp_hermitian_mul(h: &CMatrix, z: Complex64) -> CMatrix {
    let n = h.nrows();
    if n == 1 {
        return CMatrix::from_element(1, 1, (z * h[(0, 0)].re).exp());
    }
    if n == 2 {
        return exp_hermitian_mul_2x2(h, z);
    }
    let (vals, vecs) = hermitian_eigen(h);
    let mut out = CMatrix::zeros(n, n);
    // U diag(e^{z l}) U^dagger accumulated column by column.
    for j in 0..n {
        let phase = (z * vals[j]).exp();
        let col = vecs.column(j);
        for r in 0..n {
            let cr = col[r] * phase;
            for c in 0..n {
                out[(r, c)] += cr * col[c].conj();
            }
        }
    }
    out
}

/// exp(z H) v without forming the exponential: one eigendecomposition, two
/// dense matvecs, and a phase scaling in between. Quadratic in the dimension
/// past the decomposition where the matrix route stays cubic.
pub fn exp_hermitian_apply(h: &CMatrix, z: Complex64, v: &CVector) -> CVector {
    let n = h.nrows();
    if n <= 2 {
        return exp_hermitian_mul(h, z) * v;
    }
    let (vals, vecs) = hermitian_eigen(h);
    let mut coeffs = vecs.adjoint() * v;
    for j in 0..n {
        coeffs[j] *= (z * vals[j]).exp();
    }
    &vecs * &coeffs
}

fn exp_hermitian_mul_2x2(h: &CMatrix, z: Complex64) -> CMatrix {
    let a = (h[(0, 0)].re + h[(1, 1)].re) / 2.0;
    let d = (h[(0, 0)].re - h[(1, 1)].re) / 2.0;
    let c = h[(0, 1)];
    let w = (d * d + c.norm_sqr()).sqrt();
    let ea = (z * a).exp();
    if w < 1e-300 {
        return CMatrix::from_diagonal_element(2, 2, ea);
    }
    let zw = z * w;
    let ch = zw.cosh();
    let sh = zw.sinh() / w;
    CMatrix::from_row_slice(
        2,
        2,
        &[
            ea * (ch + sh * d),
            ea * sh * c,
            ea * sh * c.conj(),
            ea * (ch - sh * d),
        ],
    )
}
