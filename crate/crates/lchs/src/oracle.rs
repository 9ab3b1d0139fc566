use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LchsError, Result};
use crate::linalg::{
    c64, check_hermitian, exp_hermitian_mul, identity, min_eigenvalue_hermitian, spectral_norm,
    spectral_norm_hermitian, CMatrix, CVector,
};
use crate::operators::{SourceFn, TimeDependentGenerator};
use crate::quadrature::{build_kernel_grid, tail_mass};

/// Ground-truth integration settings. The integrator order is fixed at 4
/// (classical Runge-Kutta); accuracy is controlled either by a fixed step
/// count or by Richardson step-halving against a tolerance.
#[derive(Clone, Copy, Debug)]
pub enum OracleConfig {
    FixedSteps(usize),
    Adaptive { tol: f64 },
}

const START_STEPS: usize = 8;
const MAX_HALVINGS: u32 = 12;

fn rk4_matrix(gen: &TimeDependentGenerator, t0: f64, t1: f64, steps: usize) -> CMatrix {
    let n = gen.dim();
    let mut w = identity(n);
    let dt = (t1 - t0) / steps as f64;
    for m in 0..steps {
        let t = t0 + m as f64 * dt;
        let a0 = gen.a(t);
        let am = gen.a(t + dt / 2.0);
        let a1 = gen.a(t + dt);
        let k1 = -(&a0 * &w);
        let k2 = -(&am * (&w + k1.map(|z| z * (dt / 2.0))));
        let k3 = -(&am * (&w + k2.map(|z| z * (dt / 2.0))));
        let k4 = -(&a1 * (&w + k3.map(|z| z * dt)));
        w += (k1 + k2.map(|z| z * 2.0) + k3.map(|z| z * 2.0) + k4).map(|z| z * (dt / 6.0));
    }
    w
}

fn rk4_vector(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    u0: &CVector,
    source: Option<&SourceFn>,
    steps: usize,
) -> CVector {
    let mut u = u0.clone();
    let dt = (t1 - t0) / steps as f64;
    let rhs = |t: f64, v: &CVector| -> CVector {
        let mut r = -(gen.a(t) * v);
        if let Some(b) = source {
            r += b(t);
        }
        r
    };
    for m in 0..steps {
        let t = t0 + m as f64 * dt;
        let k1 = rhs(t, &u);
        let k2 = rhs(t + dt / 2.0, &(&u + k1.map(|z| z * (dt / 2.0))));
        let k3 = rhs(t + dt / 2.0, &(&u + k2.map(|z| z * (dt / 2.0))));
        let k4 = rhs(t + dt, &(&u + k3.map(|z| z * dt)));
        u += (k1 + k2.map(|z| z * 2.0) + k3.map(|z| z * 2.0) + k4).map(|z| z * (dt / 6.0));
    }
    u
}

fn check_span(gen: &TimeDependentGenerator, t0: f64, t1: f64) -> Result<()> {
    if !(0.0 <= t0 && t0 <= t1 && t1 <= gen.horizon() + 1e-9) {
        return Err(LchsError::InvalidArgument(format!(
            "time span [{t0}, {t1}] must satisfy 0 <= t0 <= t1 <= horizon {}",
            gen.horizon()
        )));
    }
    Ok(())
}

/// Propagator W with W' = -A(t) W, W(t0) = I, integrated to tolerance by
/// step-halved classical Runge-Kutta: refine until successive answers
/// differ by less than tol/2 in Frobenius norm.
pub fn time_ordered_exp(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    tol: f64,
) -> Result<CMatrix> {
    check_span(gen, t0, t1)?;
    if !(tol > 0.0) {
        return Err(LchsError::InvalidArgument(format!(
            "oracle tolerance must be positive, got {tol}"
        )));
    }
    if t1 == t0 {
        return Ok(identity(gen.dim()));
    }
    let mut steps = START_STEPS;
    let mut coarse = rk4_matrix(gen, t0, t1, steps);
    for _ in 0..MAX_HALVINGS {
        steps *= 2;
        let fine = rk4_matrix(gen, t0, t1, steps);
        if (&fine - &coarse).norm() <= tol / 2.0 {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(LchsError::Convergence(format!(
        "propagator integration did not reach tol {tol} after {MAX_HALVINGS} halvings \
         ({steps} steps)"
    )))
}

pub fn time_ordered_exp_with(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    cfg: OracleConfig,
) -> Result<CMatrix> {
    match cfg {
        OracleConfig::FixedSteps(n) => {
            check_span(gen, t0, t1)?;
            if n == 0 {
                return Err(LchsError::InvalidArgument("step count must be >= 1".into()));
            }
            Ok(rk4_matrix(gen, t0, t1, n))
        }
        OracleConfig::Adaptive { tol } => time_ordered_exp(gen, t0, t1, tol),
    }
}

/// Solution of u' = -A(t) u + b(t) from u(t0) = u0 to t1, by the same
/// step-halved Runge-Kutta scheme as the matrix oracle.
pub fn evolve_vector(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    u0: &CVector,
    tol: f64,
    source: Option<&SourceFn>,
) -> Result<CVector> {
    evolve_vector_with(gen, t0, t1, u0, tol, source, START_STEPS, MAX_HALVINGS)
}

pub(crate) fn evolve_vector_with(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    u0: &CVector,
    tol: f64,
    source: Option<&SourceFn>,
    start_steps: usize,
    max_halvings: u32,
) -> Result<CVector> {
    check_span(gen, t0, t1)?;
    if !(tol > 0.0) {
        return Err(LchsError::InvalidArgument(format!(
            "oracle tolerance must be positive, got {tol}"
        )));
    }
    if t1 == t0 {
        return Ok(u0.clone());
    }
    let mut steps = start_steps.max(1);
    let mut coarse = rk4_vector(gen, t0, t1, u0, source, steps);
    for _ in 0..max_halvings {
        steps *= 2;
        let fine = rk4_vector(gen, t0, t1, u0, source, steps);
        if (&fine - &coarse).norm() <= tol / 2.0 {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(LchsError::Convergence(format!(
        "state integration did not reach tol {tol} after {max_halvings} halvings ({steps} steps)"
    )))
}

/// Exact e^{-iHs} for Hermitian H, by eigendecomposition (closed forms in
/// dimensions 1 and 2).
pub fn hermitian_propagator_exact(hmat: &CMatrix, s: f64) -> Result<CMatrix> {
    check_hermitian(hmat, 1e-10, "propagator generator")?;
    Ok(exp_hermitian_mul(hmat, c64(0.0, -s)))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityCheck {
    /// Spectral-norm distance between the kernel-weighted unitary sum and
    /// the brute-force propagator.
    pub lhs_rhs_error: f64,
    /// Analytic kernel tail mass outside [-K, K].
    pub truncation_bound: f64,
}

/// Checks the kernel representation of the non-unitary propagator:
/// || T e^{-int A} - sum_j c_j T e^{-i int (H + k_j L)} || with every
/// propagator taken from the Runge-Kutta oracle.
pub fn verify_lchs_identity(
    gen: &TimeDependentGenerator,
    t: f64,
    cutoff: f64,
    intervals: usize,
    tol_ode: f64,
) -> Result<IdentityCheck> {
    let grid = build_kernel_grid(cutoff, intervals)?;
    let w_ref = time_ordered_exp(gen, 0.0, t, tol_ode)?;
    let n = gen.dim();
    let partials: Vec<Result<CMatrix>> = grid
        .nodes
        .par_iter()
        .zip(grid.coefficients.par_iter())
        .map(|(&k, &c)| {
            let u = time_ordered_exp(&gen.unitary_generator(k), 0.0, t, tol_ode)?;
            Ok(u.map(|z| z * c))
        })
        .collect();
    let mut sum = CMatrix::zeros(n, n);
    for p in partials {
        sum += p?;
    }
    Ok(IdentityCheck {
        lhs_rhs_error: spectral_norm(&(sum - w_ref)),
        truncation_bound: tail_mass(cutoff),
    })
}

/// Default node count for the truncated principal-value integral: enough
/// to resolve the fastest phase in e^{-i(H+kL)}, capped at 2e7 evaluations.
pub fn default_pv_nodes(h: &CMatrix, l: &CMatrix, r: f64) -> usize {
    let density = 200.0 * (spectral_norm_hermitian(l) + spectral_norm_hermitian(h) + 1.0);
    ((density * r).ceil() as usize).clamp(100, 20_000_000)
}

const PV_CHUNK: usize = 4096;

/// Trapezoid evaluation of the truncated integral
/// int_{-R}^{R} (1+ik)^{-1} e^{-i(H+kL)} dk with exact Hermitian
/// exponentials. For strictly positive definite L the full principal value
/// vanishes, so the returned norm is the truncation residual and decays as
/// R grows.
pub fn verify_principal_value(
    h: &CMatrix,
    l: &CMatrix,
    r: f64,
    nodes: usize,
) -> Result<f64> {
    check_hermitian(h, 1e-10, "Hamiltonian part")?;
    check_hermitian(l, 1e-10, "dissipative part")?;
    if h.shape() != l.shape() {
        return Err(LchsError::Dimension(format!(
            "operator shapes differ: {:?} vs {:?}",
            h.shape(),
            l.shape()
        )));
    }
    let min_l = min_eigenvalue_hermitian(l);
    if min_l <= 0.0 {
        return Err(LchsError::InvalidArgument(format!(
            "principal-value check needs strictly positive definite L \
             (lambda_min = {min_l:.3e})"
        )));
    }
    if !(r > 0.0) || nodes < 2 {
        return Err(LchsError::InvalidArgument(
            "principal-value check needs r > 0 and at least 2 intervals".into(),
        ));
    }
    let m = nodes;
    let dim = h.nrows();
    let n_chunks = m / PV_CHUNK + 1;
    let partials: Vec<CMatrix> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * PV_CHUNK;
            let hi = ((ci + 1) * PV_CHUNK).min(m + 1);
            let mut acc = CMatrix::zeros(dim, dim);
            for j in lo..hi {
                let k = -r + 2.0 * r * j as f64 / m as f64;
                let w = if j == 0 || j == m {
                    r / m as f64
                } else {
                    2.0 * r / m as f64
                };
                // w / (1 + ik)
                let factor = Complex64::new(w, 0.0) / Complex64::new(1.0, k);
                let gen_k = h + l.map(|z| z * k);
                let u = exp_hermitian_mul(&gen_k, c64(0.0, -1.0));
                acc += u.map(|z| z * factor);
            }
            acc
        })
        .collect();
    let mut total = CMatrix::zeros(dim, dim);
    for p in partials {
        total += p;
    }
    Ok(spectral_norm(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;
    use crate::operators::hermitian_split;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_complex_matrix(rng: &mut impl Rng, n: usize, scale: f64) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            c64(
                scale * (rng.gen::<f64>() * 2.0 - 1.0),
                scale * (rng.gen::<f64>() * 2.0 - 1.0),
            )
        })
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize, scale: f64) -> CMatrix {
        let m = random_complex_matrix(rng, n, scale);
        hermitian_split(&m).unwrap().0
    }

    #[test]
    fn zero_generator_gives_identity() {
        let gen =
            TimeDependentGenerator::from_matrix(CMatrix::zeros(3, 3), 1.0).unwrap();
        let w = time_ordered_exp(&gen, 0.0, 1.0, 1e-10).unwrap();
        assert!((w - identity(3)).norm() < 1e-12);
    }

    #[test]
    fn scalar_decay_hits_inverse_e() {
        let gen = TimeDependentGenerator::from_matrix(
            CMatrix::from_element(1, 1, c64(1.0, 0.0)),
            1.0,
        )
        .unwrap();
        let w = time_ordered_exp(&gen, 0.0, 1.0, 1e-10).unwrap();
        assert!((w[(0, 0)].re - 0.3678794412).abs() < 1e-9);
        assert!(w[(0, 0)].im.abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_flow_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_hermitian(&mut rng, 4, 1.0);
        let a = h.map(|z| z * c64(0.0, 1.0));
        let gen = TimeDependentGenerator::from_matrix(a, 2.0).unwrap();
        let tol = 1e-9;
        let w = time_ordered_exp(&gen, 0.0, 2.0, tol).unwrap();
        let defect = (w.adjoint() * &w - identity(4)).norm();
        assert!(defect <= 10.0 * tol, "unitarity defect {defect:e}");
    }

    #[test]
    fn composition_of_partial_spans() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_complex_matrix(&mut rng, 3, 0.8);
        let gen = TimeDependentGenerator::from_fn(
            3,
            1.0,
            move |t| m.map(|z| z * (1.0 + 0.3 * (2.0 * t).sin())),
            6,
            false,
        )
        .unwrap();
        let tol = 1e-9;
        let w02 = time_ordered_exp(&gen, 0.0, 1.0, tol).unwrap();
        let w01 = time_ordered_exp(&gen, 0.0, 0.4, tol).unwrap();
        let w12 = time_ordered_exp(&gen, 0.4, 1.0, tol).unwrap();
        assert!((w12 * w01 - w02).norm() <= 10.0 * tol);
    }

    #[test]
    fn dissipative_flow_contracts_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        // A = L + iH with L positive semidefinite by squaring.
        let g = random_hermitian(&mut rng, 4, 0.8);
        let l = &g * &g;
        let h = random_hermitian(&mut rng, 4, 1.0);
        let a = &l + h.map(|z| z * c64(0.0, 1.0));
        let gen = TimeDependentGenerator::from_matrix(a, 1.5).unwrap();
        let tol = 1e-9;
        let w = time_ordered_exp(&gen, 0.0, 1.5, tol).unwrap();
        for _ in 0..5 {
            let u0 = CVector::from_fn(4, |_, _| c64(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let out = &w * &u0;
            assert!(out.norm() <= u0.norm() * (1.0 + 10.0 * tol));
        }
    }

    #[test]
    fn vector_oracle_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_complex_matrix(&mut rng, 4, 1.0);
        let gen = TimeDependentGenerator::from_fn(
            4,
            1.0,
            move |t| m.map(|z| z * (1.0 + 0.2 * t)),
            6,
            false,
        )
        .unwrap();
        let u0 = CVector::from_fn(4, |i, _| c64(1.0 / (i as f64 + 1.0), 0.1));
        let w = time_ordered_exp(&gen, 0.0, 1.0, 1e-10).unwrap();
        let v = evolve_vector(&gen, 0.0, 1.0, &u0, 1e-10, None).unwrap();
        assert!((w * &u0 - v).norm() < 1e-8);
    }

    #[test]
    fn vector_oracle_with_source_matches_scalar_closed_form() {
        // u' = -u + 1, u(0) = 1 has solution u(t) = 1 for all t.
        let gen = TimeDependentGenerator::from_matrix(
            CMatrix::from_element(1, 1, c64(1.0, 0.0)),
            1.0,
        )
        .unwrap();
        let b: SourceFn = Arc::new(|_| CVector::from_vec(vec![c64(1.0, 0.0)]));
        let u0 = CVector::from_vec(vec![c64(1.0, 0.0)]);
        let u = evolve_vector(&gen, 0.0, 1.0, &u0, 1e-12, Some(&b)).unwrap();
        assert!((u[0] - c64(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn exact_exponential_of_pauli_z_at_pi() {
        let z = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(1.0, 0.0), c64(-1.0, 0.0)]));
        let u = hermitian_propagator_exact(&z, std::f64::consts::PI).unwrap();
        assert!((u[(0, 0)] - c64(-1.0, 0.0)).norm() < 1e-12);
        assert!((u[(1, 1)] - c64(-1.0, 0.0)).norm() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-14 && u[(1, 0)].norm() < 1e-14);

        let h0 = CMatrix::zeros(3, 3);
        let u0 = hermitian_propagator_exact(&h0, 0.7).unwrap();
        assert!((u0 - identity(3)).norm() < 1e-14);
    }

    #[test]
    fn exact_exponential_inverts_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = random_hermitian(&mut rng, 5, 1.0);
        let u = hermitian_propagator_exact(&h, 0.9).unwrap();
        let v = hermitian_propagator_exact(&h, -0.9).unwrap();
        assert!((u * v - identity(5)).norm() < 1e-12);
    }

    #[test]
    fn exact_exponential_cross_checks_rk4() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = random_hermitian(&mut rng, 8, 1.0);
        let exact = hermitian_propagator_exact(&h, 0.3).unwrap();
        let a = h.map(|z| z * c64(0.0, 1.0));
        let gen = TimeDependentGenerator::from_matrix(a, 0.3).unwrap();
        let rk = time_ordered_exp(&gen, 0.0, 0.3, 1e-10).unwrap();
        assert!((exact - rk).norm() < 1e-8);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)],
        );
        assert!(hermitian_propagator_exact(&m, 1.0).is_err());
    }

    #[test]
    fn identity_check_scalar_decay() {
        let gen = TimeDependentGenerator::from_matrix(
            CMatrix::from_element(1, 1, c64(1.0, 0.0)),
            1.0,
        )
        .unwrap();
        let chk = verify_lchs_identity(&gen, 1.0, 20.0, 800, 1e-5).unwrap();
        // Error dominated by the kernel tail 2/(pi K) ~ 0.0318.
        assert!(chk.lhs_rhs_error <= chk.truncation_bound + 5e-3);
        assert!(chk.lhs_rhs_error > 1e-3);
    }

    #[test]
    fn identity_check_degenerate_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let g = random_hermitian(&mut rng, 3, 0.7);
        let l = &g * &g;
        let h = random_hermitian(&mut rng, 3, 0.7);
        let a = &l + h.map(|z| z * c64(0.0, 1.0));
        let gen = TimeDependentGenerator::from_matrix(a, 1.0).unwrap();
        let grid = build_kernel_grid(8.0, 64).unwrap();
        let chk = verify_lchs_identity(&gen, 0.0, 8.0, 64, 1e-8).unwrap();
        // Both sides collapse to multiples of I; the residual is exactly the
        // quadrature mass deficit 1 - ||c||_1.
        assert!((chk.lhs_rhs_error - (1.0 - grid.l1_norm)).abs() < 1e-9);
    }

    #[test]
    fn pv_residual_decays_for_scalar_case() {
        let h = CMatrix::zeros(1, 1);
        let l = identity(1);
        let mut prev = f64::INFINITY;
        for r in [100.0, 1000.0] {
            let nodes = default_pv_nodes(&h, &l, r);
            let res = verify_principal_value(&h, &l, r, nodes).unwrap();
            assert!(res < prev, "residual {res} did not decrease (prev {prev})");
            assert!(res <= 10.0 / r.sqrt(), "residual {res} too large at R={r}");
            prev = res;
        }
    }

    #[test]
    fn pv_doubled_nodes_is_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let h = random_hermitian(&mut rng, 2, 1.0);
        let g = random_hermitian(&mut rng, 2, 0.6);
        let l = &g * &g + identity(2).map(|z| z * 0.5);
        let r = 200.0;
        let nodes = default_pv_nodes(&h, &l, r);
        let a = verify_principal_value(&h, &l, r, nodes).unwrap();
        let b = verify_principal_value(&h, &l, r, nodes * 2).unwrap();
        assert!((a - b).abs() < 1e-4, "quadrature not resolved: {a} vs {b}");
    }

    #[test]
    fn pv_requires_positive_definite_dissipator() {
        let h = identity(2);
        let l = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]));
        assert!(verify_principal_value(&h, &l, 10.0, 100).is_err());
    }
}
