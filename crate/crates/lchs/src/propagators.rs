use std::cell::Cell;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{LchsError, Result};
use crate::linalg::{c64, exp_hermitian_apply, exp_hermitian_mul, CMatrix, CVector};
use crate::operators::TimeDependentGenerator;
use crate::oracle::evolve_vector_with;

/// One stage of a product-formula step: apply e^{-i alpha dt k L(t_gamma)}
/// then e^{-i beta dt H(t_delta)}. Offsets gamma, delta are in units of the
/// step and mark where the generator is frozen.
#[derive(Clone, Copy, Debug)]
pub struct Stage {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Clone, Debug)]
pub struct ProductFormula {
    pub order: u32,
    pub stages: Vec<Stage>,
}

impl ProductFormula {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
}

/// Splitting coefficients by Suzuki recursion. Order 2 is the symmetric
/// arrangement with H on the outside; order 4 chains five order-2 blocks
/// with widths (u, u, 1-4u, u, u), u = 1/(4 - 4^(1/3)). Every factor in a
/// block is frozen at the block's time center; the centers are palindromic
/// across the step, preserving the order for smooth time dependence.
pub fn suzuki_recursion(p: u32) -> Result<ProductFormula> {
    let stages = match p {
        1 => vec![Stage {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            delta: 0.5,
        }],
        2 => strang_block(0.0, 1.0).to_vec(),
        4 => {
            let u = 1.0 / (4.0 - 4.0f64.powf(1.0 / 3.0));
            let widths = [u, u, 1.0 - 4.0 * u, u, u];
            let mut stages = Vec::with_capacity(10);
            let mut pos = 0.0;
            for w in widths {
                stages.extend_from_slice(&strang_block(pos, w));
                pos += w;
            }
            stages
        }
        _ => {
            return Err(LchsError::InvalidArgument(format!(
                "product formula order must be 1, 2, or 4, got {p}"
            )))
        }
    };
    Ok(ProductFormula { order: p, stages })
}

fn strang_block(pos: f64, width: f64) -> [Stage; 2] {
    let center = pos + width / 2.0;
    [
        Stage {
            alpha: 0.0,
            beta: width / 2.0,
            gamma: center,
            delta: center,
        },
        Stage {
            alpha: width,
            beta: width / 2.0,
            gamma: center,
            delta: center,
        },
    ]
}

#[derive(Clone, Debug)]
pub enum PropagatorBackend {
    /// Midpoint-frozen exact Hermitian exponentials with step halving; a
    /// time-independent generator collapses to a single exact exponential.
    ExactStepping { tol: f64 },
    /// Fixed product formula with the given number of steps.
    Trotter {
        formula: ProductFormula,
        steps: usize,
    },
    /// Exact diagonal conjugation phases around an integrated rotating-frame
    /// Hamiltonian; needs L diagonal and time-independent.
    InteractionPicture { tol: f64 },
}

impl PropagatorBackend {
    pub fn exact(tol: f64) -> Self {
        PropagatorBackend::ExactStepping { tol }
    }

    pub fn trotter(p: u32, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(LchsError::InvalidArgument(
                "product formula needs at least one step".into(),
            ));
        }
        Ok(PropagatorBackend::Trotter {
            formula: suzuki_recursion(p)?,
            steps,
        })
    }

    /// "exact" | "trotter:p,r" | "interaction". The stepping tolerance for
    /// the integrating backends sits well under the solver target eps.
    pub fn from_str_spec(text: &str, eps: f64) -> Result<Self> {
        let tol = (0.05 * eps).clamp(1e-12, 1e-4);
        match text {
            "exact" => Ok(PropagatorBackend::exact(tol)),
            "interaction" => Ok(PropagatorBackend::InteractionPicture { tol }),
            other => {
                if let Some(rest) = other.strip_prefix("trotter:") {
                    let parts: Vec<&str> = rest.split(',').collect();
                    if parts.len() == 2 {
                        let p = parts[0].trim().parse::<u32>().map_err(|_| {
                            LchsError::InvalidArgument(format!(
                                "bad product-formula order {:?}",
                                parts[0]
                            ))
                        })?;
                        let steps = parts[1].trim().parse::<usize>().map_err(|_| {
                            LchsError::InvalidArgument(format!("bad step count {:?}", parts[1]))
                        })?;
                        return PropagatorBackend::trotter(p, steps);
                    }
                }
                Err(LchsError::InvalidArgument(format!(
                    "backend {other:?} not recognized; expected exact, trotter:p,r, or interaction"
                )))
            }
        }
    }
}

thread_local! {
    static PHASE_OPS: Cell<u64> = const { Cell::new(0) };
}

/// Scalar phase multiplications performed by apply_diagonal_phase on the
/// current thread since the last reset. Instrumentation for the
/// fast-forwarding contract: the count is N per application, independent
/// of the phase magnitude.
pub fn phase_op_count() -> u64 {
    PHASE_OPS.with(|c| c.get())
}

pub fn reset_phase_op_count() {
    PHASE_OPS.with(|c| c.set(0));
}

/// state_i <- e^{-i diag_i factor} state_i. O(N) regardless of factor.
pub fn apply_diagonal_phase(diag: &DVector<f64>, factor: f64, state: &mut CVector) {
    assert_eq!(diag.len(), state.len(), "phase diagonal length mismatch");
    for i in 0..state.len() {
        state[i] *= Complex64::from_polar(1.0, -diag[i] * factor);
    }
    PHASE_OPS.with(|c| c.set(c.get() + state.len() as u64));
}

fn check_propagation_inputs(
    gen: &TimeDependentGenerator,
    t0: f64,
    t1: f64,
    state_len: usize,
) -> Result<()> {
    if state_len != gen.dim() {
        return Err(LchsError::Dimension(format!(
            "state length {} does not match generator dimension {}",
            state_len,
            gen.dim()
        )));
    }
    if !(0.0 <= t0 && t0 <= t1 && t1 <= gen.horizon() + 1e-9) {
        return Err(LchsError::InvalidArgument(format!(
            "time span [{t0}, {t1}] must satisfy 0 <= t0 <= t1 <= horizon {}",
            gen.horizon()
        )));
    }
    Ok(())
}

/// U(t0 -> t1; k) applied to state, where U is the unitary flow of
/// H(t) + k L(t) under the selected backend.
pub fn propagate(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    backend: &PropagatorBackend,
    state: &CVector,
) -> Result<CVector> {
    check_propagation_inputs(gen, t0, t1, state.len())?;
    if state.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LchsError::InvalidArgument(
            "propagation input state has non-finite entries".into(),
        ));
    }
    if t1 == t0 {
        return Ok(state.clone());
    }
    match backend {
        PropagatorBackend::ExactStepping { tol } => exact_stepping(gen, k, t0, t1, *tol, state),
        PropagatorBackend::Trotter { formula, steps } => {
            Ok(trotter_apply(gen, k, t0, t1, formula, *steps, state))
        }
        PropagatorBackend::InteractionPicture { tol } => {
            interaction_picture_propagate(gen, k, t0, t1, *tol, state)
        }
    }
}

/// Same flow assembled as an operator (applied to the identity).
pub fn propagate_operator(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    backend: &PropagatorBackend,
) -> Result<CMatrix> {
    check_propagation_inputs(gen, t0, t1, gen.dim())?;
    let n = gen.dim();
    if t1 == t0 {
        return Ok(crate::linalg::identity(n));
    }
    match backend {
        PropagatorBackend::ExactStepping { tol } => {
            if gen.is_time_independent() {
                let h = gen.hamiltonian(k, t0);
                return Ok(exp_hermitian_mul(&h, c64(0.0, -(t1 - t0))));
            }
            let mut steps = EXACT_START_STEPS;
            let coarse = frozen_steps_matrix(gen, k, t0, t1, steps);
            let mut fine = frozen_steps_matrix(gen, k, t0, t1, steps * 2);
            let mut extr = (fine.scale(4.0) - coarse).unscale(3.0);
            for _ in 0..EXACT_MAX_HALVINGS {
                steps *= 2;
                let finer = frozen_steps_matrix(gen, k, t0, t1, steps * 2);
                let next = (finer.scale(4.0) - &fine).unscale(3.0);
                if (&next - &extr).norm() <= tol / 2.0 {
                    return Ok(next);
                }
                fine = finer;
                extr = next;
            }
            Err(LchsError::Convergence(format!(
                "frozen-step operator integration did not reach tol {tol}"
            )))
        }
        PropagatorBackend::Trotter { .. } | PropagatorBackend::InteractionPicture { .. } => {
            // Column-by-column; only the exact backend has a native
            // operator form.
            let mut out = CMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = CVector::zeros(n);
                e[j] = c64(1.0, 0.0);
                let col = propagate(gen, k, t0, t1, backend, &e)?;
                out.set_column(j, &col);
            }
            Ok(out)
        }
    }
}

const EXACT_START_STEPS: usize = 8;
const EXACT_MAX_HALVINGS: u32 = 22;

fn exact_stepping(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    tol: f64,
    state: &CVector,
) -> Result<CVector> {
    if gen.is_time_independent() {
        let h = gen.hamiltonian(k, t0);
        return Ok(exp_hermitian_apply(&h, c64(0.0, -(t1 - t0)), state));
    }
    if !(tol > 0.0) {
        return Err(LchsError::InvalidArgument(format!(
            "stepping tolerance must be positive, got {tol}"
        )));
    }
    // Midpoint freezing is symmetric, so the step error expands in even
    // powers only and the Richardson pair below converges at fourth order.
    let mut steps = EXACT_START_STEPS;
    let coarse = frozen_steps_vector(gen, k, t0, t1, steps, state);
    let mut fine = frozen_steps_vector(gen, k, t0, t1, steps * 2, state);
    let mut extr = (fine.scale(4.0) - coarse).unscale(3.0);
    for _ in 0..EXACT_MAX_HALVINGS {
        steps *= 2;
        let finer = frozen_steps_vector(gen, k, t0, t1, steps * 2, state);
        let next = (finer.scale(4.0) - &fine).unscale(3.0);
        if (&next - &extr).norm() <= tol / 2.0 {
            return Ok(next);
        }
        fine = finer;
        extr = next;
    }
    Err(LchsError::Convergence(format!(
        "frozen-step integration did not reach tol {tol} (k = {k})"
    )))
}

fn frozen_steps_vector(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    steps: usize,
    state: &CVector,
) -> CVector {
    let dt = (t1 - t0) / steps as f64;
    let mut v = state.clone();
    for m in 0..steps {
        let tau = t0 + (m as f64 + 0.5) * dt;
        let h = gen.hamiltonian(k, tau);
        v = exp_hermitian_apply(&h, c64(0.0, -dt), &v);
    }
    v
}

fn frozen_steps_matrix(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> CMatrix {
    let dt = (t1 - t0) / steps as f64;
    let mut w = crate::linalg::identity(gen.dim());
    for m in 0..steps {
        let tau = t0 + (m as f64 + 0.5) * dt;
        let h = gen.hamiltonian(k, tau);
        w = exp_hermitian_mul(&h, c64(0.0, -dt)) * w;
    }
    w
}

fn trotter_apply(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    formula: &ProductFormula,
    steps: usize,
    state: &CVector,
) -> CVector {
    let dt = (t1 - t0) / steps as f64;
    let mut v = state.clone();
    if gen.is_time_independent() {
        // Freeze once, cache the few distinct stage exponentials.
        let (l, h) = gen.split(t0);
        let mut l_cache: Vec<(f64, CMatrix)> = Vec::new();
        let mut h_cache: Vec<(f64, CMatrix)> = Vec::new();
        for stage in &formula.stages {
            if stage.alpha != 0.0 && !l_cache.iter().any(|(a, _)| *a == stage.alpha) {
                l_cache.push((
                    stage.alpha,
                    exp_hermitian_mul(&l, c64(0.0, -k * stage.alpha * dt)),
                ));
            }
            if stage.beta != 0.0 && !h_cache.iter().any(|(b, _)| *b == stage.beta) {
                h_cache.push((
                    stage.beta,
                    exp_hermitian_mul(&h, c64(0.0, -stage.beta * dt)),
                ));
            }
        }
        for _ in 0..steps {
            for stage in &formula.stages {
                if stage.alpha != 0.0 {
                    let m = &l_cache.iter().find(|(a, _)| *a == stage.alpha).unwrap().1;
                    v = m * v;
                }
                if stage.beta != 0.0 {
                    let m = &h_cache.iter().find(|(b, _)| *b == stage.beta).unwrap().1;
                    v = m * v;
                }
            }
        }
        return v;
    }
    for step in 0..steps {
        let base = t0 + step as f64 * dt;
        for stage in &formula.stages {
            if stage.alpha != 0.0 {
                let l = gen.l(base + stage.gamma * dt);
                v = exp_hermitian_apply(&l, c64(0.0, -k * stage.alpha * dt), &v);
            }
            if stage.beta != 0.0 {
                let h = gen.h(base + stage.delta * dt);
                v = exp_hermitian_apply(&h, c64(0.0, -stage.beta * dt), &v);
            }
        }
    }
    v
}

const IP_MAX_HALVINGS: u32 = 16;

/// Unitary node flow via the rotating frame: exact diagonal phases
/// e^{-i k L t} on the outside, with the conjugated Hamiltonian
/// H_I(s) = e^{i k L s} H(s) e^{-i k L s} integrated in between.
pub fn interaction_picture_propagate(
    gen: &TimeDependentGenerator,
    k: f64,
    t0: f64,
    t1: f64,
    tol: f64,
    state: &CVector,
) -> Result<CVector> {
    check_propagation_inputs(gen, t0, t1, state.len())?;
    let Some(diag) = gen.static_diagonal_l() else {
        return Err(LchsError::InvalidArgument(
            "interaction picture requires a diagonal, time-independent dissipative part".into(),
        ));
    };
    let min_entry = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if min_entry < -1e-10 {
        return Err(LchsError::InvalidArgument(format!(
            "interaction picture requires nonnegative dissipator entries \
             (min = {min_entry:.3e})"
        )));
    }
    if t1 == t0 {
        return Ok(state.clone());
    }

    let mut v = state.clone();
    apply_diagonal_phase(&diag, -k * t0, &mut v);

    let inner = gen.clone();
    let d = diag.clone();
    let dim = gen.dim();
    let rotated = TimeDependentGenerator::from_fn(
        dim,
        gen.horizon(),
        move |s| {
            let h = inner.h(s);
            let phases: Vec<Complex64> = (0..dim)
                .map(|a| Complex64::from_polar(1.0, k * d[a] * s))
                .collect();
            // i * Phi H Phi^dagger, the first-order generator of the
            // rotating-frame flow.
            CMatrix::from_fn(dim, dim, |a, b| {
                c64(0.0, 1.0) * phases[a] * h[(a, b)] * phases[b].conj()
            })
        },
        gen.smoothness(),
        gen.is_time_independent() && k == 0.0,
    )?;

    let spread = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max) - min_entry.max(0.0);
    let start = ((k.abs() * spread * (t1 - t0) / 2.0).ceil() as usize).clamp(8, 1 << 14);
    v = evolve_vector_with(&rotated, t0, t1, &v, tol, None, start, IP_MAX_HALVINGS)?;

    apply_diagonal_phase(&diag, k * t1, &mut v);
    Ok(v)
}
