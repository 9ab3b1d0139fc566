use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LchsError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::operators::{ProblemInstance, TimeDependentGenerator};
use crate::propagators::{propagate, propagate_operator, PropagatorBackend};
use crate::quadrature::{
    build_duhamel_grid, build_kernel_grid, truncation_cutoff, DuhamelGrid, KernelGrid,
    TruncationMode,
};
use crate::util::even_ceil;

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Tallies {
    /// Unitary node propagations on the final grid (one per kernel node for
    /// the initial-state term, one per kernel x time node for the source).
    pub propagator_calls: u64,
    /// State preparations the LCU circuit would consume on the final grid.
    pub state_prep_uses: u64,
    /// Stage exponentials a product-formula backend spends, zero otherwise.
    pub trotter_exponentials: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub cutoff: f64,
    pub intervals: usize,
    pub time_intervals: Option<usize>,
    pub kernel_l1: f64,
    /// ||c||_1 * sum_j v_j ||b(s_j)|| for the source term, when present.
    pub weighted_l1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LCHSResult {
    /// Physical-frame approximation of u(T), shift undone.
    pub u_tilde: CVector,
    pub normalized: CVector,
    /// LCU normalization in physical units; u_tilde = eta * sqrt(p_succ) *
    /// normalized up to rounding.
    pub eta: f64,
    pub p_succ: f64,
    pub shift: f64,
    pub grid: GridSummary,
    pub tallies: Tallies,
    pub error_vs_oracle: Option<f64>,
}

const ADAPT_MAX_ROUNDS: u32 = 18;
const NODE_BUDGET: usize = 1 << 22;
const PAIR_BUDGET: usize = 1 << 24;
const SUCCESS_FLOOR: f64 = 1e-12;
const SHIFT_EXP_CAP: f64 = 700.0;

fn exp_shift(c: f64, t: f64) -> Result<f64> {
    let x = c * t;
    if x > SHIFT_EXP_CAP {
        return Err(LchsError::Budget(format!(
            "undoing the spectral shift needs e^{{{x:.1}}}, beyond double range"
        )));
    }
    Ok(x.exp())
}

fn stage_exponentials_per_node(backend: &PropagatorBackend) -> u64 {
    match backend {
        PropagatorBackend::Trotter { formula, steps } => {
            2 * formula.stage_count() as u64 * *steps as u64
        }
        _ => 0,
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(LchsError::InvalidArgument(format!(
            "accuracy target must lie in (0, 0.5), got {eps}"
        )));
    }
    Ok(())
}

/// Kernel-node states for one time span, memoized across grid doublings.
/// Doubling the interval count reproduces the old nodes bit-for-bit (the
/// node formula scales numerator and denominator by the same power of two),
/// so the f64 bit pattern is a sound key.
pub(crate) struct NodeCache {
    pub(crate) hom: HashMap<u64, CVector>,
    pub(crate) src: HashMap<(u64, u64), CVector>,
}

impl NodeCache {
    fn new() -> Self {
        NodeCache {
            hom: HashMap::new(),
            src: HashMap::new(),
        }
    }
}

/// Doubles the kernel grid until consecutive assemblies differ by at most
/// `threshold` in norm. Returns the settled grid, the per-node states
/// U_k(T, 0) applied to `u0`, and the assembled sum.
pub(crate) fn refine_homogeneous(
    gen_s: &TimeDependentGenerator,
    horizon: f64,
    cutoff: f64,
    threshold: f64,
    backend: &PropagatorBackend,
    u0: &CVector,
) -> Result<(KernelGrid, NodeCache, CVector)> {
    let mut cache = NodeCache::new();
    let mut intervals = 16usize.max(even_ceil(4.0 * cutoff));
    let mut grid = build_kernel_grid(cutoff, intervals)?;
    let mut v = assemble_homogeneous(gen_s, horizon, &grid, backend, u0, &mut cache)?;
    for _ in 0..ADAPT_MAX_ROUNDS {
        intervals *= 2;
        if intervals + 1 > NODE_BUDGET {
            return Err(LchsError::Budget(format!(
                "kernel grid refinement passed {NODE_BUDGET} nodes without settling"
            )));
        }
        grid = build_kernel_grid(cutoff, intervals)?;
        let fine = assemble_homogeneous(gen_s, horizon, &grid, backend, u0, &mut cache)?;
        let diff = (&fine - &v).norm();
        v = fine;
        if diff <= threshold {
            return Ok((grid, cache, v));
        }
    }
    Err(LchsError::Convergence(
        "kernel grid doubling did not settle within the round budget".into(),
    ))
}

fn assemble_homogeneous(
    gen_s: &TimeDependentGenerator,
    horizon: f64,
    grid: &KernelGrid,
    backend: &PropagatorBackend,
    u0: &CVector,
    cache: &mut NodeCache,
) -> Result<CVector> {
    let missing: Vec<f64> = grid
        .nodes
        .iter()
        .copied()
        .filter(|k| !cache.hom.contains_key(&k.to_bits()))
        .collect();
    let computed: Vec<(u64, CVector)> = missing
        .par_iter()
        .map(|&k| {
            propagate(gen_s, k, 0.0, horizon, backend, u0).map(|v| (k.to_bits(), v))
        })
        .collect::<Result<_>>()?;
    cache.hom.extend(computed);
    let mut acc = CVector::zeros(u0.len());
    for (j, &k) in grid.nodes.iter().enumerate() {
        acc += cache.hom[&k.to_bits()].scale(grid.coefficients[j]);
    }
    Ok(acc)
}

/// Per kernel node: U_k(T, 0) u0 + sum_j' v_j' U_k(T, s_j') b_s(s_j'),
/// then weighted by c_k. A time-independent generator under the exact
/// backend shares one eigendecomposition across all the time spans of a
/// node.
fn assemble_inhomogeneous(
    gen_s: &TimeDependentGenerator,
    horizon: f64,
    duhamel: &DuhamelGrid,
    backend: &PropagatorBackend,
    u0: &CVector,
    sources: &[CVector],
    cache: &mut NodeCache,
) -> Result<CVector> {
    let static_exact = gen_s.is_time_independent()
        && matches!(backend, PropagatorBackend::ExactStepping { .. });
    let kernel = &duhamel.kernel;
    struct NodeJob {
        k: f64,
        want_hom: bool,
        spans: Vec<(usize, f64)>,
    }
    let jobs: Vec<NodeJob> = kernel
        .nodes
        .iter()
        .map(|&k| {
            let kb = k.to_bits();
            let spans = duhamel
                .time_nodes
                .iter()
                .enumerate()
                .filter(|(_, s)| !cache.src.contains_key(&(kb, s.to_bits())))
                .map(|(i, &s)| (i, s))
                .collect();
            NodeJob {
                k,
                want_hom: !cache.hom.contains_key(&kb),
                spans,
            }
        })
        .filter(|j| j.want_hom || !j.spans.is_empty())
        .collect();

    type Piece = (Option<(u64, CVector)>, Vec<((u64, u64), CVector)>);
    let computed: Vec<Piece> = jobs
        .par_iter()
        .map(|job| {
            let kb = job.k.to_bits();
            if static_exact {
                let h = gen_s.hamiltonian(job.k, 0.0);
                let (vals, q) = crate::linalg::hermitian_eigen(&h);
                let apply = |span: f64, v: &CVector| -> CVector {
                    let mut w = q.adjoint() * v;
                    for (i, entry) in w.iter_mut().enumerate() {
                        *entry *= num_complex::Complex64::from_polar(1.0, -vals[i] * span);
                    }
                    &q * w
                };
                let hom = job
                    .want_hom
                    .then(|| (kb, apply(horizon, u0)));
                let src = job
                    .spans
                    .iter()
                    .map(|&(i, s)| ((kb, s.to_bits()), apply(horizon - s, &sources[i])))
                    .collect();
                Ok((hom, src))
            } else {
                let hom = job
                    .want_hom
                    .then(|| propagate(gen_s, job.k, 0.0, horizon, backend, u0).map(|v| (kb, v)))
                    .transpose()?;
                let src = job
                    .spans
                    .iter()
                    .map(|&(i, s)| {
                        propagate(gen_s, job.k, s, horizon, backend, &sources[i])
                            .map(|v| ((kb, s.to_bits()), v))
                    })
                    .collect::<Result<_>>()?;
                Ok((hom, src))
            }
        })
        .collect::<Result<_>>()?;
    for (hom, src) in computed {
        cache.hom.extend(hom);
        cache.src.extend(src);
    }

    let mut acc = CVector::zeros(u0.len());
    for (j, &k) in kernel.nodes.iter().enumerate() {
        let kb = k.to_bits();
        let mut bracket = cache.hom[&kb].clone();
        for (i, &s) in duhamel.time_nodes.iter().enumerate() {
            bracket += cache.src[&(kb, s.to_bits())].scale(duhamel.time_weights[i]);
        }
        acc += bracket.scale(kernel.coefficients[j]);
    }
    Ok(acc)
}

fn finish(
    problem: &ProblemInstance,
    v_shifted: CVector,
    eta_shifted: f64,
    grid: GridSummary,
    tallies: Tallies,
) -> Result<LCHSResult> {
    let p_succ = v_shifted.norm_squared() / (eta_shifted * eta_shifted);
    if p_succ.sqrt() < SUCCESS_FLOOR {
        return Err(LchsError::DecayedSolution(format!(
            "success amplitude {:.3e} below {SUCCESS_FLOOR:.0e}; the state has decayed \
             past what repetition can recover",
            p_succ.sqrt()
        )));
    }
    let lift = exp_shift(problem.shift, problem.horizon())?;
    if lift == 0.0 {
        return Err(LchsError::DecayedSolution(format!(
            "lift factor exp({:.3e}) underflows to zero; the physical state has \
             decayed below floating-point range",
            problem.shift * problem.horizon()
        )));
    }
    let u_tilde = v_shifted.map(|z| z * lift);
    let norm = u_tilde.norm();
    let normalized = u_tilde.map(|z| z / norm);
    Ok(LCHSResult {
        u_tilde,
        normalized,
        eta: lift * eta_shifted,
        p_succ,
        shift: problem.shift,
        grid,
        tallies,
        error_vs_oracle: None,
    })
}

pub fn solve_homogeneous(
    problem: &ProblemInstance,
    eps: f64,
    backend: &PropagatorBackend,
) -> Result<LCHSResult> {
    check_eps(eps)?;
    if problem.source.is_some() {
        return Err(LchsError::InvalidArgument(
            "problem carries a source; use the inhomogeneous solver".into(),
        ));
    }
    let cutoff = truncation_cutoff(eps / 3.0, TruncationMode::Homogeneous)?;
    let gen_s = problem.shifted_generator();
    let horizon = problem.horizon();
    let scale = (-problem.shift * horizon).exp() * problem.u0.norm();
    let (grid, _, v) = refine_homogeneous(
        &gen_s,
        horizon,
        cutoff,
        eps / 4.0 * scale,
        backend,
        &problem.u0,
    )?;
    let intervals = grid.intervals;
    let nodes = (intervals + 1) as u64;
    finish(
        problem,
        v,
        grid.l1_norm * problem.u0.norm(),
        GridSummary {
            cutoff,
            intervals,
            time_intervals: None,
            kernel_l1: grid.l1_norm,
            weighted_l1: None,
        },
        Tallies {
            propagator_calls: nodes,
            state_prep_uses: nodes,
            trotter_exponentials: nodes * stage_exponentials_per_node(backend),
        },
    )
}

/// Fixed-grid variant: no refinement, the caller owns the discretization
/// error.
pub fn solve_homogeneous_with_grid(
    problem: &ProblemInstance,
    grid: &KernelGrid,
    backend: &PropagatorBackend,
) -> Result<LCHSResult> {
    if problem.source.is_some() {
        return Err(LchsError::InvalidArgument(
            "problem carries a source; use the inhomogeneous solver".into(),
        ));
    }
    let gen_s = problem.shifted_generator();
    let mut cache = NodeCache::new();
    let v = assemble_homogeneous(
        &gen_s,
        problem.horizon(),
        grid,
        backend,
        &problem.u0,
        &mut cache,
    )?;
    let nodes = (grid.intervals + 1) as u64;
    finish(
        problem,
        v,
        grid.l1_norm * problem.u0.norm(),
        GridSummary {
            cutoff: grid.cutoff,
            intervals: grid.intervals,
            time_intervals: None,
            kernel_l1: grid.l1_norm,
            weighted_l1: None,
        },
        Tallies {
            propagator_calls: nodes,
            state_prep_uses: nodes,
            trotter_exponentials: nodes * stage_exponentials_per_node(backend),
        },
    )
}

pub fn solve_inhomogeneous(
    problem: &ProblemInstance,
    eps: f64,
    backend: &PropagatorBackend,
) -> Result<LCHSResult> {
    check_eps(eps)?;
    let Some(shifted_source) = problem.shifted_source() else {
        return Err(LchsError::InvalidArgument(
            "problem has no source; use the homogeneous solver".into(),
        ));
    };
    let horizon = problem.horizon();
    let shifted_b_l1 = {
        // Trapezoid of e^{-cs} ||b(s)||, the source mass the shifted frame
        // actually integrates.
        let n = 257;
        let h = horizon / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let s = i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * shifted_source(s).norm();
        }
        acc * h
    };
    let cutoff = truncation_cutoff(
        eps / 3.0,
        TruncationMode::Inhomogeneous {
            source_l1: shifted_b_l1,
        },
    )?;
    let gen_s = problem.shifted_generator();
    let scale = (-problem.shift * horizon).exp() * (problem.u0.norm() + problem.source_l1());
    let threshold = eps / 4.0 * scale;

    let mut cache = NodeCache::new();
    let mut intervals = 16usize.max(even_ceil(4.0 * cutoff));
    let mut time_intervals = 16usize;
    let assemble = |m: usize, mt: usize, cache: &mut NodeCache| -> Result<(DuhamelGrid, CVector)> {
        if (m + 1).saturating_mul(mt + 1) > PAIR_BUDGET {
            return Err(LchsError::Budget(format!(
                "kernel x time grid refinement passed {PAIR_BUDGET} node pairs without settling"
            )));
        }
        let d = build_duhamel_grid(cutoff, m, mt, horizon, |s| shifted_source(s))?;
        let sources: Vec<CVector> = d.time_nodes.iter().map(|&s| shifted_source(s)).collect();
        let v = assemble_inhomogeneous(
            &gen_s,
            horizon,
            &d,
            backend,
            &problem.u0,
            &sources,
            cache,
        )?;
        Ok((d, v))
    };
    // Refine each axis on its own: doubling both at once wastes quadratic
    // work when only one of them is under-resolved.
    let (_, mut v) = assemble(intervals, time_intervals, &mut cache)?;
    let mut settled = None;
    for _ in 0..ADAPT_MAX_ROUNDS {
        let (_, vk) = assemble(intervals * 2, time_intervals, &mut cache)?;
        if (&vk - &v).norm() > threshold / 2.0 {
            intervals *= 2;
            v = vk;
            continue;
        }
        let (_, vt) = assemble(intervals, time_intervals * 2, &mut cache)?;
        if (&vt - &v).norm() > threshold / 2.0 {
            time_intervals *= 2;
            v = vt;
            continue;
        }
        // Both axes settled; report the cross-refined point.
        intervals *= 2;
        time_intervals *= 2;
        settled = Some(assemble(intervals, time_intervals, &mut cache)?);
        break;
    }
    let Some((duhamel, v)) = settled else {
        return Err(LchsError::Convergence(
            "kernel x time grid refinement did not settle within the round budget".into(),
        ));
    };
    let k_nodes = (intervals + 1) as u64;
    let t_nodes = (time_intervals + 1) as u64;
    finish(
        problem,
        v,
        duhamel.kernel.l1_norm * problem.u0.norm() + duhamel.l1_weighted,
        GridSummary {
            cutoff,
            intervals,
            time_intervals: Some(time_intervals),
            kernel_l1: duhamel.kernel.l1_norm,
            weighted_l1: Some(duhamel.l1_weighted),
        },
        Tallies {
            propagator_calls: k_nodes * (1 + t_nodes),
            state_prep_uses: k_nodes * (1 + t_nodes),
            trotter_exponentials: k_nodes * (1 + t_nodes) * stage_exponentials_per_node(backend),
        },
    )
}

/// theta0 x0 + theta1 x1 with the LCU normalizations combined linearly.
/// Returns (combined state, combined eta, success probability). For unit
/// vectors with eta = 1 and equal weights the probability is exactly the
/// overlap-free value, e.g. 1/2 for orthogonal inputs.
pub fn combine_states(
    x0: &CVector,
    eta0: f64,
    x1: &CVector,
    eta1: f64,
    theta0: f64,
    theta1: f64,
) -> Result<(CVector, f64, f64)> {
    if x0.len() != x1.len() {
        return Err(LchsError::Dimension(format!(
            "combined states have lengths {} and {}",
            x0.len(),
            x1.len()
        )));
    }
    if !(eta0 > 0.0 && eta1 > 0.0) {
        return Err(LchsError::InvalidArgument(
            "normalizations must be positive".into(),
        ));
    }
    if theta0 < 0.0 || theta1 < 0.0 {
        return Err(LchsError::InvalidArgument(
            "combination weights must be nonnegative".into(),
        ));
    }
    let eta = theta0 * eta0 + theta1 * eta1;
    if eta == 0.0 {
        return Err(LchsError::InvalidArgument(
            "combination has zero total weight".into(),
        ));
    }
    let combined = x0.scale(theta0) + x1.scale(theta1);
    let p = combined.norm_squared() / (eta * eta);
    Ok((combined, eta, p))
}

/// Kernel sum assembled in operator form: sum_j c_j U_j(t, 0). For checking
/// the integral identity in the operator norm with a configurable backend.
pub fn assemble_operator(
    gen: &TimeDependentGenerator,
    t: f64,
    grid: &KernelGrid,
    backend: &PropagatorBackend,
) -> Result<CMatrix> {
    let terms: Vec<CMatrix> = grid
        .nodes
        .par_iter()
        .map(|&k| propagate_operator(gen, k, 0.0, t, backend))
        .collect::<Result<_>>()?;
    let n = gen.dim();
    let mut acc = CMatrix::zeros(n, n);
    for (j, term) in terms.iter().enumerate() {
        acc += term.scale(grid.coefficients[j]);
    }
    Ok(acc)
}

/// Brute-force reference u(T) by adaptive classical integration of
/// du/dt = -A(t) u + b(t).
pub fn reference_solution(problem: &ProblemInstance, tol: f64) -> Result<CVector> {
    crate::oracle::evolve_vector(
        &problem.generator,
        0.0,
        problem.horizon(),
        &problem.u0,
        tol,
        problem.source.as_ref(),
    )
}

/// Relative deviation of a solver result from the classical reference
/// (absolute when the reference is numerically zero).
pub fn oracle_error(problem: &ProblemInstance, result: &LCHSResult, tol: f64) -> Result<f64> {
    let reference = reference_solution(problem, tol)?;
    let diff = (&result.u_tilde - &reference).norm();
    let denom = reference.norm();
    Ok(if denom > 1e-14 { diff / denom } else { diff })
}
