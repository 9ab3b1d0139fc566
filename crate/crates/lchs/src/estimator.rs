use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, WeightedAliasIndex};
use serde::Serialize;

use crate::error::{LchsError, Result};
use crate::linalg::{check_hermitian, spectral_norm_hermitian, CMatrix, CVector};
use crate::operators::ProblemInstance;
use crate::propagators::{propagate, PropagatorBackend};
use crate::quadrature::{truncation_cutoff, KernelGrid, TruncationMode};
use crate::solver::refine_homogeneous;
use crate::util::next_pow2_at_least;

const SAMPLE_BUDGET: f64 = 1e8;

/// Shot accounting for one observable estimate. The sampled route draws
/// `samples` kernel-node pairs and spends `shots_per_point` Hadamard-test
/// shots on each of the real and imaginary parts; the amplitude-estimation
/// route would replace the shots by `ae_queries_per_point` sequential
/// queries per point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EstimatorPlan {
    pub samples: u64,
    pub eps_inner: f64,
    pub delta_inner: f64,
    pub alpha_o: f64,
    pub shots_per_point: u64,
    pub ae_queries_per_point: u64,
    /// Hoeffding radius of the kernel-pair mean, before the state-norm and
    /// shift factors. Equals eps/2 at the minimum sample count.
    pub half_width: f64,
}

pub fn plan_estimator(kernel_l1: f64, o_norm: f64, eps: f64, delta: f64) -> Result<EstimatorPlan> {
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(LchsError::InvalidArgument(format!(
            "estimator targets must lie in (0, 1), got eps {eps}, delta {delta}"
        )));
    }
    if !(kernel_l1 > 0.0 && o_norm >= 0.0) {
        return Err(LchsError::InvalidArgument(
            "kernel mass must be positive and the observable norm nonnegative".into(),
        ));
    }
    let l1sq = kernel_l1 * kernel_l1;
    let samples_f =
        (8.0 * l1sq * l1sq * (o_norm + 1.0).powi(2) * (4.0 / delta).ln() / (eps * eps)).ceil();
    if samples_f > SAMPLE_BUDGET {
        return Err(LchsError::Budget(format!(
            "estimate needs {samples_f:.3e} samples, budget is {SAMPLE_BUDGET:.0e}"
        )));
    }
    let samples = samples_f as u64;
    let eps_inner = eps / (2.0 * l1sq);
    let delta_inner = delta / (2.0 * samples as f64);
    let alpha_o = next_pow2_at_least(o_norm.max(f64::MIN_POSITIVE))?;
    let shots_per_point = (5.0 * alpha_o / eps_inner).powi(2).ceil() as u64;
    let ae_queries_per_point = (alpha_o / eps_inner).ceil() as u64;
    let half_width =
        l1sq * 2.0 * (o_norm + 1.0) * ((4.0 / delta).ln() / (2.0 * samples as f64)).sqrt();
    Ok(EstimatorPlan {
        samples,
        eps_inner,
        delta_inner,
        alpha_o,
        shots_per_point,
        ae_queries_per_point,
        half_width,
    })
}

/// <U_k u0hat, O U_k' u0hat> in the shifted frame, u0 normalized. The
/// quantity a two-node Hadamard-test circuit estimates.
pub fn correlation_function(
    problem: &ProblemInstance,
    k: f64,
    k_prime: f64,
    observable: &CMatrix,
    backend: &PropagatorBackend,
) -> Result<Complex64> {
    check_observable(problem, observable)?;
    let gen_s = problem.shifted_generator();
    let horizon = problem.horizon();
    let u0n = problem.u0.norm();
    if u0n == 0.0 {
        return Err(LchsError::InvalidArgument("initial state is zero".into()));
    }
    let u0 = problem.u0.map(|z| z / u0n);
    let left = propagate(&gen_s, k, 0.0, horizon, backend, &u0)?;
    let right = propagate(&gen_s, k_prime, 0.0, horizon, backend, &u0)?;
    Ok(left.dotc(&(observable * right)))
}

/// One emulated Hadamard-test pair: binomial draws for the real and
/// imaginary acceptance counts at scale `alpha`, turned back into an
/// unbiased estimate of `value`.
pub fn hadamard_test_emulate(
    value: Complex64,
    alpha: f64,
    shots: u64,
    seed: u64,
) -> Result<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hadamard_test_emulate_with(value, alpha, shots, &mut rng)
}

pub fn hadamard_test_emulate_with(
    value: Complex64,
    alpha: f64,
    shots: u64,
    rng: &mut impl Rng,
) -> Result<Complex64> {
    if !(alpha > 0.0) || shots == 0 {
        return Err(LchsError::InvalidArgument(format!(
            "need positive scale and at least one shot, got alpha {alpha}, shots {shots}"
        )));
    }
    if value.re.abs() > alpha * (1.0 + 1e-12) || value.im.abs() > alpha * (1.0 + 1e-12) {
        return Err(LchsError::InvalidArgument(format!(
            "value {value} outside the Hadamard range [-{alpha}, {alpha}]"
        )));
    }
    let mut part = |component: f64| -> f64 {
        let p = ((1.0 + component / alpha) / 2.0).clamp(0.0, 1.0);
        let hits = Binomial::new(shots, p).expect("p in [0,1]").sample(rng);
        alpha * (2.0 * hits as f64 / shots as f64 - 1.0)
    };
    let re = part(value.re);
    let im = part(value.im);
    Ok(Complex64::new(re, im))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SampleRecord {
    pub node: usize,
    pub node_prime: usize,
    pub exact: Complex64,
    pub estimate: Complex64,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    /// Estimated <u(T), O u(T)>, physical frame, unnormalized state.
    pub value: f64,
    pub half_width: f64,
    pub plan: EstimatorPlan,
    pub kernel_l1: f64,
    pub grid_intervals: usize,
    /// Node propagations the emulation actually ran (one per grid node).
    pub node_propagations: u64,
    /// Shots a hardware run would spend: samples x 2 parts x shots each.
    pub total_shots: u64,
    pub records: Vec<SampleRecord>,
}

fn check_observable(problem: &ProblemInstance, observable: &CMatrix) -> Result<()> {
    if observable.nrows() != problem.dim() || observable.ncols() != problem.dim() {
        return Err(LchsError::Dimension(format!(
            "observable is {}x{}, problem dimension is {}",
            observable.nrows(),
            observable.ncols(),
            problem.dim()
        )));
    }
    check_hermitian(observable, 1e-10, "observable")
}

struct NodeStates {
    grid: KernelGrid,
    states: Vec<CVector>,
    applied: Vec<CVector>,
    scale: f64,
}

/// Shared setup: settle an internal kernel grid at state accuracy
/// eps/(40 (||O|| + 1)), collect U_k u0hat for every node and O times each,
/// and the physical-frame scale ||u0||^2 e^{2cT}.
fn prepare_nodes(
    problem: &ProblemInstance,
    observable: &CMatrix,
    eps_state: f64,
    backend: &PropagatorBackend,
) -> Result<NodeStates> {
    if problem.source.is_some() {
        return Err(LchsError::InvalidArgument(
            "observable estimation covers homogeneous problems only".into(),
        ));
    }
    let u0n = problem.u0.norm();
    if u0n == 0.0 {
        return Err(LchsError::InvalidArgument("initial state is zero".into()));
    }
    let u0 = problem.u0.map(|z| z / u0n);
    let gen_s = problem.shifted_generator();
    let horizon = problem.horizon();
    let cutoff = truncation_cutoff(eps_state / 3.0, TruncationMode::Homogeneous)?;
    let threshold = eps_state / 4.0 * (-problem.shift * horizon).exp();
    let (grid, cache, _) = refine_homogeneous(&gen_s, horizon, cutoff, threshold, backend, &u0)?;
    let states: Vec<CVector> = grid
        .nodes
        .iter()
        .map(|k| cache.hom[&k.to_bits()].clone())
        .collect();
    let applied: Vec<CVector> = states.iter().map(|v| observable * v).collect();
    let x = 2.0 * problem.shift * horizon;
    if x > 700.0 {
        return Err(LchsError::Budget(format!(
            "shift lift e^{{{x:.1}}} exceeds double range"
        )));
    }
    Ok(NodeStates {
        grid,
        states,
        applied,
        scale: u0n * u0n * x.exp(),
    })
}

/// Monte Carlo estimate of <u(T), O u(T)> from emulated two-node Hadamard
/// tests. Kernel-node pairs are drawn independently with probability
/// proportional to the quadrature coefficients; each sample gets its own
/// deterministic RNG stream off `seed`.
pub fn estimate_observable(
    problem: &ProblemInstance,
    observable: &CMatrix,
    eps: f64,
    delta: f64,
    seed: u64,
    backend: &PropagatorBackend,
) -> Result<EstimateReport> {
    check_observable(problem, observable)?;
    let o_norm = spectral_norm_hermitian(observable);
    let eps_state = eps / (40.0 * (o_norm + 1.0));
    let nodes = prepare_nodes(problem, observable, eps_state, backend)?;
    let plan = plan_estimator(nodes.grid.l1_norm, o_norm, eps, delta)?;

    let alias = WeightedAliasIndex::new(nodes.grid.coefficients.clone()).map_err(|e| {
        LchsError::InvalidArgument(format!("kernel coefficients unusable as weights: {e}"))
    })?;
    let mut records = Vec::with_capacity(plan.samples as usize);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..plan.samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i + 1);
        let j = alias.sample(&mut rng);
        let j_prime = alias.sample(&mut rng);
        let exact = nodes.states[j].dotc(&nodes.applied[j_prime]);
        let estimate =
            hadamard_test_emulate_with(exact, plan.alpha_o, plan.shots_per_point, &mut rng)?;
        acc += estimate;
        records.push(SampleRecord {
            node: j,
            node_prime: j_prime,
            exact,
            estimate,
        });
    }
    let mean = acc / plan.samples as f64;
    let l1sq = nodes.grid.l1_norm * nodes.grid.l1_norm;
    Ok(EstimateReport {
        value: l1sq * mean.re * nodes.scale,
        half_width: plan.half_width * nodes.scale,
        plan,
        kernel_l1: nodes.grid.l1_norm,
        grid_intervals: nodes.grid.intervals,
        node_propagations: (nodes.grid.intervals + 1) as u64,
        total_shots: plan.samples * 2 * plan.shots_per_point,
        records,
    })
}

/// Noise-free cross-check on a small fixed grid: the weighted double sum
/// over all node pairs against the same expectation taken directly on the
/// assembled state. Returns (pair_sum, direct), both physical frame.
pub fn enumerate_expectation(
    problem: &ProblemInstance,
    observable: &CMatrix,
    grid: &KernelGrid,
    backend: &PropagatorBackend,
) -> Result<(f64, f64)> {
    check_observable(problem, observable)?;
    if problem.source.is_some() {
        return Err(LchsError::InvalidArgument(
            "observable estimation covers homogeneous problems only".into(),
        ));
    }
    let u0n = problem.u0.norm();
    if u0n == 0.0 {
        return Err(LchsError::InvalidArgument("initial state is zero".into()));
    }
    let u0 = problem.u0.map(|z| z / u0n);
    let gen_s = problem.shifted_generator();
    let horizon = problem.horizon();
    let states: Vec<CVector> = grid
        .nodes
        .iter()
        .map(|&k| propagate(&gen_s, k, 0.0, horizon, backend, &u0))
        .collect::<Result<_>>()?;
    let applied: Vec<CVector> = states.iter().map(|v| observable * v).collect();
    let mut pair_sum = Complex64::new(0.0, 0.0);
    for (j, cj) in grid.coefficients.iter().enumerate() {
        for (jp, cjp) in grid.coefficients.iter().enumerate() {
            pair_sum += states[j].dotc(&applied[jp]) * (cj * cjp);
        }
    }
    let mut assembled = CVector::zeros(problem.dim());
    for (j, cj) in grid.coefficients.iter().enumerate() {
        assembled += states[j].scale(*cj);
    }
    let direct = assembled.dotc(&(observable * &assembled));
    let x = 2.0 * problem.shift * horizon;
    let scale = u0n * u0n * x.exp();
    Ok((pair_sum.re * scale, direct.re * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;
    use crate::operators::ShiftPolicy;
    use crate::operators::TimeDependentGenerator;
    use crate::quadrature::build_kernel_grid;
    use crate::solver::reference_solution;

    fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(-1.0, 0.0)])
    }

    fn small_problem(seed: u64) -> ProblemInstance {
        use crate::operators::hermitian_split;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = CMatrix::from_fn(2, 2, |_, _| {
            c64(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let (l_half, h) = hermitian_split(&raw).unwrap();
        let l = &l_half * &l_half;
        let a = &l + h.map(|z| z * c64(0.0, 1.0));
        let gen = TimeDependentGenerator::from_matrix(a, 1.0).unwrap();
        let u0 = CVector::from_vec(vec![c64(0.8, 0.0), c64(0.6, 0.0)]);
        ProblemInstance::new(gen, u0, None, ShiftPolicy::Auto).unwrap()
    }

    #[test]
    fn plan_hits_the_reference_point() {
        // l1 = 1, ||O|| = 1: eps' = eps/2, shots = (10/eps)^2.
        let plan = plan_estimator(1.0, 1.0, 0.05, 0.1).unwrap();
        assert_eq!(plan.shots_per_point, 40_000);
        assert!((plan.eps_inner - 0.025).abs() < 1e-15);
        let expect_j = (8.0 * 4.0 * (40.0f64).ln() / 0.0025).ceil() as u64;
        assert_eq!(plan.samples, expect_j);
        // Half-width collapses to eps/2 exactly at the minimal sample count
        // up to the ceiling.
        assert!(plan.half_width <= 0.025 + 1e-6, "{}", plan.half_width);
        assert!(plan.half_width >= 0.024, "{}", plan.half_width);
    }

    #[test]
    fn plan_rejects_absurd_budgets() {
        assert!(matches!(
            plan_estimator(1.0, 100.0, 1e-4, 0.01),
            Err(LchsError::Budget(_))
        ));
    }

    #[test]
    fn hadamard_estimates_are_unbiased() {
        let value = c64(0.6, -0.3);
        let alpha = 2.0;
        let mut acc = c64(0.0, 0.0);
        let trials = 4000;
        for s in 0..trials {
            acc += hadamard_test_emulate(value, alpha, 1000, s).unwrap();
        }
        let mean = acc / trials as f64;
        assert!((mean - value).norm() < 5e-3, "mean {mean}");
    }

    #[test]
    fn hadamard_rejects_out_of_range_values() {
        assert!(hadamard_test_emulate(c64(3.0, 0.0), 2.0, 100, 1).is_err());
        assert!(hadamard_test_emulate(c64(0.5, 0.0), 1.0, 0, 1).is_err());
    }

    #[test]
    fn correlation_matches_swapped_conjugate() {
        let problem = small_problem(3);
        let backend = PropagatorBackend::exact(1e-9);
        let o = pauli_z();
        let a = correlation_function(&problem, 1.5, -0.7, &o, &backend).unwrap();
        let b = correlation_function(&problem, -0.7, 1.5, &o, &backend).unwrap();
        assert!((a - b.conj()).norm() < 1e-9);
        let same = correlation_function(
            &problem,
            0.4,
            0.4,
            &crate::linalg::identity(2),
            &backend,
        )
        .unwrap();
        assert!((same - c64(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn alias_sampling_tracks_the_coefficients() {
        let grid = build_kernel_grid(2.0, 4).unwrap();
        let alias = WeightedAliasIndex::new(grid.coefficients.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 200_000usize;
        let mut counts = vec![0usize; grid.nodes.len()];
        for _ in 0..draws {
            counts[alias.sample(&mut rng)] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let p = grid.coefficients[j] / grid.l1_norm;
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let dev = (c as f64 - draws as f64 * p).abs();
            assert!(dev < 4.5 * sigma, "node {j}: dev {dev}, sigma {sigma}");
        }
    }

    #[test]
    fn estimate_is_deterministic_in_the_seed() {
        let problem = small_problem(5);
        let backend = PropagatorBackend::exact(1e-7);
        let o = pauli_z();
        let a = estimate_observable(&problem, &o, 0.3, 0.3, 7, &backend).unwrap();
        let b = estimate_observable(&problem, &o, 0.3, 0.3, 7, &backend).unwrap();
        assert_eq!(a.value, b.value);
        let c = estimate_observable(&problem, &o, 0.3, 0.3, 8, &backend).unwrap();
        assert_ne!(a.value, c.value);
        assert_eq!(a.records.len(), a.plan.samples as usize);
    }

    #[test]
    fn estimate_lands_within_its_half_width() {
        let problem = small_problem(5);
        let backend = PropagatorBackend::exact(1e-7);
        let o = pauli_z();
        let report = estimate_observable(&problem, &o, 0.2, 0.2, 11, &backend).unwrap();
        let u = reference_solution(&problem, 1e-10).unwrap();
        let truth = u.dotc(&(&o * &u)).re;
        assert!(
            (report.value - truth).abs() <= 0.2,
            "estimate {} vs truth {truth}, half width {}",
            report.value,
            report.half_width
        );
        assert!(report.half_width <= 0.2);
        assert_eq!(
            report.total_shots,
            report.plan.samples * 2 * report.plan.shots_per_point
        );
    }

    #[test]
    fn enumeration_agrees_with_the_direct_expectation() {
        let problem = small_problem(9);
        let backend = PropagatorBackend::exact(1e-10);
        let grid = build_kernel_grid(2.0, 8).unwrap();
        let o = pauli_z();
        let (pair_sum, direct) = enumerate_expectation(&problem, &o, &grid, &backend).unwrap();
        assert!(
            (pair_sum - direct).abs() <= 1e-12 * direct.abs().max(1.0),
            "pair sum {pair_sum} vs direct {direct}"
        );
    }

    #[test]
    fn estimator_rejects_non_hermitian_observables() {
        let problem = small_problem(1);
        let backend = PropagatorBackend::exact(1e-7);
        let o = CMatrix::from_row_slice(
            2,
            2,
            &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)],
        );
        assert!(matches!(
            estimate_observable(&problem, &o, 0.3, 0.3, 1, &backend),
            Err(LchsError::NotHermitian(_))
        ));
    }
}
