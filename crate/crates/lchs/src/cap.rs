//! 1D complex-absorbing-potential demo: a wave packet on a finite-difference
//! grid with a purely imaginary absorbing layer near the walls, evolved both
//! by the kernel-integral solver and by a dense classical reference.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{LchsError, Result};
use crate::linalg::{c64, CMatrix, CVector};
use crate::operators::{ProblemInstance, ShiftPolicy, TimeDependentGenerator};
use crate::oracle;
use crate::propagators::PropagatorBackend;
use crate::solver;

/// Reference integrator tolerance for the demo; fixed so the oracle is
/// always far more accurate than any solver tolerance under test.
const ORACLE_TOL: f64 = 1e-10;

/// Discretized scattering problem. The generator evaluates
/// A(t) = diag(V_I) + i(-(1/2)Laplacian + diag(V_R(t))), so the dissipative
/// part is diagonal and time independent while all Hermitian dynamics sit in
/// the kinetic term plus the real potential.
pub struct CapProblem {
    pub n: usize,
    pub length: f64,
    /// Grid spacing length/n; cell-centered nodes, hard walls just outside.
    pub h: f64,
    pub points: Vec<f64>,
    pub v_i: DVector<f64>,
    /// max |V_R| sampled over the grid (and over time for moving potentials).
    pub v_r_max: f64,
    pub generator: TimeDependentGenerator,
}

impl CapProblem {
    /// Grid-level bound the resource planner uses for the Hamiltonian norm.
    pub fn h_norm_bound(&self) -> f64 {
        2.0 * (1.0 / (self.h * self.h) + self.v_r_max)
    }
}

/// Cell-centered nodes x_i = -length/2 + (i + 1/2) h.
pub fn grid_points(n: usize, length: f64) -> Vec<f64> {
    let h = length / n as f64;
    (0..n).map(|i| -0.5 * length + (i as f64 + 0.5) * h).collect()
}

/// -(1/2) d^2/dx^2 with Dirichlet walls: diagonal 1/h^2, off-diagonal -1/(2h^2).
fn kinetic_matrix(n: usize, h: f64) -> CMatrix {
    let inv_h2 = 1.0 / (h * h);
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            c64(inv_h2, 0.0)
        } else if i.abs_diff(j) == 1 {
            c64(-0.5 * inv_h2, 0.0)
        } else {
            c64(0.0, 0.0)
        }
    })
}

/// Polynomial absorbing ramp: 0 until the layer starts at distance `width`
/// from a wall, then eta ((width - d_edge)/width)^power up to eta at the wall.
pub fn absorber_profile(
    points: &[f64],
    length: f64,
    width: f64,
    eta: f64,
    power: u32,
) -> Result<DVector<f64>> {
    if !(width > 0.0 && width < 0.5 * length) {
        return Err(LchsError::InvalidArgument(format!(
            "absorber width {width} must sit inside (0, length/2 = {})",
            0.5 * length
        )));
    }
    if !(eta >= 0.0) || power < 1 {
        return Err(LchsError::InvalidArgument(format!(
            "absorber needs strength >= 0 and power >= 1, got eta {eta} power {power}"
        )));
    }
    let profile = points.iter().map(|&x| {
        let d_edge = 0.5 * length - x.abs();
        if d_edge < width {
            eta * ((width - d_edge) / width).powi(power as i32)
        } else {
            0.0
        }
    });
    Ok(DVector::from_iterator(points.len(), profile))
}

/// Normalized Gaussian exp(-(x-x0)^2/(4 sigma^2) + i p0 x) sampled on the grid.
pub fn gaussian_packet(points: &[f64], x0: f64, p0: f64, sigma: f64) -> Result<CVector> {
    if !(sigma > 0.0) {
        return Err(LchsError::InvalidArgument(format!(
            "packet width must be positive, got {sigma}"
        )));
    }
    let (Some(&lo), Some(&hi)) = (points.first(), points.last()) else {
        return Err(LchsError::InvalidArgument("empty grid".into()));
    };
    if !(x0 >= lo && x0 <= hi) {
        return Err(LchsError::InvalidArgument(format!(
            "packet center {x0} outside the grid [{lo}, {hi}]"
        )));
    }
    let raw = CVector::from_iterator(
        points.len(),
        points.iter().map(|&x| {
            let envelope = (-(x - x0) * (x - x0) / (4.0 * sigma * sigma)).exp();
            c64(envelope, 0.0) * c64(0.0, p0 * x).exp()
        }),
    );
    let norm = raw.norm();
    if !(norm > 0.0) {
        return Err(LchsError::Validation(
            "packet vanished on the grid; widen sigma or move x0".into(),
        ));
    }
    Ok(raw / c64(norm, 0.0))
}

fn build(
    n: usize,
    length: f64,
    v_r: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    v_i: DVector<f64>,
    horizon: f64,
    time_independent: bool,
) -> Result<CapProblem> {
    if n < 4 {
        return Err(LchsError::InvalidArgument(format!(
            "grid needs at least 4 points, got {n}"
        )));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(LchsError::InvalidArgument(format!(
            "domain length must be positive and finite, got {length}"
        )));
    }
    if v_i.len() != n {
        return Err(LchsError::Dimension(format!(
            "absorber has {} samples, grid has {n}",
            v_i.len()
        )));
    }
    for (i, &v) in v_i.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(LchsError::Validation(format!(
                "absorber sample {i} is {v}; damping must be nonnegative"
            )));
        }
    }
    let h = length / n as f64;
    let points = grid_points(n, length);
    let kinetic = kinetic_matrix(n, h);
    let probe_times: Vec<f64> = if time_independent {
        vec![0.0]
    } else {
        (0..9).map(|i| horizon * i as f64 / 8.0).collect()
    };
    let mut v_r_max = 0.0_f64;
    for &t in &probe_times {
        for &x in &points {
            v_r_max = v_r_max.max(v_r(x, t).abs());
        }
    }
    let eval = {
        let points = points.clone();
        let v_i = v_i.clone();
        let v_r = Arc::clone(&v_r);
        move |t: f64| {
            let mut a = kinetic.map(|z| c64(0.0, 1.0) * z);
            for i in 0..n {
                a[(i, i)] += c64(v_i[i], v_r(points[i], t));
            }
            a
        }
    };
    let generator = TimeDependentGenerator::from_fn(n, horizon, eval, 2, time_independent)?
        .with_static_diagonal_l(v_i.clone())?;
    Ok(CapProblem {
        n,
        length,
        h,
        points,
        v_i,
        v_r_max,
        generator,
    })
}

pub fn discretize<F>(
    n: usize,
    length: f64,
    v_r: F,
    v_i: DVector<f64>,
    horizon: f64,
) -> Result<CapProblem>
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    build(n, length, Arc::new(move |x, _| v_r(x)), v_i, horizon, true)
}

pub fn discretize_td<F>(
    n: usize,
    length: f64,
    v_r: F,
    v_i: DVector<f64>,
    horizon: f64,
) -> Result<CapProblem>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    build(n, length, Arc::new(v_r), v_i, horizon, false)
}

/// One row per snapshot time; states live alongside summary scalars so the
/// CLI can dump densities without re-solving.
pub struct CapDemo {
    pub times: Vec<f64>,
    pub lchs_norms: Vec<f64>,
    pub oracle_norms: Vec<f64>,
    /// Relative L2 distance between the solver estimate and the reference.
    pub errors: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub lchs_final: CVector,
    pub oracle_final: CVector,
}

/// Evolve the packet to `t_final`, solving from scratch at each snapshot time
/// and dragging a dense reference along the same schedule. The reference norm
/// must never grow (the absorber only removes amplitude); a reference that
/// decays below 1e-6 of the initial norm aborts the run because the success
/// probability of the final measurement would be negligible.
pub fn run_cap_demo(
    cap: &CapProblem,
    u0: &CVector,
    t_final: f64,
    eps: f64,
    backend: &PropagatorBackend,
    snapshots: usize,
) -> Result<CapDemo> {
    if u0.len() != cap.n {
        return Err(LchsError::Dimension(format!(
            "initial state has length {}, grid has {}",
            u0.len(),
            cap.n
        )));
    }
    if snapshots == 0 {
        return Err(LchsError::InvalidArgument("need at least one snapshot".into()));
    }
    if !(t_final > 0.0 && t_final <= cap.generator.horizon() + 1e-9) {
        return Err(LchsError::InvalidArgument(format!(
            "final time {t_final} outside the generator horizon {}",
            cap.generator.horizon()
        )));
    }
    let times: Vec<f64> = (0..=snapshots)
        .map(|i| t_final * i as f64 / snapshots as f64)
        .collect();

    // Reference first: it is cheap, and its terminal norm decides whether the
    // demo is worth running at all.
    let mut oracle_states = Vec::with_capacity(times.len());
    oracle_states.push(u0.clone());
    for w in times.windows(2) {
        let prev = oracle_states.last().expect("seeded above");
        let next = oracle::evolve_vector(&cap.generator, w[0], w[1], prev, ORACLE_TOL, None)?;
        if next.norm() > prev.norm() + 1e-10 {
            return Err(LchsError::Validation(format!(
                "reference norm grew from {} to {} over [{}, {}]; absorber must only damp",
                prev.norm(),
                next.norm(),
                w[0],
                w[1]
            )));
        }
        oracle_states.push(next);
    }
    let oracle_final = oracle_states.last().expect("seeded above").clone();
    if oracle_final.norm() < 1e-6 * u0.norm() {
        return Err(LchsError::DecayedSolution(format!(
            "norm decayed to {:e} of the initial value; the post-selected state is unmeasurable",
            oracle_final.norm() / u0.norm()
        )));
    }

    let mut lchs_states = Vec::with_capacity(times.len());
    lchs_states.push(u0.clone());
    for &t in &times[1..] {
        // No spectral shift: the absorber is nonnegative by construction.
        let problem = ProblemInstance::new(
            cap.generator.truncated(t)?,
            u0.clone(),
            None,
            ShiftPolicy::None,
        )?;
        let solved = solver::solve_homogeneous(&problem, eps, backend)?;
        lchs_states.push(solved.u_tilde);
    }

    let lchs_norms = lchs_states.iter().map(|u| u.norm()).collect();
    let oracle_norms: Vec<f64> = oracle_states.iter().map(|u| u.norm()).collect();
    let errors = lchs_states
        .iter()
        .zip(&oracle_states)
        .map(|(u, v)| (u - v).norm() / v.norm())
        .collect();
    let densities = lchs_states
        .iter()
        .map(|u| u.iter().map(|z| z.norm_sqr()).collect())
        .collect();
    Ok(CapDemo {
        times,
        lchs_norms,
        oracle_norms,
        errors,
        densities,
        lchs_final: lchs_states.pop().expect("seeded above"),
        oracle_final,
    })
}
