use serde::{Deserialize, Serialize};

use crate::error::{LchsError, Result};
use crate::util::even_ceil;

const PI: f64 = std::f64::consts::PI;

/// Cauchy-Lorentz kernel 1/(pi (1 + k^2)).
pub fn kernel(k: f64) -> f64 {
    1.0 / (PI * (1.0 + k * k))
}

/// Kernel mass outside [-K, K]: (pi - 2 arctan K)/pi.
pub fn tail_mass(cutoff: f64) -> f64 {
    (PI - 2.0 * cutoff.atan()) / PI
}

#[derive(Clone, Copy, Debug)]
pub enum TruncationMode {
    Homogeneous,
    /// Carries the L1 norm of the source, which inflates the cutoff.
    Inhomogeneous { source_l1: f64 },
}

/// Smallest cutoff K whose kernel tail mass is <= eps; the inhomogeneous
/// mode additionally demands K >= ||b||_L1 / eps.
pub fn truncation_cutoff(eps: f64, mode: TruncationMode) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LchsError::InvalidArgument(format!(
            "truncation tolerance must lie in (0,1), got {eps}"
        )));
    }
    // tail_mass(K) = eps solved exactly: K = tan(pi (1 - eps) / 2).
    let k_hom = (PI * (1.0 - eps) / 2.0).tan();
    let k = match mode {
        TruncationMode::Homogeneous => k_hom,
        TruncationMode::Inhomogeneous { source_l1 } => k_hom.max(source_l1 / eps),
    };
    Ok(k.max(1.0))
}

/// Trapezoid discretization of the kernel integral over [-K, K]:
/// nodes k_j = -K + 2jK/M, endpoint-halved weights, and coefficients
/// c_j = w_j * kernel(k_j).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelGrid {
    pub cutoff: f64,
    pub intervals: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub l1_norm: f64,
}

pub fn build_kernel_grid(cutoff: f64, intervals: usize) -> Result<KernelGrid> {
    if intervals < 2 {
        return Err(LchsError::InvalidArgument(format!(
            "kernel grid needs at least 2 intervals, got {intervals}"
        )));
    }
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(LchsError::InvalidArgument(format!(
            "kernel cutoff must be positive and finite, got {cutoff}"
        )));
    }
    let m = intervals;
    let mut nodes = Vec::with_capacity(m + 1);
    let mut weights = Vec::with_capacity(m + 1);
    let mut coefficients = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let k = -cutoff + 2.0 * cutoff * j as f64 / m as f64;
        let w = if j == 0 || j == m {
            cutoff / m as f64
        } else {
            2.0 * cutoff / m as f64
        };
        nodes.push(k);
        weights.push(w);
        coefficients.push(w * kernel(k));
    }
    let l1_norm: f64 = coefficients.iter().sum();
    // A grid too coarse to resolve the unit-width kernel overshoots the
    // total mass and breaks the combination-weight semantics downstream.
    if l1_norm > 1.0 + 1e-12 {
        return Err(LchsError::InvalidArgument(format!(
            "kernel grid under-resolved: weight sum {l1_norm:.6} exceeds 1 \
             (cutoff {cutoff}, {intervals} intervals); increase the interval count"
        )));
    }
    Ok(KernelGrid {
        cutoff,
        intervals,
        nodes,
        weights,
        coefficients,
        l1_norm,
    })
}

/// A-priori interval count for the kernel direction from the composite
/// trapezoid bound (2K)^3 B / (12 M^2) <= eps with the crude curvature
/// envelope B = (||L||^2 T^2 + 4 ||L|| T + 6)/pi. Rounded up to even.
pub fn node_count_homogeneous(l_norm: f64, t: f64, eps: f64, cutoff: f64) -> Result<usize> {
    if !(l_norm >= 0.0 && t >= 0.0 && eps > 0.0 && cutoff > 0.0) {
        return Err(LchsError::InvalidArgument(
            "node count needs nonnegative norms and positive eps, cutoff".into(),
        ));
    }
    let envelope = (l_norm * l_norm * t * t + 4.0 * l_norm * t + 6.0) / PI;
    let m = ((2.0 * cutoff).powi(3) * envelope / (12.0 * eps)).sqrt();
    Ok(even_ceil(m))
}

/// Curvature envelopes for the source term, all sup norms over [0, T].
#[derive(Clone, Copy, Debug, Default)]
pub struct SourceEnvelope {
    pub b_sup: f64,
    pub b_d1: f64,
    pub b_d2: f64,
    pub h_sup: f64,
    pub l_sup: f64,
    pub h_d1: f64,
    pub l_d1: f64,
}

/// A-priori interval counts (M, M_t) for the two-dimensional source
/// quadrature, from the bound (2K T/12)(h_k^2 B_k + h_s^2 B_s) <= eps.
pub fn node_count_inhomogeneous(
    env: &SourceEnvelope,
    t: f64,
    eps: f64,
    cutoff: f64,
) -> Result<(usize, usize)> {
    if !(t >= 0.0 && eps > 0.0 && cutoff > 0.0) {
        return Err(LchsError::InvalidArgument(
            "node count needs nonnegative horizon and positive eps, cutoff".into(),
        ));
    }
    let half = eps / 2.0;
    let gen_k = env.h_sup + cutoff * env.l_sup;
    let gen_d1 = env.h_d1 + cutoff * env.l_d1;
    // k-direction: same curvature envelope as the homogeneous case, scaled
    // by the largest source magnitude and integrated over s.
    let b_k = (env.l_sup * env.l_sup * t * t + 4.0 * env.l_sup * t + 6.0) / PI * env.b_sup.max(1e-300);
    let m = ((2.0 * cutoff).powi(3) * t.max(1e-300) * b_k / (12.0 * half)).sqrt();
    // s-direction: two s-derivatives of U(T,s)b(s) bring down generator
    // norms and one generator derivative.
    let b_s = (env.b_d2
        + 2.0 * env.b_d1 * gen_k
        + env.b_sup * gen_k * gen_k
        + env.b_sup * gen_d1)
        / PI;
    let m_t = (2.0 * cutoff * t.powi(3) * b_s / (12.0 * half)).sqrt();
    Ok((even_ceil(m), even_ceil(m_t)))
}

/// Two-dimensional trapezoid grid for the source contribution: the kernel
/// grid in k and endpoint-halved nodes s_j' with weights v_j' in time.
/// Combined weights are v_j' * c_j; the source vectors themselves are kept
/// unnormalized, and the reported weighted L1 norm folds in ||b(s_j')||.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DuhamelGrid {
    pub kernel: KernelGrid,
    pub time_intervals: usize,
    pub time_nodes: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub source_norms: Vec<f64>,
    pub l1_weighted: f64,
}

pub fn build_duhamel_grid<F>(
    cutoff: f64,
    intervals: usize,
    time_intervals: usize,
    horizon: f64,
    source: F,
) -> Result<DuhamelGrid>
where
    F: Fn(f64) -> crate::linalg::CVector,
{
    if time_intervals < 2 {
        return Err(LchsError::InvalidArgument(format!(
            "source grid needs at least 2 time intervals, got {time_intervals}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(LchsError::InvalidArgument(
            "source grid needs a positive horizon".into(),
        ));
    }
    let kernel = build_kernel_grid(cutoff, intervals)?;
    let mt = time_intervals;
    let mut time_nodes = Vec::with_capacity(mt + 1);
    let mut time_weights = Vec::with_capacity(mt + 1);
    let mut source_norms = Vec::with_capacity(mt + 1);
    for j in 0..=mt {
        let s = horizon * j as f64 / mt as f64;
        let v = if j == 0 || j == mt {
            horizon / (2.0 * mt as f64)
        } else {
            horizon / mt as f64
        };
        let b = source(s);
        if b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LchsError::InvalidArgument(format!(
                "source evaluation at s = {s} is not finite"
            )));
        }
        time_nodes.push(s);
        time_weights.push(v);
        source_norms.push(b.norm());
    }
    let l1_weighted = kernel.l1_norm
        * time_weights
            .iter()
            .zip(&source_norms)
            .map(|(v, n)| v * n)
            .sum::<f64>();
    Ok(DuhamelGrid {
        kernel,
        time_intervals: mt,
        time_nodes,
        time_weights,
        source_norms,
        l1_weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, CVector};

    #[test]
    fn frozen_grid_anchor_k2_m4() {
        let g = build_kernel_grid(2.0, 4).unwrap();
        assert_eq!(g.nodes, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.weights, vec![0.5, 1.0, 1.0, 1.0, 0.5]);
        let expect = [0.0318310, 0.1591549, 0.3183099, 0.1591549, 0.0318310];
        for (c, e) in g.coefficients.iter().zip(expect) {
            assert!((c - e).abs() < 5e-8, "coefficient {c} vs {e}");
        }
        assert!((g.l1_norm - 0.7002817).abs() < 5e-8);
    }

    #[test]
    fn grid_coefficients_are_symmetric_and_positive() {
        for (k, m) in [(2.0, 4usize), (10.0, 64), (37.5, 300), (100.0, 4000)] {
            let g = build_kernel_grid(k, m).unwrap();
            for j in 0..=m {
                assert!(g.coefficients[j] > 0.0);
                let mirrored = g.coefficients[m - j];
                assert!((g.coefficients[j] - mirrored).abs() <= 1e-15);
            }
            assert!(g.l1_norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn high_resolution_mass_close_to_one() {
        let g = build_kernel_grid(100.0, 20000).unwrap();
        assert!(g.l1_norm <= 1.0);
        assert!(g.l1_norm >= 1.0 - 0.0064 - 1e-4, "mass {}", g.l1_norm);
    }

    #[test]
    fn weight_sum_converges_to_truncated_mass_from_below() {
        let k = 2.0;
        let target = 1.0 - tail_mass(k);
        let mut prev = build_kernel_grid(k, 4).unwrap().l1_norm;
        for m in [8usize, 16, 32, 64, 128, 256, 512] {
            let cur = build_kernel_grid(k, m).unwrap().l1_norm;
            assert!(cur + 1e-15 >= prev, "mass not monotone at M={m}");
            prev = cur;
        }
        // Endpoint Euler-Maclaurin term at h = 1/128 is around 5e-7.
        assert!((prev - target).abs() < 1e-6, "gap {:.2e}", (prev - target).abs());
    }

    #[test]
    fn under_resolved_grid_is_rejected() {
        assert!(build_kernel_grid(100.0, 2).is_err());
        assert!(build_kernel_grid(50.0, 4).is_err());
    }

    #[test]
    fn cutoff_formula_anchors() {
        // Tail at K = 10 is about 0.063451, so eps = 0.0635 is satisfied by 10.
        let k = truncation_cutoff(0.0635, TruncationMode::Homogeneous).unwrap();
        assert!(k <= 10.0, "cutoff {k}");
        assert!(tail_mass(k) <= 0.0635 + 1e-12);

        let k = truncation_cutoff(0.5, TruncationMode::Homogeneous).unwrap();
        assert!(k <= 2.0);
        assert!(tail_mass(2.0) < 0.5);
    }

    #[test]
    fn cutoff_roughly_doubles_when_eps_halves() {
        let mode = TruncationMode::Homogeneous;
        let mut prev = truncation_cutoff(0.02, mode).unwrap();
        for eps in [0.01, 0.005, 0.0025] {
            let k = truncation_cutoff(eps, mode).unwrap();
            let ratio = k / prev;
            assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
            prev = k;
        }
    }

    #[test]
    fn inhomogeneous_cutoff_respects_source_mass() {
        let k = truncation_cutoff(
            0.01,
            TruncationMode::Inhomogeneous { source_l1: 5.0 },
        )
        .unwrap();
        assert!(k >= 5.0 / 0.01);
    }

    #[test]
    fn homogeneous_node_count_scaling() {
        // Kernel-only curvature: no T dependence when ||L|| = 0.
        let m1 = node_count_homogeneous(0.0, 1.0, 1e-3, 10.0).unwrap();
        let m2 = node_count_homogeneous(0.0, 100.0, 1e-3, 10.0).unwrap();
        assert_eq!(m1, m2);

        // Fixed K: halving eps grows M by about sqrt(2).
        let a = node_count_homogeneous(2.0, 1.0, 1e-3, 20.0).unwrap() as f64;
        let b = node_count_homogeneous(2.0, 1.0, 5e-4, 20.0).unwrap() as f64;
        let ratio = b / a;
        assert!((ratio - std::f64::consts::SQRT_2).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn duhamel_time_weights_for_two_intervals() {
        let g = build_duhamel_grid(2.0, 4, 2, 1.0, |_| {
            CVector::from_vec(vec![c64(1.0, 0.0)])
        })
        .unwrap();
        assert_eq!(g.time_weights, vec![0.25, 0.5, 0.25]);
        assert_eq!(g.time_nodes, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn duhamel_weighted_mass_tracks_source_l1() {
        // Constant unit-norm source over T: weighted mass = ||c||_1 * T.
        let t = 3.0;
        let g = build_duhamel_grid(4.0, 32, 16, t, |_| {
            CVector::from_vec(vec![c64(0.6, 0.0), c64(0.8, 0.0)])
        })
        .unwrap();
        assert!((g.l1_weighted - g.kernel.l1_norm * t).abs() < 1e-10);
    }

    #[test]
    fn zero_source_gives_zero_weighted_mass() {
        let g = build_duhamel_grid(2.0, 8, 4, 1.0, |_| {
            CVector::from_vec(vec![c64(0.0, 0.0)])
        })
        .unwrap();
        assert_eq!(g.l1_weighted, 0.0);
    }
}
