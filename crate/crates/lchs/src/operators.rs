use std::sync::{Arc, OnceLock};

use nalgebra::DVector;

use crate::error::{LchsError, Result};
use crate::linalg::{
    c64, check_hermitian, min_eigenvalue_hermitian, spectral_norm, CMatrix, CVector,
};
use crate::util::uniform_grid;

/// Split A = L + iH with L = (A+A^dagger)/2 and H = (A-A^dagger)/(2i),
/// both Hermitian. L carries the dissipative part, H the Hamiltonian part.
pub fn hermitian_split(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    if !a.is_square() {
        return Err(LchsError::Dimension(format!(
            "hermitian split needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let adj = a.adjoint();
    let l = (a + &adj).map(|z| z * 0.5);
    let h = (a - &adj).map(|z| z * c64(0.0, -0.5));
    Ok((l, h))
}

type MatrixFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;
pub type SourceFn = Arc<dyn Fn(f64) -> CVector + Send + Sync>;

/// A time-dependent generator A(t) for du/dt = -A(t)u on [0, horizon],
/// with on-demand access to its Hermitian split parts.
#[derive(Clone)]
pub struct TimeDependentGenerator {
    dim: usize,
    horizon: f64,
    eval: MatrixFn,
    time_independent: bool,
    smoothness: u32,
    diag_l_hint: Option<DVector<f64>>,
    diag_l_probe: Arc<OnceLock<Option<DVector<f64>>>>,
}

impl TimeDependentGenerator {
    pub fn from_fn<F>(
        dim: usize,
        horizon: f64,
        eval: F,
        smoothness: u32,
        time_independent: bool,
    ) -> Result<Self>
    where
        F: Fn(f64) -> CMatrix + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(LchsError::Dimension("generator dimension must be positive".into()));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(LchsError::InvalidArgument(format!(
                "horizon must be finite and nonnegative, got {horizon}"
            )));
        }
        let probe = eval(0.0);
        if probe.nrows() != dim || probe.ncols() != dim {
            return Err(LchsError::Dimension(format!(
                "evaluator returned {}x{}, expected {dim}x{dim}",
                probe.nrows(),
                probe.ncols()
            )));
        }
        Ok(Self {
            dim,
            horizon,
            eval: Arc::new(eval),
            time_independent,
            smoothness,
            diag_l_hint: None,
            diag_l_probe: Arc::new(OnceLock::new()),
        })
    }

    pub fn from_matrix(a: CMatrix, horizon: f64) -> Result<Self> {
        let dim = a.nrows();
        Self::from_fn(dim, horizon, move |_| a.clone(), u32::MAX, true)
    }

    /// Declare that L(t) is the given real diagonal for all t, enabling the
    /// fast-forwarded interaction-picture route even when H(t) varies.
    pub fn with_static_diagonal_l(mut self, diag: DVector<f64>) -> Result<Self> {
        if diag.len() != self.dim {
            return Err(LchsError::Dimension(format!(
                "diagonal hint has length {}, generator dimension is {}",
                diag.len(),
                self.dim
            )));
        }
        self.diag_l_hint = Some(diag);
        self.diag_l_probe = Arc::new(OnceLock::new());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }

    pub fn a(&self, t: f64) -> CMatrix {
        (self.eval)(t)
    }

    pub fn split(&self, t: f64) -> (CMatrix, CMatrix) {
        hermitian_split(&self.a(t)).expect("generator evaluator changed shape")
    }

    pub fn l(&self, t: f64) -> CMatrix {
        self.split(t).0
    }

    pub fn h(&self, t: f64) -> CMatrix {
        self.split(t).1
    }

    /// H(t) + k L(t), the Hermitian generator of the node-k unitary flow.
    pub fn hamiltonian(&self, k: f64, t: f64) -> CMatrix {
        let (l, h) = self.split(t);
        h + l.map(|z| z * k)
    }

    /// Generator of the unitary node flow as a first-order ODE generator:
    /// dU/dt = -[i(H + kL)]U.
    pub fn unitary_generator(&self, k: f64) -> Self {
        let inner = self.clone();
        Self {
            dim: self.dim,
            horizon: self.horizon,
            eval: Arc::new(move |t| inner.hamiltonian(k, t).map(|z| z * c64(0.0, 1.0))),
            time_independent: self.time_independent,
            smoothness: self.smoothness,
            diag_l_hint: None,
            diag_l_probe: Arc::new(OnceLock::new()),
        }
    }

    /// Same evaluator on a shorter horizon, for solving to an intermediate
    /// time.
    pub fn truncated(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon <= self.horizon + 1e-9) {
            return Err(LchsError::InvalidArgument(format!(
                "truncated horizon {horizon} outside (0, {}]",
                self.horizon
            )));
        }
        let mut g = self.clone();
        g.horizon = horizon;
        Ok(g)
    }

    /// The generator A(t) + cI. Shifting by c >= -lambda_min(L) makes the
    /// dissipative part positive semidefinite; solutions pick up e^{-ct}.
    pub fn shifted(&self, c: f64) -> Self {
        if c == 0.0 {
            return self.clone();
        }
        let inner = self.eval.clone();
        let dim = self.dim;
        Self {
            dim,
            horizon: self.horizon,
            eval: Arc::new(move |t| {
                let mut a = inner(t);
                for i in 0..dim {
                    a[(i, i)] += c;
                }
                a
            }),
            time_independent: self.time_independent,
            smoothness: self.smoothness,
            diag_l_hint: self.diag_l_hint.as_ref().map(|d| d.add_scalar(c)),
            diag_l_probe: Arc::new(OnceLock::new()),
        }
    }

    /// The real diagonal of L when L is diagonal and time-independent:
    /// either declared at construction or detected for time-independent
    /// generators. None when the structure is absent.
    pub fn static_diagonal_l(&self) -> Option<DVector<f64>> {
        if let Some(d) = &self.diag_l_hint {
            return Some(d.clone());
        }
        self.diag_l_probe
            .get_or_init(|| {
                if !self.time_independent {
                    return None;
                }
                let l = self.l(0.0);
                let n = l.nrows();
                let mut off = 0.0f64;
                for r in 0..n {
                    for c in 0..n {
                        if r != c {
                            off = off.max(l[(r, c)].norm());
                        }
                    }
                }
                if off > 1e-12 {
                    return None;
                }
                Some(DVector::from_iterator(n, (0..n).map(|i| l[(i, i)].re)))
            })
            .clone()
    }
}

/// c = -min over the grid of lambda_min(L(t)). Adding cI to A makes L + cI
/// positive semidefinite on the grid; c is negative when L is strictly
/// positive definite, which legitimately shrinks the combination weights.
pub fn spectral_shift(
    gen: &TimeDependentGenerator,
    grid: &[f64],
) -> Result<(TimeDependentGenerator, f64)> {
    if grid.is_empty() {
        return Err(LchsError::InvalidArgument(
            "spectral shift needs a nonempty time grid".into(),
        ));
    }
    let mut min_eig = f64::INFINITY;
    for &t in grid {
        min_eig = min_eig.min(min_eigenvalue_hermitian(&gen.l(t)));
    }
    let c = -min_eig;
    Ok((gen.shifted(c), c))
}

/// Per-order maxima over the grid of ||H^(q)(t)|| + ||L^(q)(t)|| for
/// q = 0..p, by central finite differences with an order-adapted step.
pub fn derivative_norms(
    gen: &TimeDependentGenerator,
    p: u32,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(LchsError::InvalidArgument(
            "derivative estimation needs a nonempty time grid".into(),
        ));
    }
    let t_max = gen.horizon().max(1e-12);
    let mut out = Vec::with_capacity(p as usize + 1);
    for q in 0..=p {
        let h_fd = fd_step(t_max, q);
        let half_span = q as f64 * h_fd / 2.0;
        let coeffs = central_diff_coeffs(q);
        let mut best = 0.0f64;
        for &t in grid {
            let center = t.clamp(half_span, (t_max - half_span).max(half_span));
            let mut dl = CMatrix::zeros(gen.dim(), gen.dim());
            let mut dh = CMatrix::zeros(gen.dim(), gen.dim());
            for (i, &cf) in coeffs.iter().enumerate() {
                let tau = center + (q as f64 / 2.0 - i as f64) * h_fd;
                let (l, h) = gen.split(tau);
                dl += l.map(|z| z * cf);
                dh += h.map(|z| z * cf);
            }
            let scale = h_fd.powi(q as i32);
            let val = spectral_norm(&dh) / scale + spectral_norm(&dl) / scale;
            best = best.max(val);
        }
        out.push(best);
    }
    Ok(out)
}

fn fd_step(t_max: f64, q: u32) -> f64 {
    if q == 0 {
        return 1.0;
    }
    let roundoff = t_max * f64::EPSILON.powf(1.0 / (q as f64 + 2.0));
    (1e-4 * t_max).max(roundoff)
}

/// Signed binomial stencil for the q-th central difference at spacing h_fd:
/// f^(q)(t) ~ h^-q * sum_i (-1)^i C(q,i) f(t + (q/2 - i)h).
fn central_diff_coeffs(q: u32) -> Vec<f64> {
    let mut c = Vec::with_capacity(q as usize + 1);
    let mut binom = 1.0f64;
    for i in 0..=q {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        c.push(sign * binom);
        binom = binom * (q - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Lambda_p: sum over all 2^(p+1) choices of operators from {H, L} of the
/// spectral norm of the nested commutator [B_p, [..., [B_1, B_0]...]],
/// raised to the power 1/(p+1).
pub fn nested_commutator_sum(h: &CMatrix, l: &CMatrix, p: u32) -> Result<f64> {
    if h.shape() != l.shape() {
        return Err(LchsError::Dimension(format!(
            "operator shapes differ: {:?} vs {:?}",
            h.shape(),
            l.shape()
        )));
    }
    check_hermitian(h, 1e-10, "Hamiltonian part")?;
    check_hermitian(l, 1e-10, "dissipative part")?;
    if p > 20 {
        return Err(LchsError::InvalidArgument(format!(
            "commutator order {p} would enumerate 2^{} terms",
            p + 1
        )));
    }
    let mut sum = 0.0;
    for mask in 0u64..(1u64 << (p + 1)) {
        let pick = |i: u32| if (mask >> i) & 1 == 0 { h } else { l };
        let mut nested = pick(0).clone();
        for i in 1..=p {
            let b = pick(i);
            nested = b * &nested - &nested * b;
        }
        sum += spectral_norm(&nested);
    }
    Ok(sum.powf(1.0 / (p as f64 + 1.0)))
}

/// How the dissipative part is made positive semidefinite before solving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftPolicy {
    /// Compute c = -min lambda_min(L(t)) on the default sampling grid.
    Auto,
    /// Use the given shift; validated against the grid minimum.
    Value(f64),
    /// No shift; L(t) must already be positive semidefinite on the grid.
    None,
}

pub const SHIFT_GRID_POINTS: usize = 129;
const SHIFT_SLACK: f64 = 1e-10;

/// A full problem: generator, initial state, optional source, and the
/// recorded spectral shift. The generator stored is the original one;
/// solvers work on the shifted generator and undo the shift at the end.
#[derive(Clone)]
pub struct ProblemInstance {
    pub generator: TimeDependentGenerator,
    pub u0: CVector,
    pub source: Option<SourceFn>,
    pub shift: f64,
}

impl ProblemInstance {
    pub fn new(
        generator: TimeDependentGenerator,
        u0: CVector,
        source: Option<SourceFn>,
        policy: ShiftPolicy,
    ) -> Result<Self> {
        if u0.len() != generator.dim() {
            return Err(LchsError::Dimension(format!(
                "initial state has length {}, generator dimension is {}",
                u0.len(),
                generator.dim()
            )));
        }
        if let Some(b) = &source {
            let probe = b(0.0);
            if probe.len() != generator.dim() {
                return Err(LchsError::Dimension(format!(
                    "source returns length {}, generator dimension is {}",
                    probe.len(),
                    generator.dim()
                )));
            }
        }
        let grid = uniform_grid(generator.horizon().max(1e-12), SHIFT_GRID_POINTS);
        let min_eig = grid
            .iter()
            .map(|&t| min_eigenvalue_hermitian(&generator.l(t)))
            .fold(f64::INFINITY, f64::min);
        let shift = match policy {
            ShiftPolicy::Auto => -min_eig,
            ShiftPolicy::Value(c) => {
                if min_eig + c < -SHIFT_SLACK {
                    return Err(LchsError::Validation(format!(
                        "shift {c} leaves lambda_min(L + cI) = {:.3e} < -{SHIFT_SLACK:.0e}",
                        min_eig + c
                    )));
                }
                c
            }
            ShiftPolicy::None => {
                if min_eig < -SHIFT_SLACK {
                    return Err(LchsError::Validation(format!(
                        "dissipative part has lambda_min = {min_eig:.3e} < -{SHIFT_SLACK:.0e}; \
                         a spectral shift is required"
                    )));
                }
                0.0
            }
        };
        Ok(Self {
            generator,
            u0,
            source,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.generator.horizon()
    }

    pub fn shifted_generator(&self) -> TimeDependentGenerator {
        self.generator.shifted(self.shift)
    }

    /// Source seen in the shifted frame: e^{-cs} b(s).
    pub fn shifted_source(&self) -> Option<SourceFn> {
        let c = self.shift;
        self.source.as_ref().map(|b| {
            let b = b.clone();
            let f: SourceFn = Arc::new(move |s: f64| b(s).map(|z| z * (-c * s).exp()));
            f
        })
    }

    /// Trapezoid estimate of the source L1 norm: integral of ||b(s)|| ds
    /// over [0, T].
    pub fn source_l1(&self) -> f64 {
        let Some(b) = &self.source else {
            return 0.0;
        };
        let t = self.horizon();
        if t == 0.0 {
            return 0.0;
        }
        let n = 257;
        let grid = uniform_grid(t, n);
        let h = t / (n - 1) as f64;
        let mut acc = 0.0;
        for (i, &s) in grid.iter().enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * b(s).norm();
        }
        acc * h
    }
}
