//! JSON problem descriptions: a generator assembled from matrix terms with
//! scalar time profiles, an initial state, an optional source in the same
//! style, and a shift policy. Also hosts the seeded random-instance builders
//! the sweep tooling and tests share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::error::{LchsError, Result};
use crate::linalg::{c64, CMatrix, CVector};
use crate::operators::{ProblemInstance, ShiftPolicy, TimeDependentGenerator};

/// Scalar factor applied to a term's matrix: "const", "poly:c0,c1,...", or
/// "sin:freq,phase".
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Const,
    Poly(Vec<f64>),
    Sin { freq: f64, phase: f64 },
}

impl Profile {
    pub fn parse(text: &str) -> Result<Self> {
        if text == "const" {
            return Ok(Profile::Const);
        }
        let parse_numbers = |list: &str, what: &str| -> Result<Vec<f64>> {
            list.split(',')
                .map(|piece| {
                    piece.trim().parse::<f64>().map_err(|_| {
                        LchsError::InvalidArgument(format!(
                            "bad number {piece:?} in {what} profile {text:?}"
                        ))
                    })
                })
                .collect()
        };
        if let Some(rest) = text.strip_prefix("poly:") {
            let coeffs = parse_numbers(rest, "poly")?;
            if coeffs.is_empty() {
                return Err(LchsError::InvalidArgument(
                    "poly profile needs at least one coefficient".into(),
                ));
            }
            return Ok(Profile::Poly(coeffs));
        }
        if let Some(rest) = text.strip_prefix("sin:") {
            let nums = parse_numbers(rest, "sin")?;
            if nums.len() != 2 {
                return Err(LchsError::InvalidArgument(format!(
                    "sin profile takes freq,phase; got {} values",
                    nums.len()
                )));
            }
            return Ok(Profile::Sin {
                freq: nums[0],
                phase: nums[1],
            });
        }
        Err(LchsError::InvalidArgument(format!(
            "unknown time profile {text:?}; expected const, poly:..., or sin:freq,phase"
        )))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Profile::Const => 1.0,
            Profile::Poly(coeffs) => coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c),
            Profile::Sin { freq, phase } => (freq * t + phase).sin(),
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            Profile::Const => true,
            Profile::Poly(coeffs) => coeffs.len() <= 1,
            Profile::Sin { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    /// Row-major [re, im] pairs, dim^2 of them.
    pub matrix: Vec<[f64; 2]>,
    pub time_profile: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTermSpec {
    /// [re, im] pairs, dim of them.
    pub vector: Vec<[f64; 2]>,
    pub time_profile: String,
}

/// "auto" or an explicit shift value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftSpec {
    Word(String),
    Value(f64),
}

impl ShiftSpec {
    fn policy(&self) -> Result<ShiftPolicy> {
        match self {
            ShiftSpec::Word(w) if w == "auto" => Ok(ShiftPolicy::Auto),
            ShiftSpec::Word(w) => Err(LchsError::InvalidArgument(format!(
                "shift must be \"auto\" or a number, got {w:?}"
            ))),
            ShiftSpec::Value(v) => Ok(ShiftPolicy::Value(*v)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub terms: Vec<TermSpec>,
    pub u0: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<SourceTermSpec>>,
    pub shift: ShiftSpec,
}

pub fn encode_matrix(m: &CMatrix) -> Vec<[f64; 2]> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

pub fn decode_matrix(entries: &[[f64; 2]], dim: usize) -> Result<CMatrix> {
    if entries.len() != dim * dim {
        return Err(LchsError::Dimension(format!(
            "matrix has {} entries, expected {}^2 = {}",
            entries.len(),
            dim,
            dim * dim
        )));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| {
        let [re, im] = entries[i * dim + j];
        c64(re, im)
    }))
}

pub fn encode_vector(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn decode_vector(entries: &[[f64; 2]], dim: usize) -> Result<CVector> {
    if entries.len() != dim {
        return Err(LchsError::Dimension(format!(
            "vector has {} entries, expected {dim}",
            entries.len()
        )));
    }
    Ok(CVector::from_iterator(
        dim,
        entries.iter().map(|&[re, im]| c64(re, im)),
    ))
}

fn check_finite(entries: &[[f64; 2]], what: &str) -> Result<()> {
    for [re, im] in entries {
        if !(re.is_finite() && im.is_finite()) {
            return Err(LchsError::Validation(format!(
                "{what} contains a non-finite entry ({re}, {im})"
            )));
        }
    }
    Ok(())
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        if self.dim == 0 {
            return Err(LchsError::InvalidArgument("dimension must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(LchsError::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.terms.is_empty() {
            return Err(LchsError::InvalidArgument(
                "problem needs at least one generator term".into(),
            ));
        }
        let dim = self.dim;
        let mut terms = Vec::with_capacity(self.terms.len());
        let mut all_static = true;
        for term in &self.terms {
            check_finite(&term.matrix, "generator term")?;
            let profile = Profile::parse(&term.time_profile)?;
            all_static &= profile.is_static();
            terms.push((decode_matrix(&term.matrix, dim)?, profile));
        }
        check_finite(&self.u0, "initial state")?;
        let u0 = decode_vector(&self.u0, dim)?;
        let eval = move |t: f64| {
            let mut a = CMatrix::zeros(dim, dim);
            for (matrix, profile) in &terms {
                a += matrix * c64(profile.eval(t), 0.0);
            }
            a
        };
        let generator =
            TimeDependentGenerator::from_fn(dim, self.horizon, eval, 2, all_static)?;
        let source = match &self.source {
            None => None,
            Some(list) => {
                if list.is_empty() {
                    return Err(LchsError::InvalidArgument(
                        "source list, when present, must be non-empty".into(),
                    ));
                }
                let mut parts = Vec::with_capacity(list.len());
                for entry in list {
                    check_finite(&entry.vector, "source term")?;
                    let profile = Profile::parse(&entry.time_profile)?;
                    parts.push((decode_vector(&entry.vector, dim)?, profile));
                }
                Some(Arc::new(move |t: f64| {
                    let mut b = CVector::zeros(dim);
                    for (vector, profile) in &parts {
                        b += vector * c64(profile.eval(t), 0.0);
                    }
                    b
                }) as Arc<dyn Fn(f64) -> CVector + Send + Sync>)
            }
        };
        ProblemInstance::new(generator, u0, source, self.shift.policy()?)
    }
}

/// Hermitian observable for the estimator, as row-major [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub dim: usize,
    pub matrix: Vec<[f64; 2]>,
}

impl ObservableSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn matrix(&self) -> Result<CMatrix> {
        check_finite(&self.matrix, "observable")?;
        decode_matrix(&self.matrix, self.dim)
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> CVector {
    let raw = CVector::from_iterator(
        dim,
        (0..dim).map(|_| c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
    );
    let norm = raw.norm();
    raw / c64(norm.max(1e-9), 0.0)
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> CMatrix {
    let raw = CMatrix::from_fn(dim, dim, |_, _| {
        c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let herm = (&raw + raw.adjoint()) * c64(0.5, 0.0);
    let norm = crate::linalg::spectral_norm_hermitian(&herm);
    herm * c64(scale / norm.max(1e-12), 0.0)
}

/// Gram matrix G G^dagger scaled to unit spectral norm, then to `scale`;
/// positive semidefinite by construction.
fn random_psd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    let psd = &g * g.adjoint();
    let norm = crate::linalg::spectral_norm_hermitian(&psd);
    psd * c64(scale / norm.max(1e-12), 0.0)
}

/// Slowly driven dissipative instance: L(t) stays positive semidefinite for
/// every t because each oscillating part rides on a larger constant offset.
pub fn random_spec(seed: u64, dim: usize, l_scale: f64, h_scale: f64, horizon: f64) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l0 = random_psd(&mut rng, dim, l_scale);
    let l1 = random_psd(&mut rng, dim, l_scale);
    let h0 = random_hermitian(&mut rng, dim, h_scale);
    let h1 = random_hermitian(&mut rng, dim, 0.5 * h_scale);
    let u0 = random_unit_vector(&mut rng, dim);
    let i = c64(0.0, 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    ProblemSpec {
        dim,
        horizon,
        terms: vec![
            TermSpec {
                matrix: encode_matrix(&(&l0 * c64(0.6, 0.0) + &l1 * c64(0.6, 0.0) + &h0 * i)),
                time_profile: "const".into(),
            },
            TermSpec {
                matrix: encode_matrix(&(&l0 * c64(0.4, 0.0))),
                time_profile: "sin:0.3,0".into(),
            },
            TermSpec {
                matrix: encode_matrix(&(&l1 * c64(0.4, 0.0))),
                time_profile: format!("sin:0.2,{half_pi}"),
            },
            TermSpec {
                matrix: encode_matrix(&(&h1 * i)),
                time_profile: "sin:0.25,0".into(),
            },
        ],
        u0: encode_vector(&u0),
        source: None,
        shift: ShiftSpec::Word("auto".into()),
    }
}

/// Time-independent variant; same sampling, single constant term.
pub fn random_static_spec(
    seed: u64,
    dim: usize,
    l_scale: f64,
    h_scale: f64,
    horizon: f64,
) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = random_psd(&mut rng, dim, l_scale);
    let h = random_hermitian(&mut rng, dim, h_scale);
    let u0 = random_unit_vector(&mut rng, dim);
    ProblemSpec {
        dim,
        horizon,
        terms: vec![TermSpec {
            matrix: encode_matrix(&(&l + &h * c64(0.0, 1.0))),
            time_profile: "const".into(),
        }],
        u0: encode_vector(&u0),
        source: None,
        shift: ShiftSpec::Word("auto".into()),
    }
}
