//! Independent oracles: closed-loop simulation, the discrete Lyapunov
//! equation, the trace-form H₂ norm, and Monte-Carlo checks of ellipsoidal
//! invariance and Lyapunov decrease.
//!
//! Everything here deliberately avoids the LMI machinery, so certificates
//! produced by the analysis and synthesis programs can be cross-examined by
//! a computation path that shares nothing with the one that produced them.

mod esn;

pub use esn::{
    generate_surrogate_data, mprs_signal, simulate_esn, train_esn, train_esn_restarts, Dataset,
    EsnTrainConfig, MprsSpec, Scaling, SurrogatePreset,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{is_schur, ClosedLoop, ModelError};
use crate::sigmoid::eval_q;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("matrix is not Schur (spectral radius {0})")]
    NotSchur(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lyapunov solver did not reach the residual tolerance (residual {0:.3e})")]
    ResidualTooLarge(f64),
    #[error("ridge system is ill-conditioned")]
    IllConditioned,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Reference injection: x⁺ gains `b_r · signal[t]`.
#[derive(Debug, Clone)]
pub struct Reference {
    pub b_r: DVector<f64>,
    pub signal: Vec<f64>,
}

impl Reference {
    pub fn constant(b_r: DVector<f64>, value: f64, steps: usize) -> Self {
        Reference {
            b_r,
            signal: vec![value; steps],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub reference: Option<Vec<f64>>,
    /// True when the recursion hit a non-finite or overflowing state and
    /// stopped early.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("nonempty trajectory")
    }
}

const DIVERGENCE_NORM: f64 = 1e12;

/// Simulates x⁺ = A x + B q(C x) (+ B_r·y⁰) for `steps` transitions; the
/// trajectory includes the initial state, so it holds `steps + 1` states
/// unless it diverges.
pub fn simulate(
    cl: &ClosedLoop,
    x0: &DVector<f64>,
    steps: usize,
    reference: Option<&Reference>,
) -> Result<Trajectory, VerifyError> {
    if x0.len() != cl.n() {
        return Err(VerifyError::DimensionMismatch(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            cl.n()
        )));
    }
    if let Some(r) = reference {
        if r.b_r.len() != cl.n() {
            return Err(VerifyError::DimensionMismatch(
                "reference vector length differs from the state dimension".into(),
            ));
        }
        if r.signal.len() < steps {
            return Err(VerifyError::DimensionMismatch(format!(
                "reference signal has {} samples, {} needed",
                r.signal.len(),
                steps
            )));
        }
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut diverged = false;
    for t in 0..=steps {
        let y = &cl.c * &x;
        outputs.push(y.clone());
        if cl.k.nrows() > 0 {
            inputs.push(&cl.k * &x);
        }
        states.push(x.clone());
        if t == steps {
            break;
        }
        let q = DVector::from_vec(eval_q(&cl.kind, y.as_slice()));
        let mut next = &cl.a * &x + &cl.b * q;
        if let Some(r) = reference {
            next += &r.b_r * r.signal[t];
        }
        if next.iter().any(|v| !v.is_finite()) || next.norm() > DIVERGENCE_NORM {
            diverged = true;
            break;
        }
        x = next;
    }
    Ok(Trajectory {
        states,
        outputs,
        inputs,
        reference: reference.map(|r| r.signal[..steps.min(r.signal.len())].to_vec()),
        diverged,
    })
}

/// Solves X = Aᵀ X A + Q by Smith doubling: X_{k+1} = X_k + A_kᵀ X_k A_k,
/// A_{k+1} = A_k², which sums the series Σ (Aᵀ)ᵏ Q Aᵏ in log₂ steps.
pub fn solve_dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, VerifyError> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(VerifyError::DimensionMismatch(format!(
            "dlyap: A {}x{}, Q {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let (schur, rho) = is_schur(a)?;
    if !schur {
        return Err(VerifyError::NotSchur(rho));
    }
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..90 {
        let inc = ak.transpose() * &x * &ak;
        x += &inc;
        let anorm = ak.amax();
        if anorm < 1e-300 || inc.amax() <= 1e-18 * x.amax().max(1.0) {
            break;
        }
        ak = &ak * &ak;
    }
    let residual = (&x - a.transpose() * &x * a - q).amax();
    let tol = 1e-10 * q.amax().max(1e-300);
    if residual > tol.max(1e-10 * x.amax()) {
        return Err(VerifyError::ResidualTooLarge(residual));
    }
    Ok(x)
}

/// H₂ norm of x⁺ = A_cl x + d, z = C_cl x with identity disturbance entry:
/// √trace(X) with X = A_clᵀ X A_cl + C_clᵀ C_cl.
pub fn h2_norm_oracle(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> Result<f64, VerifyError> {
    if c_cl.ncols() != a_cl.nrows() {
        return Err(VerifyError::DimensionMismatch(format!(
            "h2 oracle: C has {} cols, A is {}x{}",
            c_cl.ncols(),
            a_cl.nrows(),
            a_cl.ncols()
        )));
    }
    let q = c_cl.transpose() * c_cl;
    let x = solve_dlyap(a_cl, &q)?;
    Ok(x.trace().sqrt())
}

/// Symmetric positive square root via eigendecomposition.
pub fn sym_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>, VerifyError> {
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| *v < -1e-12) {
        return Err(VerifyError::InvalidInput(
            "matrix is not positive semidefinite".into(),
        ));
    }
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Samples from the ellipsoid E(S) = {x : xᵀS⁻¹x ≤ 1}: Gaussian directions
/// through the symmetric square root of S; `boundary` pins the radius to 1,
/// otherwise the radius is u^{1/n} for uniform volume coverage.
pub struct EllipsoidSampler {
    sqrt_s: DMatrix<f64>,
    n: usize,
}

impl EllipsoidSampler {
    pub fn new(s: &DMatrix<f64>) -> Result<Self, VerifyError> {
        Ok(EllipsoidSampler {
            sqrt_s: sym_sqrt(s)?,
            n: s.nrows(),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng, boundary: bool) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        loop {
            for v in g.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = g.norm();
            if norm > 1e-12 {
                g /= norm;
                break;
            }
        }
        let r = if boundary {
            1.0
        } else {
            rng.gen_range(0.0..1.0_f64).powf(1.0 / self.n as f64)
        };
        &self.sqrt_s * (g * r)
    }
}

#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub samples: usize,
    /// Points whose one-step image left E(S).
    pub one_step_violations: usize,
    /// Points with V(x⁺) ≥ V(x) away from the origin.
    pub decrease_violations: usize,
    /// Samples whose trajectory norm fell below `convergence_drop` times
    /// the initial norm within the horizon.
    pub converged: usize,
    pub horizon: usize,
    /// Worst observed V(x⁺)/V(x).
    pub worst_v_ratio: f64,
    /// Worst one-step membership value max xᵀS⁻¹x over images (≤ 1 + tol
    /// when invariant).
    pub worst_membership: f64,
}

impl InvarianceReport {
    pub fn clean(&self) -> bool {
        self.one_step_violations == 0 && self.decrease_violations == 0
    }
}

const MEMBERSHIP_TOL: f64 = 1e-9;

/// Monte-Carlo invariance and decrease check for the ellipsoid E(S) under
/// the closed loop: one-step membership, strict V-decrease off the origin,
/// and horizon convergence statistics.
pub fn monte_carlo_invariance(
    s: &DMatrix<f64>,
    cl: &ClosedLoop,
    n_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<InvarianceReport, VerifyError> {
    if s.nrows() != cl.n() {
        return Err(VerifyError::DimensionMismatch(
            "ellipsoid dimension differs from the loop".into(),
        ));
    }
    let p = s
        .clone()
        .cholesky()
        .ok_or_else(|| VerifyError::InvalidInput("S is not positive definite".into()))?
        .inverse();
    let sampler = EllipsoidSampler::new(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_of = |x: &DVector<f64>| (x.transpose() * &p * x)[(0, 0)];

    let mut report = InvarianceReport {
        samples: n_samples,
        one_step_violations: 0,
        decrease_violations: 0,
        converged: 0,
        horizon,
        worst_v_ratio: 0.0,
        worst_membership: 0.0,
    };
    for k in 0..n_samples {
        let boundary = k % 2 == 0;
        let x = sampler.sample(&mut rng, boundary);
        let v0 = v_of(&x);
        if v0 <= 1e-24 {
            continue;
        }
        let y = &cl.c * &x;
        let q = DVector::from_vec(eval_q(&cl.kind, y.as_slice()));
        let xn = &cl.a * &x + &cl.b * q;
        let v1 = v_of(&xn);
        report.worst_membership = report.worst_membership.max(v1);
        if v1 > 1.0 + MEMBERSHIP_TOL {
            report.one_step_violations += 1;
        }
        let ratio = v1 / v0;
        report.worst_v_ratio = report.worst_v_ratio.max(ratio);
        if ratio >= 1.0 {
            report.decrease_violations += 1;
        }
        if horizon > 1 && k < 256 {
            let traj = simulate(cl, &x, horizon, None)?;
            if !traj.diverged && traj.final_state().norm() <= 1e-6 * x.norm().max(1e-12) {
                report.converged += 1;
            }
        }
    }
    Ok(report)
}
