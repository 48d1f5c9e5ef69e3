//! Stability analysis programs for the closed loop x⁺ = Ax + Bq(Cx).
//!
//! Three certificate families, all built on the sector structure of the
//! sigmoid:
//!
//! - **Global**: from the global sector q(y)ᵀWσ(y) ≥ 0 alone. Needs both A
//!   and A∘ + BᵤK Schur, so it can never hold for loops with integral
//!   action.
//! - **Regional via auxiliary function**: splits q = dz + ψ and combines
//!   the generalized (polytope-restricted) saturation sector with the
//!   global sector [0, Θ] of ψ. Certificate: S, U, R, L with
//!   E(S) ⊆ L(H), H = LS⁻¹.
//! - **Regional via sector narrowing**: uses y(σ(y) − h q(y)) ≥ 0 on
//!   |yᵢ| ≤ ȳᵢ(hᵢ). Certificate: S, U at a fixed diagonal H, with
//!   Cᵢ S Cᵢᵀ ≤ ȳᵢ². The iteration over H = (h̄ + iΔh)I with h̄ from a
//!   dedicated minimum-h program maximizes the basin estimate.
//!
//! Every returned certificate carries an ellipsoid E(S) that is forward
//! invariant and contained in the basin of attraction; `validate_certificate`
//! re-checks the LMI residuals, the row (containment) conditions, a
//! Monte-Carlo one-step invariance test, and Lyapunov decrease, all through
//! the independent `verify` oracles.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_schur, ClosedLoop, ModelError, RnnModel};
use crate::sdp::{
    solve_feasibility_with, solve_max_linear_with, solve_min_linear_with, BlockSense, LinearRow,
    LmiBlock, Objective, SdpError, SdpProblem, SolveOptions, SolveStatus, SolverResult,
};
use crate::sigmoid::{compute_ybar, SigmoidError, SigmoidKind, YBAR_INFINITE};
use crate::verify::{monte_carlo_invariance, InvarianceReport, VerifyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Global,
    RegionalAux,
    RegionalNarrow,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Global => write!(f, "global"),
            Method::RegionalAux => write!(f, "aux"),
            Method::RegionalNarrow => write!(f, "narrow"),
        }
    }
}

/// Size measure maximized over the certificate ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FLmi {
    /// f(S) = S: maximizes the radius of the largest ball inscribed in E(S).
    LambdaMin,
    /// log det S (volume); needs a determinant-maximization backend.
    LogDet,
}

/// Which statement explains an infeasibility, when one applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Diagnosis {
    /// Global condition requires A and A∘ + BᵤK Schur.
    GlobalNecessary { rho: f64 },
    /// Regional aux-function condition requires A Schur.
    RegionalAuxNeedsSchur { rho: f64 },
    /// Sector narrowing is feasible iff A is Schur.
    NarrowNeedsSchur { rho: f64 },
    /// The solver reported infeasibility with no covering statement.
    Solver,
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnosis::GlobalNecessary { rho } => write!(
                f,
                "global condition requires both A and A0+Bu*K Schur (radius {rho:.6})"
            ),
            Diagnosis::RegionalAuxNeedsSchur { rho } => {
                write!(f, "aux-function condition requires A Schur (radius {rho:.6})")
            }
            Diagnosis::NarrowNeedsSchur { rho } => {
                write!(f, "sector narrowing requires A Schur (radius {rho:.6})")
            }
            Diagnosis::Solver => write!(f, "LMI program infeasible"),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("infeasible: {diagnosis}")]
    Infeasible { diagnosis: Diagnosis },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sigmoid(#[from] SigmoidError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Ellipsoid E(S) = {x : xᵀS⁻¹x ≤ 1}.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub s: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(s: DMatrix<f64>) -> Result<Self, AnalysisError> {
        let p = s
            .clone()
            .cholesky()
            .ok_or_else(|| AnalysisError::NumericalFailure("S is not positive definite".into()))?
            .inverse();
        Ok(Ellipsoid { s, p })
    }

    pub fn level(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.level(x) <= 1.0 + 1e-9
    }

    /// Radius of the largest inscribed ball, √λ_min(S).
    pub fn inscribed_radius(&self) -> f64 {
        self.s.clone().symmetric_eigenvalues().min().max(0.0).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub method: Method,
    pub s: DMatrix<f64>,
    /// Diagonal of the sector multiplier U.
    pub u: DVector<f64>,
    /// Diagonal of R (aux method only).
    pub r: Option<DVector<f64>>,
    /// L with H = LS⁻¹ (aux method only).
    pub l: Option<DMatrix<f64>>,
    /// Diagonal of the narrowing matrix H (narrow method only).
    pub h_mat: Option<DVector<f64>>,
    /// Sector slopes Θ used (aux method only).
    pub theta: Option<Vec<f64>>,
    /// Sector bounds ȳᵢ(hᵢ) used (narrow method only).
    pub ybar: Option<Vec<f64>>,
    /// Optimized size measure (None for pure feasibility certificates).
    pub gamma: Option<f64>,
    /// Worst eigenvalue of each program block at the returned assignment.
    pub residuals: Vec<(String, f64)>,
}

impl StabilityCertificate {
    pub fn ellipsoid(&self) -> Result<Ellipsoid, AnalysisError> {
        Ellipsoid::new(self.s.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Precheck {
    pub rho_a: f64,
    pub schur_a: bool,
    pub rho_a0_bu_k: f64,
    pub schur_a0_bu_k: bool,
}

impl Precheck {
    pub fn passes(&self) -> bool {
        self.schur_a && self.schur_a0_bu_k
    }
}

/// Spectral-radius prerequisites for the global certificate: both A and
/// A∘ + BᵤK must be Schur.
pub fn necessary_precheck(model: &RnnModel, k: &DMatrix<f64>) -> Result<Precheck, AnalysisError> {
    let cl = crate::model::build_closed_loop(model, k)?;
    let (schur_a, rho_a) = is_schur(&cl.a)?;
    let a0_bu_k = &model.a0 + &model.bu * k;
    let (schur_a0, rho_a0) = is_schur(&a0_bu_k)?;
    Ok(Precheck {
        rho_a,
        schur_a,
        rho_a0_bu_k: rho_a0,
        schur_a0_bu_k: schur_a0,
    })
}

pub(crate) fn default_solve_options() -> SolveOptions {
    SolveOptions::default()
}

fn neg(m: &DMatrix<f64>) -> DMatrix<f64> {
    m * -1.0
}

fn scaled_identity(n: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * s
}

fn diag_from(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

fn require_lambda_min(f_lmi: FLmi) -> Result<(), AnalysisError> {
    match f_lmi {
        FLmi::LambdaMin => Ok(()),
        FLmi::LogDet => Err(AnalysisError::Unsupported(
            "log-det maximization is not available in the reference backend; use LambdaMin".into(),
        )),
    }
}

fn status_gate(result: &SolverResult, what: &str) -> Result<(), AnalysisError> {
    match result.status {
        SolveStatus::Feasible => Ok(()),
        SolveStatus::Marginal => {
            let worst = result
                .block_residuals
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            if worst >= -crate::sdp::RESIDUAL_TOL {
                Ok(())
            } else {
                Err(AnalysisError::NumericalFailure(format!(
                    "{what}: marginal solution with residual {worst:.3e}; log: {}",
                    result.log.join(" | ")
                )))
            }
        }
        SolveStatus::Infeasible => Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::Solver,
        }),
        SolveStatus::NumericalFailure => Err(AnalysisError::NumericalFailure(format!(
            "{what}: {}",
            result.log.join("; ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// Program assemblies
// ---------------------------------------------------------------------------

/// Global program: [S, −SCᵀ, SAᵀ; −CS, 2U, UBᵀ; AS, BU, S] ≻ 0.
fn global_problem(cl: &ClosedLoop) -> Result<(SdpProblem, crate::sdp::VarId, crate::sdp::VarId), SdpError> {
    let (n, nu) = (cl.n(), cl.nu());
    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let mut blk = LmiBlock::new("global", &[n, nu, n], BlockSense::StrictPd);
    blk.add_term(0, 0, None, s, None);
    blk.add_term(1, 0, Some(neg(&cl.c)), s, None);
    blk.add_term(1, 1, Some(scaled_identity(nu, 2.0)), u, None);
    blk.add_term(2, 0, Some(cl.a.clone()), s, None);
    blk.add_term(2, 1, Some(cl.b.clone()), u, None);
    blk.add_term(2, 2, None, s, None);
    p.add_block(blk)?;
    Ok((p, s, u))
}

/// Checks the global exponential stability condition. On success the
/// certificate ellipsoid estimates nothing (stability is global); S and U
/// are returned as the Lyapunov witnesses.
pub fn check_global(cl: &ClosedLoop) -> Result<StabilityCertificate, AnalysisError> {
    let (rho_ok, rho) = is_schur(&cl.a)?;
    if !rho_ok {
        return Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::GlobalNecessary { rho },
        });
    }
    let (p, s, u) = global_problem(cl)?;
    let res = solve_feasibility_with(&p, &default_solve_options(), false)?;
    if res.status == SolveStatus::Infeasible {
        return Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::Solver,
        });
    }
    status_gate(&res, "global certificate")?;
    let cert = StabilityCertificate {
        method: Method::Global,
        s: res.var(s).clone(),
        u: res.var(u).diagonal(),
        r: None,
        l: None,
        h_mat: None,
        theta: None,
        ybar: None,
        gamma: None,
        residuals: Vec::new(),
    };
    Ok(finalize_certificate(cert, cl))
}

/// Aux-function program blocks shared by analysis and synthesis: the 4×4
/// main inequality and the ν row conditions [S, Lᵢᵀ; Lᵢ, 1] ⪰ 0.
fn aux_main_block(
    cl: &ClosedLoop,
    theta: &[f64],
    s: crate::sdp::VarId,
    u: crate::sdp::VarId,
    r: crate::sdp::VarId,
    l: crate::sdp::VarId,
) -> LmiBlock {
    let (n, nu) = (cl.n(), cl.nu());
    let th = diag_from(theta);
    let mut blk = LmiBlock::new("aux-main", &[n, nu, nu, n], BlockSense::StrictPd);
    blk.add_term(0, 0, None, s, None);
    blk.add_term(1, 0, Some(-DMatrix::identity(nu, nu)), l, None);
    blk.add_term(1, 0, Some(neg(&cl.c)), s, None);
    blk.add_term(1, 1, Some(scaled_identity(nu, 2.0)), u, None);
    blk.add_term(2, 0, Some(neg(&(&th * &cl.c))), s, None);
    blk.add_term(2, 2, Some(scaled_identity(nu, 2.0)), r, None);
    blk.add_term(3, 0, Some(cl.a.clone()), s, None);
    blk.add_term(3, 1, Some(cl.b.clone()), u, None);
    blk.add_term(3, 2, Some(cl.b.clone()), r, None);
    blk.add_term(3, 3, None, s, None);
    blk
}

fn aux_row_block(n: usize, nu: usize, i: usize, s: crate::sdp::VarId, l: crate::sdp::VarId) -> LmiBlock {
    let mut row = LmiBlock::new(&format!("aux-row-{i}"), &[n, 1], BlockSense::Psd);
    row.add_term(0, 0, None, s, None);
    let mut sel = DMatrix::zeros(1, nu);
    sel[(0, i)] = 1.0;
    row.add_term(1, 0, Some(sel), l, None);
    row.add_const(1, 1, &DMatrix::from_element(1, 1, 1.0));
    row
}

fn gamma_block(n: usize, s: crate::sdp::VarId, gamma: crate::sdp::VarId) -> LmiBlock {
    let mut blk = LmiBlock::new("size", &[n], BlockSense::Psd);
    blk.add_term(0, 0, None, s, None);
    blk.add_scalar_term(0, 0, gamma, -DMatrix::identity(n, n));
    blk
}

/// Saturates the reported basin measure: loops whose certified region is
/// unbounded would otherwise push S to the solver box, where absolute
/// residual tolerances become meaningless.
fn gamma_cap_row(p: &mut SdpProblem, gamma: crate::sdp::VarId) {
    p.add_linear_row(LinearRow {
        name: "gamma-cap".into(),
        constant: CERT_SCALE_CAP,
        coeffs: vec![(gamma, 0, 0, -1.0)],
        strict: false,
    });
}

/// Regional stability via the auxiliary function ψ, maximizing the size
/// measure of E(S). `theta` holds the per-channel sector slopes of ψ.
pub fn analyze_regional_aux(
    cl: &ClosedLoop,
    theta: &[f64],
    f_lmi: FLmi,
) -> Result<StabilityCertificate, AnalysisError> {
    require_lambda_min(f_lmi)?;
    if theta.len() != cl.nu() || theta.iter().any(|t| !(0.0..1.0).contains(t)) {
        return Err(AnalysisError::NumericalFailure(
            "theta must hold one slope in [0,1) per channel".into(),
        ));
    }
    let (rho_ok, rho) = is_schur(&cl.a)?;
    if !rho_ok {
        return Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::RegionalAuxNeedsSchur { rho },
        });
    }
    let (n, nu) = (cl.n(), cl.nu());
    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let r = p.add_diagonal("R", nu);
    let l = p.add_rectangular("L", nu, n);
    let gamma = p.add_scalar("gamma");
    p.add_block(aux_main_block(cl, theta, s, u, r, l))?;
    for i in 0..nu {
        p.add_block(aux_row_block(n, nu, i, s, l))?;
    }
    p.add_block(gamma_block(n, s, gamma))?;
    gamma_cap_row(&mut p, gamma);
    let mut obj = p.new_objective();
    obj.c[p.entry_index(gamma, 0, 0)] = 1.0;
    let res = solve_max_linear_with(&p, &obj, &default_solve_options())?;
    status_gate(&res, "aux-function certificate")?;
    let cert = StabilityCertificate {
        method: Method::RegionalAux,
        s: res.var(s).clone(),
        u: res.var(u).diagonal(),
        r: Some(res.var(r).diagonal()),
        l: Some(res.var(l).clone()),
        h_mat: None,
        theta: Some(theta.to_vec()),
        ybar: None,
        gamma: Some(res.objective),
        residuals: Vec::new(),
    };
    Ok(finalize_certificate(cert, cl))
}

#[derive(Debug, Clone)]
pub struct MinHResult {
    /// h̄ = λ_max(H_u U⁻¹) at the program optimum.
    pub h_bar: f64,
    pub gamma_u: f64,
    pub s: DMatrix<f64>,
    pub u: DVector<f64>,
    pub h_u: DVector<f64>,
}

/// Minimum-h program: min γ_u over the narrowing feasibility block with
/// H_u = HU, U ⪰ I, H_u ⪯ γ_u I. Feasible iff A is Schur; h̄ bounds the
/// smallest admissible uniform narrowing level from above.
pub fn min_h_feasible(cl: &ClosedLoop) -> Result<MinHResult, AnalysisError> {
    let (rho_ok, rho) = is_schur(&cl.a)?;
    if !rho_ok {
        return Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::NarrowNeedsSchur { rho },
        });
    }
    let (n, nu) = (cl.n(), cl.nu());
    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let hu = p.add_diagonal("Hu", nu);
    let gamma_u = p.add_scalar("gamma_u");
    let mut blk = LmiBlock::new("minh-main", &[n, nu, n], BlockSense::StrictPd);
    blk.add_term(0, 0, None, s, None);
    blk.add_term(1, 0, Some(neg(&cl.c)), s, None);
    blk.add_term(1, 1, Some(scaled_identity(nu, 2.0)), hu, None);
    blk.add_term(1, 1, Some(scaled_identity(nu, 2.0)), u, None);
    blk.add_term(2, 0, Some(cl.a.clone()), s, None);
    blk.add_term(2, 1, Some(cl.b.clone()), u, None);
    blk.add_term(2, 2, None, s, None);
    p.add_block(blk)?;
    for i in 0..nu {
        p.add_linear_row(LinearRow {
            name: format!("u{i}_ge_1"),
            constant: -1.0,
            coeffs: vec![(u, i, i, 1.0)],
            strict: false,
        });
        p.add_linear_row(LinearRow {
            name: format!("hu{i}_nonneg"),
            constant: 0.0,
            coeffs: vec![(hu, i, i, 1.0)],
            strict: false,
        });
        p.add_linear_row(LinearRow {
            name: format!("hu{i}_le_gamma"),
            constant: 0.0,
            coeffs: vec![(gamma_u, 0, 0, 1.0), (hu, i, i, -1.0)],
            strict: false,
        });
    }
    let mut obj = p.new_objective();
    obj.c[p.entry_index(gamma_u, 0, 0)] = 1.0;
    let res = solve_min_linear_with(&p, &obj, &default_solve_options())?;
    status_gate(&res, "minimum-h program")?;
    let u_d = res.var(u).diagonal();
    let hu_d = res.var(hu).diagonal();
    let h_bar = (0..nu)
        .map(|i| hu_d[i] / u_d[i])
        .fold(0.0_f64, f64::max)
        .max(0.0);
    Ok(MinHResult {
        h_bar,
        gamma_u: res.objective,
        s: res.var(s).clone(),
        u: u_d,
        h_u: hu_d,
    })
}

/// Sector-narrowing main block shared with synthesis: the (1,1) cell is
/// 2(H+I)U for a constant diagonal H.
fn narrow_main_block(
    cl: &ClosedLoop,
    h: &[f64],
    s: crate::sdp::VarId,
    u: crate::sdp::VarId,
) -> LmiBlock {
    let (n, nu) = (cl.n(), cl.nu());
    let mut hp1 = DMatrix::zeros(nu, nu);
    for i in 0..nu {
        hp1[(i, i)] = 2.0 * (h[i] + 1.0);
    }
    let mut blk = LmiBlock::new("narrow-main", &[n, nu, n], BlockSense::StrictPd);
    blk.add_term(0, 0, None, s, None);
    blk.add_term(1, 0, Some(neg(&cl.c)), s, None);
    blk.add_term(1, 1, Some(hp1), u, None);
    blk.add_term(2, 0, Some(cl.a.clone()), s, None);
    blk.add_term(2, 1, Some(cl.b.clone()), u, None);
    blk.add_term(2, 2, None, s, None);
    blk
}

/// Regional stability via sector narrowing at a fixed diagonal H with
/// validity radii ȳᵢ(hᵢ), maximizing the size measure. Row conditions with
/// a sentinel (effectively infinite) ȳ are vacuous and dropped.
pub fn analyze_regional_narrow(
    cl: &ClosedLoop,
    h: &[f64],
    ybar: &[f64],
    f_lmi: FLmi,
) -> Result<StabilityCertificate, AnalysisError> {
    require_lambda_min(f_lmi)?;
    let (n, nu) = (cl.n(), cl.nu());
    if h.len() != nu || ybar.len() != nu || h.iter().any(|v| *v <= 0.0) || ybar.iter().any(|v| *v <= 0.0)
    {
        return Err(AnalysisError::NumericalFailure(
            "h and ybar must hold one positive value per channel".into(),
        ));
    }
    let (rho_ok, rho) = is_schur(&cl.a)?;
    if !rho_ok {
        return Err(AnalysisError::Infeasible {
            diagnosis: Diagnosis::NarrowNeedsSchur { rho },
        });
    }
    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let gamma = p.add_scalar("gamma");
    p.add_block(narrow_main_block(cl, h, s, u))?;
    for i in 0..nu {
        if ybar[i] >= 0.5 * YBAR_INFINITE {
            continue;
        }
        let mut row = LmiBlock::new(&format!("narrow-row-{i}"), &[n, 1], BlockSense::Psd);
        row.add_term(0, 0, None, s, None);
        let mut ci = DMatrix::zeros(1, n);
        ci.copy_from(&cl.c.row(i));
        row.add_term(1, 0, Some(ci), s, None);
        row.add_const(1, 1, &DMatrix::from_element(1, 1, ybar[i] * ybar[i]));
        p.add_block(row)?;
    }
    p.add_block(gamma_block(n, s, gamma))?;
    gamma_cap_row(&mut p, gamma);
    let mut obj = p.new_objective();
    obj.c[p.entry_index(gamma, 0, 0)] = 1.0;
    let res = solve_max_linear_with(&p, &obj, &default_solve_options())?;
    status_gate(&res, "sector-narrowing certificate")?;
    let cert = StabilityCertificate {
        method: Method::RegionalNarrow,
        s: res.var(s).clone(),
        u: res.var(u).diagonal(),
        r: None,
        l: None,
        h_mat: Some(DVector::from_row_slice(h)),
        theta: None,
        ybar: Some(ybar.to_vec()),
        gamma: Some(res.objective),
        residuals: Vec::new(),
    };
    Ok(finalize_certificate(cert, cl))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub i: usize,
    pub h: f64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Algorithm1Output {
    pub best: StabilityCertificate,
    pub best_index: usize,
    pub h_bar: f64,
    pub sweep: Vec<SweepRow>,
}

/// Default step for the H sweep.
pub fn default_delta_h(h_bar: f64) -> f64 {
    (0.1_f64).max(0.1 * h_bar)
}

/// Basin maximization over the narrowing level: solve the minimum-h
/// program for h̄, then sweep H = (h̄ + iΔh)I, recomputing ȳ each time and
/// keeping the best certificate (ties resolve to the smallest i).
pub fn algorithm1(
    cl: &ClosedLoop,
    delta_h: f64,
    i_max: usize,
    f_lmi: FLmi,
) -> Result<Algorithm1Output, AnalysisError> {
    require_lambda_min(f_lmi)?;
    if delta_h <= 0.0 {
        return Err(AnalysisError::NumericalFailure("delta_h must be > 0".into()));
    }
    let minh = min_h_feasible(cl)?;
    // Stay strictly above the threshold: the program at exactly h̄ sits on
    // the feasibility boundary.
    let h0 = minh.h_bar.max(1e-9) * (1.0 + 1e-6);
    let nu = cl.nu();
    let results: Vec<(usize, f64, Result<StabilityCertificate, AnalysisError>)> = (0..=i_max)
        .into_par_iter()
        .map(|i| {
            let h = h0 + delta_h * i as f64;
            let cert = compute_ybar(&cl.kind, h, 1e-9)
                .map_err(AnalysisError::from)
                .and_then(|yb| analyze_regional_narrow(cl, &vec![h; nu], &vec![yb; nu], f_lmi));
            (i, h, cert)
        })
        .collect();

    let mut sweep = Vec::with_capacity(i_max + 1);
    let mut best: Option<(usize, StabilityCertificate)> = None;
    let mut first_err = None;
    for (i, h, outcome) in results {
        match outcome {
            Ok(cert) => {
                let g = cert.gamma.unwrap_or(f64::NEG_INFINITY);
                sweep.push(SweepRow {
                    i,
                    h,
                    gamma: Some(g),
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => g > b.gamma.unwrap_or(f64::NEG_INFINITY) + 1e-12,
                };
                if better {
                    best = Some((i, cert));
                }
            }
            Err(e) => {
                sweep.push(SweepRow { i, h, gamma: None });
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some((best_index, cert)) => Ok(Algorithm1Output {
            best: cert,
            best_index,
            h_bar: minh.h_bar,
            sweep,
        }),
        None => Err(first_err.unwrap_or(AnalysisError::Infeasible {
            diagnosis: Diagnosis::Solver,
        })),
    }
}

// ---------------------------------------------------------------------------
// Certificate validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Worst eigenvalue of each defining LMI re-assembled at the
    /// certificate values (direct dense evaluation, no solver involved).
    pub lmi_residuals: Vec<(String, f64)>,
    /// Row condition slack per channel: 1 − HᵢSHᵢᵀ (aux) or
    /// ȳᵢ² − CᵢSCᵢᵀ (narrow); nonnegative when satisfied.
    pub row_margins: Vec<f64>,
    pub invariance: InvarianceReport,
    pub passed: bool,
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    let n = sym.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    sym.symmetric_eigenvalues().min()
}

/// Direct dense re-assembly of the certificate's defining inequalities.
fn certificate_lmis(cert: &StabilityCertificate, cl: &ClosedLoop) -> Vec<(String, DMatrix<f64>)> {
    let (n, nu) = (cl.n(), cl.nu());
    let s = &cert.s;
    let u = DMatrix::from_diagonal(&cert.u);
    let mut out = Vec::new();
    match cert.method {
        Method::Global => {
            let mut m = DMatrix::zeros(n + nu + n, n + nu + n);
            let cs = &cl.c * s;
            let as_ = &cl.a * s;
            let bu = &cl.b * &u;
            m.view_mut((0, 0), (n, n)).copy_from(s);
            m.view_mut((n, 0), (nu, n)).copy_from(&(-&cs));
            m.view_mut((0, n), (n, nu)).copy_from(&(-cs.transpose()));
            m.view_mut((n, n), (nu, nu)).copy_from(&(2.0 * &u));
            m.view_mut((n + nu, 0), (n, n)).copy_from(&as_);
            m.view_mut((0, n + nu), (n, n)).copy_from(&as_.transpose());
            m.view_mut((n + nu, n), (n, nu)).copy_from(&bu);
            m.view_mut((n, n + nu), (nu, n)).copy_from(&bu.transpose());
            m.view_mut((n + nu, n + nu), (n, n)).copy_from(s);
            out.push(("global".into(), m));
        }
        Method::RegionalAux => {
            let l = cert.l.as_ref().expect("aux certificate carries L");
            let r = DMatrix::from_diagonal(cert.r.as_ref().expect("aux certificate carries R"));
            let th = diag_from(cert.theta.as_ref().expect("aux certificate carries theta"));
            let dim = n + 2 * nu + n;
            let mut m = DMatrix::zeros(dim, dim);
            let cs = &cl.c * s;
            let block10 = -(l + &cs);
            let block20 = -(&th * &cs);
            let as_ = &cl.a * s;
            let bu = &cl.b * &u;
            let br = &cl.b * &r;
            m.view_mut((0, 0), (n, n)).copy_from(s);
            m.view_mut((n, 0), (nu, n)).copy_from(&block10);
            m.view_mut((0, n), (n, nu)).copy_from(&block10.transpose());
            m.view_mut((n, n), (nu, nu)).copy_from(&(2.0 * &u));
            m.view_mut((n + nu, 0), (nu, n)).copy_from(&block20);
            m.view_mut((0, n + nu), (n, nu)).copy_from(&block20.transpose());
            m.view_mut((n + nu, n + nu), (nu, nu)).copy_from(&(2.0 * &r));
            let r3 = n + 2 * nu;
            m.view_mut((r3, 0), (n, n)).copy_from(&as_);
            m.view_mut((0, r3), (n, n)).copy_from(&as_.transpose());
            m.view_mut((r3, n), (n, nu)).copy_from(&bu);
            m.view_mut((n, r3), (nu, n)).copy_from(&bu.transpose());
            m.view_mut((r3, n + nu), (n, nu)).copy_from(&br);
            m.view_mut((n + nu, r3), (nu, n)).copy_from(&br.transpose());
            m.view_mut((r3, r3), (n, n)).copy_from(s);
            out.push(("aux-main".into(), m));
            for i in 0..nu {
                let mut row = DMatrix::zeros(n + 1, n + 1);
                row.view_mut((0, 0), (n, n)).copy_from(s);
                for j in 0..n {
                    row[(n, j)] = l[(i, j)];
                    row[(j, n)] = l[(i, j)];
                }
                row[(n, n)] = 1.0;
                out.push((format!("aux-row-{i}"), row));
            }
        }
        Method::RegionalNarrow => {
            let h = cert.h_mat.as_ref().expect("narrow certificate carries H");
            let ybar = cert.ybar.as_ref().expect("narrow certificate carries ybar");
            let mut m = DMatrix::zeros(n + nu + n, n + nu + n);
            let cs = &cl.c * s;
            let as_ = &cl.a * s;
            let bu = &cl.b * &u;
            m.view_mut((0, 0), (n, n)).copy_from(s);
            m.view_mut((n, 0), (nu, n)).copy_from(&(-&cs));
            m.view_mut((0, n), (n, nu)).copy_from(&(-cs.transpose()));
            for i in 0..nu {
                m[(n + i, n + i)] = 2.0 * (h[i] + 1.0) * u[(i, i)];
            }
            m.view_mut((n + nu, 0), (n, n)).copy_from(&as_);
            m.view_mut((0, n + nu), (n, n)).copy_from(&as_.transpose());
            m.view_mut((n + nu, n), (n, nu)).copy_from(&bu);
            m.view_mut((n, n + nu), (nu, n)).copy_from(&bu.transpose());
            m.view_mut((n + nu, n + nu), (n, n)).copy_from(s);
            out.push(("narrow-main".into(), m));
            for i in 0..nu {
                if ybar[i] >= 0.5 * YBAR_INFINITE {
                    continue;
                }
                let mut row = DMatrix::zeros(n + 1, n + 1);
                row.view_mut((0, 0), (n, n)).copy_from(s);
                let ci_s = cl.c.row(i) * s;
                for j in 0..n {
                    row[(n, j)] = ci_s[(0, j)];
                    row[(j, n)] = ci_s[(0, j)];
                }
                row[(n, n)] = ybar[i] * ybar[i];
                out.push((format!("narrow-row-{i}"), row));
            }
        }
    }
    out
}

/// Row-condition slacks: nonnegative iff the containment conditions hold.
pub fn row_margins(cert: &StabilityCertificate, cl: &ClosedLoop) -> Vec<f64> {
    let nu = cl.nu();
    let s = &cert.s;
    match cert.method {
        Method::Global => Vec::new(),
        Method::RegionalAux => {
            let l = cert.l.as_ref().expect("aux certificate carries L");
            // H = L S⁻¹, check Hᵢ S Hᵢᵀ ≤ 1, i.e. Lᵢ S⁻¹ Lᵢᵀ ≤ 1.
            let sinv = s
                .clone()
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::identity(s.nrows(), s.nrows()) * f64::INFINITY);
            (0..nu)
                .map(|i| {
                    let li = l.row(i);
                    1.0 - (li * &sinv * li.transpose())[(0, 0)]
                })
                .collect()
        }
        Method::RegionalNarrow => {
            let ybar = cert.ybar.as_ref().expect("narrow certificate carries ybar");
            (0..nu)
                .map(|i| {
                    if ybar[i] >= 0.5 * YBAR_INFINITE {
                        return f64::INFINITY;
                    }
                    let ci = cl.c.row(i);
                    ybar[i] * ybar[i] - (ci * s * ci.transpose())[(0, 0)]
                })
                .collect()
        }
    }
}

pub const VALIDATION_SEED: u64 = 0xC0FFEE;

/// Largest S magnitude kept as-is; bigger certificates are scaled down.
/// The certificate programs are homogeneous in their decision variables
/// (the unit and ȳ² corners only relax under downscaling), so a scaled
/// certificate stays valid while its entries return to a range where the
/// absolute residual tolerances are meaningful. Scaling triggers when the
/// basin measure is unbounded and the solver parked S at its box bound.
pub(crate) const CERT_SCALE_CAP: f64 = 1e4;

/// Scale cap, exposed for the synthesis module.
pub const CERT_SCALE_CAP_PUB: f64 = CERT_SCALE_CAP;

/// [`finalize_certificate`] for use by the synthesis module.
pub fn finalize_certificate_pub(cert: StabilityCertificate, cl: &ClosedLoop) -> StabilityCertificate {
    finalize_certificate(cert, cl)
}

/// Downscales an oversized certificate and refreshes its residual summary
/// by direct assembly.
pub(crate) fn finalize_certificate(mut cert: StabilityCertificate, cl: &ClosedLoop) -> StabilityCertificate {
    let amax = cert.s.amax();
    if amax > CERT_SCALE_CAP {
        let mu = CERT_SCALE_CAP / amax;
        cert.s *= mu;
        cert.u *= mu;
        if let Some(r) = cert.r.as_mut() {
            *r *= mu;
        }
        if let Some(l) = cert.l.as_mut() {
            *l *= mu;
        }
        if let Some(g) = cert.gamma.as_mut() {
            *g *= mu;
        }
    }
    cert.residuals = certificate_lmis(&cert, cl)
        .iter()
        .map(|(name, m)| (name.clone(), min_eig(m)))
        .collect();
    cert
}

/// Re-checks a certificate: (a) LMI residuals by direct assembly, (b) the
/// row containment conditions, (c) Lyapunov decrease and (d) one-step
/// invariance on sampled points of E(S).
pub fn validate_certificate(
    cert: &StabilityCertificate,
    cl: &ClosedLoop,
    n_samples: usize,
) -> Result<ValidationReport, AnalysisError> {
    if cert.s.nrows() != cl.n() {
        return Err(AnalysisError::NumericalFailure(
            "certificate dimension differs from the loop".into(),
        ));
    }
    let lmis = certificate_lmis(cert, cl);
    let lmi_residuals: Vec<(String, f64)> = lmis
        .iter()
        .map(|(name, m)| (name.clone(), min_eig(m)))
        .collect();
    let rows = row_margins(cert, cl);
    let invariance = monte_carlo_invariance(&cert.s, cl, n_samples, 1, VALIDATION_SEED)?;
    let lmi_ok = lmi_residuals
        .iter()
        .all(|(_, v)| *v >= -crate::sdp::RESIDUAL_TOL);
    let rows_ok = rows.iter().all(|v| *v >= -crate::sdp::RESIDUAL_TOL);
    let passed = lmi_ok && rows_ok && invariance.clean();
    Ok(ValidationReport {
        lmi_residuals,
        row_margins: rows,
        invariance,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    method: String,
    n: usize,
    nu: usize,
    s: Vec<Vec<f64>>,
    u: Vec<f64>,
    r: Option<Vec<f64>>,
    l: Option<Vec<Vec<f64>>>,
    h: Option<Vec<f64>>,
    theta: Option<Vec<f64>>,
    ybar: Option<Vec<f64>>,
    gamma: Option<f64>,
    residuals: Vec<(String, f64)>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn certificate_to_json(cert: &StabilityCertificate) -> String {
    let file = CertificateFile {
        method: cert.method.to_string(),
        n: cert.s.nrows(),
        nu: cert.u.len(),
        s: matrix_rows(&cert.s),
        u: cert.u.iter().cloned().collect(),
        r: cert.r.as_ref().map(|v| v.iter().cloned().collect()),
        l: cert.l.as_ref().map(matrix_rows),
        h: cert.h_mat.as_ref().map(|v| v.iter().cloned().collect()),
        theta: cert.theta.clone(),
        ybar: cert.ybar.clone(),
        gamma: cert.gamma,
        residuals: cert.residuals.clone(),
    };
    serde_json::to_string_pretty(&file).expect("certificate serialization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_closed_loop, RnnModel};
    use crate::sigmoid::{compute_theta, SigmoidKind};

    fn scalar_loop(kind: SigmoidKind) -> ClosedLoop {
        build_closed_loop(&RnnModel::scalar_demo(kind), &DMatrix::zeros(1, 1)).unwrap()
    }

    #[test]
    fn global_scalar_loop_feasible() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let cert = check_global(&cl).unwrap();
        assert_eq!(cert.method, Method::Global);
        // Brute-force cross-check: grid over (S, U) in the unit box must
        // contain a PD point of the 3x3 program matrix.
        let mut found = false;
        'outer: for si in 1..40 {
            for ui in 1..40 {
                let (s, u) = (si as f64 / 40.0, ui as f64 / 40.0);
                let m = DMatrix::from_row_slice(
                    3,
                    3,
                    &[
                        s,
                        -s,
                        0.5 * s,
                        -s,
                        2.0 * u,
                        -0.5 * u,
                        0.5 * s,
                        -0.5 * u,
                        s,
                    ],
                );
                if min_eig(&m) > 1e-9 {
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found, "grid oracle contradicts the solver");
    }

    #[test]
    fn global_b_zero_reduces_to_lyapunov() {
        let cl = ClosedLoop::from_matrices(
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            SigmoidKind::Tanh,
        )
        .unwrap();
        assert!(check_global(&cl).is_ok());
    }

    #[test]
    fn aux_scalar_loop_with_saturation_theta_zero() {
        let cl = scalar_loop(SigmoidKind::Saturation);
        let cert = analyze_regional_aux(&cl, &[0.0], FLmi::LambdaMin).unwrap();
        assert!(cert.gamma.unwrap() > 0.0);
        let rep = validate_certificate(&cert, &cl, 2000).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn aux_scalar_loop_tanh() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let theta = compute_theta(&SigmoidKind::Tanh, 1e-6).unwrap();
        let cert = analyze_regional_aux(&cl, &[theta], FLmi::LambdaMin).unwrap();
        let gamma = cert.gamma.unwrap();
        assert!(gamma > 0.0);
        // gamma reported equals lambda_min(S) at the LambdaMin objective.
        let lam = cert.s.clone().symmetric_eigenvalues().min();
        assert!(
            (gamma - lam).abs() <= 1e-5 * (1.0 + lam.abs()),
            "gamma {gamma} vs lambda_min {lam}"
        );
        let rep = validate_certificate(&cert, &cl, 2000).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn aux_rejects_non_schur_a() {
        let cl = ClosedLoop::from_matrices(
            DMatrix::from_element(1, 1, 1.01),
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::from_element(1, 1, 1.0),
            SigmoidKind::Tanh,
        )
        .unwrap();
        match analyze_regional_aux(&cl, &[0.2], FLmi::LambdaMin) {
            Err(AnalysisError::Infeasible {
                diagnosis: Diagnosis::RegionalAuxNeedsSchur { rho },
            }) => assert!(rho > 1.0),
            other => panic!("expected Lemma-style diagnosis, got {other:?}"),
        }
    }

    #[test]
    fn logdet_rejected_by_reference_backend() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        assert!(matches!(
            analyze_regional_aux(&cl, &[0.2], FLmi::LogDet),
            Err(AnalysisError::Unsupported(_))
        ));
    }

    #[test]
    fn minh_scalar_loop_matches_grid_oracle() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let res = min_h_feasible(&cl).unwrap();
        // Oracle: with u = 1 fixed (scaling), grid (s, hu) for the smallest
        // feasible hu; the LMI is checked by direct eigenvalue computation.
        let feasible = |s: f64, hu: f64| {
            let m = DMatrix::from_row_slice(
                3,
                3,
                &[
                    s,
                    -s,
                    0.5 * s,
                    -s,
                    2.0 * (hu + 1.0),
                    -0.5,
                    0.5 * s,
                    -0.5,
                    s,
                ],
            );
            min_eig(&m) > 0.0
        };
        let mut best = f64::INFINITY;
        for hi in 0..4000 {
            let hu = hi as f64 * 1e-3;
            for si in 1..=400 {
                let s = si as f64 * 2.5e-2;
                if feasible(s, hu) {
                    best = hu;
                    break;
                }
            }
            if best.is_finite() {
                break;
            }
        }
        assert!(
            (res.h_bar - best).abs() <= 0.05 * best.max(res.h_bar) + 2e-3,
            "h_bar {} vs grid {}",
            res.h_bar,
            best
        );
    }

    #[test]
    fn minh_vanishes_without_nonlinearity() {
        let cl = ClosedLoop::from_matrices(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            SigmoidKind::Tanh,
        )
        .unwrap();
        let res = min_h_feasible(&cl).unwrap();
        assert!(res.h_bar < 1e-4, "h_bar = {}", res.h_bar);
    }

    #[test]
    fn minh_nonincreasing_in_stability_margin() {
        let mut prev = f64::INFINITY;
        for a in [0.95, 0.7, 0.5, 0.3] {
            let cl = ClosedLoop::from_matrices(
                DMatrix::from_element(1, 1, a),
                DMatrix::from_element(1, 1, -0.5),
                DMatrix::from_element(1, 1, 1.0),
                SigmoidKind::Tanh,
            )
            .unwrap();
            let res = min_h_feasible(&cl).unwrap();
            assert!(
                res.h_bar <= prev + 1e-6,
                "h_bar should not grow as A stabilizes: {} after {}",
                res.h_bar,
                prev
            );
            prev = res.h_bar;
        }
    }

    #[test]
    fn narrow_scalar_loop_certificate_validates() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let h = 1.0;
        let yb = compute_ybar(&SigmoidKind::Tanh, h, 1e-9).unwrap();
        let cert = analyze_regional_narrow(&cl, &[h], &[yb], FLmi::LambdaMin).unwrap();
        assert!(cert.gamma.unwrap() > 0.0);
        let rep = validate_certificate(&cert, &cl, 2000).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn narrow_below_hbar_infeasible() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let minh = min_h_feasible(&cl).unwrap();
        let h = (minh.h_bar - 0.05).max(1e-4);
        if h < minh.h_bar {
            let yb = compute_ybar(&SigmoidKind::Tanh, h, 1e-9).unwrap();
            match analyze_regional_narrow(&cl, &[h], &[yb], FLmi::LambdaMin) {
                Err(AnalysisError::Infeasible { .. }) => {}
                other => panic!("expected infeasible below h_bar, got {other:?}"),
            }
        }
    }

    #[test]
    fn algorithm1_scalar_loop() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let out = algorithm1(&cl, 0.1, 20, FLmi::LambdaMin).unwrap();
        assert_eq!(out.sweep.len(), 21);
        let g0 = out.sweep[0].gamma.unwrap();
        let gbest = out.best.gamma.unwrap();
        assert!(gbest >= g0 - 1e-9, "best {gbest} < first {g0}");
        // Argmax with smallest-index tie break.
        for row in &out.sweep {
            if let Some(g) = row.gamma {
                assert!(gbest >= g - 1e-9);
                if row.i < out.best_index {
                    assert!(g < gbest - 1e-12, "earlier equal gamma should win the tie");
                }
            }
        }
        let rep = validate_certificate(&out.best, &cl, 2000).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn algorithm1_imax_zero_single_shot() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let out = algorithm1(&cl, 0.1, 0, FLmi::LambdaMin).unwrap();
        assert_eq!(out.sweep.len(), 1);
        assert_eq!(out.best_index, 0);
    }

    #[test]
    fn corrupted_certificate_fails_validation() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let theta = compute_theta(&SigmoidKind::Tanh, 1e-6).unwrap();
        let mut cert = analyze_regional_aux(&cl, &[theta], FLmi::LambdaMin).unwrap();
        cert.s *= 4.0;
        let rep = validate_certificate(&cert, &cl, 2000).unwrap();
        assert!(!rep.passed, "scaled certificate must fail: {rep:?}");
    }

    #[test]
    fn certificate_scaling_transport() {
        // E(S) membership is invariant under x -> Tx with S -> T S Tᵀ for
        // diagonal T.
        let cl = scalar_loop(SigmoidKind::Tanh);
        let theta = compute_theta(&SigmoidKind::Tanh, 1e-6).unwrap();
        let cert = analyze_regional_aux(&cl, &[theta], FLmi::LambdaMin).unwrap();
        let e = cert.ellipsoid().unwrap();
        let t = 2.5_f64;
        let s_t = &cert.s * t * t;
        let e_t = Ellipsoid::new(s_t).unwrap();
        for k in 0..50 {
            let x = DVector::from_element(1, -1.0 + k as f64 * 0.04);
            assert_eq!(e.contains(&x), e_t.contains(&(&x * t)));
        }
    }

    #[test]
    fn ellipsoid_boundary_consistency() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 1.2]);
        let e = Ellipsoid::new(s.clone()).unwrap();
        let sqrt_s = crate::verify::sym_sqrt(&s).unwrap();
        for k in 0..64 {
            let ang = k as f64 * std::f64::consts::TAU / 64.0;
            let unit = DVector::from_row_slice(&[ang.cos(), ang.sin()]);
            let x = &sqrt_s * unit;
            assert!((e.level(&x) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn certificate_json_contains_fields() {
        let cl = scalar_loop(SigmoidKind::Tanh);
        let cert = check_global(&cl).unwrap();
        let json = certificate_to_json(&cert);
        assert!(json.contains("\"method\": \"global\""));
        assert!(json.contains("\"s\""));
    }
}
