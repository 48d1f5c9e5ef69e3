//! H₂ state-feedback synthesis combined with the regional stability
//! certificates.
//!
//! The linearized loop x⁺ = (F + GK)x + d with performance output
//! z = (Q̃ + R̃K)x admits an H₂ bound √δ through the quasi-convex program
//!
//! ```text
//! min δ  s.t.  [S, SFᵀ+JᵀGᵀ, SQ̃ᵀ+JᵀR̃ᵀ; ·, S, 0; ·, 0, ηI] ≻ 0
//!              [Γ, ηI; ηI, S] ⪰ 0,   trace(Γ) < η·δ,   K = JS⁻¹
//! ```
//!
//! δ multiplies η, so the program is solved by outer bisection on δ; at a
//! fixed δ it is an LMI. Joint design couples these blocks with the
//! regional stability inequalities (sharing S and J), either at a fixed
//! H₂ budget δ̄ (maximizing the basin measure γ) or by sweeping δ to
//! minimize wδ − γ. A synthesis result always carries a validated
//! stability certificate for the loop closed with the returned gain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{
    algorithm1, analyze_regional_aux, check_global, default_delta_h, AnalysisError, Diagnosis,
    FLmi, Method, StabilityCertificate,
};
use crate::model::{build_closed_loop, design_matrices, is_schur, DesignMatrices, ModelError, RnnModel};
use crate::sdp::{
    solve_gevp_bisection, solve_max_linear_with, BlockSense, GevpOptions, LinearRow, LmiBlock,
    Objective, SdpError, SdpProblem, SolveOptions, SolveStatus, VarId,
};
use crate::sigmoid::{compute_ybar, SigmoidError, YBAR_INFINITE};
use crate::verify::{h2_norm_oracle, VerifyError};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no feasible H2 level found below the doubling cap (pair likely not stabilizable)")]
    NoFeasibleUpperBound,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sigmoid(#[from] SigmoidError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Performance output weights z = Q̃x + R̃u.
#[derive(Debug, Clone)]
pub struct H2Weights {
    pub q_tilde: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
}

impl H2Weights {
    pub fn new(q_tilde: DMatrix<f64>, r_tilde: DMatrix<f64>) -> Result<Self, SynthesisError> {
        if q_tilde.nrows() != r_tilde.nrows() {
            return Err(SynthesisError::NumericalFailure(
                "Q and R weights must have the same number of output rows".into(),
            ));
        }
        Ok(H2Weights { q_tilde, r_tilde })
    }

    /// True when the performance output is identically zero.
    pub fn is_degenerate(&self) -> bool {
        self.q_tilde.amax() == 0.0 && self.r_tilde.amax() == 0.0
    }
}

/// Benchmark weights: z = [√q̃_y·y_s; √q̃_i·x_i; √r̃_u·u] for an
/// integrator-augmented ESN with readout row `wy`.
pub fn benchmark_weights(wy: &DMatrix<f64>, q_y: f64, q_i: f64, r_u: f64) -> H2Weights {
    let ns = wy.ncols();
    let n = ns + 1;
    let mut q = DMatrix::zeros(3, n);
    for j in 0..ns {
        q[(0, j)] = q_y.sqrt() * wy[(0, j)];
    }
    q[(1, ns)] = q_i.sqrt();
    let mut r = DMatrix::zeros(3, 1);
    r[(2, 0)] = r_u.sqrt();
    H2Weights {
        q_tilde: q,
        r_tilde: r,
    }
}

/// Default trade-off and weight values used by the benchmark pipeline.
pub const DEFAULT_QY: f64 = 0.1;
pub const DEFAULT_QI: f64 = 0.1;
pub const DEFAULT_RU: f64 = 0.05;
pub const DEFAULT_W: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthesisMode {
    /// Fix δ = δ̄ and maximize the basin measure γ.
    FixedDelta(f64),
    /// Minimize wδ − γ by an outer sweep on δ.
    Scalarized(f64),
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub k: DMatrix<f64>,
    /// H₂-norm-squared budget: √delta bounds the closed-loop H₂ norm.
    pub delta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub trace_gamma: f64,
    pub certificate: StabilityCertificate,
}

struct H2Vars {
    s: VarId,
    j: VarId,
    eta: VarId,
}

/// Adds the H₂ blocks (performance LMI, trace coupling at fixed δ) to a
/// problem that already declares S and J.
fn add_h2_blocks(
    p: &mut SdpProblem,
    dm: &DesignMatrices,
    w8: &H2Weights,
    vars: &H2Vars,
    delta: f64,
) -> Result<VarId, SdpError> {
    let n = dm.f.nrows();
    let pz = w8.q_tilde.nrows();
    let gamma_mat = p.add_symmetric("Gamma", n);
    let mut perf = LmiBlock::new("h2-perf", &[n, n, pz], BlockSense::StrictPd);
    perf.add_term(0, 0, None, vars.s, None);
    perf.add_term(1, 0, Some(dm.f.clone()), vars.s, None);
    perf.add_term(1, 0, Some(dm.g.clone()), vars.j, None);
    perf.add_term(1, 1, None, vars.s, None);
    perf.add_term(2, 0, Some(w8.q_tilde.clone()), vars.s, None);
    perf.add_term(2, 0, Some(w8.r_tilde.clone()), vars.j, None);
    perf.add_scalar_term(2, 2, vars.eta, DMatrix::identity(pz, pz));
    p.add_block(perf)?;
    let mut bound = LmiBlock::new("h2-bound", &[n, n], BlockSense::Psd);
    bound.add_term(0, 0, None, gamma_mat, None);
    bound.add_scalar_term(1, 0, vars.eta, DMatrix::identity(n, n));
    bound.add_term(1, 1, None, vars.s, None);
    p.add_block(bound)?;
    let mut coeffs = vec![(vars.eta, 0, 0, delta)];
    for i in 0..n {
        coeffs.push((gamma_mat, i, i, -1.0));
    }
    p.add_linear_row(LinearRow {
        name: "h2-trace".into(),
        constant: 0.0,
        coeffs,
        strict: true,
    });
    Ok(gamma_mat)
}

/// H₂-optimal state feedback for the linearization: bisection on δ over the
/// fixed-δ LMI. Returns (K, δ*) with √δ* bounding the closed-loop H₂ norm.
pub fn h2_gevp(
    dm: &DesignMatrices,
    w8: &H2Weights,
    tol: f64,
) -> Result<(DMatrix<f64>, f64), SynthesisError> {
    let n = dm.f.nrows();
    let m = dm.g.ncols();
    let family = |delta: f64| -> Result<SdpProblem, SdpError> {
        let mut p = SdpProblem::new();
        let s = p.add_symmetric("S", n);
        let j = p.add_rectangular("J", m, n);
        let eta = p.add_scalar("eta");
        add_h2_blocks(&mut p, dm, w8, &H2Vars { s, j, eta }, delta)?;
        Ok(p)
    };
    let opts = GevpOptions {
        tol,
        ..GevpOptions::default()
    };
    let (delta, res) = solve_gevp_bisection(family, &opts).map_err(|e| match e {
        SdpError::NoFeasibleUpperBound(_) => SynthesisError::NoFeasibleUpperBound,
        other => SynthesisError::Sdp(other),
    })?;
    let s = res.assignment[0].clone();
    let j = res.assignment[1].clone();
    let k = gain_from(&j, &s)?;
    Ok((k, delta))
}


/// Applies the homogeneous downscaling to an oversized synthesis result
/// (certificate, γ, η, trace Γ all scale together; K = JS⁻¹ is invariant)
/// and refreshes the certificate residual summary.
fn finalize_result(mut out: SynthesisResult, model: &RnnModel) -> Result<SynthesisResult, SynthesisError> {
    let amax = out.certificate.s.amax();
    if amax > crate::analysis::CERT_SCALE_CAP_PUB {
        let mu = crate::analysis::CERT_SCALE_CAP_PUB / amax;
        out.gamma *= mu;
        out.eta *= mu;
        out.trace_gamma *= mu;
    }
    let cl = build_closed_loop(model, &out.k)?;
    out.certificate = crate::analysis::finalize_certificate_pub(out.certificate, &cl);
    Ok(out)
}

fn gain_from(j: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthesisError> {
    let sinv = s
        .clone()
        .cholesky()
        .ok_or_else(|| SynthesisError::NumericalFailure("S is not positive definite".into()))?
        .inverse();
    Ok(j * sinv)
}

fn neg(m: &DMatrix<f64>) -> DMatrix<f64> {
    m * -1.0
}

fn scaled_identity(n: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * s
}

/// Joint aux-function design at a fixed δ̄: maximize γ subject to the
/// design form of the aux-function inequality, the row conditions, and the
/// H₂ blocks, all sharing (S, J).
fn synthesize_aux_fixed(
    model: &RnnModel,
    theta: &[f64],
    w8: &H2Weights,
    delta_bar: f64,
) -> Result<SynthesisResult, SynthesisError> {
    let dm = design_matrices(model);
    let (n, nu, m) = (model.n(), model.nu(), model.m());
    let b = neg(&model.bsigma);
    let th = DMatrix::from_diagonal(&DVector::from_row_slice(theta));

    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let r = p.add_diagonal("R", nu);
    let l = p.add_rectangular("L", nu, n);
    let j = p.add_rectangular("J", m, n);
    let eta = p.add_scalar("eta");
    let gamma = p.add_scalar("gamma");

    let mut main = LmiBlock::new("aux-design", &[n, nu, nu, n], BlockSense::StrictPd);
    main.add_term(0, 0, None, s, None);
    main.add_term(1, 0, Some(-DMatrix::identity(nu, nu)), l, None);
    main.add_term(1, 0, Some(neg(&model.c0)), s, None);
    main.add_term(1, 0, Some(neg(&model.du)), j, None);
    main.add_term(1, 1, Some(scaled_identity(nu, 2.0)), u, None);
    main.add_term(2, 0, Some(neg(&(&th * &model.c0))), s, None);
    main.add_term(2, 0, Some(neg(&(&th * &model.du))), j, None);
    main.add_term(2, 2, Some(scaled_identity(nu, 2.0)), r, None);
    main.add_term(3, 0, Some(dm.f.clone()), s, None);
    main.add_term(3, 0, Some(dm.g.clone()), j, None);
    main.add_term(3, 1, Some(b.clone()), u, None);
    main.add_term(3, 2, Some(b.clone()), r, None);
    main.add_term(3, 3, None, s, None);
    p.add_block(main)?;

    for i in 0..nu {
        let mut row = LmiBlock::new(&format!("aux-row-{i}"), &[n, 1], BlockSense::Psd);
        row.add_term(0, 0, None, s, None);
        let mut sel = DMatrix::zeros(1, nu);
        sel[(0, i)] = 1.0;
        row.add_term(1, 0, Some(sel), l, None);
        row.add_const(1, 1, &DMatrix::from_element(1, 1, 1.0));
        p.add_block(row)?;
    }

    let gamma_mat = add_h2_blocks(&mut p, &dm, w8, &H2Vars { s, j, eta }, delta_bar)?;

    let mut size = LmiBlock::new("size", &[n], BlockSense::Psd);
    size.add_term(0, 0, None, s, None);
    size.add_scalar_term(0, 0, gamma, -DMatrix::identity(n, n));
    p.add_block(size)?;
    p.add_linear_row(LinearRow {
        name: "gamma-cap".into(),
        constant: crate::analysis::CERT_SCALE_CAP_PUB,
        coeffs: vec![(gamma, 0, 0, -1.0)],
        strict: false,
    });

    let mut obj = p.new_objective();
    obj.c[p.entry_index(gamma, 0, 0)] = 1.0;
    let res = solve_max_linear_with(&p, &obj, &SolveOptions::default())?;
    match res.status {
        SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            return Err(SynthesisError::Infeasible(format!(
                "joint aux design infeasible at delta_bar = {delta_bar}"
            )))
        }
        SolveStatus::Marginal | SolveStatus::NumericalFailure => {
            return Err(SynthesisError::NumericalFailure(res.log.join("; ")))
        }
    }

    let s_val = res.var(s).clone();
    let k = gain_from(res.var(j), &s_val)?;
    let certificate = StabilityCertificate {
        method: Method::RegionalAux,
        s: s_val,
        u: res.var(u).diagonal(),
        r: Some(res.var(r).diagonal()),
        l: Some(res.var(l).clone()),
        h_mat: None,
        theta: Some(theta.to_vec()),
        ybar: None,
        gamma: Some(res.objective),
        residuals: res.block_residuals.clone(),
    };
    finalize_result(
        SynthesisResult {
            k,
            delta: delta_bar,
            gamma: res.objective,
            eta: res.var(eta)[(0, 0)],
            trace_gamma: res.var(gamma_mat).trace(),
            certificate,
        },
        model,
    )
}

/// Joint sector-narrowing design at fixed (δ̄, H): the narrowing blocks in
/// design form (Ω = C∘S + DᵤJ enters the row conditions) plus H₂.
fn synthesize_narrow_fixed(
    model: &RnnModel,
    w8: &H2Weights,
    delta_bar: f64,
    h: &[f64],
    ybar: &[f64],
) -> Result<SynthesisResult, SynthesisError> {
    let dm = design_matrices(model);
    let (n, nu, m) = (model.n(), model.nu(), model.m());
    let b = neg(&model.bsigma);

    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let j = p.add_rectangular("J", m, n);
    let eta = p.add_scalar("eta");
    let gamma = p.add_scalar("gamma");

    let mut hp1 = DMatrix::zeros(nu, nu);
    for i in 0..nu {
        hp1[(i, i)] = 2.0 * (h[i] + 1.0);
    }
    let mut main = LmiBlock::new("narrow-design", &[n, nu, n], BlockSense::StrictPd);
    main.add_term(0, 0, None, s, None);
    main.add_term(1, 0, Some(neg(&model.c0)), s, None);
    main.add_term(1, 0, Some(neg(&model.du)), j, None);
    main.add_term(1, 1, Some(hp1), u, None);
    main.add_term(2, 0, Some(dm.f.clone()), s, None);
    main.add_term(2, 0, Some(dm.g.clone()), j, None);
    main.add_term(2, 1, Some(b.clone()), u, None);
    main.add_term(2, 2, None, s, None);
    p.add_block(main)?;

    for i in 0..nu {
        if ybar[i] >= 0.5 * YBAR_INFINITE {
            continue;
        }
        let mut row = LmiBlock::new(&format!("narrow-row-{i}"), &[n, 1], BlockSense::Psd);
        row.add_term(0, 0, None, s, None);
        let mut c0i = DMatrix::zeros(1, n);
        c0i.copy_from(&model.c0.row(i));
        row.add_term(1, 0, Some(c0i), s, None);
        let mut dui = DMatrix::zeros(1, m);
        dui.copy_from(&model.du.row(i));
        row.add_term(1, 0, Some(dui), j, None);
        row.add_const(1, 1, &DMatrix::from_element(1, 1, ybar[i] * ybar[i]));
        p.add_block(row)?;
    }

    let gamma_mat = add_h2_blocks(&mut p, &dm, w8, &H2Vars { s, j, eta }, delta_bar)?;

    let mut size = LmiBlock::new("size", &[n], BlockSense::Psd);
    size.add_term(0, 0, None, s, None);
    size.add_scalar_term(0, 0, gamma, -DMatrix::identity(n, n));
    p.add_block(size)?;
    p.add_linear_row(LinearRow {
        name: "gamma-cap".into(),
        constant: crate::analysis::CERT_SCALE_CAP_PUB,
        coeffs: vec![(gamma, 0, 0, -1.0)],
        strict: false,
    });

    let mut obj = p.new_objective();
    obj.c[p.entry_index(gamma, 0, 0)] = 1.0;
    let res = solve_max_linear_with(&p, &obj, &SolveOptions::default())?;
    match res.status {
        SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            return Err(SynthesisError::Infeasible(format!(
                "joint narrowing design infeasible at delta_bar = {delta_bar}"
            )))
        }
        SolveStatus::Marginal | SolveStatus::NumericalFailure => {
            return Err(SynthesisError::NumericalFailure(res.log.join("; ")))
        }
    }

    let s_val = res.var(s).clone();
    let k = gain_from(res.var(j), &s_val)?;
    let certificate = StabilityCertificate {
        method: Method::RegionalNarrow,
        s: s_val,
        u: res.var(u).diagonal(),
        r: None,
        l: None,
        h_mat: Some(DVector::from_row_slice(h)),
        theta: None,
        ybar: Some(ybar.to_vec()),
        gamma: Some(res.objective),
        residuals: res.block_residuals.clone(),
    };
    finalize_result(
        SynthesisResult {
            k,
            delta: delta_bar,
            gamma: res.objective,
            eta: res.var(eta)[(0, 0)],
            trace_gamma: res.var(gamma_mat).trace(),
            certificate,
        },
        model,
    )
}

/// Design-side minimum-h program (the analysis program with CS → Ω and
/// AS → Λ): seeds the narrowing ladder when the gain is a free variable.
fn min_h_design(model: &RnnModel) -> Result<f64, SynthesisError> {
    let dm = design_matrices(model);
    let (n, nu, m) = (model.n(), model.nu(), model.m());
    let b = neg(&model.bsigma);
    let mut p = SdpProblem::new();
    let s = p.add_symmetric("S", n);
    let u = p.add_diagonal("U", nu);
    let hu = p.add_diagonal("Hu", nu);
    let j = p.add_rectangular("J", m, n);
    let gamma_u = p.add_scalar("gamma_u");
    let mut main = LmiBlock::new("minh-design", &[n, nu, n], BlockSense::StrictPd);
    main.add_term(0, 0, None, s, None);
    main.add_term(1, 0, Some(neg(&model.c0)), s, None);
    main.add_term(1, 0, Some(neg(&model.du)), j, None);
    main.add_term(1, 1, Some(scaled_identity(nu, 2.0)), hu, None);
    main.add_term(1, 1, Some(scaled_identity(nu, 2.0)), u, None);
    main.add_term(2, 0, Some(dm.f.clone()), s, None);
    main.add_term(2, 0, Some(dm.g.clone()), j, None);
    main.add_term(2, 1, Some(b), u, None);
    main.add_term(2, 2, None, s, None);
    p.add_block(main)?;
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
    let res = crate::sdp::solve_min_linear_with(&p, &obj, &SolveOptions::default())?;
    match res.status {
        SolveStatus::Feasible | SolveStatus::Marginal => {}
        SolveStatus::Infeasible => {
            return Err(SynthesisError::Infeasible(
                "design minimum-h program infeasible (pair not stabilizable)".into(),
            ))
        }
        SolveStatus::NumericalFailure => {
            return Err(SynthesisError::NumericalFailure(res.log.join("; ")))
        }
    }
    let u_d = res.var(u).diagonal();
    let hu_d = res.var(hu).diagonal();
    Ok((0..nu)
        .map(|i| hu_d[i] / u_d[i])
        .fold(0.0_f64, f64::max)
        .max(0.0))
}

/// Outer δ sweep for the scalarized objective wδ − γ: geometric grid from
/// the GEVP optimum upward, then a golden-section refinement between the
/// best point's neighbors.
fn scalarized_sweep<F>(
    dm: &DesignMatrices,
    w8: &H2Weights,
    w: f64,
    eval: F,
) -> Result<SynthesisResult, SynthesisError>
where
    F: Fn(f64) -> Result<SynthesisResult, SynthesisError>,
{
    let (_, delta_star) = h2_gevp(dm, w8, 1e-4)?;
    let mut best: Option<SynthesisResult> = None;
    let mut best_score = f64::INFINITY;
    let mut grid: Vec<f64> = (0..10)
        .map(|k| delta_star * 1.05 * (1.6_f64).powi(k))
        .collect();
    let mut scores = vec![f64::INFINITY; grid.len()];
    for (idx, d) in grid.iter().enumerate() {
        if let Ok(r) = eval(*d) {
            let score = w * r.delta - r.gamma;
            scores[idx] = score;
            if score < best_score {
                best_score = score;
                best = Some(r);
            }
        }
    }
    let best_idx = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    // Refine between the neighbors of the best grid point.
    let lo = if best_idx == 0 { grid[0] / 1.6 } else { grid[best_idx - 1] };
    let hi = if best_idx + 1 < grid.len() {
        grid[best_idx + 1]
    } else {
        grid[best_idx] * 1.6
    };
    grid = (1..=6)
        .map(|k| lo * ((hi / lo).powf(k as f64 / 7.0)))
        .collect();
    for d in grid {
        if let Ok(r) = eval(d) {
            let score = w * r.delta - r.gamma;
            if score < best_score {
                best_score = score;
                best = Some(r);
            }
        }
    }
    best.ok_or_else(|| SynthesisError::Infeasible("no feasible point in the delta sweep".into()))
}

/// Aux-function H₂ design.
pub fn synthesize_aux(
    model: &RnnModel,
    theta: &[f64],
    w8: &H2Weights,
    mode: SynthesisMode,
    f_lmi: FLmi,
) -> Result<SynthesisResult, SynthesisError> {
    if f_lmi == FLmi::LogDet {
        return Err(SynthesisError::Analysis(AnalysisError::Unsupported(
            "log-det maximization is not available in the reference backend; use LambdaMin".into(),
        )));
    }
    match mode {
        SynthesisMode::FixedDelta(delta_bar) => synthesize_aux_fixed(model, theta, w8, delta_bar),
        SynthesisMode::Scalarized(w) => {
            let dm = design_matrices(model);
            scalarized_sweep(&dm, w8, w, |d| synthesize_aux_fixed(model, theta, w8, d))
        }
    }
}

#[derive(Debug, Clone)]
pub struct NarrowSynthesisOutput {
    pub result: SynthesisResult,
    pub h_bar: f64,
    pub sweep: Vec<(usize, f64, Option<f64>)>,
}

/// Sector-narrowing H₂ design: the design minimum-h program seeds
/// H = (h̄ + iΔh)I, each iteration recomputes ȳᵢ(hᵢ) and solves the joint
/// program; the best basin measure wins (ties to the smallest i).
pub fn synthesize_narrow(
    model: &RnnModel,
    w8: &H2Weights,
    mode: SynthesisMode,
    delta_h: Option<f64>,
    i_max: usize,
    f_lmi: FLmi,
) -> Result<NarrowSynthesisOutput, SynthesisError> {
    if f_lmi == FLmi::LogDet {
        return Err(SynthesisError::Analysis(AnalysisError::Unsupported(
            "log-det maximization is not available in the reference backend; use LambdaMin".into(),
        )));
    }
    let h_bar = min_h_design(model)?;
    let h0 = h_bar.max(1e-9) * (1.0 + 1e-6);
    let dh = delta_h.unwrap_or_else(|| default_delta_h(h_bar));
    let nu = model.nu();
    let run_fixed = |delta_bar: f64| -> Result<NarrowSynthesisOutput, SynthesisError> {
        let outcomes: Vec<(usize, f64, Result<SynthesisResult, SynthesisError>)> = (0..=i_max)
            .into_par_iter()
            .map(|i| {
                let h = h0 + dh * i as f64;
                let out = compute_ybar(&model.kind, h, 1e-9)
                    .map_err(SynthesisError::from)
                    .and_then(|yb| {
                        synthesize_narrow_fixed(
                            model,
                            w8,
                            delta_bar,
                            &vec![h; nu],
                            &vec![yb; nu],
                        )
                    });
                (i, h, out)
            })
            .collect();
        let mut sweep = Vec::with_capacity(i_max + 1);
        let mut best: Option<SynthesisResult> = None;
        let mut first_err = None;
        for (i, h, out) in outcomes {
            match out {
                Ok(r) => {
                    sweep.push((i, h, Some(r.gamma)));
                    let better = best
                        .as_ref()
                        .map_or(true, |b| r.gamma > b.gamma + 1e-12);
                    if better {
                        best = Some(r);
                    }
                }
                Err(e) => {
                    sweep.push((i, h, None));
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        match best {
            Some(result) => Ok(NarrowSynthesisOutput {
                result,
                h_bar,
                sweep,
            }),
            None => Err(first_err
                .unwrap_or_else(|| SynthesisError::Infeasible("all narrowing iterations failed".into()))),
        }
    };
    match mode {
        SynthesisMode::FixedDelta(delta_bar) => run_fixed(delta_bar),
        SynthesisMode::Scalarized(w) => {
            let dm = design_matrices(model);
            let out = scalarized_sweep(&dm, w8, w, |d| run_fixed(d).map(|o| o.result))?;
            Ok(NarrowSynthesisOutput {
                result: out,
                h_bar,
                sweep: Vec::new(),
            })
        }
    }
}

/// Analysis-only basin re-maximization at a fixed gain: strictly fewer
/// constraints than the joint program, so γ can only grow.
pub fn refine_basin(
    model: &RnnModel,
    k: &DMatrix<f64>,
    method: Method,
    f_lmi: FLmi,
) -> Result<StabilityCertificate, SynthesisError> {
    let cl = build_closed_loop(model, k)?;
    let cert = match method {
        Method::Global => check_global(&cl)?,
        Method::RegionalAux => {
            let theta = crate::sigmoid::compute_theta(&model.kind, 1e-6)?;
            analyze_regional_aux(&cl, &vec![theta; cl.nu()], f_lmi)?
        }
        Method::RegionalNarrow => {
            let out = algorithm1(&cl, 0.1, 20, f_lmi)?;
            out.best
        }
    };
    Ok(cert)
}

/// Consistency gates every synthesis result must clear: the linearized
/// closed loop is Schur, and the independent H₂ oracle respects √δ.
pub fn verify_synthesis(
    model: &RnnModel,
    w8: &H2Weights,
    result: &SynthesisResult,
) -> Result<(), SynthesisError> {
    let dm = design_matrices(model);
    let a_cl = &dm.f + &dm.g * &result.k;
    let (schur, rho) = is_schur(&a_cl)?;
    if !schur {
        return Err(SynthesisError::NumericalFailure(format!(
            "synthesized F+GK is not Schur (radius {rho})"
        )));
    }
    if !(result.trace_gamma < result.eta * result.delta + 1e-8) {
        return Err(SynthesisError::NumericalFailure(format!(
            "trace coupling violated: tr(Gamma) = {} vs eta*delta = {}",
            result.trace_gamma,
            result.eta * result.delta
        )));
    }
    let c_cl = &w8.q_tilde + &w8.r_tilde * &result.k;
    let h2 = h2_norm_oracle(&a_cl, &c_cl)?;
    if h2 * h2 > result.delta * (1.0 + 1e-4) {
        return Err(SynthesisError::NumericalFailure(format!(
            "H2 oracle {h2} exceeds the certified bound sqrt({})",
            result.delta
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::validate_certificate;
    use crate::sigmoid::{compute_theta, SigmoidKind};

    fn scalar_weights(q: f64, ru: f64) -> H2Weights {
        H2Weights::new(
            DMatrix::from_column_slice(2, 1, &[q.sqrt(), 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, ru.sqrt()]),
        )
        .unwrap()
    }

    /// Dense-grid oracle: min over scalar k of trace X(k), with
    /// X = a_c²X + q + r·k², a_c = f + g·k.
    fn h2_grid_oracle(f: f64, g: f64, q: f64, r: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut best_k = 0.0;
        for i in 0..20000 {
            let k = -4.0 + 8.0 * i as f64 / 19999.0;
            let ac = f + g * k;
            if ac.abs() >= 0.999 {
                continue;
            }
            let x = (q + r * k * k) / (1.0 - ac * ac);
            if x < best {
                best = x;
                best_k = k;
            }
        }
        // Golden refinement around the best bracket.
        let (mut lo, mut hi) = (best_k - 5e-4, best_k + 5e-4);
        let val = |k: f64| {
            let ac = f + g * k;
            (q + r * k * k) / (1.0 - ac * ac)
        };
        for _ in 0..80 {
            let m1 = lo + 0.382 * (hi - lo);
            let m2 = lo + 0.618 * (hi - lo);
            if val(m1) < val(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        val(0.5 * (lo + hi))
    }

    #[test]
    fn h2_gevp_matches_grid_oracle() {
        for (f, g, q, r) in [
            (0.0, 1.0, 1.0, 1.0),
            (0.5, 1.0, 1.0, 1.0),
            (0.9, 2.0, 2.0, 0.5),
        ] {
            let dm = DesignMatrices {
                f: DMatrix::from_element(1, 1, f),
                g: DMatrix::from_element(1, 1, g),
            };
            let w8 = scalar_weights(q, r);
            let (k, delta) = h2_gevp(&dm, &w8, 1e-5).unwrap();
            let oracle = h2_grid_oracle(f, g, q, r);
            assert!(
                (delta - oracle).abs() <= 1e-3 * oracle,
                "(f={f},g={g}): delta {delta} vs oracle {oracle}"
            );
            // The oracle H2 norm of the returned gain respects sqrt(delta).
            let a_cl = DMatrix::from_element(1, 1, f + g * k[(0, 0)]);
            let c_cl = &w8.q_tilde + &w8.r_tilde * &k;
            let h2 = h2_norm_oracle(&a_cl, &c_cl).unwrap();
            assert!(h2 * h2 <= delta * (1.0 + 1e-4));
        }
    }

    #[test]
    fn h2_gevp_g_zero_stable_open_loop() {
        let dm = DesignMatrices {
            f: DMatrix::from_element(1, 1, 0.5),
            g: DMatrix::from_element(1, 1, 0.0),
        };
        let w8 = scalar_weights(1.0, 1.0);
        let (k, delta) = h2_gevp(&dm, &w8, 1e-5).unwrap();
        // K is irrelevant through G = 0 but the R-weight penalizes it in
        // the output; the optimum is the open-loop trace at K = 0.
        let oracle = 1.0 / (1.0 - 0.25);
        assert!((delta - oracle).abs() <= 2e-3 * oracle, "delta {delta}");
        let a_cl = DMatrix::from_element(1, 1, 0.5);
        let c_cl = &w8.q_tilde + &w8.r_tilde * &k;
        let h2 = h2_norm_oracle(&a_cl, &c_cl).unwrap();
        assert!(h2 * h2 <= delta * (1.0 + 1e-4));
    }

    #[test]
    fn h2_gevp_unstabilizable_errors() {
        let dm = DesignMatrices {
            f: DMatrix::from_element(1, 1, 2.0),
            g: DMatrix::from_element(1, 1, 0.0),
        };
        let w8 = scalar_weights(1.0, 1.0);
        match h2_gevp(&dm, &w8, 1e-4) {
            Err(SynthesisError::NoFeasibleUpperBound) => {}
            other => panic!("expected NoFeasibleUpperBound, got {other:?}"),
        }
    }

    fn scalar_plant() -> RnnModel {
        RnnModel::scalar_demo(SigmoidKind::Tanh)
    }

    fn plant_weights() -> H2Weights {
        // z = [x; u] with unit weights on the scalar plant.
        H2Weights::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn synthesize_aux_scalar_plant_validates() {
        let model = scalar_plant();
        let theta = compute_theta(&model.kind, 1e-6).unwrap();
        let w8 = plant_weights();
        let res = synthesize_aux(
            &model,
            &[theta],
            &w8,
            SynthesisMode::FixedDelta(50.0),
            FLmi::LambdaMin,
        )
        .unwrap();
        verify_synthesis(&model, &w8, &res).unwrap();
        let cl = build_closed_loop(&model, &res.k).unwrap();
        let rep = validate_certificate(&res.certificate, &cl, 2000).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn synthesize_aux_gamma_monotone_in_delta() {
        let model = scalar_plant();
        let theta = compute_theta(&model.kind, 1e-6).unwrap();
        let w8 = plant_weights();
        let mut prev = -f64::INFINITY;
        for delta_bar in [5.0, 10.0, 20.0] {
            let res = synthesize_aux(
                &model,
                &[theta],
                &w8,
                SynthesisMode::FixedDelta(delta_bar),
                FLmi::LambdaMin,
            )
            .unwrap();
            assert!(
                res.gamma >= prev - 1e-7,
                "gamma not monotone: {} after {prev} at delta {delta_bar}",
                res.gamma
            );
            prev = res.gamma;
        }
    }

    #[test]
    fn synthesize_aux_below_gevp_optimum_infeasible() {
        let model = scalar_plant();
        let theta = compute_theta(&model.kind, 1e-6).unwrap();
        let w8 = plant_weights();
        let dm = design_matrices(&model);
        let (_, delta_star) = h2_gevp(&dm, &w8, 1e-5).unwrap();
        match synthesize_aux(
            &model,
            &[theta],
            &w8,
            SynthesisMode::FixedDelta(delta_star * 0.5),
            FLmi::LambdaMin,
        ) {
            Err(SynthesisError::Infeasible(_)) => {}
            other => panic!("expected infeasible below delta*, got {other:?}"),
        }
    }

    #[test]
    fn synthesize_narrow_scalar_plant_validates() {
        let model = scalar_plant();
        let w8 = plant_weights();
        let out = synthesize_narrow(
            &model,
            &w8,
            SynthesisMode::FixedDelta(50.0),
            Some(0.2),
            4,
            FLmi::LambdaMin,
        )
        .unwrap();
        verify_synthesis(&model, &w8, &out.result).unwrap();
        let cl = build_closed_loop(&model, &out.result.k).unwrap();
        let rep = validate_certificate(&out.result.certificate, &cl, 2000).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(out.sweep.len(), 5);
    }

    #[test]
    fn synthesize_narrow_imax_zero_single_shot() {
        let model = scalar_plant();
        let w8 = plant_weights();
        let out = synthesize_narrow(
            &model,
            &w8,
            SynthesisMode::FixedDelta(50.0),
            Some(0.2),
            0,
            FLmi::LambdaMin,
        )
        .unwrap();
        assert_eq!(out.sweep.len(), 1);
    }

    #[test]
    fn refine_basin_never_shrinks_gamma() {
        let model = scalar_plant();
        let theta = compute_theta(&model.kind, 1e-6).unwrap();
        let w8 = plant_weights();
        let res = synthesize_aux(
            &model,
            &[theta],
            &w8,
            SynthesisMode::FixedDelta(10.0),
            FLmi::LambdaMin,
        )
        .unwrap();
        let refined = refine_basin(&model, &res.k, Method::RegionalAux, FLmi::LambdaMin).unwrap();
        assert!(
            refined.gamma.unwrap() >= res.gamma - 1e-5 * (1.0 + res.gamma.abs()),
            "refined {} < synthesis {}",
            refined.gamma.unwrap(),
            res.gamma
        );
        let cl = build_closed_loop(&model, &res.k).unwrap();
        let rep = validate_certificate(&refined, &cl, 2000).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn refine_basin_non_stabilizing_gain_diagnosed() {
        let model = scalar_plant();
        // K = 2: A = 0 + 2 + 0.5*(1) = 2.5, far outside the unit circle.
        let k = DMatrix::from_element(1, 1, 2.0);
        match refine_basin(&model, &k, Method::RegionalAux, FLmi::LambdaMin) {
            Err(SynthesisError::Analysis(AnalysisError::Infeasible { diagnosis })) => {
                assert!(matches!(diagnosis, Diagnosis::RegionalAuxNeedsSchur { .. }));
            }
            other => panic!("expected Schur diagnosis, got {other:?}"),
        }
    }

    #[test]
    fn scalarized_mode_balances_objective() {
        let model = scalar_plant();
        let theta = compute_theta(&model.kind, 1e-6).unwrap();
        let w8 = plant_weights();
        let res = synthesize_aux(
            &model,
            &[theta],
            &w8,
            SynthesisMode::Scalarized(1.0),
            FLmi::LambdaMin,
        )
        .unwrap();
        verify_synthesis(&model, &w8, &res).unwrap();
        // The scalarized optimum cannot be worse than a few fixed probes.
        let probe = synthesize_aux(
            &model,
            &[theta],
            &w8,
            SynthesisMode::FixedDelta(res.delta),
            FLmi::LambdaMin,
        )
        .unwrap();
        assert!((res.delta - probe.delta).abs() < 1e-9);
        assert!(res.gamma >= probe.gamma - 1e-6);
    }

    #[test]
    fn benchmark_weights_structure() {
        let wy = DMatrix::from_row_slice(1, 3, &[0.5, -0.2, 0.1]);
        let w8 = benchmark_weights(&wy, 0.1, 0.1, 0.05);
        assert_eq!(w8.q_tilde.shape(), (3, 4));
        assert_eq!(w8.r_tilde.shape(), (3, 1));
        assert!((w8.q_tilde[(0, 0)] - 0.1_f64.sqrt() * 0.5).abs() < 1e-15);
        assert!((w8.q_tilde[(1, 3)] - 0.1_f64.sqrt()).abs() < 1e-15);
        assert!((w8.r_tilde[(2, 0)] - 0.05_f64.sqrt()).abs() < 1e-15);
        assert!(!w8.is_degenerate());
    }
}
