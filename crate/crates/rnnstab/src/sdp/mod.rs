//! Small-scale LMI/SDP problems and a self-contained dense solver.
//!
//! The module provides a structured modeling layer ([`SdpProblem`],
//! [`LmiBlock`], matrix variables with symmetric/diagonal/rectangular/scalar
//! structure), a reference interior-point backend, and three entry points:
//!
//! - [`solve_feasibility`]: decides strict feasibility through a margin
//!   program `max t s.t. G(x) ⪰ t·I, t ≤ 1` and returns an interior point;
//! - [`solve_min_linear`] / [`solve_max_linear`]: optimize a linear
//!   objective after a feasibility gate;
//! - [`solve_gevp_bisection`]: outer bisection on a scalar parameter for
//!   quasi-convex (generalized eigenvalue) programs.
//!
//! Every `Feasible` answer is re-verified by eigenvalue computation on the
//! assembled blocks; a violation downgrades the status to `Marginal`.
//! Alternative backends can be plugged behind [`backend_from_env`]; the
//! reference backend is selected by `RNNSTAB_BACKEND=reference` (the
//! default).

mod problem;
mod solver;

use nalgebra::DMatrix;
use thiserror::Error;

pub use problem::{
    BlockSense, LinearRow, LmiBlock, MatrixVariable, Objective, SdpProblem, VarId, VarStructure,
};
use problem::{compile, CompileOptions};
use solver::{solve_ipm, IpmOptions, IpmTermination};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("ill-posed problem: {0}")]
    BadProblem(String),
    #[error("numerical failure in the solver: {0}")]
    NumericalFailure(String),
    #[error("no feasible upper bound found (doubling cap reached at {0:.3e})")]
    NoFeasibleUpperBound(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Marginal,
    NumericalFailure,
}

/// Residual tolerance for the mandatory eigenvalue re-verification.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Default box half-width applied to every scalar variable component.
pub const DEFAULT_BOUND: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolveStatus,
    /// Per-variable assignment, in declaration order.
    pub assignment: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// Worst (most negative) eigenvalue of each assembled block at the
    /// assignment, in problem block order; linear rows report their value.
    pub block_residuals: Vec<(String, f64)>,
    /// Phase-I margin t*, when a feasibility phase ran.
    pub margin: Option<f64>,
    pub iterations: usize,
    /// True when some component sits at the internal box bound, meaning the
    /// reported optimum is clipped by the solver box rather than the model.
    pub box_active: bool,
    pub log: Vec<String>,
}

impl SolverResult {
    pub fn var(&self, id: VarId) -> &DMatrix<f64> {
        &self.assignment[id.0]
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub default_bound: f64,
    /// Early-exit margin for sign-only feasibility probes.
    pub probe_margin: f64,
    /// When set, optimization answers are polished: the objective is pinned
    /// within this relative slack and a feasibility pass pushes the
    /// assignment to a deep interior point, so the returned matrices carry
    /// positive residuals regardless of their scale.
    pub polish_slack: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 250,
            tol_feas: 1e-9,
            tol_gap: 1e-9,
            default_bound: DEFAULT_BOUND,
            probe_margin: 1e-6,
            polish_slack: Some(2e-7),
        }
    }
}

/// Backend contract: any conic solver able to handle the compiled problems.
pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn feasibility(
        &self,
        problem: &SdpProblem,
        opts: &SolveOptions,
        sign_only: bool,
    ) -> Result<SolverResult, SdpError>;
    fn minimize(
        &self,
        problem: &SdpProblem,
        objective: &Objective,
        opts: &SolveOptions,
    ) -> Result<SolverResult, SdpError>;
}

/// Reference dense primal-dual interior-point backend.
pub struct ReferenceBackend;

/// Selects a backend from `RNNSTAB_BACKEND` (`reference` or unset).
pub fn backend_from_env() -> Result<Box<dyn SdpBackend>, SdpError> {
    match std::env::var("RNNSTAB_BACKEND").as_deref() {
        Err(_) | Ok("") | Ok("reference") => Ok(Box::new(ReferenceBackend)),
        Ok(other) => Err(SdpError::Unsupported(format!(
            "unknown solver backend `{other}` (available: reference)"
        ))),
    }
}

fn extract_assignment(problem: &SdpProblem, x: &[f64]) -> Vec<DMatrix<f64>> {
    (0..problem.vars.len())
        .map(|vi| problem.materialize(VarId(vi), x))
        .collect()
}

/// Worst eigenvalue per block (and row value per linear row) at `x`.
fn verify_residuals(problem: &SdpProblem, x: &[f64]) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (bi, b) in problem.blocks.iter().enumerate() {
        let mut m = problem.assemble_block(bi, x);
        let n = m.nrows();
        let min_eig = if n == 1 {
            m[(0, 0)]
        } else {
            for i in 0..n {
                for j in 0..i {
                    let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m.symmetric_eigenvalues().min()
        };
        out.push((b.name.clone(), min_eig));
    }
    for r in &problem.rows {
        let val = r.constant
            + r.coeffs
                .iter()
                .map(|(v, i, j, c)| c * x[problem.entry_index(*v, *i, *j)])
                .sum::<f64>();
        out.push((r.name.clone(), val));
    }
    out
}

fn box_active(problem: &SdpProblem, x: &[f64], default_bound: f64) -> bool {
    let mut k = 0;
    for v in &problem.vars {
        let bound = v.bound.unwrap_or(default_bound);
        for _ in 0..v.structure.scalar_len() {
            if x[k].abs() >= 0.999 * bound {
                return true;
            }
            k += 1;
        }
    }
    false
}

impl ReferenceBackend {
    fn phase1(
        &self,
        problem: &SdpProblem,
        opts: &SolveOptions,
        sign_only: bool,
    ) -> Result<(SolverResult, Vec<f64>), SdpError> {
        let comp = compile(
            problem,
            None,
            &CompileOptions {
                default_bound: opts.default_bound,
                phase1: Some(1.0),
            },
        )?;
        let ipm_opts = IpmOptions {
            max_iter: opts.max_iter,
            tol_feas: opts.tol_feas,
            tol_gap: opts.tol_gap,
            stop_at_margin: Some(if sign_only { opts.probe_margin } else { 0.05 }),
            stop_below_margin: Some(if sign_only { opts.probe_margin } else { 1e-8 }),
            warm_x: None,
        };
        let out = solve_ipm(&comp, &ipm_opts);
        let t = comp.t_index.unwrap();
        let margin = out.x[t];
        let x_base: Vec<f64> = out.x[..problem.total_scalars()].to_vec();
        let eps_max = comp.blocks.iter().map(|b| b.eps).fold(0.0f64, f64::max);

        let status = match out.termination {
            IpmTermination::MarginPositive => SolveStatus::Feasible,
            IpmTermination::MarginNegative => SolveStatus::Infeasible,
            IpmTermination::Optimal => {
                if margin >= 1e-9 {
                    SolveStatus::Feasible
                } else if margin <= -(1e-9_f64).max(0.5 * eps_max) {
                    SolveStatus::Infeasible
                } else {
                    SolveStatus::Marginal
                }
            }
            IpmTermination::MaxIterations | IpmTermination::Stalled => {
                // Phase-I iterates stay primal feasible, so the achieved
                // margin is certified; with a near-closed duality gap a
                // clearly negative margin decides infeasibility.
                if out.rel_primal <= 1e-9 && margin >= 1e-9 {
                    SolveStatus::Feasible
                } else if out.rel_primal <= 1e-9
                    && out.rel_dual <= 1e-5
                    && margin <= -(1e-8_f64).max(eps_max)
                {
                    SolveStatus::Infeasible
                } else {
                    SolveStatus::NumericalFailure
                }
            }
            IpmTermination::Failed => SolveStatus::NumericalFailure,
        };

        let mut result = SolverResult {
            status,
            assignment: extract_assignment(problem, &x_base),
            objective: 0.0,
            block_residuals: Vec::new(),
            margin: Some(margin),
            iterations: out.iterations,
            box_active: box_active(problem, &x_base, opts.default_bound),
            log: out.log.clone(),
        };
        if result.status == SolveStatus::Feasible {
            result.block_residuals = verify_residuals(problem, &x_base);
            let worst = result
                .block_residuals
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            if worst < -RESIDUAL_TOL {
                result.status = SolveStatus::Marginal;
            }
        }
        Ok((result, x_base))
    }
}

impl ReferenceBackend {
    /// Re-solves as a margin problem with the objective pinned near its
    /// optimum, trading a sliver of objective for interior depth.
    fn polish(
        &self,
        problem: &SdpProblem,
        objective: &Objective,
        opts: &SolveOptions,
        result: &SolverResult,
        slack: f64,
    ) -> Result<Option<SolverResult>, SdpError> {
        let obj = result.objective;
        if !obj.is_finite() {
            return Ok(None);
        }
        let mut pinned = problem.clone();
        let budget = obj + slack * (1.0 + obj.abs());
        let mut coeffs = Vec::new();
        for (vi, v) in problem.vars.iter().enumerate() {
            let off = problem.var_offset(VarId(vi));
            let (r, c) = v.structure.shape();
            let mut k = 0usize;
            match v.structure {
                VarStructure::Symmetric(n) => {
                    for j in 0..n {
                        for i in j..n {
                            let w = objective.c[off + k];
                            if w != 0.0 {
                                coeffs.push((VarId(vi), i, j, -w));
                            }
                            k += 1;
                        }
                    }
                }
                VarStructure::Diagonal(n) => {
                    for i in 0..n {
                        let w = objective.c[off + i];
                        if w != 0.0 {
                            coeffs.push((VarId(vi), i, i, -w));
                        }
                    }
                }
                VarStructure::Rectangular(_, _) => {
                    for j in 0..c {
                        for i in 0..r {
                            let w = objective.c[off + k];
                            if w != 0.0 {
                                coeffs.push((VarId(vi), i, j, -w));
                            }
                            k += 1;
                        }
                    }
                }
                VarStructure::Scalar => {
                    let w = objective.c[off];
                    if w != 0.0 {
                        coeffs.push((VarId(vi), 0, 0, -w));
                    }
                }
            }
        }
        pinned.add_linear_row(LinearRow {
            name: "objective-pin".into(),
            constant: budget,
            coeffs,
            strict: false,
        });
        let (polished, x) = self.phase1(&pinned, opts, false)?;
        if polished.status != SolveStatus::Feasible {
            return Ok(None);
        }
        let achieved: f64 = objective.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let mut out = polished;
        out.objective = achieved;
        out.block_residuals = verify_residuals(problem, &x);
        out.assignment = extract_assignment(problem, &x);
        let worst = out
            .block_residuals
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        if worst < -RESIDUAL_TOL {
            out.status = SolveStatus::Marginal;
        }
        out.log.push(format!(
            "polished at objective {achieved:.6e} (budget {budget:.6e})"
        ));
        Ok(Some(out))
    }
}

impl SdpBackend for ReferenceBackend {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn feasibility(
        &self,
        problem: &SdpProblem,
        opts: &SolveOptions,
        sign_only: bool,
    ) -> Result<SolverResult, SdpError> {
        let (res, _) = self.phase1(problem, opts, sign_only)?;
        Ok(res)
    }

    fn minimize(
        &self,
        problem: &SdpProblem,
        objective: &Objective,
        opts: &SolveOptions,
    ) -> Result<SolverResult, SdpError> {
        let (gate, gate_x) = self.phase1(problem, opts, false)?;
        match gate.status {
            SolveStatus::Feasible | SolveStatus::Marginal => {}
            _ => return Ok(gate),
        }
        let comp = compile(
            problem,
            Some(objective),
            &CompileOptions {
                default_bound: opts.default_bound,
                phase1: None,
            },
        )?;
        let ipm_opts = IpmOptions {
            max_iter: opts.max_iter,
            tol_feas: opts.tol_feas,
            tol_gap: opts.tol_gap,
            stop_at_margin: None,
            stop_below_margin: None,
            warm_x: Some(gate_x),
        };
        let out = solve_ipm(&comp, &ipm_opts);
        let x = out.x.clone();
        let converged = matches!(out.termination, IpmTermination::Optimal);
        let mut result = SolverResult {
            status: if converged {
                SolveStatus::Feasible
            } else {
                SolveStatus::NumericalFailure
            },
            assignment: extract_assignment(problem, &x),
            objective: out.objective,
            block_residuals: verify_residuals(problem, &x),
            margin: gate.margin,
            iterations: out.iterations,
            box_active: box_active(problem, &x, opts.default_bound),
            log: out.log.clone(),
        };
        if result.status == SolveStatus::Feasible {
            if let Some(slack0) = opts.polish_slack {
                // Escalate the pin slack until the polished point carries
                // clean residuals; tighter pins keep toy optima exact while
                // badly scaled instances trade more objective for depth.
                let mut slack = slack0;
                for _ in 0..5 {
                    match self.polish(problem, objective, opts, &result, slack)? {
                        Some(polished) => {
                            let worst = polished
                                .block_residuals
                                .iter()
                                .map(|(_, v)| *v)
                                .fold(f64::INFINITY, f64::min);
                            if polished.status == SolveStatus::Feasible && worst >= -RESIDUAL_TOL * 0.1 {
                                return Ok(polished);
                            }
                            result.log.push(format!(
                                "polish at slack {slack:.1e}: status {:?}, worst residual {worst:.3e}",
                                polished.status
                            ));
                        }
                        None => result
                            .log
                            .push(format!("polish at slack {slack:.1e}: pin infeasible")),
                    }
                    slack *= 10.0;
                }
            }
            let worst = result
                .block_residuals
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            if worst < -RESIDUAL_TOL {
                result.status = SolveStatus::Marginal;
            }
        } else if !converged {
            // Fall back to the interior point from the gate: suboptimal but
            // certified feasible.
            let worst = gate
                .block_residuals
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            if worst >= -RESIDUAL_TOL && gate.status == SolveStatus::Feasible {
                let mut fallback = gate;
                fallback.log.push("-- optimization phase log --".into());
                fallback.log.extend(out.log.iter().cloned());
                fallback
                    .log
                    .push("optimization did not converge; returning the phase-I interior point".into());
                fallback.status = SolveStatus::Marginal;
                return Ok(fallback);
            }
        }
        Ok(result)
    }
}

/// Decides strict feasibility of the block set and returns an interior
/// assignment when feasible.
pub fn solve_feasibility(problem: &SdpProblem) -> Result<SolverResult, SdpError> {
    ReferenceBackend.feasibility(problem, &SolveOptions::default(), false)
}

pub fn solve_feasibility_with(
    problem: &SdpProblem,
    opts: &SolveOptions,
    sign_only: bool,
) -> Result<SolverResult, SdpError> {
    backend_from_env()?.feasibility(problem, opts, sign_only)
}

/// Minimizes a linear objective subject to the problem's blocks.
pub fn solve_min_linear(
    problem: &SdpProblem,
    objective: &Objective,
) -> Result<SolverResult, SdpError> {
    backend_from_env()?.minimize(problem, objective, &SolveOptions::default())
}

pub fn solve_min_linear_with(
    problem: &SdpProblem,
    objective: &Objective,
    opts: &SolveOptions,
) -> Result<SolverResult, SdpError> {
    backend_from_env()?.minimize(problem, objective, opts)
}

/// Maximizes a linear objective (negated minimize; the returned objective
/// is the maximized value).
pub fn solve_max_linear(
    problem: &SdpProblem,
    objective: &Objective,
) -> Result<SolverResult, SdpError> {
    solve_max_linear_with(problem, objective, &SolveOptions::default())
}

pub fn solve_max_linear_with(
    problem: &SdpProblem,
    objective: &Objective,
    opts: &SolveOptions,
) -> Result<SolverResult, SdpError> {
    let neg = Objective {
        c: objective.c.iter().map(|v| -v).collect(),
    };
    let mut res = backend_from_env()?.minimize(problem, &neg, opts)?;
    res.objective = -res.objective;
    Ok(res)
}

/// Outer bisection for quasi-convex programs: `family(δ)` must produce a
/// problem whose feasibility is monotone nondecreasing in δ. Returns the
/// smallest feasible δ within relative tolerance `tol` and the assignment
/// at that δ. The upper end is auto-expanded by doubling from `delta_hi`
/// up to `cap`.
pub struct GevpOptions {
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub cap: f64,
    pub tol: f64,
    pub solve: SolveOptions,
}

impl Default for GevpOptions {
    fn default() -> Self {
        GevpOptions {
            delta_lo: 1e-6,
            delta_hi: 1.0,
            cap: (2.0_f64).powi(40),
            tol: 1e-4,
            solve: SolveOptions::default(),
        }
    }
}

pub fn solve_gevp_bisection<F>(
    family: F,
    opts: &GevpOptions,
) -> Result<(f64, SolverResult), SdpError>
where
    F: Fn(f64) -> Result<SdpProblem, SdpError>,
{
    let backend = backend_from_env()?;
    let probe = |delta: f64, sign_only: bool| -> Result<(bool, SolverResult), SdpError> {
        let p = family(delta)?;
        let r = backend.feasibility(&p, &opts.solve, sign_only)?;
        match r.status {
            SolveStatus::Feasible => Ok((true, r)),
            SolveStatus::Infeasible | SolveStatus::Marginal => Ok((false, r)),
            SolveStatus::NumericalFailure => Err(SdpError::NumericalFailure(format!(
                "probe at delta={delta} failed: {}",
                r.log.join("; ")
            ))),
        }
    };

    let mut probes: Vec<(f64, bool)> = Vec::new();
    let mut hi = opts.delta_hi;
    let mut hi_result;
    loop {
        let (feas, r) = probe(hi, true)?;
        probes.push((hi, feas));
        if feas {
            hi_result = r;
            break;
        }
        hi *= 2.0;
        if hi > opts.cap {
            return Err(SdpError::NoFeasibleUpperBound(opts.cap));
        }
    }
    let mut lo = opts.delta_lo.min(hi);
    // Quick check: if the lower end is already feasible the infimum is at
    // or below delta_lo.
    let (lo_feas, r_lo) = probe(lo, true)?;
    probes.push((lo, lo_feas));
    if lo_feas {
        hi = lo;
        hi_result = r_lo;
    } else {
        while hi - lo > opts.tol * hi {
            let mid = (lo * hi).sqrt().max(lo + 0.25 * (hi - lo) * f64::EPSILON);
            let (feas, r) = probe(mid, true)?;
            probes.push((mid, feas));
            if feas {
                hi = mid;
                hi_result = r;
            } else {
                lo = mid;
            }
        }
    }

    // Monotonicity audit over every probed point.
    let mut sorted = probes.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut seen_feasible = false;
    for (d, f) in &sorted {
        if seen_feasible && !f {
            return Err(SdpError::NumericalFailure(format!(
                "feasibility is not monotone in the bisection parameter (infeasible at {d} after a smaller feasible point)"
            )));
        }
        seen_feasible |= f;
    }

    Ok((hi, hi_result))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lyapunov-type block [S, S·aᵀ; a·S, S] for scalar a.
    fn lyap_problem(a: f64) -> SdpProblem {
        let mut p = SdpProblem::new();
        let s = p.add_symmetric("S", 1);
        let amat = DMatrix::from_element(1, 1, a);
        let mut blk = LmiBlock::new("lyap", &[1, 1], BlockSense::StrictPd);
        blk.add_term(0, 0, None, s, None);
        blk.add_term(1, 0, Some(amat), s, None);
        blk.add_term(1, 1, None, s, None);
        p.add_block(blk).unwrap();
        p
    }

    #[test]
    fn scalar_lyapunov_feasible() {
        let r = solve_feasibility(&lyap_problem(0.5)).unwrap();
        assert_eq!(r.status, SolveStatus::Feasible, "log: {:?}", r.log);
        assert!(r.margin.unwrap() > 0.0);
        let s = r.assignment[0][(0, 0)];
        assert!(s > 0.0);
        // Residuals verified nonnegative.
        for (name, v) in &r.block_residuals {
            assert!(*v >= -RESIDUAL_TOL, "{name}: {v}");
        }
    }

    #[test]
    fn scalar_lyapunov_infeasible_at_radius_one() {
        let r = solve_feasibility(&lyap_problem(1.0)).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible, "log: {:?}", r.log);
    }

    /// max γ s.t. S ⪰ γ, S ⪯ 1 → γ* = 1.
    #[test]
    fn box_constrained_max() {
        let mut p = SdpProblem::new();
        let s = p.add_symmetric("S", 1);
        let gamma = p.add_scalar("gamma");
        p.add_linear_row(LinearRow {
            name: "S_ge_gamma".into(),
            constant: 0.0,
            coeffs: vec![(s, 0, 0, 1.0), (gamma, 0, 0, -1.0)],
            strict: false,
        });
        p.add_linear_row(LinearRow {
            name: "S_le_1".into(),
            constant: 1.0,
            coeffs: vec![(s, 0, 0, -1.0)],
            strict: false,
        });
        let mut obj = p.new_objective();
        obj.c[p.entry_index(gamma, 0, 0)] = 1.0;
        let r = solve_max_linear(&p, &obj).unwrap();
        assert_eq!(r.status, SolveStatus::Feasible, "log: {:?}", r.log);
        assert!((r.objective - 1.0).abs() < 1e-6, "gamma* = {}", r.objective);
    }

    /// min S s.t. [S, 1; 1, 1] ⪰ 0 → S* = 1 (the 2×2 corner forces S ≥ 1).
    #[test]
    fn corner_block_min() {
        let mut p = SdpProblem::new();
        let s = p.add_symmetric("S", 1);
        let mut blk = LmiBlock::new("corner", &[1, 1], BlockSense::Psd);
        blk.add_term(0, 0, None, s, None);
        blk.add_const(1, 0, &DMatrix::from_element(1, 1, 1.0));
        blk.add_const(1, 1, &DMatrix::from_element(1, 1, 1.0));
        p.add_block(blk).unwrap();
        let mut obj = p.new_objective();
        obj.c[p.entry_index(s, 0, 0)] = 1.0;
        let r = solve_min_linear(&p, &obj).unwrap();
        assert_eq!(r.status, SolveStatus::Feasible, "log: {:?}", r.log);
        assert!((r.objective - 1.0).abs() < 1e-5, "S* = {}", r.objective);
    }

    /// GEVP toy: min δ s.t. x ≥ 3, x ≤ δ → δ* = 3.
    #[test]
    fn gevp_toy() {
        let family = |delta: f64| -> Result<SdpProblem, SdpError> {
            let mut p = SdpProblem::new();
            let x = p.add_scalar("x");
            p.add_linear_row(LinearRow {
                name: "x_ge_3".into(),
                constant: -3.0,
                coeffs: vec![(x, 0, 0, 1.0)],
                strict: false,
            });
            p.add_linear_row(LinearRow {
                name: "x_le_delta".into(),
                constant: delta,
                coeffs: vec![(x, 0, 0, -1.0)],
                strict: false,
            });
            Ok(p)
        };
        let (d, r) = solve_gevp_bisection(family, &GevpOptions::default()).unwrap();
        assert!((d - 3.0).abs() / 3.0 < 2e-4, "delta* = {d}");
        assert_eq!(r.status, SolveStatus::Feasible);
    }

    #[test]
    fn gevp_unbounded_family_errors() {
        let family = |_delta: f64| -> Result<SdpProblem, SdpError> {
            let mut p = SdpProblem::new();
            let x = p.add_scalar("x");
            // x ≥ 1 and x ≤ -1: infeasible for every δ.
            p.add_linear_row(LinearRow {
                name: "ge".into(),
                constant: -1.0,
                coeffs: vec![(x, 0, 0, 1.0)],
                strict: false,
            });
            p.add_linear_row(LinearRow {
                name: "le".into(),
                constant: -1.0,
                coeffs: vec![(x, 0, 0, -1.0)],
                strict: false,
            });
            Ok(p)
        };
        let mut opts = GevpOptions::default();
        opts.cap = 64.0;
        match solve_gevp_bisection(family, &opts) {
            Err(SdpError::NoFeasibleUpperBound(_)) => {}
            other => panic!("expected NoFeasibleUpperBound, got {other:?}"),
        }
    }

    #[test]
    fn unknown_backend_rejected() {
        std::env::set_var("RNNSTAB_BACKEND", "mosek");
        let e = backend_from_env().err().unwrap();
        std::env::remove_var("RNNSTAB_BACKEND");
        assert!(matches!(e, SdpError::Unsupported(_)));
    }
}
