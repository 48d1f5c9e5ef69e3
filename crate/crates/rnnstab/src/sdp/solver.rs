//! Dense primal-dual interior-point method for LMI problems.
//!
//! Solves `min cᵀx  s.t.  G_b(x) = C_b + Σ_i x_i F_{b,i} ⪰ 0` over a mix of
//! semidefinite blocks and scalar rows, using Nesterov–Todd scaling and a
//! Mehrotra predictor-corrector. The Newton system is reduced to the Schur
//! complement `H_ij = Σ_b tr(F_{b,i} E_b F_{b,j} E_b)` with `E_b = D_b⁻¹`
//! and `D_b Z_b D_b = W_b`; H is assembled from per-term Gram matrices so
//! the per-component constraint matrices are never materialized.
//!
//! Feasibility queries run in a margin form: an extra variable t is
//! subtracted from every block (`G(x) ⪰ t·I`, t ≤ 1) and maximized. This
//! version is always strictly feasible, starts on the primal-feasible side,
//! and its optimal sign decides feasibility; sign-only probes can stop as
//! soon as either side is certified.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::problem::{CBlock, CLp, CTerm, CTermKind, Compiled};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmTermination {
    Optimal,
    /// Phase-I: margin reached the requested positive threshold.
    MarginPositive,
    /// Phase-I: dual bound certifies a negative optimal margin.
    MarginNegative,
    MaxIterations,
    Stalled,
    Failed,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub termination: IpmTermination,
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub rel_primal: f64,
    pub rel_dual: f64,
    pub rel_gap: f64,
    pub log: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOptions {
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
    /// Phase-I early exit: stop once the margin variable exceeds this.
    pub stop_at_margin: Option<f64>,
    /// Phase-I early exit: stop once the dual bound certifies the optimal
    /// margin below the negative of this.
    pub stop_below_margin: Option<f64>,
    /// Strictly feasible starting point (from a phase-I run); the solve
    /// then keeps the primal residual at zero throughout.
    pub warm_x: Option<Vec<f64>>,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            max_iter: 250,
            tol_feas: 1e-9,
            tol_gap: 1e-9,
            stop_at_margin: None,
            stop_below_margin: None,
            warm_x: None,
        }
    }
}

/// NT scaling data for one SDP block.
struct Scaling {
    /// E = D⁻¹.
    e: DMatrix<f64>,
    /// D = R Rᵀ with V = Rᵀ Z R diagonal.
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    /// Diagonal of V (= eigenvalues of (W^{1/2} Z W^{1/2})^{1/2}).
    v: DVector<f64>,
    winv: DMatrix<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Clamped symmetric square-root factor: W ≈ L Lᵀ with L = Q·diag(√λ⁺)
/// and the inverse factor diag(1/√λ⁺)·Qᵀ. Eigenvalues are floored at a
/// tiny positive multiple of the largest, so roundoff excursions outside
/// the cone cannot abort an iteration.
fn sqrt_factor(w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = w.nrows();
    let mut sym = w.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(1e-300_f64, |a, v| a.max(*v));
    let floor = (1e-14 * lam_max).max(1e-300);
    let mut l = eig.eigenvectors.clone();
    let mut linv = eig.eigenvectors.transpose();
    for j in 0..n {
        let lam = eig.eigenvalues[j].max(floor).sqrt();
        for i in 0..n {
            l[(i, j)] *= lam;
        }
        for i in 0..n {
            linv[(j, i)] /= lam;
        }
    }
    (l, linv)
}

fn nt_scaling(w: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let n = w.nrows();
    let (l, linv) = sqrt_factor(w);
    let mut m = l.transpose() * z * &l;
    symmetrize(&mut m);
    let eig = m.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(1e-300_f64, |a, v| a.max(*v));
    let floor = (1e-14 * lam_max).max(1e-300);
    let lam = eig.eigenvalues.map(|v| v.max(floor));
    // R = L Q Λ^{-1/4}, R^{-1} = Λ^{1/4} Qᵀ L^{-1}: V = Rᵀ Z R = Λ^{1/2}.
    let q = eig.eigenvectors;
    let mut r = &l * &q;
    for j in 0..n {
        let s = lam[j].powf(-0.25);
        for i in 0..n {
            r[(i, j)] *= s;
        }
    }
    let mut rinv = q.transpose() * &linv;
    for i in 0..n {
        let s = lam[i].powf(0.25);
        for j in 0..n {
            rinv[(i, j)] *= s;
        }
    }
    let mut e = rinv.transpose() * &rinv;
    symmetrize(&mut e);
    let mut winv = linv.transpose() * &linv;
    symmetrize(&mut winv);
    let v = lam.map(|x| x.sqrt());
    Some(Scaling {
        e,
        r,
        rinv,
        v,
        winv,
    })
}

/// Largest step α ∈ (0, 1] with W + α·ΔW ⪰ (1−τ)-interior, via the minimum
/// eigenvalue of L⁻¹ ΔW L⁻ᵀ.
fn max_step(w: &DMatrix<f64>, dw: &DMatrix<f64>, tau: f64) -> f64 {
    let (_, linv) = sqrt_factor(w);
    let mut u = &linv * dw * linv.transpose();
    symmetrize(&mut u);
    let lam_min = u.symmetric_eigenvalues().min();
    if lam_min >= -1e-14 {
        1.0
    } else {
        (-tau / lam_min).min(1.0)
    }
}

fn max_step_lp(w: &[f64], dw: &[f64], tau: f64) -> f64 {
    let mut alpha = 1.0_f64;
    for (wi, di) in w.iter().zip(dw) {
        if *di < 0.0 {
            alpha = alpha.min(-tau * wi / di);
        }
    }
    alpha
}

// ---------------------------------------------------------------------------
// Schur complement assembly
// ---------------------------------------------------------------------------

/// pre · E[r0.., c0..] · op(post), with `None` factors as identities.
fn gram(
    e: &DMatrix<f64>,
    r0: usize,
    c0: usize,
    rows: usize,
    cols: usize,
    pre: Option<&DMatrix<f64>>,
    post: Option<&DMatrix<f64>>,
    post_transposed: bool,
) -> DMatrix<f64> {
    let sub = e.view((r0, c0), (rows, cols));
    match (pre, post) {
        (None, None) => sub.into_owned(),
        (Some(p), None) => p * sub,
        (None, Some(q)) => {
            if post_transposed {
                sub * q.transpose()
            } else {
                sub * q
            }
        }
        (Some(p), Some(q)) => {
            if post_transposed {
                p * sub * q.transpose()
            } else {
                p * sub * q
            }
        }
    }
}

/// Adds the cross-term contribution of a (term1, term2) pair within one
/// block to the Schur complement. `same` marks term1 == term2.
#[allow(clippy::too_many_arguments)]
fn fill_pair(h: &mut DMatrix<f64>, e: &DMatrix<f64>, t1: &CTerm, t2: &CTerm, same: bool) {
    let w1 = if t1.mirror && t2.mirror { 2.0 } else { 1.0 };
    let w2 = (t1.mirror as u8 + t2.mirror as u8) as f64;
    match (&t1.kind, &t2.kind) {
        (
            CTermKind::Mat {
                offset: o1,
                len: l1,
                elems: e1,
            },
            CTermKind::Mat {
                offset: o2,
                len: l2,
                elems: e2,
            },
        ) => {
            let ga = gram(e, t1.col, t2.row, t1.q, t2.p, t1.right.as_ref(), t2.left.as_ref(), false);
            let gb = gram(e, t2.col, t1.row, t2.q, t1.p, t2.right.as_ref(), t1.left.as_ref(), false);
            let gc = gram(e, t1.col, t2.col, t1.q, t2.q, t1.right.as_ref(), t2.right.as_ref(), true);
            let gd_pre = t2.left.as_ref().map(|l| l.transpose());
            let gd = gram(e, t2.row, t1.row, t2.p, t1.p, gd_pre.as_ref(), t1.left.as_ref(), false);
            // ga: b1×a2, gb: b2×a1, gc: b1×b2, gd: a2×a1.
            let (ga_s, gb_s, gc_s, gd_s) = (ga.as_slice(), gb.as_slice(), gc.as_slice(), gd.as_slice());
            let (b1, a2, b2) = (t1.b, t2.a, t2.b);
            for i in 0..*l1 {
                let ei = &e1[i];
                let gi = o1 + i;
                let jmax = if same { i + 1 } else { *l2 };
                for j in 0..jmax {
                    let ej = &e2[j];
                    let gj = o2 + j;
                    let mut acc = 0.0;
                    for ai in 0..ei.n as usize {
                        let (al, be) = ei.e[ai];
                        let (al, be) = (al as usize, be as usize);
                        for bj in 0..ej.n as usize {
                            let (ga_j, de) = ej.e[bj];
                            let (gaj, de) = (ga_j as usize, de as usize);
                            // GA[β,γ]·GB[δ,α] and GC[β,δ]·GD[γ,α]
                            acc += w1 * ga_s[gaj * b1 + be] * gb_s[al * b2 + de]
                                + w2 * gc_s[de * b1 + be] * gd_s[al * a2 + gaj];
                        }
                    }
                    // For term pairs (t1, t2) with t1 ≠ t2 the transposed
                    // ordered pair contributes the same value at (gj, gi);
                    // when gi == gj that means the entry gets it twice.
                    unsafe {
                        *h.get_unchecked_mut((gi, gj)) += acc;
                        if !same || gi != gj {
                            *h.get_unchecked_mut((gj, gi)) += acc;
                        }
                    }
                }
            }
        }
        (CTermKind::Sca { index: i1, coeff: c1 }, CTermKind::Sca { index: i2, coeff: c2 }) => {
            let e_c1r2 = e.view((t1.col, t2.row), (t1.q, t2.p));
            let e_c2r1 = e.view((t2.col, t1.row), (t2.q, t1.p));
            let tr1 = (c1 * e_c1r2 * c2 * e_c2r1).trace();
            let e_c1c2 = e.view((t1.col, t2.col), (t1.q, t2.q));
            let e_r2r1 = e.view((t2.row, t1.row), (t2.p, t1.p));
            let tr2 = (c1 * e_c1c2 * c2.transpose() * e_r2r1).trace();
            let acc = w1 * tr1 + w2 * tr2;
            h[(*i1, *i2)] += acc;
            if !same || i1 != i2 {
                h[(*i2, *i1)] += acc;
            }
        }
        (CTermKind::Sca { .. }, CTermKind::Mat { .. }) => {
            fill_sca_mat(h, e, t1, t2, w1, w2);
        }
        (CTermKind::Mat { .. }, CTermKind::Sca { .. }) => {
            fill_sca_mat(h, e, t2, t1, w1, w2);
        }
    }
}

/// Scalar×matrix cross terms; `ts` scalar, `tm` matrix.
fn fill_sca_mat(
    h: &mut DMatrix<f64>,
    e: &DMatrix<f64>,
    ts: &CTerm,
    tm: &CTerm,
    w1: f64,
    w2: f64,
) {
    let (CTermKind::Sca { index, coeff }, CTermKind::Mat { offset, len, elems }) =
        (&ts.kind, &tm.kind)
    else {
        unreachable!()
    };
    // W1 = R_m E[c_m, r_s] C E[c_s, r_m] L_m   (b_m × a_m)
    let mid1 = e.view((tm.col, ts.row), (tm.q, ts.p)) * coeff * e.view((ts.col, tm.row), (ts.q, tm.p));
    let w1m = match (&tm.right, &tm.left) {
        (None, None) => mid1,
        (Some(r), None) => r * mid1,
        (None, Some(l)) => mid1 * l,
        (Some(r), Some(l)) => r * mid1 * l,
    };
    // W2 = L_mᵀ E[r_m, r_s] C E[c_s, c_m] R_mᵀ   (a_m × b_m)
    let mid2 = e.view((tm.row, ts.row), (tm.p, ts.p)) * coeff * e.view((ts.col, tm.col), (ts.q, tm.q));
    let w2m = match (&tm.left, &tm.right) {
        (None, None) => mid2,
        (Some(l), None) => l.transpose() * mid2,
        (None, Some(r)) => mid2 * r.transpose(),
        (Some(l), Some(r)) => l.transpose() * mid2 * r.transpose(),
    };
    for j in 0..*len {
        let ej = &elems[j];
        let gj = offset + j;
        let mut acc = 0.0;
        for bj in 0..ej.n as usize {
            let (ga, de) = ej.e[bj];
            acc += w1 * w1m[(de as usize, ga as usize)] + w2 * w2m[(ga as usize, de as usize)];
        }
        h[(*index, gj)] += acc;
        h[(gj, *index)] += acc;
    }
}

fn schur_block(b: &CBlock, e: &DMatrix<f64>, h: &mut DMatrix<f64>) {
    for i in 0..b.terms.len() {
        for j in i..b.terms.len() {
            fill_pair(h, e, &b.terms[i], &b.terms[j], i == j);
        }
    }
}

fn schur_lp(lp: &CLp, w: &[f64], z: &[f64], h: &mut DMatrix<f64>) {
    for r in 0..lp.len() {
        let s = z[r] / w[r];
        let coeffs = &lp.coeffs[r];
        for (i, ci) in coeffs {
            for (j, cj) in coeffs {
                h[(*i, *j)] += s * ci * cj;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

pub(crate) fn solve_ipm(comp: &Compiled, opts: &IpmOptions) -> IpmOutcome {
    let m = comp.m;
    let nb = comp.blocks.len();
    let n_lp = comp.lp.len();
    let n_total: usize = comp.blocks.iter().map(|b| b.n).sum::<usize>() + n_lp;
    let mut log = Vec::new();

    let const_scale = comp
        .blocks
        .iter()
        .map(|b| b.constant.amax())
        .fold(1.0_f64, f64::max)
        .max(
            comp.lp.d0[..comp.lp.n_user]
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs())),
        );
    let c_scale = comp.c.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);

    // Initial point: x = 0, with the phase-I margin variable (if present)
    // set low enough that every block is strictly primal feasible.
    let mut x = vec![0.0; m];
    if let Some(t) = comp.t_index {
        let mut floor = f64::INFINITY;
        for b in &comp.blocks {
            let gersh = (0..b.n)
                .map(|i| {
                    b.constant[(i, i)]
                        - (0..b.n)
                            .filter(|j| *j != i)
                            .map(|j| b.constant[(i, j)].abs())
                            .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            floor = floor.min(gersh);
        }
        for (r, coeffs) in comp.lp.coeffs.iter().enumerate() {
            if coeffs.iter().any(|(i, _)| *i == t) {
                floor = floor.min(comp.lp.d0[r]);
            }
        }
        x[t] = floor.min(0.0) - 1.0;
    }

    // Initial slacks: phase-I starts exactly primal feasible, otherwise
    // scaled identities. Duals are balanced so every cone starts with a
    // per-dimension complementarity near one.
    let mut warm = false;
    if let Some(wx) = &opts.warm_x {
        if wx.len() == m && comp.t_index.is_none() {
            // Usable only if strictly inside every cone.
            let ok_blocks = comp.blocks.iter().all(|b| {
                let g = comp.assemble(b, wx);
                let mut s = g;
                symmetrize(&mut s);
                s.symmetric_eigenvalues().min() > 1e-10
            });
            let ok_lp = (0..comp.lp.len()).all(|r| {
                comp.lp.d0[r]
                    + comp.lp.coeffs[r].iter().map(|(i, c)| c * wx[*i]).sum::<f64>()
                    > 1e-12
            });
            if ok_blocks && ok_lp {
                x.copy_from_slice(wx);
                warm = true;
            }
        }
    }
    let mut w_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut z_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let init_scale = (1.0 + const_scale).min(1e4);
    for b in &comp.blocks {
        let w = if comp.t_index.is_some() || warm {
            comp.assemble(b, &x)
        } else {
            DMatrix::identity(b.n, b.n) * init_scale
        };
        let wscale = (w.trace() / b.n as f64).max(1e-8);
        z_blocks.push(DMatrix::identity(b.n, b.n) * (1.0 / wscale).clamp(1e-8, 1e8));
        w_blocks.push(w);
    }
    let mut w_lp = vec![0.0; n_lp];
    let mut z_lp = vec![0.0; n_lp];
    for r in 0..n_lp {
        let val = comp.lp.d0[r]
            + comp.lp.coeffs[r]
                .iter()
                .map(|(i, c)| c * x[*i])
                .sum::<f64>();
        w_lp[r] = if comp.t_index.is_some() || warm {
            val.max(1e-10)
        } else {
            val.max(init_scale)
        };
        z_lp[r] = (1.0 / w_lp[r]).clamp(1e-8, 1e8);
    }

    let mut best_mu = f64::INFINITY;
    let mut stall = 0usize;
    let mut prev_alpha = 1.0_f64;
    // Best near-feasible iterate seen, as a fallback when the final sprint
    // to full tolerance destabilizes.
    let mut best_point: Option<(f64, Vec<f64>, f64, f64, f64, f64, f64)> = None;

    for iter in 0..opts.max_iter {
        // Residuals.
        let rp_blocks: Vec<DMatrix<f64>> = comp
            .blocks
            .par_iter()
            .zip(&w_blocks)
            .map(|(b, w)| comp.assemble(b, &x) - w)
            .collect();
        let mut rp_lp = vec![0.0; n_lp];
        for r in 0..n_lp {
            rp_lp[r] = comp.lp.d0[r]
                + comp.lp.coeffs[r]
                    .iter()
                    .map(|(i, c)| c * x[*i])
                    .sum::<f64>()
                - w_lp[r];
        }
        let mut rd = vec![0.0; m];
        for (bi, b) in comp.blocks.iter().enumerate() {
            comp.scatter(b, &z_blocks[bi], -1.0, &mut rd);
        }
        for r in 0..n_lp {
            for (i, ci) in &comp.lp.coeffs[r] {
                rd[*i] -= ci * z_lp[r];
            }
        }
        for i in 0..m {
            rd[i] += comp.c[i];
        }

        let gap_inner: f64 = w_blocks
            .iter()
            .zip(&z_blocks)
            .map(|(w, z)| w.dot(z))
            .sum::<f64>()
            + w_lp.iter().zip(&z_lp).map(|(a, b)| a * b).sum::<f64>();
        let mu = gap_inner / n_total as f64;

        let pobj: f64 = comp.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let dobj: f64 = -comp
            .blocks
            .iter()
            .zip(&z_blocks)
            .map(|(b, z)| b.constant.dot(z))
            .sum::<f64>()
            - comp.lp.d0.iter().zip(&z_lp).map(|(a, b)| a * b).sum::<f64>();
        // Magnitude of the dual objective's summands; the weak-duality
        // bound below is only trusted up to cancellation at this scale.
        let dual_mag: f64 = comp
            .blocks
            .iter()
            .zip(&z_blocks)
            .map(|(b, z)| b.constant.dot(z).abs())
            .sum::<f64>()
            + comp
                .lp
                .d0
                .iter()
                .zip(&z_lp)
                .map(|(a, b)| (a * b).abs())
                .sum::<f64>();

        let x_scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rel_p = rp_blocks
            .iter()
            .map(|r| r.amax())
            .fold(0.0f64, f64::max)
            .max(rp_lp.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            / (1.0 + const_scale + x_scale);
        let rel_d = rd.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + c_scale);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));

        if iter % 10 == 0 || iter + 1 == opts.max_iter {
            log.push(format!(
                "it {iter}: mu={mu:.3e} rp={rel_p:.3e} rd={rel_d:.3e} gap={rel_gap:.3e} pobj={pobj:.6e}"
            ));
        }

        let score = rel_p.max(rel_d).max(rel_gap);
        if score.is_finite()
            && best_point
                .as_ref()
                .map_or(true, |(s, ..)| score < *s)
        {
            best_point = Some((score, x.clone(), pobj, dobj, rel_p, rel_d, rel_gap));
        }

        let finish = |term: IpmTermination, iterations: usize, log: Vec<String>| IpmOutcome {
            termination: term,
            x: x.clone(),
            objective: pobj,
            dual_objective: dobj,
            iterations,
            rel_primal: rel_p,
            rel_dual: rel_d,
            rel_gap,
            log,
        };
        // Fallback when the final sprint destabilizes: the best iterate at
        // a relaxed tolerance still counts as solved.
        let finish_best = |term: IpmTermination,
                           iterations: usize,
                           mut log: Vec<String>,
                           best: &Option<(f64, Vec<f64>, f64, f64, f64, f64, f64)>| {
            if let Some((s, bx, bp, bd, brp, brd, bg)) = best {
                if *s <= 1e-5 {
                    log.push(format!(
                        "returning best iterate (score {s:.3e}) after {term:?}"
                    ));
                    return IpmOutcome {
                        termination: IpmTermination::Optimal,
                        x: bx.clone(),
                        objective: *bp,
                        dual_objective: *bd,
                        iterations,
                        rel_primal: *brp,
                        rel_dual: *brd,
                        rel_gap: *bg,
                        log,
                    };
                }
            }
            log.push(format!("terminated: {term:?}"));
            IpmOutcome {
                termination: term,
                x: x.clone(),
                objective: pobj,
                dual_objective: dobj,
                iterations,
                rel_primal: rel_p,
                rel_dual: rel_d,
                rel_gap,
                log,
            }
        };

        if !mu.is_finite() || mu > 1e40 {
            return finish_best(IpmTermination::Failed, iter, log, &best_point);
        }
        if rel_p <= opts.tol_feas && rel_d <= opts.tol_feas && rel_gap <= opts.tol_gap {
            return finish(IpmTermination::Optimal, iter, log);
        }
        // Complementarity at numerical rock bottom: nothing more to gain.
        if mu <= 1e-16 * (1.0 + pobj.abs()) && rel_p <= 1e-8 {
            return finish_best(IpmTermination::Stalled, iter, log, &best_point);
        }
        // Phase-I sign decisions.
        if let Some(t) = comp.t_index {
            if let Some(thr) = opts.stop_at_margin {
                if x[t] >= thr && rel_p <= 1e-10 {
                    return finish(IpmTermination::MarginPositive, iter, log);
                }
            }
            if let Some(thr) = opts.stop_below_margin {
                // Weak duality: optimal -t* >= dobj, so t* <= -dobj, trusted
                // only beyond the cancellation noise of the dual sum.
                let noise = 1e-9 * (1.0 + dual_mag) + 1e4 * rel_d * (1.0 + c_scale);
                if rel_d <= 1e-10 && -dobj <= -(thr + noise) {
                    return finish(IpmTermination::MarginNegative, iter, log);
                }
            }
        }

        if mu < best_mu * 0.95 {
            best_mu = mu;
            stall = 0;
        } else {
            stall += 1;
            if stall > 50 {
                log.push("stalled: no centrality progress over 50 iterations".into());
                return finish_best(IpmTermination::Stalled, iter, log, &best_point);
            }
        }

        // NT scalings.
        let scalings: Vec<Option<Scaling>> = w_blocks
            .par_iter()
            .zip(&z_blocks)
            .map(|(w, z)| nt_scaling(w, z))
            .collect();
        if scalings.iter().any(|s| s.is_none()) {
            log.push("scaling failure: iterate left the cone".into());
            return finish_best(IpmTermination::Failed, iter, log, &best_point);
        }
        let scalings: Vec<Scaling> = scalings.into_iter().map(Option::unwrap).collect();

        // Schur complement.
        let mut h = comp
            .blocks
            .par_iter()
            .zip(&scalings)
            .fold(
                || DMatrix::<f64>::zeros(m, m),
                |mut acc, (b, s)| {
                    schur_block(b, &s.e, &mut acc);
                    acc
                },
            )
            .reduce(|| DMatrix::<f64>::zeros(m, m), |a, b| a + b);
        schur_lp(&comp.lp, &w_lp, &z_lp, &mut h);
        let hmax = h.diagonal().amax().max(1e-300);
        for i in 0..m {
            h[(i, i)] += 1e-13 * hmax;
        }
        let mut chol = None;
        let mut bump = 1e-12 * hmax;
        for _ in 0..8 {
            match h.clone().cholesky() {
                Some(c) => {
                    chol = Some(c);
                    break;
                }
                None => {
                    for i in 0..m {
                        h[(i, i)] += bump;
                    }
                    bump *= 100.0;
                }
            }
        }
        let Some(chol) = chol else {
            log.push("Schur complement factorization failed".into());
            return finish_best(IpmTermination::Failed, iter, log, &best_point);
        };
        let solve_h = |g: &DVector<f64>| -> DVector<f64> {
            let mut dx = chol.solve(g);
            let gnorm = g.amax().max(1e-300);
            for _ in 0..4 {
                let r = g - &h * &dx;
                if r.amax() <= 1e-13 * gnorm {
                    break;
                }
                dx += chol.solve(&r);
            }
            dx
        };

        // Right-hand side for a given per-block sandwich matrix S_b and LP
        // vector t_r: g_i = Σ ⟨F_i, S_b⟩ + Σ D_ri t_r − r_d,i.
        let build_g = |sands: &[DMatrix<f64>], t_lp: &[f64]| -> DVector<f64> {
            let mut g = vec![0.0; m];
            for (bi, b) in comp.blocks.iter().enumerate() {
                comp.scatter(b, &sands[bi], 1.0, &mut g);
            }
            for r in 0..n_lp {
                for (i, ci) in &comp.lp.coeffs[r] {
                    g[*i] += ci * t_lp[r];
                }
            }
            for i in 0..m {
                g[i] -= rd[i];
            }
            DVector::from_vec(g)
        };

        // Affine direction (σ = 0): S_b = −Z − E R_p E.
        let sands_aff: Vec<DMatrix<f64>> = comp
            .blocks
            .par_iter()
            .enumerate()
            .map(|(bi, _)| {
                let e = &scalings[bi].e;
                let mut s = -&z_blocks[bi] - e * &rp_blocks[bi] * e;
                symmetrize(&mut s);
                s
            })
            .collect();
        let t_aff: Vec<f64> = (0..n_lp)
            .map(|r| -z_lp[r] - z_lp[r] / w_lp[r] * rp_lp[r])
            .collect();
        let g_aff = build_g(&sands_aff, &t_aff);
        let dx_aff = solve_h(&g_aff);

        // ΔW = Σ Δx_i F_i + R_p per block, and the LP analogue.
        let forward = |dx: &DVector<f64>| -> (Vec<DMatrix<f64>>, Vec<f64>) {
            let dxs: Vec<f64> = dx.iter().cloned().collect();
            let dw: Vec<DMatrix<f64>> = comp
                .blocks
                .par_iter()
                .enumerate()
                .map(|(bi, b)| comp.assemble(b, &dxs) - &b.constant + &rp_blocks[bi])
                .collect();
            let mut dw_lp = rp_lp.clone();
            for r in 0..n_lp {
                for (i, ci) in &comp.lp.coeffs[r] {
                    dw_lp[r] += ci * dx[*i];
                }
            }
            (dw, dw_lp)
        };

        // ΔZ = S − E(ΔW − R_p)E: the sandwich already carries −E·R_p·E.
        let (dw_aff, dwlp_aff) = forward(&dx_aff);
        let dz_aff: Vec<DMatrix<f64>> = (0..nb)
            .into_par_iter()
            .map(|bi| {
                let e = &scalings[bi].e;
                let mut dz = &sands_aff[bi] - e * (&dw_aff[bi] - &rp_blocks[bi]) * e;
                symmetrize(&mut dz);
                dz
            })
            .collect();
        let dzlp_aff: Vec<f64> = (0..n_lp)
            .map(|r| t_aff[r] - z_lp[r] / w_lp[r] * (dwlp_aff[r] - rp_lp[r]))
            .collect();

        // Affine step lengths and the Mehrotra centering weight.
        let ap_aff = w_blocks
            .par_iter()
            .zip(&dw_aff)
            .map(|(w, d)| max_step(w, d, 1.0))
            .reduce(|| 1.0f64, f64::min)
            .min(max_step_lp(&w_lp, &dwlp_aff, 1.0));
        let ad_aff = z_blocks
            .par_iter()
            .zip(&dz_aff)
            .map(|(z, d)| max_step(z, d, 1.0))
            .reduce(|| 1.0f64, f64::min)
            .min(max_step_lp(&z_lp, &dzlp_aff, 1.0));
        let mut gap_aff = 0.0;
        for bi in 0..nb {
            let wn = &w_blocks[bi] + &dw_aff[bi] * ap_aff;
            let zn = &z_blocks[bi] + &dz_aff[bi] * ad_aff;
            gap_aff += wn.dot(&zn);
        }
        for r in 0..n_lp {
            gap_aff += (w_lp[r] + ap_aff * dwlp_aff[r]) * (z_lp[r] + ad_aff * dzlp_aff[r]);
        }
        let mu_aff = (gap_aff / n_total as f64).max(0.0);
        let corrector_on = ap_aff.min(ad_aff) > 1e-3;
        let mut sigma = (mu_aff / mu).powi(3).clamp(1e-6, 0.9);
        if rel_p > 1e3 * mu || rel_d > 1e3 * mu {
            sigma = sigma.max(0.1);
        }
        // Recenter after short steps; without this the iterates crawl along
        // the boundary on ill-conditioned instances.
        if prev_alpha < 0.1 {
            sigma = sigma.max(0.5);
        }
        if prev_alpha < 0.01 {
            sigma = sigma.max(0.9);
        }

        // Combined direction with the second-order correction
        // Y = 2·sym(ΔŴ ΔẐ) ./ (vᵢ + vⱼ) mapped back through R.
        let sands_comb: Vec<DMatrix<f64>> = (0..nb)
            .into_par_iter()
            .map(|bi| {
                let sc = &scalings[bi];
                let e = &sc.e;
                let mut s = &sc.winv * (sigma * mu) - &z_blocks[bi] - e * &rp_blocks[bi] * e;
                if corrector_on {
                    let dw_hat = &sc.rinv * &dw_aff[bi] * sc.rinv.transpose();
                    let dz_hat = sc.r.transpose() * &dz_aff[bi] * &sc.r;
                    let prod = &dw_hat * &dz_hat;
                    let n = prod.nrows();
                    let mut y = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            y[(i, j)] = (prod[(i, j)] + prod[(j, i)]) / (sc.v[i] + sc.v[j]);
                        }
                    }
                    s -= sc.rinv.transpose() * y * &sc.rinv;
                }
                symmetrize(&mut s);
                s
            })
            .collect();
        let t_comb: Vec<f64> = (0..n_lp)
            .map(|r| {
                let corr = if corrector_on {
                    dwlp_aff[r] * dzlp_aff[r] / w_lp[r]
                } else {
                    0.0
                };
                sigma * mu / w_lp[r] - z_lp[r] - z_lp[r] / w_lp[r] * rp_lp[r] - corr
            })
            .collect();
        let g_comb = build_g(&sands_comb, &t_comb);
        let dx = solve_h(&g_comb);
        let (dw, dw_lp) = forward(&dx);
        let dz: Vec<DMatrix<f64>> = (0..nb)
            .into_par_iter()
            .map(|bi| {
                let e = &scalings[bi].e;
                let mut m = &sands_comb[bi] - e * (&dw[bi] - &rp_blocks[bi]) * e;
                symmetrize(&mut m);
                m
            })
            .collect();
        let dz_lp: Vec<f64> = (0..n_lp)
            .map(|r| t_comb[r] - z_lp[r] / w_lp[r] * (dw_lp[r] - rp_lp[r]))
            .collect();

        let tau = 0.99;
        let ap = w_blocks
            .par_iter()
            .zip(&dw)
            .map(|(w, d)| max_step(w, d, tau))
            .reduce(|| 1.0f64, f64::min)
            .min(max_step_lp(&w_lp, &dw_lp, tau));
        let ad = z_blocks
            .par_iter()
            .zip(&dz)
            .map(|(z, d)| max_step(z, d, tau))
            .reduce(|| 1.0f64, f64::min)
            .min(max_step_lp(&z_lp, &dz_lp, tau));

        if ap < 1e-10 && ad < 1e-10 {
            if std::env::var("RNNSTAB_IPM_DEBUG").is_ok() {
                eprintln!("== step collapse iter {iter}: |dx|={:.3e} sigma={sigma:.3e} mu={mu:.3e}", dx.amax());
                eprintln!("H diag: {:?}", (0..m).map(|i| h[(i, i)]).collect::<Vec<_>>());
                eprintln!("dx: {:?}", dx.as_slice());
                eprintln!("g: {:?}", g_comb.as_slice());
            }
            log.push(format!("step collapse at iter {iter} (ap={ap:.1e}, ad={ad:.1e})"));
            return finish_best(IpmTermination::Stalled, iter, log, &best_point);
        }

        prev_alpha = ap.min(ad);
        for i in 0..m {
            x[i] += ap * dx[i];
        }
        for bi in 0..nb {
            w_blocks[bi] += &dw[bi] * ap;
            z_blocks[bi] += &dz[bi] * ad;
        }
        for r in 0..n_lp {
            w_lp[r] += ap * dw_lp[r];
            z_lp[r] += ad * dz_lp[r];
        }
    }

    let pobj: f64 = comp.c.iter().zip(&x).map(|(a, b)| a * b).sum();
    log.push("maximum iterations reached".into());
    if let Some((s, bx, bp, bd, brp, brd, bg)) = &best_point {
        if *s <= 1e-5 {
            log.push(format!("returning best iterate (score {s:.3e})"));
            return IpmOutcome {
                termination: IpmTermination::Optimal,
                x: bx.clone(),
                objective: *bp,
                dual_objective: *bd,
                iterations: opts.max_iter,
                rel_primal: *brp,
                rel_dual: *brd,
                rel_gap: *bg,
                log,
            };
        }
    }
    IpmOutcome {
        termination: IpmTermination::MaxIterations,
        x,
        objective: pobj,
        dual_objective: f64::NAN,
        iterations: opts.max_iter,
        rel_primal: f64::NAN,
        rel_dual: f64::NAN,
        rel_gap: f64::NAN,
        log,
    }
}


#[cfg(test)]
mod kernel_isolation {
    use super::*;
    use crate::sdp::problem::{compile, BlockSense, CompileOptions, LmiBlock, SdpProblem};
    use super::kernel_tests_support::*;

    #[test]
    fn isolate_fill_variants() {
        // Each variant builds a block with one or two terms; all must match
        // the brute-force Schur complement.
        let variants: Vec<(&str, Box<dyn Fn() -> SdpProblem>)> = vec![
            ("sym_diag_placement", Box::new(|| {
                let mut p = SdpProblem::new();
                let s = p.add_symmetric("S", 2);
                let mut b = LmiBlock::new("b", &[2], BlockSense::Psd);
                b.add_term(0, 0, None, s, None);
                p.add_block(b).unwrap();
                p
            })),
            ("sym_offdiag", Box::new(|| {
                let mut p = SdpProblem::new();
                let s = p.add_symmetric("S", 2);
                let mut b = LmiBlock::new("b", &[2, 2], BlockSense::Psd);
                b.add_term(1, 0, Some(rand_matrix(3, 2, 2)), s, None);
                p.add_block(b).unwrap();
                p
            })),
            ("sym_offdiag_rightfac", Box::new(|| {
                let mut p = SdpProblem::new();
                let s = p.add_symmetric("S", 2);
                let mut b = LmiBlock::new("b", &[3, 2], BlockSense::Psd);
                b.add_term(0, 1, Some(rand_matrix(3, 3, 2)), s, Some(rand_matrix(4, 2, 2)));
                p.add_block(b).unwrap();
                p
            })),
            ("diag_congr", Box::new(|| {
                let mut p = SdpProblem::new();
                let u = p.add_diagonal("U", 2);
                let mut b = LmiBlock::new("b", &[2], BlockSense::Psd);
                b.add_term(0, 0, Some(rand_matrix(5, 2, 2)), u, Some(rand_matrix(5, 2, 2).transpose()));
                p.add_block(b).unwrap();
                p
            })),
            ("rect_plain", Box::new(|| {
                let mut p = SdpProblem::new();
                let l = p.add_rectangular("L", 2, 3);
                let mut b = LmiBlock::new("b", &[3, 2], BlockSense::Psd);
                b.add_term(1, 0, None, l, None);
                p.add_block(b).unwrap();
                p
            })),
            ("rect_transposed", Box::new(|| {
                let mut p = SdpProblem::new();
                let l = p.add_rectangular("L", 2, 3);
                let mut b = LmiBlock::new("b", &[3, 2], BlockSense::Psd);
                b.add_term_transposed(0, 1, None, l, Some(rand_matrix(6, 2, 2)));
                p.add_block(b).unwrap();
                p
            })),
            ("scalar_diag", Box::new(|| {
                let mut p = SdpProblem::new();
                let g = p.add_scalar("g");
                let mut b = LmiBlock::new("b", &[3], BlockSense::Psd);
                b.add_scalar_term(0, 0, g, rand_spd(8, 3));
                p.add_block(b).unwrap();
                p
            })),
            ("scalar_offdiag", Box::new(|| {
                let mut p = SdpProblem::new();
                let g = p.add_scalar("g");
                let mut b = LmiBlock::new("b", &[2, 3], BlockSense::Psd);
                b.add_scalar_term(0, 1, g, rand_matrix(9, 2, 3));
                p.add_block(b).unwrap();
                p
            })),
            ("sym_pair_diag_offdiag", Box::new(|| {
                let mut p = SdpProblem::new();
                let s = p.add_symmetric("S", 2);
                let mut b = LmiBlock::new("b", &[2, 2], BlockSense::Psd);
                b.add_term(0, 0, None, s, None);
                b.add_term(1, 0, Some(rand_matrix(3, 2, 2)), s, None);
                p.add_block(b).unwrap();
                p
            })),
            ("scalar_x_sym", Box::new(|| {
                let mut p = SdpProblem::new();
                let s = p.add_symmetric("S", 2);
                let g = p.add_scalar("g");
                let mut b = LmiBlock::new("b", &[2], BlockSense::Psd);
                b.add_term(0, 0, None, s, None);
                b.add_scalar_term(0, 0, g, DMatrix::identity(2, 2) * -1.0);
                p.add_block(b).unwrap();
                p
            })),
        ];
        let mut failures = Vec::new();
        for (name, build) in &variants {
            let p = build();
            let comp = compile(&p, None, &CompileOptions { default_bound: 1e6, phase1: None }).unwrap();
            let fs = explicit_constraint_mats(&comp);
            let mut h = DMatrix::zeros(comp.m, comp.m);
            let es: Vec<DMatrix<f64>> = comp.blocks.iter().enumerate()
                .map(|(bi, b)| rand_spd(100 + bi as u64, b.n)).collect();
            for (bi, b) in comp.blocks.iter().enumerate() {
                schur_block(b, &es[bi], &mut h);
            }
            let mut hb = DMatrix::zeros(comp.m, comp.m);
            for (bi, _) in comp.blocks.iter().enumerate() {
                let e = &es[bi];
                for i in 0..comp.m {
                    for j in 0..comp.m {
                        hb[(i, j)] += (&fs[bi][i] * e * &fs[bi][j] * e).trace();
                    }
                }
            }
            let err = (&h - &hb).amax() / (1.0 + hb.amax());
            if err > 1e-9 {
                failures.push(format!("{name}: rel err {err:.2e}"));
            }
        }
        assert!(failures.is_empty(), "failing variants: {failures:?}");
    }
}
