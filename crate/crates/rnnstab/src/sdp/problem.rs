//! LMI problem representation and its compiled form.
//!
//! A problem is a set of structured matrix variables plus blocks
//!
//! ```text
//! M_b(x) = C_b + Σ_t  emb(L_t · op(X_t) · R_t)  (+ transpose when off-diagonal)
//! ```
//!
//! required positive semidefinite (strict blocks are shifted by ε·I at
//! compile time). Terms placed on the block diagonal must be symmetric by
//! themselves; off-diagonal terms are mirrored automatically, which is where
//! the factors 2U, 2R, 2(H+I)U in the stability programs come from.
//!
//! Compilation resolves every matrix variable into its scalar components
//! (lower triangle for symmetric, diagonal entries for diagonal variables)
//! and precomputes the elementary-matrix support of each component, from
//! which the solver builds residuals, Newton right-hand sides, and the
//! Schur complement without ever materializing the per-component constraint
//! matrices.

use nalgebra::DMatrix;

use super::SdpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStructure {
    Symmetric(usize),
    Diagonal(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl VarStructure {
    pub fn scalar_len(&self) -> usize {
        match self {
            VarStructure::Symmetric(n) => n * (n + 1) / 2,
            VarStructure::Diagonal(n) => *n,
            VarStructure::Rectangular(r, c) => r * c,
            VarStructure::Scalar => 1,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            VarStructure::Symmetric(n) | VarStructure::Diagonal(n) => (*n, *n),
            VarStructure::Rectangular(r, c) => (*r, *c),
            VarStructure::Scalar => (1, 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixVariable {
    pub name: String,
    pub structure: VarStructure,
    /// Box half-width |x_i| ≤ bound for every scalar component; `None`
    /// falls back to the solver default.
    pub bound: Option<f64>,
}

/// Whether a block is required ≻ 0 (shifted to ⪰ εI) or only ⪰ 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSense {
    StrictPd,
    Psd,
}

#[derive(Debug, Clone)]
pub(crate) enum TermOp {
    /// left · op(X) · right placed at the given block cell.
    Matrix {
        var: VarId,
        left: Option<DMatrix<f64>>,
        right: Option<DMatrix<f64>>,
        transposed: bool,
    },
    /// x · coeff for a scalar variable.
    Scalar { var: VarId, coeff: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub block_row: usize,
    pub block_col: usize,
    pub op: TermOp,
}

/// One LMI block assembled from sub-blocks of the given sizes.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub(crate) sizes: Vec<usize>,
    pub(crate) constant: DMatrix<f64>,
    pub(crate) terms: Vec<Term>,
    pub sense: BlockSense,
}

impl LmiBlock {
    pub fn new(name: &str, sizes: &[usize], sense: BlockSense) -> Self {
        let n: usize = sizes.iter().sum();
        LmiBlock {
            name: name.to_string(),
            sizes: sizes.to_vec(),
            constant: DMatrix::zeros(n, n),
            terms: Vec::new(),
            sense,
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    fn offset(&self, b: usize) -> usize {
        self.sizes[..b].iter().sum()
    }

    /// Adds a constant sub-matrix at block cell (bi, bj); the transpose is
    /// placed at (bj, bi) when off-diagonal. Diagonal constants must be
    /// symmetric.
    pub fn add_const(&mut self, bi: usize, bj: usize, m: &DMatrix<f64>) {
        let (r, c) = (self.offset(bi), self.offset(bj));
        self.constant
            .view_mut((r, c), (m.nrows(), m.ncols()))
            .add_assign_matrix(m);
        if bi != bj {
            let mt = m.transpose();
            self.constant
                .view_mut((c, r), (mt.nrows(), mt.ncols()))
                .add_assign_matrix(&mt);
        }
    }

    /// Places left·X·right at (bi, bj); mirrored when bi ≠ bj. `None` sides
    /// are identities.
    pub fn add_term(
        &mut self,
        bi: usize,
        bj: usize,
        left: Option<DMatrix<f64>>,
        var: VarId,
        right: Option<DMatrix<f64>>,
    ) {
        self.terms.push(Term {
            block_row: bi,
            block_col: bj,
            op: TermOp::Matrix {
                var,
                left,
                right,
                transposed: false,
            },
        });
    }

    /// Places left·Xᵀ·right at (bi, bj); mirrored when bi ≠ bj.
    pub fn add_term_transposed(
        &mut self,
        bi: usize,
        bj: usize,
        left: Option<DMatrix<f64>>,
        var: VarId,
        right: Option<DMatrix<f64>>,
    ) {
        self.terms.push(Term {
            block_row: bi,
            block_col: bj,
            op: TermOp::Matrix {
                var,
                left,
                right,
                transposed: true,
            },
        });
    }

    /// Places x·coeff at (bi, bj) for a scalar variable.
    pub fn add_scalar_term(&mut self, bi: usize, bj: usize, var: VarId, coeff: DMatrix<f64>) {
        self.terms.push(Term {
            block_row: bi,
            block_col: bj,
            op: TermOp::Scalar { var, coeff },
        });
    }
}

trait AddAssignView {
    fn add_assign_matrix(&mut self, m: &DMatrix<f64>);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign_matrix(&mut self, m: &DMatrix<f64>) {
        *self += m;
    }
}

/// Linear inequality row `constant + Σ coeff·x ≥ 0` (strict rows are
/// ε-shifted like strict blocks).
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub name: String,
    pub constant: f64,
    /// (var, entry row, entry col, coefficient)
    pub coeffs: Vec<(VarId, usize, usize, f64)>,
    pub strict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub(crate) vars: Vec<MatrixVariable>,
    pub(crate) blocks: Vec<LmiBlock>,
    pub(crate) rows: Vec<LinearRow>,
}

/// Linear objective over the scalar components; minimized by the solver.
#[derive(Debug, Clone)]
pub struct Objective {
    pub c: Vec<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_var(&mut self, name: &str, structure: VarStructure) -> VarId {
        self.vars.push(MatrixVariable {
            name: name.to_string(),
            structure,
            bound: None,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.add_var(name, VarStructure::Symmetric(n))
    }
    pub fn add_diagonal(&mut self, name: &str, n: usize) -> VarId {
        self.add_var(name, VarStructure::Diagonal(n))
    }
    pub fn add_rectangular(&mut self, name: &str, r: usize, c: usize) -> VarId {
        self.add_var(name, VarStructure::Rectangular(r, c))
    }
    pub fn add_scalar(&mut self, name: &str) -> VarId {
        self.add_var(name, VarStructure::Scalar)
    }

    pub fn set_bound(&mut self, var: VarId, bound: f64) {
        self.vars[var.0].bound = Some(bound);
    }

    pub fn var_offset(&self, var: VarId) -> usize {
        self.vars[..var.0]
            .iter()
            .map(|v| v.structure.scalar_len())
            .sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.vars.iter().map(|v| v.structure.scalar_len()).sum()
    }

    /// Global scalar index of entry (i, j) of a variable. Symmetric
    /// variables use the lower triangle (i ≥ j).
    pub fn entry_index(&self, var: VarId, i: usize, j: usize) -> usize {
        let off = self.var_offset(var);
        match self.vars[var.0].structure {
            VarStructure::Symmetric(n) => {
                assert!(i >= j && i < n, "symmetric entry ({i},{j}) out of range");
                off + j * n - j * (j + 1) / 2 + i
            }
            VarStructure::Diagonal(n) => {
                assert!(i == j && i < n, "diagonal entry ({i},{j}) out of range");
                off + i
            }
            VarStructure::Rectangular(r, c) => {
                assert!(i < r && j < c);
                off + j * r + i
            }
            VarStructure::Scalar => {
                assert!(i == 0 && j == 0);
                off
            }
        }
    }

    pub fn new_objective(&self) -> Objective {
        Objective {
            c: vec![0.0; self.total_scalars()],
        }
    }

    /// Adds a block after verifying that the assembled matrix is symmetric
    /// on a few random assignments.
    pub fn add_block(&mut self, block: LmiBlock) -> Result<(), SdpError> {
        let total: usize = block.sizes.iter().sum();
        if total == 0 {
            return Err(SdpError::BadProblem(format!(
                "block `{}` has zero size",
                block.name
            )));
        }
        let sym_err = |m: &DMatrix<f64>| -> f64 {
            let mut worst = 0.0_f64;
            for i in 0..m.nrows() {
                for j in 0..i {
                    worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
                }
            }
            worst
        };
        self.blocks.push(block);
        let idx = self.blocks.len() - 1;
        let mut rng_state = 0x9e37_79b9_7f4a_7c15_u64;
        for _ in 0..3 {
            let x: Vec<f64> = (0..self.total_scalars())
                .map(|_| {
                    rng_state = rng_state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
                })
                .collect();
            let m = self.assemble_block(idx, &x);
            let scale = m.amax().max(1.0);
            if sym_err(&m) > 1e-9 * scale {
                let name = self.blocks[idx].name.clone();
                self.blocks.pop();
                return Err(SdpError::BadProblem(format!(
                    "block `{name}` is not symmetric under a random assignment"
                )));
            }
        }
        Ok(())
    }

    pub fn add_linear_row(&mut self, row: LinearRow) {
        self.rows.push(row);
    }

    /// Materializes variable `var` from the scalar vector.
    pub fn materialize(&self, var: VarId, x: &[f64]) -> DMatrix<f64> {
        let off = self.var_offset(var);
        match self.vars[var.0].structure {
            VarStructure::Symmetric(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = off;
                for j in 0..n {
                    for i in j..n {
                        m[(i, j)] = x[k];
                        m[(j, i)] = x[k];
                        k += 1;
                    }
                }
                m
            }
            VarStructure::Diagonal(n) => {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = x[off + i];
                }
                m
            }
            VarStructure::Rectangular(r, c) => {
                DMatrix::from_column_slice(r, c, &x[off..off + r * c])
            }
            VarStructure::Scalar => DMatrix::from_element(1, 1, x[off]),
        }
    }

    /// Assembles block `idx` at assignment `x` (no ε shift).
    pub fn assemble_block(&self, idx: usize, x: &[f64]) -> DMatrix<f64> {
        let block = &self.blocks[idx];
        let mut m = block.constant.clone();
        for term in &block.terms {
            let (r, c) = (block.offset(term.block_row), block.offset(term.block_col));
            let patch = match &term.op {
                TermOp::Matrix {
                    var,
                    left,
                    right,
                    transposed,
                } => {
                    let xv = self.materialize(*var, x);
                    let xv = if *transposed { xv.transpose() } else { xv };
                    let lx = match left {
                        Some(l) => l * &xv,
                        None => xv,
                    };
                    match right {
                        Some(rm) => lx * rm,
                        None => lx,
                    }
                }
                TermOp::Scalar { var, coeff } => {
                    let v = x[self.var_offset(*var)];
                    coeff * v
                }
            };
            let mut dst = m.view_mut((r, c), (patch.nrows(), patch.ncols()));
            dst += &patch;
            if term.block_row != term.block_col {
                let pt = patch.transpose();
                let mut dst = m.view_mut((c, r), (pt.nrows(), pt.ncols()));
                dst += &pt;
            }
        }
        m
    }

    /// Writes the problem in a sparse-triplet text format:
    /// `var <name> <structure> <len>` lines, then per block
    /// `block <name> <size> <sense>` followed by `c <i> <j> <v>` constant
    /// triplets and `a <scalar-index> <i> <j> <v>` triplets of the
    /// per-component constraint matrices, then `row <name> <const> ...`
    /// linear rows.
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for v in &self.vars {
            let _ = writeln!(
                out,
                "var {} {:?} {}",
                v.name,
                v.structure,
                v.structure.scalar_len()
            );
        }
        let m = self.total_scalars();
        for (bi, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "block {} {} {:?}", b.name, b.size(), b.sense);
            let zero = vec![0.0; m];
            let base = self.assemble_block(bi, &zero);
            for i in 0..base.nrows() {
                for j in 0..=i {
                    if base[(i, j)] != 0.0 {
                        let _ = writeln!(out, "c {i} {j} {}", base[(i, j)]);
                    }
                }
            }
            for k in 0..m {
                let mut e = vec![0.0; m];
                e[k] = 1.0;
                let fk = self.assemble_block(bi, &e) - &base;
                for i in 0..fk.nrows() {
                    for j in 0..=i {
                        if fk[(i, j)].abs() > 0.0 {
                            let _ = writeln!(out, "a {k} {i} {j} {}", fk[(i, j)]);
                        }
                    }
                }
            }
        }
        for r in &self.rows {
            let _ = write!(out, "row {} {} ", r.name, r.constant);
            for (v, i, j, c) in &r.coeffs {
                let _ = write!(out, "({} {i} {j} {c}) ", self.vars[v.0].name);
            }
            let _ = writeln!(out);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Compiled form
// ---------------------------------------------------------------------------

/// Elementary-matrix support of one scalar component: one entry for
/// diagonal/rectangular components, two mirrored entries for off-diagonal
/// symmetric components.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Elems {
    pub n: u8,
    pub e: [(u32, u32); 2],
}

#[derive(Debug, Clone)]
pub(crate) enum CTermKind {
    Mat {
        /// Global scalar range of the variable.
        offset: usize,
        len: usize,
        /// Per-component support, already oriented for op(X).
        elems: std::sync::Arc<Vec<Elems>>,
    },
    Sca {
        index: usize,
        coeff: DMatrix<f64>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct CTerm {
    pub row: usize,
    pub col: usize,
    /// Patch height and width.
    pub p: usize,
    pub q: usize,
    /// op(X) shape for matrix terms.
    pub a: usize,
    pub b: usize,
    pub left: Option<DMatrix<f64>>,
    pub right: Option<DMatrix<f64>>,
    pub mirror: bool,
    pub kind: CTermKind,
}

#[derive(Debug, Clone)]
pub(crate) struct CBlock {
    pub name: String,
    pub n: usize,
    /// Constant including the −ε·I strict shift.
    pub constant: DMatrix<f64>,
    pub eps: f64,
    pub terms: Vec<CTerm>,
}

/// Linear rows in the form w = d0 + D x ≥ 0 with D in per-row sparse form.
#[derive(Debug, Clone, Default)]
pub(crate) struct CLp {
    pub d0: Vec<f64>,
    pub coeffs: Vec<Vec<(usize, f64)>>,
    pub names: Vec<String>,
    /// Rows `0..n_user` come from the problem; the rest are internal
    /// (variable boxes, phase-I caps) and are excluded from problem-scale
    /// estimates.
    pub n_user: usize,
}

impl CLp {
    pub fn len(&self) -> usize {
        self.d0.len()
    }
    pub fn push(&mut self, name: String, d0: f64, coeffs: Vec<(usize, f64)>) {
        self.names.push(name);
        self.d0.push(d0);
        self.coeffs.push(coeffs);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub m: usize,
    pub c: Vec<f64>,
    pub blocks: Vec<CBlock>,
    pub lp: CLp,
    /// Index of the phase-I margin variable, if present.
    pub t_index: Option<usize>,
    /// Map from compiled block position back to the problem block index.
    pub block_src: Vec<usize>,
}

/// Strict-inequality shift: ε = 1e−7 · (1 + largest constant magnitude).
pub(crate) fn strict_eps(constant_max: f64) -> f64 {
    1e-7 * (1.0 + constant_max)
}

pub(crate) fn sym_elems(n: usize) -> Vec<Elems> {
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            if i == j {
                v.push(Elems {
                    n: 1,
                    e: [(i as u32, j as u32), (0, 0)],
                });
            } else {
                v.push(Elems {
                    n: 2,
                    e: [(i as u32, j as u32), (j as u32, i as u32)],
                });
            }
        }
    }
    v
}

pub(crate) fn diag_elems(n: usize) -> Vec<Elems> {
    (0..n)
        .map(|i| Elems {
            n: 1,
            e: [(i as u32, i as u32), (0, 0)],
        })
        .collect()
}

pub(crate) fn rect_elems(r: usize, c: usize, transposed: bool) -> Vec<Elems> {
    let mut v = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            let (a, b) = if transposed { (j, i) } else { (i, j) };
            v.push(Elems {
                n: 1,
                e: [(a as u32, b as u32), (0, 0)],
            });
        }
    }
    v
}

pub(crate) struct CompileOptions {
    /// Default box half-width for variables without an explicit bound.
    pub default_bound: f64,
    /// Phase-I margin variable and its cap; `None` compiles the problem
    /// as-is with the given objective.
    pub phase1: Option<f64>,
}

pub(crate) fn compile(
    problem: &SdpProblem,
    objective: Option<&Objective>,
    opts: &CompileOptions,
) -> Result<Compiled, SdpError> {
    let base_m = problem.total_scalars();
    let m = base_m + usize::from(opts.phase1.is_some());
    let t_index = opts.phase1.map(|_| base_m);

    let mut c = vec![0.0; m];
    if let Some(obj) = objective {
        if obj.c.len() != base_m {
            return Err(SdpError::BadProblem(
                "objective length does not match problem".into(),
            ));
        }
        c[..base_m].copy_from_slice(&obj.c);
    }
    if let Some(t) = t_index {
        c = vec![0.0; m];
        c[t] = -1.0; // maximize the margin
    }

    // Per-variable oriented elems tables, shared across terms.
    use std::collections::HashMap;
    let mut elem_cache: HashMap<(usize, bool), std::sync::Arc<Vec<Elems>>> = HashMap::new();
    let mut get_elems = |vid: usize, structure: VarStructure, transposed: bool| {
        elem_cache
            .entry((vid, transposed))
            .or_insert_with(|| {
                std::sync::Arc::new(match structure {
                    VarStructure::Symmetric(n) => sym_elems(n),
                    VarStructure::Diagonal(n) => diag_elems(n),
                    VarStructure::Rectangular(r, cc) => rect_elems(r, cc, transposed),
                    VarStructure::Scalar => rect_elems(1, 1, false),
                })
            })
            .clone()
    };

    let mut blocks = Vec::new();
    let mut block_src = Vec::new();
    let mut lp = CLp::default();

    for (bi, b) in problem.blocks.iter().enumerate() {
        if b.size() == 1 {
            // Compile 1x1 blocks as linear rows.
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            let zero = vec![0.0; base_m];
            let base_val = problem.assemble_block(bi, &zero)[(0, 0)];
            // Touched variables only.
            let mut touched: Vec<VarId> = b
                .terms
                .iter()
                .map(|t| match &t.op {
                    TermOp::Matrix { var, .. } => *var,
                    TermOp::Scalar { var, .. } => *var,
                })
                .collect();
            touched.sort_by_key(|v| v.0);
            touched.dedup();
            for v in touched {
                let off = problem.var_offset(v);
                let len = problem.vars[v.0].structure.scalar_len();
                for k in 0..len {
                    let mut e = vec![0.0; base_m];
                    e[off + k] = 1.0;
                    let val = problem.assemble_block(bi, &e)[(0, 0)] - base_val;
                    if val != 0.0 {
                        coeffs.push((off + k, val));
                    }
                }
            }
            let eps = if b.sense == BlockSense::StrictPd {
                strict_eps(base_val.abs())
            } else {
                0.0
            };
            if let Some(t) = t_index {
                coeffs.push((t, -1.0));
            }
            lp.push(b.name.clone(), base_val - eps, coeffs);
            block_src.push(bi);
            continue;
        }

        let eps = if b.sense == BlockSense::StrictPd {
            strict_eps(b.constant.amax())
        } else {
            0.0
        };
        let n = b.size();
        let mut constant = b.constant.clone();
        for i in 0..n {
            constant[(i, i)] -= eps;
        }
        let mut terms = Vec::new();
        for t in &b.terms {
            let (r, cc) = (b.offset(t.block_row), b.offset(t.block_col));
            let mirror = t.block_row != t.block_col;
            match &t.op {
                TermOp::Matrix {
                    var,
                    left,
                    right,
                    transposed,
                } => {
                    let structure = problem.vars[var.0].structure;
                    let (vr, vc) = structure.shape();
                    let (a, bb) = if *transposed { (vc, vr) } else { (vr, vc) };
                    let p = left.as_ref().map_or(a, |l| l.nrows());
                    let q = right.as_ref().map_or(bb, |rm| rm.ncols());
                    if let Some(l) = left {
                        if l.ncols() != a {
                            return Err(SdpError::BadProblem(format!(
                                "block `{}`: left factor has {} cols, op(X) has {} rows",
                                b.name,
                                l.ncols(),
                                a
                            )));
                        }
                    }
                    if let Some(rm) = right {
                        if rm.nrows() != bb {
                            return Err(SdpError::BadProblem(format!(
                                "block `{}`: right factor has {} rows, op(X) has {} cols",
                                b.name,
                                rm.nrows(),
                                bb
                            )));
                        }
                    }
                    let transposed_sym = *transposed
                        && !matches!(structure, VarStructure::Rectangular(_, _));
                    terms.push(CTerm {
                        row: r,
                        col: cc,
                        p,
                        q,
                        a,
                        b: bb,
                        left: left.clone(),
                        right: right.clone(),
                        mirror,
                        kind: CTermKind::Mat {
                            offset: problem.var_offset(*var),
                            len: structure.scalar_len(),
                            elems: get_elems(var.0, structure, *transposed && !transposed_sym),
                        },
                    });
                }
                TermOp::Scalar { var, coeff } => {
                    terms.push(CTerm {
                        row: r,
                        col: cc,
                        p: coeff.nrows(),
                        q: coeff.ncols(),
                        a: 1,
                        b: 1,
                        left: None,
                        right: None,
                        mirror,
                        kind: CTermKind::Sca {
                            index: problem.var_offset(*var),
                            coeff: coeff.clone(),
                        },
                    });
                }
            }
        }
        if t_index.is_some() {
            let t = t_index.unwrap();
            terms.push(CTerm {
                row: 0,
                col: 0,
                p: n,
                q: n,
                a: 1,
                b: 1,
                left: None,
                right: None,
                mirror: false,
                kind: CTermKind::Sca {
                    index: t,
                    coeff: -DMatrix::identity(n, n),
                },
            });
        }
        blocks.push(CBlock {
            name: b.name.clone(),
            n,
            constant,
            eps,
            terms,
        });
        block_src.push(bi);
    }

    // User linear rows.
    for r in &problem.rows {
        let eps = if r.strict {
            strict_eps(r.constant.abs())
        } else {
            0.0
        };
        let mut coeffs: Vec<(usize, f64)> = r
            .coeffs
            .iter()
            .map(|(v, i, j, w)| (problem.entry_index(*v, *i, *j), *w))
            .collect();
        if let Some(t) = t_index {
            coeffs.push((t, -1.0));
        }
        lp.push(r.name.clone(), r.constant - eps, coeffs);
    }

    lp.n_user = lp.len();
    // Box bounds on every scalar component; keeps the Schur complement
    // strictly positive definite and the feasible set bounded.
    for (vi, v) in problem.vars.iter().enumerate() {
        let bound = v.bound.unwrap_or(opts.default_bound);
        let off = problem.var_offset(VarId(vi));
        for k in 0..v.structure.scalar_len() {
            lp.push(
                format!("box+{}", v.name),
                bound,
                vec![(off + k, -1.0)],
            );
            lp.push(format!("box-{}", v.name), bound, vec![(off + k, 1.0)]);
        }
    }
    // Phase-I cap t <= t_cap (boxes above do not cover t).
    if let Some(cap) = opts.phase1 {
        let t = t_index.unwrap();
        lp.push("phase1-cap".into(), cap, vec![(t, -1.0)]);
        lp.push("phase1-floor".into(), 1e6 + cap, vec![(t, 1.0)]);
    }

    Ok(Compiled {
        m,
        c,
        blocks,
        lp,
        t_index,
        block_src,
    })
}

impl Compiled {
    /// M_b(x) for compiled block `b` (the strict shift is inside the
    /// constant).
    pub fn assemble(&self, b: &CBlock, x: &[f64]) -> DMatrix<f64> {
        let mut m = b.constant.clone();
        for t in &b.terms {
            self.apply_term(t, x, &mut m);
        }
        m
    }

    fn apply_term(&self, t: &CTerm, x: &[f64], out: &mut DMatrix<f64>) {
        let patch: DMatrix<f64> = match &t.kind {
            CTermKind::Mat { offset, len, elems } => {
                let mut xm = DMatrix::zeros(t.a, t.b);
                for k in 0..*len {
                    let v = x[offset + k];
                    let el = &elems[k];
                    for idx in 0..el.n as usize {
                        let (r, c) = el.e[idx];
                        xm[(r as usize, c as usize)] += v;
                    }
                }
                let lx = match &t.left {
                    Some(l) => l * xm,
                    None => xm,
                };
                match &t.right {
                    Some(r) => lx * r,
                    None => lx,
                }
            }
            CTermKind::Sca { index, coeff } => coeff * x[*index],
        };
        let mut dst = out.view_mut((t.row, t.col), (t.p, t.q));
        dst += &patch;
        if t.mirror {
            let pt = patch.transpose();
            let mut dst = out.view_mut((t.col, t.row), (t.q, t.p));
            dst += &pt;
        }
    }

    /// g[i] += w · ⟨F_i, T⟩ for a symmetric T, over all components of all
    /// terms of block `b`.
    pub fn scatter(&self, b: &CBlock, tmat: &DMatrix<f64>, w: f64, g: &mut [f64]) {
        for t in &b.terms {
            let that = tmat.view((t.row, t.col), (t.p, t.q));
            let factor = if t.mirror { 2.0 } else { 1.0 } * w;
            match &t.kind {
                CTermKind::Mat { offset, len, elems } => {
                    // V = Lᵀ T̂ Rᵀ (a × b)
                    let lt_t = match &t.left {
                        Some(l) => l.transpose() * that,
                        None => that.into_owned(),
                    };
                    let v = match &t.right {
                        Some(r) => lt_t * r.transpose(),
                        None => lt_t,
                    };
                    for k in 0..*len {
                        let el = &elems[k];
                        let mut acc = 0.0;
                        for idx in 0..el.n as usize {
                            let (r, c) = el.e[idx];
                            acc += v[(r as usize, c as usize)];
                        }
                        g[offset + k] += factor * acc;
                    }
                }
                CTermKind::Sca { index, coeff } => {
                    let mut acc = 0.0;
                    for i in 0..t.p {
                        for j in 0..t.q {
                            acc += coeff[(i, j)] * that[(i, j)];
                        }
                    }
                    g[*index] += factor * acc;
                }
            }
        }
    }
}
