//! Plant and closed-loop models.
//!
//! The plant is a recurrent network in the form
//!
//! ```text
//! x⁺ = A∘ x + Bᵤ u + Bσ σ(C∘ x + Dᵤ u)
//! ```
//!
//! and under state feedback u = Kx the loop becomes
//!
//! ```text
//! x⁺ = A x + B q(y),   y = C x
//! C = C∘ + Dᵤ K,   A = A∘ + Bᵤ K + Bσ C,   B = −Bσ
//! ```
//!
//! with q(y) = y − σ(y). The design matrices F = A∘ + Bσ C∘ and
//! G = Bᵤ + Bσ Dᵤ give the linearized loop x⁺ = (F + GK)x + d used by the
//! H₂ synthesis. An echo-state network with an output integrator maps onto
//! the same form with A∘ carrying the integrator row; its A∘ + BᵤK has a
//! unit eigenvalue for every K, which is what rules out the global
//! stability certificate for such loops.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigmoid::{SigmoidError, SigmoidKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("model file error: {0}")]
    ParseError(String),
    #[error("matrix entries must be finite ({0})")]
    NonFinite(String),
    #[error("eigenvalue computation failed")]
    EigenFailure,
    #[error("echo-state bound violated: spectral radius {rho} >= {bound}")]
    EchoStateViolation { rho: f64, bound: f64 },
    #[error(transparent)]
    Sigmoid(#[from] SigmoidError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Recurrent network plant, Eq.-(1)-style.
#[derive(Debug, Clone)]
pub struct RnnModel {
    pub a0: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bsigma: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub kind: SigmoidKind,
}

impl RnnModel {
    pub fn new(
        a0: DMatrix<f64>,
        bu: DMatrix<f64>,
        bsigma: DMatrix<f64>,
        c0: DMatrix<f64>,
        du: DMatrix<f64>,
        kind: SigmoidKind,
    ) -> Result<Self, ModelError> {
        let m = RnnModel {
            a0,
            bu,
            bsigma,
            c0,
            du,
            kind,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.a0.nrows()
    }
    pub fn m(&self) -> usize {
        self.bu.ncols()
    }
    pub fn nu(&self) -> usize {
        self.bsigma.ncols()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let (n, m, nu) = (self.n(), self.m(), self.nu());
        let dims = [
            ("a0", self.a0.shape(), (n, n)),
            ("bu", self.bu.shape(), (n, m)),
            ("bsigma", self.bsigma.shape(), (n, nu)),
            ("c0", self.c0.shape(), (nu, n)),
            ("du", self.du.shape(), (nu, m)),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(ModelError::DimensionMismatch(format!(
                    "{name}: got {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        for (name, mat) in [
            ("a0", &self.a0),
            ("bu", &self.bu),
            ("bsigma", &self.bsigma),
            ("c0", &self.c0),
            ("du", &self.du),
        ] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    /// Scalar demo plant a0=0, bu=1, bsigma=0.5, c0=1, du=0; its closed loop
    /// at K=0 is A=0.5, B=−0.5, C=1.
    pub fn scalar_demo(kind: SigmoidKind) -> Self {
        RnnModel::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            kind,
        )
        .unwrap()
    }
}

/// Closed loop x⁺ = Ax + Bq(Cx) for a fixed gain K.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub kind: SigmoidKind,
    pub k: DMatrix<f64>,
}

impl ClosedLoop {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// Builds a loop directly from (A, B, C); used by tests and analyses of
    /// systems given in closed-loop form.
    pub fn from_matrices(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        kind: SigmoidKind,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        let nu = b.ncols();
        if a.ncols() != n || b.nrows() != n || c.shape() != (nu, n) {
            return Err(ModelError::DimensionMismatch(format!(
                "closed loop: A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        let k = DMatrix::zeros(0, n);
        Ok(ClosedLoop { a, b, c, kind, k })
    }
}

/// Linearization matrices F = A∘ + Bσ C∘ and G = Bᵤ + Bσ Dᵤ.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

/// Echo-state network x⁺ = σ(W_x x + W_u u + W_xy y), y = W_y x.
#[derive(Debug, Clone)]
pub struct EsnModel {
    pub wx: DMatrix<f64>,
    pub wu: DMatrix<f64>,
    pub wxy: DMatrix<f64>,
    pub wy: DMatrix<f64>,
    pub kind: SigmoidKind,
}

impl EsnModel {
    pub fn ns(&self) -> usize {
        self.wx.nrows()
    }

    /// Effective reservoir matrix W_x + W_xy W_y once the output feedback is
    /// closed.
    pub fn effective_reservoir(&self) -> DMatrix<f64> {
        &self.wx + &self.wxy * &self.wy
    }

    pub fn new(
        wx: DMatrix<f64>,
        wu: DMatrix<f64>,
        wxy: DMatrix<f64>,
        wy: DMatrix<f64>,
        echo_bound: f64,
    ) -> Result<Self, ModelError> {
        let ns = wx.nrows();
        if wx.ncols() != ns || wu.shape() != (ns, 1) || wxy.shape() != (ns, 1) || wy.shape() != (1, ns)
        {
            return Err(ModelError::DimensionMismatch(format!(
                "esn: wx {}x{}, wu {}x{}, wxy {}x{}, wy {}x{}",
                wx.nrows(),
                wx.ncols(),
                wu.nrows(),
                wu.ncols(),
                wxy.nrows(),
                wxy.ncols(),
                wy.nrows(),
                wy.ncols()
            )));
        }
        let esn = EsnModel {
            wx,
            wu,
            wxy,
            wy,
            kind: SigmoidKind::Tanh,
        };
        let (_, rho) = is_schur(&esn.effective_reservoir())?;
        if rho >= echo_bound {
            return Err(ModelError::EchoStateViolation {
                rho,
                bound: echo_bound,
            });
        }
        Ok(esn)
    }
}

/// Closed-loop matrices for u = Kx.
pub fn build_closed_loop(model: &RnnModel, k: &DMatrix<f64>) -> Result<ClosedLoop, ModelError> {
    if k.shape() != (model.m(), model.n()) {
        return Err(ModelError::DimensionMismatch(format!(
            "gain: got {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            model.m(),
            model.n()
        )));
    }
    let c = &model.c0 + &model.du * k;
    let a = &model.a0 + &model.bu * k + &model.bsigma * &c;
    let b = -model.bsigma.clone();
    Ok(ClosedLoop {
        a,
        b,
        c,
        kind: model.kind.clone(),
        k: k.clone(),
    })
}

/// F = A∘ + Bσ C∘ and G = Bᵤ + Bσ Dᵤ.
pub fn design_matrices(model: &RnnModel) -> DesignMatrices {
    DesignMatrices {
        f: &model.a0 + &model.bsigma * &model.c0,
        g: &model.bu + &model.bsigma * &model.du,
    }
}

/// Augments an ESN with an output integrator x_i⁺ = x_i + y⁰ − y. The
/// reference input y⁰ is handled by the simulator; the returned plant
/// covers the autonomous part. State is [x_s; x_i], the nonlinearity
/// channel count stays ν = nₛ, and A∘ + BᵤK keeps a unit eigenvalue for
/// every K (Bᵤ = 0), so only regional certificates can apply.
pub fn augment_integrator(esn: &EsnModel) -> RnnModel {
    let ns = esn.ns();
    let n = ns + 1;
    let mut a0 = DMatrix::zeros(n, n);
    for j in 0..ns {
        a0[(ns, j)] = -esn.wy[(0, j)];
    }
    a0[(ns, ns)] = 1.0;
    let bu = DMatrix::zeros(n, 1);
    let mut bsigma = DMatrix::zeros(n, ns);
    for i in 0..ns {
        bsigma[(i, i)] = 1.0;
    }
    let mut c0 = DMatrix::zeros(ns, n);
    let eff = esn.effective_reservoir();
    c0.view_mut((0, 0), (ns, ns)).copy_from(&eff);
    let du = esn.wu.clone();
    RnnModel {
        a0,
        bu,
        bsigma,
        c0,
        du,
        kind: esn.kind.clone(),
    }
}

/// Reference injection vector B_r = [0; 1] for an integrator-augmented
/// model: the reference enters the integrator row only.
pub fn reference_vector(n: usize) -> DVector<f64> {
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    b
}

/// Margin below which a spectral radius counts as unstable; radius-1
/// matrices must not be certified as Schur.
pub const SCHUR_MARGIN: f64 = 1e-9;

/// Returns (is Schur, spectral radius). Schur means ρ < 1 − margin.
pub fn is_schur(m: &DMatrix<f64>) -> Result<(bool, f64), ModelError> {
    if m.nrows() != m.ncols() {
        return Err(ModelError::DimensionMismatch(format!(
            "is_schur: {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::EigenFailure);
    }
    let eig = m.complex_eigenvalues();
    let rho = eig.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if !rho.is_finite() {
        return Err(ModelError::EigenFailure);
    }
    Ok((rho < 1.0 - SCHUR_MARGIN, rho))
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RnnModelFile {
    n: usize,
    m: usize,
    nu: usize,
    kind: String,
    a0: Vec<Vec<f64>>,
    bu: Vec<Vec<f64>>,
    bsigma: Vec<Vec<f64>>,
    c0: Vec<Vec<f64>>,
    du: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EsnModelFile {
    ns: usize,
    kind: String,
    wx: Vec<Vec<f64>>,
    wu: Vec<Vec<f64>>,
    wxy: Vec<Vec<f64>>,
    wy: Vec<Vec<f64>>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>, ModelError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(ModelError::DimensionMismatch(format!(
            "{name}: expected {r}x{c} row-major array"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().cloned(),
    ))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn save_model(model: &RnnModel, path: &std::path::Path) -> Result<(), ModelError> {
    let file = RnnModelFile {
        n: model.n(),
        m: model.m(),
        nu: model.nu(),
        kind: model.kind.tag()?.to_string(),
        a0: matrix_to_rows(&model.a0),
        bu: matrix_to_rows(&model.bu),
        bsigma: matrix_to_rows(&model.bsigma),
        c0: matrix_to_rows(&model.c0),
        du: matrix_to_rows(&model.du),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| ModelError::ParseError(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<RnnModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: RnnModelFile =
        serde_json::from_str(&text).map_err(|e| ModelError::ParseError(e.to_string()))?;
    let kind = SigmoidKind::from_tag(&file.kind)?;
    RnnModel::new(
        rows_to_matrix("a0", &file.a0, file.n, file.n)?,
        rows_to_matrix("bu", &file.bu, file.n, file.m)?,
        rows_to_matrix("bsigma", &file.bsigma, file.n, file.nu)?,
        rows_to_matrix("c0", &file.c0, file.nu, file.n)?,
        rows_to_matrix("du", &file.du, file.nu, file.m)?,
        kind,
    )
}

pub fn save_esn(esn: &EsnModel, path: &std::path::Path) -> Result<(), ModelError> {
    let file = EsnModelFile {
        ns: esn.ns(),
        kind: esn.kind.tag()?.to_string(),
        wx: matrix_to_rows(&esn.wx),
        wu: matrix_to_rows(&esn.wu),
        wxy: matrix_to_rows(&esn.wxy),
        wy: matrix_to_rows(&esn.wy),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| ModelError::ParseError(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_esn(path: &std::path::Path) -> Result<EsnModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: EsnModelFile =
        serde_json::from_str(&text).map_err(|e| ModelError::ParseError(e.to_string()))?;
    let ns = file.ns;
    let esn = EsnModel {
        wx: rows_to_matrix("wx", &file.wx, ns, ns)?,
        wu: rows_to_matrix("wu", &file.wu, ns, 1)?,
        wxy: rows_to_matrix("wxy", &file.wxy, ns, 1)?,
        wy: rows_to_matrix("wy", &file.wy, 1, ns)?,
        kind: SigmoidKind::from_tag(&file.kind)?,
    };
    Ok(esn)
}
