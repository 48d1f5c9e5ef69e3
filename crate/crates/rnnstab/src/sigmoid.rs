//! Sigmoid nonlinearities and their sector characterizations.
//!
//! A sigmoid here is a scalar function σ that is monotone nondecreasing,
//! globally 1-Lipschitz, bounded in [−1, 1], with σ(0) = 0 and σ′(0) = 1.
//! From σ we derive
//!
//! ```text
//! q(y)  = y − σ(y)          (nonlinearity excess)
//! ψ(y)  = sat(y) − σ(y)     (gap between unit saturation and σ)
//! ```
//!
//! and the two sector constants used by the stability programs:
//!
//! - `θ = max_{y≠0} ψ(y)/y`, so that ψ lies in the sector [0, θ] globally;
//! - `ȳ(h)` = smallest positive root of σ(y)/y = h/(h+1), so that
//!   `y (σ(y) − h q(y)) ≥ 0` holds on [−ȳ(h), ȳ(h)]; ȳ is nonincreasing in h.
//!
//! Every sector inequality can be re-certified numerically on a dense grid
//! with sound inter-cell interval bounds (`certify_sector_*`). The bounds use
//! only properties implied by the sigmoid axioms: σ and q are nondecreasing,
//! and ψ is nondecreasing on [−1, 1] and nonincreasing outside.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Large positive value standing in for ȳ = +∞ when the narrowed sector is
/// valid on the whole search range. Downstream row constraints built from a
/// sentinel bound are dropped as vacuous.
pub const YBAR_INFINITE: f64 = 1e9;

/// Default half-width of the search range for sector scans when no range is
/// given. The maximizer of ψ(y)/y sits at finite y (ψ is bounded), well
/// inside this range for any function with unit slope at the origin.
pub const DEFAULT_SCAN_RANGE: f64 = 50.0;

/// User-supplied scalar sigmoid: the function value plus a bound on its
/// derivative, used for premise checks and inter-grid certification.
pub struct CustomSigmoid {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Bound on |σ′|; 1 for anything satisfying the sigmoid axioms.
    pub lipschitz: f64,
}

impl fmt::Debug for CustomSigmoid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSigmoid")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// The sigmoid family. The three built-in kinds are odd functions.
#[derive(Debug, Clone)]
pub enum SigmoidKind {
    /// σ(y) = tanh(y)
    Tanh,
    /// σ(y) = max(−1, min(y, 1))
    Saturation,
    /// σ(y) = y / (1 + |y|)
    Algebraic,
    /// User-supplied scalar function.
    Custom(Arc<CustomSigmoid>),
}

impl PartialEq for SigmoidKind {
    fn eq(&self, other: &Self) -> bool {
        use SigmoidKind::*;
        match (self, other) {
            (Tanh, Tanh) | (Saturation, Saturation) | (Algebraic, Algebraic) => true,
            (Custom(a), Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Display for SigmoidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmoidKind::Tanh => write!(f, "tanh"),
            SigmoidKind::Saturation => write!(f, "sat"),
            SigmoidKind::Algebraic => write!(f, "algebraic"),
            SigmoidKind::Custom(c) => write!(f, "custom:{}", c.name),
        }
    }
}

/// Unit saturation sat(y) = max(−1, min(y, 1)).
#[inline]
pub fn sat(y: f64) -> f64 {
    y.clamp(-1.0, 1.0)
}

/// Deadzone dz(y) = y − sat(y).
#[inline]
pub fn deadzone(y: f64) -> f64 {
    y - sat(y)
}

#[derive(Debug, Error)]
pub enum SigmoidError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sigmoid violates the sector premise ({property}) at y = {y}: {detail}")]
    AssumptionViolated {
        y: f64,
        property: &'static str,
        detail: String,
    },
    #[error("refinement stalled before reaching tolerance {tol} (best {best})")]
    NonConvergence { tol: f64, best: f64 },
    #[error("no sign change of sigma(y)/y - h/(h+1) within the search range (h = {h})")]
    BracketingFailure { h: f64 },
    #[error("sector inequality `{inequality}` violated near y = {y} (margin {margin:.3e}){detail}")]
    CertificationFailed {
        inequality: String,
        y: f64,
        margin: f64,
        detail: String,
    },
}

impl SigmoidKind {
    /// Scalar σ(y).
    #[inline]
    pub fn sigma(&self, y: f64) -> f64 {
        match self {
            SigmoidKind::Tanh => y.tanh(),
            SigmoidKind::Saturation => sat(y),
            SigmoidKind::Algebraic => y / (1.0 + y.abs()),
            SigmoidKind::Custom(c) => (c.f)(y),
        }
    }

    /// Scalar q(y) = y − σ(y).
    #[inline]
    pub fn q(&self, y: f64) -> f64 {
        y - self.sigma(y)
    }

    /// Scalar ψ(y) = sat(y) − σ(y). Identically zero for the saturation kind.
    #[inline]
    pub fn psi(&self, y: f64) -> f64 {
        sat(y) - self.sigma(y)
    }

    /// Derivative bound used in premise checks and inter-grid certification.
    pub fn lipschitz(&self) -> f64 {
        match self {
            SigmoidKind::Custom(c) => c.lipschitz,
            _ => 1.0,
        }
    }

    /// The built-in kinds are odd; custom kinds are not assumed odd.
    pub fn is_builtin_odd(&self) -> bool {
        !matches!(self, SigmoidKind::Custom(_))
    }

    /// Serialization tag used by the model file format.
    pub fn tag(&self) -> Result<&'static str, SigmoidError> {
        match self {
            SigmoidKind::Tanh => Ok("tanh"),
            SigmoidKind::Saturation => Ok("sat"),
            SigmoidKind::Algebraic => Ok("algebraic"),
            SigmoidKind::Custom(_) => Err(SigmoidError::InvalidParameter(
                "custom sigmoid kinds are not serializable".into(),
            )),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, SigmoidError> {
        match tag {
            "tanh" => Ok(SigmoidKind::Tanh),
            "sat" | "saturation" => Ok(SigmoidKind::Saturation),
            "algebraic" => Ok(SigmoidKind::Algebraic),
            other => Err(SigmoidError::InvalidParameter(format!(
                "unknown sigmoid kind `{other}` (expected tanh|sat|algebraic)"
            ))),
        }
    }
}

/// Component-wise σ over a vector.
pub fn eval_sigma(kind: &SigmoidKind, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| kind.sigma(v)).collect()
}

/// Component-wise q(y) = y − σ(y).
pub fn eval_q(kind: &SigmoidKind, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| kind.q(v)).collect()
}

/// Component-wise ψ(y) = sat(y) − σ(y).
pub fn eval_psi(kind: &SigmoidKind, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| kind.psi(v)).collect()
}

/// Checks the sigmoid axioms on a dense grid over [−range, range]:
/// σ(0) = 0, |σ| ≤ 1, |σ| ≤ |y|, monotone nondecreasing, Lipschitz within the
/// declared bound, and σ′(0) ≈ 1 by central finite difference.
pub fn check_assumption(kind: &SigmoidKind, range: f64, n: usize) -> Result<(), SigmoidError> {
    let lip = kind.lipschitz();
    let s0 = kind.sigma(0.0);
    if s0.abs() > 1e-12 {
        return Err(SigmoidError::AssumptionViolated {
            y: 0.0,
            property: "sigma(0)=0",
            detail: format!("sigma(0) = {s0:.3e}"),
        });
    }
    let d = 1e-6;
    let slope0 = (kind.sigma(d) - kind.sigma(-d)) / (2.0 * d);
    if (slope0 - 1.0).abs() > 1e-3 {
        return Err(SigmoidError::AssumptionViolated {
            y: 0.0,
            property: "sigma'(0)=1",
            detail: format!("finite-difference slope at 0 is {slope0:.6}"),
        });
    }
    let mut prev_y = -range;
    let mut prev_s = kind.sigma(prev_y);
    for i in 0..=n {
        let y = -range + 2.0 * range * (i as f64) / (n as f64);
        let s = kind.sigma(y);
        if !s.is_finite() {
            return Err(SigmoidError::AssumptionViolated {
                y,
                property: "finite",
                detail: "sigma(y) is not finite".into(),
            });
        }
        if s.abs() > 1.0 + 1e-12 {
            return Err(SigmoidError::AssumptionViolated {
                y,
                property: "|sigma|<=1",
                detail: format!("sigma({y}) = {s}"),
            });
        }
        if s.abs() > y.abs() * (1.0 + 1e-9) + 1e-15 {
            return Err(SigmoidError::AssumptionViolated {
                y,
                property: "|sigma(y)|<=|y|",
                detail: format!("sigma({y}) = {s}"),
            });
        }
        if i > 0 {
            if s < prev_s - 1e-12 {
                return Err(SigmoidError::AssumptionViolated {
                    y,
                    property: "monotone",
                    detail: format!("sigma decreases from {prev_s} to {s}"),
                });
            }
            let dy = y - prev_y;
            if (s - prev_s).abs() > lip * dy * (1.0 + 1e-9) + 1e-15 {
                return Err(SigmoidError::AssumptionViolated {
                    y,
                    property: "Lipschitz",
                    detail: format!("slope {} exceeds bound {lip}", (s - prev_s) / dy),
                });
            }
        }
        prev_y = y;
        prev_s = s;
    }
    Ok(())
}

/// Sector slope `θ = max_{y≠0} ψ(y)/y`, computed by a log-spaced scan of
/// y ∈ (0, 50] followed by golden-section refinement around the best bracket.
/// The scan exploits odd symmetry for the built-in kinds; for custom kinds
/// both half-lines are scanned. The result carries a small upward pad so
/// ψ(y)/y ≤ θ holds at every sampled point.
pub fn compute_theta(kind: &SigmoidKind, tol: f64) -> Result<f64, SigmoidError> {
    if tol <= 0.0 {
        return Err(SigmoidError::InvalidParameter("tol must be > 0".into()));
    }
    if matches!(kind, SigmoidKind::Saturation) {
        return Ok(0.0);
    }
    check_assumption(kind, DEFAULT_SCAN_RANGE, 10_000)?;

    let ratio_pos = |y: f64| kind.psi(y) / y;
    let mut best = scan_and_refine_max(&ratio_pos, tol)?;
    if !kind.is_builtin_odd() {
        let ratio_neg = |y: f64| kind.psi(-y) / (-y);
        best = best.max(scan_and_refine_max(&ratio_neg, tol)?);
    }
    // Upward pad: the search returns a value at a sampled point, hence a
    // lower bound on the true maximum. The pad keeps psi(y)/y <= theta at
    // machine precision without leaving the [0, 1) sector.
    let theta = (best.max(0.0) * (1.0 + 1e-9) + 1e-11).min(1.0 - 1e-9);
    Ok(theta)
}

/// Maximize f over y ∈ (0, DEFAULT_SCAN_RANGE] on a log-spaced grid of 10⁴
/// points, then golden-section refine the bracketing interval.
fn scan_and_refine_max(
    f: &dyn Fn(f64) -> f64,
    tol: f64,
) -> Result<f64, SigmoidError> {
    const N: usize = 10_000;
    let lo = 1e-6_f64;
    let hi = DEFAULT_SCAN_RANGE;
    let lr = (hi / lo).ln();
    let grid_y = |i: usize| lo * (lr * (i as f64) / (N as f64)).exp();
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=N {
        let v = f(grid_y(i));
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = grid_y(best_i.saturating_sub(1));
    let mut b = grid_y((best_i + 1).min(N));
    // Golden-section on -f; the bracket from the scan contains the maximizer.
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0usize;
    while b - a > 1e-12 * (1.0 + b) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iters += 1;
        if iters > 200 {
            return Err(SigmoidError::NonConvergence {
                tol,
                best: best_v.max(fc).max(fd),
            });
        }
    }
    Ok(best_v.max(fc).max(fd))
}

/// Smallest positive root ȳ of σ(y)/y = h/(h+1), bracketed by doubling and
/// then bisected. Returns the left end of the final bracket, so the result
/// is guaranteed to lie inside the validity region [−ȳ, ȳ] of the narrowed
/// sector. Returns [`YBAR_INFINITE`] when the ratio stays above the
/// threshold over the whole search range. For custom (possibly non-odd)
/// kinds both half-lines are solved and the smaller magnitude is returned.
pub fn compute_ybar(kind: &SigmoidKind, h: f64, tol: f64) -> Result<f64, SigmoidError> {
    if h <= 0.0 {
        return Err(SigmoidError::InvalidParameter("h must be > 0".into()));
    }
    if tol <= 0.0 {
        return Err(SigmoidError::InvalidParameter("tol must be > 0".into()));
    }
    let alpha = h / (h + 1.0);
    let pos = ybar_half_line(&|y| kind.sigma(y), alpha, tol, h)?;
    if kind.is_builtin_odd() {
        return Ok(pos);
    }
    let neg = ybar_half_line(&|y| -kind.sigma(-y), alpha, tol, h)?;
    Ok(pos.min(neg))
}

fn ybar_half_line(
    sigma: &dyn Fn(f64) -> f64,
    alpha: f64,
    tol: f64,
    h: f64,
) -> Result<f64, SigmoidError> {
    const Y_CAP: f64 = 1e12;
    let xi = |y: f64| sigma(y) / y;
    let mut lo = tol.min(1e-8).max(1e-300);
    if xi(lo) <= alpha {
        // sigma'(0) = 1 > alpha for any valid sigmoid; reaching here means
        // the premise fails at the origin.
        return Err(SigmoidError::BracketingFailure { h });
    }
    let mut hi = lo;
    loop {
        hi *= 2.0;
        if hi > Y_CAP {
            return Ok(YBAR_INFINITE);
        }
        let v = xi(hi);
        if !v.is_finite() {
            return Err(SigmoidError::BracketingFailure { h });
        }
        if v < alpha {
            break;
        }
        lo = hi;
    }
    while hi - lo > tol * (1.0 + lo) {
        let mid = 0.5 * (lo + hi);
        if xi(mid) >= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Result of a numeric sector certification.
#[derive(Debug, Clone)]
pub struct CertReport {
    pub inequality: String,
    pub certified: bool,
    /// Worst margin of the inequality at the sampled points.
    pub worst_margin: f64,
    pub worst_y: f64,
    /// Worst guaranteed lower bound over the inter-sample cells.
    pub worst_cell_bound: f64,
    pub worst_cell_y: f64,
    pub points: usize,
    pub cells: usize,
}

/// Per-channel sector data consumed by the regional stability programs.
#[derive(Debug, Clone)]
pub struct SectorData {
    pub kind: SigmoidKind,
    /// Per-channel slopes θᵢ ∈ [0, 1).
    pub theta: Vec<f64>,
    pub grid_resolution: f64,
    pub certified: bool,
}

impl SectorData {
    /// Computes θ once and replicates it over `channels` identical channels.
    pub fn for_kind(kind: &SigmoidKind, channels: usize, tol: f64) -> Result<Self, SigmoidError> {
        let theta = compute_theta(kind, tol)?;
        Ok(SectorData {
            kind: kind.clone(),
            theta: vec![theta; channels],
            grid_resolution: tol,
            certified: false,
        })
    }

    /// ȳᵢ(hᵢ) per channel for a common scalar h.
    pub fn ybar(&self, h: f64, tol: f64) -> Result<Vec<f64>, SigmoidError> {
        let y = compute_ybar(&self.kind, h, tol)?;
        Ok(vec![y; self.theta.len()])
    }
}

// ---------------------------------------------------------------------------
// Grid certification engine
// ---------------------------------------------------------------------------

/// Sound interval envelope of a factor over a cell [a, b].
#[derive(Clone, Copy)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn product_min(self, other: Interval) -> f64 {
        let c = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        c.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// One scalar sector inequality written as a product of two factors whose
/// cell envelopes follow from the sigmoid axioms.
trait SectorInequality {
    fn name(&self) -> String;
    fn margin(&self, y: f64) -> f64;
    fn envelopes(&self, a: f64, b: f64) -> (Interval, Interval);
    /// Points that must be grid nodes so every cell is monotone for both
    /// factors (kinks of sat / ψ).
    fn breakpoints(&self) -> Vec<f64>;
}

/// q(y)·σ(y) ≥ 0: both factors vanish at 0 and are nondecreasing.
struct GlobalSector<'a> {
    kind: &'a SigmoidKind,
}

impl SectorInequality for GlobalSector<'_> {
    fn name(&self) -> String {
        "q(y)*sigma(y) >= 0".into()
    }
    fn margin(&self, y: f64) -> f64 {
        self.kind.q(y) * self.kind.sigma(y)
    }
    fn envelopes(&self, a: f64, b: f64) -> (Interval, Interval) {
        let q = Interval {
            lo: self.kind.q(a),
            hi: self.kind.q(b),
        };
        let s = Interval {
            lo: self.kind.sigma(a),
            hi: self.kind.sigma(b),
        };
        (q, s)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// ψ(y)·(θy − ψ(y)) ≥ 0: ψ is nondecreasing on [−1, 1] and nonincreasing
/// outside, so its cell envelope is exact once ±1 are grid nodes.
struct PsiSector<'a> {
    kind: &'a SigmoidKind,
    theta: f64,
}

impl PsiSector<'_> {
    fn psi_env(&self, a: f64, b: f64) -> Interval {
        let pa = self.kind.psi(a);
        let pb = self.kind.psi(b);
        if b <= 1.0 && a >= -1.0 {
            Interval { lo: pa, hi: pb }
        } else if a >= 1.0 || b <= -1.0 {
            Interval { lo: pb, hi: pa }
        } else {
            // Cell straddles a kink; fall back to endpoint hull padded by
            // the Lipschitz tent (|ψ'| ≤ 2 per the conservative constant).
            let half = (b - a);
            Interval {
                lo: pa.min(pb) - half,
                hi: pa.max(pb) + half,
            }
        }
    }
}

impl SectorInequality for PsiSector<'_> {
    fn name(&self) -> String {
        format!("psi(y)*({}*y - psi(y)) >= 0", self.theta)
    }
    fn margin(&self, y: f64) -> f64 {
        let p = self.kind.psi(y);
        p * (self.theta * y - p)
    }
    fn envelopes(&self, a: f64, b: f64) -> (Interval, Interval) {
        let p = self.psi_env(a, b);
        let lin = Interval {
            lo: self.theta * a - p.hi,
            hi: self.theta * b - p.lo,
        };
        (p, lin)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![-1.0, 0.0, 1.0]
    }
}

/// q(y)·(σ(y) − h·q(y)) ≥ 0 on [−ȳ, ȳ]: q is nondecreasing and
/// σ − h·q = (1+h)σ − h·y has a sound envelope from the σ envelope.
struct NarrowSector<'a> {
    kind: &'a SigmoidKind,
    h: f64,
}

impl SectorInequality for NarrowSector<'_> {
    fn name(&self) -> String {
        format!("q(y)*(sigma(y) - {}*q(y)) >= 0", self.h)
    }
    fn margin(&self, y: f64) -> f64 {
        let q = self.kind.q(y);
        q * (self.kind.sigma(y) - self.h * q)
    }
    fn envelopes(&self, a: f64, b: f64) -> (Interval, Interval) {
        let q = Interval {
            lo: self.kind.q(a),
            hi: self.kind.q(b),
        };
        let sa = self.kind.sigma(a);
        let sb = self.kind.sigma(b);
        let g = Interval {
            lo: (1.0 + self.h) * sa - self.h * b,
            hi: (1.0 + self.h) * sb - self.h * a,
        };
        (q, g)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// Margin below which a sampled point or a guaranteed cell bound counts as a
/// violation.
pub const CERT_ACCEPT_TOL: f64 = -1e-12;

fn certify(
    ineq: &dyn SectorInequality,
    kind: &SigmoidKind,
    range: (f64, f64),
    grid_step: f64,
    accept_tol: f64,
) -> Result<CertReport, SigmoidError> {
    let (lo, hi) = range;
    if grid_step <= 0.0 || hi <= lo {
        return Err(SigmoidError::InvalidParameter(
            "grid_step must be > 0 and range nonempty".into(),
        ));
    }
    // Premise pass; a premise violation is reported as a failed
    // certification carrying the witness.
    let n_premise = (((hi - lo) / grid_step).ceil() as usize).clamp(1_000, 200_000);
    if let Err(e) = check_assumption(kind, hi.abs().max(lo.abs()), n_premise) {
        if let SigmoidError::AssumptionViolated { y, property, detail } = e {
            return Err(SigmoidError::CertificationFailed {
                inequality: ineq.name(),
                y,
                margin: f64::NAN,
                detail: format!(" (premise {property} violated: {detail})"),
            });
        }
        return Err(e);
    }

    let mut nodes: Vec<f64> = Vec::new();
    let n = ((hi - lo) / grid_step).ceil() as usize;
    for i in 0..=n {
        nodes.push((lo + grid_step * i as f64).min(hi));
    }
    for b in ineq.breakpoints() {
        if b > lo && b < hi {
            nodes.push(b);
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();

    let mut worst_margin = f64::INFINITY;
    let mut worst_y = lo;
    for &y in &nodes {
        let m = ineq.margin(y);
        if m < worst_margin {
            worst_margin = m;
            worst_y = y;
        }
        if m < accept_tol {
            return Err(SigmoidError::CertificationFailed {
                inequality: ineq.name(),
                y,
                margin: m,
                detail: String::new(),
            });
        }
    }

    // Inter-cell pass with adaptive bisection of cells whose guaranteed
    // bound does not clear the acceptance threshold.
    let mut worst_cell = f64::INFINITY;
    let mut worst_cell_y = lo;
    let mut cells = 0usize;
    let mut extra_points = 0usize;
    for w in nodes.windows(2) {
        let mut stack = vec![(w[0], w[1], 0u32)];
        while let Some((a, b, depth)) = stack.pop() {
            cells += 1;
            let (f, g) = ineq.envelopes(a, b);
            let bound = f.product_min(g);
            if bound >= accept_tol {
                if bound < worst_cell {
                    worst_cell = bound;
                    worst_cell_y = 0.5 * (a + b);
                }
                continue;
            }
            let mid = 0.5 * (a + b);
            if depth >= 60 || mid <= a || mid >= b {
                let m = ineq.margin(mid);
                extra_points += 1;
                if m < accept_tol {
                    return Err(SigmoidError::CertificationFailed {
                        inequality: ineq.name(),
                        y: mid,
                        margin: m,
                        detail: String::new(),
                    });
                }
                return Err(SigmoidError::CertificationFailed {
                    inequality: ineq.name(),
                    y: mid,
                    margin: bound,
                    detail: " (inter-cell bound could not be certified)".into(),
                });
            }
            let m = ineq.margin(mid);
            extra_points += 1;
            if m < worst_margin {
                worst_margin = m;
                worst_y = mid;
            }
            if m < accept_tol {
                return Err(SigmoidError::CertificationFailed {
                    inequality: ineq.name(),
                    y: mid,
                    margin: m,
                    detail: String::new(),
                });
            }
            stack.push((a, mid, depth + 1));
            stack.push((mid, b, depth + 1));
        }
    }

    Ok(CertReport {
        inequality: ineq.name(),
        certified: true,
        worst_margin,
        worst_y,
        worst_cell_bound: worst_cell,
        worst_cell_y,
        points: nodes.len() + extra_points,
        cells,
    })
}

/// Certifies the global sector inequality q(y)·σ(y) ≥ 0 on
/// [−range, range].
pub fn certify_sector_global(
    kind: &SigmoidKind,
    grid_step: f64,
    range: f64,
) -> Result<CertReport, SigmoidError> {
    certify(
        &GlobalSector { kind },
        kind,
        (-range, range),
        grid_step,
        CERT_ACCEPT_TOL,
    )
}

/// Certifies ψ(y)·(θy − ψ(y)) ≥ 0 on [−range, range] for a given slope θ.
/// `accept_tol` relaxes the acceptance margin for hand-rounded θ values.
pub fn certify_sector_psi_with_tol(
    kind: &SigmoidKind,
    theta: f64,
    grid_step: f64,
    range: f64,
    accept_tol: f64,
) -> Result<CertReport, SigmoidError> {
    certify(
        &PsiSector { kind, theta },
        kind,
        (-range, range),
        grid_step,
        accept_tol,
    )
}

/// Certifies ψ(y)·(θy − ψ(y)) ≥ 0 at the default acceptance margin.
pub fn certify_sector_psi(
    kind: &SigmoidKind,
    theta: f64,
    grid_step: f64,
    range: f64,
) -> Result<CertReport, SigmoidError> {
    certify_sector_psi_with_tol(kind, theta, grid_step, range, CERT_ACCEPT_TOL)
}

/// Certifies the narrowed sector q(y)·(σ(y) − h q(y)) ≥ 0 on [−ȳ, ȳ].
pub fn certify_sector_narrow(
    kind: &SigmoidKind,
    h: f64,
    ybar: f64,
    grid_step: f64,
) -> Result<CertReport, SigmoidError> {
    if h < 0.0 || ybar <= 0.0 {
        return Err(SigmoidError::InvalidParameter(
            "h must be >= 0 and ybar > 0".into(),
        ));
    }
    certify(
        &NarrowSector { kind, h },
        kind,
        (-ybar, ybar),
        grid_step,
        CERT_ACCEPT_TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    // 1 - tanh(1) and 1 - tanh(10), 20 significant digits.
    const Q_TANH_1: f64 = 0.238_405_844_044_235_11;
    const PSI_TANH_10: f64 = 4.122_307_236_380_407_2e-9;
    // Smallest positive roots of tanh(y)/y = h/(h+1).
    const YBAR_TANH_H1: f64 = 1.915_008_048_154_537_5;
    const YBAR_TANH_H2: f64 = 1.287_839_454_960_165_5;
    const YBAR_TANH_H05: f64 = 2.984_704_585_357_886_8;

    fn adversarial() -> SigmoidKind {
        SigmoidKind::Custom(Arc::new(CustomSigmoid {
            name: "1.5tanh".into(),
            f: Box::new(|y| 1.5 * y.tanh()),
            lipschitz: 1.5,
        }))
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(eval_sigma(&SigmoidKind::Tanh, &[0.0]), vec![0.0]);
        assert_eq!(
            eval_sigma(&SigmoidKind::Saturation, &[2.5, -0.3]),
            vec![1.0, -0.3]
        );
        assert_eq!(eval_sigma(&SigmoidKind::Algebraic, &[1.0]), vec![0.5]);
    }

    #[test]
    fn q_examples() {
        assert_eq!(eval_q(&SigmoidKind::Algebraic, &[0.0]), vec![0.0]);
        assert_eq!(eval_q(&SigmoidKind::Saturation, &[3.0]), vec![2.0]);
        let q = eval_q(&SigmoidKind::Tanh, &[1.0])[0];
        assert!((q - Q_TANH_1).abs() < 1e-15);
    }

    #[test]
    fn psi_examples() {
        for y in [-3.0, -0.4, 0.0, 0.7, 12.0] {
            assert_eq!(eval_psi(&SigmoidKind::Saturation, &[y]), vec![0.0]);
        }
        let p1 = eval_psi(&SigmoidKind::Tanh, &[1.0])[0];
        assert!((p1 - Q_TANH_1).abs() < 1e-15);
        let p10 = eval_psi(&SigmoidKind::Tanh, &[10.0])[0];
        assert!((p10 - PSI_TANH_10).abs() < 1e-15);
    }

    #[test]
    fn theta_tanh() {
        let th = compute_theta(&SigmoidKind::Tanh, 1e-4).unwrap();
        assert!((th - Q_TANH_1).abs() < 1e-6, "theta = {th}");
    }

    #[test]
    fn theta_algebraic_is_one_half() {
        // max over y>0 of (sat(y) - y/(1+y))/y: y/(1+y) rising to 1/2 on
        // (0,1], then 1/(y(1+y)) falling; the maximum is exactly 1/2 at y=1.
        let th = compute_theta(&SigmoidKind::Algebraic, 1e-4).unwrap();
        assert!((th - 0.5).abs() < 1e-6, "theta = {th}");
    }

    #[test]
    fn theta_saturation_exact_zero() {
        assert_eq!(compute_theta(&SigmoidKind::Saturation, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn theta_rejects_adversarial() {
        let e = compute_theta(&adversarial(), 1e-4).unwrap_err();
        assert!(matches!(e, SigmoidError::AssumptionViolated { .. }), "{e}");
    }

    #[test]
    fn theta_dominates_ratio_everywhere() {
        for kind in [SigmoidKind::Tanh, SigmoidKind::Algebraic] {
            let th = compute_theta(&kind, 1e-4).unwrap();
            for i in 1..20_000 {
                let y = i as f64 * 2.5e-3;
                assert!(kind.psi(y) / y <= th + 1e-12, "kind {kind} y={y}");
            }
        }
    }

    #[test]
    fn ybar_tanh_values() {
        let y1 = compute_ybar(&SigmoidKind::Tanh, 1.0, 1e-8).unwrap();
        assert!((y1 - YBAR_TANH_H1).abs() < 1e-6, "ybar(1) = {y1}");
        assert!(y1 <= YBAR_TANH_H1, "must sit inside the region");
        let y2 = compute_ybar(&SigmoidKind::Tanh, 2.0, 1e-8).unwrap();
        assert!((y2 - YBAR_TANH_H2).abs() < 1e-6);
        let y05 = compute_ybar(&SigmoidKind::Tanh, 0.5, 1e-8).unwrap();
        assert!((y05 - YBAR_TANH_H05).abs() < 1e-6);
        assert!(y2 < y1 && y1 < y05);
    }

    #[test]
    fn ybar_saturation_closed_form() {
        // sat(y)/y = 1/y for y >= 1, so the root of ratio = h/(h+1) is
        // (h+1)/h; h=1 gives 2.
        let y = compute_ybar(&SigmoidKind::Saturation, 1.0, 1e-8).unwrap();
        assert!((y - 2.0).abs() < 1e-6);
        assert!(y <= 2.0);
        let y3 = compute_ybar(&SigmoidKind::Saturation, 3.0, 1e-8).unwrap();
        assert!((y3 - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn ybar_monotone_in_h() {
        let mut prev = f64::INFINITY;
        for i in 1..=30 {
            let h = 0.2 * i as f64;
            let y = compute_ybar(&SigmoidKind::Tanh, h, 1e-8).unwrap();
            assert!(y <= prev + 1e-9, "h={h}: {y} > {prev}");
            prev = y;
        }
    }

    #[test]
    fn certify_global_builtin_kinds() {
        for kind in [
            SigmoidKind::Tanh,
            SigmoidKind::Saturation,
            SigmoidKind::Algebraic,
        ] {
            let r = certify_sector_global(&kind, 1e-3, 50.0).unwrap();
            assert!(r.certified);
            assert!(r.worst_margin >= 0.0, "{kind}: {}", r.worst_margin);
            assert!(r.worst_cell_bound >= CERT_ACCEPT_TOL);
        }
    }

    #[test]
    fn certify_global_saturation_zero_margin_inside_band() {
        let r = certify_sector_global(&SigmoidKind::Saturation, 1e-3, 50.0).unwrap();
        // q vanishes on [-1, 1], so the worst margin is exactly zero.
        assert_eq!(r.worst_margin, 0.0);
    }

    #[test]
    fn certify_global_adversarial_fails_near_zero() {
        let e = certify_sector_global(&adversarial(), 1e-3, 50.0).unwrap_err();
        match e {
            SigmoidError::CertificationFailed { y, .. } => {
                assert!(y.abs() < 2.0, "witness y = {y}")
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn certify_psi_at_computed_theta() {
        for kind in [SigmoidKind::Tanh, SigmoidKind::Algebraic] {
            let th = compute_theta(&kind, 1e-6).unwrap();
            let r = certify_sector_psi(&kind, th, 1e-3, 50.0).unwrap();
            assert!(r.certified, "{kind}");
        }
        let r = certify_sector_psi(&SigmoidKind::Saturation, 0.7, 1e-3, 50.0).unwrap();
        assert!(r.certified);
    }

    #[test]
    fn certify_psi_fails_below_true_slope() {
        let e = certify_sector_psi(&SigmoidKind::Tanh, 0.1, 1e-3, 50.0).unwrap_err();
        match e {
            SigmoidError::CertificationFailed { y, margin, .. } => {
                assert!(margin < 0.0);
                assert!(y.abs() < 5.0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn certify_narrow_at_computed_ybar() {
        for h in [0.5, 1.0, 2.0] {
            let ybar = compute_ybar(&SigmoidKind::Tanh, h, 1e-8).unwrap();
            let r = certify_sector_narrow(&SigmoidKind::Tanh, h, ybar, 1e-3).unwrap();
            assert!(r.certified, "h = {h}");
        }
    }

    #[test]
    fn certify_narrow_fails_beyond_ybar() {
        let ybar = compute_ybar(&SigmoidKind::Tanh, 1.0, 1e-8).unwrap();
        let e = certify_sector_narrow(&SigmoidKind::Tanh, 1.0, 1.5 * ybar, 1e-3).unwrap_err();
        match e {
            SigmoidError::CertificationFailed { y, .. } => {
                assert!(y.abs() > ybar, "witness {y} should lie beyond {ybar}")
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn certify_narrow_h_zero_reduces_to_global() {
        let r = certify_sector_narrow(&SigmoidKind::Algebraic, 1e-12, 40.0, 1e-3).unwrap();
        assert!(r.certified);
    }

    #[test]
    fn refinement_never_uncertifies() {
        for step in [4e-3, 2e-3, 1e-3, 5e-4] {
            let r = certify_sector_global(&SigmoidKind::Tanh, step, 50.0).unwrap();
            assert!(r.certified, "step {step}");
            let th = compute_theta(&SigmoidKind::Tanh, 1e-6).unwrap();
            let r = certify_sector_psi(&SigmoidKind::Tanh, th, step, 50.0).unwrap();
            assert!(r.certified, "step {step}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sigma_bounded_and_sector(y in -100.0f64..100.0) {
                for kind in [SigmoidKind::Tanh, SigmoidKind::Saturation, SigmoidKind::Algebraic] {
                    let s = kind.sigma(y);
                    prop_assert!(s.abs() <= y.abs().min(1.0) + 1e-15);
                    prop_assert!(kind.q(y) * s >= -1e-15);
                    prop_assert!(kind.psi(y) * y >= -1e-15);
                }
            }

            #[test]
            fn sigma_lipschitz(a in -60.0f64..60.0, b in -60.0f64..60.0) {
                for kind in [SigmoidKind::Tanh, SigmoidKind::Saturation, SigmoidKind::Algebraic] {
                    prop_assert!((kind.sigma(a) - kind.sigma(b)).abs() <= (a - b).abs() + 1e-15);
                }
            }
        }
    }
}
